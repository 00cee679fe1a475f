//! Cholesky factorization with a bounded diagonal-jitter retry policy.
//!
//! Nothing in this crate forms an explicit matrix inverse; all products with
//! `Σ⁻¹` go through triangular solves against the factor built here.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::{Error, Real, Result};

/// Relative jitter added on the first retry, as a multiple of the mean diagonal.
pub const JITTER_BASE: f64 = 1e-10;
/// Number of jittered retries after the plain factorization fails.
pub const JITTER_RETRIES: usize = 3;

/// Lower Cholesky factor `L` of a symmetric positive-definite matrix.
#[derive(Clone, Debug)]
pub struct CholeskyFactor<T: Real> {
    chol: Cholesky<T, Dyn>,
    jitter: T,
}

impl<T: Real> CholeskyFactor<T> {
    /// Factorizes `matrix`, escalating diagonal jitter `1e-10, 1e-9, 1e-8`
    /// (times the mean diagonal) when the plain factorization fails.
    pub fn new(matrix: DMatrix<T>) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::Domain(format!(
                "cannot factorize a {}x{} matrix",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::Singular("matrix has non-finite entries".into()));
        }
        let n = matrix.nrows();
        if let Some(chol) = Cholesky::new(matrix.clone()) {
            return Ok(Self {
                chol,
                jitter: T::zero(),
            });
        }
        let mean_diag = if n == 0 {
            T::one()
        } else {
            matrix.diagonal().sum() / T::lit(n as f64)
        };
        let mut jitter = T::lit(JITTER_BASE) * mean_diag.abs();
        for _ in 0..JITTER_RETRIES {
            let mut m = matrix.clone();
            for i in 0..n {
                m[(i, i)] += jitter;
            }
            if let Some(chol) = Cholesky::new(m) {
                log::debug!("cholesky succeeded with jitter {:?}", jitter.as_f64());
                return Ok(Self { chol, jitter });
            }
            jitter *= T::lit(10.0);
        }
        Err(Error::Singular(format!(
            "{n}x{n} matrix not positive definite after {JITTER_RETRIES} jittered retries"
        )))
    }

    pub fn dim(&self) -> usize {
        self.chol.l_dirty().nrows()
    }

    /// Diagonal jitter that was added before the factorization succeeded.
    pub fn jitter(&self) -> T {
        self.jitter
    }

    pub fn l(&self) -> DMatrix<T> {
        self.chol.l()
    }

    pub fn l_diagonal(&self) -> DVector<T> {
        self.chol.l_dirty().diagonal()
    }

    /// `log |A|` from the factor diagonal.
    pub fn log_det(&self) -> T {
        let l = self.chol.l_dirty();
        let two = T::lit(2.0);
        (0..l.nrows()).fold(T::zero(), |acc, i| acc + two * l[(i, i)].ln())
    }

    /// `L⁻¹ b`.
    pub fn whiten(&self, b: &DVector<T>) -> DVector<T> {
        self.chol
            .l_dirty()
            .solve_lower_triangular(b)
            .expect("cholesky factor has a nonzero diagonal")
    }

    /// `L⁻¹ B` for a matrix right-hand side.
    pub fn whiten_matrix(&self, b: &DMatrix<T>) -> DMatrix<T> {
        self.chol
            .l_dirty()
            .solve_lower_triangular(b)
            .expect("cholesky factor has a nonzero diagonal")
    }

    /// `A⁻¹ b` via two triangular solves.
    pub fn solve(&self, b: &DVector<T>) -> DVector<T> {
        self.chol.solve(b)
    }

    pub fn solve_matrix(&self, b: &DMatrix<T>) -> DMatrix<T> {
        self.chol.solve(b)
    }

    /// `b' A⁻¹ b`.
    pub fn quad_form(&self, b: &DVector<T>) -> T {
        self.whiten(b).norm_squared()
    }

    /// `L z`, used to colour standard-normal draws.
    pub fn colour(&self, z: &DVector<T>) -> DVector<T> {
        self.chol.l_dirty().lower_triangle() * z
    }
}

/// Largest entrywise asymmetry of `m` relative to its largest absolute entry.
pub fn relative_asymmetry<T: Real>(m: &DMatrix<T>) -> T {
    let scale = m.iter().fold(T::zero(), |acc, v| acc.max(v.abs()));
    if scale == T::zero() {
        return T::zero();
    }
    let mut worst = T::zero();
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst / scale
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn log_det_and_solve_match_dense_results() {
        let a =
            DMatrix::<f64>::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let f = CholeskyFactor::new(a.clone()).unwrap();
        assert_relative_eq!(f.log_det(), a.determinant().ln(), epsilon = 1e-12);
        let b = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let x = f.solve(&b);
        assert_relative_eq!((&a * &x - &b).norm(), 0.0, epsilon = 1e-12);
        assert_eq!(f.jitter(), 0.0);
    }

    #[test]
    fn rank_deficient_matrix_recovers_with_jitter() {
        // Two identical locations: singular but PSD.
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let f = CholeskyFactor::new(a).unwrap();
        assert!(f.jitter() > 0.0);
    }

    #[test]
    fn indefinite_matrix_is_a_hard_error() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(CholeskyFactor::new(a), Err(Error::Singular(_))));
    }

    #[test]
    fn works_in_single_precision() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0f32, 0.5, 0.5, 1.0]);
        let f = CholeskyFactor::new(a).unwrap();
        assert!((f.log_det() - 1.75f32.ln()).abs() < 1e-5);
    }
}
