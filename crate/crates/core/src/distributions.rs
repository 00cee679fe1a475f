//! Densities, mass functions and samplers for the families the models need.
//!
//! Log-densities are generic over [`Real`]; samplers work in `f64` and take the
//! caller's generator so that each worker can own an independent stream.
//!
//! # Inverse-gamma convention
//!
//! `IG(shape = α, scale = β)` has kernel `x^{-(α+1)} exp(-1/(β x))`, i.e. the
//! second parameter is the reciprocal of the usual rate. Under this convention
//! the conjugate update for a normal variance adds `1/β` to half the residual
//! sum of squares and inverts the result. Mean is `1 / (β (α - 1))` for `α > 1`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::linalg::{relative_asymmetry, CholeskyFactor};
use crate::{Error, Real, Result};

/// Tolerance on relative asymmetry accepted by [`MvnParams::new`].
pub const SYMMETRY_TOLERANCE: f64 = 1e-10;

fn ln_gamma<T: Real>(x: T) -> T {
    T::lit(libm::lgamma(x.as_f64()))
}

fn half_ln_two_pi<T: Real>() -> T {
    T::lit(0.5 * (2.0 * std::f64::consts::PI).ln())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianParams<T: Real> {
    pub mean: T,
    pub variance: T,
}

impl<T: Real> GaussianParams<T> {
    pub fn new(mean: T, variance: T) -> Result<Self> {
        if !mean.is_finite() || !(variance > T::zero()) || !variance.is_finite() {
            return Err(Error::Domain(format!(
                "normal requires finite mean and positive variance, got ({:?}, {:?})",
                mean.as_f64(),
                variance.as_f64()
            )));
        }
        Ok(Self { mean, variance })
    }

    pub fn standard() -> Self {
        Self {
            mean: T::zero(),
            variance: T::one(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InverseGammaParams<T: Real> {
    pub shape: T,
    /// Reciprocal-rate parameter; see the module docs.
    pub scale: T,
}

impl<T: Real> InverseGammaParams<T> {
    pub fn new(shape: T, scale: T) -> Result<Self> {
        if !(shape > T::zero() && scale > T::zero()) || !shape.is_finite() || !scale.is_finite() {
            return Err(Error::Domain(format!(
                "inverse gamma requires positive shape and scale, got ({:?}, {:?})",
                shape.as_f64(),
                scale.as_f64()
            )));
        }
        Ok(Self { shape, scale })
    }

    /// Analytic mean, defined for `shape > 1`.
    pub fn mean(&self) -> Option<T> {
        (self.shape > T::one()).then(|| T::one() / (self.scale * (self.shape - T::one())))
    }
}

/// Scaled inverse chi-squared with `dof` degrees of freedom and scale `s²`.
///
/// `dof = scale = 0` encodes the improper Jeffreys prior `1/σ²`; such values
/// are only ever used inside conjugate updates, never sampled from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScaledInvChiSqParams<T: Real> {
    pub dof: T,
    pub scale: T,
}

impl<T: Real> ScaledInvChiSqParams<T> {
    pub fn new(dof: T, scale: T) -> Result<Self> {
        if !(dof >= T::zero() && scale >= T::zero()) || !dof.is_finite() || !scale.is_finite() {
            return Err(Error::Domain(format!(
                "scaled inverse chi-squared requires nonnegative parameters, got ({:?}, {:?})",
                dof.as_f64(),
                scale.as_f64()
            )));
        }
        Ok(Self { dof, scale })
    }

    pub fn is_improper(&self) -> bool {
        self.dof == T::zero() || self.scale == T::zero()
    }

    /// Equivalent inverse gamma: shape `ν/2`, scale `2/(ν s²)`.
    pub fn to_inverse_gamma(&self) -> Result<InverseGammaParams<T>> {
        if self.is_improper() {
            return Err(Error::Domain("improper scaled inverse chi-squared".into()));
        }
        let two = T::lit(2.0);
        InverseGammaParams::new(self.dof / two, two / (self.dof * self.scale))
    }

    /// Conjugate update after observing `n` residuals with mean square `s2`
    /// (already whitened by the correlation structure).
    pub fn posterior(&self, n: usize, s2: T) -> Result<Self> {
        let n = T::lit(n as f64);
        let dof = n + self.dof;
        Self::new(dof, (self.dof * self.scale + n * s2) / dof)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BetaParams<T: Real> {
    pub a: T,
    pub b: T,
}

impl<T: Real> BetaParams<T> {
    pub fn new(a: T, b: T) -> Result<Self> {
        if !(a > T::zero() && b > T::zero()) || !a.is_finite() || !b.is_finite() {
            return Err(Error::Domain(format!(
                "beta requires positive parameters, got ({:?}, {:?})",
                a.as_f64(),
                b.as_f64()
            )));
        }
        Ok(Self { a, b })
    }
}

/// Multivariate normal with a dense covariance. Construction factorizes the
/// covariance (with jitter if needed) and keeps the factor.
#[derive(Clone, Debug)]
pub struct MvnParams<T: Real> {
    pub mean: DVector<T>,
    pub covariance: DMatrix<T>,
    factor: CholeskyFactor<T>,
}

impl<T: Real> MvnParams<T> {
    pub fn new(mean: DVector<T>, covariance: DMatrix<T>) -> Result<Self> {
        if covariance.nrows() != mean.len() || !covariance.is_square() {
            return Err(Error::Domain(format!(
                "mean of length {} incompatible with {}x{} covariance",
                mean.len(),
                covariance.nrows(),
                covariance.ncols()
            )));
        }
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("mean vector has non-finite entries".into()));
        }
        if relative_asymmetry(&covariance) > T::lit(SYMMETRY_TOLERANCE) {
            return Err(Error::Domain("covariance is not symmetric".into()));
        }
        let factor = CholeskyFactor::new(covariance.clone())?;
        Ok(Self {
            mean,
            covariance,
            factor,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn factor(&self) -> &CholeskyFactor<T> {
        &self.factor
    }
}

pub fn log_density_normal<T: Real>(x: T, p: &GaussianParams<T>) -> Result<T> {
    if !x.is_finite() {
        return Err(Error::Domain(format!(
            "normal density at non-finite x = {:?}",
            x.as_f64()
        )));
    }
    let p = GaussianParams::new(p.mean, p.variance)?;
    let d = x - p.mean;
    Ok(-half_ln_two_pi::<T>() - T::lit(0.5) * p.variance.ln() - d * d / (T::lit(2.0) * p.variance))
}

/// Half-normal on `[0, ∞)` with scale (standard-deviation) parameter `scale`.
/// Returns `-∞` for negative `x`.
pub fn log_density_half_normal<T: Real>(x: T, scale: T) -> Result<T> {
    if !(scale > T::zero()) || !x.is_finite() {
        return Err(Error::Domain(
            "half-normal requires positive scale and finite x".into(),
        ));
    }
    if x < T::zero() {
        return Ok(T::neg_infinity());
    }
    Ok(T::lit(2.0f64.ln())
        - half_ln_two_pi::<T>()
        - scale.ln()
        - x * x / (T::lit(2.0) * scale * scale))
}

pub fn log_density_inverse_gamma<T: Real>(x: T, p: &InverseGammaParams<T>) -> Result<T> {
    if !x.is_finite() {
        return Err(Error::Domain(
            "inverse gamma density at non-finite x".into(),
        ));
    }
    if x <= T::zero() {
        return Ok(T::neg_infinity());
    }
    let p = InverseGammaParams::new(p.shape, p.scale)?;
    Ok(-ln_gamma(p.shape)
        - p.shape * p.scale.ln()
        - (p.shape + T::one()) * x.ln()
        - T::one() / (p.scale * x))
}

pub fn log_density_scaled_inv_chi_sq<T: Real>(x: T, p: &ScaledInvChiSqParams<T>) -> Result<T> {
    if p.is_improper() {
        return Err(Error::Domain(
            "improper scaled inverse chi-squared has no density".into(),
        ));
    }
    if !x.is_finite() {
        return Err(Error::Domain(
            "scaled inverse chi-squared density at non-finite x".into(),
        ));
    }
    if x <= T::zero() {
        return Ok(T::neg_infinity());
    }
    let half_dof = p.dof / T::lit(2.0);
    Ok(
        half_dof * half_dof.ln() - ln_gamma(half_dof) + half_dof * p.scale.ln()
            - (half_dof + T::one()) * x.ln()
            - p.dof * p.scale / (T::lit(2.0) * x),
    )
}

pub fn log_density_beta<T: Real>(x: T, p: &BetaParams<T>) -> Result<T> {
    if !x.is_finite() {
        return Err(Error::Domain("beta density at non-finite x".into()));
    }
    if x <= T::zero() || x >= T::one() {
        return Ok(T::neg_infinity());
    }
    let ln_b = ln_gamma(p.a) + ln_gamma(p.b) - ln_gamma(p.a + p.b);
    Ok((p.a - T::one()) * x.ln() + (p.b - T::one()) * (T::one() - x).ln() - ln_b)
}

/// `-½ [n log 2π + log|Σ| + (y-μ)'Σ⁻¹(y-μ)]` via the Cholesky factor.
pub fn log_density_mvn<T: Real>(y: &DVector<T>, p: &MvnParams<T>) -> Result<T> {
    if y.len() != p.dim() {
        return Err(Error::Domain(format!(
            "observation of length {} for a {}-dimensional normal",
            y.len(),
            p.dim()
        )));
    }
    Ok(log_density_mvn_factored(&(y - &p.mean), p.factor()))
}

/// Multivariate normal log-density of a residual `y - μ` given `chol(Σ)`.
pub fn log_density_mvn_factored<T: Real>(residual: &DVector<T>, factor: &CholeskyFactor<T>) -> T {
    let n = T::lit(residual.len() as f64);
    let half = T::lit(0.5);
    -n * half_ln_two_pi::<T>() - half * factor.log_det() - half * factor.quad_form(residual)
}

/// `y log λ - λ - log y!`, with `log y!` from the log-gamma function.
pub fn log_mass_poisson<T: Real>(y: u64, lambda: T) -> Result<T> {
    log_mass_poisson_with(y, lambda, ln_factorial(y))
}

/// `ln y!`.
pub fn ln_factorial<T: Real>(y: u64) -> T {
    ln_gamma(T::lit(y as f64 + 1.0))
}

/// [`log_mass_poisson`] with `ln y!` supplied, for repeated evaluation at a
/// fixed count.
pub fn log_mass_poisson_with<T: Real>(y: u64, lambda: T, ln_y_factorial: T) -> Result<T> {
    if !(lambda > T::zero()) || !lambda.is_finite() {
        return Err(Error::Domain(format!(
            "poisson rate must be positive, got {:?}",
            lambda.as_f64()
        )));
    }
    Ok(T::lit(y as f64) * lambda.ln() - lambda - ln_y_factorial)
}

pub fn sample_normal<R: Rng + ?Sized>(p: &GaussianParams<f64>, rng: &mut R) -> Result<f64> {
    let p = GaussianParams::new(p.mean, p.variance)?;
    let z: f64 = StandardNormal.sample(rng);
    Ok(p.mean + p.variance.sqrt() * z)
}

pub fn sample_standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Draws `1/G` with `G ~ Gamma(shape, scale)`; see the module docs for the
/// parameterization.
pub fn sample_inverse_gamma<R: Rng + ?Sized>(
    p: &InverseGammaParams<f64>,
    rng: &mut R,
) -> Result<f64> {
    let p = InverseGammaParams::new(p.shape, p.scale)?;
    let gamma = Gamma::new(p.shape, p.scale).map_err(|e| Error::Domain(e.to_string()))?;
    let g: f64 = gamma.sample(rng);
    if g <= 0.0 {
        // Gamma underflow for tiny shapes; the inverse is effectively infinite.
        return Ok(f64::MAX);
    }
    Ok(1.0 / g)
}

pub fn sample_scaled_inv_chi_sq<R: Rng + ?Sized>(
    p: &ScaledInvChiSqParams<f64>,
    rng: &mut R,
) -> Result<f64> {
    sample_inverse_gamma(&p.to_inverse_gamma()?, rng)
}

pub fn sample_beta<R: Rng + ?Sized>(p: &BetaParams<f64>, rng: &mut R) -> Result<f64> {
    let p = BetaParams::new(p.a, p.b)?;
    let beta = rand_distr::Beta::new(p.a, p.b).map_err(|e| Error::Domain(e.to_string()))?;
    Ok(beta.sample(rng))
}

/// Uniform on `[low, high)`.
pub fn sample_uniform<R: Rng + ?Sized>(low: f64, high: f64, rng: &mut R) -> Result<f64> {
    if !(low < high) || !low.is_finite() || !high.is_finite() {
        return Err(Error::Domain(format!(
            "invalid uniform bounds [{low}, {high})"
        )));
    }
    Ok(low + (high - low) * rng.random::<f64>())
}

pub fn sample_half_normal<R: Rng + ?Sized>(scale: f64, rng: &mut R) -> Result<f64> {
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::Domain(format!(
            "half-normal requires positive scale, got {scale}"
        )));
    }
    let z: f64 = StandardNormal.sample(rng);
    Ok(scale * z.abs())
}

/// `μ + L z` with `L` the lower Cholesky factor of the covariance.
pub fn sample_mvn<R: Rng + ?Sized>(p: &MvnParams<f64>, rng: &mut R) -> DVector<f64> {
    let z = DVector::from_fn(p.dim(), |_, _| StandardNormal.sample(rng));
    &p.mean + p.factor().colour(&z)
}

/// Draws `N(A⁻¹b, A⁻¹)` from the precision matrix `A` and vector `b`, without
/// forming `A⁻¹`.
pub fn sample_mvn_canonical<R: Rng + ?Sized>(
    precision: DMatrix<f64>,
    b: &DVector<f64>,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let factor = CholeskyFactor::new(precision)?;
    let mean = factor.solve(b);
    let z = DVector::from_fn(b.len(), |_, _| StandardNormal.sample(rng));
    let l_t = factor.l().transpose();
    let offset = l_t
        .solve_upper_triangular(&z)
        .ok_or_else(|| Error::Singular("precision factor has a zero pivot".into()))?;
    Ok(mean + offset)
}
