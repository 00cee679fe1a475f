//! Matérn-3/2 geostatistical covariance and the conditional Gaussian machinery
//! used to evaluate `log[y_j | θ, y_{1:(j-1)}]` for spatially dependent data.
//!
//! Two routes compute the block conditional log-likelihoods:
//!
//! * [`conditional_gaussian`] / [`partition_log_likelihoods`] form the
//!   conditional mean and covariance of each block explicitly, solving against
//!   the Cholesky factor of the conditioning block.
//! * [`OrderedCorrelationFactor`] factorizes the correlation matrix once with
//!   rows in partition order. The leading sub-blocks of that factor are the
//!   factors of every conditioning block, so one factorization yields all `J`
//!   conditional terms. This is the route used when prefetching over a pool.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::distributions::{log_density_mvn, MvnParams};
use crate::linalg::CholeskyFactor;
use crate::{Error, Real, Result};

/// Affine map from raw coordinates to the unit square. A single scale factor is
/// used for both axes so distances stay isotropic.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoordinateScaling {
    pub offset: [f64; 2],
    pub factor: f64,
}

impl CoordinateScaling {
    pub fn identity() -> Self {
        Self {
            offset: [0.0, 0.0],
            factor: 1.0,
        }
    }

    pub fn apply(&self, raw: [f64; 2]) -> [f64; 2] {
        [
            (raw[0] - self.offset[0]) / self.factor,
            (raw[1] - self.offset[1]) / self.factor,
        ]
    }

    pub fn invert(&self, scaled: [f64; 2]) -> [f64; 2] {
        [
            scaled[0] * self.factor + self.offset[0],
            scaled[1] * self.factor + self.offset[1],
        ]
    }
}

/// Observation locations in scaled units.
#[derive(Clone, Debug)]
pub struct SpatialDomain<T: Real> {
    coords: Vec<[T; 2]>,
    scaling: CoordinateScaling,
}

impl<T: Real> SpatialDomain<T> {
    /// Scales raw coordinates into `[0,1]²` (min corner to the origin, longest
    /// side to length one) and records the map.
    pub fn from_raw(raw: &[[f64; 2]]) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::Data(
                "spatial domain needs at least one location".into(),
            ));
        }
        if raw.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite coordinate".into()));
        }
        let min = |k: usize| raw.iter().map(|c| c[k]).fold(f64::INFINITY, f64::min);
        let max = |k: usize| raw.iter().map(|c| c[k]).fold(f64::NEG_INFINITY, f64::max);
        let offset = [min(0), min(1)];
        let extent = (max(0) - offset[0]).max(max(1) - offset[1]);
        let factor = if extent > 0.0 { extent } else { 1.0 };
        let scaling = CoordinateScaling { offset, factor };
        let coords = raw
            .iter()
            .map(|&c| {
                let s = scaling.apply(c);
                [T::lit(s[0].clamp(0.0, 1.0)), T::lit(s[1].clamp(0.0, 1.0))]
            })
            .collect();
        Ok(Self { coords, scaling })
    }

    /// Wraps coordinates that are already in the unit square.
    pub fn from_scaled(coords: Vec<[T; 2]>) -> Result<Self> {
        let inside = |v: T| v >= T::zero() && v <= T::one();
        if coords.iter().flatten().any(|&v| !inside(v)) {
            return Err(Error::Data("scaled coordinates must lie in [0,1]²".into()));
        }
        Ok(Self {
            coords,
            scaling: CoordinateScaling::identity(),
        })
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn coords(&self) -> &[[T; 2]] {
        &self.coords
    }

    pub fn scaling(&self) -> CoordinateScaling {
        self.scaling
    }

    pub fn distance(&self, i: usize, j: usize) -> T {
        let (a, b) = (self.coords[i], self.coords[j]);
        let (dx, dy) = (a[0] - b[0], a[1] - b[1]);
        (dx * dx + dy * dy).sqrt()
    }

    pub fn has_duplicates(&self) -> bool {
        (0..self.len()).any(|i| ((i + 1)..self.len()).any(|j| self.distance(i, j) == T::zero()))
    }

    /// Locations reordered by `order`.
    pub fn reordered(&self, order: &[usize]) -> Self {
        Self {
            coords: order.iter().map(|&i| self.coords[i]).collect(),
            scaling: self.scaling,
        }
    }
}

/// Sill `σ²`, range `φ` and nugget proportion `τ²`; smoothness is fixed at 3/2.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CovarianceSpec<T: Real> {
    pub sigma2: T,
    pub phi: T,
    pub tau2: T,
}

impl<T: Real> CovarianceSpec<T> {
    pub fn new(sigma2: T, phi: T, tau2: T) -> Result<Self> {
        if !(sigma2 > T::zero() && phi > T::zero()) || !(tau2 > T::zero() && tau2 < T::one()) {
            return Err(Error::Domain(format!(
                "covariance requires sigma2 > 0, phi > 0, 0 < tau2 < 1; got ({:?}, {:?}, {:?})",
                sigma2.as_f64(),
                phi.as_f64(),
                tau2.as_f64()
            )));
        }
        Ok(Self { sigma2, phi, tau2 })
    }
}

/// Ordered, disjoint blocks of observation indices covering `0..n`. Block 0 is
/// fit first.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionIndex {
    blocks: Vec<Vec<usize>>,
}

impl PartitionIndex {
    pub fn new(blocks: Vec<Vec<usize>>, n: usize) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::Config("partition needs at least one block".into()));
        }
        let mut seen = vec![false; n];
        for block in &blocks {
            if block.is_empty() {
                return Err(Error::Config("partition blocks must be non-empty".into()));
            }
            for &i in block {
                if i >= n {
                    return Err(Error::Config(format!(
                        "partition index {i} out of range 0..{n}"
                    )));
                }
                if std::mem::replace(&mut seen[i], true) {
                    return Err(Error::Config(format!(
                        "index {i} appears in more than one block"
                    )));
                }
            }
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::Config(format!(
                "index {missing} is not assigned to any block"
            )));
        }
        Ok(Self { blocks })
    }

    /// Single block holding `0..n` in order.
    pub fn whole(n: usize) -> Self {
        Self {
            blocks: vec![(0..n).collect()],
        }
    }

    /// Random partition into `j` blocks whose sizes differ by at most one.
    pub fn random_equal<R: Rng + ?Sized>(n: usize, j: usize, rng: &mut R) -> Result<Self> {
        if j == 0 || j > n {
            return Err(Error::Config(format!(
                "cannot split {n} observations into {j} blocks"
            )));
        }
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(rng);
        let mut blocks = Vec::with_capacity(j);
        let mut start = 0;
        for b in 0..j {
            let size = n / j + usize::from(b < n % j);
            let mut block = idx[start..start + size].to_vec();
            block.sort_unstable();
            blocks.push(block);
            start += size;
        }
        Self::new(blocks, n)
    }

    /// Builds blocks from per-observation labels; blocks are ordered by label.
    pub fn from_labels(labels: &[usize]) -> Result<Self> {
        let mut distinct: Vec<usize> = labels.to_vec();
        distinct.sort_unstable();
        distinct.dedup();
        let blocks = distinct
            .iter()
            .map(|&l| (0..labels.len()).filter(|&i| labels[i] == l).collect())
            .collect();
        Self::new(blocks, labels.len())
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    pub fn len(&self) -> usize {
        self.blocks.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Indices of blocks `0..j` concatenated in recursion order.
    pub fn leading(&self, j: usize) -> Vec<usize> {
        self.blocks[..j].iter().flatten().copied().collect()
    }

    /// All indices in recursion order.
    pub fn order(&self) -> Vec<usize> {
        self.leading(self.blocks.len())
    }

    /// Per-observation block label.
    pub fn labels(&self) -> Vec<usize> {
        let mut labels = vec![0; self.len()];
        for (b, block) in self.blocks.iter().enumerate() {
            for &i in block {
                labels[i] = b;
            }
        }
        labels
    }
}

/// `(1 + d/φ) exp(-d/φ)`.
pub fn matern32_correlation<T: Real>(d: T, phi: T) -> Result<T> {
    if !(phi > T::zero()) || !phi.is_finite() {
        return Err(Error::Domain(format!(
            "range must be positive, got {:?}",
            phi.as_f64()
        )));
    }
    if !(d >= T::zero()) {
        return Err(Error::Domain(format!(
            "distance must be nonnegative, got {:?}",
            d.as_f64()
        )));
    }
    let u = d / phi;
    Ok((T::one() + u) * (-u).exp())
}

/// `(1-τ²) R(φ) + τ² I` with a unit diagonal.
pub fn build_correlation<T: Real>(
    domain: &SpatialDomain<T>,
    phi: T,
    tau2: T,
) -> Result<DMatrix<T>> {
    if tau2 == T::zero() && domain.has_duplicates() {
        log::warn!("duplicate locations without nugget: correlation matrix is singular");
    }
    correlation_from_distances(&pairwise_distances(domain), phi, tau2)
}

/// Symmetric matrix of distances between all pairs of locations.
pub fn pairwise_distances<T: Real>(domain: &SpatialDomain<T>) -> DMatrix<T> {
    let n = domain.len();
    let mut d = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = domain.distance(i, j);
            d[(i, j)] = v;
            d[(j, i)] = v;
        }
    }
    d
}

/// [`build_correlation`] from precomputed distances.
pub fn correlation_from_distances<T: Real>(
    dist: &DMatrix<T>,
    phi: T,
    tau2: T,
) -> Result<DMatrix<T>> {
    matern32_correlation(T::zero(), phi)?;
    let n = dist.nrows();
    let spatial = T::one() - tau2;
    let mut m = DMatrix::from_element(n, n, T::one());
    for j in 0..n {
        for i in (j + 1)..n {
            let u = dist[(i, j)] / phi;
            let r = spatial * (T::one() + u) * (-u).exp();
            m[(i, j)] = r;
            m[(j, i)] = r;
        }
    }
    Ok(m)
}

/// `Σ(σ², φ, τ²) = σ² ((1-τ²) R(φ) + τ² I)`; the diagonal is exactly `σ²`.
pub fn build_covariance<T: Real>(
    domain: &SpatialDomain<T>,
    spec: &CovarianceSpec<T>,
) -> Result<DMatrix<T>> {
    Ok(build_correlation(domain, spec.phi, spec.tau2)? * spec.sigma2)
}

fn submatrix<T: Real>(m: &DMatrix<T>, rows: &[usize], cols: &[usize]) -> DMatrix<T> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

fn subvector<T: Real>(v: &DVector<T>, idx: &[usize]) -> DVector<T> {
    DVector::from_fn(idx.len(), |i, _| v[idx[i]])
}

/// Distribution of block `j` (0-based) given the observed values on blocks
/// `0..j`. For `j == 0` this is the marginal of block 0.
pub fn conditional_gaussian<T: Real>(
    full_mean: &DVector<T>,
    full_cov: &DMatrix<T>,
    partition: &PartitionIndex,
    j: usize,
    y: &DVector<T>,
) -> Result<MvnParams<T>> {
    if j >= partition.block_count() {
        return Err(Error::Config(format!(
            "block {j} out of range for {} blocks",
            partition.block_count()
        )));
    }
    let n = partition.len();
    if full_mean.len() != n || y.len() != n || full_cov.nrows() != n || full_cov.ncols() != n {
        return Err(Error::Domain(
            "conditional gaussian inputs have inconsistent dimensions".into(),
        ));
    }
    let target = &partition.blocks()[j];
    let mean_t = subvector(full_mean, target);
    let cov_tt = submatrix(full_cov, target, target);
    if j == 0 {
        return MvnParams::new(mean_t, cov_tt);
    }
    let given = partition.leading(j);
    let factor = CholeskyFactor::new(submatrix(full_cov, &given, &given))?;
    let cross = factor.whiten_matrix(&submatrix(full_cov, &given, target));
    let resid = factor.whiten(&(subvector(y, &given) - subvector(full_mean, &given)));
    let mean = mean_t + cross.transpose() * resid;
    let cov = cov_tt - cross.transpose() * &cross;
    let cov = (&cov + cov.transpose()) * T::lit(0.5);
    MvnParams::new(mean, cov)
}

/// `(log[y_1|θ], log[y_2|θ,y_1], …, log[y_J|θ,y_{1:(J-1)}])`, each block via
/// [`conditional_gaussian`].
pub fn partition_log_likelihoods<T: Real>(
    domain: &SpatialDomain<T>,
    design: &DMatrix<T>,
    y: &DVector<T>,
    partition: &PartitionIndex,
    beta: &DVector<T>,
    spec: &CovarianceSpec<T>,
) -> Result<Vec<T>> {
    if design.nrows() != y.len() || design.ncols() != beta.len() || domain.len() != y.len() {
        return Err(Error::Domain(
            "design, data and domain dimensions disagree".into(),
        ));
    }
    let mean = design * beta;
    let cov = build_covariance(domain, spec)?;
    (0..partition.block_count())
        .map(|j| {
            let cond = conditional_gaussian(&mean, &cov, partition, j, y)?;
            log_density_mvn(&subvector(y, &partition.blocks()[j]), &cond)
        })
        .collect()
}

/// Cholesky factor of the correlation matrix with rows in partition order.
///
/// With `Σ = σ² C` and `C = L Lᵀ`, the conditional log-density of block `j` is
/// the sum over that block's rows of `-½ log 2πσ² - log L_ii - z_i²/(2σ²)`
/// where `z = L⁻¹ (y - Xβ)` in partition order.
#[derive(Clone, Debug)]
pub struct OrderedCorrelationFactor<T: Real> {
    factor: CholeskyFactor<T>,
    block_ends: Vec<usize>,
    order: Vec<usize>,
}

impl<T: Real> OrderedCorrelationFactor<T> {
    pub fn new(
        domain: &SpatialDomain<T>,
        partition: &PartitionIndex,
        phi: T,
        tau2: T,
    ) -> Result<Self> {
        let ordered = pairwise_distances(&domain.reordered(&partition.order()));
        Self::from_ordered_distances(&ordered, partition, phi, tau2)
    }

    /// Same as [`Self::new`] with the distance matrix already permuted into
    /// partition order, so repeated factorizations skip the distance pass.
    pub fn from_ordered_distances(
        ordered: &DMatrix<T>,
        partition: &PartitionIndex,
        phi: T,
        tau2: T,
    ) -> Result<Self> {
        let order = partition.order();
        if ordered.nrows() != order.len() {
            return Err(Error::Domain(
                "distance matrix does not match the partition".into(),
            ));
        }
        let factor = CholeskyFactor::new(correlation_from_distances(ordered, phi, tau2)?)?;
        let block_ends = partition
            .blocks()
            .iter()
            .scan(0, |end, b| {
                *end += b.len();
                Some(*end)
            })
            .collect();
        Ok(Self {
            factor,
            block_ends,
            order,
        })
    }

    /// Partition order used by the factor; residuals passed to
    /// [`Self::block_log_likelihoods`] are permuted internally.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    /// All `J` block conditional log-likelihoods for residual `y - Xβ`
    /// (in original observation order) and sill `sigma2`.
    pub fn block_log_likelihoods(&self, residual: &DVector<T>, sigma2: T) -> Vec<T> {
        let ordered = subvector(residual, &self.order);
        let z = self.factor.whiten(&ordered);
        let l = self.factor.l_diagonal();
        let half = T::lit(0.5);
        let constant = -half * (T::two_pi() * sigma2).ln();
        let mut out = Vec::with_capacity(self.block_ends.len());
        let mut start = 0;
        for &end in &self.block_ends {
            let mut acc = T::zero();
            for i in start..end {
                acc += constant - l[i].ln() - half * z[i] * z[i] / sigma2;
            }
            out.push(acc);
            start = end;
        }
        out
    }
}
