//! Gaussian-process regression with a Matérn 3/2 covariance, a three-column
//! trend (intercept, easting, northing) and a nugget.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::distributions::{
    log_density_half_normal, sample_mvn_canonical, sample_scaled_inv_chi_sq, sample_standard_normal,
};
use crate::engine::{
    mh_accept, parallel_map, SampleMatrix, StageConfig, StageDiagnostics, StageOutput, StagedModel,
};
use crate::gp::{
    build_correlation, correlation_from_distances, pairwise_distances, OrderedCorrelationFactor,
    PartitionIndex, SpatialDomain,
};
use crate::linalg::CholeskyFactor;
use crate::models::AdaptiveStep;
use crate::rng::{self, RbRng};
use crate::{Error, Result, ScaledInvChiSqParams};

pub const PARAMETER_NAMES: [&str; 6] = ["beta0", "beta1", "beta2", "sigma2", "phi", "tau2"];

/// Blocks with fewer observations than this trigger a stage-one warning.
pub const MIN_STAGE_ONE_SIZE: usize = 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeoPriors {
    /// Scale of the half-normal prior on the range `φ`.
    pub gamma: f64,
    pub beta_mean: Vec<f64>,
    /// Prior precision of `β`, row-major `p × p`; `None` is the flat prior.
    pub beta_precision: Option<Vec<f64>>,
    /// `Inv-χ²(α₁, α₂)` prior on the sill; `(0, 0)` is the Jeffreys prior.
    pub sigma2_dof: f64,
    pub sigma2_scale: f64,
}

impl Default for GeoPriors {
    fn default() -> Self {
        Self {
            gamma: 0.05,
            beta_mean: vec![0.0; 3],
            beta_precision: None,
            sigma2_dof: 0.0,
            sigma2_scale: 0.0,
        }
    }
}

impl GeoPriors {
    fn validate(&self, p: usize) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config(format!(
                "gamma must be positive, got {}",
                self.gamma
            )));
        }
        if self.beta_mean.len() != p {
            return Err(Error::Config(format!(
                "beta_mean has {} entries, expected {p}",
                self.beta_mean.len()
            )));
        }
        if let Some(prec) = &self.beta_precision {
            if prec.len() != p * p {
                return Err(Error::Config(format!(
                    "beta_precision must have {} entries",
                    p * p
                )));
            }
        }
        ScaledInvChiSqParams::new(self.sigma2_dof, self.sigma2_scale)
            .map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    fn precision(&self, p: usize) -> Option<DMatrix<f64>> {
        self.beta_precision
            .as_ref()
            .map(|v| DMatrix::from_row_slice(p, p, v))
    }
}

/// How the range and nugget are updated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpatialUpdate {
    /// M-H on `[φ, τ² | β, σ², y]`, then Gibbs for `β` and `σ²`.
    #[default]
    Conditional,
    /// M-H on `[φ, τ² | y]` with `β` and `σ²` integrated out, followed by
    /// exact draws of `σ² | φ, τ², y` and `β | σ², φ, τ², y`. Requires the
    /// flat prior on `β`.
    Collapsed,
}

/// Random-walk settings for the joint `(φ, τ²)` update.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeoTuning {
    /// Initial proposal standard deviations for `φ` and `τ²`.
    pub phi_step: f64,
    pub tau2_step: f64,
    pub update: SpatialUpdate,
    /// Random-walk steps for `(φ, τ²)` per iteration.
    pub spatial_steps: usize,
    /// Replace the diagonal proposal with the covariance of the burn-in draws
    /// halfway through burn-in.
    pub adapt_shape: bool,
    /// Hold `(φ, τ²)` at these values instead of updating them.
    pub fixed_spatial: Option<(f64, f64)>,
}

impl Default for GeoTuning {
    fn default() -> Self {
        Self {
            phi_step: 0.02,
            tau2_step: 0.1,
            update: SpatialUpdate::Conditional,
            spatial_steps: 1,
            adapt_shape: false,
            fixed_spatial: None,
        }
    }
}

/// Observations at scaled locations with the trend design `(1, x, y)`.
#[derive(Clone, Debug)]
pub struct GeoData {
    pub domain: SpatialDomain<f64>,
    pub design: DMatrix<f64>,
    pub y: DVector<f64>,
    /// Block label per observation when the partition is supplied with the data.
    pub blocks: Option<Vec<usize>>,
}

#[derive(Debug, Deserialize)]
struct GeoRecord {
    x: f64,
    y: f64,
    value: f64,
    #[serde(default)]
    block: Option<usize>,
}

pub fn trend_design(domain: &SpatialDomain<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(domain.len(), 3, |i, c| match c {
        0 => 1.0,
        k => domain.coords()[i][k - 1],
    })
}

impl GeoData {
    pub fn new(domain: SpatialDomain<f64>, y: DVector<f64>) -> Result<Self> {
        if domain.len() != y.len() {
            return Err(Error::Data(format!(
                "{} locations but {} values",
                domain.len(),
                y.len()
            )));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite response value".into()));
        }
        let design = trend_design(&domain);
        Ok(Self {
            domain,
            design,
            y,
            blocks: None,
        })
    }

    pub fn from_raw(coords: &[[f64; 2]], values: Vec<f64>) -> Result<Self> {
        Self::new(SpatialDomain::from_raw(coords)?, DVector::from_vec(values))
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Observations `idx`, keeping the scaling of the parent domain.
    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            domain: self.domain.reordered(idx),
            design: DMatrix::from_fn(idx.len(), self.design.ncols(), |i, c| {
                self.design[(idx[i], c)]
            }),
            y: DVector::from_fn(idx.len(), |i, _| self.y[idx[i]]),
            blocks: self
                .blocks
                .as_ref()
                .map(|b| idx.iter().map(|&i| b[i]).collect()),
        }
    }

    /// Reads columns `x, y, value` and an optional `block` (1-based) column.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let records: Vec<GeoRecord> = rdr.deserialize().collect::<std::result::Result<_, _>>()?;
        let coords: Vec<[f64; 2]> = records.iter().map(|r| [r.x, r.y]).collect();
        let mut data = Self::from_raw(&coords, records.iter().map(|r| r.value).collect())?;
        let labels: Vec<Option<usize>> = records.iter().map(|r| r.block).collect();
        if labels.iter().all(Option::is_some) && !labels.is_empty() {
            let labels: Vec<usize> = labels.into_iter().flatten().collect();
            if labels.contains(&0) {
                return Err(Error::Data("block labels are 1-based".into()));
            }
            data.blocks = Some(labels.into_iter().map(|b| b - 1).collect());
        } else if labels.iter().any(Option::is_some) {
            return Err(Error::Data("block column is only partially filled".into()));
        }
        Ok(data)
    }

    /// Writes scaled coordinates, values and (if present) 1-based block labels.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["x", "y", "value"];
        if self.blocks.is_some() {
            header.push("block");
        }
        w.write_record(&header)?;
        for i in 0..self.len() {
            let c = self.domain.coords()[i];
            let mut rec = vec![
                format!("{:.16e}", c[0]),
                format!("{:.16e}", c[1]),
                format!("{:.16e}", self.y[i]),
            ];
            if let Some(b) = &self.blocks {
                rec.push((b[i] + 1).to_string());
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Generating values for synthetic data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeoTruth {
    pub beta: Vec<f64>,
    pub sigma2: f64,
    pub phi: f64,
    pub tau2: f64,
}

impl Default for GeoTruth {
    fn default() -> Self {
        Self {
            beta: vec![10.0, 6.0, -6.0],
            sigma2: 1.0,
            phi: 0.05,
            tau2: 0.3,
        }
    }
}

impl GeoTruth {
    pub fn values(&self) -> Vec<(String, f64)> {
        let mut v: Vec<(String, f64)> = self
            .beta
            .iter()
            .enumerate()
            .map(|(i, &b)| (format!("beta{i}"), b))
            .collect();
        v.push(("sigma2".into(), self.sigma2));
        v.push(("phi".into(), self.phi));
        v.push(("tau2".into(), self.tau2));
        v
    }
}

/// Jittered near-square grid of `n` sites in the unit square with one draw
/// of the field on it.
pub fn synthetic_geo(n: usize, truth: &GeoTruth, rng: &mut RbRng) -> Result<GeoData> {
    if n < 2 {
        return Err(Error::Config(
            "synthetic geostatistical data needs n ≥ 2".into(),
        ));
    }
    if truth.beta.len() != 3 {
        return Err(Error::Config("truth needs three trend coefficients".into()));
    }
    let cols = (n as f64).sqrt().ceil() as usize;
    let rows = n.div_ceil(cols);
    let spacing = 1.0 / cols.max(rows) as f64;
    let raw: Vec<[f64; 2]> = (0..n)
        .map(|i| {
            let (r, c) = (i / cols, i % cols);
            let jitter = |rng: &mut RbRng| (rng.random::<f64>() - 0.5) * 0.4 * spacing;
            [
                (c as f64 + 0.5) * spacing + jitter(rng),
                (r as f64 + 0.5) * spacing + jitter(rng),
            ]
        })
        .collect();
    // Simulate on the scaled domain so that reading the file back is an identity map.
    let domain =
        SpatialDomain::from_scaled(SpatialDomain::<f64>::from_raw(&raw)?.coords().to_vec())?;
    let x = trend_design(&domain);
    let corr = build_correlation(&domain, truth.phi, truth.tau2)?;
    let factor = CholeskyFactor::new(corr * truth.sigma2)?;
    let z = DVector::from_fn(n, |_, _| sample_standard_normal(rng));
    let y = &x * DVector::from_column_slice(&truth.beta) + factor.colour(&z);
    GeoData::new(domain, y)
}

fn check_design(design: &DMatrix<f64>) -> Result<()> {
    let (n, p) = design.shape();
    if n < p + 1 {
        return Err(Error::Data(format!(
            "need at least {} observations for {p} trend terms, got {n}",
            p + 1
        )));
    }
    let svd = design.clone().svd(false, false);
    let max = svd.singular_values.max();
    let min = svd.singular_values.min();
    if !(min > max * 1e-10) {
        return Err(Error::Data("design matrix is rank deficient".into()));
    }
    Ok(())
}

/// Spatial parameters together with the quantities that depend only on them.
struct SpatialCache {
    phi: f64,
    tau2: f64,
    log_det: f64,
    x_white: DMatrix<f64>,
    y_white: DVector<f64>,
    /// Cholesky factor of `X̃'X̃` and the GLS residual sum of squares.
    gram: CholeskyFactor<f64>,
    gls_rss: f64,
}

impl SpatialCache {
    fn new(data: &GeoData, dist: &DMatrix<f64>, phi: f64, tau2: f64) -> Result<Self> {
        let factor = CholeskyFactor::new(correlation_from_distances(dist, phi, tau2)?)?;
        let x_white = factor.whiten_matrix(&data.design);
        let y_white = factor.whiten(&data.y);
        let gram = CholeskyFactor::new(x_white.transpose() * &x_white)?;
        let beta_hat = gram.solve(&(x_white.transpose() * &y_white));
        let gls_rss = (&y_white - &x_white * &beta_hat).norm_squared();
        Ok(Self {
            phi,
            tau2,
            log_det: factor.log_det(),
            x_white,
            y_white,
            gram,
            gls_rss,
        })
    }

    fn residual_white(&self, beta: &DVector<f64>) -> DVector<f64> {
        &self.y_white - &self.x_white * beta
    }

    /// `log N(y | Xβ, σ² C)`.
    fn log_likelihood(&self, beta: &DVector<f64>, sigma2: f64) -> f64 {
        let r = self.residual_white(beta);
        let n = r.len() as f64;
        -0.5 * (n * (std::f64::consts::TAU * sigma2).ln()
            + self.log_det
            + r.norm_squared() / sigma2)
    }

    /// `log[y | φ, τ²]` up to a constant, with `β` flat and
    /// `σ² ~ Inv-χ²(α₁, α₂)` integrated out.
    fn log_marginal(&self, priors: &GeoPriors) -> f64 {
        let n = self.y_white.len() as f64;
        let p = self.x_white.ncols() as f64;
        let dof = n - p + priors.sigma2_dof;
        -0.5 * self.log_det
            - 0.5 * self.gram.log_det()
            - 0.5 * dof * (priors.sigma2_dof * priors.sigma2_scale + self.gls_rss).ln()
    }
}

/// Gibbs/M-H sampler for one data set (the whole data or one block).
struct GeoSampler<'a> {
    data: &'a GeoData,
    priors: &'a GeoPriors,
    precision: Option<DMatrix<f64>>,
    dist: DMatrix<f64>,
    beta: DVector<f64>,
    sigma2: f64,
    cache: SpatialCache,
}

impl<'a> GeoSampler<'a> {
    fn new(data: &'a GeoData, priors: &'a GeoPriors, phi: f64, tau2: f64) -> Result<Self> {
        let dist = pairwise_distances(&data.domain);
        let cache = SpatialCache::new(data, &dist, phi, tau2)?;
        let p = data.design.ncols();
        let ols = (data.design.transpose() * &data.design)
            .cholesky()
            .ok_or_else(|| Error::Data("design matrix is rank deficient".into()))?
            .solve(&(data.design.transpose() * &data.y));
        let resid = &data.y - &data.design * &ols;
        let sigma2 = (resid.norm_squared() / (data.len() - p) as f64).max(1e-8);
        Ok(Self {
            data,
            priors,
            precision: priors.precision(p),
            dist,
            beta: ols,
            sigma2,
            cache,
        })
    }

    /// `β | σ², φ, τ² ~ N(A⁻¹b, A⁻¹)`.
    fn update_beta(&mut self, rng: &mut RbRng) -> Result<()> {
        let xw = &self.cache.x_white;
        let mut a = xw.transpose() * xw / self.sigma2;
        let mut b = xw.transpose() * &self.cache.y_white / self.sigma2;
        if let Some(prec) = &self.precision {
            a += prec;
            b += prec * DVector::from_column_slice(&self.priors.beta_mean);
        }
        self.beta = sample_mvn_canonical(a, &b, rng)?;
        Ok(())
    }

    /// `σ² | β, φ, τ² ~ Inv-χ²(n + α₁, (α₁α₂ + nS²)/(n + α₁))`.
    fn update_sigma2(&mut self, rng: &mut RbRng) -> Result<()> {
        let n = self.data.len();
        let s2 = self.cache.residual_white(&self.beta).norm_squared() / n as f64;
        let post = ScaledInvChiSqParams::new(self.priors.sigma2_dof, self.priors.sigma2_scale)?
            .posterior(n, s2)?;
        self.sigma2 = sample_scaled_inv_chi_sq(&post, rng)?;
        Ok(())
    }

    /// `σ² | φ, τ², y` with the flat-prior `β` integrated out.
    fn update_sigma2_marginal(&mut self, rng: &mut RbRng) -> Result<()> {
        let resid_dof = self.data.len() - self.data.design.ncols();
        let s2 = self.cache.gls_rss / resid_dof as f64;
        let post = ScaledInvChiSqParams::new(self.priors.sigma2_dof, self.priors.sigma2_scale)?
            .posterior(resid_dof, s2)?;
        self.sigma2 = sample_scaled_inv_chi_sq(&post, rng)?;
        Ok(())
    }

    fn log_spatial_target(&self, cache: &SpatialCache, update: SpatialUpdate) -> Result<f64> {
        let data_term = match update {
            SpatialUpdate::Conditional => cache.log_likelihood(&self.beta, self.sigma2),
            SpatialUpdate::Collapsed => cache.log_marginal(self.priors),
        };
        Ok(data_term + log_density_half_normal(cache.phi, self.priors.gamma)?)
    }

    /// Joint random-walk M-H for `(φ, τ²)` with increment `shape · z`;
    /// out-of-support proposals are rejected.
    fn update_spatial(
        &mut self,
        shape: &[[f64; 2]; 2],
        update: SpatialUpdate,
        rng: &mut RbRng,
    ) -> Result<bool> {
        let z = [sample_standard_normal(rng), sample_standard_normal(rng)];
        let phi = self.cache.phi + shape[0][0] * z[0] + shape[0][1] * z[1];
        let tau2 = self.cache.tau2 + shape[1][0] * z[0] + shape[1][1] * z[1];
        if !(phi > 0.0 && tau2 > 0.0 && tau2 < 1.0) {
            return Ok(false);
        }
        let proposal = SpatialCache::new(self.data, &self.dist, phi, tau2)?;
        let log_ratio = self.log_spatial_target(&proposal, update)?
            - self.log_spatial_target(&self.cache, update)?;
        let accept = mh_accept(log_ratio, rng);
        if accept {
            self.cache = proposal;
        }
        Ok(accept)
    }

    fn row(&self) -> [f64; 6] {
        [
            self.beta[0],
            self.beta[1],
            self.beta[2],
            self.sigma2,
            self.cache.phi,
            self.cache.tau2,
        ]
    }
}

/// Lower Cholesky factor of the sample covariance of `trace`, scaled for a
/// two-dimensional random walk; `None` if the trace is degenerate.
fn proposal_shape(trace: &[[f64; 2]]) -> Option<[[f64; 2]; 2]> {
    if trace.len() < 20 {
        return None;
    }
    let n = trace.len() as f64;
    let m = [0, 1].map(|k| trace.iter().map(|t| t[k]).sum::<f64>() / n);
    let c = |a: usize, b: usize| {
        trace
            .iter()
            .map(|t| (t[a] - m[a]) * (t[b] - m[b]))
            .sum::<f64>()
            / (n - 1.0)
    };
    let (v00, v01, v11) = (c(0, 0), c(0, 1), c(1, 1));
    if !(v00 > 0.0) {
        return None;
    }
    let l00 = v00.sqrt();
    let l10 = v01 / l00;
    let rem = v11 - l10 * l10;
    if !(rem > 0.0) {
        return None;
    }
    let scale = 2.38 / 2f64.sqrt();
    Some([[scale * l00, 0.0], [scale * l10, scale * rem.sqrt()]])
}

/// Full-data MCMC fit of `data`; the chain uses random stream `stream_id`.
pub fn geo_full_fit(
    data: &GeoData,
    priors: &GeoPriors,
    tuning: &GeoTuning,
    cfg: &StageConfig,
    stream_id: u64,
) -> Result<StageOutput> {
    cfg.validate()?;
    check_design(&data.design)?;
    priors.validate(data.design.ncols())?;
    if data.design.ncols() != 3 {
        return Err(Error::Data(
            "the geostatistical model uses a three-column trend".into(),
        ));
    }
    let start = Instant::now();
    let mut rng = rng::stream(cfg.seed, stream_id);
    if tuning.update == SpatialUpdate::Collapsed && priors.beta_precision.is_some() {
        return Err(Error::Config(
            "the collapsed spatial update needs the flat prior on beta".into(),
        ));
    }
    if tuning.spatial_steps == 0 {
        return Err(Error::Config("spatial_steps must be at least 1".into()));
    }
    let (phi0, tau20) = tuning.fixed_spatial.unwrap_or((priors.gamma, 0.5));
    let mut sampler = GeoSampler::new(data, priors, phi0, tau20)?;
    let mut step = AdaptiveStep::new(1.0, cfg.target_acceptance);
    let mut shape = [[tuning.phi_step, 0.0], [0.0, tuning.tau2_step]];
    let reshape_at = cfg.burn_in / 2;
    let mut trace = Vec::new();
    let kept = StageConfig::retained(cfg.iterations, cfg.burn_in, cfg.thin);
    let mut draws = Vec::with_capacity(kept * PARAMETER_NAMES.len());
    let (mut accepted, mut proposed) = (0usize, 0usize);
    for it in 0..cfg.iterations {
        let tuning_phase = it < cfg.burn_in;
        if tuning.adapt_shape && it == reshape_at {
            if let Some(s) = proposal_shape(&trace[trace.len() / 2..]) {
                shape = s;
                step.scale = 1.0;
            }
        }
        if tuning.fixed_spatial.is_none() && tuning.update == SpatialUpdate::Collapsed {
            for _ in 0..tuning.spatial_steps {
                let scaled = shape.map(|r| r.map(|v| v * step.scale));
                let acc = sampler.update_spatial(&scaled, SpatialUpdate::Collapsed, &mut rng)?;
                step.record(acc, tuning_phase);
                if !tuning_phase {
                    accepted += usize::from(acc);
                    proposed += 1;
                }
            }
            sampler.update_sigma2_marginal(&mut rng)?;
            sampler.update_beta(&mut rng)?;
        } else {
            sampler.update_beta(&mut rng)?;
            sampler.update_sigma2(&mut rng)?;
            if tuning.fixed_spatial.is_none() {
                for _ in 0..tuning.spatial_steps {
                    let scaled = shape.map(|r| r.map(|v| v * step.scale));
                    let acc =
                        sampler.update_spatial(&scaled, SpatialUpdate::Conditional, &mut rng)?;
                    step.record(acc, tuning_phase);
                    if !tuning_phase {
                        accepted += usize::from(acc);
                        proposed += 1;
                    }
                }
            }
        }
        if tuning_phase && it < reshape_at {
            trace.push([sampler.cache.phi, sampler.cache.tau2]);
        }
        if !tuning_phase && (it - cfg.burn_in) % cfg.thin == 0 {
            draws.extend_from_slice(&sampler.row());
        }
    }
    let mut diagnostics = StageDiagnostics::new(1);
    if tuning.fixed_spatial.is_none() {
        diagnostics
            .acceptance_rates
            .insert("phi_tau2".into(), accepted as f64 / proposed.max(1) as f64);
    }
    diagnostics
        .timings_ms
        .insert("fit".into(), start.elapsed().as_secs_f64() * 1e3);
    let names = PARAMETER_NAMES.iter().map(|s| s.to_string()).collect();
    Ok(StageOutput {
        samples: SampleMatrix::from_flat(names, draws, 1)?,
        origin: (0..kept).collect(),
        diagnostics,
    })
}

/// Geostatistical model together with a partition into recursion stages.
#[derive(Clone, Debug)]
pub struct GeoModel {
    pub data: GeoData,
    pub priors: GeoPriors,
    pub tuning: GeoTuning,
    pub partition: PartitionIndex,
}

impl GeoModel {
    pub fn new(data: GeoData, priors: GeoPriors, partition: PartitionIndex) -> Result<Self> {
        check_design(&data.design)?;
        priors.validate(data.design.ncols())?;
        if partition.len() != data.len() {
            return Err(Error::Config(format!(
                "partition covers {} observations but the data has {}",
                partition.len(),
                data.len()
            )));
        }
        Ok(Self {
            data,
            priors,
            tuning: GeoTuning::default(),
            partition,
        })
    }

    pub fn with_tuning(mut self, tuning: GeoTuning) -> Self {
        self.tuning = tuning;
        self
    }

    /// Fit to all observations, ignoring the partition.
    pub fn full_fit(&self, cfg: &StageConfig) -> Result<StageOutput> {
        geo_full_fit(&self.data, &self.priors, &self.tuning, cfg, 1)
    }

    fn residual(&self, theta: &[f64]) -> DVector<f64> {
        &self.data.y - &self.data.design * DVector::from_column_slice(&theta[..3])
    }
}

impl StagedModel for GeoModel {
    fn parameter_names(&self) -> Vec<String> {
        PARAMETER_NAMES.iter().map(|s| s.to_string()).collect()
    }

    fn stage_count(&self) -> usize {
        self.partition.block_count()
    }

    fn fit_first_stage(&self, cfg: &StageConfig) -> Result<StageOutput> {
        let block = &self.partition.blocks()[0];
        let mut out = geo_full_fit(&self.data.subset(block), &self.priors, &self.tuning, cfg, 1)?;
        if block.len() < MIN_STAGE_ONE_SIZE {
            let msg = format!(
                "stage one has only {} observations; range and nugget are weakly identified",
                block.len()
            );
            log::warn!("{msg}");
            out.diagnostics.warnings.push(msg);
        }
        Ok(out)
    }

    fn conditional_logliks(&self, theta: &[f64]) -> Result<Vec<f64>> {
        let factor =
            OrderedCorrelationFactor::new(&self.data.domain, &self.partition, theta[4], theta[5])?;
        Ok(factor.block_log_likelihoods(&self.residual(theta), theta[3])[1..].to_vec())
    }

    /// Rows sharing `(φ, τ²)` (common after rejected spatial updates) share
    /// one factorization.
    fn prefetch(&self, samples: &SampleMatrix, workers: usize) -> Result<Vec<Vec<f64>>> {
        let mut groups: BTreeMap<(u64, u64), Vec<usize>> = BTreeMap::new();
        for (k, row) in samples.rows().enumerate() {
            groups
                .entry((row[4].to_bits(), row[5].to_bits()))
                .or_default()
                .push(k);
        }
        let groups: Vec<Vec<usize>> = groups.into_values().collect();
        let ordered = pairwise_distances(&self.data.domain.reordered(&self.partition.order()));
        let partial = parallel_map(&groups, workers, |rows| {
            let first = samples.row(rows[0]);
            let factor = OrderedCorrelationFactor::from_ordered_distances(
                &ordered,
                &self.partition,
                first[4],
                first[5],
            )?;
            Ok(rows
                .iter()
                .map(|&k| {
                    let theta = samples.row(k);
                    (
                        k,
                        factor.block_log_likelihoods(&self.residual(theta), theta[3])[1..].to_vec(),
                    )
                })
                .collect::<Vec<_>>())
        })?;
        let mut table = vec![Vec::new(); samples.nrows()];
        for (k, v) in partial.into_iter().flatten() {
            table[k] = v;
        }
        Ok(table)
    }
}
