//! Normal random-effects model: `y_ij ~ N(μ_j, σ_j²)`, `μ_j ~ N(μ, σ²)`,
//! `σ_j² ~ IG(α, β)`, `μ ~ N(μ₀, σ₀²)`, `σ² ~ IG(α₀, β₀)`.
//!
//! Inverse gamma parameters are (shape, scale) with kernel `x^-(α+1) exp(-1/(βx))`.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::distributions::{
    log_density_inverse_gamma, log_density_normal, sample_inverse_gamma, sample_normal,
    GaussianParams, InverseGammaParams,
};
use crate::engine::{
    initial_state_uniform, parallel_map, proposal_rb_mh_step, ProposalPool, SampleMatrix,
    StageConfig, StageDiagnostics, StageOutput,
};
use crate::rng::{self, RbRng};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HierHyper {
    pub alpha: f64,
    pub beta: f64,
    pub mu0: f64,
    pub sigma0_sq: f64,
    pub alpha0: f64,
    pub beta0: f64,
}

impl Default for HierHyper {
    fn default() -> Self {
        Self {
            alpha: 0.001,
            beta: 1000.0,
            mu0: 0.0,
            sigma0_sq: 10_000.0,
            alpha0: 0.001,
            beta0: 1000.0,
        }
    }
}

/// Stage-one priors for each group's `(μ_j, σ_j²)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransientPriors {
    pub mu_mean: f64,
    pub mu_var: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl Default for TransientPriors {
    fn default() -> Self {
        Self {
            mu_mean: 0.0,
            mu_var: 10_000.0,
            alpha: 0.001,
            beta: 1000.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HierData {
    pub labels: Vec<String>,
    pub groups: Vec<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
struct HierRecord {
    group_id: String,
    value: f64,
}

impl HierData {
    /// Reads `group_id,value` rows; groups keep the order of first appearance.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let mut labels = Vec::new();
        let mut groups: Vec<Vec<f64>> = Vec::new();
        let mut index = HashMap::new();
        for rec in rdr.deserialize() {
            let rec: HierRecord = rec?;
            if !rec.value.is_finite() {
                return Err(Error::Data(format!(
                    "non-finite value in group {}",
                    rec.group_id
                )));
            }
            let j = *index.entry(rec.group_id.clone()).or_insert_with(|| {
                labels.push(rec.group_id.clone());
                groups.push(Vec::new());
                groups.len() - 1
            });
            groups[j].push(rec.value);
        }
        Ok(Self { labels, groups })
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["group_id", "value"])?;
        for (label, g) in self.labels.iter().zip(&self.groups) {
            for v in g {
                w.write_record([label.clone(), format!("{v:.16e}")])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn group_count(&self) -> usize {
        self.groups.len()
    }
}

/// Generating values for synthetic grouped data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HierTruth {
    pub mu: f64,
    pub sigma2: f64,
    /// Within-group variance used for every group.
    pub within_var: f64,
    pub group_sizes: Vec<usize>,
}

impl Default for HierTruth {
    fn default() -> Self {
        Self {
            mu: 38.0,
            sigma2: 1.0,
            within_var: 0.25,
            group_sizes: vec![2, 2, 4, 6, 8, 10, 14, 18, 24, 30, 36, 44, 52, 60],
        }
    }
}

/// Draws `μ_j ~ N(μ, σ²)` and then `y_ij ~ N(μ_j, within_var)`. Returns the
/// data and the drawn group means.
pub fn synthetic_hier(truth: &HierTruth, rng: &mut RbRng) -> Result<(HierData, Vec<f64>)> {
    let pop = GaussianParams::new(truth.mu, truth.sigma2)?;
    let mut means = Vec::with_capacity(truth.group_sizes.len());
    let mut groups = Vec::with_capacity(truth.group_sizes.len());
    for &n in &truth.group_sizes {
        let m = sample_normal(&pop, rng)?;
        let within = GaussianParams::new(m, truth.within_var)?;
        groups.push(
            (0..n)
                .map(|_| sample_normal(&within, rng))
                .collect::<Result<Vec<_>>>()?,
        );
        means.push(m);
    }
    let labels = (1..=groups.len()).map(|j| format!("g{j:02}")).collect();
    Ok((HierData { labels, groups }, means))
}

pub fn parameter_names(j: usize) -> Vec<String> {
    let mut names: Vec<String> = (1..=j).map(|k| format!("mu_{k}")).collect();
    names.extend((1..=j).map(|k| format!("sigma2_{k}")));
    names.push("mu".into());
    names.push("sigma2".into());
    names
}

/// `N(a⁻¹b, a⁻¹)` for `a = n/v + 1/v₀`, `b = Σy/v + m₀/v₀`.
fn normal_mean_conditional(
    sum: f64,
    n: usize,
    var: f64,
    prior_mean: f64,
    prior_var: f64,
) -> Result<GaussianParams<f64>> {
    let a = n as f64 / var + 1.0 / prior_var;
    let b = sum / var + prior_mean / prior_var;
    GaussianParams::new(b / a, 1.0 / a)
}

/// `IG(n/2 + α, (ss/2 + 1/β)⁻¹)`.
fn variance_conditional(
    ss: f64,
    n: usize,
    alpha: f64,
    beta: f64,
) -> Result<InverseGammaParams<f64>> {
    InverseGammaParams::new(n as f64 / 2.0 + alpha, 1.0 / (ss / 2.0 + 1.0 / beta))
}

fn sum_sq_about(values: &[f64], centre: f64) -> f64 {
    values.iter().map(|v| (v - centre) * (v - centre)).sum()
}

/// Full-model state.
#[derive(Clone, Debug, PartialEq)]
pub struct HierState {
    pub mu_j: Vec<f64>,
    pub sigma2_j: Vec<f64>,
    pub mu: f64,
    pub sigma2: f64,
}

impl HierState {
    fn row(&self) -> Vec<f64> {
        let mut r = self.mu_j.clone();
        r.extend_from_slice(&self.sigma2_j);
        r.push(self.mu);
        r.push(self.sigma2);
        r
    }
}

/// Output of a proposal-recursive fit.
#[derive(Clone, Debug)]
pub struct HierRbOutput {
    /// Columns `(mu_j, sigma2_j)` per group, thinned stage-one draws side by side.
    pub stage_one: StageOutput,
    pub stage_two: StageOutput,
    /// `group_origin[j][i]`: stage-one row that group `j`'s values in stage-two
    /// draw `i` were taken from.
    pub group_origin: Vec<Vec<usize>>,
}

#[derive(Clone, Debug)]
pub struct HierGaussianModel {
    pub data: HierData,
    pub hyper: HierHyper,
    pub transient: TransientPriors,
}

impl HierGaussianModel {
    pub fn new(data: HierData, hyper: HierHyper, transient: TransientPriors) -> Result<Self> {
        if data.group_count() < 2 {
            return Err(Error::Data(format!(
                "need at least two groups, got {}",
                data.group_count()
            )));
        }
        if data.labels.len() != data.groups.len() {
            return Err(Error::Data(
                "group labels and groups disagree in length".into(),
            ));
        }
        if let Some(j) = data.groups.iter().position(Vec::is_empty) {
            return Err(Error::Data(format!(
                "group {} has no observations",
                data.labels[j]
            )));
        }
        for (name, v) in [
            ("alpha", hyper.alpha),
            ("beta", hyper.beta),
            ("sigma0_sq", hyper.sigma0_sq),
            ("alpha0", hyper.alpha0),
            ("beta0", hyper.beta0),
            ("transient mu_var", transient.mu_var),
            ("transient alpha", transient.alpha),
            ("transient beta", transient.beta),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(Self {
            data,
            hyper,
            transient,
        })
    }

    pub fn with_defaults(data: HierData) -> Result<Self> {
        Self::new(data, HierHyper::default(), TransientPriors::default())
    }

    pub fn group_count(&self) -> usize {
        self.data.group_count()
    }

    fn initial_state(&self) -> HierState {
        let means: Vec<f64> = self
            .data
            .groups
            .iter()
            .map(|g| g.iter().sum::<f64>() / g.len() as f64)
            .collect();
        let sigma2_j = self
            .data
            .groups
            .iter()
            .zip(&means)
            .map(|(g, &m)| {
                if g.len() > 1 {
                    (sum_sq_about(g, m) / (g.len() - 1) as f64).max(1e-6)
                } else {
                    1.0
                }
            })
            .collect();
        let mu = means.iter().sum::<f64>() / means.len() as f64;
        let sigma2 = (sum_sq_about(&means, mu) / (means.len() - 1) as f64).max(1e-6);
        HierState {
            mu_j: means,
            sigma2_j,
            mu,
            sigma2,
        }
    }

    /// `[μ_j | ·]`.
    pub fn mu_j_conditional(&self, j: usize, s: &HierState) -> Result<GaussianParams<f64>> {
        let g = &self.data.groups[j];
        normal_mean_conditional(g.iter().sum(), g.len(), s.sigma2_j[j], s.mu, s.sigma2)
    }

    /// `[σ_j² | ·]`.
    pub fn sigma2_j_conditional(&self, j: usize, s: &HierState) -> Result<InverseGammaParams<f64>> {
        let g = &self.data.groups[j];
        variance_conditional(
            sum_sq_about(g, s.mu_j[j]),
            g.len(),
            self.hyper.alpha,
            self.hyper.beta,
        )
    }

    /// `[μ | ·]`.
    pub fn mu_conditional(&self, s: &HierState) -> Result<GaussianParams<f64>> {
        normal_mean_conditional(
            s.mu_j.iter().sum(),
            s.mu_j.len(),
            s.sigma2,
            self.hyper.mu0,
            self.hyper.sigma0_sq,
        )
    }

    /// `[σ² | ·]`.
    pub fn sigma2_conditional(&self, s: &HierState) -> Result<InverseGammaParams<f64>> {
        variance_conditional(
            sum_sq_about(&s.mu_j, s.mu),
            s.mu_j.len(),
            self.hyper.alpha0,
            self.hyper.beta0,
        )
    }

    /// Log joint density of data and parameters.
    pub fn log_joint(&self, s: &HierState) -> Result<f64> {
        let h = &self.hyper;
        let mut acc = log_density_normal(s.mu, &GaussianParams::new(h.mu0, h.sigma0_sq)?)?
            + log_density_inverse_gamma(s.sigma2, &InverseGammaParams::new(h.alpha0, h.beta0)?)?;
        let group_var = InverseGammaParams::new(h.alpha, h.beta)?;
        let hierarchy = GaussianParams::new(s.mu, s.sigma2)?;
        for (j, g) in self.data.groups.iter().enumerate() {
            acc += log_density_normal(s.mu_j[j], &hierarchy)?
                + log_density_inverse_gamma(s.sigma2_j[j], &group_var)?;
            let obs = GaussianParams::new(s.mu_j[j], s.sigma2_j[j])?;
            for &y in g {
                acc += log_density_normal(y, &obs)?;
            }
        }
        Ok(acc)
    }

    /// Gibbs sampler on the full model.
    pub fn full_fit(&self, cfg: &StageConfig) -> Result<StageOutput> {
        cfg.validate()?;
        let start = Instant::now();
        let mut rng = rng::stream(cfg.seed, 1);
        let mut s = self.initial_state();
        let j = self.group_count();
        let kept = StageConfig::retained(cfg.iterations, cfg.burn_in, cfg.thin);
        let mut draws = Vec::with_capacity(kept * (2 * j + 2));
        for it in 0..cfg.iterations {
            for k in 0..j {
                s.mu_j[k] = sample_normal(&self.mu_j_conditional(k, &s)?, &mut rng)?;
            }
            for k in 0..j {
                s.sigma2_j[k] = sample_inverse_gamma(&self.sigma2_j_conditional(k, &s)?, &mut rng)?;
            }
            s.mu = sample_normal(&self.mu_conditional(&s)?, &mut rng)?;
            s.sigma2 = sample_inverse_gamma(&self.sigma2_conditional(&s)?, &mut rng)?;
            if it >= cfg.burn_in && (it - cfg.burn_in) % cfg.thin == 0 {
                draws.extend(s.row());
            }
        }
        let mut diagnostics = StageDiagnostics::new(1);
        diagnostics
            .timings_ms
            .insert("fit".into(), start.elapsed().as_secs_f64() * 1e3);
        Ok(StageOutput {
            samples: SampleMatrix::from_flat(parameter_names(j), draws, 1)?,
            origin: (0..kept).collect(),
            diagnostics,
        })
    }

    /// Independent chain for group `j` under the transient priors.
    fn fit_group(&self, j: usize, cfg: &StageConfig) -> Result<Vec<[f64; 2]>> {
        let mut rng = rng::stream(cfg.seed, 100 + j as u64);
        let g = &self.data.groups[j];
        let t = &self.transient;
        let sum: f64 = g.iter().sum();
        let mut mu = sum / g.len() as f64;
        let mut var = if g.len() > 1 {
            (sum_sq_about(g, mu) / (g.len() - 1) as f64).max(1e-6)
        } else {
            1.0
        };
        let mut out =
            Vec::with_capacity(StageConfig::retained(cfg.iterations, cfg.burn_in, cfg.thin));
        for it in 0..cfg.iterations {
            mu = sample_normal(
                &normal_mean_conditional(sum, g.len(), var, t.mu_mean, t.mu_var)?,
                &mut rng,
            )?;
            var = sample_inverse_gamma(
                &variance_conditional(sum_sq_about(g, mu), g.len(), t.alpha, t.beta)?,
                &mut rng,
            )?;
            if it >= cfg.burn_in && (it - cfg.burn_in) % cfg.thin == 0 {
                out.push([mu, var]);
            }
        }
        Ok(out)
    }

    /// Stage one fits every group separately (in parallel); stage two
    /// resamples each group's draws as proposals for `(μ_j, σ_j²)` and updates
    /// `μ`, `σ²` by Gibbs steps. Stage two runs `pool_iterations` iterations
    /// (default: the thinned stage-one length).
    pub fn proposal_rb(&self, cfg: &StageConfig) -> Result<HierRbOutput> {
        cfg.validate()?;
        let j = self.group_count();
        let start = Instant::now();
        let ids: Vec<usize> = (0..j).collect();
        let chains = parallel_map(&ids, cfg.workers, |&k| self.fit_group(k, cfg))?;
        let stage_one_ms = start.elapsed().as_secs_f64() * 1e3;
        let k_pool = chains[0].len();

        let mut names: Vec<String> = Vec::with_capacity(2 * j);
        let mut one = Vec::with_capacity(k_pool * 2 * j);
        for k in 1..=j {
            names.push(format!("mu_{k}"));
            names.push(format!("sigma2_{k}"));
        }
        for r in 0..k_pool {
            for c in &chains {
                one.extend_from_slice(&c[r]);
            }
        }
        let mut d1 = StageDiagnostics::new(1);
        d1.timings_ms.insert("chain".into(), stage_one_ms);
        let stage_one = StageOutput {
            samples: SampleMatrix::from_flat(names, one, 1)?,
            origin: (0..k_pool).collect(),
            diagnostics: d1,
        };

        let start = Instant::now();
        let mut pools = chains
            .iter()
            .map(|c| {
                let flat = c.iter().flatten().copied().collect();
                ProposalPool::new(
                    SampleMatrix::from_flat(vec!["mu".into(), "sigma2".into()], flat, 1)?,
                    cfg.strategy,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let mut rng = rng::stream(cfg.seed, 1_002);
        let mut states = pools
            .iter()
            .map(|p| initial_state_uniform(p, &mut rng))
            .collect::<Vec<_>>();
        let transient = GaussianParams::new(self.transient.mu_mean, self.transient.mu_var)?;
        let log_transient =
            |row: &[f64]| log_density_normal(row[0], &transient).unwrap_or(f64::NEG_INFINITY);
        let mut s = HierState {
            mu_j: states
                .iter()
                .zip(&pools)
                .map(|(st, p)| p.row(st.pool_index)[0])
                .collect(),
            sigma2_j: states
                .iter()
                .zip(&pools)
                .map(|(st, p)| p.row(st.pool_index)[1])
                .collect(),
            mu: 0.0,
            sigma2: 1.0,
        };
        s.mu = s.mu_j.iter().sum::<f64>() / j as f64;
        s.sigma2 = (sum_sq_about(&s.mu_j, s.mu) / (j - 1) as f64).max(1e-6);

        let total = cfg.pool_iterations.unwrap_or(k_pool);
        let burn_in = cfg.pool_burn_in.min(total.saturating_sub(1));
        let kept = StageConfig::retained(total, burn_in, cfg.thin);
        let mut draws = Vec::with_capacity(kept * (2 * j + 2));
        let mut accepted = vec![0usize; j];
        let mut group_origin = vec![Vec::with_capacity(kept); j];
        for it in 0..total {
            let hierarchy = GaussianParams::new(s.mu, s.sigma2)?;
            let log_hierarchy =
                |row: &[f64]| log_density_normal(row[0], &hierarchy).unwrap_or(f64::NEG_INFINITY);
            for k in 0..j {
                let acc = proposal_rb_mh_step(
                    &mut states[k],
                    &mut pools[k],
                    log_hierarchy,
                    log_transient,
                    &mut rng,
                )?;
                let row = pools[k].row(states[k].pool_index);
                s.mu_j[k] = row[0];
                s.sigma2_j[k] = row[1];
                if it >= burn_in {
                    accepted[k] += usize::from(acc);
                }
            }
            s.mu = sample_normal(&self.mu_conditional(&s)?, &mut rng)?;
            s.sigma2 = sample_inverse_gamma(&self.sigma2_conditional(&s)?, &mut rng)?;
            if it >= burn_in && (it - burn_in) % cfg.thin == 0 {
                draws.extend(s.row());
                for (o, st) in group_origin.iter_mut().zip(&states) {
                    o.push(st.pool_index);
                }
            }
        }
        let mut d2 = StageDiagnostics::new(2);
        for (k, a) in accepted.iter().enumerate() {
            d2.acceptance_rates.insert(
                format!("group_{}", k + 1),
                *a as f64 / (total - burn_in) as f64,
            );
        }
        d2.timings_ms
            .insert("chain".into(), start.elapsed().as_secs_f64() * 1e3);
        let stage_two = StageOutput {
            samples: SampleMatrix::from_flat(parameter_names(j), draws, 2)?,
            origin: (0..kept).collect(),
            diagnostics: d2,
        };
        Ok(HierRbOutput {
            stage_one,
            stage_two,
            group_origin,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics::summarize;
    use crate::rng::seeded;

    fn toy() -> HierGaussianModel {
        let data = HierData {
            labels: vec!["a".into(), "b".into()],
            groups: vec![vec![1.0, 2.0, 4.0], vec![-1.0, 0.5]],
        };
        HierGaussianModel::with_defaults(data).unwrap()
    }

    fn toy_state() -> HierState {
        HierState {
            mu_j: vec![2.1, -0.4],
            sigma2_j: vec![1.3, 0.6],
            mu: 0.7,
            sigma2: 2.5,
        }
    }

    #[test]
    fn mu_conditional_matches_hand_calculation() {
        let m = toy();
        let s = toy_state();
        // a = J/σ² + 1/σ₀² = 2/2.5 + 1e-4, b = Σμ_j/σ² + μ₀/σ₀² = 1.7/2.5.
        let a = 2.0 / 2.5 + 1e-4;
        let b = 1.7 / 2.5;
        let c = m.mu_conditional(&s).unwrap();
        assert!((c.mean - b / a).abs() < 1e-14);
        assert!((c.variance - 1.0 / a).abs() < 1e-14);
        // Group a: a = 3/1.3 + 1/2.5, b = 7/1.3 + 0.7/2.5.
        let c = m.mu_j_conditional(0, &s).unwrap();
        let (a, b) = (3.0 / 1.3 + 0.4, 7.0 / 1.3 + 0.28);
        assert!((c.mean - b / a).abs() < 1e-13 && (c.variance - 1.0 / a).abs() < 1e-14);
    }

    /// Log full-conditional differences equal log joint differences.
    #[test]
    fn every_full_conditional_passes_density_ratio_oracle() {
        let m = toy();
        let base = toy_state();
        let (x1, x2) = (0.3, 1.9);
        let diff_joint = |f: &dyn Fn(&mut HierState, f64)| {
            let (mut a, mut b) = (base.clone(), base.clone());
            f(&mut a, x1);
            f(&mut b, x2);
            m.log_joint(&a).unwrap() - m.log_joint(&b).unwrap()
        };
        let n = |p: GaussianParams<f64>| {
            log_density_normal(x1, &p).unwrap() - log_density_normal(x2, &p).unwrap()
        };
        let ig = |p: InverseGammaParams<f64>| {
            log_density_inverse_gamma(x1, &p).unwrap() - log_density_inverse_gamma(x2, &p).unwrap()
        };
        for j in 0..2 {
            let d = diff_joint(&|s, v| s.mu_j[j] = v);
            assert!((d - n(m.mu_j_conditional(j, &base).unwrap())).abs() < 1e-8);
            let d = diff_joint(&|s, v| s.sigma2_j[j] = v);
            assert!((d - ig(m.sigma2_j_conditional(j, &base).unwrap())).abs() < 1e-8);
        }
        let d = diff_joint(&|s, v| s.mu = v);
        assert!((d - n(m.mu_conditional(&base).unwrap())).abs() < 1e-8);
        let d = diff_joint(&|s, v| s.sigma2 = v);
        assert!((d - ig(m.sigma2_conditional(&base).unwrap())).abs() < 1e-8);
    }

    #[test]
    fn tiny_within_variance_pins_group_mean() {
        let m = toy();
        let mut s = toy_state();
        s.sigma2_j[0] = 1e-10;
        let c = m.mu_j_conditional(0, &s).unwrap();
        assert!((c.mean - 7.0 / 3.0).abs() < 1e-6);
        assert!(c.variance < 1e-9);
    }

    #[test]
    fn empty_or_single_group_is_rejected() {
        let one = HierData {
            labels: vec!["a".into()],
            groups: vec![vec![1.0]],
        };
        assert!(matches!(
            HierGaussianModel::with_defaults(one),
            Err(Error::Data(_))
        ));
        let empty = HierData {
            labels: vec!["a".into(), "b".into()],
            groups: vec![vec![1.0], vec![]],
        };
        assert!(matches!(
            HierGaussianModel::with_defaults(empty),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn csv_round_trip_keeps_group_order() {
        let (data, _) = synthetic_hier(&HierTruth::default(), &mut seeded(4)).unwrap();
        let mut buf = Vec::new();
        data.write_csv(&mut buf).unwrap();
        assert_eq!(HierData::read_csv(buf.as_slice()).unwrap(), data);
    }

    #[test]
    fn flat_hierarchy_leaves_stage_one_marginals() {
        // With σ² pinned at a huge value the hierarchy density is flat, the
        // ratio reduces to transient-prior terms and stage two reproduces stage one.
        let (data, _) = synthetic_hier(&HierTruth::default(), &mut seeded(2)).unwrap();
        let hyper = HierHyper {
            alpha0: 1e6,
            beta0: 1e-12,
            ..Default::default()
        };
        let transient = TransientPriors {
            mu_var: 1e12,
            ..Default::default()
        };
        let m = HierGaussianModel::new(data, hyper, transient).unwrap();
        let cfg = StageConfig {
            iterations: 40_000,
            burn_in: 1_000,
            thin: 2,
            ..Default::default()
        };
        let out = m.proposal_rb(&cfg).unwrap();
        let s1 = summarize(&out.stage_one.samples).unwrap();
        let s2 = summarize(&out.stage_two.samples).unwrap();
        for k in [5, 14] {
            let (a, b) = (
                s1.get(&format!("mu_{k}")).unwrap(),
                s2.get(&format!("mu_{k}")).unwrap(),
            );
            assert!(
                (a.mean - b.mean).abs() < 4.0 * (a.mcse.hypot(b.mcse)),
                "mu_{k}: {} vs {}",
                a.mean,
                b.mean
            );
        }
    }

    #[test]
    fn stage_two_matches_full_fit_on_small_problem() {
        let (data, _) = synthetic_hier(&HierTruth::default(), &mut seeded(3)).unwrap();
        let m = HierGaussianModel::with_defaults(data).unwrap();
        let full = m
            .full_fit(&StageConfig {
                iterations: 20_000,
                burn_in: 1_000,
                ..Default::default()
            })
            .unwrap();
        let rb = m
            .proposal_rb(&StageConfig {
                iterations: 40_000,
                burn_in: 1_000,
                thin: 2,
                ..Default::default()
            })
            .unwrap();
        let a = summarize(&full.samples).unwrap();
        let b = summarize(&rb.stage_two.samples).unwrap();
        let (pa, pb) = (a.get("mu").unwrap(), b.get("mu").unwrap());
        assert!(
            (pa.mean - pb.mean).abs() < 4.0 * pa.mcse.hypot(pb.mcse),
            "{} vs {}",
            pa.mean,
            pb.mean
        );
    }
}
