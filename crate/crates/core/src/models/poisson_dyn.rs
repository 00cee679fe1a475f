//! Poisson counts with a Gaussian random walk with drift on the log intensity:
//! `y_{s,t} ~ Pois(λ_{s,t})`, `log λ_{s,1} ~ N(μ₁, σ₁²)`,
//! `log λ_{s,t} ~ N(φ_s + log λ_{s,t-1}, σ_s²)`, `φ_s ~ N(0, σ_φ²)`,
//! `σ_s² ~ IG(α, β)`. Sites are independent given the hyperparameters, so
//! each site is fitted on its own chain.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::distributions::{
    ln_factorial, log_density_inverse_gamma, log_density_normal, log_mass_poisson,
    log_mass_poisson_with, sample_inverse_gamma, sample_normal, sample_standard_normal,
    GaussianParams, InverseGammaParams,
};
use crate::engine::{
    mh_accept, online_update_with_streams, parallel_map, PredictiveExtension, SampleMatrix,
    StageConfig, StageDiagnostics, StageOutput,
};
use crate::models::AdaptiveStep;
use crate::rng::{self, RbRng};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PoissonDynHyper {
    pub mu1: f64,
    pub sigma1_sq: f64,
    pub sigma_phi_sq: f64,
    pub alpha: f64,
    pub beta: f64,
    /// Initial random-walk variance for the log-intensity updates.
    pub tune_var: f64,
}

impl Default for PoissonDynHyper {
    fn default() -> Self {
        Self {
            mu1: 8.7,
            sigma1_sq: 1.69,
            sigma_phi_sq: 1.0,
            alpha: 1.0,
            beta: 20.0,
            tune_var: 0.1,
        }
    }
}

/// Counts per site over consecutive years; `None` marks an unsurveyed year.
#[derive(Clone, Debug, PartialEq)]
pub struct CountSeries {
    pub sites: Vec<String>,
    pub first_year: i64,
    /// `counts[s][t]` for site `s` and year `first_year + t`.
    pub counts: Vec<Vec<Option<u64>>>,
}

#[derive(Debug, Deserialize)]
struct CountRecord {
    site: String,
    year: i64,
    count: Option<String>,
}

impl CountSeries {
    pub fn new(sites: Vec<String>, first_year: i64, counts: Vec<Vec<Option<u64>>>) -> Result<Self> {
        if sites.len() != counts.len() || sites.is_empty() {
            return Err(Error::Data(
                "need one count series per site and at least one site".into(),
            ));
        }
        let t = counts[0].len();
        if counts.iter().any(|c| c.len() != t) {
            return Err(Error::Data(
                "every site needs the same number of years".into(),
            ));
        }
        Ok(Self {
            sites,
            first_year,
            counts,
        })
    }

    /// Reads `site,year,count` rows. Blank counts and years absent between the
    /// first and last year are missing.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let mut by_site: BTreeMap<String, BTreeMap<i64, Option<u64>>> = BTreeMap::new();
        let mut order = Vec::new();
        for rec in rdr.deserialize() {
            let rec: CountRecord = rec?;
            let count = match rec.count.as_deref().map(str::trim) {
                None | Some("") => None,
                Some(text) => Some(text.parse::<i64>().map_err(|_| {
                    Error::Data(format!(
                        "count '{text}' at site {} year {} is not an integer",
                        rec.site, rec.year
                    ))
                })?),
            };
            if let Some(c) = count {
                if c < 0 {
                    return Err(Error::Data(format!(
                        "negative count {c} at site {} year {}",
                        rec.site, rec.year
                    )));
                }
            }
            if !by_site.contains_key(&rec.site) {
                order.push(rec.site.clone());
            }
            let years = by_site.entry(rec.site.clone()).or_default();
            if years.insert(rec.year, count.map(|c| c as u64)).is_some() {
                return Err(Error::Data(format!(
                    "duplicate year {} for site {}",
                    rec.year, rec.site
                )));
            }
        }
        if order.is_empty() {
            return Err(Error::Data("count file has no rows".into()));
        }
        let years = by_site.values().flat_map(|m| m.keys().copied());
        let (lo, hi) = years.fold((i64::MAX, i64::MIN), |(l, h), y| (l.min(y), h.max(y)));
        let counts = order
            .iter()
            .map(|s| {
                (lo..=hi)
                    .map(|y| by_site[s].get(&y).copied().flatten())
                    .collect()
            })
            .collect();
        Self::new(order, lo, counts)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["site", "year", "count"])?;
        for (site, series) in self.sites.iter().zip(&self.counts) {
            for (t, c) in series.iter().enumerate() {
                let year = (self.first_year + t as i64).to_string();
                w.write_record([
                    site.clone(),
                    year,
                    c.map(|v| v.to_string()).unwrap_or_default(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Number of years `T`.
    pub fn len(&self) -> usize {
        self.counts[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn site_count(&self) -> usize {
        self.sites.len()
    }

    /// First `t` years.
    pub fn truncated(&self, t: usize) -> Self {
        Self {
            sites: self.sites.clone(),
            first_year: self.first_year,
            counts: self
                .counts
                .iter()
                .map(|c| c[..t.min(c.len())].to_vec())
                .collect(),
        }
    }

    /// Appends one year per entry of `extra[s]` to each site.
    pub fn appended(&self, extra: &[Vec<Option<u64>>]) -> Result<Self> {
        if extra.len() != self.site_count() {
            return Err(Error::Data("need additional counts for every site".into()));
        }
        let counts = self
            .counts
            .iter()
            .zip(extra)
            .map(|(c, e)| c.iter().chain(e).copied().collect())
            .collect();
        Self::new(self.sites.clone(), self.first_year, counts)
    }
}

/// Generating values for synthetic series.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PoissonTruth {
    pub phi: Vec<f64>,
    pub sigma2: Vec<f64>,
    pub log_lambda1: Vec<f64>,
    /// Years with counts in the stage-one record.
    pub years: usize,
    /// 0-based years left unsurveyed within the stage-one record, in addition
    /// to year `T + 1`.
    pub missing: Vec<usize>,
}

impl Default for PoissonTruth {
    fn default() -> Self {
        Self {
            phi: vec![0.03, -0.02],
            sigma2: vec![0.02, 0.03],
            log_lambda1: vec![7.2, 8.0],
            years: 36,
            missing: Vec::new(),
        }
    }
}

impl PoissonTruth {
    pub fn values(&self) -> Vec<(String, f64)> {
        let mut v = Vec::new();
        for s in 0..self.phi.len() {
            v.push((format!("phi_{}", s + 1), self.phi[s]));
            v.push((format!("sigma2_{}", s + 1), self.sigma2[s]));
        }
        v
    }
}

/// Synthetic record through year `T + 2` with year `T + 1` unsurveyed.
#[derive(Clone, Debug)]
pub struct SyntheticCounts {
    /// All `T + 2` years (year `T + 1` missing).
    pub series: CountSeries,
    /// True log intensities, `T + 2` per site.
    pub log_lambda: Vec<Vec<f64>>,
}

impl SyntheticCounts {
    /// The stage-one record `y_{1:T}`.
    pub fn stage_one(&self) -> CountSeries {
        self.series.truncated(self.series.len() - 2)
    }

    /// The newly arrived count `y_{T+2}` per site.
    pub fn new_counts(&self) -> Vec<u64> {
        self.series
            .counts
            .iter()
            .map(|c| c.last().copied().flatten().expect("final year observed"))
            .collect()
    }
}

pub fn synthetic_counts(truth: &PoissonTruth, rng: &mut RbRng) -> Result<SyntheticCounts> {
    let s = truth.phi.len();
    if truth.sigma2.len() != s || truth.log_lambda1.len() != s || s == 0 {
        return Err(Error::Config(
            "truth needs phi, sigma2 and log_lambda1 for every site".into(),
        ));
    }
    if truth.years < 2 {
        return Err(Error::Config("need at least two years".into()));
    }
    let total = truth.years + 2;
    let mut counts = Vec::with_capacity(s);
    let mut latent = Vec::with_capacity(s);
    for k in 0..s {
        let mut x = vec![truth.log_lambda1[k]];
        for t in 1..total {
            let prev = x[t - 1];
            x.push(prev + truth.phi[k] + truth.sigma2[k].sqrt() * sample_standard_normal(rng));
        }
        let series = x
            .iter()
            .enumerate()
            .map(|(t, &v)| {
                let draw = poisson(v.exp(), rng);
                (!truth.missing.contains(&t) && t != truth.years).then_some(draw)
            })
            .collect();
        counts.push(series);
        latent.push(x);
    }
    let sites = (1..=s).map(|k| format!("site{k}")).collect();
    Ok(SyntheticCounts {
        series: CountSeries::new(sites, 1978, counts)?,
        log_lambda: latent,
    })
}

fn poisson(lambda: f64, rng: &mut RbRng) -> u64 {
    use rand_distr::{Distribution, Poisson};
    Poisson::new(lambda)
        .map(|d| d.sample(rng) as u64)
        .unwrap_or(0)
}

/// One site's parameters with the log intensities `x_t = log λ_t`.
#[derive(Clone, Debug, PartialEq)]
pub struct SiteState {
    pub phi: f64,
    pub sigma2: f64,
    pub x: Vec<f64>,
}

pub fn site_columns(site: usize, t: usize) -> Vec<String> {
    let mut names = vec![format!("phi_{site}"), format!("sigma2_{site}")];
    names.extend((1..=t).map(|k| format!("lambda_{site}_{k}")));
    names
}

#[derive(Clone, Debug)]
pub struct PoissonDynModel {
    pub data: CountSeries,
    pub hyper: PoissonDynHyper,
}

impl PoissonDynModel {
    pub fn new(data: CountSeries, hyper: PoissonDynHyper) -> Result<Self> {
        if data.len() < 2 {
            return Err(Error::Data(format!(
                "need at least two years, got {}",
                data.len()
            )));
        }
        for (name, v) in [
            ("sigma1_sq", hyper.sigma1_sq),
            ("sigma_phi_sq", hyper.sigma_phi_sq),
            ("alpha", hyper.alpha),
            ("beta", hyper.beta),
            ("tune_var", hyper.tune_var),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(Self { data, hyper })
    }

    pub fn years(&self) -> usize {
        self.data.len()
    }

    /// `[φ_s | ·] = N(a⁻¹b, a⁻¹)` with `a = (T-1)/σ_s² + 1/σ_φ²`,
    /// `b = Σ_t (x_t - x_{t-1}) / σ_s²`.
    pub fn phi_conditional(&self, s: &SiteState) -> Result<GaussianParams<f64>> {
        let t = s.x.len();
        let a = (t - 1) as f64 / s.sigma2 + 1.0 / self.hyper.sigma_phi_sq;
        let b = (s.x[t - 1] - s.x[0]) / s.sigma2;
        GaussianParams::new(b / a, 1.0 / a)
    }

    /// `[σ_s² | ·] = IG((T-1)/2 + α, (Σ_t (x_t - φ_s - x_{t-1})²/2 + 1/β)⁻¹)`.
    pub fn sigma2_conditional(&self, s: &SiteState) -> Result<InverseGammaParams<f64>> {
        let t = s.x.len();
        let ss: f64 = s.x.windows(2).map(|w| (w[1] - s.phi - w[0]).powi(2)).sum();
        InverseGammaParams::new(
            (t - 1) as f64 / 2.0 + self.hyper.alpha,
            1.0 / (ss / 2.0 + 1.0 / self.hyper.beta),
        )
    }

    /// Log full conditional of `x_t` (up to a constant) at value `v`.
    pub fn log_latent_conditional(&self, site: usize, t: usize, v: f64, s: &SiteState) -> f64 {
        let mut acc = match self.data.counts[site][t] {
            Some(y) => y as f64 * v - v.exp(),
            None => 0.0,
        };
        let sq = |d: f64| -0.5 * d * d / s.sigma2;
        if t == 0 {
            let d = v - self.hyper.mu1;
            acc -= 0.5 * d * d / self.hyper.sigma1_sq;
        } else {
            acc += sq(v - s.phi - s.x[t - 1]);
        }
        if t + 1 < s.x.len() {
            acc += sq(s.x[t + 1] - s.phi - v);
        }
        acc
    }

    /// Log joint density of one site's counts and parameters.
    pub fn log_joint_site(&self, site: usize, s: &SiteState) -> Result<f64> {
        let h = &self.hyper;
        let mut acc = log_density_normal(s.phi, &GaussianParams::new(0.0, h.sigma_phi_sq)?)?
            + log_density_inverse_gamma(s.sigma2, &InverseGammaParams::new(h.alpha, h.beta)?)?
            + log_density_normal(s.x[0], &GaussianParams::new(h.mu1, h.sigma1_sq)?)?;
        for w in s.x.windows(2) {
            acc += log_density_normal(w[1], &GaussianParams::new(s.phi + w[0], s.sigma2)?)?;
        }
        for (t, y) in self.data.counts[site].iter().enumerate() {
            if let Some(y) = y {
                acc += log_mass_poisson(*y, s.x[t].exp())?;
            }
        }
        Ok(acc)
    }

    fn initial_state(&self, site: usize) -> SiteState {
        let counts = &self.data.counts[site];
        let mut x: Vec<f64> = counts
            .iter()
            .map(|c| c.map(|y| (y as f64 + 0.5).ln()).unwrap_or(f64::NAN))
            .collect();
        let mut last = self.hyper.mu1;
        if let Some(first) = x.iter().copied().find(|v| v.is_finite()) {
            last = first;
        }
        for v in x.iter_mut() {
            if v.is_finite() {
                last = *v;
            } else {
                *v = last;
            }
        }
        SiteState {
            phi: 0.0,
            sigma2: 0.1,
            x,
        }
    }

    /// Chain for one site; columns `phi_s, sigma2_s, lambda_s_1..T`.
    pub fn fit_site(&self, site: usize, cfg: &StageConfig) -> Result<(SampleMatrix, f64)> {
        cfg.validate()?;
        let mut rng = rng::stream(cfg.seed, 100 + site as u64);
        let t_len = self.years();
        let mut s = self.initial_state(site);
        let mut steps =
            vec![AdaptiveStep::new(self.hyper.tune_var.sqrt(), cfg.target_acceptance); t_len];
        let kept = StageConfig::retained(cfg.iterations, cfg.burn_in, cfg.thin);
        let mut draws = Vec::with_capacity(kept * (t_len + 2));
        let (mut accepted, mut proposed) = (0usize, 0usize);
        for it in 0..cfg.iterations {
            let tuning = it < cfg.burn_in;
            for t in 0..t_len {
                let cur = s.x[t];
                let prop = cur + steps[t].scale * sample_standard_normal(&mut rng);
                let log_ratio = self.log_latent_conditional(site, t, prop, &s)
                    - self.log_latent_conditional(site, t, cur, &s);
                let acc = mh_accept(log_ratio, &mut rng);
                if acc {
                    s.x[t] = prop;
                }
                steps[t].record(acc, tuning);
                if !tuning {
                    accepted += usize::from(acc);
                    proposed += 1;
                }
            }
            s.phi = sample_normal(&self.phi_conditional(&s)?, &mut rng)?;
            s.sigma2 = sample_inverse_gamma(&self.sigma2_conditional(&s)?, &mut rng)?;
            if !tuning && (it - cfg.burn_in) % cfg.thin == 0 {
                draws.push(s.phi);
                draws.push(s.sigma2);
                draws.extend(s.x.iter().map(|v| v.exp()));
            }
        }
        let samples = SampleMatrix::from_flat(site_columns(site + 1, t_len), draws, 1)?;
        Ok((samples, accepted as f64 / proposed.max(1) as f64))
    }

    /// All sites, fitted concurrently; columns are the per-site blocks side by side.
    pub fn full_fit(&self, cfg: &StageConfig) -> Result<StageOutput> {
        let start = Instant::now();
        let sites: Vec<usize> = (0..self.data.site_count()).collect();
        let fits = parallel_map(&sites, cfg.workers, |&s| self.fit_site(s, cfg))?;
        let mut diagnostics = StageDiagnostics::new(1);
        let mut samples: Option<SampleMatrix> = None;
        for (s, (m, rate)) in fits.into_iter().enumerate() {
            diagnostics
                .acceptance_rates
                .insert(format!("lambda_{}", s + 1), rate);
            samples = Some(match samples {
                None => m,
                Some(acc) => acc.hstack(&m)?,
            });
        }
        diagnostics
            .timings_ms
            .insert("fit".into(), start.elapsed().as_secs_f64() * 1e3);
        let samples = samples.expect("at least one site");
        let origin = (0..samples.nrows()).collect();
        Ok(StageOutput {
            samples,
            origin,
            diagnostics,
        })
    }
}

/// Forward simulation of `horizon` further years for one site, scored by the
/// count in the last of them.
#[derive(Clone, Debug)]
pub struct SiteForecast {
    pub site: usize,
    /// Length of the stage-one record.
    pub years: usize,
    pub horizon: usize,
    pub new_count: u64,
    ln_count_factorial: f64,
}

impl SiteForecast {
    pub fn new(site: usize, years: usize, horizon: usize, new_count: u64) -> Self {
        Self {
            site,
            years,
            horizon,
            new_count,
            ln_count_factorial: ln_factorial(new_count),
        }
    }
}

impl PredictiveExtension for SiteForecast {
    fn carried_columns(&self) -> Vec<String> {
        let s = self.site + 1;
        vec![
            format!("phi_{s}"),
            format!("sigma2_{s}"),
            format!("lambda_{s}_{}", self.years),
        ]
    }

    fn new_columns(&self) -> Vec<String> {
        (1..=self.horizon)
            .map(|h| format!("lambda_{}_{}", self.site + 1, self.years + h))
            .collect()
    }

    fn extend(&self, row: &[f64], rng: &mut RbRng) -> Result<Vec<f64>> {
        let (phi, sd) = (row[0], row[1].sqrt());
        let mut x = row[2].ln();
        Ok((0..self.horizon)
            .map(|_| {
                x += phi + sd * sample_standard_normal(rng);
                x.exp()
            })
            .collect())
    }

    fn log_likelihood(&self, _row: &[f64], extension: &[f64]) -> Result<f64> {
        log_mass_poisson_with(
            self.new_count,
            extension[self.horizon - 1],
            self.ln_count_factorial,
        )
    }
}

/// Assimilates the count `new_count` for one site, observed `horizon` years
/// after the end of the stage-one record of length `years`. `stage_one` must
/// hold `phi_s`, `sigma2_s` and `lambda_s_T` for that site; each site draws
/// from its own random streams.
pub fn site_online_update(
    stage_one: &SampleMatrix,
    years: usize,
    site: usize,
    new_count: u64,
    horizon: usize,
    cfg: &StageConfig,
) -> Result<StageOutput> {
    if horizon == 0 {
        return Err(Error::Config("forecast horizon must be at least 1".into()));
    }
    let ext = SiteForecast::new(site, years, horizon, new_count);
    online_update_with_streams(
        stage_one,
        &ext,
        cfg,
        2_000 + site as u64,
        3_000 + site as u64,
    )
}

/// [`site_online_update`] for every site, with the results placed side by
/// side. The returned origin is that of the first site; the per-site outputs
/// carry their own.
pub fn poisson_dyn_online_update(
    stage_one: &SampleMatrix,
    years: usize,
    new_counts: &[u64],
    horizon: usize,
    cfg: &StageConfig,
) -> Result<(StageOutput, Vec<StageOutput>)> {
    let start = Instant::now();
    let sites = new_counts
        .iter()
        .enumerate()
        .map(|(site, &y)| site_online_update(stage_one, years, site, y, horizon, cfg))
        .collect::<Result<Vec<_>>>()?;
    let first = sites
        .first()
        .ok_or_else(|| Error::Config("no new counts supplied".into()))?;
    let mut diagnostics = StageDiagnostics::new(stage_one.stage() + 1);
    let mut samples = first.samples.clone();
    for (k, out) in sites.iter().enumerate() {
        diagnostics.acceptance_rates.insert(
            format!("site_{}", k + 1),
            out.diagnostics.acceptance_rates["pool"],
        );
        if k > 0 {
            samples = samples.hstack(&out.samples)?;
        }
    }
    diagnostics
        .timings_ms
        .insert("total".into(), start.elapsed().as_secs_f64() * 1e3);
    let combined = StageOutput {
        samples,
        origin: first.origin.clone(),
        diagnostics,
    };
    Ok((combined, sites))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics::summarize;
    use crate::rng::seeded;

    fn toy() -> PoissonDynModel {
        let counts = vec![vec![Some(5), None, Some(9), Some(7)]];
        PoissonDynModel::new(
            CountSeries::new(vec!["a".into()], 2000, counts).unwrap(),
            PoissonDynHyper::default(),
        )
        .unwrap()
    }

    fn toy_state() -> SiteState {
        SiteState {
            phi: 0.1,
            sigma2: 0.3,
            x: vec![1.6, 1.9, 2.1, 2.0],
        }
    }

    #[test]
    fn csv_reads_blanks_and_gaps_as_missing() {
        let text = "site,year,count\nA,2000,5\nA,2001,\nA,2003,7\nB,2000,1\nB,2002,3\nB,2003,4\n";
        let s = CountSeries::read_csv(text.as_bytes()).unwrap();
        assert_eq!(s.len(), 4);
        assert_eq!(s.counts[0], vec![Some(5), None, None, Some(7)]);
        assert_eq!(s.counts[1], vec![Some(1), None, Some(3), Some(4)]);
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        assert_eq!(CountSeries::read_csv(buf.as_slice()).unwrap(), s);
    }

    #[test]
    fn negative_or_fractional_counts_are_data_errors() {
        for text in [
            "site,year,count\nA,2000,-1\n",
            "site,year,count\nA,2000,2.5\n",
        ] {
            assert!(matches!(
                CountSeries::read_csv(text.as_bytes()),
                Err(Error::Data(_))
            ));
        }
    }

    #[test]
    fn interior_latent_conditional_is_the_product_of_three_factors() {
        let m = toy();
        let s = toy_state();
        let v = 2.3_f64;
        let pois = log_mass_poisson(9, v.exp()).unwrap();
        let ahead =
            log_density_normal(s.x[3], &GaussianParams::new(s.phi + v, s.sigma2).unwrap()).unwrap();
        let behind =
            log_density_normal(v, &GaussianParams::new(s.phi + s.x[1], s.sigma2).unwrap()).unwrap();
        let hand = pois + ahead + behind;
        let w = 1.7_f64;
        let hand_w = log_mass_poisson(9, w.exp()).unwrap()
            + log_density_normal(s.x[3], &GaussianParams::new(s.phi + w, s.sigma2).unwrap())
                .unwrap()
            + log_density_normal(w, &GaussianParams::new(s.phi + s.x[1], s.sigma2).unwrap())
                .unwrap();
        let ours = m.log_latent_conditional(0, 2, v, &s) - m.log_latent_conditional(0, 2, w, &s);
        assert!((ours - (hand - hand_w)).abs() < 1e-10);
    }

    #[test]
    fn every_full_conditional_passes_density_ratio_oracle() {
        let m = toy();
        let base = toy_state();
        let joint_diff = |f: &dyn Fn(&mut SiteState, f64), a: f64, b: f64| {
            let (mut sa, mut sb) = (base.clone(), base.clone());
            f(&mut sa, a);
            f(&mut sb, b);
            m.log_joint_site(0, &sa).unwrap() - m.log_joint_site(0, &sb).unwrap()
        };
        let (a, b) = (0.05, 0.4);
        let phi = m.phi_conditional(&base).unwrap();
        let cond = log_density_normal(a, &phi).unwrap() - log_density_normal(b, &phi).unwrap();
        assert!((cond - joint_diff(&|s, v| s.phi = v, a, b)).abs() < 1e-8);
        let sig = m.sigma2_conditional(&base).unwrap();
        let cond = log_density_inverse_gamma(a, &sig).unwrap()
            - log_density_inverse_gamma(b, &sig).unwrap();
        assert!((cond - joint_diff(&|s, v| s.sigma2 = v, a, b)).abs() < 1e-8);
        // Latent states at t = 1, an interior missing year, an interior observed year and t = T.
        for t in 0..4 {
            let (a, b) = (1.4, 2.6);
            let cond =
                m.log_latent_conditional(0, t, a, &base) - m.log_latent_conditional(0, t, b, &base);
            assert!(
                (cond - joint_diff(&|s, v| s.x[t] = v, a, b)).abs() < 1e-8,
                "t = {t}"
            );
        }
    }

    #[test]
    fn missing_year_drops_only_its_observation_factor() {
        let m = toy();
        let s = toy_state();
        let mut observed = m.clone();
        observed.data.counts[0][1] = Some(6);
        let with = observed.log_joint_site(0, &s).unwrap();
        let without = m.log_joint_site(0, &s).unwrap();
        assert!((with - without - log_mass_poisson(6, s.x[1].exp()).unwrap()).abs() < 1e-12);
        // Removing the count again restores the original joint exactly.
        observed.data.counts[0][1] = None;
        assert_eq!(observed.log_joint_site(0, &s).unwrap(), without);
    }

    #[test]
    fn flat_series_gives_drift_near_zero() {
        let counts = vec![vec![Some(50); 60]];
        let data = CountSeries::new(vec!["a".into()], 1950, counts).unwrap();
        let m = PoissonDynModel::new(data, PoissonDynHyper::default()).unwrap();
        let out = m
            .full_fit(&StageConfig {
                iterations: 6_000,
                burn_in: 1_000,
                ..Default::default()
            })
            .unwrap();
        let s = summarize(&out.samples).unwrap();
        assert!(s.get("phi_1").unwrap().mean.abs() < 0.01);
        let rate = out.diagnostics.acceptance_rates["lambda_1"];
        assert!((0.2..0.5).contains(&rate), "{rate}");
    }

    #[test]
    fn update_at_predictive_mode_accepts_often() {
        let truth = PoissonTruth {
            phi: vec![0.0],
            sigma2: vec![0.005],
            log_lambda1: vec![1.5],
            years: 30,
            missing: vec![],
        };
        let synth = synthetic_counts(&truth, &mut seeded(5)).unwrap();
        let hyper = PoissonDynHyper {
            mu1: 1.5,
            ..Default::default()
        };
        let m = PoissonDynModel::new(synth.stage_one(), hyper).unwrap();
        let cfg = StageConfig {
            iterations: 12_000,
            burn_in: 2_000,
            ..Default::default()
        };
        let stage_one = m.full_fit(&cfg).unwrap();
        // Mode of the predictive count: floor of the mean of λ_T when λ is near-constant.
        let lam = stage_one.samples.column("lambda_1_30").unwrap();
        let mean = lam.iter().sum::<f64>() / lam.len() as f64;
        let (out, _) =
            poisson_dyn_online_update(&stage_one.samples, 30, &[mean.floor() as u64], 2, &cfg)
                .unwrap();
        assert!(out.diagnostics.acceptance_rates["site_1"] > 0.5);
        assert_eq!(
            out.samples.names(),
            [
                "phi_1",
                "sigma2_1",
                "lambda_1_30",
                "lambda_1_31",
                "lambda_1_32"
            ]
        );
    }

    #[test]
    fn synthetic_record_has_gap_before_update_year() {
        let synth = synthetic_counts(&PoissonTruth::default(), &mut seeded(1)).unwrap();
        assert_eq!(synth.series.len(), 38);
        for c in &synth.series.counts {
            assert_eq!(c.iter().position(Option::is_none), Some(36));
            assert_eq!(c.iter().filter(|v| v.is_none()).count(), 1);
        }
        let gappy = PoissonTruth {
            missing: vec![2, 5],
            ..Default::default()
        };
        let synth = synthetic_counts(&gappy, &mut seeded(1)).unwrap();
        assert!(synth
            .series
            .counts
            .iter()
            .all(|c| c[2].is_none() && c[5].is_none() && c[4].is_some()));
        assert_eq!(synth.stage_one().len(), 36);
        assert_eq!(synth.new_counts().len(), 2);
    }
}
