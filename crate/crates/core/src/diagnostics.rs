//! Posterior summaries and full-versus-recursive comparison metrics.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::engine::SampleMatrix;
use crate::{Error, Result};

/// Minimum number of draws accepted by [`summarize`].
pub const MIN_DRAWS: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q50: f64,
    pub q975: f64,
    pub ess: f64,
    pub mcse: f64,
    /// Set when the column is constant; ESS is then reported as `K`.
    pub constant: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub draws: usize,
    pub parameters: Vec<ParameterSummary>,
}

impl PosteriorSummary {
    pub fn get(&self, name: &str) -> Option<&ParameterSummary> {
        self.parameters.iter().find(|p| p.name == name)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        write_records(writer, &self.parameters)
    }
}

/// Type-7 quantile (linear interpolation between order statistics) of sorted
/// data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty data");
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample standard deviation with the `n - 1` denominator.
pub fn sd(x: &[f64]) -> f64 {
    let m = mean(x);
    (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() as f64 - 1.0).max(1.0)).sqrt()
}

/// Effective sample size by Geyer's initial monotone positive sequence.
/// Returns `None` for a constant series. The result is clamped to `(0, n]`.
pub fn effective_sample_size(x: &[f64]) -> Option<f64> {
    let n = x.len();
    let m = mean(x);
    let centred: Vec<f64> = x.iter().map(|v| v - m).collect();
    let gamma0 = centred.iter().map(|v| v * v).sum::<f64>() / n as f64;
    if !(gamma0 > 0.0) {
        return None;
    }
    let rho = |lag: usize| -> f64 {
        let s: f64 = centred[..n - lag]
            .iter()
            .zip(&centred[lag..])
            .map(|(a, b)| a * b)
            .sum();
        s / n as f64 / gamma0
    };
    let mut tau = -1.0;
    let mut prev_pair = f64::INFINITY;
    let mut lag = 0;
    while lag + 1 < n {
        let pair = rho(lag) + rho(lag + 1);
        if pair <= 0.0 {
            break;
        }
        let pair = pair.min(prev_pair);
        tau += 2.0 * pair;
        prev_pair = pair;
        lag += 2;
    }
    let tau = tau.max(1.0 / n as f64);
    Some((n as f64 / tau).min(n as f64))
}

/// ESS of a sample resampled from an earlier pool. Draws are grouped by the
/// pool row they came from before the autocorrelation is measured, so repeats
/// of one pool row count as dependent even when the chain visits them far
/// apart. The result is the smaller of this and the ordinary chain ESS.
pub fn effective_sample_size_by_origin(x: &[f64], origin: &[usize]) -> Option<f64> {
    assert_eq!(
        x.len(),
        origin.len(),
        "origin length differs from sample length"
    );
    let chain = effective_sample_size(x)?;
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by_key(|&i| origin[i]);
    let grouped: Vec<f64> = order.iter().map(|&i| x[i]).collect();
    Some(effective_sample_size(&grouped).map_or(chain, |e| e.min(chain)))
}

fn summarize_column(name: &str, x: &[f64]) -> ParameterSummary {
    summarize_column_with(name, x, None)
}

fn summarize_column_with(name: &str, x: &[f64], origin: Option<&[usize]>) -> ParameterSummary {
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    let k = x.len() as f64;
    let ess = match origin {
        Some(o) => effective_sample_size_by_origin(x, o),
        None => effective_sample_size(x),
    };
    let (ess, constant) = match ess {
        Some(e) => (e, false),
        None => (k, true),
    };
    let sd = if constant { 0.0 } else { sd(x) };
    ParameterSummary {
        name: name.to_string(),
        mean: mean(x),
        sd,
        q025: quantile_sorted(&sorted, 0.025),
        q50: quantile_sorted(&sorted, 0.5),
        q975: quantile_sorted(&sorted, 0.975),
        ess,
        mcse: sd / ess.sqrt(),
        constant,
    }
}

pub fn summarize(s: &SampleMatrix) -> Result<PosteriorSummary> {
    if s.nrows() < MIN_DRAWS {
        return Err(Error::Data(format!(
            "need at least {MIN_DRAWS} draws to summarize, got {}",
            s.nrows()
        )));
    }
    let parameters = s
        .names()
        .iter()
        .enumerate()
        .map(|(j, name)| summarize_column(name, &s.column_at(j)))
        .collect();
    Ok(PosteriorSummary {
        draws: s.nrows(),
        parameters,
    })
}

/// Two-sample Kolmogorov-Smirnov statistic `sup |F_a - F_b|`.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Centralized agreement thresholds for full-versus-recursive checks.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchThresholds {
    /// Maximum `|mean_a - mean_b|` in joint Monte Carlo standard errors.
    pub mean_se: f64,
    /// Maximum relative difference of the 2.5% and 97.5% quantiles.
    pub ci_relative: f64,
    pub ks: f64,
}

impl Default for MatchThresholds {
    fn default() -> Self {
        Self {
            mean_se: 3.0,
            ci_relative: 0.05,
            ks: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterComparison {
    pub name: String,
    pub mean_a: f64,
    pub mean_b: f64,
    /// `(mean_b - mean_a) / sqrt(mcse_a² + mcse_b²)`.
    pub mean_diff_se: f64,
    pub joint_mcse: f64,
    pub q025_relative: f64,
    pub q975_relative: f64,
    pub ks: f64,
    pub ess_a: f64,
    pub ess_b: f64,
}

impl ParameterComparison {
    pub fn mean_matches(&self, t: &MatchThresholds) -> bool {
        self.mean_diff_se.abs() < t.mean_se
    }

    pub fn ci_matches(&self, t: &MatchThresholds) -> bool {
        self.q025_relative <= t.ci_relative && self.q975_relative <= t.ci_relative
    }

    pub fn ks_matches(&self, t: &MatchThresholds) -> bool {
        self.ks < t.ks
    }

    pub fn passes(&self, t: &MatchThresholds) -> bool {
        self.mean_matches(t) && self.ci_matches(t) && self.ks_matches(t)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub parameters: Vec<ParameterComparison>,
    pub timings_ms: BTreeMap<String, f64>,
}

impl ComparisonReport {
    pub fn get(&self, name: &str) -> Option<&ParameterComparison> {
        self.parameters.iter().find(|p| p.name == name)
    }

    pub fn passes(&self, t: &MatchThresholds) -> bool {
        self.parameters.iter().all(|p| p.passes(t))
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        write_records(writer, &self.parameters)
    }
}

fn relative_difference(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

fn compare_columns(
    name: &str,
    a: &[f64],
    origin_a: Option<&[usize]>,
    b: &[f64],
    origin_b: Option<&[usize]>,
) -> ParameterComparison {
    let (sa, sb) = (
        summarize_column_with(name, a, origin_a),
        summarize_column_with(name, b, origin_b),
    );
    let joint = (sa.mcse.powi(2) + sb.mcse.powi(2)).sqrt();
    let diff = sb.mean - sa.mean;
    let mean_diff_se = if joint > 0.0 {
        diff / joint
    } else if diff == 0.0 {
        0.0
    } else {
        f64::MAX.copysign(diff)
    };
    ParameterComparison {
        name: name.to_string(),
        mean_a: sa.mean,
        mean_b: sb.mean,
        mean_diff_se,
        joint_mcse: joint,
        q025_relative: relative_difference(sa.q025, sb.q025),
        q975_relative: relative_difference(sa.q975, sb.q975),
        ks: ks_statistic(a, b),
        ess_a: sa.ess,
        ess_b: sb.ess,
    }
}

/// Per-parameter comparison of two samples over the same parameter names
/// (column order may differ).
pub fn compare(a: &SampleMatrix, b: &SampleMatrix) -> Result<ComparisonReport> {
    compare_with_origins(a, None, b, None)
}

/// As [`compare`], with `b` a pool-resampled sample whose rows came from the
/// earlier-stage rows listed in `origin_b`. Standard errors for `b` use
/// [`effective_sample_size_by_origin`].
pub fn compare_pooled(
    a: &SampleMatrix,
    b: &SampleMatrix,
    origin_b: &[usize],
) -> Result<ComparisonReport> {
    compare_with_origins(a, None, b, Some(origin_b))
}

/// General form of [`compare`]: either sample may carry pool origins.
pub fn compare_with_origins(
    a: &SampleMatrix,
    origin_a: Option<&[usize]>,
    b: &SampleMatrix,
    origin_b: Option<&[usize]>,
) -> Result<ComparisonReport> {
    for (s, o) in [(a, origin_a), (b, origin_b)] {
        if let Some(o) = o {
            if o.len() != s.nrows() {
                return Err(Error::Config(format!(
                    "{} origins for {} draws",
                    o.len(),
                    s.nrows()
                )));
            }
        }
    }
    let mut na: Vec<&String> = a.names().iter().collect();
    let mut nb: Vec<&String> = b.names().iter().collect();
    na.sort();
    nb.sort();
    if na != nb {
        return Err(Error::Config(format!(
            "parameter sets differ: {:?} vs {:?}",
            a.names(),
            b.names()
        )));
    }
    if a.nrows() < MIN_DRAWS || b.nrows() < MIN_DRAWS {
        return Err(Error::Data(format!(
            "need at least {MIN_DRAWS} draws per sample to compare"
        )));
    }
    let parameters = a
        .names()
        .iter()
        .map(|name| {
            Ok(compare_columns(
                name,
                &a.column(name)?,
                origin_a,
                &b.column(name)?,
                origin_b,
            ))
        })
        .collect::<Result<_>>()?;
    Ok(ComparisonReport {
        parameters,
        timings_ms: BTreeMap::new(),
    })
}

/// Compares only the named columns.
pub fn compare_columns_named<S: AsRef<str>>(
    a: &SampleMatrix,
    b: &SampleMatrix,
    names: &[S],
) -> Result<ComparisonReport> {
    compare(&a.select_columns(names)?, &b.select_columns(names)?)
}

fn write_records<W: Write, T: Serialize>(writer: W, records: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
