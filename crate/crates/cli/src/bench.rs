use std::path::Path;
use std::rc::Rc;
use std::time::{Duration, Instant};

use serde::Serialize;

use recursive_bayes::engine::run_pprb;
use recursive_bayes::models::geostat::{synthetic_geo, GeoModel};
use recursive_bayes::models::poisson_dyn::{
    site_online_update, synthetic_counts, PoissonDynModel, PoissonTruth,
};
use recursive_bayes::rng::stream;
use recursive_bayes::PartitionIndex;

use crate::commands::{write_effective_config, write_json};
use crate::config::{ModelKind, RunConfig};
use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, Serialize)]
pub struct BenchRow {
    pub model: ModelKind,
    /// Observations or years.
    pub size: usize,
    pub full_ms: f64,
    pub recursive_ms: f64,
    pub ratio: f64,
}

type Job<'a> = Box<dyn Fn() -> CliResult<()> + 'a>;

/// One ladder rung: a full fit and its recursive counterpart, ready to time.
struct Rung<'a> {
    size: usize,
    full: Job<'a>,
    recursive: Job<'a>,
}

fn timed(job: &Job<'_>) -> CliResult<Duration> {
    let s = Instant::now();
    job()?;
    Ok(s.elapsed())
}

fn median(mut v: Vec<Duration>) -> Duration {
    v.sort();
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2
    }
}

/// Median time per rung over `repeats` rounds. Every round visits every
/// rung, so slow drift in machine speed hits all rungs alike. All full-fit
/// rounds run before the recursive rounds, so recursive timings are not
/// disturbed by the much larger full fits.
fn time_rungs(rungs: &[Rung<'_>], repeats: usize) -> CliResult<Vec<(Duration, Duration)>> {
    let repeats = repeats.max(1);
    let mut full = vec![Vec::with_capacity(repeats); rungs.len()];
    let mut rec = full.clone();
    for _ in 0..repeats {
        for (rung, t) in rungs.iter().zip(full.iter_mut()) {
            t.push(timed(&rung.full)?);
        }
    }
    for _ in 0..repeats {
        for (rung, t) in rungs.iter().zip(rec.iter_mut()) {
            t.push(timed(&rung.recursive)?);
        }
    }
    Ok(full
        .into_iter()
        .map(median)
        .zip(rec.into_iter().map(median))
        .collect())
}

/// Times full fits against recursive fits over `cfg.bench.sizes` and writes
/// `bench.csv` and `bench.json`. Geostatistical rungs compare a full fit with
/// the whole recursive pipeline; count-series rungs compare a full refit with
/// the online update of the first site.
pub fn bench(cfg: &RunConfig, out: &Path) -> CliResult<Vec<BenchRow>> {
    cfg.validate()?;
    if cfg.bench.sizes.is_empty() {
        return Err(CliError::Config("bench.sizes is empty".into()));
    }
    std::fs::create_dir_all(out)?;
    write_effective_config(cfg, out)?;
    let sc = &cfg.stage;
    let mut rungs = Vec::new();
    for &size in &cfg.bench.sizes {
        let rung = match cfg.model {
            ModelKind::Geostat => {
                let data = synthetic_geo(size, &cfg.geostat.truth, &mut stream(sc.seed, 10))?;
                let partition = PartitionIndex::random_equal(
                    size,
                    cfg.partition.blocks,
                    &mut stream(sc.seed, 11),
                )?;
                let model = Rc::new(
                    GeoModel::new(data, cfg.geostat.priors.clone(), partition)?
                        .with_tuning(cfg.geostat.tuning.clone()),
                );
                let m = Rc::clone(&model);
                Rung {
                    size,
                    full: Box::new(move || Ok(m.full_fit(sc).map(drop)?)),
                    recursive: Box::new(move || Ok(run_pprb(model.as_ref(), sc).map(drop)?)),
                }
            }
            ModelKind::PoissonDyn => {
                let truth = PoissonTruth {
                    years: size,
                    ..cfg.poisson.truth.clone()
                };
                let synth = synthetic_counts(&truth, &mut stream(sc.seed, 10))?;
                let refit = PoissonDynModel::new(synth.series.clone(), cfg.poisson.hyper)?;
                let s1 =
                    PoissonDynModel::new(synth.stage_one(), cfg.poisson.hyper)?.full_fit(sc)?;
                let y = synth.new_counts()[0];
                Rung {
                    size,
                    full: Box::new(move || Ok(refit.full_fit(sc).map(drop)?)),
                    recursive: Box::new(move || {
                        Ok(site_online_update(&s1.samples, size, 0, y, 2, sc).map(drop)?)
                    }),
                }
            }
            other => {
                return Err(CliError::Config(format!(
                    "bench supports geostat and poisson-dyn, not {other:?}"
                )))
            }
        };
        rungs.push(rung);
    }
    let mut rows = Vec::new();
    for (rung, (full, rec)) in rungs.iter().zip(time_rungs(&rungs, cfg.bench.repeats)?) {
        let (full_ms, recursive_ms) = (full.as_secs_f64() * 1e3, rec.as_secs_f64() * 1e3);
        log::info!(
            "size {}: full {full_ms:.1} ms, recursive {recursive_ms:.1} ms",
            rung.size
        );
        rows.push(BenchRow {
            model: cfg.model,
            size: rung.size,
            full_ms,
            recursive_ms,
            ratio: recursive_ms / full_ms,
        });
    }
    let mut w =
        csv::Writer::from_path(out.join("bench.csv")).map_err(recursive_bayes::Error::from)?;
    for r in &rows {
        w.serialize(r).map_err(recursive_bayes::Error::from)?;
    }
    w.flush()?;
    write_json(&out.join("bench.json"), &rows)?;
    Ok(rows)
}
