//! `generate` and `fit`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;
use std::time::Instant;

use rand::Rng;
use serde::Serialize;
use serde_json::json;

use recursive_bayes::diagnostics::{summarize, PosteriorSummary};
use recursive_bayes::engine::{run_pprb, SampleMeta, StageOutput};
use recursive_bayes::models::beta_bernoulli::{split_consecutive, BetaBernoulliModel};
use recursive_bayes::models::geostat::{synthetic_geo, GeoData, GeoModel};
use recursive_bayes::models::hier_gaussian::{synthetic_hier, HierData, HierGaussianModel};
use recursive_bayes::models::poisson_dyn::{
    poisson_dyn_online_update, synthetic_counts, CountSeries, PoissonDynModel,
};
use recursive_bayes::rng::stream;
use recursive_bayes::{BetaParams, PartitionIndex, SampleMatrix};

use crate::config::{Assignment, Mode, ModelKind, RunConfig};
use crate::error::{CliError, CliResult};

/// Random streams reserved for data generation and partitioning, distinct
/// from the chains' streams.
const DATA_STREAM: u64 = 10;
const PARTITION_STREAM: u64 = 11;

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut f, value)?;
    std::io::Write::write_all(&mut f, b"\n")?;
    Ok(())
}

pub(crate) fn write_effective_config(cfg: &RunConfig, out: &Path) -> CliResult<()> {
    std::fs::write(out.join("effective_config.toml"), cfg.to_toml()?)?;
    Ok(())
}

/// Binary observations, one per row under a `y` header.
fn read_binary(path: &Path) -> CliResult<Vec<u8>> {
    let mut rdr = csv::Reader::from_path(path).map_err(recursive_bayes::Error::from)?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(recursive_bayes::Error::from)?;
        let v = rec.get(0).unwrap_or("").trim();
        match v {
            "0" => out.push(0),
            "1" => out.push(1),
            _ => {
                return Err(CliError::Data(format!(
                    "row {} of {}: expected 0 or 1, got {v:?}",
                    i + 1,
                    path.display()
                )))
            }
        }
    }
    Ok(out)
}

fn write_binary(path: &Path, y: &[u8]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(recursive_bayes::Error::from)?;
    w.write_record(["y"])
        .map_err(recursive_bayes::Error::from)?;
    for v in y {
        w.write_record([v.to_string()])
            .map_err(recursive_bayes::Error::from)?;
    }
    w.flush()?;
    Ok(())
}

enum Dataset {
    Binary(Vec<u8>),
    Grouped(HierData),
    Spatial(GeoData),
    Counts(CountSeries),
}

/// The synthetic dataset for `cfg` and its generating values.
fn synthesize(cfg: &RunConfig) -> CliResult<(Dataset, serde_json::Value)> {
    let mut rng = stream(cfg.stage.seed, DATA_STREAM);
    Ok(match cfg.model {
        ModelKind::BetaBernoulli => {
            let s = &cfg.beta_bernoulli;
            if !(0.0..=1.0).contains(&s.p) {
                return Err(CliError::Config(format!(
                    "beta_bernoulli.p must lie in [0, 1], got {}",
                    s.p
                )));
            }
            let y = (0..s.n)
                .map(|_| u8::from(rng.random::<f64>() < s.p))
                .collect();
            (Dataset::Binary(y), json!({ "p": s.p, "n": s.n }))
        }
        ModelKind::HierGaussian => {
            let (data, means) = synthetic_hier(&cfg.hier.truth, &mut rng)?;
            (
                Dataset::Grouped(data),
                json!({ "truth": cfg.hier.truth, "group_means": means }),
            )
        }
        ModelKind::Geostat => {
            let mut data = synthetic_geo(cfg.geostat.n, &cfg.geostat.truth, &mut rng)?;
            data.blocks = Some(random_partition(data.len(), cfg)?.labels());
            let values: BTreeMap<String, f64> = cfg.geostat.truth.values().into_iter().collect();
            (Dataset::Spatial(data), json!({ "truth": values }))
        }
        ModelKind::PoissonDyn => {
            let synth = synthetic_counts(&cfg.poisson.truth, &mut rng)?;
            let missing = synth.series.counts[0].iter().position(Option::is_none);
            let truth = json!({
                "truth": cfg.poisson.truth,
                "log_lambda": synth.log_lambda,
                "designated_missing_year": missing.map(|t| synth.series.first_year + t as i64),
            });
            (Dataset::Counts(synth.series), truth)
        }
    })
}

fn load(cfg: &RunConfig) -> CliResult<Dataset> {
    let Some(path) = &cfg.data else {
        return Ok(synthesize(cfg)?.0);
    };
    let file = || {
        File::open(path).map_err(|e| CliError::Data(format!("cannot open {}: {e}", path.display())))
    };
    Ok(match cfg.model {
        ModelKind::BetaBernoulli => Dataset::Binary(read_binary(path)?),
        ModelKind::HierGaussian => Dataset::Grouped(HierData::read_csv(file()?)?),
        ModelKind::Geostat => Dataset::Spatial(GeoData::read_csv(file()?)?),
        ModelKind::PoissonDyn => Dataset::Counts(CountSeries::read_csv(file()?)?),
    })
}

fn random_partition(n: usize, cfg: &RunConfig) -> CliResult<PartitionIndex> {
    Ok(PartitionIndex::random_equal(
        n,
        cfg.partition.blocks,
        &mut stream(cfg.stage.seed, PARTITION_STREAM),
    )?)
}

pub fn generate(cfg: &RunConfig, out: &Path) -> CliResult<()> {
    cfg.validate()?;
    std::fs::create_dir_all(out)?;
    let (data, truth) = synthesize(cfg)?;
    let path = out.join("data.csv");
    let create = || -> CliResult<BufWriter<File>> { Ok(BufWriter::new(File::create(&path)?)) };
    match &data {
        Dataset::Binary(y) => write_binary(&path, y)?,
        Dataset::Grouped(d) => d.write_csv(create()?)?,
        Dataset::Spatial(d) => d.write_csv(create()?)?,
        Dataset::Counts(d) => d.write_csv(create()?)?,
    }
    write_json(&out.join("truth.json"), &truth)?;
    write_effective_config(cfg, out)?;
    log::info!("wrote synthetic {:?} data to {}", cfg.model, path.display());
    Ok(())
}

/// One saved sample: file stem, stage output and the pool origin of each
/// column's values, when they were resampled from an earlier stage.
struct Saved {
    name: String,
    output: StageOutput,
    origins: Vec<(String, Vec<usize>)>,
}

impl Saved {
    fn plain(name: impl Into<String>, output: StageOutput) -> Self {
        Self {
            name: name.into(),
            output,
            origins: Vec::new(),
        }
    }

    fn pooled(name: impl Into<String>, output: StageOutput) -> Self {
        let origins = vec![("origin".to_string(), output.origin.clone())];
        Self {
            name: name.into(),
            output,
            origins,
        }
    }
}

#[derive(Serialize)]
struct StageReport {
    name: String,
    stage: usize,
    draws: usize,
    acceptance_rates: BTreeMap<String, f64>,
    timings_ms: BTreeMap<String, f64>,
    warnings: Vec<String>,
    summary: PosteriorSummary,
}

#[derive(Serialize)]
struct ExactPosterior {
    stage: usize,
    a: f64,
    b: f64,
    mean: f64,
    variance: f64,
}

#[derive(Serialize)]
struct FitReport {
    model: ModelKind,
    mode: Mode,
    seed: u64,
    workers: usize,
    total_ms: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    prefetch_ms: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    exact_posteriors: Vec<ExactPosterior>,
    stages: Vec<StageReport>,
}

pub(crate) fn write_origins(path: &Path, origins: &[(String, Vec<usize>)]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(recursive_bayes::Error::from)?;
    w.write_record(origins.iter().map(|(n, _)| n.as_str()))
        .map_err(recursive_bayes::Error::from)?;
    for i in 0..origins[0].1.len() {
        w.write_record(origins.iter().map(|(_, o)| o[i].to_string()))
            .map_err(recursive_bayes::Error::from)?;
    }
    w.flush()?;
    Ok(())
}

fn save(out: &Path, s: &Saved, seed: u64) -> CliResult<()> {
    let d = &s.output.diagnostics;
    let meta = SampleMeta {
        stage: s.output.samples.stage(),
        k: s.output.samples.nrows(),
        seed,
        acceptance_rates: d.acceptance_rates.clone(),
        timings_ms: d.timings_ms.clone(),
    };
    s.output.samples.save(&out.join(&s.name), &meta)?;
    summarize(&s.output.samples)?.write_csv(BufWriter::new(File::create(
        out.join(format!("{}_summary.csv", s.name)),
    )?))?;
    if !s.origins.is_empty() {
        write_origins(&out.join(format!("{}_origin.csv", s.name)), &s.origins)?;
    }
    Ok(())
}

fn partition_for_geo(data: &GeoData, cfg: &RunConfig) -> CliResult<PartitionIndex> {
    match cfg.partition.assignment {
        Assignment::Random => random_partition(data.len(), cfg),
        Assignment::Provided => {
            let labels = data.blocks.as_ref().ok_or_else(|| {
                CliError::Data("provided assignment needs a block column in the data".into())
            })?;
            Ok(PartitionIndex::from_labels(labels)?)
        }
    }
}

fn binary_partitions(y: &[u8], cfg: &RunConfig) -> CliResult<Vec<Vec<u8>>> {
    match cfg.partition.assignment {
        Assignment::Provided => Ok(split_consecutive(y, cfg.partition.blocks)?),
        Assignment::Random => {
            let p = random_partition(y.len(), cfg)?;
            Ok(p.blocks()
                .iter()
                .map(|b| b.iter().map(|&i| y[i]).collect())
                .collect())
        }
    }
}

pub fn fit(cfg: &RunConfig, out: &Path) -> CliResult<()> {
    cfg.validate()?;
    std::fs::create_dir_all(out)?;
    write_effective_config(cfg, out)?;
    let data = load(cfg)?;
    let sc = &cfg.stage;
    let start = Instant::now();
    let mut saved = Vec::new();
    let mut prefetch_ms = None;
    let mut exact = Vec::new();

    match (data, cfg.mode) {
        (Dataset::Binary(y), mode) => {
            let prior = BetaParams::new(cfg.beta_bernoulli.prior_a, cfg.beta_bernoulli.prior_b)
                .map_err(|e| CliError::Config(e.to_string()))?;
            let model = BetaBernoulliModel::new(prior, binary_partitions(&y, cfg)?)?;
            match mode {
                Mode::Full => saved.push(Saved::plain("full", model.full_fit(sc)?)),
                Mode::PriorRb => {
                    for (j, p) in model.recursive_posteriors()?.into_iter().enumerate() {
                        let n = p.a + p.b;
                        exact.push(ExactPosterior {
                            stage: j + 1,
                            a: p.a,
                            b: p.b,
                            mean: p.a / n,
                            variance: p.a * p.b / (n * n * (n + 1.0)),
                        });
                    }
                }
                _ => {
                    let run = run_pprb(&model, sc)?;
                    prefetch_ms = Some(run.prefetch_ms);
                    for (j, s) in run.stages.into_iter().enumerate() {
                        let name = format!("stage{}", j + 1);
                        saved.push(if j == 0 {
                            Saved::plain(name, s)
                        } else {
                            Saved::pooled(name, s)
                        });
                    }
                }
            }
        }
        (Dataset::Grouped(d), mode) => {
            let model = HierGaussianModel::new(d, cfg.hier.hyper, cfg.hier.transient)?;
            if mode == Mode::Full {
                saved.push(Saved::plain("full", model.full_fit(sc)?));
            } else {
                let rb = model.proposal_rb(sc)?;
                let mut origins = Vec::new();
                for (k, o) in rb.group_origin.iter().enumerate() {
                    origins.push((format!("mu_{}", k + 1), o.clone()));
                    origins.push((format!("sigma2_{}", k + 1), o.clone()));
                }
                saved.push(Saved::plain("stage1", rb.stage_one));
                saved.push(Saved {
                    name: "stage2".into(),
                    output: rb.stage_two,
                    origins,
                });
            }
        }
        (Dataset::Spatial(d), mode) => {
            let partition = if mode == Mode::Full {
                PartitionIndex::whole(d.len())
            } else {
                partition_for_geo(&d, cfg)?
            };
            let model = GeoModel::new(d, cfg.geostat.priors.clone(), partition)?
                .with_tuning(cfg.geostat.tuning.clone());
            if mode == Mode::Full {
                saved.push(Saved::plain("full", model.full_fit(sc)?));
            } else {
                let run = run_pprb(&model, sc)?;
                prefetch_ms = Some(run.prefetch_ms);
                for (j, s) in run.stages.into_iter().enumerate() {
                    let name = format!("stage{}", j + 1);
                    saved.push(if j == 0 {
                        Saved::plain(name, s)
                    } else {
                        Saved::pooled(name, s)
                    });
                }
            }
        }
        (Dataset::Counts(series), mode) => {
            if mode == Mode::Full {
                let model = PoissonDynModel::new(series, cfg.poisson.hyper)?;
                saved.push(Saved::plain("full", model.full_fit(sc)?));
            } else {
                let h = cfg.poisson.horizon;
                if series.len() <= h + 1 {
                    return Err(CliError::Data(format!(
                        "{} years leave nothing before a horizon of {h}",
                        series.len()
                    )));
                }
                let years = series.len() - h;
                let new_counts = series
                    .counts
                    .iter()
                    .zip(&series.sites)
                    .map(|(c, s)| {
                        c[series.len() - 1].ok_or_else(|| {
                            CliError::Data(format!("site {s} has no count in the final year"))
                        })
                    })
                    .collect::<CliResult<Vec<u64>>>()?;
                let model = PoissonDynModel::new(series.truncated(years), cfg.poisson.hyper)?;
                let s1 = model.full_fit(sc)?;
                let (combined, per_site) =
                    poisson_dyn_online_update(&s1.samples, years, &new_counts, h, sc)?;
                let mut origins = Vec::new();
                for site in &per_site {
                    for name in site.samples.names() {
                        origins.push((name.clone(), site.origin.clone()));
                    }
                }
                saved.push(Saved::plain("stage1", s1));
                saved.push(Saved {
                    name: "stage2".into(),
                    output: combined,
                    origins,
                });
            }
        }
    }
    let total_ms = start.elapsed().as_secs_f64() * 1e3;

    let mut stages = Vec::new();
    for s in &saved {
        save(out, s, sc.seed)?;
        let d = &s.output.diagnostics;
        stages.push(StageReport {
            name: s.name.clone(),
            stage: s.output.samples.stage(),
            draws: s.output.samples.nrows(),
            acceptance_rates: d.acceptance_rates.clone(),
            timings_ms: d.timings_ms.clone(),
            warnings: d.warnings.clone(),
            summary: summarize(&s.output.samples)?,
        });
    }
    if let Some(last) = saved.last() {
        save(
            out,
            &Saved {
                name: "posterior".into(),
                output: last.output.clone(),
                origins: last.origins.clone(),
            },
            sc.seed,
        )?;
    }
    let report = FitReport {
        model: cfg.model,
        mode: cfg.mode,
        seed: sc.seed,
        workers: sc.workers,
        total_ms,
        prefetch_ms,
        exact_posteriors: exact,
        stages,
    };
    write_json(&out.join("report.json"), &report)?;
    log::info!(
        "{:?} {:?} fit finished in {total_ms:.0} ms; outputs in {}",
        cfg.model,
        cfg.mode,
        out.display()
    );
    Ok(())
}

/// Reads `<name>_origin.csv` if present.
pub(crate) fn read_origins(path: &Path) -> CliResult<Option<Vec<(String, Vec<usize>)>>> {
    if !path.exists() {
        return Ok(None);
    }
    let mut rdr = csv::Reader::from_path(path).map_err(recursive_bayes::Error::from)?;
    let names: Vec<String> = rdr
        .headers()
        .map_err(recursive_bayes::Error::from)?
        .iter()
        .map(str::to_string)
        .collect();
    let mut cols = vec![Vec::new(); names.len()];
    for rec in rdr.records() {
        let rec = rec.map_err(recursive_bayes::Error::from)?;
        for (c, v) in cols.iter_mut().zip(rec.iter()) {
            c.push(v.parse().map_err(|_| {
                CliError::Data(format!("bad origin index {v:?} in {}", path.display()))
            })?);
        }
    }
    Ok(Some(names.into_iter().zip(cols).collect()))
}

pub(crate) fn load_run(dir: &Path) -> CliResult<(SampleMatrix, Option<Vec<(String, Vec<usize>)>>)> {
    let (samples, _) = SampleMatrix::load(&dir.join("posterior"))?;
    let origins = read_origins(&dir.join("posterior_origin.csv"))?;
    Ok((samples, origins))
}
