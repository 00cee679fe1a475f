use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::kernel::{initial_state, pprb_mh_step};
use super::pool::prefetch_rows;
use super::{ProposalPool, ResampleStrategy, SampleMatrix};
use crate::rng;
use crate::{Error, Result};

/// Chain settings shared by all stages of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StageConfig {
    /// Iterations of the first-stage (or full-data) chain, burn-in included.
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    /// Threads used to prefetch log-likelihoods.
    pub workers: usize,
    /// Acceptance rate targeted by adaptive random-walk updates during burn-in.
    pub target_acceptance: f64,
    pub strategy: ResampleStrategy,
    /// Chain length for pool-based stages; `None` uses the pool size.
    pub pool_iterations: Option<usize>,
    /// Burn-in for pool-based stages. Zero by default because the chain starts
    /// from a draw of the transient posterior.
    pub pool_burn_in: usize,
}

impl Default for StageConfig {
    fn default() -> Self {
        Self {
            iterations: 20_000,
            burn_in: 2_000,
            thin: 1,
            seed: 1,
            workers: 1,
            target_acceptance: 0.3,
            strategy: ResampleStrategy::WithReplacement,
            pool_iterations: None,
            pool_burn_in: 0,
        }
    }
}

impl StageConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be positive".into()));
        }
        if self.burn_in >= self.iterations {
            return Err(Error::Config(format!(
                "burn-in {} must be smaller than iterations {}",
                self.burn_in, self.iterations
            )));
        }
        if self.thin == 0 || self.workers == 0 {
            return Err(Error::Config("thin and workers must be at least 1".into()));
        }
        if !(self.target_acceptance > 0.0 && self.target_acceptance < 1.0) {
            return Err(Error::Config("target acceptance must lie in (0, 1)".into()));
        }
        if let Some(n) = self.pool_iterations {
            if n <= self.pool_burn_in {
                return Err(Error::Config(
                    "pool iterations must exceed pool burn-in".into(),
                ));
            }
        }
        Ok(())
    }

    /// Number of draws retained from a chain of `total` iterations.
    pub fn retained(total: usize, burn_in: usize, thin: usize) -> usize {
        (total - burn_in).div_ceil(thin)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageDiagnostics {
    pub stage: usize,
    /// Post-burn-in acceptance rate per update block.
    pub acceptance_rates: BTreeMap<String, f64>,
    pub timings_ms: BTreeMap<String, f64>,
    pub warnings: Vec<String>,
}

impl StageDiagnostics {
    pub fn new(stage: usize) -> Self {
        Self {
            stage,
            ..Default::default()
        }
    }
}

/// Draws from one stage plus, for each draw, the index of the first-stage row
/// it originated from.
#[derive(Clone, Debug)]
pub struct StageOutput {
    pub samples: SampleMatrix,
    pub origin: Vec<usize>,
    pub diagnostics: StageDiagnostics,
}

/// Hooks a model exposes to the recursion engine.
pub trait StagedModel: Sync {
    fn parameter_names(&self) -> Vec<String>;

    /// Number of data partitions `J`.
    fn stage_count(&self) -> usize;

    /// Ordinary MCMC fit to partition 1.
    fn fit_first_stage(&self, cfg: &StageConfig) -> Result<StageOutput>;

    /// `log[y_j | θ, y_{1:(j-1)}]` for `j = 2..=J` at parameter row `theta`.
    fn conditional_logliks(&self, theta: &[f64]) -> Result<Vec<f64>>;

    /// Conditional log-likelihood table over every row of `samples`; row `k`
    /// of the result holds the `J - 1` values for draw `k`. Models with shared
    /// per-row work may override this to batch it.
    fn prefetch(&self, samples: &SampleMatrix, workers: usize) -> Result<Vec<Vec<f64>>> {
        prefetch_rows(samples, workers, |row| self.conditional_logliks(row))
    }
}

pub enum StageInput {
    /// Fit partition 1 from its raw data.
    Raw,
    /// Run the pool-indexed chain over a pool with precomputed log-likelihoods.
    Pool(ProposalPool),
}

/// Runs one stage. For a pool input the chain starts at a random pool row and
/// performs `pool_iterations` (default: pool size) pool-indexed M-H steps.
pub fn run_stage<M: StagedModel + ?Sized>(
    model: &M,
    input: StageInput,
    stage: usize,
    cfg: &StageConfig,
) -> Result<StageOutput> {
    cfg.validate()?;
    match input {
        StageInput::Raw => {
            let start = Instant::now();
            let mut out = model.fit_first_stage(cfg)?;
            out.diagnostics.stage = stage;
            out.diagnostics
                .timings_ms
                .insert("chain".into(), start.elapsed().as_secs_f64() * 1e3);
            out.samples = out.samples.with_stage(stage);
            Ok(out)
        }
        StageInput::Pool(pool) => run_pool_chain(pool, stage, cfg),
    }
}

/// Pool-indexed chain; exposed separately because it needs no model hooks.
pub fn run_pool_chain(
    mut pool: ProposalPool,
    stage: usize,
    cfg: &StageConfig,
) -> Result<StageOutput> {
    let start = Instant::now();
    let total = cfg.pool_iterations.unwrap_or(pool.len());
    let burn_in = cfg.pool_burn_in.min(total.saturating_sub(1));
    let mut rng = rng::stream(cfg.seed, 1_000 + stage as u64);
    let mut state = initial_state(&pool, &mut rng)?;
    let mut kept = Vec::with_capacity(StageConfig::retained(total, burn_in, cfg.thin));
    let mut accepted = 0usize;
    for it in 0..total {
        let acc = pprb_mh_step(&mut state, &mut pool, &mut rng)?;
        if it >= burn_in {
            accepted += usize::from(acc);
            if (it - burn_in) % cfg.thin == 0 {
                kept.push(state.pool_index);
            }
        }
    }
    let samples = pool.samples().select_rows(&kept)?.with_stage(stage);
    let origin = kept.iter().map(|&i| pool.origin()[i]).collect();
    let mut diagnostics = StageDiagnostics::new(stage);
    diagnostics
        .acceptance_rates
        .insert("pool".into(), accepted as f64 / (total - burn_in) as f64);
    diagnostics
        .timings_ms
        .insert("chain".into(), start.elapsed().as_secs_f64() * 1e3);
    Ok(StageOutput {
        samples,
        origin,
        diagnostics,
    })
}

/// Result of a full prior-proposal-recursive pipeline.
#[derive(Clone, Debug)]
pub struct PipelineOutput {
    /// One entry per stage, stage 1 first.
    pub stages: Vec<StageOutput>,
    pub prefetch_ms: f64,
}

impl PipelineOutput {
    pub fn last(&self) -> &StageOutput {
        self.stages.last().expect("pipeline has at least one stage")
    }
}

/// Stage 1 on partition 1, one parallel prefetch of every conditional
/// log-likelihood over the stage-1 draws, then stages `2..=J`, each resampling
/// the previous stage's output.
pub fn run_pprb<M: StagedModel + ?Sized>(model: &M, cfg: &StageConfig) -> Result<PipelineOutput> {
    cfg.validate()?;
    let j = model.stage_count();
    if j == 0 {
        return Err(Error::Config("model has no partitions".into()));
    }
    let first = run_stage(model, StageInput::Raw, 1, cfg)?;
    if j == 1 {
        return Ok(PipelineOutput {
            stages: vec![first],
            prefetch_ms: 0.0,
        });
    }
    let start = Instant::now();
    let table = model.prefetch(&first.samples, cfg.workers)?;
    let prefetch_ms = start.elapsed().as_secs_f64() * 1e3;
    if table.len() != first.samples.nrows() || table.iter().any(|r| r.len() != j - 1) {
        return Err(Error::Data("prefetched table has the wrong shape".into()));
    }
    let mut stages = vec![first];
    for stage in 2..=j {
        let prev = stages.last().expect("non-empty");
        let loglik = prev.origin.iter().map(|&o| table[o][stage - 2]).collect();
        let pool = ProposalPool::new(prev.samples.clone(), cfg.strategy)?
            .with_origin(prev.origin.clone())?
            .with_loglik(loglik)?;
        let out = run_stage(model, StageInput::Pool(pool), stage, cfg)?;
        stages.push(out);
    }
    Ok(PipelineOutput {
        stages,
        prefetch_ms,
    })
}
