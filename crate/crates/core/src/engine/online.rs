//! Online assimilation of a newly arrived observation.
//!
//! Each first-stage draw is extended with forward-simulated latent states tied
//! to that draw's parameters. The extended draws are exact samples of the
//! first-stage predictive, so a pool-indexed chain whose ratio contains only
//! the new datum's likelihood targets the updated posterior.

use std::time::Instant;

use super::kernel::{initial_state, pprb_mh_step};
use super::pool::prefetch_rows;
use super::{ProposalPool, SampleMatrix, StageConfig, StageDiagnostics, StageOutput};
use crate::rng::{self, RbRng};
use crate::{Error, Result};

/// Model hook for [`online_update`].
pub trait PredictiveExtension: Sync {
    /// Pool columns kept in the updated sample.
    fn carried_columns(&self) -> Vec<String>;

    /// Names of the forward-simulated latent states.
    fn new_columns(&self) -> Vec<String>;

    /// Simulates the new latent states for one pool row. `row` holds the
    /// carried columns in [`Self::carried_columns`] order.
    fn extend(&self, row: &[f64], rng: &mut RbRng) -> Result<Vec<f64>>;

    /// Log-likelihood of the new datum given the carried values and the
    /// simulated states.
    fn log_likelihood(&self, row: &[f64], extension: &[f64]) -> Result<f64>;
}

/// Extends every pool row, prefetches the new-datum log-likelihood and runs the
/// pool-indexed chain. Returns the updated sample over the carried columns
/// followed by the new latent states.
pub fn online_update<E: PredictiveExtension + ?Sized>(
    stage_one: &SampleMatrix,
    extension: &E,
    cfg: &StageConfig,
) -> Result<StageOutput> {
    let stage = stage_one.stage() as u64 + 1;
    online_update_with_streams(stage_one, extension, cfg, 2_000, 1_000 + stage)
}

/// [`online_update`] with explicit random streams for the forward simulation
/// and for the chain, so independent updates under one seed stay independent.
pub fn online_update_with_streams<E: PredictiveExtension + ?Sized>(
    stage_one: &SampleMatrix,
    extension: &E,
    cfg: &StageConfig,
    extend_stream: u64,
    chain_stream: u64,
) -> Result<StageOutput> {
    let start = Instant::now();
    let carried = stage_one.select_columns(&extension.carried_columns())?;
    let new_names = extension.new_columns();
    let mut rng = rng::stream(cfg.seed, extend_stream);
    let mut simulated = Vec::with_capacity(carried.nrows() * new_names.len());
    for row in carried.rows() {
        let ext = extension.extend(row, &mut rng)?;
        if ext.len() != new_names.len() {
            return Err(Error::Data(format!(
                "extension produced {} values, expected {}",
                ext.len(),
                new_names.len()
            )));
        }
        simulated.extend(ext);
    }
    let simulated = SampleMatrix::from_flat(new_names.clone(), simulated, stage_one.stage() + 1)?;
    let joint = carried.hstack(&simulated)?;
    let split = carried.ncols();
    let loglik = prefetch_rows(&joint, cfg.workers, |row| {
        extension.log_likelihood(&row[..split], &row[split..])
    })?;
    let extended_ms = start.elapsed().as_secs_f64() * 1e3;

    let stage = stage_one.stage() + 1;
    let mut pool = ProposalPool::new(joint, cfg.strategy)?.with_loglik(loglik)?;
    let total = cfg.pool_iterations.unwrap_or(pool.len());
    let burn_in = cfg.pool_burn_in.min(total.saturating_sub(1));
    let mut chain_rng = rng::stream(cfg.seed, chain_stream);
    let mut state = initial_state(&pool, &mut chain_rng)?;
    let mut kept = Vec::with_capacity(StageConfig::retained(total, burn_in, cfg.thin));
    let mut accepted = 0usize;
    for it in 0..total {
        let acc = pprb_mh_step(&mut state, &mut pool, &mut chain_rng)?;
        if it >= burn_in {
            accepted += usize::from(acc);
            if (it - burn_in) % cfg.thin == 0 {
                kept.push(state.pool_index);
            }
        }
    }
    let samples = pool.samples().select_rows(&kept)?.with_stage(stage);
    let mut diagnostics = StageDiagnostics::new(stage);
    diagnostics
        .acceptance_rates
        .insert("pool".into(), accepted as f64 / (total - burn_in) as f64);
    diagnostics
        .timings_ms
        .insert("extend_prefetch".into(), extended_ms);
    diagnostics
        .timings_ms
        .insert("total".into(), start.elapsed().as_secs_f64() * 1e3);
    Ok(StageOutput {
        samples,
        origin: kept,
        diagnostics,
    })
}
