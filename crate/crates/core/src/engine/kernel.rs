//! Pool-indexed Metropolis-Hastings kernels.
//!
//! The chain state is the index of the current draw within the proposal pool,
//! so both terms of the acceptance ratio are table lookups.

use rand::Rng;

use super::ProposalPool;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ChainState {
    pub pool_index: usize,
    /// Parameters updated outside the pool, e.g. population-level values.
    pub extras: Vec<(String, f64)>,
}

impl ChainState {
    pub fn at(pool_index: usize) -> Self {
        Self {
            pool_index,
            extras: Vec::new(),
        }
    }

    pub fn extra(&self, name: &str) -> Option<f64> {
        self.extras.iter().find(|(n, _)| n == name).map(|&(_, v)| v)
    }

    pub fn set_extra(&mut self, name: &str, value: f64) {
        match self.extras.iter_mut().find(|(n, _)| n == name) {
            Some(slot) => slot.1 = value,
            None => self.extras.push((name.to_string(), value)),
        }
    }
}

/// Accept/reject on a log ratio. Always consumes exactly one uniform.
pub fn mh_accept<R: Rng + ?Sized>(log_ratio: f64, rng: &mut R) -> bool {
    let u: f64 = rng.random();
    if log_ratio.is_nan() {
        return false;
    }
    log_ratio >= 0.0 || u.ln() < log_ratio
}

/// Picks a starting row uniformly among rows with finite log-likelihood.
pub fn initial_state<R: Rng + ?Sized>(pool: &ProposalPool, rng: &mut R) -> Result<ChainState> {
    let loglik = pool
        .loglik()
        .ok_or_else(|| Error::Config("pool has no precomputed log-likelihoods".into()))?;
    let finite: Vec<usize> = (0..loglik.len())
        .filter(|&i| loglik[i].is_finite())
        .collect();
    if finite.is_empty() {
        return Err(Error::Data("every pool row has zero likelihood".into()));
    }
    Ok(ChainState::at(finite[rng.random_range(0..finite.len())]))
}

/// Picks a starting row uniformly from the whole pool (for kernels that do
/// not use a log-likelihood table).
pub fn initial_state_uniform<R: Rng + ?Sized>(pool: &ProposalPool, rng: &mut R) -> ChainState {
    ChainState::at(rng.random_range(0..pool.len()))
}

/// One prior-proposal-recursive step: propose a pool row and accept with
/// probability `min(1, exp(loglik[i*] - loglik[current]))`. Returns whether
/// the proposal was accepted.
pub fn pprb_mh_step<R: Rng + ?Sized>(
    state: &mut ChainState,
    pool: &mut ProposalPool,
    rng: &mut R,
) -> Result<bool> {
    if pool.loglik().is_none() {
        return Err(Error::Config(
            "pool has no precomputed log-likelihoods".into(),
        ));
    }
    let proposal = pool.draw_proposal(rng)?;
    let loglik = pool.loglik().expect("checked above");
    let accepted = mh_accept(loglik[proposal] - loglik[state.pool_index], rng);
    if accepted {
        state.pool_index = proposal;
    }
    Ok(accepted)
}

/// Same kernel as [`pprb_mh_step`] but evaluates the conditional
/// log-likelihood of both rows on every call instead of using the table.
pub fn pprb_mh_step_recompute<R, F>(
    state: &mut ChainState,
    pool: &mut ProposalPool,
    loglik: F,
    rng: &mut R,
) -> Result<bool>
where
    R: Rng + ?Sized,
    F: Fn(&[f64]) -> Result<f64>,
{
    let proposal = pool.draw_proposal(rng)?;
    let log_ratio = loglik(pool.row(proposal))? - loglik(pool.row(state.pool_index))?;
    let accepted = mh_accept(log_ratio, rng);
    if accepted {
        state.pool_index = proposal;
    }
    Ok(accepted)
}

/// One proposal-recursive step for a random-effect block. With `h` the log
/// hierarchy density at the current hyperparameters and `t` the log transient
/// prior used at stage one, the log ratio is
/// `h(θ*) + t(θ_cur) - h(θ_cur) - t(θ*)`; the data model never appears.
pub fn proposal_rb_mh_step<R, H, P>(
    state: &mut ChainState,
    pool: &mut ProposalPool,
    log_hierarchy: H,
    log_transient_prior: P,
    rng: &mut R,
) -> Result<bool>
where
    R: Rng + ?Sized,
    H: Fn(&[f64]) -> f64,
    P: Fn(&[f64]) -> f64,
{
    let proposal = pool.draw_proposal(rng)?;
    let (prop, cur) = (pool.row(proposal), pool.row(state.pool_index));
    let (t_prop, t_cur) = (log_transient_prior(prop), log_transient_prior(cur));
    for (t, i) in [(t_prop, proposal), (t_cur, state.pool_index)] {
        if !t.is_finite() {
            return Err(Error::Domain(format!(
                "transient prior density is zero at pool row {i}"
            )));
        }
    }
    let log_ratio = if proposal == state.pool_index {
        0.0
    } else {
        log_hierarchy(prop) + t_cur - log_hierarchy(cur) - t_prop
    };
    let accepted = mh_accept(log_ratio, rng);
    if accepted {
        state.pool_index = proposal;
    }
    Ok(accepted)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{ResampleStrategy, SampleMatrix};
    use crate::rng::seeded;

    fn pool(values: &[f64], loglik: Option<Vec<f64>>) -> ProposalPool {
        let s = SampleMatrix::from_flat(vec!["x".into()], values.to_vec(), 1).unwrap();
        let p = ProposalPool::new(s, ResampleStrategy::WithReplacement).unwrap();
        match loglik {
            Some(l) => p.with_loglik(l).unwrap(),
            None => p,
        }
    }

    #[test]
    fn equal_loglik_always_accepts() {
        let mut p = pool(&[0.0, 1.0, 2.0], Some(vec![-1.5; 3]));
        let mut rng = seeded(1);
        let mut s = ChainState::at(0);
        assert!((0..1000).all(|_| pprb_mh_step(&mut s, &mut p, &mut rng).unwrap()));
    }

    #[test]
    fn impossible_rows_are_never_visited() {
        let mut p = pool(&[0.0, 1.0, 2.0], Some(vec![0.0, f64::NEG_INFINITY, -0.1]));
        let mut rng = seeded(2);
        let mut s = initial_state(&p, &mut rng).unwrap();
        for _ in 0..10_000 {
            pprb_mh_step(&mut s, &mut p, &mut rng).unwrap();
            assert_ne!(s.pool_index, 1);
        }
    }

    #[test]
    fn missing_table_is_a_config_error() {
        let mut p = pool(&[0.0, 1.0], None);
        let err = pprb_mh_step(&mut ChainState::at(0), &mut p, &mut seeded(1)).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn two_row_chain_matches_stationary_distribution() {
        // loglik (0, log 0.5): from row 0 move to 1 w.p. ½·½, from 1 to 0 w.p. ½.
        // Stationary: π0·¼ = π1·½ ⇒ π = (2/3, 1/3).
        let mut p = pool(&[0.0, 1.0], Some(vec![0.0, 0.5f64.ln()]));
        let mut rng = seeded(7);
        let mut s = ChainState::at(0);
        let n = 400_000;
        let mut in_zero = 0usize;
        for _ in 0..n {
            pprb_mh_step(&mut s, &mut p, &mut rng).unwrap();
            in_zero += usize::from(s.pool_index == 0);
        }
        assert!((in_zero as f64 / n as f64 - 2.0 / 3.0).abs() < 0.005);
    }

    #[test]
    fn recompute_path_reproduces_table_path() {
        let values: Vec<f64> = (0..50).map(|i| i as f64 / 10.0).collect();
        let f = |r: &[f64]| Ok(-(r[0] - 2.0).powi(2));
        let table: Vec<f64> = values.iter().map(|&v| f(&[v]).unwrap()).collect();
        let mut a = pool(&values, Some(table));
        let mut b = pool(&values, None);
        let (mut ra, mut rb) = (seeded(11), seeded(11));
        let (mut sa, mut sb) = (ChainState::at(3), ChainState::at(3));
        for _ in 0..5000 {
            let x = pprb_mh_step(&mut sa, &mut a, &mut ra).unwrap();
            let y = pprb_mh_step_recompute(&mut sb, &mut b, f, &mut rb).unwrap();
            assert_eq!(x, y);
            assert_eq!(sa, sb);
        }
    }

    #[test]
    fn proposal_rb_perfect_cancellation() {
        let mut p = pool(&[0.0, 1.0, 2.5], None);
        let mut rng = seeded(4);
        let mut s = ChainState::at(0);
        let density = |r: &[f64]| -0.5 * r[0] * r[0];
        assert!((0..1000)
            .all(|_| proposal_rb_mh_step(&mut s, &mut p, density, density, &mut rng).unwrap()));
        let err = proposal_rb_mh_step(&mut s, &mut p, density, |_| f64::NEG_INFINITY, &mut rng)
            .unwrap_err();
        assert!(matches!(err, Error::Domain(_)));
    }

    #[test]
    fn proposal_rb_two_row_stationary_distribution() {
        // log-ratio from 0→1 = (h1 - t1) - (h0 - t0). Weights w_i = exp(h_i - t_i).
        let h = [0.0_f64, -1.0];
        let t = [-0.3, -0.1];
        let w: Vec<f64> = (0..2).map(|i| (h[i] - t[i]).exp()).collect();
        let target0 = w[0] / (w[0] + w[1]);
        let mut p = pool(&[0.0, 1.0], None);
        let mut rng = seeded(8);
        let mut s = ChainState::at(1);
        let n = 400_000;
        let mut in_zero = 0usize;
        for _ in 0..n {
            proposal_rb_mh_step(
                &mut s,
                &mut p,
                |r| h[r[0] as usize],
                |r| t[r[0] as usize],
                &mut rng,
            )
            .unwrap();
            in_zero += usize::from(s.pool_index == 0);
        }
        assert!((in_zero as f64 / n as f64 - target0).abs() < 0.005);
    }

    #[test]
    fn extras_are_named() {
        let mut s = ChainState::at(0);
        s.set_extra("mu", 1.0);
        s.set_extra("mu", 2.0);
        assert_eq!(s.extra("mu"), Some(2.0));
        assert_eq!(s.extras.len(), 1);
    }
}
