use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use rayon::ThreadPool;
use serde::{Deserialize, Serialize};

use super::SampleMatrix;
use crate::{Error, Result};

/// How proposals are resampled from the previous stage's draws.
///
/// * `WithReplacement` draws rows uniformly at random; the implied proposal is
///   the empirical transient posterior.
/// * `Permutation` walks a random permutation so every row is proposed once per
///   cycle. `cycle = false` makes running past `K` proposals an error.
/// * `Thinned` draws uniformly from every `interval`-th row, trading proposal
///   diversity for lower dependence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ResampleStrategy {
    WithReplacement,
    Permutation { cycle: bool },
    Thinned { interval: usize },
}

impl Default for ResampleStrategy {
    fn default() -> Self {
        ResampleStrategy::WithReplacement
    }
}

/// Previous-stage draws offered as proposals, with optional precomputed
/// conditional log-likelihoods, one per row.
#[derive(Clone, Debug)]
pub struct ProposalPool {
    samples: SampleMatrix,
    loglik: Option<Vec<f64>>,
    origin: Vec<usize>,
    strategy: ResampleStrategy,
    permutation: Vec<usize>,
    cursor: usize,
}

impl ProposalPool {
    pub fn new(samples: SampleMatrix, strategy: ResampleStrategy) -> Result<Self> {
        if let ResampleStrategy::Thinned { interval } = strategy {
            if interval == 0 {
                return Err(Error::Config("thinning interval must be at least 1".into()));
            }
        }
        let origin = (0..samples.nrows()).collect();
        Ok(Self {
            samples,
            loglik: None,
            origin,
            strategy,
            permutation: Vec::new(),
            cursor: 0,
        })
    }

    /// Attaches precomputed log-likelihoods. `-∞` is allowed; `NaN` and `+∞`
    /// are data errors, and so is a vector with no finite entry.
    pub fn with_loglik(mut self, loglik: Vec<f64>) -> Result<Self> {
        if loglik.len() != self.len() {
            return Err(Error::Config(format!(
                "{} log-likelihoods for a pool of {} rows",
                loglik.len(),
                self.len()
            )));
        }
        check_logliks(&loglik)?;
        if !loglik.iter().any(|v| v.is_finite()) {
            return Err(Error::Data("every pool row has zero likelihood".into()));
        }
        self.loglik = Some(loglik);
        Ok(self)
    }

    /// Records, per row, the identity of the draw in some earlier pool (used to
    /// look up tables prefetched once over the first-stage sample).
    pub fn with_origin(mut self, origin: Vec<usize>) -> Result<Self> {
        if origin.len() != self.len() {
            return Err(Error::Config(
                "origin vector length differs from pool size".into(),
            ));
        }
        self.origin = origin;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.samples.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn samples(&self) -> &SampleMatrix {
        &self.samples
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.samples.row(i)
    }

    pub fn origin(&self) -> &[usize] {
        &self.origin
    }

    pub fn loglik(&self) -> Option<&[f64]> {
        self.loglik.as_deref()
    }

    pub fn strategy(&self) -> ResampleStrategy {
        self.strategy
    }

    /// Draws the index of the next proposal according to the pool strategy.
    pub fn draw_proposal<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<usize> {
        let k = self.len();
        match self.strategy {
            ResampleStrategy::WithReplacement => Ok(rng.random_range(0..k)),
            ResampleStrategy::Thinned { interval } => {
                let kept = k.div_ceil(interval);
                Ok(rng.random_range(0..kept) * interval)
            }
            ResampleStrategy::Permutation { cycle } => {
                if self.permutation.is_empty() {
                    self.permutation = (0..k).collect();
                    self.permutation.shuffle(rng);
                } else if self.cursor == k {
                    if !cycle {
                        return Err(Error::Config(format!(
                            "permutation over {k} proposals exhausted and cycling is disabled"
                        )));
                    }
                    self.cursor = 0;
                }
                let i = self.permutation[self.cursor];
                self.cursor += 1;
                Ok(i)
            }
        }
    }
}

fn check_logliks(loglik: &[f64]) -> Result<()> {
    if let Some(i) = loglik
        .iter()
        .position(|v| v.is_nan() || *v == f64::INFINITY)
    {
        return Err(Error::Data(format!(
            "pool row {i} has log-likelihood {}",
            loglik[i]
        )));
    }
    Ok(())
}

/// Maps `f` over `items` on a dedicated pool of `workers` threads. Results are
/// returned in input order and do not depend on `workers`.
pub fn parallel_map<I, O, F>(items: &[I], workers: usize, f: F) -> Result<Vec<O>>
where
    I: Sync,
    O: Send,
    F: Fn(&I) -> Result<O> + Sync,
{
    if workers <= 1 {
        return items.iter().map(f).collect();
    }
    thread_pool(workers)?.install(|| items.par_iter().map(&f).collect())
}

/// Thread pools are built once per worker count and reused by later stages.
fn thread_pool(workers: usize) -> Result<Arc<ThreadPool>> {
    static POOLS: OnceLock<Mutex<HashMap<usize, Arc<ThreadPool>>>> = OnceLock::new();
    let mut pools = POOLS
        .get_or_init(Default::default)
        .lock()
        .unwrap_or_else(|e| e.into_inner());
    if let Some(p) = pools.get(&workers) {
        return Ok(Arc::clone(p));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {workers} workers: {e}")))?;
    let pool = Arc::new(pool);
    pools.insert(workers, Arc::clone(&pool));
    Ok(pool)
}

/// Evaluates `f` on every pool row and returns the per-row table.
pub fn prefetch_rows<O, F>(samples: &SampleMatrix, workers: usize, f: F) -> Result<Vec<O>>
where
    O: Send,
    F: Fn(&[f64]) -> Result<O> + Sync,
{
    let rows: Vec<usize> = (0..samples.nrows()).collect();
    parallel_map(&rows, workers, |&i| f(samples.row(i)))
}

/// Fills the pool's log-likelihood table with `loglik(row)` for every row,
/// evaluated in parallel. Only the scalar values are retained.
pub fn prefetch_loglik<F>(pool: ProposalPool, loglik: F, workers: usize) -> Result<ProposalPool>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    let values = prefetch_rows(pool.samples(), workers, loglik)?;
    pool.with_loglik(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn pool(k: usize, strategy: ResampleStrategy) -> ProposalPool {
        let s = SampleMatrix::from_flat(vec!["x".into()], (0..k).map(|i| i as f64).collect(), 1)
            .unwrap();
        ProposalPool::new(s, strategy).unwrap()
    }

    #[test]
    fn single_row_pool_always_proposes_it() {
        let mut rng = seeded(1);
        for strategy in [
            ResampleStrategy::WithReplacement,
            ResampleStrategy::Permutation { cycle: true },
            ResampleStrategy::Thinned { interval: 3 },
        ] {
            let mut p = pool(1, strategy);
            assert!((0..20).all(|_| p.draw_proposal(&mut rng).unwrap() == 0));
        }
    }

    #[test]
    fn with_replacement_frequencies_are_uniform() {
        let mut rng = seeded(42);
        let mut p = pool(10, ResampleStrategy::WithReplacement);
        let n = 100_000;
        let mut counts = [0usize; 10];
        for _ in 0..n {
            counts[p.draw_proposal(&mut rng).unwrap()] += 1;
        }
        for c in counts {
            assert!((c as f64 / n as f64 - 0.1).abs() < 0.005);
        }
    }

    #[test]
    fn permutation_visits_every_row_once_per_cycle() {
        let mut rng = seeded(3);
        let mut p = pool(25, ResampleStrategy::Permutation { cycle: true });
        for _ in 0..2 {
            let mut seen: Vec<usize> = (0..25)
                .map(|_| p.draw_proposal(&mut rng).unwrap())
                .collect();
            seen.sort_unstable();
            assert_eq!(seen, (0..25).collect::<Vec<_>>());
        }
        let mut once = pool(4, ResampleStrategy::Permutation { cycle: false });
        for _ in 0..4 {
            once.draw_proposal(&mut rng).unwrap();
        }
        assert!(matches!(
            once.draw_proposal(&mut rng),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn thinned_draws_stay_on_the_grid() {
        let mut rng = seeded(5);
        let mut p = pool(10, ResampleStrategy::Thinned { interval: 3 });
        let mut seen = std::collections::BTreeSet::new();
        for _ in 0..1000 {
            seen.insert(p.draw_proposal(&mut rng).unwrap());
        }
        assert_eq!(seen.into_iter().collect::<Vec<_>>(), vec![0, 3, 6, 9]);
        assert!(ProposalPool::new(
            pool(3, ResampleStrategy::WithReplacement).samples().clone(),
            ResampleStrategy::Thinned { interval: 0 }
        )
        .is_err());
    }

    #[test]
    fn prefetch_is_worker_invariant_and_validates() {
        let p = pool(500, ResampleStrategy::WithReplacement);
        let f = |r: &[f64]| Ok((r[0] * 0.37).sin() * 1e3 + r[0].sqrt());
        let a = prefetch_loglik(p.clone(), f, 1).unwrap();
        let b = prefetch_loglik(p.clone(), f, 8).unwrap();
        assert_eq!(a.loglik().unwrap(), b.loglik().unwrap());

        let c = prefetch_loglik(p.clone(), |_| Ok(-3.0), 4).unwrap();
        assert!(c.loglik().unwrap().iter().all(|&v| v == -3.0));

        let err = prefetch_loglik(
            p.clone(),
            |r| Ok(if r[0] == 7.0 { f64::NAN } else { 0.0 }),
            2,
        )
        .unwrap_err();
        assert!(err.to_string().contains("row 7"));
        assert!(prefetch_loglik(p.clone(), |_| Ok(f64::NEG_INFINITY), 2).is_err());
        let ok = prefetch_loglik(
            p,
            |r| Ok(if r[0] < 3.0 { f64::NEG_INFINITY } else { 0.0 }),
            2,
        );
        assert!(ok.is_ok());
    }
}
