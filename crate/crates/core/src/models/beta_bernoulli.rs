//! Bernoulli data with a conjugate Beta prior: exact prior-recursive updating,
//! plus hooks that let the sampling engine run the same recursion by MCMC.

use crate::distributions::sample_beta;
use crate::engine::{SampleMatrix, StageConfig, StageDiagnostics, StageOutput, StagedModel};
use crate::rng;
use crate::{BetaParams, Error, Result};

fn check_binary(data: &[u8]) -> Result<()> {
    match data.iter().position(|&v| v > 1) {
        Some(i) => Err(Error::Data(format!(
            "observation {i} is {} but must be 0 or 1",
            data[i]
        ))),
        None => Ok(()),
    }
}

/// `Beta(a + Σy, b + Σ(1-y))`.
pub fn conjugate_update(prior: BetaParams, data: &[u8]) -> Result<BetaParams> {
    check_binary(data)?;
    let ones = data.iter().filter(|&&v| v == 1).count() as f64;
    let zeros = data.len() as f64 - ones;
    BetaParams::new(prior.a + ones, prior.b + zeros)
}

/// Posterior after each partition, using each posterior as the next prior.
pub fn beta_bernoulli_recursive<P: AsRef<[u8]>>(
    prior: BetaParams,
    partitions: &[P],
) -> Result<Vec<BetaParams>> {
    let mut current = prior;
    partitions
        .iter()
        .map(|part| {
            current = conjugate_update(current, part.as_ref())?;
            Ok(current)
        })
        .collect()
}

/// Splits `data` into `j` consecutive chunks whose sizes differ by at most one.
pub fn split_consecutive(data: &[u8], j: usize) -> Result<Vec<Vec<u8>>> {
    if j == 0 {
        return Err(Error::Config("need at least one partition".into()));
    }
    let mut out = Vec::with_capacity(j);
    let mut start = 0;
    for b in 0..j {
        let size = data.len() / j + usize::from(b < data.len() % j);
        out.push(data[start..start + size].to_vec());
        start += size;
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct BetaBernoulliModel {
    pub prior: BetaParams,
    pub partitions: Vec<Vec<u8>>,
}

impl BetaBernoulliModel {
    pub fn new(prior: BetaParams, partitions: Vec<Vec<u8>>) -> Result<Self> {
        partitions.iter().try_for_each(|p| check_binary(p))?;
        if partitions.is_empty() {
            return Err(Error::Config("need at least one partition".into()));
        }
        Ok(Self { prior, partitions })
    }

    /// Prior `Beta(1, 1)`.
    pub fn uniform_prior(partitions: Vec<Vec<u8>>) -> Result<Self> {
        Self::new(BetaParams::new(1.0, 1.0)?, partitions)
    }

    pub fn full_posterior(&self) -> Result<BetaParams> {
        conjugate_update(self.prior, &self.partitions.concat())
    }

    pub fn recursive_posteriors(&self) -> Result<Vec<BetaParams>> {
        beta_bernoulli_recursive(self.prior, &self.partitions)
    }

    /// Independent draws from the all-data posterior, as many as a chain with
    /// `cfg` would retain.
    pub fn full_fit(&self, cfg: &StageConfig) -> Result<StageOutput> {
        cfg.validate()?;
        draw_posterior(self.full_posterior()?, cfg)
    }
}

fn draw_posterior(post: BetaParams, cfg: &StageConfig) -> Result<StageOutput> {
    let mut rng = rng::stream(cfg.seed, 1);
    let k = StageConfig::retained(cfg.iterations, cfg.burn_in, cfg.thin);
    let draws = (0..k)
        .map(|_| sample_beta(&post, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    // Keep draws strictly inside (0, 1) so log-likelihoods stay finite.
    let draws = draws
        .into_iter()
        .map(|t| t.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON))
        .collect();
    Ok(StageOutput {
        samples: SampleMatrix::from_flat(vec!["theta".into()], draws, 1)?,
        origin: (0..k).collect(),
        diagnostics: StageDiagnostics::new(1),
    })
}

impl StagedModel for BetaBernoulliModel {
    fn parameter_names(&self) -> Vec<String> {
        vec!["theta".into()]
    }

    fn stage_count(&self) -> usize {
        self.partitions.len()
    }

    /// Stage one draws directly from the conjugate posterior of partition 1.
    fn fit_first_stage(&self, cfg: &StageConfig) -> Result<StageOutput> {
        draw_posterior(conjugate_update(self.prior, &self.partitions[0])?, cfg)
    }

    fn conditional_logliks(&self, theta: &[f64]) -> Result<Vec<f64>> {
        let t = theta[0];
        Ok(self.partitions[1..]
            .iter()
            .map(|part| {
                part.iter()
                    .map(|&y| if y == 1 { t.ln() } else { (1.0 - t).ln() })
                    .sum()
            })
            .collect())
    }
}
