use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use recursive_bayes::models::geostat::{GeoPriors, GeoTruth, GeoTuning};
use recursive_bayes::models::hier_gaussian::{HierHyper, HierTruth, TransientPriors};
use recursive_bayes::models::poisson_dyn::{PoissonDynHyper, PoissonTruth};
use recursive_bayes::StageConfig;

use crate::error::{CliError, CliResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    BetaBernoulli,
    HierGaussian,
    Geostat,
    PoissonDyn,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Full,
    PriorRb,
    ProposalRb,
    Pprb,
    Online,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Assignment {
    /// Blocks of near-equal size drawn at random from the seed.
    #[default]
    Random,
    /// Blocks taken from the data: a `block` column for geostatistical data,
    /// consecutive runs in file order for binary data.
    Provided,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PartitionSpec {
    pub blocks: usize,
    pub assignment: Assignment,
}

impl Default for PartitionSpec {
    fn default() -> Self {
        Self {
            blocks: 3,
            assignment: Assignment::Random,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BetaBernoulliSection {
    pub prior_a: f64,
    pub prior_b: f64,
    /// Synthetic data: number of trials and success probability.
    pub n: usize,
    pub p: f64,
}

impl Default for BetaBernoulliSection {
    fn default() -> Self {
        Self {
            prior_a: 1.0,
            prior_b: 1.0,
            n: 8,
            p: 0.5,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HierSection {
    pub hyper: HierHyper,
    pub transient: TransientPriors,
    pub truth: HierTruth,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeoSection {
    /// Synthetic data size.
    pub n: usize,
    pub priors: GeoPriors,
    pub tuning: GeoTuning,
    pub truth: GeoTruth,
}

impl Default for GeoSection {
    fn default() -> Self {
        Self {
            n: 120,
            priors: GeoPriors::default(),
            tuning: GeoTuning::default(),
            truth: GeoTruth::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PoissonSection {
    pub hyper: PoissonDynHyper,
    pub truth: PoissonTruth,
    /// For online mode: the last `horizon` years of the data are new, and only
    /// the final one of them is used.
    pub horizon: usize,
}

impl Default for PoissonSection {
    fn default() -> Self {
        Self {
            hyper: PoissonDynHyper::default(),
            truth: PoissonTruth::default(),
            horizon: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchSection {
    /// Observations (geostat) or years (poisson-dyn) per rung.
    pub sizes: Vec<usize>,
    /// Timed repetitions per rung; the fastest is reported.
    pub repeats: usize,
}

impl Default for BenchSection {
    fn default() -> Self {
        Self {
            sizes: vec![60, 120, 240],
            repeats: 1,
        }
    }
}

/// Everything one invocation needs. Every field has a default, and the
/// effective configuration (defaults filled in) is written beside the outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub model: ModelKind,
    pub mode: Mode,
    /// Data file; when absent the synthetic generator for the model is used.
    pub data: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub partition: PartitionSpec,
    pub stage: StageConfig,
    pub beta_bernoulli: BetaBernoulliSection,
    pub hier: HierSection,
    pub geostat: GeoSection,
    pub poisson: PoissonSection,
    pub bench: BenchSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::Geostat,
            mode: Mode::Full,
            data: None,
            output_dir: PathBuf::from("rbayes-out"),
            partition: PartitionSpec::default(),
            stage: StageConfig::default(),
            beta_bernoulli: BetaBernoulliSection::default(),
            hier: HierSection::default(),
            geostat: GeoSection::default(),
            poisson: PoissonSection::default(),
            bench: BenchSection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Reads a config file. A relative data path is resolved against the
    /// directory holding the config file.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Data(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        if let (Some(data), Some(dir)) = (&cfg.data, path.parent()) {
            if data.is_relative() {
                cfg.data = Some(dir.join(data));
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> CliResult<String> {
        toml::to_string_pretty(self).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn validate(&self) -> CliResult<()> {
        use Mode::*;
        use ModelKind::*;
        let ok = matches!(
            (self.model, self.mode),
            (BetaBernoulli, Full | PriorRb | Pprb)
                | (HierGaussian, Full | ProposalRb)
                | (Geostat, Full | Pprb)
                | (PoissonDyn, Full | Online)
        );
        if !ok {
            return Err(CliError::Config(format!(
                "mode {:?} is not available for model {:?}",
                self.mode, self.model
            )));
        }
        if self.partition.blocks == 0 {
            return Err(CliError::Config(
                "partition.blocks must be at least 1".into(),
            ));
        }
        if self.poisson.horizon == 0 {
            return Err(CliError::Config(
                "poisson.horizon must be at least 1".into(),
            ));
        }
        if let Some(p) = &self.data {
            if !p.exists() {
                return Err(CliError::Data(format!(
                    "data file {} does not exist",
                    p.display()
                )));
            }
        }
        self.stage.validate()?;
        Ok(())
    }
}
