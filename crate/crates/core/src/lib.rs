//! Recursive Bayesian inference by staged MCMC.
//!
//! The crate fits Bayesian models to partitioned data in stages. Each stage's
//! posterior sample is recycled as both the prior and the Metropolis-Hastings
//! proposal of the next stage, so the acceptance ratio reduces to a ratio of
//! conditional data likelihoods `[y_j | θ, y_{1:(j-1)}]`. Those likelihoods are
//! precomputed for every pool row in parallel before the next chain runs.
//!
//! Layout:
//!
//! * [`distributions`], [`linalg`], [`gp`]: numerical kernels, generic over
//!   the [`Real`] scalar. The aliases at the crate root fix them to `f64`.
//! * [`engine`]: sample matrices, proposal pools, pool-indexed kernels,
//!   stage orchestration and online updating.
//! * [`models`]: Beta-Bernoulli, hierarchical Gaussian, Matérn geostatistical
//!   and Poisson state-space models, each with a full fit and a recursive fit.
//! * [`diagnostics`]: posterior summaries and full-versus-recursive comparison.

pub mod diagnostics;
pub mod distributions;
pub mod engine;
pub mod error;
pub mod gp;
pub mod linalg;
pub mod models;
pub mod real;
pub mod rng;

pub use error::{Error, ErrorKind, Result};
pub use real::Real;

pub use engine::{
    ChainState, ProposalPool, ResampleStrategy, SampleMatrix, StageConfig, StageDiagnostics,
};

pub type GaussianParams = distributions::GaussianParams<f64>;
pub type InverseGammaParams = distributions::InverseGammaParams<f64>;
pub type ScaledInvChiSqParams = distributions::ScaledInvChiSqParams<f64>;
pub type BetaParams = distributions::BetaParams<f64>;
pub type MvnParams = distributions::MvnParams<f64>;
pub type CholeskyFactor = linalg::CholeskyFactor<f64>;
pub type SpatialDomain = gp::SpatialDomain<f64>;
pub type CovarianceSpec = gp::CovarianceSpec<f64>;
pub type OrderedCorrelationFactor = gp::OrderedCorrelationFactor<f64>;
pub use gp::PartitionIndex;
