//! The four exemplar models. Each offers a full-data fit and a staged fit.

pub mod adapt;
pub mod beta_bernoulli;
pub mod geostat;
pub mod hier_gaussian;
pub mod poisson_dyn;

pub use adapt::AdaptiveStep;
pub use beta_bernoulli::{beta_bernoulli_recursive, BetaBernoulliModel};
pub use geostat::{GeoData, GeoModel, GeoPriors};
pub use hier_gaussian::{HierData, HierGaussianModel, HierHyper};
pub use poisson_dyn::{CountSeries, PoissonDynHyper, PoissonDynModel};
