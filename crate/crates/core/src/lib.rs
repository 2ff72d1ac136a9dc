//! Estimation of record-linkage accuracy and list coverage from the number
//! of links per record, without clerical review.

pub mod baselines;
pub mod error;
pub mod experiment;
pub mod linkage;
pub mod mixture;
pub mod neighbor_multi;
pub mod neighbor_uni;
pub mod optim;
pub mod poisson;
pub mod popsim;
pub mod rng;

pub use error::{Error, Result};
pub use baselines::{CoverageEstimate, EstimatorId};
pub use experiment::{MetricsTable, ReplicationResult, ScenarioConfig};
pub use linkage::{ConfusionMatrix, CountVector, LinkRule, LinkSet};
pub use mixture::{CountTable, FitOptions, MixtureParams};
pub use neighbor_uni::{CountHistogram, UniMixtureParams};
pub use popsim::{PerturbationParams, Population, PopulationModel, Record};
