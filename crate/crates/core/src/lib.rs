//! Reward learning from pairwise preferences augmented with response times.
//!
//! Human choices between two options carry one bit each; the time a decision
//! takes carries information about how strong the preference is. This crate
//! models both through the EZ diffusion process (drift = reward difference,
//! symmetric barriers, closed-form choice and time moments) and estimates
//! reward functions with losses that are Neyman-orthogonal to the auxiliary
//! quantities they consume, so first-stage estimation error enters only at
//! second order.
//!
//! Module map:
//!
//! - [`ez`]: diffusion moments and the first-passage trial sampler;
//! - [`reward`]: linear and feed-forward reward models with exact gradients;
//! - [`losses`]: the pointwise losses, capping, and derivative probes;
//! - [`optim`]: Adam/GD minimization with early stopping;
//! - [`estimation`]: nuisance fitting and the two-stage estimator with
//!   data-splitting, cross-fitting and data-reuse;
//! - [`asymptotics`]: theoretical covariances and their empirical validation;
//! - [`data`]: synthetic generation, embeddings ingestion, persistence;
//! - [`metrics`]: reward MSE, parameter error, policy regret.

pub mod asymptotics;
pub mod data;
pub mod error;
pub mod estimation;
pub mod ez;
pub mod losses;
pub mod metrics;
pub mod num;
pub mod optim;
pub mod reward;
pub mod rng;

pub use data::{Dataset, FeatureDist, FoldAssignment, OracleSpec, Provenance};
pub use error::{Error, Result};
pub use estimation::{FitConfig, FitOutcome, FitReport, ModelSpec};
pub use ez::{EZParams, EZSampleConfig};
pub use losses::{CapConfig, LossKind, NuisanceSet, Observation};
pub use metrics::EvalReport;
pub use optim::OptimizerConfig;
pub use reward::{QueryPair, RewardModel};
