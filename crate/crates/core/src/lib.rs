//! Partial dependence (PD) and accumulated local effects (ALE) estimation
//! for arbitrary prediction functions, with estimators for the MSE, bias,
//! total variance and estimation variance of the estimated effects.
//!
//! The crate also ships the simulation machinery used to study those error
//! components: three data-generating processes, in-repo learners, the
//! train / validation / cross-validation estimation strategies and an
//! experiment harness with deterministic seeding.

pub mod data;
pub mod decomp;
pub mod dgp;
pub mod effects;
pub mod error;
pub mod harness;
pub mod models;
mod quad;
pub mod seed;
pub mod strategies;

pub use data::Dataset;
pub use decomp::{CurveEnsemble, ErrorReport};
pub use dgp::{DgpSpec, Marginal, NoiseCalibration, Setting};
pub use effects::{BinPartition, EffectCurve, EffectGrid, EffectKind};
pub use error::{Error, Result};
pub use harness::{ExperimentConfig, ResultRow, RunOutput};
pub use models::{Learner, LearnerConfig, LearnerKind, Mode, PredictionModel};
pub use strategies::{StrategyKind, StrategySpec};
