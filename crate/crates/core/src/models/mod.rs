//! Prediction-function abstraction and the in-repo learners.
//!
//! Every fitted model is immutable and implements [`PredictionModel`]. The
//! ground-truth function of a DGP is wrapped in the same abstraction so
//! effect estimators treat models and truth identically.

use std::fmt;
use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::dgp::{DgpSpec, Setting};
use crate::error::{Error, Result};

mod linear;
mod presets;
mod ridge;
mod trees;

pub use linear::{fit_linear, LinearModel};
pub use presets::PRESET_VERSION;
pub use ridge::{fit_ridge_basis, RidgeBasisModel};
pub use trees::{fit_boosted_trees, BoostedTreesModel};

/// Where a fitted model came from.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Provenance {
    pub learner: String,
    pub config: String,
    pub seed: Option<u64>,
}

/// An immutable fitted prediction function on `p` features.
pub trait PredictionModel: Send + Sync + fmt::Debug {
    fn n_features(&self) -> usize;

    fn provenance(&self) -> &Provenance;

    /// Predictions for the rows of `x`, whose column count has been checked.
    fn predict_unchecked(&self, x: ArrayView2<'_, f64>) -> Array1<f64>;

    /// ICE matrix: entry `(i, g)` is the prediction for row `i` with column
    /// `feature` replaced by `grid[g]`.
    fn ice_unchecked(&self, x: ArrayView2<'_, f64>, feature: usize, grid: &[f64]) -> Array2<f64> {
        generic_ice(self, x, feature, grid)
    }

    fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        check_columns(self.n_features(), x.ncols())?;
        Ok(self.predict_unchecked(x))
    }

    fn ice(&self, x: ArrayView2<'_, f64>, feature: usize, grid: &[f64]) -> Result<Array2<f64>> {
        check_columns(self.n_features(), x.ncols())?;
        if feature >= self.n_features() {
            return Err(Error::Domain(format!("feature index {feature} out of range")));
        }
        Ok(self.ice_unchecked(x, feature, grid))
    }
}

fn check_columns(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Dimension { expected, got });
    }
    Ok(())
}

/// ICE by overwriting the feature column and predicting once per grid value.
pub fn generic_ice<M: PredictionModel + ?Sized>(
    model: &M,
    x: ArrayView2<'_, f64>,
    feature: usize,
    grid: &[f64],
) -> Array2<f64> {
    let mut out = Array2::zeros((x.nrows(), grid.len()));
    let mut buf = x.to_owned();
    for (g, &z) in grid.iter().enumerate() {
        buf.column_mut(feature).fill(z);
        out.column_mut(g).assign(&model.predict_unchecked(buf.view()));
    }
    out
}

/// Mean squared error of `model` on `data`.
pub fn empirical_risk(model: &dyn PredictionModel, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Data("empirical risk of an empty dataset".into()));
    }
    let pred = model.predict(data.features().view())?;
    let sse: f64 = pred
        .iter()
        .zip(data.target())
        .map(|(p, y)| (y - p) * (y - p))
        .sum();
    Ok(sse / data.n() as f64)
}

/// The noiseless ground-truth function of a DGP.
#[derive(Debug, Clone)]
pub struct GroundTruthModel {
    spec: DgpSpec,
    provenance: Provenance,
}

impl GroundTruthModel {
    pub fn new(spec: DgpSpec) -> Self {
        let provenance = Provenance {
            learner: "ground_truth".into(),
            config: spec.setting().to_string(),
            seed: None,
        };
        GroundTruthModel { spec, provenance }
    }

    pub fn spec(&self) -> &DgpSpec {
        &self.spec
    }
}

impl PredictionModel for GroundTruthModel {
    fn n_features(&self) -> usize {
        self.spec.p()
    }

    fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    fn predict_unchecked(&self, x: ArrayView2<'_, f64>) -> Array1<f64> {
        x.rows().into_iter().map(|r| self.spec.ground_truth(r)).collect()
    }
}

type RowFn = dyn Fn(ArrayView1<'_, f64>) -> f64 + Send + Sync;

/// A model backed by a plain row function.
pub struct FnModel {
    p: usize,
    f: Box<RowFn>,
    provenance: Provenance,
}

impl FnModel {
    pub fn new<F>(p: usize, name: &str, f: F) -> Self
    where
        F: Fn(ArrayView1<'_, f64>) -> f64 + Send + Sync + 'static,
    {
        FnModel {
            p,
            f: Box::new(f),
            provenance: Provenance {
                learner: name.to_string(),
                ..Provenance::default()
            },
        }
    }
}

impl fmt::Debug for FnModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnModel")
            .field("p", &self.p)
            .field("name", &self.provenance.learner)
            .finish()
    }
}

impl PredictionModel for FnModel {
    fn n_features(&self) -> usize {
        self.p
    }

    fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    fn predict_unchecked(&self, x: ArrayView2<'_, f64>) -> Array1<f64> {
        x.rows().into_iter().map(|r| (self.f)(r)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    RidgeBasis,
    BoostedTrees,
    Linear,
    /// Returns the DGP's ground-truth function regardless of the training data.
    GroundTruth,
}

impl LearnerKind {
    pub fn name(self) -> &'static str {
        match self {
            LearnerKind::RidgeBasis => "ridge_basis",
            LearnerKind::BoostedTrees => "boosted_trees",
            LearnerKind::Linear => "linear",
            LearnerKind::GroundTruth => "ground_truth",
        }
    }
}

/// Optimally tuned vs. deliberately overfitting configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Ot,
    Of,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Ot => "ot",
            Mode::Of => "of",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeParams {
    /// Univariate basis columns per feature.
    pub basis_size: usize,
    /// Per-feature basis size inside each pairwise tensor product.
    pub interaction_basis_size: usize,
    /// Feature pairs (0-based) that receive tensor interaction columns.
    pub interactions: Vec<(usize, usize)>,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    pub rounds: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_samples_leaf: usize,
    pub subsample: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Hyperparams {
    Ridge(RidgeParams),
    Trees(TreeParams),
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerConfig {
    pub learner: LearnerKind,
    pub mode: Mode,
    pub params: Hyperparams,
}

impl LearnerConfig {
    /// The shipped configuration for a learner in a given setting and sample size.
    pub fn preset(learner: LearnerKind, mode: Mode, setting: Setting, n: usize) -> Self {
        presets::preset(learner, mode, setting, n)
    }

    pub fn id(&self) -> String {
        match self.learner {
            LearnerKind::Linear | LearnerKind::GroundTruth => self.learner.name().to_string(),
            _ => format!("{}_{}", self.learner.name(), self.mode.name()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.learner, &self.params) {
            (LearnerKind::RidgeBasis, Hyperparams::Ridge(r)) => {
                if r.lambda.is_nan() || r.lambda <= 0.0 {
                    return Err(Error::Config(format!("ridge penalty must be positive, got {}", r.lambda)));
                }
                if r.basis_size == 0 {
                    return Err(Error::Config("basis size must be at least 1".into()));
                }
                if !r.interactions.is_empty() && r.interaction_basis_size == 0 {
                    return Err(Error::Config("interaction basis size must be at least 1".into()));
                }
                Ok(())
            }
            (LearnerKind::BoostedTrees, Hyperparams::Trees(t)) => {
                if t.rounds == 0 || t.max_depth == 0 || t.min_samples_leaf == 0 {
                    return Err(Error::Config("rounds, depth and leaf size must be at least 1".into()));
                }
                if !(t.learning_rate > 0.0 && t.learning_rate <= 1.0) {
                    return Err(Error::Config(format!("learning rate {} outside (0, 1]", t.learning_rate)));
                }
                if !(t.subsample > 0.0 && t.subsample <= 1.0) {
                    return Err(Error::Config(format!("subsample fraction {} outside (0, 1]", t.subsample)));
                }
                Ok(())
            }
            (LearnerKind::Linear | LearnerKind::GroundTruth, _) => Ok(()),
            (kind, _) => Err(Error::Config(format!(
                "hyperparameters do not match learner {}",
                kind.name()
            ))),
        }
    }
}

/// Anything that turns a training set into a fitted model.
pub trait Learner: Send + Sync {
    fn id(&self) -> String;

    fn fit(&self, data: &Dataset, seed: u64) -> Result<Arc<dyn PredictionModel>>;
}

impl Learner for LearnerConfig {
    fn id(&self) -> String {
        LearnerConfig::id(self)
    }

    fn fit(&self, data: &Dataset, seed: u64) -> Result<Arc<dyn PredictionModel>> {
        self.validate()?;
        Ok(match self.learner {
            LearnerKind::RidgeBasis => Arc::new(fit_ridge_basis(data, self)?),
            LearnerKind::BoostedTrees => Arc::new(fit_boosted_trees(data, self, seed)?),
            LearnerKind::Linear => Arc::new(fit_linear(data)?),
            LearnerKind::GroundTruth => {
                let (setting, _) = data.origin.ok_or_else(|| {
                    Error::Fit("ground-truth learner needs data drawn from a known setting".into())
                })?;
                Arc::new(GroundTruthModel::new(DgpSpec::new(setting)))
            }
        })
    }
}
