use ndarray::{Array1, Array2, Axis};

use crate::dgp::Setting;
use crate::error::{Error, Result};

/// An `n x p` feature matrix with its target vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Array2<f64>,
    target: Array1<f64>,
    /// Generating setting and seed, when the data came from a DGP.
    pub origin: Option<(Setting, u64)>,
}

impl Dataset {
    pub fn new(features: Array2<f64>, target: Array1<f64>) -> Result<Self> {
        if features.nrows() != target.len() {
            return Err(Error::Dimension {
                expected: features.nrows(),
                got: target.len(),
            });
        }
        Ok(Dataset {
            features,
            target,
            origin: None,
        })
    }

    /// A dataset with no meaningful target, used when only the features are
    /// needed for effect estimation.
    pub fn from_features(features: Array2<f64>) -> Self {
        let target = Array1::zeros(features.nrows());
        Dataset {
            features,
            target,
            origin: None,
        }
    }

    pub fn n(&self) -> usize {
        self.features.nrows()
    }

    pub fn p(&self) -> usize {
        self.features.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.n() == 0
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn target(&self) -> &Array1<f64> {
        &self.target
    }

    /// Rows at `indices`, in the given order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select(Axis(0), indices),
            target: self.target.select(Axis(0), indices),
            origin: self.origin,
        }
    }

    pub(crate) fn has_nan(&self) -> bool {
        self.features.iter().chain(self.target.iter()).any(|v| v.is_nan())
    }
}
