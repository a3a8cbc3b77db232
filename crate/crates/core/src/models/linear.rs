use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, ArrayView2};

use super::{PredictionModel, Provenance};
use crate::data::Dataset;
use crate::error::{Error, Result};

/// Ordinary least squares with intercept.
#[derive(Debug, Clone)]
pub struct LinearModel {
    intercept: f64,
    coefficients: Array1<f64>,
    provenance: Provenance,
}

impl LinearModel {
    pub fn intercept(&self) -> f64 {
        self.intercept
    }

    pub fn coefficients(&self) -> &Array1<f64> {
        &self.coefficients
    }
}

pub fn fit_linear(data: &Dataset) -> Result<LinearModel> {
    let (n, p) = (data.n(), data.p());
    if n <= p {
        return Err(Error::Fit(format!("OLS needs n > p, got n = {n}, p = {p}")));
    }
    if data.has_nan() {
        return Err(Error::Data("NaN in training data".into()));
    }
    let x = data.features();
    let design = DMatrix::from_fn(n, p + 1, |i, j| if j == 0 { 1.0 } else { x[(i, j - 1)] });
    let y = DVector::from_iterator(n, data.target().iter().copied());
    let svd = design.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if smin.is_nan() || smin <= 1e-10 * smax {
        return Err(Error::Fit("design matrix is rank deficient".into()));
    }
    let beta = svd
        .solve(&y, 0.0)
        .map_err(|e| Error::Fit(format!("least squares solve failed: {e}")))?;
    Ok(LinearModel {
        intercept: beta[0],
        coefficients: beta.iter().skip(1).copied().collect(),
        provenance: Provenance {
            learner: "linear".into(),
            config: "ols".into(),
            seed: None,
        },
    })
}

impl PredictionModel for LinearModel {
    fn n_features(&self) -> usize {
        self.coefficients.len()
    }

    fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    fn predict_unchecked(&self, x: ArrayView2<'_, f64>) -> Array1<f64> {
        x.dot(&self.coefficients) + self.intercept
    }
}
