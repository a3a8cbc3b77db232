//! Penalized regression on a spline basis expansion: cubic truncated-power
//! bases per feature with knots at training quantiles, optional tensor
//! interaction columns for selected feature pairs, ridge penalty on the
//! standardized columns and an unpenalized intercept.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, ArrayView1, ArrayView2};

use super::{Hyperparams, LearnerConfig, LearnerKind, PredictionModel, Provenance};
use crate::data::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
struct SplineBasis {
    degree: usize,
    knots: Vec<f64>,
}

impl SplineBasis {
    fn from_column(col: ArrayView1<'_, f64>, size: usize) -> Self {
        let degree = size.min(3);
        let n_knots = size - degree;
        let mut sorted: Vec<f64> = col.to_vec();
        sorted.sort_by(f64::total_cmp);
        let knots = (1..=n_knots)
            .map(|k| empirical_quantile(&sorted, k as f64 / (n_knots + 1) as f64))
            .collect();
        SplineBasis { degree, knots }
    }

    fn len(&self) -> usize {
        self.degree + self.knots.len()
    }

    fn eval(&self, x: f64, out: &mut Vec<f64>) {
        let mut pow = 1.0;
        for _ in 0..self.degree {
            pow *= x;
            out.push(pow);
        }
        for &k in &self.knots {
            let d = (x - k).max(0.0);
            out.push(d * d * d);
        }
    }
}

fn empirical_quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone)]
struct Interaction {
    a: usize,
    b: usize,
    basis_a: SplineBasis,
    basis_b: SplineBasis,
}

#[derive(Debug, Clone)]
struct Expansion {
    main: Vec<SplineBasis>,
    interactions: Vec<Interaction>,
}

impl Expansion {
    fn width(&self) -> usize {
        self.main.iter().map(SplineBasis::len).sum::<usize>()
            + self
                .interactions
                .iter()
                .map(|i| i.basis_a.len() * i.basis_b.len())
                .sum::<usize>()
    }

    fn expand(&self, row: ArrayView1<'_, f64>, out: &mut Vec<f64>, scratch: &mut Vec<f64>) {
        out.clear();
        for (j, basis) in self.main.iter().enumerate() {
            basis.eval(row[j], out);
        }
        for inter in &self.interactions {
            scratch.clear();
            inter.basis_a.eval(row[inter.a], scratch);
            let na = scratch.len();
            inter.basis_b.eval(row[inter.b], scratch);
            let (left, right) = scratch.split_at(na);
            for u in left {
                for v in right {
                    out.push(u * v);
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct RidgeBasisModel {
    expansion: Expansion,
    means: Vec<f64>,
    /// Per-column scale; zero for columns constant on the training set.
    scales: Vec<f64>,
    coefficients: Vec<f64>,
    intercept: f64,
    p: usize,
    provenance: Provenance,
}

impl RidgeBasisModel {
    pub fn n_columns(&self) -> usize {
        self.coefficients.len()
    }

    fn predict_row(&self, row: ArrayView1<'_, f64>, buf: &mut Vec<f64>, scratch: &mut Vec<f64>) -> f64 {
        self.expansion.expand(row, buf, scratch);
        let mut acc = self.intercept;
        for (k, v) in buf.iter().enumerate() {
            if self.scales[k] > 0.0 {
                acc += self.coefficients[k] * (v - self.means[k]) / self.scales[k];
            }
        }
        acc
    }
}

pub fn fit_ridge_basis(data: &Dataset, config: &LearnerConfig) -> Result<RidgeBasisModel> {
    let params = match (&config.learner, &config.params) {
        (LearnerKind::RidgeBasis, Hyperparams::Ridge(r)) => r,
        _ => return Err(Error::Config("fit_ridge_basis needs a ridge-basis config".into())),
    };
    config.validate()?;
    if data.is_empty() {
        return Err(Error::Data("empty training set".into()));
    }
    if data.has_nan() {
        return Err(Error::Data("NaN in training data".into()));
    }
    let x = data.features();
    let p = data.p();
    let main: Vec<SplineBasis> = (0..p)
        .map(|j| SplineBasis::from_column(x.column(j), params.basis_size))
        .collect();
    let mut interactions = Vec::with_capacity(params.interactions.len());
    for &(a, b) in &params.interactions {
        if a >= p || b >= p || a == b {
            return Err(Error::Config(format!("invalid interaction pair ({a}, {b})")));
        }
        interactions.push(Interaction {
            a,
            b,
            basis_a: SplineBasis::from_column(x.column(a), params.interaction_basis_size),
            basis_b: SplineBasis::from_column(x.column(b), params.interaction_basis_size),
        });
    }
    let expansion = Expansion { main, interactions };
    let n = data.n();
    let width = expansion.width();

    let mut z = DMatrix::<f64>::zeros(n, width);
    let (mut buf, mut scratch) = (Vec::with_capacity(width), Vec::new());
    for (i, row) in x.rows().into_iter().enumerate() {
        expansion.expand(row, &mut buf, &mut scratch);
        for (k, v) in buf.iter().enumerate() {
            z[(i, k)] = *v;
        }
    }
    let mut means = vec![0.0; width];
    let mut scales = vec![0.0; width];
    for k in 0..width {
        let mut col = z.column_mut(k);
        let mean = col.mean();
        col.add_scalar_mut(-mean);
        let sd = (col.norm_squared() / n as f64).sqrt();
        means[k] = mean;
        if sd > 1e-12 * (1.0 + mean.abs()) {
            scales[k] = sd;
            col /= sd;
        } else {
            scales[k] = 0.0;
            col.fill(0.0);
        }
    }
    let y_mean = data.target().mean().unwrap_or(0.0);
    let y = DVector::from_iterator(n, data.target().iter().map(|v| v - y_mean));

    let mut gram = z.tr_mul(&z);
    for k in 0..width {
        gram[(k, k)] += params.lambda;
    }
    let rhs = z.tr_mul(&y);
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::Fit("penalized normal equations are not positive definite".into()))?;
    let beta = chol.solve(&rhs);
    if beta.iter().any(|b| !b.is_finite()) {
        return Err(Error::Fit("non-finite ridge coefficients".into()));
    }

    Ok(RidgeBasisModel {
        expansion,
        means,
        scales,
        coefficients: beta.iter().copied().collect(),
        intercept: y_mean,
        p,
        provenance: Provenance {
            learner: "ridge_basis".into(),
            config: config.id(),
            seed: data.origin.map(|(_, s)| s),
        },
    })
}

impl PredictionModel for RidgeBasisModel {
    fn n_features(&self) -> usize {
        self.p
    }

    fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    fn predict_unchecked(&self, x: ArrayView2<'_, f64>) -> Array1<f64> {
        let (mut buf, mut scratch) = (Vec::with_capacity(self.n_columns()), Vec::new());
        x.rows()
            .into_iter()
            .map(|r| self.predict_row(r, &mut buf, &mut scratch))
            .collect()
    }
}
