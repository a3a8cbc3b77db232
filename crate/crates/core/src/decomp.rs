//! Error components of effect estimates across repeated fits, the split of
//! total variance into model and estimation variance, grid aggregation and
//! the model-variance bound diagnostics.

use std::sync::Arc;

use ndarray::{Array1, Array2, Array3, Axis};

use crate::data::Dataset;
use crate::dgp::DgpSpec;
use crate::effects::{bin_index, EffectGrid};
use crate::error::{Error, Result};
use crate::models::PredictionModel;

/// Centered curves from `M` repetitions aligned on one grid, plus the
/// ground truth and optionally `R` re-estimates per repetition.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveEnsemble {
    /// `M x G'`
    pub curves: Array2<f64>,
    /// `M x R x G'`
    pub repeats: Option<Array3<f64>>,
    pub truth: Array1<f64>,
}

impl CurveEnsemble {
    pub fn new(curves: Array2<f64>, truth: Array1<f64>) -> Result<Self> {
        if curves.ncols() != truth.len() {
            return Err(Error::Dimension {
                expected: truth.len(),
                got: curves.ncols(),
            });
        }
        Ok(CurveEnsemble {
            curves,
            repeats: None,
            truth,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>], truth: Vec<f64>) -> Result<Self> {
        let g = truth.len();
        let mut curves = Array2::zeros((rows.len(), g));
        for (m, row) in rows.iter().enumerate() {
            if row.len() != g {
                return Err(Error::Dimension {
                    expected: g,
                    got: row.len(),
                });
            }
            curves.row_mut(m).assign(&Array1::from(row.clone()));
        }
        CurveEnsemble::new(curves, Array1::from(truth))
    }

    pub fn with_repeats(mut self, repeats: Array3<f64>) -> Result<Self> {
        if repeats.shape()[2] != self.truth.len() {
            return Err(Error::Dimension {
                expected: self.truth.len(),
                got: repeats.shape()[2],
            });
        }
        self.repeats = Some(repeats);
        Ok(self)
    }

    pub fn m(&self) -> usize {
        self.curves.nrows()
    }

    pub fn n_points(&self) -> usize {
        self.truth.len()
    }
}

fn require_m(ens: &CurveEnsemble, min: usize) -> Result<()> {
    if ens.m() < min {
        return Err(Error::Estimation(format!("need at least {min} repetitions, got {}", ens.m())));
    }
    Ok(())
}

pub fn mse_hat(ens: &CurveEnsemble) -> Result<Array1<f64>> {
    require_m(ens, 1)?;
    let m = ens.m() as f64;
    let mut out = Array1::zeros(ens.n_points());
    for row in ens.curves.rows() {
        for ((o, t), c) in out.iter_mut().zip(&ens.truth).zip(row) {
            *o += (t - c) * (t - c) / m;
        }
    }
    Ok(out)
}

/// Truth minus the mean curve, signed.
pub fn bias_hat(ens: &CurveEnsemble) -> Result<Array1<f64>> {
    require_m(ens, 1)?;
    let mean = ens.curves.mean_axis(Axis(0)).expect("non-empty");
    Ok(&ens.truth - &mean)
}

/// Unbiased (divisor `M - 1`) variance across repetitions.
pub fn var_hat(ens: &CurveEnsemble) -> Result<Array1<f64>> {
    require_m(ens, 2)?;
    Ok(ens.curves.var_axis(Axis(0), 1.0))
}

/// Within-repetition variance over the `R` re-estimates, pooled over `M`.
pub fn var_est_hat(ens: &CurveEnsemble) -> Result<Array1<f64>> {
    let repeats = ens
        .repeats
        .as_ref()
        .ok_or_else(|| Error::Estimation("no repeat block for estimation variance".into()))?;
    let (m, r, g) = repeats.dim();
    if m == 0 || r < 2 {
        return Err(Error::Estimation(format!("need M >= 1 and R >= 2, got M = {m}, R = {r}")));
    }
    let mut out = Array1::zeros(g);
    for block in repeats.outer_iter() {
        out += &block.var_axis(Axis(0), 1.0);
    }
    Ok(out / m as f64)
}

/// Model variance as total minus estimation variance; `None` where the
/// difference is negative.
pub fn split_variance(var_total: &[f64], var_est: &[f64]) -> Result<Vec<Option<f64>>> {
    if var_total.len() != var_est.len() {
        return Err(Error::Dimension {
            expected: var_total.len(),
            got: var_est.len(),
        });
    }
    Ok(var_total
        .iter()
        .zip(var_est)
        .map(|(t, e)| {
            let d = t - e;
            (d >= 0.0).then_some(d)
        })
        .collect())
}

/// Grid average. NaN for an empty vector.
pub fn aggregate(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Grid average of absolute values, used for bias.
pub fn aggregate_abs(values: &[f64]) -> f64 {
    values.iter().map(|v| v.abs()).sum::<f64>() / values.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorReport {
    pub mse: Vec<f64>,
    pub bias: Vec<f64>,
    pub var: Vec<f64>,
    pub var_est: Option<Vec<f64>>,
    pub var_model: Option<Vec<Option<f64>>>,
    pub m: usize,
    pub r: Option<usize>,
}

impl ErrorReport {
    pub fn from_ensemble(ens: &CurveEnsemble) -> Result<Self> {
        let var = var_hat(ens)?.to_vec();
        let (var_est, var_model, r) = match &ens.repeats {
            Some(rep) => {
                let ve = var_est_hat(ens)?.to_vec();
                let vm = split_variance(&var, &ve)?;
                (Some(ve), Some(vm), Some(rep.dim().1))
            }
            None => (None, None, None),
        };
        Ok(ErrorReport {
            mse: mse_hat(ens)?.to_vec(),
            bias: bias_hat(ens)?.to_vec(),
            var,
            var_est,
            var_model,
            m: ens.m(),
            r,
        })
    }

    pub fn mse_agg(&self) -> f64 {
        aggregate(&self.mse)
    }

    pub fn bias_agg(&self) -> f64 {
        aggregate_abs(&self.bias)
    }

    pub fn var_agg(&self) -> f64 {
        aggregate(&self.var)
    }

    pub fn var_est_agg(&self) -> Option<f64> {
        self.var_est.as_deref().map(aggregate)
    }

    /// Grid-averaged model variance, split at the aggregate level; `None`
    /// when there is no repeat block or the averaged estimation variance
    /// exceeds the averaged total.
    pub fn var_model_agg(&self) -> Option<f64> {
        let d = self.var_agg() - self.var_est_agg()?;
        (d >= 0.0).then_some(d)
    }

    pub fn negative_var_model_points(&self) -> usize {
        self.var_model
            .as_ref()
            .map_or(0, |v| v.iter().filter(|x| x.is_none()).count())
    }
}

/// Relative Monte Carlo slack allowed on the right-hand side of the bounds.
pub const BOUND_SLACK: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub satisfied: bool,
}

impl BoundCheck {
    fn new(lhs: f64, rhs: f64) -> Self {
        BoundCheck {
            lhs,
            rhs,
            satisfied: lhs <= rhs * (1.0 + BOUND_SLACK) + 1e-12 * (1.0 + rhs.abs()),
        }
    }
}

/// Both sides of the model-variance bounds at every evaluated grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    /// Variance across models of the PD against the mean pointwise
    /// prediction variance.
    pub pd: Vec<BoundCheck>,
    /// Variance across models of the uncentered binned ALE at edge `z_e`
    /// against `e` times the summed per-bin mean finite-difference variance.
    pub ale: Vec<BoundCheck>,
}

impl BoundReport {
    pub fn all_satisfied(&self) -> bool {
        self.pd.iter().chain(&self.ale).all(|c| c.satisfied)
    }
}

fn sample_var(values: &[f64]) -> f64 {
    let m = values.len() as f64;
    let mean = values.iter().sum::<f64>() / m;
    values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (m - 1.0)
}

/// Monte Carlo evaluation of both bounds for an ensemble of models.
///
/// All models share one draw of `n_mc` feature rows. PD terms average over
/// the rows; ALE terms use the rows falling into each bin, which are draws
/// from the conditional law within that bin.
pub fn check_variance_bounds(
    models: &[Arc<dyn PredictionModel>],
    spec: &DgpSpec,
    grid: &Arc<EffectGrid>,
    n_mc: usize,
    seed: u64,
) -> Result<BoundReport> {
    if models.len() < 2 {
        return Err(Error::Estimation("bound check needs at least 2 models".into()));
    }
    if n_mc == 0 {
        return Err(Error::Oracle("bound check needs Monte Carlo draws".into()));
    }
    let feature = grid.feature();
    let n_models = models.len();
    let x = spec.sample_features(n_mc, seed);
    let g = grid.n_evaluated();

    // PD side, streamed over row chunks
    let mut pd_means = Array2::<f64>::zeros((n_models, g));
    let mut rhs_pd = vec![0.0; g];
    let chunk = (1 << 16) / g.max(1);
    let mut start = 0;
    let mut per_model = vec![0.0; n_models];
    while start < n_mc {
        let end = (start + chunk.max(1)).min(n_mc);
        let view = x.slice(ndarray::s![start..end, ..]);
        let ices = models
            .iter()
            .map(|m| m.ice(view, feature, grid.evaluated()))
            .collect::<Result<Vec<_>>>()?;
        for (mi, ice) in ices.iter().enumerate() {
            let mut row = pd_means.row_mut(mi);
            row += &(ice.sum_axis(Axis(0)) / n_mc as f64);
        }
        for i in 0..end - start {
            for (j, r) in rhs_pd.iter_mut().enumerate() {
                for (mi, ice) in ices.iter().enumerate() {
                    per_model[mi] = ice[(i, j)];
                }
                *r += sample_var(&per_model) / n_mc as f64;
            }
        }
        start = end;
    }
    let pd = (0..g)
        .map(|j| BoundCheck::new(sample_var(&pd_means.column(j).to_vec()), rhs_pd[j]))
        .collect();

    // ALE side
    let edges = grid.points();
    let k = grid.n_bins();
    let assignment: Vec<usize> = x.column(feature).iter().map(|&v| bin_index(edges, v)).collect();
    let mut counts = vec![0usize; k];
    assignment.iter().for_each(|&b| counts[b] += 1);
    let mut lower = x.clone();
    let mut upper = x.clone();
    for (i, &b) in assignment.iter().enumerate() {
        lower[(i, feature)] = edges[b];
        upper[(i, feature)] = edges[b + 1];
    }
    let diffs = models
        .iter()
        .map(|m| Ok(&m.predict(upper.view())? - &m.predict(lower.view())?))
        .collect::<Result<Vec<Array1<f64>>>>()?;
    let mut bin_means = Array2::<f64>::zeros((n_models, k));
    let mut bin_var = vec![0.0; k];
    for (i, &b) in assignment.iter().enumerate() {
        for (mi, d) in diffs.iter().enumerate() {
            per_model[mi] = d[i];
            bin_means[(mi, b)] += d[i] / counts[b] as f64;
        }
        bin_var[b] += sample_var(&per_model) / counts[b] as f64;
    }
    let mut cumulative = vec![0.0; n_models];
    let mut rhs_sum = 0.0;
    let mut ale = Vec::with_capacity(g);
    for e in 1..=g {
        for (mi, c) in cumulative.iter_mut().enumerate() {
            *c += bin_means[(mi, e - 1)];
        }
        rhs_sum += bin_var[e - 1];
        ale.push(BoundCheck::new(sample_var(&cumulative), e as f64 * rhs_sum));
    }
    Ok(BoundReport { pd, ale })
}

/// Mean prediction-variance side of the PD bound on an explicit sample.
/// Exposed for tests that want to compare against a hand-rolled value.
pub fn pointwise_model_variance(
    models: &[Arc<dyn PredictionModel>],
    data: &Dataset,
    grid: &EffectGrid,
) -> Result<Vec<f64>> {
    if models.len() < 2 {
        return Err(Error::Estimation("need at least 2 models".into()));
    }
    let ices = models
        .iter()
        .map(|m| m.ice(data.features().view(), grid.feature(), grid.evaluated()))
        .collect::<Result<Vec<_>>>()?;
    let n = data.n() as f64;
    let mut per_model = vec![0.0; models.len()];
    Ok((0..grid.n_evaluated())
        .map(|j| {
            (0..data.n())
                .map(|i| {
                    for (mi, ice) in ices.iter().enumerate() {
                        per_model[mi] = ice[(i, j)];
                    }
                    sample_var(&per_model) / n
                })
                .sum()
        })
        .collect())
}
