//! PD and ALE estimators on a shared grid.
//!
//! Grids are built from theoretical quantiles at probabilities `(g + 1/2)/G`.
//! The same points serve as ALE bin edges, so a grid of `G` points defines
//! `K = G - 1` bins. The first and last point are kept for accumulation but
//! excluded from every reported curve.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use ndarray::{s, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::dgp::DgpSpec;
use crate::error::{Error, Result};
use crate::models::{GroundTruthModel, PredictionModel};
use crate::seed;

pub const DEFAULT_GRID_SIZE: usize = 100;
pub const DEFAULT_GROUND_TRUTH_N: usize = 10_000;

const CHUNK_ROWS: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EffectKind {
    Pd,
    Ale,
}

impl EffectKind {
    pub fn name(self) -> &'static str {
        match self {
            EffectKind::Pd => "pd",
            EffectKind::Ale => "ale",
        }
    }
}

impl fmt::Display for EffectKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EffectKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pd" => Ok(EffectKind::Pd),
            "ale" => Ok(EffectKind::Ale),
            _ => Err(Error::Config(format!("unknown effect kind `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridSource {
    TheoreticalQuantile,
    Explicit,
}

/// Strictly increasing evaluation points for one feature.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectGrid {
    feature: usize,
    points: Vec<f64>,
    source: GridSource,
}

impl EffectGrid {
    /// Theoretical-quantile grid of `g` points for `feature`.
    pub fn theoretical(spec: &DgpSpec, feature: usize, g: usize) -> Result<Self> {
        if g < 3 {
            return Err(Error::Config(format!("grid needs at least 3 points, got {g}")));
        }
        let points = (0..g)
            .map(|i| spec.theoretical_quantile(feature, (i as f64 + 0.5) / g as f64))
            .collect::<Result<Vec<_>>>()?;
        Ok(EffectGrid {
            feature,
            points,
            source: GridSource::TheoreticalQuantile,
        })
    }

    pub fn explicit(feature: usize, points: Vec<f64>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::Config("grid needs at least 2 points".into()));
        }
        if !points.windows(2).all(|w| w[0] < w[1]) || points.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("grid points must be finite and strictly increasing".into()));
        }
        Ok(EffectGrid {
            feature,
            points,
            source: GridSource::Explicit,
        })
    }

    pub fn feature(&self) -> usize {
        self.feature
    }

    pub fn source(&self) -> GridSource {
        self.source
    }

    /// All points, including the two masked boundary points.
    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Number of ALE bins defined by using the points as edges.
    pub fn n_bins(&self) -> usize {
        self.points.len() - 1
    }

    /// The reported points: everything but the first and last.
    pub fn evaluated(&self) -> &[f64] {
        &self.points[1..self.points.len() - 1]
    }

    pub fn n_evaluated(&self) -> usize {
        self.points.len() - 2
    }

    /// Whether grid point `g` is reported.
    pub fn is_evaluated(&self, g: usize) -> bool {
        g > 0 && g + 1 < self.points.len()
    }
}

pub fn build_grid(spec: &DgpSpec, feature: usize, g: usize) -> Result<EffectGrid> {
    EffectGrid::theoretical(spec, feature, g)
}

/// Centering weights for a curve over `grid`. With an equal-probability
/// grid both PD (marginal measure) and ALE (bin probabilities 1/K) reduce
/// to uniform weights over the evaluated points.
pub fn default_weights(grid: &EffectGrid) -> Vec<f64> {
    let m = grid.n_evaluated();
    vec![1.0 / m as f64; m]
}

#[derive(Debug, Clone, PartialEq)]
enum SeSource {
    None,
    /// Standard errors of the PD after uniform centering of each ICE row.
    Pd { uniform_centered: Vec<f64> },
    /// Per-bin variance of the bin mean, `s_k^2 / n_k`.
    Ale { bin_mean_variance: Vec<f64> },
}

/// A PD or ALE curve reported on the evaluated points of its grid.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectCurve {
    pub feature: usize,
    pub kind: EffectKind,
    pub centered: bool,
    pub grid: Arc<EffectGrid>,
    /// Values at `grid.evaluated()`.
    pub values: Vec<f64>,
    /// Pointwise Monte Carlo standard errors; NaN where unknown.
    pub std_errors: Vec<f64>,
    pub n_used: usize,
    /// Per-bin sample counts (ALE only).
    pub bin_counts: Vec<usize>,
    pub empty_bins: Vec<bool>,
    se_source: SeSource,
}

impl EffectCurve {
    /// A curve with known values and no uncertainty information.
    pub fn from_values(kind: EffectKind, grid: Arc<EffectGrid>, values: Vec<f64>, centered: bool) -> Result<Self> {
        if values.len() != grid.n_evaluated() {
            return Err(Error::Dimension {
                expected: grid.n_evaluated(),
                got: values.len(),
            });
        }
        Ok(EffectCurve {
            feature: grid.feature(),
            kind,
            centered,
            std_errors: vec![0.0; values.len()],
            grid,
            values,
            n_used: 0,
            bin_counts: Vec::new(),
            empty_bins: Vec::new(),
            se_source: SeSource::None,
        })
    }

    pub fn n_empty_bins(&self) -> usize {
        self.empty_bins.iter().filter(|e| **e).count()
    }

    /// Centered with [`default_weights`].
    pub fn centered(self) -> Result<Self> {
        let w = default_weights(&self.grid);
        center_curve(&self, &w)
    }
}

/// ICE matrix over all grid points, `n x G`.
pub fn estimate_ice(model: &dyn PredictionModel, data: &Dataset, grid: &EffectGrid) -> Result<Array2<f64>> {
    if data.is_empty() {
        return Err(Error::Estimation("ICE curves need at least one row".into()));
    }
    model.ice(data.features().view(), grid.feature(), grid.points())
}

/// Running column means and squared deviations, merged chunk by chunk.
struct ColumnMoments {
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl ColumnMoments {
    fn new(cols: usize) -> Self {
        ColumnMoments {
            n: 0,
            mean: vec![0.0; cols],
            m2: vec![0.0; cols],
        }
    }

    fn merge_chunk(&mut self, chunk: &Array2<f64>) {
        let nb = chunk.nrows();
        if nb == 0 {
            return;
        }
        let na = self.n;
        let total = (na + nb) as f64;
        for (j, col) in chunk.axis_iter(Axis(1)).enumerate() {
            let mb = col.sum() / nb as f64;
            let m2b: f64 = col.iter().map(|v| (v - mb) * (v - mb)).sum();
            let delta = mb - self.mean[j];
            self.mean[j] += delta * nb as f64 / total;
            self.m2[j] += m2b + delta * delta * na as f64 * nb as f64 / total;
        }
        self.n += nb;
    }

    fn standard_errors(&self) -> Vec<f64> {
        if self.n < 2 {
            return vec![0.0; self.mean.len()];
        }
        let n = self.n as f64;
        self.m2.iter().map(|m2| (m2 / (n - 1.0) / n).sqrt()).collect()
    }
}

/// Uncentered PD on the evaluated grid points; ICE rows are streamed in
/// chunks and never fully materialized.
pub fn estimate_pd(model: &dyn PredictionModel, data: &Dataset, grid: &Arc<EffectGrid>) -> Result<EffectCurve> {
    let n = data.n();
    if n == 0 {
        return Err(Error::Estimation("PD needs at least one row".into()));
    }
    let m = grid.n_evaluated();
    let mut raw = ColumnMoments::new(m);
    let mut centered = ColumnMoments::new(m);
    let x = data.features();
    let mut start = 0;
    while start < n {
        let end = (start + CHUNK_ROWS).min(n);
        let ice = model.ice(x.slice(s![start..end, ..]), grid.feature(), grid.evaluated())?;
        raw.merge_chunk(&ice);
        let mut c = ice;
        for mut row in c.rows_mut() {
            let mean = row.sum() / m as f64;
            row -= mean;
        }
        centered.merge_chunk(&c);
        start = end;
    }
    Ok(EffectCurve {
        feature: grid.feature(),
        kind: EffectKind::Pd,
        centered: false,
        grid: Arc::clone(grid),
        std_errors: raw.standard_errors(),
        values: raw.mean,
        n_used: n,
        bin_counts: Vec::new(),
        empty_bins: Vec::new(),
        se_source: SeSource::Pd {
            uniform_centered: centered.standard_errors(),
        },
    })
}

/// Assignment of samples to the intervals `(z_{k-1}, z_k]` spanned by the
/// grid points. Samples at or below `z_0` go to the first bin, samples above
/// `z_K` to the last.
#[derive(Debug, Clone, PartialEq)]
pub struct BinPartition {
    grid: Arc<EffectGrid>,
    /// Sample counts per bin, `K` entries.
    pub counts: Vec<usize>,
    /// 0-based bin index per sample.
    pub assignment: Vec<usize>,
}

impl BinPartition {
    pub fn edges(&self) -> &[f64] {
        self.grid.points()
    }

    pub fn grid(&self) -> &Arc<EffectGrid> {
        &self.grid
    }

    pub fn n_bins(&self) -> usize {
        self.counts.len()
    }

    pub fn all_nonempty(&self) -> bool {
        self.counts.iter().all(|&c| c > 0)
    }
}

/// 0-based bin index of `x` under the clamping rule.
pub fn bin_index(edges: &[f64], x: f64) -> usize {
    let k = edges.len() - 1;
    edges.partition_point(|&z| z < x).clamp(1, k) - 1
}

pub fn make_bins(grid: &Arc<EffectGrid>, data: &Dataset) -> Result<BinPartition> {
    if grid.feature() >= data.p() {
        return Err(Error::Domain(format!("feature index {} out of range", grid.feature())));
    }
    let edges = grid.points();
    let mut counts = vec![0; grid.n_bins()];
    let assignment: Vec<usize> = data
        .features()
        .column(grid.feature())
        .iter()
        .map(|&v| {
            let b = bin_index(edges, v);
            counts[b] += 1;
            b
        })
        .collect();
    Ok(BinPartition {
        grid: Arc::clone(grid),
        counts,
        assignment,
    })
}

/// Finite differences `f(z_k, x_C) - f(z_{k-1}, x_C)` for every row of `x`
/// in its assigned bin.
fn finite_differences(
    model: &dyn PredictionModel,
    x: &Array2<f64>,
    feature: usize,
    edges: &[f64],
    assignment: &[usize],
) -> Result<Vec<f64>> {
    let mut lower = x.clone();
    let mut upper = x.clone();
    for (i, &b) in assignment.iter().enumerate() {
        lower[(i, feature)] = edges[b];
        upper[(i, feature)] = edges[b + 1];
    }
    let lo = model.predict(lower.view())?;
    let hi = model.predict(upper.view())?;
    Ok(hi.iter().zip(lo.iter()).map(|(h, l)| h - l).collect())
}

/// Accumulate per-bin mean differences into an uncentered curve.
fn accumulate_bins(
    grid: &Arc<EffectGrid>,
    diffs: &[f64],
    assignment: &[usize],
    n_used: usize,
) -> EffectCurve {
    let k = grid.n_bins();
    let mut counts = vec![0usize; k];
    let mut mean = vec![0.0; k];
    let mut m2 = vec![0.0; k];
    for (&d, &b) in diffs.iter().zip(assignment) {
        counts[b] += 1;
        let delta = d - mean[b];
        mean[b] += delta / counts[b] as f64;
        m2[b] += delta * (d - mean[b]);
    }
    let bin_mean_variance: Vec<f64> = (0..k)
        .map(|b| {
            if counts[b] > 1 {
                m2[b] / (counts[b] - 1) as f64 / counts[b] as f64
            } else {
                0.0
            }
        })
        .collect();
    // uncentered value at edge e is the sum of the first e bin means
    let mut values = Vec::with_capacity(grid.n_evaluated());
    let mut variances = Vec::with_capacity(grid.n_evaluated());
    let (mut acc, mut var) = (0.0, 0.0);
    for e in 1..grid.len() - 1 {
        acc += mean[e - 1];
        var += bin_mean_variance[e - 1];
        values.push(acc);
        variances.push(var);
    }
    EffectCurve {
        feature: grid.feature(),
        kind: EffectKind::Ale,
        centered: false,
        grid: Arc::clone(grid),
        values,
        std_errors: variances.into_iter().map(f64::sqrt).collect(),
        n_used,
        empty_bins: counts.iter().map(|&c| c == 0).collect(),
        bin_counts: counts,
        se_source: SeSource::Ale { bin_mean_variance },
    }
}

/// Uncentered ALE at the evaluated edges. Empty bins contribute zero and are
/// flagged in `empty_bins`.
pub fn estimate_ale(model: &dyn PredictionModel, data: &Dataset, bins: &BinPartition) -> Result<EffectCurve> {
    let n = data.n();
    if n == 0 {
        return Err(Error::Estimation("every ALE bin is empty".into()));
    }
    if bins.assignment.len() != n {
        return Err(Error::Dimension {
            expected: bins.assignment.len(),
            got: n,
        });
    }
    let grid = bins.grid();
    let diffs = finite_differences(model, data.features(), grid.feature(), grid.points(), &bins.assignment)?;
    Ok(accumulate_bins(grid, &diffs, &bins.assignment, n))
}

/// Subtract the weighted mean of the values.
pub fn center_curve(curve: &EffectCurve, weights: &[f64]) -> Result<EffectCurve> {
    let m = curve.values.len();
    if weights.len() != m {
        return Err(Error::Dimension {
            expected: m,
            got: weights.len(),
        });
    }
    let total: f64 = weights.iter().sum();
    if weights.iter().any(|w| w.is_nan() || *w < 0.0) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::Domain("centering weights must be nonnegative and sum to 1".into()));
    }
    let offset: f64 = weights.iter().zip(&curve.values).map(|(w, v)| w * v).sum();
    let values = curve.values.iter().map(|v| v - offset).collect();
    let uniform = weights.iter().all(|w| (w - 1.0 / m as f64).abs() < 1e-12);
    let std_errors = match &curve.se_source {
        SeSource::Pd { uniform_centered } if uniform => uniform_centered.clone(),
        SeSource::Ale { bin_mean_variance } => centered_ale_errors(bin_mean_variance, weights),
        SeSource::None if curve.std_errors.iter().all(|s| *s == 0.0) => curve.std_errors.clone(),
        _ => vec![f64::NAN; m],
    };
    Ok(EffectCurve {
        values,
        std_errors,
        centered: true,
        ..curve.clone()
    })
}

/// Standard errors of the centered ALE. The centered value at evaluated
/// edge `e` is `sum_k c_{e,k} D_k` with bin means `D_k` independent given the
/// bin assignment and `c_{e,k} = 1[k < e] - sum_{j > k} w_j`.
fn centered_ale_errors(bin_mean_variance: &[f64], weights: &[f64]) -> Vec<f64> {
    let m = weights.len();
    // tail[k] = sum of weights of evaluated edges j (1-based edge index j = idx + 1) with j > k
    let mut tail = vec![0.0; bin_mean_variance.len() + 1];
    for k in (0..bin_mean_variance.len()).rev() {
        let w = if k < m { weights[k] } else { 0.0 };
        tail[k] = tail[k + 1] + w;
    }
    (0..m)
        .map(|idx| {
            let e = idx + 1;
            bin_mean_variance
                .iter()
                .enumerate()
                .map(|(k, v)| {
                    let c = if k < e { 1.0 } else { 0.0 } - tail[k];
                    c * c * v
                })
                .sum::<f64>()
                .sqrt()
        })
        .collect()
}

fn check_grid_feature(grid: &EffectGrid, feature: usize) -> Result<()> {
    if grid.feature() != feature {
        return Err(Error::Domain(format!(
            "grid belongs to feature {}, not {feature}",
            grid.feature()
        )));
    }
    Ok(())
}

/// Centered effect of `model` estimated on `data` with the default weights.
pub fn estimate_effect(
    model: &dyn PredictionModel,
    data: &Dataset,
    kind: EffectKind,
    grid: &Arc<EffectGrid>,
) -> Result<EffectCurve> {
    let curve = match kind {
        EffectKind::Pd => estimate_pd(model, data, grid)?,
        EffectKind::Ale => {
            let bins = make_bins(grid, data)?;
            estimate_ale(model, data, &bins)?
        }
    };
    curve.centered()
}

/// Centered effect of the DGP's ground-truth function, estimated on `n_gt`
/// fresh samples with the shared grid (and therefore the same ALE bins as
/// any model estimate on that grid).
pub fn estimate_ground_truth_effect(
    spec: &DgpSpec,
    feature: usize,
    kind: EffectKind,
    grid: &Arc<EffectGrid>,
    n_gt: usize,
    seed: u64,
) -> Result<EffectCurve> {
    check_grid_feature(grid, feature)?;
    if n_gt == 0 {
        return Err(Error::Estimation("ground-truth effect needs at least one sample".into()));
    }
    let model = GroundTruthModel::new(spec.clone());
    let data = Dataset::from_features(spec.sample_features(n_gt, seed));
    estimate_effect(&model, &data, kind, grid)
}

/// Pointwise mean of curves that share a grid and kind. Standard errors
/// combine as for a mean of independent estimates; bin counts add up and a
/// bin is flagged empty if it was empty in any input.
pub fn average_curves(curves: &[EffectCurve]) -> Result<EffectCurve> {
    let first = curves
        .first()
        .ok_or_else(|| Error::Estimation("no curves to average".into()))?;
    let k = curves.len() as f64;
    let m = first.values.len();
    let mut values = vec![0.0; m];
    let mut var = vec![0.0; m];
    let mut bin_counts = vec![0usize; first.bin_counts.len()];
    let mut empty_bins = vec![false; first.empty_bins.len()];
    let mut n_used = 0;
    for c in curves {
        if c.grid != first.grid || c.kind != first.kind || c.centered != first.centered {
            return Err(Error::Estimation("averaged curves must share grid, kind and centering".into()));
        }
        for i in 0..m {
            values[i] += c.values[i] / k;
            var[i] += c.std_errors[i] * c.std_errors[i] / (k * k);
        }
        for (acc, b) in bin_counts.iter_mut().zip(&c.bin_counts) {
            *acc += b;
        }
        for (acc, e) in empty_bins.iter_mut().zip(&c.empty_bins) {
            *acc |= e;
        }
        n_used += c.n_used;
    }
    Ok(EffectCurve {
        feature: first.feature,
        kind: first.kind,
        centered: first.centered,
        grid: Arc::clone(&first.grid),
        values,
        std_errors: var.into_iter().map(f64::sqrt).collect(),
        n_used,
        bin_counts,
        empty_bins,
        se_source: SeSource::None,
    })
}

/// Closed-form effect evaluated on the grid, centered with the same weights
/// as estimated curves so the two are directly comparable.
pub fn analytic_effect(spec: &DgpSpec, feature: usize, kind: EffectKind, grid: &Arc<EffectGrid>) -> Result<EffectCurve> {
    check_grid_feature(grid, feature)?;
    let values = grid
        .evaluated()
        .iter()
        .map(|&x| match kind {
            EffectKind::Pd => spec.analytic_pd(feature, x, false),
            EffectKind::Ale => spec.analytic_ale(feature, x, false),
        })
        .collect::<Result<Vec<_>>>()?;
    EffectCurve::from_values(kind, Arc::clone(grid), values, false)?.centered()
}

/// Monte Carlo approximation of the binned population ALE of `model`:
/// per bin, the mean finite difference over `n_mc` draws from the joint
/// feature law conditioned on falling into that bin (same clamping rule as
/// [`make_bins`]). Conditioning is done by stratified rejection sampling.
pub fn binned_population_ale(
    spec: &DgpSpec,
    model: &dyn PredictionModel,
    bins: &BinPartition,
    n_mc: usize,
    seed: u64,
) -> Result<EffectCurve> {
    if n_mc == 0 {
        return Err(Error::Oracle("need at least one draw per bin".into()));
    }
    let grid = bins.grid();
    let feature = grid.feature();
    let edges = grid.points();
    let k = grid.n_bins();
    let p = spec.p();
    let conditional = sample_into_bins(spec, feature, edges, n_mc, seed)?;

    let mut x = Array2::zeros((k * n_mc, p));
    let mut assignment = Vec::with_capacity(k * n_mc);
    for (b, rows) in conditional.iter().enumerate() {
        for (i, row) in rows.chunks_exact(p).enumerate() {
            x.row_mut(b * n_mc + i).assign(&ndarray::ArrayView1::from(row));
            assignment.push(b);
        }
    }
    let diffs = finite_differences(model, &x, feature, edges, &assignment)?;
    Ok(accumulate_bins(grid, &diffs, &assignment, k * n_mc))
}

/// `n_mc` feature rows per bin, flattened row-major.
pub(crate) fn sample_into_bins(
    spec: &DgpSpec,
    feature: usize,
    edges: &[f64],
    n_mc: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let k = edges.len() - 1;
    let p = spec.p();
    let mut buckets: Vec<Vec<f64>> = vec![Vec::with_capacity(n_mc * p); k];
    let mut missing = k;
    let cap = (100 * k * n_mc).max(1_000_000);
    let chunk = (k * n_mc).clamp(1000, 200_000);
    let mut drawn = 0;
    let mut round = 0u64;
    while missing > 0 {
        if drawn >= cap {
            let empty = buckets.iter().position(|b| b.len() < n_mc * p).unwrap_or(0);
            return Err(Error::Oracle(format!(
                "bin {} is (nearly) unreachable under the feature law",
                empty + 1
            )));
        }
        let x = spec.sample_features(chunk, seed::derive_seed(seed, &[round]));
        round += 1;
        drawn += chunk;
        for row in x.rows() {
            let b = bin_index(edges, row[feature]);
            if buckets[b].len() < n_mc * p {
                buckets[b].extend(row.iter());
                if buckets[b].len() == n_mc * p {
                    missing -= 1;
                }
            }
        }
    }
    Ok(buckets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::{NoiseCalibration, Setting};
    use crate::models::FnModel;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn grid(points: Vec<f64>) -> Arc<EffectGrid> {
        Arc::new(EffectGrid::explicit(0, points).unwrap())
    }

    fn data(rows: Array2<f64>) -> Dataset {
        Dataset::from_features(rows)
    }

    #[test]
    fn uniform_grid_points_and_mask() {
        let fr = DgpSpec::new(Setting::Friedman1);
        let g = build_grid(&fr, 0, 4).unwrap();
        for (a, b) in g.points().iter().zip([0.125, 0.375, 0.625, 0.875]) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-15);
        }
        assert_eq!(g.evaluated(), &g.points()[1..3]);
        assert!(!g.is_evaluated(0) && g.is_evaluated(1) && g.is_evaluated(2) && !g.is_evaluated(3));
        assert_eq!(build_grid(&fr, 0, 3).unwrap().n_evaluated(), 1);
        assert!(build_grid(&fr, 0, 2).is_err());
    }

    #[test]
    fn normal_grid_midpoint() {
        let snc = DgpSpec::new(Setting::SimpleNormalCorrelated);
        let g = build_grid(&snc, 0, 100).unwrap();
        // independent oracle: bisection on the normal CDF
        let target = 0.505;
        let (mut lo, mut hi) = (-1.0f64, 1.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if crate::Marginal::StandardNormal.cdf(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        assert_abs_diff_eq!(g.points()[50], lo, epsilon = 1e-9);
        assert_abs_diff_eq!(g.points()[50], 0.012533, epsilon = 1e-5);
    }

    #[test]
    fn explicit_grid_must_increase() {
        assert!(EffectGrid::explicit(0, vec![0.0, 0.0, 1.0]).is_err());
        assert!(EffectGrid::explicit(0, vec![1.0]).is_err());
    }

    #[test]
    fn ice_of_additive_model_differs_by_row_constants() {
        let m = FnModel::new(2, "additive", |r| r[0].sin() + r[1] * r[1]);
        let x = DgpSpec::new(Setting::SimpleNormalCorrelated).sample_features(20, 1);
        let d = data(x.slice(s![.., 0..2]).to_owned());
        let g = grid(vec![-1.0, 0.0, 0.5, 2.0]);
        let ice = estimate_ice(&m, &d, &g).unwrap();
        for i in 0..20 {
            let shift = d.features()[(i, 1)].powi(2);
            for (gi, z) in g.points().iter().enumerate() {
                assert_abs_diff_eq!(ice[(i, gi)] - shift, z.sin(), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn ice_and_pd_hand_cases() {
        let product = FnModel::new(2, "product", |r| r[0] * r[1]);
        let d = data(array![[0.3, -1.0], [0.9, 1.0]]);
        let g = grid(vec![-2.0, -1.0, 0.5, 3.0]);
        let ice = estimate_ice(&product, &d, &g).unwrap();
        for (gi, z) in g.points().iter().enumerate() {
            assert_eq!(ice[(0, gi)], -z);
            assert_eq!(ice[(1, gi)], *z);
        }
        let pd = estimate_pd(&product, &d, &g).unwrap();
        assert!(pd.values.iter().all(|v| *v == 0.0));
        assert_eq!(pd.n_used, 2);

        let constant = FnModel::new(2, "constant", |_| 3.5);
        assert!(estimate_ice(&constant, &d, &g).unwrap().iter().all(|v| *v == 3.5));
        assert!(estimate_pd(&constant, &d, &g).unwrap().values.iter().all(|v| *v == 3.5));
        assert!(estimate_pd(&constant, &data(Array2::zeros((0, 2))), &g).is_err());
    }

    #[test]
    fn pd_matches_analytic_on_holdout() {
        let snc = DgpSpec::new(Setting::SimpleNormalCorrelated);
        let g = Arc::new(EffectGrid::explicit(0, vec![-1.0, 0.0, 1.0, 2.0]).unwrap());
        let model = GroundTruthModel::new(snc.clone());
        let d = Dataset::from_features(snc.sample_features(100_000, 12));
        let pd = estimate_pd(&model, &d, &g).unwrap();
        // evaluated point 1 is x1 = 1
        let expected = snc.analytic_pd(0, 1.0, false).unwrap();
        assert_abs_diff_eq!(expected, 1.5);
        assert!((pd.values[1] - expected).abs() < 3.0 * pd.std_errors[1]);
    }

    #[test]
    fn bins_hand_cases() {
        let g = grid(vec![0.0, 1.0, 2.0]);
        let b = make_bins(&g, &data(array![[0.5], [1.5], [1.5]])).unwrap();
        assert_eq!(b.counts, vec![1, 2]);
        assert_eq!(b.assignment, vec![0, 1, 1]);
        let below = make_bins(&g, &data(array![[-3.0], [0.0], [-0.1]])).unwrap();
        assert_eq!(below.counts, vec![3, 0]);
        let above = make_bins(&g, &data(array![[7.0], [2.0], [1.0]])).unwrap();
        assert_eq!(above.counts, vec![1, 2]);
        assert_eq!(above.assignment, vec![1, 1, 0]);
    }

    #[test]
    fn equal_probability_bins_have_balanced_counts() {
        let snc = DgpSpec::new(Setting::SimpleNormalCorrelated);
        let g = Arc::new(build_grid(&snc, 1, 100).unwrap());
        let k = g.n_bins() as f64;
        let mut ok = 0;
        for s in 0..20 {
            let d = Dataset::from_features(snc.sample_features(10_000, 100 + s));
            let b = make_bins(&g, &d).unwrap();
            assert_eq!(b.counts.iter().sum::<usize>(), 10_000);
            // edge bins carry the clamped tail mass of 1/(2G) on top of 1/G
            let interior_ok = b.counts[1..b.counts.len() - 1]
                .iter()
                .all(|&c| (c as f64 - 10_000.0 / k).abs() <= 0.5 * 10_000.0 / k);
            if interior_ok {
                ok += 1;
            }
        }
        assert!(ok >= 19, "{ok}/20 seeds balanced");
    }

    #[test]
    fn ale_hand_cases() {
        let g = grid(vec![0.0, 1.0, 2.0, 3.0]);
        let linear = FnModel::new(2, "linear", |r| 3.0 * r[0] + r[1].cos());
        let d = data(array![[0.5, 1.0], [1.5, -2.0], [2.5, 0.3], [0.2, 4.0]]);
        let bins = make_bins(&g, &d).unwrap();
        let ale = estimate_ale(&linear, &d, &bins).unwrap();
        assert_eq!(ale.values.len(), 2);
        assert_abs_diff_eq!(ale.values[0], 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(ale.values[1], 6.0, epsilon = 1e-12);

        let constant = FnModel::new(2, "constant", |_| -2.0);
        assert!(estimate_ale(&constant, &d, &bins).unwrap().values.iter().all(|v| *v == 0.0));

        let product = FnModel::new(2, "product", |r| r[0] * r[1]);
        let g1 = grid(vec![0.0, 1.0, 2.0]);
        let d1 = data(array![[0.4, 1.0], [0.9, 3.0]]);
        let ale1 = estimate_ale(&product, &d1, &make_bins(&g1, &d1).unwrap()).unwrap();
        assert_abs_diff_eq!(ale1.values[0], 2.0);
        assert_eq!(ale1.bin_counts, vec![2, 0]);
        assert_eq!(ale1.empty_bins, vec![false, true]);

        let empty = data(Array2::zeros((0, 2)));
        let no_bins = make_bins(&g, &empty).unwrap();
        assert!(matches!(estimate_ale(&linear, &empty, &no_bins), Err(Error::Estimation(_))));
    }

    #[test]
    fn centering_cases() {
        let g = grid(vec![0.0, 1.0, 2.0, 3.0, 4.0]);
        let c = EffectCurve::from_values(EffectKind::Pd, Arc::clone(&g), vec![1.0, 2.0, 3.0], false).unwrap();
        let w = default_weights(&g);
        let centered = center_curve(&c, &w).unwrap();
        assert_eq!(centered.values, vec![-1.0, 0.0, 1.0]);
        let again = center_curve(&centered, &w).unwrap();
        for (a, b) in again.values.iter().zip(&centered.values) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
        let flat = EffectCurve::from_values(EffectKind::Ale, Arc::clone(&g), vec![4.2; 3], false).unwrap();
        assert!(center_curve(&flat, &w).unwrap().values.iter().all(|v| v.abs() < 1e-15));
        assert!(matches!(center_curve(&c, &[0.5, 0.5]), Err(Error::Dimension { .. })));
        assert!(center_curve(&c, &[0.5, 0.6, -0.1]).is_err());
    }

    #[test]
    fn centered_ale_errors_match_direct_covariance() {
        // direct route: explicit linear map from bin means to centered values
        let v = [0.3, 0.1, 0.5, 0.2];
        let w = [0.2, 0.5, 0.3];
        let got = centered_ale_errors(&v, &w);
        for e in 1..=3 {
            let mut var = 0.0;
            for (k, vk) in v.iter().enumerate() {
                let mut c = if k < e { 1.0 } else { 0.0 };
                for (j, wj) in w.iter().enumerate() {
                    if k < j + 1 {
                        c -= wj;
                    }
                }
                var += c * c * vk;
            }
            assert_abs_diff_eq!(got[e - 1], var.sqrt(), epsilon = 1e-14);
        }
    }

    #[test]
    fn ground_truth_effect_is_deterministic() {
        let snc = DgpSpec::new(Setting::SimpleNormalCorrelated);
        let g = Arc::new(build_grid(&snc, 0, 20).unwrap());
        for kind in [EffectKind::Pd, EffectKind::Ale] {
            let a = estimate_ground_truth_effect(&snc, 0, kind, &g, 2000, 5).unwrap();
            let b = estimate_ground_truth_effect(&snc, 0, kind, &g, 2000, 5).unwrap();
            assert_eq!(a, b);
            assert!(a.centered);
        }
        assert!(estimate_ground_truth_effect(&snc, 1, EffectKind::Pd, &g, 10, 1).is_err());
    }

    #[test]
    fn ground_truth_pd_matches_analytic() {
        let snc = DgpSpec::new(Setting::SimpleNormalCorrelated);
        let g = Arc::new(build_grid(&snc, 0, 30).unwrap());
        let est = estimate_ground_truth_effect(&snc, 0, EffectKind::Pd, &g, 100_000, 77).unwrap();
        let truth = analytic_effect(&snc, 0, EffectKind::Pd, &g).unwrap();
        for i in 0..est.values.len() {
            assert!((est.values[i] - truth.values[i]).abs() <= 3.0 * est.std_errors[i] + 1e-12);
        }
    }

    #[test]
    fn dummy_ground_truth_effect_is_zero() {
        let fr = DgpSpec::new(Setting::Friedman1);
        let g = Arc::new(build_grid(&fr, 6, 30).unwrap());
        for kind in [EffectKind::Pd, EffectKind::Ale] {
            let c = estimate_ground_truth_effect(&fr, 6, kind, &g, 5000, 3).unwrap();
            for (v, se) in c.values.iter().zip(&c.std_errors) {
                assert!(v.abs() <= 4.0 * se + 1e-9, "{kind}: {v} vs {se}");
            }
        }
    }

    #[test]
    fn population_ale_of_linear_model_is_exact() {
        let snc = DgpSpec::new(Setting::SimpleNormalCorrelated);
        let g = Arc::new(build_grid(&snc, 0, 12).unwrap());
        let d = Dataset::from_features(snc.sample_features(10, 1));
        let bins = make_bins(&g, &d).unwrap();
        let lin = FnModel::new(4, "lin", |r| 3.0 * r[0]);
        let pop = binned_population_ale(&snc, &lin, &bins, 50, 2).unwrap();
        let z = g.points();
        for (i, v) in pop.values.iter().enumerate() {
            assert_abs_diff_eq!(*v, 3.0 * (z[i + 1] - z[0]), epsilon = 1e-12);
        }
        let constant = FnModel::new(4, "c", |_| 1.0);
        let zero = binned_population_ale(&snc, &constant, &bins, 10, 2).unwrap();
        assert!(zero.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn unreachable_bin_is_an_oracle_error() {
        let fr = DgpSpec::new(Setting::Friedman1);
        let g = Arc::new(EffectGrid::explicit(0, vec![0.0, 0.5, 1.0, 2.0]).unwrap());
        let d = Dataset::from_features(fr.sample_features(10, 1));
        let bins = make_bins(&g, &d).unwrap();
        let m = GroundTruthModel::new(fr.clone());
        assert!(matches!(binned_population_ale(&fr, &m, &bins, 10, 1), Err(Error::Oracle(_))));
    }

    #[test]
    fn sample_dataset_features_feed_estimators() {
        let fr = DgpSpec::new(Setting::Friedman1);
        let d = fr.sample_dataset(50, &NoiseCalibration::fixed(0.1), 3);
        let g = Arc::new(build_grid(&fr, 3, 10).unwrap());
        let m = GroundTruthModel::new(fr.clone());
        let c = estimate_effect(&m, &d, EffectKind::Ale, &g).unwrap();
        // linear feature without interactions: exact recovery
        let truth = analytic_effect(&fr, 3, EffectKind::Ale, &g).unwrap();
        for (a, b) in c.values.iter().zip(&truth.values) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }
}
