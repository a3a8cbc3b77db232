//! Training-data, holdout and cross-validated effect estimation.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::dgp::DgpSpec;
use crate::effects::{average_curves, estimate_effect, EffectCurve, EffectGrid, EffectKind};
use crate::error::{Error, Result};
use crate::models::{Learner, PredictionModel};
use crate::seed;

pub const DEFAULT_SPLIT_FRACTION: f64 = 0.8;
pub const DEFAULT_FOLDS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StrategyKind {
    #[serde(rename = "train")]
    TrainOnAll,
    #[serde(rename = "val")]
    HoldoutSplit,
    #[serde(rename = "cv")]
    KFoldCV,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 3] = [StrategyKind::TrainOnAll, StrategyKind::HoldoutSplit, StrategyKind::KFoldCV];

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::TrainOnAll => "train",
            StrategyKind::HoldoutSplit => "val",
            StrategyKind::KFoldCV => "cv",
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(StrategyKind::TrainOnAll),
            "val" => Ok(StrategyKind::HoldoutSplit),
            "cv" => Ok(StrategyKind::KFoldCV),
            _ => Err(Error::Config(format!("unknown strategy `{s}` (expected train, val or cv)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StrategySpec {
    pub kind: StrategyKind,
    pub split_fraction: f64,
    pub folds: usize,
    pub shuffle_seed: u64,
}

impl StrategySpec {
    pub fn new(kind: StrategyKind, shuffle_seed: u64) -> Self {
        StrategySpec {
            kind,
            split_fraction: DEFAULT_SPLIT_FRACTION,
            folds: DEFAULT_FOLDS,
            shuffle_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return Err(Error::Config(format!("split fraction {} not in (0, 1)", self.split_fraction)));
        }
        if self.folds < 2 {
            return Err(Error::Config(format!("need at least 2 folds, got {}", self.folds)));
        }
        Ok(())
    }

    /// Smallest sample size the strategy can split.
    pub fn min_n(&self) -> usize {
        match self.kind {
            StrategyKind::TrainOnAll => 1,
            StrategyKind::HoldoutSplit => (2..)
                .find(|&n| {
                    let t = holdout_train_size(n, self.split_fraction);
                    t > 0 && t < n
                })
                .unwrap_or(usize::MAX),
            StrategyKind::KFoldCV => self.folds,
        }
    }
}

/// Number of training rows in a holdout split of `n` rows.
pub fn holdout_train_size(n: usize, fraction: f64) -> usize {
    // the small slack keeps 0.8 * 1250 from rounding up to 1001
    ((fraction * n as f64) - 1e-9).ceil().max(0.0) as usize
}

fn permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seed::rng(seed));
    idx
}

/// Seeded shuffle of `0..n` cut into `folds` contiguous blocks whose sizes
/// differ by at most one.
pub fn split_folds(n: usize, folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if folds == 0 || folds > n {
        return Err(Error::Config(format!("cannot split {n} rows into {folds} folds")));
    }
    let perm = permutation(n, seed);
    let (base, extra) = (n / folds, n % folds);
    let mut out = Vec::with_capacity(folds);
    let mut start = 0;
    for f in 0..folds {
        let len = base + usize::from(f < extra);
        out.push(perm[start..start + len].to_vec());
        start += len;
    }
    Ok(out)
}

/// `(train, estimation)` index sets of a seeded holdout split.
pub fn holdout_split(n: usize, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let n_train = holdout_train_size(n, fraction);
    if n_train == 0 || n_train >= n {
        return Err(Error::Config(format!("holdout split of {n} rows leaves an empty side")));
    }
    let mut perm = permutation(n, seed);
    let est = perm.split_off(n_train);
    Ok((perm, est))
}

/// One fitted model and the rows it is evaluated on.
#[derive(Debug, Clone)]
pub struct FittedPart {
    pub model: Arc<dyn PredictionModel>,
    pub train: Vec<usize>,
    pub estimation: Vec<usize>,
}

/// Models fitted under a strategy, ready to estimate effects repeatedly.
#[derive(Debug, Clone)]
pub struct FittedStrategy {
    pub kind: StrategyKind,
    pub parts: Vec<FittedPart>,
}

pub fn fit_strategy(
    learner: &dyn Learner,
    data: &Dataset,
    strategy: &StrategySpec,
    fit_seed: u64,
) -> Result<FittedStrategy> {
    strategy.validate()?;
    let n = data.n();
    if n < strategy.min_n() {
        return Err(Error::Config(format!(
            "{} strategy needs at least {} rows, got {n}",
            strategy.kind,
            strategy.min_n()
        )));
    }
    let splits: Vec<(Vec<usize>, Vec<usize>)> = match strategy.kind {
        StrategyKind::TrainOnAll => {
            let all: Vec<usize> = (0..n).collect();
            vec![(all.clone(), all)]
        }
        StrategyKind::HoldoutSplit => vec![holdout_split(n, strategy.split_fraction, strategy.shuffle_seed)?],
        StrategyKind::KFoldCV => {
            let folds = split_folds(n, strategy.folds, strategy.shuffle_seed)?;
            (0..folds.len())
                .map(|held| {
                    let train = folds
                        .iter()
                        .enumerate()
                        .filter(|(f, _)| *f != held)
                        .flat_map(|(_, idx)| idx.iter().copied())
                        .collect();
                    (train, folds[held].clone())
                })
                .collect()
        }
    };
    let parts = splits
        .into_iter()
        .enumerate()
        .map(|(i, (train, estimation))| {
            let model = if train.len() == n {
                learner.fit(data, seed::derive_seed(fit_seed, &[i as u64]))?
            } else {
                learner.fit(&data.select(&train), seed::derive_seed(fit_seed, &[i as u64]))?
            };
            Ok(FittedPart { model, train, estimation })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FittedStrategy {
        kind: strategy.kind,
        parts,
    })
}

impl FittedStrategy {
    /// Centered effect estimated on each part's own estimation rows of
    /// `data`, averaged over parts.
    pub fn estimate(&self, data: &Dataset, kind: EffectKind, grid: &Arc<EffectGrid>) -> Result<EffectCurve> {
        let curves = self
            .parts
            .iter()
            .map(|part| {
                if part.estimation.len() == data.n() {
                    estimate_effect(part.model.as_ref(), data, kind, grid)
                } else {
                    estimate_effect(part.model.as_ref(), &data.select(&part.estimation), kind, grid)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        average_curves(&curves)
    }

    /// Same as [`FittedStrategy::estimate`] but every part gets fresh feature
    /// draws from `spec`, as many as its estimation set holds.
    pub fn estimate_on_fresh(
        &self,
        spec: &DgpSpec,
        kind: EffectKind,
        grid: &Arc<EffectGrid>,
        seed: u64,
    ) -> Result<EffectCurve> {
        let curves = self
            .parts
            .iter()
            .enumerate()
            .map(|(i, part)| {
                let fresh = Dataset::from_features(
                    spec.sample_features(part.estimation.len(), seed::derive_seed(seed, &[i as u64])),
                );
                estimate_effect(part.model.as_ref(), &fresh, kind, grid)
            })
            .collect::<Result<Vec<_>>>()?;
        average_curves(&curves)
    }
}

/// Fit under `strategy` and estimate the centered effect of `feature`.
pub fn run_strategy(
    learner: &dyn Learner,
    data: &Dataset,
    strategy: &StrategySpec,
    feature: usize,
    kind: EffectKind,
    grid: &Arc<EffectGrid>,
    fit_seed: u64,
) -> Result<(EffectCurve, FittedStrategy)> {
    if grid.feature() != feature {
        return Err(Error::Domain(format!(
            "grid belongs to feature {}, not {feature}",
            grid.feature()
        )));
    }
    let fitted = fit_strategy(learner, data, strategy, fit_seed)?;
    let curve = fitted.estimate(data, kind, grid)?;
    Ok((curve, fitted))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::Setting;
    use crate::effects::{build_grid, center_curve, default_weights, estimate_ale, estimate_pd, make_bins};
    use crate::models::{LearnerConfig, LearnerKind, Mode};
    use proptest::prelude::*;

    fn gt_learner() -> LearnerConfig {
        LearnerConfig::preset(LearnerKind::GroundTruth, Mode::Ot, Setting::SimpleNormalCorrelated, 0)
    }

    #[test]
    fn fold_sizes() {
        let sizes = |n, k| {
            split_folds(n, k, 3)
                .unwrap()
                .iter()
                .map(Vec::len)
                .collect::<Vec<_>>()
        };
        assert_eq!(sizes(10, 5), vec![2; 5]);
        let mut s = sizes(11, 5);
        s.sort();
        assert_eq!(s, vec![2, 2, 2, 2, 3]);
        assert_eq!(split_folds(10, 5, 9).unwrap(), split_folds(10, 5, 9).unwrap());
        assert!(split_folds(3, 5, 1).is_err());
    }

    #[test]
    fn holdout_rounding() {
        assert_eq!(holdout_train_size(1250, 0.8), 1000);
        assert_eq!(holdout_train_size(11, 0.8), 9);
        assert_eq!(holdout_train_size(10_000, 0.8), 8000);
        let (train, est) = holdout_split(11, 0.8, 4).unwrap();
        assert_eq!((train.len(), est.len()), (9, 2));
        assert!(holdout_split(1, 0.8, 4).is_err());
        assert!(holdout_split(4, 0.8, 4).is_err());
        assert_eq!(StrategySpec::new(StrategyKind::HoldoutSplit, 0).min_n(), 5);
    }

    proptest! {
        #[test]
        fn holdout_sides_partition_the_rows(n in 5usize..400, seed in any::<u64>()) {
            let (train, est) = holdout_split(n, 0.8, seed).unwrap();
            let mut all: Vec<usize> = train.iter().chain(&est).copied().collect();
            all.sort();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        }

        #[test]
        fn folds_cover_each_row_once(n in 5usize..300, k in 2usize..6, seed in any::<u64>()) {
            let folds = split_folds(n, k, seed).unwrap();
            let mut all: Vec<usize> = folds.concat();
            all.sort();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            let max = folds.iter().map(Vec::len).max().unwrap();
            let min = folds.iter().map(Vec::len).min().unwrap();
            prop_assert!(max - min <= 1);
        }
    }

    #[test]
    fn cv_trains_each_row_k_minus_one_times() {
        let spec = DgpSpec::new(Setting::SimpleNormalCorrelated);
        let data = spec.sample_dataset(53, &spec.default_calibration(), 1);
        let fitted = fit_strategy(&gt_learner(), &data, &StrategySpec::new(StrategyKind::KFoldCV, 2), 3).unwrap();
        let mut train_uses = vec![0; 53];
        let mut est_uses = vec![0; 53];
        for part in &fitted.parts {
            part.train.iter().for_each(|&i| train_uses[i] += 1);
            part.estimation.iter().for_each(|&i| est_uses[i] += 1);
        }
        assert!(train_uses.iter().all(|&u| u == 4));
        assert!(est_uses.iter().all(|&u| u == 1));
    }

    #[test]
    fn holdout_curve_uses_the_remainder() {
        let spec = DgpSpec::new(Setting::SimpleNormalCorrelated);
        let data = spec.sample_dataset(1250, &spec.default_calibration(), 1);
        let grid = Arc::new(build_grid(&spec, 0, 20).unwrap());
        for kind in [EffectKind::Pd, EffectKind::Ale] {
            let (val, _) = run_strategy(
                &gt_learner(),
                &data,
                &StrategySpec::new(StrategyKind::HoldoutSplit, 7),
                0,
                kind,
                &grid,
                1,
            )
            .unwrap();
            assert_eq!(val.n_used, 250);
            let (train, _) = run_strategy(
                &gt_learner(),
                &data,
                &StrategySpec::new(StrategyKind::TrainOnAll, 7),
                0,
                kind,
                &grid,
                1,
            )
            .unwrap();
            assert_eq!(train.n_used, 1250);
        }
    }

    #[test]
    fn strategies_agree_without_model_variance() {
        let spec = DgpSpec::new(Setting::SimpleNormalCorrelated);
        let data = spec.sample_dataset(20_000, &spec.default_calibration(), 5);
        let grid = Arc::new(build_grid(&spec, 1, 30).unwrap());
        let curves: Vec<EffectCurve> = StrategyKind::ALL
            .iter()
            .map(|&k| {
                run_strategy(&gt_learner(), &data, &StrategySpec::new(k, 11), 1, EffectKind::Pd, &grid, 2)
                    .unwrap()
                    .0
            })
            .collect();
        for a in &curves {
            for b in &curves {
                for i in 0..a.values.len() {
                    let se = (a.std_errors[i].powi(2) + b.std_errors[i].powi(2)).sqrt();
                    assert!((a.values[i] - b.values[i]).abs() <= 3.0 * se + 1e-12);
                }
            }
        }
    }

    #[test]
    fn averaging_identical_curves_is_identity() {
        let spec = DgpSpec::new(Setting::Friedman1);
        let data = Dataset::from_features(spec.sample_features(500, 1));
        let grid = Arc::new(build_grid(&spec, 0, 15).unwrap());
        let m = crate::models::GroundTruthModel::new(spec.clone());
        let c = estimate_effect(&m, &data, EffectKind::Ale, &grid).unwrap();
        let avg = average_curves(&vec![c.clone(); 5]).unwrap();
        for (a, b) in avg.values.iter().zip(&c.values) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn centering_commutes_with_fold_averaging() {
        let spec = DgpSpec::new(Setting::SimpleNormalCorrelated);
        let grid = Arc::new(build_grid(&spec, 0, 25).unwrap());
        let w = default_weights(&grid);
        let m = crate::models::GroundTruthModel::new(spec.clone());
        let raw: Vec<EffectCurve> = (0..5)
            .map(|s| {
                let d = Dataset::from_features(spec.sample_features(200, s));
                if s % 2 == 0 {
                    estimate_pd(&m, &d, &grid).unwrap()
                } else {
                    estimate_ale(&m, &d, &make_bins(&grid, &d).unwrap()).unwrap()
                }
            })
            .map(|mut c| {
                c.kind = EffectKind::Pd;
                c
            })
            .collect();
        let centered_first: Vec<EffectCurve> = raw.iter().map(|c| center_curve(c, &w).unwrap()).collect();
        let a = average_curves(&centered_first).unwrap();
        let b = center_curve(&average_curves(&raw).unwrap(), &w).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn deterministic_given_seeds() {
        let spec = DgpSpec::new(Setting::Friedman1);
        let data = spec.sample_dataset(300, &spec.default_calibration(), 1);
        let grid = Arc::new(build_grid(&spec, 0, 12).unwrap());
        let cfg = LearnerConfig::preset(LearnerKind::BoostedTrees, Mode::Ot, Setting::Friedman1, 300);
        let run = || {
            run_strategy(&cfg, &data, &StrategySpec::new(StrategyKind::KFoldCV, 4), 0, EffectKind::Ale, &grid, 8)
                .unwrap()
                .0
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn too_small_for_cv_is_a_config_error() {
        let spec = DgpSpec::new(Setting::Friedman1);
        let data = spec.sample_dataset(4, &spec.default_calibration(), 1);
        let r = fit_strategy(&gt_learner(), &data, &StrategySpec::new(StrategyKind::KFoldCV, 1), 1);
        assert!(matches!(r, Err(Error::Config(_))));
    }
}
