//! Shipped learner configurations per (setting, sample size, mode).
//!
//! Bump [`PRESET_VERSION`] whenever a value here changes; it is recorded in
//! every results manifest.

use super::{Hyperparams, LearnerConfig, LearnerKind, Mode, RidgeParams, TreeParams};
use crate::dgp::Setting;

pub const PRESET_VERSION: u32 = 2;

fn interaction_pairs(setting: Setting) -> Vec<(usize, usize)> {
    match setting {
        Setting::SimpleNormalCorrelated | Setting::Friedman1 => vec![(0, 1)],
        Setting::Feynman12916 => vec![(0, 1), (2, 3)],
    }
}

pub(super) fn preset(learner: LearnerKind, mode: Mode, setting: Setting, n: usize) -> LearnerConfig {
    let large = n >= 5000;
    let params = match learner {
        LearnerKind::RidgeBasis => {
            let (basis_size, interaction_basis_size, lambda) = match mode {
                Mode::Ot => (10, 5, 1e-4),
                Mode::Of => (30, 10, 1e-6),
            };
            Hyperparams::Ridge(RidgeParams {
                basis_size,
                interaction_basis_size,
                interactions: interaction_pairs(setting),
                lambda,
            })
        }
        LearnerKind::BoostedTrees => Hyperparams::Trees(match mode {
            Mode::Ot => TreeParams {
                rounds: if large { 300 } else { 200 },
                max_depth: 3,
                learning_rate: 0.1,
                min_samples_leaf: 10,
                subsample: 0.8,
            },
            Mode::Of => TreeParams {
                rounds: 100,
                max_depth: 8,
                learning_rate: 0.5,
                min_samples_leaf: 1,
                subsample: 1.0,
            },
        }),
        LearnerKind::Linear | LearnerKind::GroundTruth => Hyperparams::None,
    };
    LearnerConfig {
        learner,
        mode,
        params,
    }
}
