//! Fixed-seed sanity gate for the shipped learner presets: overfitting
//! presets memorize their training data, tuned presets generalize better
//! than a plain linear fit.

use effektor_core::models::{empirical_risk, fit_linear, Learner};
use effektor_core::{DgpSpec, LearnerConfig, LearnerKind, Mode, Setting};

const HOLDOUT_N: usize = 10_000;

fn check(learner: LearnerKind, setting: Setting, n: usize) {
    let spec = DgpSpec::new(setting);
    let cal = spec.default_calibration();
    let train = spec.sample_dataset(n, &cal, 101);
    let holdout = spec.sample_dataset(HOLDOUT_N, &cal, 202);
    let linear = empirical_risk(&fit_linear(&train).unwrap(), &holdout).unwrap();

    let of = LearnerConfig::preset(learner, Mode::Of, setting, n).fit(&train, 7).unwrap();
    let of_train = empirical_risk(of.as_ref(), &train).unwrap();
    let of_holdout = empirical_risk(of.as_ref(), &holdout).unwrap();
    assert!(of_train < of_holdout, "{learner:?} OF {setting} n={n}: train {of_train} vs holdout {of_holdout}");

    let ot = LearnerConfig::preset(learner, Mode::Ot, setting, n).fit(&train, 7).unwrap();
    let ot_holdout = empirical_risk(ot.as_ref(), &holdout).unwrap();
    assert!(ot_holdout < linear, "{learner:?} OT {setting} n={n}: holdout {ot_holdout} vs linear {linear}");
}

#[test]
fn boosted_tree_presets_pass_the_gate() {
    for setting in Setting::ALL {
        for n in [1250, 10_000] {
            check(LearnerKind::BoostedTrees, setting, n);
        }
    }
}

#[test]
fn ridge_presets_pass_the_gate() {
    for setting in Setting::ALL {
        for n in [1250, 10_000] {
            check(LearnerKind::RidgeBasis, setting, n);
        }
    }
}
