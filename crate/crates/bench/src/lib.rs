//! Shared fixtures for the benchmarks: a fitted model and a matching sample.

use std::sync::Arc;

use effektor_core::{
    Dataset, DgpSpec, EffectGrid, Learner, LearnerConfig, LearnerKind, Mode, PredictionModel, Result, Setting,
};

pub struct Fixture {
    pub spec: DgpSpec,
    pub train: Dataset,
    pub eval: Dataset,
    pub model: Arc<dyn PredictionModel>,
    pub grid: Arc<EffectGrid>,
}

/// A tuned boosted-trees model on `n` rows of `setting` and `n` fresh
/// evaluation rows, with a 100-point grid for `feature`.
pub fn fixture(setting: Setting, n: usize, feature: usize) -> Result<Fixture> {
    let spec = DgpSpec::new(setting);
    let cal = spec.default_calibration();
    let train = spec.sample_dataset(n, &cal, 1);
    let eval = spec.sample_dataset(n, &cal, 2);
    let model = LearnerConfig::preset(LearnerKind::BoostedTrees, Mode::Ot, setting, n).fit(&train, 3)?;
    let grid = Arc::new(EffectGrid::theoretical(&spec, feature, 100)?);
    Ok(Fixture {
        spec,
        train,
        eval,
        model,
        grid,
    })
}
