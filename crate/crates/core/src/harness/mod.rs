//! Experiment protocols: repeated fits with error decomposition (RQ1),
//! estimation-variance repeats on frozen models (RQ2) and the sample-size
//! study on the ground truth (RQ3).

mod config;
mod output;

use std::sync::Arc;

use ndarray::{Array2, Array3};
use rayon::prelude::*;

pub use config::{parse_config, parse_config_str, ExperimentConfig, LearnerEntry, Rq3Config, SCHEMA_VERSION};
pub use output::{format_value, read_csv, sha256_hex, write_csv, write_csv_to, write_results, Manifest, ResultRow, COLUMNS};

use crate::decomp::{aggregate, aggregate_abs, CurveEnsemble, ErrorReport};
use crate::dgp::{DgpSpec, NoiseCalibration, CALIBRATION_SEED, PILOT_N};
use crate::effects::{analytic_effect, estimate_ground_truth_effect, EffectCurve, EffectGrid, EffectKind};
use crate::error::{Error, Result};
use crate::models::LearnerConfig;
use crate::seed::{derive_seed, Role};
use crate::strategies::{fit_strategy, StrategyKind, StrategySpec};

/// Rows of one protocol run plus any per-cell failures.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub rows: Vec<ResultRow>,
    pub failures: Vec<String>,
    pub noise_sigma: Option<f64>,
}

impl RunOutput {
    /// 0 when every cell completed, 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.failures.is_empty() {
            0
        } else {
            2
        }
    }
}

/// Run `f` on a pool of `threads` workers (all cores when `None`).
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        builder = builder.num_threads(t.max(1));
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(f))
}

#[derive(Debug, Clone, Copy)]
struct Cell {
    learner: usize,
    strategy: StrategyKind,
    kind: EffectKind,
    feature: usize,
}

struct Plan {
    spec: DgpSpec,
    learners: Vec<LearnerConfig>,
    cells: Vec<Cell>,
    /// (kind, feature) targets, in cell order within a (learner, strategy).
    targets: Vec<(EffectKind, usize)>,
    grids: Vec<Arc<EffectGrid>>,
    features: Vec<usize>,
}

impl Plan {
    fn new(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let spec = cfg.spec();
        let features = cfg.feature_indices();
        let grids = features
            .iter()
            .map(|&f| EffectGrid::theoretical(&spec, f, cfg.grid_size).map(Arc::new))
            .collect::<Result<Vec<_>>>()?;
        let targets: Vec<(EffectKind, usize)> = cfg
            .kinds
            .iter()
            .flat_map(|&k| features.iter().map(move |&f| (k, f)))
            .collect();
        let mut cells = Vec::new();
        for learner in 0..cfg.learners.len() {
            for &strategy in &cfg.strategies {
                for &(kind, feature) in &targets {
                    cells.push(Cell {
                        learner,
                        strategy,
                        kind,
                        feature,
                    });
                }
            }
        }
        Ok(Plan {
            spec,
            learners: cfg.learner_configs(),
            cells,
            targets,
            grids,
            features,
        })
    }

    fn grid(&self, feature: usize) -> &Arc<EffectGrid> {
        let i = self.features.iter().position(|&f| f == feature).expect("planned feature");
        &self.grids[i]
    }
}

/// Squared errors per point and the mask of points with no information.
type PointErrors = std::result::Result<(Vec<f64>, Vec<bool>), String>;

type CellResult = std::result::Result<(EffectCurve, Option<Vec<Vec<f64>>>), String>;

struct RepOutcome {
    cells: Vec<CellResult>,
    truth: Vec<std::result::Result<Vec<f64>, String>>,
}

fn run_repetition(
    cfg: &ExperimentConfig,
    plan: &Plan,
    cal: &NoiseCalibration,
    m: usize,
    with_truth: bool,
    with_repeats: bool,
) -> RepOutcome {
    let master = cfg.master_seed;
    let rep = m as u64;
    let data = plan
        .spec
        .sample_dataset(cfg.n, cal, derive_seed(master, &[Role::Data.into(), rep]));
    let shuffle = derive_seed(master, &[Role::Shuffle.into(), rep]);
    let mut cells = Vec::with_capacity(plan.cells.len());
    for (li, learner) in plan.learners.iter().enumerate() {
        for &strategy in &cfg.strategies {
            let fit_seed = derive_seed(master, &[Role::Fit.into(), rep, li as u64]);
            let fitted = fit_strategy(learner, &data, &StrategySpec::new(strategy, shuffle), fit_seed);
            for &(kind, feature) in &plan.targets {
                let grid = plan.grid(feature);
                let result = fitted.as_ref().map_err(|e| e.to_string()).and_then(|fitted| {
                    let curve = fitted.estimate(&data, kind, grid).map_err(|e| e.to_string())?;
                    let repeats = if with_repeats {
                        let rs = (0..cfg.r)
                            .map(|r| {
                                let seed = derive_seed(master, &[Role::Repeat.into(), rep, r as u64]);
                                fitted
                                    .estimate_on_fresh(&plan.spec, kind, grid, seed)
                                    .map(|c| c.values)
                                    .map_err(|e| e.to_string())
                            })
                            .collect::<std::result::Result<Vec<_>, _>>()?;
                        Some(rs)
                    } else {
                        None
                    };
                    Ok((curve, repeats))
                });
                cells.push(result.map_err(|e| {
                    format!(
                        "repetition {m}, {} {strategy} {kind} x{}: {e}",
                        learner.id(),
                        feature + 1
                    )
                }));
            }
        }
    }
    let truth = if with_truth {
        let seed = derive_seed(master, &[Role::GroundTruth.into(), rep]);
        plan.targets
            .iter()
            .map(|&(kind, feature)| {
                estimate_ground_truth_effect(&plan.spec, feature, kind, plan.grid(feature), cfg.n_gt, seed)
                    .map(|c| c.values)
                    .map_err(|e| format!("repetition {m}, ground truth {kind} x{}: {e}", feature + 1))
            })
            .collect()
    } else {
        Vec::new()
    };
    RepOutcome { cells, truth }
}

fn calibration(cfg: &ExperimentConfig, spec: &DgpSpec) -> Result<NoiseCalibration> {
    spec.calibrate_noise(cfg.snr, PILOT_N, CALIBRATION_SEED)
}

fn base_row(cfg: &ExperimentConfig, rq: u8, plan: &Plan, cell: &Cell) -> ResultRow {
    let entry = cfg.learners[cell.learner];
    ResultRow {
        rq,
        setting: cfg.setting.name().to_string(),
        n: cfg.n,
        learner: entry.learner.name().to_string(),
        mode: entry.mode.name().to_string(),
        strategy: cell.strategy.name().to_string(),
        kind: cell.kind.name().to_string(),
        feature: cell.feature + 1,
        metric: String::new(),
        m: 0,
        r: None,
        aggregate: None,
        flags: String::new(),
        values: vec![None; plan.grid(cell.feature).n_evaluated()],
    }
}

fn join_flags(flags: &[String]) -> String {
    flags.join("|")
}

fn run_rq12(cfg: &ExperimentConfig, rq: u8) -> Result<RunOutput> {
    let plan = Plan::new(cfg)?;
    let cal = calibration(cfg, &plan.spec)?;
    let (with_truth, with_repeats) = (rq == 1, rq == 2);
    let reps: Vec<RepOutcome> = (0..cfg.m)
        .into_par_iter()
        .map(|m| run_repetition(cfg, &plan, &cal, m, with_truth, with_repeats))
        .collect();

    let mut failures = Vec::new();
    let mut truths = Vec::with_capacity(plan.targets.len());
    for (ti, &(_, feature)) in plan.targets.iter().enumerate() {
        if !with_truth {
            truths.push(Some(vec![0.0; plan.grid(feature).n_evaluated()]));
            continue;
        }
        let ok: Vec<&Vec<f64>> = reps
            .iter()
            .filter_map(|r| match &r.truth[ti] {
                Ok(v) => Some(v),
                Err(e) => {
                    failures.push(e.clone());
                    None
                }
            })
            .collect();
        truths.push(if ok.is_empty() {
            None
        } else {
            let g = ok[0].len();
            Some(
                (0..g)
                    .map(|j| ok.iter().map(|v| v[j]).sum::<f64>() / ok.len() as f64)
                    .collect(),
            )
        });
    }

    let mut rows = Vec::new();
    for (ci, cell) in plan.cells.iter().enumerate() {
        let ti = ci % plan.targets.len();
        let mut flags = Vec::new();
        let mut curves = Vec::new();
        let mut repeats = Vec::new();
        let mut empty = 0;
        for rep in &reps {
            match &rep.cells[ci] {
                Ok((curve, rs)) => {
                    empty += curve.n_empty_bins();
                    curves.push(curve.values.clone());
                    if let Some(rs) = rs {
                        repeats.push(rs.clone());
                    }
                }
                Err(e) => failures.push(e.clone()),
            }
        }
        if cell.kind == EffectKind::Ale && empty > 0 {
            flags.push(format!("empty_bins:{empty}"));
        }
        if curves.len() < cfg.m {
            flags.push(format!("failed_reps:{}", cfg.m - curves.len()));
        }
        let report = match (&truths[ti], curves.len() >= 2) {
            (Some(truth), true) => {
                let g = truth.len();
                let mut ens = CurveEnsemble::new(
                    Array2::from_shape_vec((curves.len(), g), curves.concat()).expect("aligned curves"),
                    truth.clone().into(),
                )?;
                if with_repeats {
                    let r = cfg.r;
                    let block = Array3::from_shape_vec((repeats.len(), r, g), repeats.concat().concat())
                        .expect("aligned repeats");
                    ens = ens.with_repeats(block)?;
                }
                Some(ErrorReport::from_ensemble(&ens)?)
            }
            _ => {
                flags.push("incomplete".into());
                None
            }
        };
        let mut push = |metric: &str, agg: Option<f64>, values: Option<Vec<Option<f64>>>, extra: Option<String>| {
            let mut row = base_row(cfg, rq, &plan, cell);
            row.metric = metric.to_string();
            row.m = curves.len();
            row.r = with_repeats.then_some(cfg.r);
            row.aggregate = agg;
            let mut f = flags.clone();
            f.extend(extra);
            row.flags = join_flags(&f);
            if let Some(v) = values {
                row.values = v;
            }
            rows.push(row);
        };
        let some = |v: &[f64]| Some(v.iter().copied().map(Some).collect::<Vec<_>>());
        match (&report, rq) {
            (Some(rep), 1) => {
                push("mse", Some(rep.mse_agg()), some(&rep.mse), None);
                push("bias", Some(rep.bias_agg()), some(&rep.bias), None);
                push("var", Some(rep.var_agg()), some(&rep.var), None);
            }
            (Some(rep), _) => {
                let var_est = rep.var_est.as_deref().expect("repeat block present");
                let vm = rep.var_model.clone().expect("repeat block present");
                let negative = rep.negative_var_model_points();
                push("var", Some(rep.var_agg()), some(&rep.var), None);
                push("var_est", Some(aggregate(var_est)), some(var_est), None);
                let mut extra = Vec::new();
                if negative > 0 {
                    extra.push(format!("negative_var_model:{negative}"));
                }
                if rep.var_model_agg().is_none() {
                    extra.push("negative_var_model_agg".into());
                }
                push("var_model", rep.var_model_agg(), Some(vm), (!extra.is_empty()).then(|| extra.join("|")));
            }
            (None, 1) => {
                for metric in ["mse", "bias", "var"] {
                    push(metric, None, None, None);
                }
            }
            (None, _) => {
                for metric in ["var", "var_est", "var_model"] {
                    push(metric, None, None, None);
                }
            }
        }
    }
    Ok(RunOutput {
        rows,
        failures,
        noise_sigma: Some(cal.sigma_eps),
    })
}

/// Error decomposition over `M` repetitions: MSE, bias and total variance
/// per cell, against the mean ground-truth curve.
pub fn run_rq1(cfg: &ExperimentConfig) -> Result<RunOutput> {
    run_rq12(cfg, 1)
}

/// Total, estimation and model variance per cell. Each repetition's fitted
/// models are frozen and re-estimated on `R` fresh datasets.
pub fn run_rq2(cfg: &ExperimentConfig) -> Result<RunOutput> {
    run_rq12(cfg, 2)
}

/// Estimation error of the ground-truth effect against the closed form,
/// over a ladder of sample sizes.
pub fn run_rq3(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let spec = cfg.spec();
    if !spec.has_analytic_effects() {
        return Err(Error::UnsupportedAnalytic(cfg.setting.name().to_string()));
    }
    let features = cfg.feature_indices();
    let sizes = cfg.rq3.sizes();
    let reps = cfg.rq3.repetitions();
    let targets: Vec<(EffectKind, usize)> = cfg
        .kinds
        .iter()
        .flat_map(|&k| features.iter().map(move |&f| (k, f)))
        .collect();
    let grids = features
        .iter()
        .map(|&f| EffectGrid::theoretical(&spec, f, cfg.grid_size).map(Arc::new))
        .collect::<Result<Vec<_>>>()?;
    let grid_of = |f: usize| &grids[features.iter().position(|&x| x == f).expect("planned feature")];
    let truths = targets
        .iter()
        .map(|&(kind, f)| analytic_effect(&spec, f, kind, grid_of(f)).map(|c| c.values))
        .collect::<Result<Vec<_>>>()?;

    let jobs: Vec<(usize, usize)> = (0..sizes.len()).flat_map(|s| (0..reps).map(move |r| (s, r))).collect();
    let results: Vec<Vec<PointErrors>> = jobs
        .par_iter()
        .map(|&(si, rep)| {
            let n = sizes[si];
            let seed = derive_seed(cfg.master_seed, &[Role::SampleSize.into(), si as u64, rep as u64]);
            targets
                .iter()
                .zip(&truths)
                .map(|(&(kind, f), truth)| {
                    let curve = estimate_ground_truth_effect(&spec, f, kind, grid_of(f), n, seed)
                        .map_err(|e| format!("n = {n}, repetition {rep}, {kind} x{}: {e}", f + 1))?;
                    let sq = curve.values.iter().zip(truth).map(|(a, b)| (a - b) * (a - b)).collect();
                    // an evaluated edge whose whole accumulation chain is empty carries no information
                    let mut all_empty = true;
                    let degenerate = (0..curve.values.len())
                        .map(|e| {
                            if let Some(&b) = curve.empty_bins.get(e) {
                                all_empty &= b;
                            } else {
                                all_empty = false;
                            }
                            all_empty
                        })
                        .collect();
                    Ok((sq, degenerate))
                })
                .collect()
        })
        .collect();

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (ti, &(kind, f)) in targets.iter().enumerate() {
        for (si, &n) in sizes.iter().enumerate() {
            let g = truths[ti].len();
            let mut sums = vec![0.0; g];
            let mut counts = vec![0usize; g];
            let mut ok = 0;
            for (ji, &(jsi, _)) in jobs.iter().enumerate() {
                if jsi != si {
                    continue;
                }
                match &results[ji][ti] {
                    Ok((sq, degenerate)) => {
                        ok += 1;
                        for j in 0..g {
                            if !degenerate[j] {
                                sums[j] += sq[j];
                                counts[j] += 1;
                            }
                        }
                    }
                    Err(e) => failures.push(e.clone()),
                }
            }
            let values: Vec<Option<f64>> = (0..g)
                .map(|j| (counts[j] > 0).then(|| sums[j] / counts[j] as f64))
                .collect();
            let present: Vec<f64> = values.iter().flatten().copied().collect();
            let mut flags = Vec::new();
            if ok < reps {
                flags.push(format!("failed_reps:{}", reps - ok));
            }
            let missing = g - present.len();
            if missing > 0 {
                flags.push(format!("missing_points:{missing}"));
            }
            rows.push(ResultRow {
                rq: 3,
                setting: cfg.setting.name().to_string(),
                n,
                learner: "ground_truth".into(),
                mode: String::new(),
                strategy: String::new(),
                kind: kind.name().to_string(),
                feature: f + 1,
                metric: "mse".into(),
                m: ok,
                r: None,
                aggregate: (!present.is_empty()).then(|| aggregate(&present)),
                flags: join_flags(&flags),
                values,
            });
        }
    }
    Ok(RunOutput {
        rows,
        failures,
        noise_sigma: None,
    })
}

/// Mean absolute value of a row's present values, for quick summaries.
pub fn row_abs_mean(row: &ResultRow) -> Option<f64> {
    let v: Vec<f64> = row.values.iter().flatten().copied().collect();
    (!v.is_empty()).then(|| aggregate_abs(&v))
}

/// Dispatch on the protocol number.
pub fn run(cfg: &ExperimentConfig, rq: u8) -> Result<RunOutput> {
    match rq {
        1 => run_rq1(cfg),
        2 => run_rq2(cfg),
        3 => run_rq3(cfg),
        _ => Err(Error::Config(format!("unknown research question {rq} (expected 1, 2 or 3)"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::Setting;
    use crate::models::{LearnerKind, Mode};

    fn smoke(setting: Setting) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::new(setting);
        cfg.n = 200;
        cfg.m = 2;
        cfg.r = 2;
        cfg.grid_size = 12;
        cfg.n_gt = 500;
        cfg.features = vec![1, 2];
        cfg.learners = vec![LearnerEntry {
            learner: LearnerKind::BoostedTrees,
            mode: Mode::Ot,
        }];
        cfg
    }

    #[test]
    fn rq1_row_count_matches_cells() {
        let out = run_rq1(&smoke(Setting::Friedman1)).unwrap();
        // 1 learner x 3 strategies x 2 kinds x 2 features x 3 metrics
        assert_eq!(out.rows.len(), 36);
        assert_eq!(out.exit_code(), 0);
        assert!(out.rows.iter().all(|r| r.values.len() == 10 && r.aggregate.is_some()));
    }

    #[test]
    fn rq2_variances_are_nonnegative() {
        let out = run_rq2(&smoke(Setting::SimpleNormalCorrelated)).unwrap();
        assert_eq!(out.rows.len(), 36);
        for row in out.rows.iter().filter(|r| r.metric == "var_est") {
            assert!(row.values.iter().all(|v| v.unwrap() >= 0.0));
            assert_eq!(row.r, Some(2));
        }
    }

    #[test]
    fn fit_failures_are_recorded_per_cell() {
        let mut cfg = smoke(Setting::Friedman1);
        cfg.n = 12;
        cfg.strategies = vec![StrategyKind::KFoldCV];
        cfg.kinds = vec![EffectKind::Pd];
        // trees need at least 2 * min_leaf rows; folds of 12 rows leave too few
        let out = run_rq1(&cfg).unwrap();
        assert_eq!(out.exit_code(), 2);
        assert_eq!(out.rows.len(), 6);
        assert!(out.rows.iter().all(|r| r.flags.contains("incomplete") && r.aggregate.is_none()));
    }

    #[test]
    fn rq3_needs_an_analytic_setting() {
        let mut cfg = smoke(Setting::Feynman12916);
        cfg.rq3.sizes = Some(vec![10]);
        assert!(matches!(run_rq3(&cfg), Err(Error::UnsupportedAnalytic(_))));
    }

    #[test]
    fn rq3_small_ladder() {
        let mut cfg = smoke(Setting::Friedman1);
        cfg.features = vec![4];
        cfg.rq3.sizes = Some(vec![3, 1000]);
        cfg.rq3.repetitions = Some(3);
        let out = run_rq3(&cfg).unwrap();
        assert_eq!(out.rows.len(), 4);
        let pd: Vec<_> = out.rows.iter().filter(|r| r.kind == "pd").collect();
        assert!(pd.iter().all(|r| r.aggregate.unwrap() < 1e-20));
        let ale_small = out.rows.iter().find(|r| r.kind == "ale" && r.n == 3).unwrap();
        assert!(ale_small.aggregate.unwrap() > 0.0);
    }

    #[test]
    fn unknown_rq_is_a_validation_error() {
        assert!(run(&smoke(Setting::Friedman1), 4).unwrap_err().is_validation());
    }
}
