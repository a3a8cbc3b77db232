use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dgp::{DgpSpec, Setting, DEFAULT_SNR};
use crate::effects::{EffectKind, DEFAULT_GRID_SIZE, DEFAULT_GROUND_TRUTH_N};
use crate::error::{Error, Result};
use crate::models::{LearnerConfig, LearnerKind, Mode};
use crate::strategies::{StrategyKind, StrategySpec};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnerEntry {
    pub learner: LearnerKind,
    pub mode: Mode,
}

/// Size ladder for the sample-size study.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rq3Config {
    /// Use the full ladder (50 sizes up to 10^6, 50 repetitions).
    #[serde(default)]
    pub full: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sizes: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub repetitions: Option<usize>,
}

fn log_ladder(lo_exp: f64, hi_exp: f64, count: usize) -> Vec<usize> {
    let mut sizes: Vec<usize> = (0..count)
        .map(|i| {
            let e = lo_exp + (hi_exp - lo_exp) * i as f64 / (count - 1) as f64;
            10f64.powf(e).round() as usize
        })
        .collect();
    sizes.dedup();
    sizes
}

impl Rq3Config {
    pub fn sizes(&self) -> Vec<usize> {
        match (&self.sizes, self.full) {
            (Some(s), _) => s.clone(),
            (None, false) => log_ladder(1.0, 5.0, 25),
            (None, true) => log_ladder(1.0, 6.0, 50),
        }
    }

    pub fn repetitions(&self) -> usize {
        self.repetitions.unwrap_or(if self.full { 50 } else { 25 })
    }
}

fn default_n() -> usize {
    1250
}
fn default_learners() -> Vec<LearnerEntry> {
    vec![
        LearnerEntry {
            learner: LearnerKind::BoostedTrees,
            mode: Mode::Of,
        },
        LearnerEntry {
            learner: LearnerKind::BoostedTrees,
            mode: Mode::Ot,
        },
    ]
}
fn default_strategies() -> Vec<StrategyKind> {
    StrategyKind::ALL.to_vec()
}
fn default_kinds() -> Vec<EffectKind> {
    vec![EffectKind::Pd, EffectKind::Ale]
}
fn default_reps() -> usize {
    30
}
fn default_grid() -> usize {
    DEFAULT_GRID_SIZE
}
fn default_n_gt() -> usize {
    DEFAULT_GROUND_TRUTH_N
}
fn default_snr() -> f64 {
    DEFAULT_SNR
}

/// Declarative description of one simulation run. Features are 1-based
/// here and in all outputs; an empty list means every feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub setting: Setting,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_learners")]
    pub learners: Vec<LearnerEntry>,
    #[serde(default = "default_strategies")]
    pub strategies: Vec<StrategyKind>,
    #[serde(default = "default_kinds")]
    pub kinds: Vec<EffectKind>,
    #[serde(default)]
    pub features: Vec<usize>,
    #[serde(default = "default_reps", alias = "M")]
    pub m: usize,
    #[serde(default = "default_reps", alias = "R")]
    pub r: usize,
    #[serde(default = "default_grid", alias = "G")]
    pub grid_size: usize,
    #[serde(default = "default_n_gt")]
    pub n_gt: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_snr")]
    pub snr: f64,
    #[serde(default)]
    pub rq3: Rq3Config,
}

impl ExperimentConfig {
    /// A config with every default filled in.
    pub fn new(setting: Setting) -> Self {
        ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            setting,
            n: default_n(),
            learners: default_learners(),
            strategies: default_strategies(),
            kinds: default_kinds(),
            features: Vec::new(),
            m: default_reps(),
            r: default_reps(),
            grid_size: default_grid(),
            n_gt: default_n_gt(),
            master_seed: 0,
            snr: default_snr(),
            rq3: Rq3Config::default(),
        }
    }

    pub fn spec(&self) -> DgpSpec {
        DgpSpec::new(self.setting)
    }

    /// 0-based feature indices to analyze.
    pub fn feature_indices(&self) -> Vec<usize> {
        if self.features.is_empty() {
            (0..self.spec().p()).collect()
        } else {
            self.features.iter().map(|f| f - 1).collect()
        }
    }

    pub fn learner_configs(&self) -> Vec<LearnerConfig> {
        self.learners
            .iter()
            .map(|e| LearnerConfig::preset(e.learner, e.mode, self.setting, self.n))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.m < 2 {
            return Err(Error::Config(format!("M must be at least 2, got {}", self.m)));
        }
        if self.r < 2 {
            return Err(Error::Config(format!("R must be at least 2, got {}", self.r)));
        }
        if self.grid_size < 3 {
            return Err(Error::Config(format!("grid_size must be at least 3, got {}", self.grid_size)));
        }
        if self.n_gt == 0 {
            return Err(Error::Config("n_gt must be positive".into()));
        }
        if !(self.snr > 0.0 && self.snr.is_finite()) {
            return Err(Error::Config(format!("snr must be positive, got {}", self.snr)));
        }
        if self.learners.is_empty() || self.strategies.is_empty() || self.kinds.is_empty() {
            return Err(Error::Config("learners, strategies and kinds must be non-empty".into()));
        }
        let p = self.spec().p();
        if let Some(f) = self.features.iter().find(|&&f| f == 0 || f > p) {
            return Err(Error::Config(format!("feature {f} out of range 1..={p}")));
        }
        for &s in &self.strategies {
            let need = StrategySpec::new(s, 0).min_n();
            if self.n < need {
                return Err(Error::Config(format!("n = {} too small for strategy {s} (needs {need})", self.n)));
            }
        }
        for cfg in self.learner_configs() {
            cfg.validate()?;
        }
        if self.rq3.sizes.as_ref().is_some_and(|s| s.is_empty() || s.contains(&0)) {
            return Err(Error::Config("rq3 sizes must be positive and non-empty".into()));
        }
        if self.rq3.repetitions == Some(0) {
            return Err(Error::Config("rq3 repetitions must be positive".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical TOML rendering.
    pub fn sha256(&self) -> String {
        let text = toml::to_string(self).expect("config serializes");
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

pub fn parse_config_str(text: &str) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_config_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = parse_config_str("schema_version = 1\nsetting = \"friedman1\"\n").unwrap();
        assert_eq!((cfg.m, cfg.r, cfg.grid_size, cfg.n_gt, cfg.n), (30, 30, 100, 10_000, 1250));
        assert_eq!(cfg.strategies.len(), 3);
        assert_eq!(cfg.feature_indices(), (0..7).collect::<Vec<_>>());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        for text in [
            "schema_version = 1\nsetting = \"friedman1\"\nM = 1\n",
            "schema_version = 2\nsetting = \"friedman1\"\n",
            "schema_version = 1\nsetting = \"friedman1\"\nbogus = 3\n",
            "schema_version = 1\nsetting = \"nope\"\n",
            "setting = \"friedman1\"\n",
            "schema_version = 1\nsetting = \"friedman1\"\nfeatures = [8]\n",
            "schema_version = 1\nsetting = \"friedman1\"\nn = 4\nstrategies = [\"val\"]\n",
            "schema_version = 1\nsetting = \"friedman1\"\n[rq3]\nsizes = []\n",
        ] {
            let err = parse_config_str(text).unwrap_err();
            assert!(err.is_validation(), "{text}: {err}");
        }
    }

    #[test]
    fn full_config_parses() {
        let cfg = parse_config_str(
            r#"
schema_version = 1
setting = "simple_normal_correlated"
n = 500
learners = [{ learner = "ridge_basis", mode = "ot" }, { learner = "linear", mode = "ot" }]
strategies = ["cv"]
kinds = ["ale"]
features = [1, 2]
M = 4
R = 3
G = 20
n_gt = 1000
master_seed = 9

[rq3]
sizes = [10, 100]
repetitions = 3
"#,
        )
        .unwrap();
        assert_eq!(cfg.feature_indices(), vec![0, 1]);
        assert_eq!(cfg.rq3.sizes(), vec![10, 100]);
        assert_eq!(cfg.learner_configs()[1].id(), "linear");
    }

    #[test]
    fn desk_ladder_spans_four_decades() {
        let s = Rq3Config::default().sizes();
        assert_eq!(s.len(), 25);
        assert_eq!((s[0], s[24]), (10, 100_000));
        assert_eq!(Rq3Config::default().repetitions(), 25);
        let full = Rq3Config {
            full: true,
            ..Default::default()
        };
        assert_eq!(full.sizes().len(), 50);
        assert_eq!(*full.sizes().last().unwrap(), 1_000_000);
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::new(Setting::Friedman1);
        let mut b = a.clone();
        assert_eq!(a.sha256(), b.sha256());
        b.master_seed = 1;
        assert_ne!(a.sha256(), b.sha256());
    }
}
