use std::path::Path;
use std::process::{Command, Output};

fn effektor(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_effektor"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("cfg.toml");
    std::fs::write(&path, body).unwrap();
    path.to_string_lossy().into_owned()
}

const SMOKE: &str = r#"
schema_version = 1
setting = "friedman1"
n = 150
learners = [{ learner = "boosted_trees", mode = "ot" }]
strategies = ["train", "cv"]
kinds = ["pd"]
features = [1]
M = 2
R = 2
G = 10
n_gt = 300
master_seed = 3
"#;

#[test]
fn effects_prints_a_curve() {
    let out = effektor(&["effects", "--setting", "simple_normal_correlated", "--feature", "2", "--kind", "ale", "--n", "2000"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "feature,kind,x,value,std_error");
    assert_eq!(lines.len(), 99);
    assert!(lines[1].starts_with("2,ale,"));
}

#[test]
fn bad_arguments_exit_with_one() {
    assert_eq!(effektor(&["effects", "--setting", "nope", "--feature", "1", "--kind", "pd", "--n", "10"]).status.code(), Some(1));
    assert_eq!(effektor(&["effects", "--setting", "friedman1", "--feature", "9", "--kind", "pd", "--n", "10"]).status.code(), Some(1));
    assert_eq!(effektor(&["simulate", "--rq", "7"]).status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "schema_version = 1\nsetting = \"friedman1\"\nM = 1\n");
    let out_dir = dir.path().join("out");
    let out = effektor(&["simulate", "--config", &cfg, "--rq", "1", "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn simulate_writes_csv_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMOKE);
    let out_dir = dir.path().join("out");
    let out = effektor(&["simulate", "--config", &cfg, "--rq", "2", "--out", out_dir.to_str().unwrap(), "--threads", "1"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(out_dir.join("rq2.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 3);
    let manifest = std::fs::read_to_string(out_dir.join("rq2_manifest.json")).unwrap();
    assert!(manifest.contains("\"config_sha256\""));
    assert!(manifest.contains("\"master_seed\": 3"));
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMOKE);
    let run = |seed: &str, sub: &str| {
        let out_dir = dir.path().join(sub);
        let out = effektor(&["simulate", "--config", &cfg, "--rq", "1", "--out", out_dir.to_str().unwrap(), "--seed", seed]);
        assert!(out.status.success());
        std::fs::read(out_dir.join("rq1.csv")).unwrap()
    };
    let a = run("11", "a");
    assert_eq!(a, run("11", "b"));
    assert_ne!(a, run("12", "c"));
}

#[test]
fn cell_failures_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    // folds of 2-3 rows are too small for trees with min_samples_leaf = 10
    let cfg = write_config(dir.path(), &SMOKE.replace("n = 150", "n = 12"));
    let out_dir = dir.path().join("out");
    let out = effektor(&["simulate", "--config", &cfg, "--rq", "1", "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(out_dir.join("rq1.csv").exists());
}
