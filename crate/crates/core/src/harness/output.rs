//! Long-format CSV results and the JSON run manifest.

use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::models::PRESET_VERSION;

pub const COLUMNS: [&str; 14] = [
    "rq", "setting", "n", "learner", "mode", "strategy", "kind", "feature", "metric", "m", "r", "aggregate", "flags",
    "values",
];

const MISSING: &str = "NA";

/// One metric of one cell. `feature` is 1-based.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub rq: u8,
    pub setting: String,
    pub n: usize,
    pub learner: String,
    pub mode: String,
    pub strategy: String,
    pub kind: String,
    pub feature: usize,
    pub metric: String,
    pub m: usize,
    pub r: Option<usize>,
    pub aggregate: Option<f64>,
    /// `|`-separated diagnostics such as `empty_bins:12` or `incomplete`.
    pub flags: String,
    pub values: Vec<Option<f64>>,
}

/// Shortest round-trip rendering, switching to exponent form for very
/// small or large magnitudes.
pub fn format_value(v: f64) -> String {
    let a = v.abs();
    if v != 0.0 && v.is_finite() && !(1e-4..1e15).contains(&a) {
        format!("{v:e}")
    } else {
        format!("{v}")
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| MISSING.to_string(), format_value)
}

fn parse_opt(s: &str) -> Result<Option<f64>> {
    if s == MISSING {
        return Ok(None);
    }
    s.parse()
        .map(Some)
        .map_err(|_| Error::Parse(format!("bad numeric value `{s}`")))
}

impl ResultRow {
    fn record(&self) -> Vec<String> {
        vec![
            self.rq.to_string(),
            self.setting.clone(),
            self.n.to_string(),
            self.learner.clone(),
            self.mode.clone(),
            self.strategy.clone(),
            self.kind.clone(),
            self.feature.to_string(),
            self.metric.clone(),
            self.m.to_string(),
            self.r.map_or_else(String::new, |r| r.to_string()),
            fmt_opt(self.aggregate),
            self.flags.clone(),
            self.values.iter().map(|v| fmt_opt(*v)).collect::<Vec<_>>().join(";"),
        ]
    }
}

pub fn write_csv_to<W: std::io::Write>(rows: &[ResultRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(COLUMNS).map_err(csv_err)?;
    for row in rows {
        w.write_record(row.record()).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv(rows: &[ResultRow], path: &Path) -> Result<()> {
    write_csv_to(rows, std::fs::File::create(path)?)
}

pub fn read_csv(path: &Path) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Parse(e.to_string()))?;
    let header: Vec<String> = r
        .headers()
        .map_err(|e| Error::Parse(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if header != COLUMNS {
        return Err(Error::Parse("unexpected CSV header".into()));
    }
    let int = |s: &str| s.parse::<usize>().map_err(|_| Error::Parse(format!("bad integer `{s}`")));
    r.records()
        .map(|rec| {
            let rec = rec.map_err(|e| Error::Parse(e.to_string()))?;
            Ok(ResultRow {
                rq: rec[0].parse().map_err(|_| Error::Parse("bad rq".into()))?,
                setting: rec[1].to_string(),
                n: int(&rec[2])?,
                learner: rec[3].to_string(),
                mode: rec[4].to_string(),
                strategy: rec[5].to_string(),
                kind: rec[6].to_string(),
                feature: int(&rec[7])?,
                metric: rec[8].to_string(),
                m: int(&rec[9])?,
                r: if rec[10].is_empty() { None } else { Some(int(&rec[10])?) },
                aggregate: parse_opt(&rec[11])?,
                flags: rec[12].to_string(),
                values: if rec[13].is_empty() {
                    Vec::new()
                } else {
                    rec[13].split(';').map(parse_opt).collect::<Result<_>>()?
                },
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub rq: u8,
    pub schema_version: u32,
    pub config_sha256: String,
    pub results_sha256: String,
    pub master_seed: u64,
    pub crate_version: String,
    pub preset_version: u32,
    pub noise_sigma: Option<f64>,
    pub rows: usize,
    pub failures: Vec<String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Write `rq<k>.csv` and `rq<k>_manifest.json` into `dir`.
pub fn write_results(
    dir: &Path,
    rq: u8,
    cfg: &ExperimentConfig,
    rows: &[ResultRow],
    noise_sigma: Option<f64>,
    failures: &[String],
) -> Result<Manifest> {
    std::fs::create_dir_all(dir)?;
    let mut buf = Vec::new();
    write_csv_to(rows, &mut buf)?;
    std::fs::write(dir.join(format!("rq{rq}.csv")), &buf)?;
    let manifest = Manifest {
        rq,
        schema_version: cfg.schema_version,
        config_sha256: cfg.sha256(),
        results_sha256: sha256_hex(&buf),
        master_seed: cfg.master_seed,
        crate_version: env!("CARGO_PKG_VERSION").to_string(),
        preset_version: PRESET_VERSION,
        noise_sigma,
        rows: rows.len(),
        failures: failures.to_vec(),
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    std::fs::write(dir.join(format!("rq{rq}_manifest.json")), json + "\n")?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(values: Vec<Option<f64>>) -> ResultRow {
        ResultRow {
            rq: 1,
            setting: "friedman1".into(),
            n: 1250,
            learner: "boosted_trees".into(),
            mode: "of".into(),
            strategy: "cv".into(),
            kind: "ale".into(),
            feature: 3,
            metric: "mse".into(),
            m: 30,
            r: None,
            aggregate: Some(0.125),
            flags: "empty_bins:2|incomplete".into(),
            values,
        }
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.csv");
        let rows = vec![
            row(vec![Some(1e-300), Some(-0.1), None, Some(123456.789), Some(0.0)]),
            ResultRow {
                r: Some(30),
                aggregate: None,
                flags: String::new(),
                ..row(vec![Some(f64::MIN_POSITIVE), Some(1e20), Some(std::f64::consts::PI)])
            },
            row(Vec::new()),
        ];
        write_csv(&rows, &path).unwrap();
        assert_eq!(read_csv(&path).unwrap(), rows);
    }

    #[test]
    fn value_formatting() {
        assert_eq!(format_value(0.5), "0.5");
        assert_eq!(format_value(1e-20), "1e-20");
        assert_eq!(format_value(0.0), "0");
        assert_eq!(format_value(2.5e16), "2.5e16");
    }
}
