use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use effektor_core::effects::{estimate_ground_truth_effect, EffectGrid, DEFAULT_GRID_SIZE};
use effektor_core::harness::{self, format_value};
use effektor_core::{DgpSpec, EffectKind, Error, Setting};

#[derive(Debug, Parser)]
#[command(name = "effektor", version, about = "Simulate and estimate PD/ALE feature effect errors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one research-question protocol from a TOML config.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Protocol: 1 error decomposition, 2 variance split, 3 sample-size study.
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
        rq: u8,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        threads: Option<usize>,
        /// Overrides `master_seed` from the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Estimate one ground-truth effect curve and print it as CSV.
    Effects {
        #[arg(long)]
        setting: String,
        /// 1-based feature index.
        #[arg(long)]
        feature: usize,
        #[arg(long)]
        kind: String,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = DEFAULT_GRID_SIZE)]
        grid_size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn fail(err: &Error) -> ExitCode {
    eprintln!("error: {err}");
    ExitCode::from(if err.is_validation() { 1 } else { 2 })
}

fn simulate(config: PathBuf, rq: u8, out: PathBuf, threads: Option<usize>, seed: Option<u64>) -> Result<u8, Error> {
    let mut cfg = harness::parse_config(&config)?;
    if let Some(s) = seed {
        cfg.master_seed = s;
    }
    let output = harness::with_threads(threads, || harness::run(&cfg, rq))??;
    let manifest = harness::write_results(&out, rq, &cfg, &output.rows, output.noise_sigma, &output.failures)?;
    for f in &output.failures {
        eprintln!("cell failure: {f}");
    }
    eprintln!(
        "wrote {} rows to {} (results sha256 {})",
        manifest.rows,
        out.join(format!("rq{rq}.csv")).display(),
        manifest.results_sha256
    );
    Ok(output.exit_code() as u8)
}

fn effects(setting: &str, feature: usize, kind: &str, n: usize, grid_size: usize, seed: u64) -> Result<(), Error> {
    let setting: Setting = setting.parse()?;
    let kind: EffectKind = kind.parse()?;
    let spec = DgpSpec::new(setting);
    if feature == 0 || feature > spec.p() {
        return Err(Error::Config(format!("feature {feature} out of range 1..={}", spec.p())));
    }
    if n == 0 {
        return Err(Error::Config("n must be positive".into()));
    }
    let grid = Arc::new(EffectGrid::theoretical(&spec, feature - 1, grid_size)?);
    let curve = estimate_ground_truth_effect(&spec, feature - 1, kind, &grid, n, seed)?;
    println!("feature,kind,x,value,std_error");
    for ((x, v), se) in grid.evaluated().iter().zip(&curve.values).zip(&curve.std_errors) {
        println!("{feature},{kind},{},{},{}", format_value(*x), format_value(*v), format_value(*se));
    }
    if curve.n_empty_bins() > 0 {
        eprintln!("warning: {} empty bins", curve.n_empty_bins());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match cli.command {
        Command::Simulate {
            config,
            rq,
            out,
            threads,
            seed,
        } => match simulate(config, rq, out, threads, seed) {
            Ok(code) => ExitCode::from(code),
            Err(e) => fail(&e),
        },
        Command::Effects {
            setting,
            feature,
            kind,
            n,
            grid_size,
            seed,
        } => match effects(&setting, feature, &kind, n, grid_size, seed) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => fail(&e),
        },
    }
}
