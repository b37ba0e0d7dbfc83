//! `branchlab`: batch driver for scaling, dimension and validator experiments.

mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use branchlab_core::experiments::{self, ExperimentConfig, ExperimentKind};
use branchlab_core::Error;
use clap::{Parser, Subcommand};

use crate::output::{Bundle, Meta};

#[derive(Parser)]
#[command(name = "branchlab", version, about = "Branched transport experiments in one dimension")]
#[command(after_help = "Any config key can be overridden as --key=value, e.g. --K=512 or --optimizer.rng_seed=7.")]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Subcommand)]
enum Verb {
    /// Fit log E against log T for each s.
    GlobalScaling(Args),
    /// Fit the boundary-layer energy against the layer width.
    LocalScaling(Args),
    /// Estimate the dimension of the boundary measure.
    Dimension(Args),
    /// Run the structural checks on seeds, optimized patterns and fixtures.
    Validate(Args),
    /// Build seed constructions and report their energies.
    Construct(Args),
}

#[derive(clap::Args)]
struct Args {
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to `output_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// A run that ends with a nonzero exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn config(message: String) -> Self {
        Self { code: 1, message }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::DivergentBoundaryNorm(_) | Error::InfiniteNorm | Error::StaleInput(_) => 3,
            _ => 1,
        };
        Self { code, message: e.to_string() }
    }
}

fn execute(cfg: &ExperimentConfig, meta: &Meta) -> Result<Bundle, Failure> {
    Ok(match cfg.experiment {
        ExperimentKind::GlobalScaling => {
            let r = experiments::run_global_scaling(cfg)?;
            if r.iter().flat_map(|g| &g.points).any(|p| !p.best.is_finite()) {
                return Err(Failure { code: 3, message: "non-finite energy in global scaling".into() });
            }
            for w in r.iter().filter_map(|g| g.warning.as_ref()) {
                eprintln!("warning: {w}");
            }
            output::global(meta, &r)?
        }
        ExperimentKind::LocalScaling => output::local(meta, &experiments::run_local_scaling(cfg)?)?,
        ExperimentKind::DimensionSweep => output::dimension(meta, &experiments::run_dimension_sweep(cfg)?)?,
        ExperimentKind::ValidatorSuite => output::validator(meta, &experiments::run_validator_suite(cfg)?)?,
        ExperimentKind::ConstructionBench => output::bench(meta, &experiments::run_construction_bench(cfg)?)?,
    })
}

fn run() -> Result<u8, Failure> {
    let (args, overrides) = config::split_overrides(std::env::args());
    let cli = Cli::parse_from(args);
    let (kind, args) = match cli.verb {
        Verb::GlobalScaling(a) => (ExperimentKind::GlobalScaling, a),
        Verb::LocalScaling(a) => (ExperimentKind::LocalScaling, a),
        Verb::Dimension(a) => (ExperimentKind::DimensionSweep, a),
        Verb::Validate(a) => (ExperimentKind::ValidatorSuite, a),
        Verb::Construct(a) => (ExperimentKind::ConstructionBench, a),
    };
    let cfg = config::load(&args.config, kind, &overrides)?;
    let hash = config::config_hash(&cfg);
    let out = args
        .out
        .or_else(|| cfg.output_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("results").join(&hash[..12]));
    let meta = Meta { hash: &hash, config: &cfg };
    let bundle = match cfg.cache.then(|| output::load_cached(&out, &hash)).flatten() {
        Some(b) => {
            eprintln!("reusing cached results {}", &hash[..12]);
            b
        }
        None => execute(&cfg, &meta)?,
    };
    output::write(&out, &hash, &bundle, cfg.cache)?;
    print!("{}", bundle.summary);
    println!("wrote {}", out.display());
    Ok(bundle.exit_code as u8)
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
