use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use neurocmp::config::{parse_overrides, RunConfig};
use neurocmp::pipeline::{Pipeline, Stage, StageReport};
use neurocmp::Error;

/// Compare how well model representations predict intracranial responses.
#[derive(Parser, Debug)]
#[command(name = "neurocmp", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Validate inputs and project features into the output directory.
    Ingest(StageArgs),
    /// Cross-validated ridge scores for every model, layer, electrode and bin.
    Regress(StageArgs),
    /// Event-bootstrap confidence intervals and the survivor filter.
    Bootstrap(StageArgs),
    /// Time-bin bootstrap comparisons of the best two models, FDR corrected.
    Compare(StageArgs),
    /// The multimodality tests on both alignments.
    Tests(StageArgs),
    /// Summary tables, region aggregation and the run manifest.
    Report(StageArgs),
    /// Every analysis stage from ingest to report.
    Run(StageArgs),
    /// Write a synthetic dataset with planted ground truth.
    Synth(StageArgs),
    /// Check the numerical kernels against reference implementations.
    Selfcheck(StageArgs),
}

#[derive(clap::Args, Debug)]
struct StageArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides for configuration keys, e.g. `--seed 7 --ridge.k_folds 5`.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY VALUE")]
    overrides: Vec<String>,
}

fn run(cli: Cli) -> Result<bool, Error> {
    let (stage, args) = match cli.command {
        Command::Ingest(a) => (Some(Stage::Ingest), a),
        Command::Regress(a) => (Some(Stage::Regress), a),
        Command::Bootstrap(a) => (Some(Stage::Bootstrap), a),
        Command::Compare(a) => (Some(Stage::Compare), a),
        Command::Tests(a) => (Some(Stage::Tests), a),
        Command::Report(a) => (Some(Stage::Report), a),
        Command::Run(a) => (None, a),
        Command::Synth(a) => (Some(Stage::Synth), a),
        Command::Selfcheck(a) => (Some(Stage::Selfcheck), a),
    };
    let overrides = parse_overrides(&args.overrides)?;
    let config = if stage == Some(Stage::Selfcheck) && args.config.is_none() && overrides.is_empty() {
        RunConfig::load(None, &parse_overrides(&["--seed".into(), "0".into()])?)?
    } else {
        RunConfig::load(args.config.as_deref(), &overrides)?
    };
    let pipeline = Pipeline::new(config);
    let Some(stage) = stage else {
        let written = pipeline.run_chain()?;
        println!("wrote {} files under {}", written.len(), pipeline.output_dir().display());
        return Ok(true);
    };
    match pipeline.execute(stage)? {
        StageReport::Done(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            Ok(true)
        }
        StageReport::Checks(checks) => {
            let mut ok = true;
            for c in &checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
                ok &= c.passed;
            }
            Ok(ok)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(4),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
