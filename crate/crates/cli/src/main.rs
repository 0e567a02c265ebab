use std::path::PathBuf;
use std::process::ExitCode;

use attengluco_cli::commands::{
    cmd_eval, cmd_experiment, cmd_gradcheck, cmd_synth, exit_code, gradcheck_table, Split, EXIT_FAILED, EXIT_OK,
    EXIT_USAGE,
};
use attengluco_cli::RunConfig;
use attengluco_core::{OpKind, Result};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "attengluco", version, about = "Multimodal glucose forecasting experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic CGM + activity dataset with a manifest.
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        n_per_cohort: Option<usize>,
        #[arg(long)]
        days: Option<u32>,
    },
    /// Train and evaluate under one of the three protocols.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `output.dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score a checkpoint without training.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        /// Reject the checkpoint unless it forecasts this horizon.
        #[arg(long)]
        ph_minutes: Option<u32>,
        /// CSV destination; printed to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference checks of every op and both networks.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, hide = true)]
        inject_fault: Option<OpKind>,
    },
}

fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Synth {
            config,
            out,
            seed,
            n_per_cohort,
            days,
        } => {
            let base = match config {
                Some(p) => RunConfig::load(p)?,
                None => RunConfig::default(),
            };
            let manifest = cmd_synth(
                seed.unwrap_or(base.seed),
                n_per_cohort.unwrap_or(base.synth_n_per_cohort),
                days.unwrap_or(base.synth_days),
                &out,
            )?;
            println!("wrote {}", manifest.display());
            Ok(EXIT_OK)
        }
        Command::Experiment { config, out, seed } => {
            let mut cfg = RunConfig::load(config)?;
            if let Some(o) = out {
                cfg.output_dir = o;
            }
            if let Some(s) = seed {
                cfg.seed = s;
                cfg.train.seed = s;
            }
            let (experiment, written) = cmd_experiment(&cfg)?;
            for w in &experiment.warnings {
                eprintln!("warning: {w}");
            }
            println!("{}", experiment.summary());
            for p in written {
                println!("wrote {}", p.display());
            }
            Ok(EXIT_OK)
        }
        Command::Eval {
            checkpoint,
            manifest,
            split,
            ph_minutes,
            out,
        } => {
            let (table, warnings) = cmd_eval(&checkpoint, &manifest, split, ph_minutes)?;
            for w in &warnings {
                eprintln!("warning: skipped {w}");
            }
            match out {
                Some(p) => {
                    table.write(&p)?;
                    println!("wrote {}", p.display());
                }
                None => print!("{}", table.to_csv()),
            }
            Ok(EXIT_OK)
        }
        Command::Gradcheck { seed, inject_fault } => {
            let report = cmd_gradcheck(seed, inject_fault)?;
            println!("{}", gradcheck_table(&report).render());
            println!(
                "{} in {:.1} s (tolerance {:.0e})",
                if report.passed() {
                    "all checks passed"
                } else {
                    "gradient check FAILED"
                },
                report.elapsed.as_secs_f64(),
                report.tol
            );
            Ok(if report.passed() { EXIT_OK } else { EXIT_FAILED })
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { EXIT_OK });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
