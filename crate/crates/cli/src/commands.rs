use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use attengluco_core::checkpoint::load_checkpoint;
use attengluco_core::data::synth::{synth_generate, write_dataset};
use attengluco_core::data::{prepare_all, Cohort};
use attengluco_core::gradcheck::suite::{run_suite, SuiteReport};
use attengluco_core::model::horizon_samples;
use attengluco_core::training::{evaluate, mean_report, MetricsReport};
use attengluco_core::{Error, OpKind, Result};

use crate::config::RunConfig;
use crate::experiment::{load_records, run_experiment, Experiment};
use crate::report::{num, Table};

pub const EXIT_OK: u8 = 0;
pub const EXIT_FAILED: u8 = 1;
pub const EXIT_USAGE: u8 = 2;

/// Bad input (configuration, files, data) maps to 2, anything else to 1.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_)
        | Error::Io { .. }
        | Error::Parse { .. }
        | Error::EmptySeries(_)
        | Error::Checkpoint(_)
        | Error::Data(_) => EXIT_USAGE,
        Error::Shape { .. } | Error::Contract(_) => EXIT_FAILED,
    }
}

/// Writes a synthetic dataset; returns the manifest path.
pub fn cmd_synth(seed: u64, n_per_cohort: usize, days: u32, out: &Path) -> Result<PathBuf> {
    let subjects = synth_generate(seed, n_per_cohort, days)?;
    write_dataset(out, &subjects)?;
    Ok(out.join("manifest.csv"))
}

/// Runs the configured experiment and writes its reports under
/// `cfg.output_dir`.
pub fn cmd_experiment(cfg: &RunConfig) -> Result<(Experiment, Vec<PathBuf>)> {
    let records = load_records(&cfg.manifest)?;
    let experiment = run_experiment(cfg, &records)?;
    let written = experiment.write(&cfg.output_dir)?;
    Ok((experiment, written))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            _ => Err(format!("unknown split '{s}' (expected train or test)")),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

const EVAL_HEADER: [&str; 7] = ["level", "cohort", "subject_id", "rmse", "mae", "pearson", "n_windows"];

fn eval_row(level: &str, cohort: Cohort, id: &str, r: &MetricsReport) -> Vec<String> {
    vec![
        level.to_string(),
        cohort.to_string(),
        id.to_string(),
        num(r.rmse),
        num(r.mae),
        num(r.pearson),
        r.n_windows.to_string(),
    ]
}

/// Scores a checkpoint on one split of every subject in `manifest`. Rows
/// per subject, then per-cohort means of those rows. Warnings list subjects
/// the pipeline could not use.
pub fn cmd_eval(
    checkpoint: &Path,
    manifest: &Path,
    split: Split,
    expected_ph_minutes: Option<u32>,
) -> Result<(Table, Vec<String>)> {
    let ckpt = load_checkpoint(checkpoint)?;
    let model = &ckpt.model;
    if let Some(ph) = expected_ph_minutes {
        let m = horizon_samples(ph)?;
        if m != model.horizon() {
            return Err(Error::Checkpoint(format!(
                "checkpoint forecasts m={} samples, PH {ph} min needs m={m}",
                model.horizon()
            )));
        }
    }
    let records = load_records(manifest)?;
    let (subjects, warnings) = prepare_all(&records, &ckpt.pipeline, model.window(), model.horizon());
    let mut table = Table::new(&EVAL_HEADER);
    let mut per_cohort: Vec<(Cohort, Vec<MetricsReport>)> = Cohort::ALL.iter().map(|&c| (c, Vec::new())).collect();
    for s in &subjects {
        let windows = match split {
            Split::Train => &s.train,
            Split::Test => &s.test,
        };
        if windows.is_empty() {
            continue;
        }
        let r = evaluate(model, windows, &s.stats)?;
        table.push(eval_row("subject", s.cohort, &s.subject_id, &r));
        per_cohort[s.cohort.index()].1.push(r);
    }
    if table.rows.is_empty() {
        return Err(Error::Data(format!(
            "the {split} split has no windows for this checkpoint"
        )));
    }
    for (c, reports) in &per_cohort {
        if let Some(m) = mean_report(reports) {
            table.push(eval_row("cohort", *c, "", &m));
        }
    }
    Ok((table, warnings))
}

pub fn cmd_gradcheck(seed: u64, fault: Option<OpKind>) -> Result<SuiteReport> {
    run_suite(seed, fault)
}

pub fn gradcheck_table(report: &SuiteReport) -> Table {
    let mut t = Table::new(&["check", "cases", "coords", "max_rel_error", "result"]);
    for e in &report.entries {
        t.push(vec![
            e.name.clone(),
            e.cases.to_string(),
            e.coords.to_string(),
            format!("{:.3e}", e.max_rel_error),
            if e.passed { "pass" } else { "FAIL" }.to_string(),
        ]);
    }
    t
}
