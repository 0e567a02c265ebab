//! Runs a configured scenario and turns the results into report tables.

use std::path::{Path, PathBuf};

use attengluco_core::checkpoint::save_checkpoint;
use attengluco_core::data::{load_manifest, load_subject, prepare_all, Cohort, PipelineConfig, SubjectRecord};
use attengluco_core::model::horizon_samples;
use attengluco_core::training::scenarios::{mean_std, run_scenario};
use attengluco_core::training::{run_repetitions, MetricsReport, ScenarioResult};
use attengluco_core::{ModelSpec, Result};

use crate::config::RunConfig;
use crate::report::{num, Table};

pub const METRICS_BY_COHORT: &str = "metrics_by_cohort.csv";
pub const RMSE_BY_SUBJECT: &str = "rmse_by_subject.csv";
pub const RMSE_BY_HORIZON: &str = "rmse_by_horizon.csv";
pub const FORGETTING_MATRIX: &str = "forgetting_matrix.csv";

const COHORT_HEADER: [&str; 12] = [
    "cohort",
    "model",
    "rmse",
    "mae",
    "pearson",
    "scenario",
    "ph_minutes",
    "rmse_std",
    "mae_std",
    "pearson_std",
    "n_windows",
    "repetitions",
];
const SUBJECT_HEADER: [&str; 8] = [
    "cohort",
    "subject_index",
    "rmse",
    "subject_id",
    "model",
    "scenario",
    "ph_minutes",
    "rmse_std",
];
const HORIZON_HEADER: [&str; 7] = [
    "cohort",
    "model",
    "ph_minutes",
    "rmse",
    "scenario",
    "rmse_std",
    "rmse_last_step",
];
const FORGETTING_HEADER: [&str; 8] = [
    "trained_through",
    "evaluated_on",
    "rmse",
    "mae",
    "pearson",
    "model",
    "ph_minutes",
    "delta_rmse",
];

/// Every repetition of one (model, horizon) combination.
#[derive(Clone, Debug)]
pub struct Run {
    pub spec: ModelSpec,
    pub ph_minutes: u32,
    pub repetitions: Vec<ScenarioResult>,
}

#[derive(Clone, Debug)]
pub struct Experiment {
    pub runs: Vec<Run>,
    pub pipeline: PipelineConfig,
    pub warnings: Vec<String>,
}

pub fn load_records(manifest: &Path) -> Result<Vec<SubjectRecord>> {
    load_manifest(manifest)?.iter().map(load_subject).collect()
}

/// Runs the configured scenario for every selected model and horizon.
pub fn run_experiment(cfg: &RunConfig, records: &[SubjectRecord]) -> Result<Experiment> {
    let mut runs = Vec::new();
    let mut warnings = Vec::new();
    for &ph in &cfg.ph_minutes {
        let horizon = horizon_samples(ph)?;
        let (subjects, skipped) = prepare_all(records, &cfg.pipeline, cfg.window, horizon);
        warnings.extend(skipped.into_iter().map(|s| format!("PH {ph} min: skipped {s}")));
        for &kind in &cfg.models {
            let spec = cfg.spec(kind, horizon);
            let repetitions = run_repetitions(cfg.train.repetitions, cfg.seed, cfg.workers, |seed| {
                run_scenario(cfg.scenario, &subjects, &spec, &cfg.train, seed)
            })?;
            for s in &repetitions[0].skipped {
                warnings.push(format!("{kind}, PH {ph} min: skipped {s}"));
            }
            runs.push(Run {
                spec,
                ph_minutes: ph,
                repetitions,
            });
        }
    }
    Ok(Experiment {
        runs,
        pipeline: cfg.pipeline.clone(),
        warnings,
    })
}

fn stats_of<F: Fn(&MetricsReport) -> f64>(reports: &[&MetricsReport], f: F) -> (f64, f64) {
    mean_std(&reports.iter().map(|r| f(r)).collect::<Vec<_>>())
}

fn cohort_reports(run: &Run, c: Cohort) -> Vec<&MetricsReport> {
    run.repetitions.iter().filter_map(|r| r.cohort(c)).collect()
}

impl Experiment {
    pub fn metrics_by_cohort(&self) -> Table {
        let mut t = Table::new(&COHORT_HEADER);
        for run in &self.runs {
            for (c, first) in &run.repetitions[0].by_cohort {
                let reps = cohort_reports(run, *c);
                let (rmse, rmse_sd) = stats_of(&reps, |r| r.rmse);
                let (mae, mae_sd) = stats_of(&reps, |r| r.mae);
                let (r, r_sd) = stats_of(&reps, |r| r.pearson);
                t.push(vec![
                    c.to_string(),
                    run.spec.kind().to_string(),
                    num(rmse),
                    num(mae),
                    num(r),
                    run.repetitions[0].scenario.to_string(),
                    run.ph_minutes.to_string(),
                    num(rmse_sd),
                    num(mae_sd),
                    num(r_sd),
                    first.n_windows.to_string(),
                    reps.len().to_string(),
                ]);
            }
        }
        t
    }

    pub fn rmse_by_subject(&self) -> Table {
        let mut t = Table::new(&SUBJECT_HEADER);
        for run in &self.runs {
            for (k, s) in run.repetitions[0].per_subject.iter().enumerate() {
                let rmse: Vec<f64> = run.repetitions.iter().map(|r| r.per_subject[k].report.rmse).collect();
                let (mean, sd) = mean_std(&rmse);
                t.push(vec![
                    s.cohort.to_string(),
                    s.position.to_string(),
                    num(mean),
                    s.subject_id.clone(),
                    run.spec.kind().to_string(),
                    run.repetitions[0].scenario.to_string(),
                    run.ph_minutes.to_string(),
                    num(sd),
                ]);
            }
        }
        t
    }

    pub fn rmse_by_horizon(&self) -> Table {
        let mut t = Table::new(&HORIZON_HEADER);
        for run in &self.runs {
            for (c, _) in &run.repetitions[0].by_cohort {
                let reps = cohort_reports(run, *c);
                let (rmse, sd) = stats_of(&reps, |r| r.rmse);
                let (last, _) = stats_of(&reps, |r| *r.per_step_rmse.last().expect("horizon >= 1"));
                t.push(vec![
                    c.to_string(),
                    run.spec.kind().to_string(),
                    run.ph_minutes.to_string(),
                    num(rmse),
                    run.repetitions[0].scenario.to_string(),
                    num(sd),
                    num(last),
                ]);
            }
        }
        t
    }

    /// Header only unless the forgetting protocol ran.
    pub fn forgetting_matrix(&self) -> Table {
        let mut t = Table::new(&FORGETTING_HEADER);
        for run in &self.runs {
            let matrices: Vec<_> = run.repetitions.iter().filter_map(|r| r.forgetting.as_ref()).collect();
            let Some(first) = matrices.first() else { continue };
            let mean_rmse = |j: Cohort, i: Cohort| {
                let v: Vec<f64> = matrices.iter().map(|m| m.get(j, i).expect("occupied").rmse).collect();
                mean_std(&v).0
            };
            for (j, i, _) in first.iter() {
                let reps: Vec<&MetricsReport> = matrices.iter().map(|m| m.get(j, i).expect("occupied")).collect();
                t.push(vec![
                    j.to_string(),
                    i.to_string(),
                    num(stats_of(&reps, |r| r.rmse).0),
                    num(stats_of(&reps, |r| r.mae).0),
                    num(stats_of(&reps, |r| r.pearson).0),
                    run.spec.kind().to_string(),
                    run.ph_minutes.to_string(),
                    num(mean_rmse(j, i) - mean_rmse(i, i)),
                ]);
            }
        }
        t
    }

    /// Cohort summary with values rounded for reading.
    pub fn summary(&self) -> String {
        let full = self.metrics_by_cohort();
        let cols = ["model", "ph_minutes", "cohort", "rmse", "mae", "pearson"];
        let mut t = Table::new(&cols);
        for r in 0..full.rows.len() {
            t.push(
                cols.iter()
                    .map(|c| {
                        let v = full.get(r, c).unwrap_or("");
                        match (c, v.parse::<f64>()) {
                            (&("rmse" | "mae" | "pearson"), Ok(x)) => format!("{x:.3}"),
                            _ => v.to_string(),
                        }
                    })
                    .collect(),
            );
        }
        t.render()
    }

    /// Writes the four report CSVs and one checkpoint per run (first
    /// repetition's final weights). Returns the files written.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let mut written = Vec::new();
        for (name, table) in [
            (METRICS_BY_COHORT, self.metrics_by_cohort()),
            (RMSE_BY_SUBJECT, self.rmse_by_subject()),
            (RMSE_BY_HORIZON, self.rmse_by_horizon()),
            (FORGETTING_MATRIX, self.forgetting_matrix()),
        ] {
            let p = dir.join(name);
            table.write(&p)?;
            written.push(p);
        }
        for run in &self.runs {
            if let Some(model) = &run.repetitions[0].final_model {
                let p = dir
                    .join("checkpoints")
                    .join(format!("{}_ph{}.ckpt", run.spec.kind(), run.ph_minutes));
                save_checkpoint(&p, model, &self.pipeline)?;
                written.push(p);
            }
        }
        Ok(written)
    }
}
