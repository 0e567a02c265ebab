//! Isolated-subject, cohort fine-tuning and forgetting protocols.
//!
//! Subjects are visited cohort by cohort in [`Cohort::ALL`] order, keeping
//! their given order inside a cohort. With `k` the subject's position in
//! the input slice, a fresh model for that subject is initialised from
//! `derive(seed, ModelInit, k, 0)` and its windows are shuffled from
//! `derive(seed, Shuffle, k, 0)`.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use super::metrics::{evaluate, mean_report, MetricsReport};
use super::{train, TrainConfig};
use crate::data::{Cohort, SubjectData};
use crate::error::{Error, Result};
use crate::model::{Model, ModelSpec};
use crate::seeds::{derive, Purpose};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Scenario {
    Isolated,
    CohortFinetune,
    Forgetting,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [Scenario::Isolated, Scenario::CohortFinetune, Scenario::Forgetting];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Isolated => "isolated",
            Scenario::CohortFinetune => "cohort_finetune",
            Scenario::Forgetting => "forgetting",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL.into_iter().find(|x| x.name() == s).ok_or_else(|| {
            Error::Contract(format!(
                "unknown scenario '{s}' (expected isolated, cohort_finetune or forgetting)"
            ))
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SubjectResult {
    pub subject_id: String,
    pub cohort: Cohort,
    /// 1-based position inside the cohort's processing order.
    pub position: usize,
    pub report: MetricsReport,
}

/// Entry `(j, i)`: cohort `i`'s test metrics after training through cohort `j`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ForgettingMatrix {
    entries: [[Option<MetricsReport>; 4]; 4],
}

impl ForgettingMatrix {
    pub fn get(&self, trained_through: Cohort, evaluated_on: Cohort) -> Option<&MetricsReport> {
        self.entries[trained_through.index()][evaluated_on.index()].as_ref()
    }

    /// `rmse(j, i) − rmse(i, i)`.
    pub fn delta_rmse(&self, trained_through: Cohort, evaluated_on: Cohort) -> Option<f64> {
        let later = self.get(trained_through, evaluated_on)?;
        let own = self.get(evaluated_on, evaluated_on)?;
        Some(later.rmse - own.rmse)
    }

    /// Occupied entries in `(trained_through, evaluated_on)` order.
    pub fn iter(&self) -> impl Iterator<Item = (Cohort, Cohort, &MetricsReport)> {
        Cohort::ALL.into_iter().flat_map(move |j| {
            Cohort::ALL
                .into_iter()
                .filter_map(move |i| self.get(j, i).map(|r| (j, i, r)))
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioResult {
    pub scenario: Scenario,
    /// Per-subject test metrics, taken right after training on that subject.
    pub per_subject: Vec<SubjectResult>,
    /// Mean of the per-subject reports of each cohort present. For the
    /// forgetting protocol this is the diagonal of the matrix.
    pub by_cohort: Vec<(Cohort, MetricsReport)>,
    pub forgetting: Option<ForgettingMatrix>,
    /// Subjects left out, with the reason.
    pub skipped: Vec<String>,
    /// Weights after the last training step of the run.
    pub final_model: Option<Model>,
}

impl ScenarioResult {
    pub fn cohort(&self, c: Cohort) -> Option<&MetricsReport> {
        self.by_cohort.iter().find(|(x, _)| *x == c).map(|(_, r)| r)
    }
}

struct Usable<'a> {
    index: usize,
    subject: &'a SubjectData,
}

/// Usable subjects of each cohort present, in processing order.
fn grouped<'a>(subjects: &'a [SubjectData], skipped: &mut Vec<String>) -> Vec<(Cohort, Vec<Usable<'a>>)> {
    let mut groups = Vec::new();
    for c in Cohort::ALL {
        let mut members = Vec::new();
        for (index, s) in subjects.iter().enumerate().filter(|(_, s)| s.cohort == c) {
            if s.train.is_empty() || s.test.is_empty() {
                skipped.push(format!(
                    "{}: {} train / {} test windows",
                    s.subject_id,
                    s.train.len(),
                    s.test.len()
                ));
            } else {
                members.push(Usable { index, subject: s });
            }
        }
        if !members.is_empty() {
            groups.push((c, members));
        }
    }
    groups
}

fn fit(model: &mut Model, u: &Usable<'_>, cfg: &TrainConfig, epochs: usize, seed: u64) -> Result<()> {
    let shuffle = derive(seed, Purpose::Shuffle, u.index as u64, 0);
    train(model, &u.subject.train, &u.subject.stats, cfg, epochs, shuffle)?;
    Ok(())
}

fn score(model: &Model, u: &Usable<'_>, position: usize) -> Result<SubjectResult> {
    Ok(SubjectResult {
        subject_id: u.subject.subject_id.clone(),
        cohort: u.subject.cohort,
        position,
        report: evaluate(model, &u.subject.test, &u.subject.stats)?,
    })
}

fn init(spec: &ModelSpec, u: &Usable<'_>, seed: u64) -> Result<Model> {
    spec.build(derive(seed, Purpose::ModelInit, u.index as u64, 0))
}

fn cohort_means(per_subject: &[SubjectResult]) -> Vec<(Cohort, MetricsReport)> {
    Cohort::ALL
        .into_iter()
        .filter_map(|c| {
            let reports: Vec<MetricsReport> = per_subject
                .iter()
                .filter(|r| r.cohort == c)
                .map(|r| r.report.clone())
                .collect();
            mean_report(&reports).map(|m| (c, m))
        })
        .collect()
}

fn require_subjects(groups: &[(Cohort, Vec<Usable<'_>>)]) -> Result<()> {
    if groups.is_empty() {
        return Err(Error::Data("no subject has both training and test windows".into()));
    }
    Ok(())
}

/// Fresh model per subject: train on its training windows, score its test
/// windows.
pub fn scenario_isolated(
    subjects: &[SubjectData],
    spec: &ModelSpec,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<ScenarioResult> {
    let mut skipped = Vec::new();
    let groups = grouped(subjects, &mut skipped);
    require_subjects(&groups)?;
    let mut per_subject = Vec::new();
    let mut last = None;
    for (_, members) in &groups {
        for (pos, u) in members.iter().enumerate() {
            let mut model = init(spec, u, seed)?;
            fit(&mut model, u, cfg, cfg.epochs, seed)?;
            per_subject.push(score(&model, u, pos + 1)?);
            last = Some(model);
        }
    }
    Ok(ScenarioResult {
        scenario: Scenario::Isolated,
        by_cohort: cohort_means(&per_subject),
        per_subject,
        forgetting: None,
        skipped,
        final_model: last,
    })
}

/// One model per cohort, initialised as for the cohort's first subject and
/// carried from subject to subject; every subject is scored on its own test
/// windows right after training on it.
pub fn scenario_cohort_finetune(
    subjects: &[SubjectData],
    spec: &ModelSpec,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<ScenarioResult> {
    let mut skipped = Vec::new();
    let groups = grouped(subjects, &mut skipped);
    require_subjects(&groups)?;
    let mut per_subject = Vec::new();
    let mut last = None;
    for (_, members) in &groups {
        let mut model = init(spec, &members[0], seed)?;
        for (pos, u) in members.iter().enumerate() {
            let epochs = if pos == 0 { cfg.epochs } else { cfg.finetune_epochs };
            fit(&mut model, u, cfg, epochs, seed)?;
            per_subject.push(score(&model, u, pos + 1)?);
        }
        last = Some(model);
    }
    Ok(ScenarioResult {
        scenario: Scenario::CohortFinetune,
        by_cohort: cohort_means(&per_subject),
        per_subject,
        forgetting: None,
        skipped,
        final_model: last,
    })
}

/// One model trained through every subject of every cohort in order. After
/// each cohort the model is scored on the test windows of that cohort and
/// all earlier ones.
pub fn scenario_forgetting(
    subjects: &[SubjectData],
    spec: &ModelSpec,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<ScenarioResult> {
    let mut skipped = Vec::new();
    let groups = grouped(subjects, &mut skipped);
    let missing: Vec<&str> = Cohort::ALL
        .into_iter()
        .filter(|c| !groups.iter().any(|(g, _)| g == c))
        .map(Cohort::name)
        .collect();
    if !missing.is_empty() {
        return Err(Error::Data(format!(
            "forgetting analysis needs all four cohorts; missing {}",
            missing.join(", ")
        )));
    }
    let mut model = init(spec, &groups[0].1[0], seed)?;
    let mut per_subject = Vec::new();
    let mut matrix = ForgettingMatrix::default();
    let mut first = true;
    for (j, (cohort_j, members)) in groups.iter().enumerate() {
        for (pos, u) in members.iter().enumerate() {
            let epochs = if first { cfg.epochs } else { cfg.finetune_epochs };
            first = false;
            fit(&mut model, u, cfg, epochs, seed)?;
            per_subject.push(score(&model, u, pos + 1)?);
        }
        for (cohort_i, earlier) in &groups[..=j] {
            let reports = earlier
                .iter()
                .enumerate()
                .map(|(pos, u)| score(&model, u, pos + 1).map(|r| r.report))
                .collect::<Result<Vec<_>>>()?;
            matrix.entries[cohort_j.index()][cohort_i.index()] = mean_report(&reports);
        }
    }
    let by_cohort = Cohort::ALL
        .into_iter()
        .filter_map(|c| matrix.get(c, c).map(|r| (c, r.clone())))
        .collect();
    Ok(ScenarioResult {
        scenario: Scenario::Forgetting,
        per_subject,
        by_cohort,
        forgetting: Some(matrix),
        skipped,
        final_model: Some(model),
    })
}

pub fn run_scenario(
    scenario: Scenario,
    subjects: &[SubjectData],
    spec: &ModelSpec,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<ScenarioResult> {
    match scenario {
        Scenario::Isolated => scenario_isolated(subjects, spec, cfg, seed),
        Scenario::CohortFinetune => scenario_cohort_finetune(subjects, spec, cfg, seed),
        Scenario::Forgetting => scenario_forgetting(subjects, spec, cfg, seed),
    }
}

/// Runs `f(seed + r)` for `r in 0..n` on up to `workers` threads. Results
/// come back in repetition order regardless of scheduling.
pub fn run_repetitions<T, F>(n: usize, seed: u64, workers: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync,
{
    if workers <= 1 {
        return (0..n as u64).map(|r| f(seed.wrapping_add(r))).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Contract(format!("cannot start {workers} worker threads: {e}")))?;
    pool.install(|| (0..n as u64).into_par_iter().map(|r| f(seed.wrapping_add(r))).collect())
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenario_names_round_trip() {
        for s in Scenario::ALL {
            assert_eq!(s.name().parse::<Scenario>().unwrap(), s);
        }
        assert!("replay".parse::<Scenario>().is_err());
    }

    #[test]
    fn repetitions_keep_order() {
        let serial = run_repetitions(5, 10, 1, |s| Ok(s * 2)).unwrap();
        let threaded = run_repetitions(5, 10, 3, |s| Ok(s * 2)).unwrap();
        assert_eq!(serial, vec![20, 22, 24, 26, 28]);
        assert_eq!(serial, threaded);
    }

    #[test]
    fn mean_std_values() {
        assert_eq!(mean_std(&[2.0]), (2.0, 0.0));
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 2f64.sqrt()).abs() < 1e-15);
    }
}
