//! `key=value` run configuration.
//!
//! One setting per line, `#` starts a comment, keys are dotted. Unknown
//! keys, malformed values and out-of-range settings are all collected and
//! reported together. Relative paths resolve against the config file's
//! directory.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use attengluco_core::data::PipelineConfig;
use attengluco_core::model::{horizon_samples, BaselineConfig, ModelConfig, ModelKind, ModelSpec};
use attengluco_core::training::{Scenario, TrainConfig};
use attengluco_core::{Error, Result};

/// Every recognised key with its default.
pub const TEMPLATE: &str = "\
# root of every random stream
seed = 0

# manifest.csv listing subject_id,cohort,cgm_path,activity_path
data.manifest = manifest.csv
# longest gap bridged by linear interpolation
data.max_gap_minutes = 60
# walking-interval value before the first walk, and its upper bound
data.interval_cap_minutes = 720
# samples between window starts
data.stride = 1
data.train_fraction = 0.85

# used by `synth`
synth.n_per_cohort = 8
synth.days = 10

# attengluco | baseline | both
model.kind = both
# input samples (5 min each)
model.window = 80
model.d_model = 64
model.heads = 4
# feed-forward width; 0 means 4 * d_model
model.d_ff = 0

# isolated | cohort_finetune | forgetting
experiment.scenario = isolated
# comma-separated prediction horizons, multiples of 5
experiment.ph_minutes = 30

train.epochs = 300
train.finetune_epochs = 300
train.learning_rate = 0.001
train.batch_size = 32
train.repetitions = 5
# clip the joint gradient norm at 10
train.grad_clip = false

# threads for independent repetitions
runtime.workers = 1

output.dir = results
";

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub manifest: PathBuf,
    pub pipeline: PipelineConfig,
    pub synth_n_per_cohort: usize,
    pub synth_days: u32,
    pub models: Vec<ModelKind>,
    pub window: usize,
    pub d_model: usize,
    pub heads: usize,
    /// 0 selects `4 · d_model`.
    pub d_ff: usize,
    pub scenario: Scenario,
    pub ph_minutes: Vec<u32>,
    pub train: TrainConfig,
    pub workers: usize,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::parse(TEMPLATE).expect("template parses")
    }
}

fn parse_value<T: FromStr>(key: &str, raw: &str, errors: &mut Vec<String>) -> Option<T> {
    match raw.parse() {
        Ok(v) => Some(v),
        Err(_) => {
            errors.push(format!("{key}: cannot parse '{raw}'"));
            None
        }
    }
}

fn parse_models(raw: &str) -> std::result::Result<Vec<ModelKind>, String> {
    match raw {
        "both" => Ok(ModelKind::ALL.to_vec()),
        other => other.parse::<ModelKind>().map(|k| vec![k]).map_err(|e| e.to_string()),
    }
}

impl RunConfig {
    /// Parses configuration text over the defaults. Paths are kept as written.
    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut c = RunConfig {
            seed: 0,
            manifest: PathBuf::from("manifest.csv"),
            pipeline: PipelineConfig::default(),
            synth_n_per_cohort: 8,
            synth_days: 10,
            models: ModelKind::ALL.to_vec(),
            window: 80,
            d_model: 64,
            heads: 4,
            d_ff: 0,
            scenario: Scenario::Isolated,
            ph_minutes: vec![30],
            train: TrainConfig::default(),
            workers: 1,
            output_dir: PathBuf::from("results"),
        };
        let mut errors = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, raw)) = line.split_once('=') else {
                errors.push(format!("line {}: expected key = value, found '{line}'", n + 1));
                continue;
            };
            let (key, raw) = (key.trim(), raw.trim());
            if !seen.insert(key.to_string()) {
                errors.push(format!("{key}: set more than once"));
                continue;
            }
            let e = &mut errors;
            macro_rules! set {
                ($field:expr) => {
                    if let Some(v) = parse_value(key, raw, e) {
                        $field = v;
                    }
                };
            }
            match key {
                "seed" => set!(c.seed),
                "data.manifest" => c.manifest = PathBuf::from(raw),
                "data.max_gap_minutes" => set!(c.pipeline.max_gap_minutes),
                "data.interval_cap_minutes" => set!(c.pipeline.interval_cap_minutes),
                "data.stride" => set!(c.pipeline.stride),
                "data.train_fraction" => set!(c.pipeline.train_fraction),
                "synth.n_per_cohort" => set!(c.synth_n_per_cohort),
                "synth.days" => set!(c.synth_days),
                "model.kind" => match parse_models(raw) {
                    Ok(m) => c.models = m,
                    Err(msg) => e.push(format!("model.kind: {msg}")),
                },
                "model.window" => set!(c.window),
                "model.d_model" => set!(c.d_model),
                "model.heads" => set!(c.heads),
                "model.d_ff" => set!(c.d_ff),
                "experiment.scenario" => match raw.parse() {
                    Ok(s) => c.scenario = s,
                    Err(err) => e.push(format!("experiment.scenario: {err}")),
                },
                "experiment.ph_minutes" => {
                    let parsed: std::result::Result<Vec<u32>, _> =
                        raw.split(',').map(|p| p.trim().parse::<u32>()).collect();
                    match parsed {
                        Ok(v) if !v.is_empty() => c.ph_minutes = v,
                        _ => e.push(format!("experiment.ph_minutes: cannot parse '{raw}'")),
                    }
                }
                "train.epochs" => set!(c.train.epochs),
                "train.finetune_epochs" => set!(c.train.finetune_epochs),
                "train.learning_rate" => set!(c.train.learning_rate),
                "train.batch_size" => set!(c.train.batch_size),
                "train.repetitions" => set!(c.train.repetitions),
                "train.grad_clip" => set!(c.train.grad_clip),
                "runtime.workers" => set!(c.workers),
                "output.dir" => c.output_dir = PathBuf::from(raw),
                _ => e.push(format!("{key}: unknown key")),
            }
        }
        c.train.seed = c.seed;
        errors.extend(c.problems());
        if errors.is_empty() {
            Ok(c)
        } else {
            Err(Error::Config(errors))
        }
    }

    /// Reads a config file, resolving relative paths against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<RunConfig> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut c = RunConfig::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        c.manifest = base.join(&c.manifest);
        c.output_dir = base.join(&c.output_dir);
        Ok(c)
    }

    fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        let mut check = |ok: bool, msg: &str| {
            if !ok {
                p.push(msg.to_string());
            }
        };
        check(
            self.pipeline.max_gap_minutes >= 0.0,
            "data.max_gap_minutes: must be >= 0",
        );
        check(
            self.pipeline.interval_cap_minutes > 0.0,
            "data.interval_cap_minutes: must be > 0",
        );
        check(self.pipeline.stride >= 1, "data.stride: must be >= 1");
        check(
            self.pipeline.train_fraction > 0.0 && self.pipeline.train_fraction < 1.0,
            "data.train_fraction: must lie in (0, 1)",
        );
        check(self.synth_days >= 1, "synth.days: must be >= 1");
        check(self.train.epochs >= 1, "train.epochs: must be >= 1");
        check(self.train.finetune_epochs >= 1, "train.finetune_epochs: must be >= 1");
        check(
            self.train.learning_rate > 0.0 && self.train.learning_rate.is_finite(),
            "train.learning_rate: must be > 0",
        );
        check(self.train.batch_size >= 1, "train.batch_size: must be >= 1");
        check(self.train.repetitions >= 1, "train.repetitions: must be >= 1");
        check(self.workers >= 1, "runtime.workers: must be >= 1");
        for &ph in &self.ph_minutes {
            if let Err(e) = horizon_samples(ph) {
                p.push(format!("experiment.ph_minutes: {e}"));
            }
        }
        if let Some(&ph) = self.ph_minutes.first() {
            let h = (ph / 5).max(1) as usize;
            for kind in &self.models {
                if let Err(e) = self.spec(*kind, h).validate() {
                    p.push(format!("model: {e}"));
                }
            }
        }
        p
    }

    pub fn spec(&self, kind: ModelKind, horizon: usize) -> ModelSpec {
        match kind {
            ModelKind::AttenGluco => ModelSpec::AttenGluco(ModelConfig {
                window: self.window,
                horizon,
                d_model: self.d_model,
                heads: self.heads,
                d_ff: if self.d_ff == 0 { 4 * self.d_model } else { self.d_ff },
            }),
            ModelKind::Baseline => ModelSpec::Baseline(BaselineConfig {
                window: self.window,
                horizon,
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn template_is_the_default() {
        let c = RunConfig::default();
        assert_eq!(c.train, TrainConfig::default());
        assert_eq!(c.pipeline, PipelineConfig::default());
        assert_eq!(c.window, 80);
        assert_eq!(c.ph_minutes, vec![30]);
        assert_eq!(c.models.len(), 2);
    }

    #[test]
    fn overrides_and_comments() {
        let c = RunConfig::parse("seed = 7 # root\nmodel.kind=baseline\nexperiment.ph_minutes = 5, 30,60\n").unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.train.seed, 7);
        assert_eq!(c.models, vec![ModelKind::Baseline]);
        assert_eq!(c.ph_minutes, vec![5, 30, 60]);
        let spec = c.spec(ModelKind::Baseline, 6);
        assert_eq!(spec.horizon(), 6);
    }

    #[test]
    fn every_error_is_reported() {
        let err =
            RunConfig::parse("bogus = 1\ntrain.epochs = x\nexperiment.ph_minutes = 7\nnot a pair\nmodel.heads = 0\n")
                .unwrap_err();
        let Error::Config(list) = err else { panic!("{err}") };
        assert_eq!(list.len(), 5, "{list:?}");
        assert!(list[0].contains("bogus"));
    }

    #[test]
    fn d_ff_zero_means_four_d() {
        let c = RunConfig::parse("model.d_model = 8").unwrap();
        let ModelSpec::AttenGluco(m) = c.spec(ModelKind::AttenGluco, 1) else {
            unreachable!()
        };
        assert_eq!(m.d_ff, 32);
    }
}
