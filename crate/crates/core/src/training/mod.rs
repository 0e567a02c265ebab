//! Optimisation, scoring and the three evaluation protocols.

pub mod adam;
pub mod metrics;
pub mod scenarios;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::window::Channel;
use crate::data::{NormStats, WindowSample};
use crate::error::{contract, Result};
use crate::model::Model;

pub use adam::{adam_step, clip_grad_norm, AdamState};
pub use metrics::{evaluate, mean_report, metrics_report, pearson, MetricsReport};
pub use scenarios::{
    run_repetitions, scenario_cohort_finetune, scenario_forgetting, scenario_isolated, ForgettingMatrix, Scenario,
    ScenarioResult, SubjectResult,
};

/// Joint gradient norm applied when clipping is switched on.
pub const GRAD_CLIP_NORM: f64 = 10.0;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Epochs for every subject after the first when weights carry over.
    pub finetune_epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub repetitions: usize,
    pub grad_clip: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 300,
            finetune_epochs: 300,
            learning_rate: 0.001,
            batch_size: 32,
            seed: 0,
            repetitions: 5,
            grad_clip: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        contract!(self.epochs >= 1, "epochs must be >= 1");
        contract!(self.finetune_epochs >= 1, "finetune_epochs must be >= 1");
        contract!(
            self.learning_rate > 0.0 && self.learning_rate.is_finite(),
            "learning rate must be positive"
        );
        contract!(self.batch_size >= 1, "batch size must be >= 1");
        contract!(self.repetitions >= 1, "repetitions must be >= 1");
        Ok(())
    }
}

fn normalised_targets(batch: &[&WindowSample], stats: &NormStats) -> Vec<f64> {
    batch
        .iter()
        .flat_map(|w| w.target.iter().map(|&v| stats.normalize(Channel::Glucose, v)))
        .collect()
}

/// Minibatch Adam on MSE between forecasts and normalised targets for
/// exactly `epochs` passes. Window order is reshuffled every epoch from
/// `shuffle_seed`. Returns the sample-weighted mean batch loss per epoch.
pub fn train(
    model: &mut Model,
    windows: &[WindowSample],
    stats: &NormStats,
    cfg: &TrainConfig,
    epochs: usize,
    shuffle_seed: u64,
) -> Result<Vec<f64>> {
    contract!(!windows.is_empty(), "cannot train on an empty training set");
    cfg.validate()?;
    for w in windows {
        contract!(
            w.x_g.len() == model.window() && w.target.len() == model.horizon(),
            "window of {} inputs / {} targets does not fit a model with t={} m={}",
            w.x_g.len(),
            w.target.len(),
            model.window(),
            model.horizon()
        );
    }
    let mut rng = ChaCha8Rng::seed_from_u64(shuffle_seed);
    let mut state = AdamState::new(model.params());
    let mut order: Vec<usize> = (0..windows.len()).collect();
    let mut curve = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            let batch: Vec<&WindowSample> = idx.iter().map(|&i| &windows[i]).collect();
            let inputs: Vec<_> = batch.iter().map(|w| w.input()).collect();
            let targets = normalised_targets(&batch, stats);
            let (loss, mut grads) = model.loss_and_grads(&inputs, &targets)?;
            if cfg.grad_clip {
                clip_grad_norm(&mut grads, GRAD_CLIP_NORM);
            }
            adam_step(model.params_mut(), &grads, &mut state, cfg.learning_rate)?;
            total += loss * batch.len() as f64;
        }
        curve.push(total / windows.len() as f64);
    }
    Ok(curve)
}

/// MSE in normalised units over `windows` with the current weights.
pub fn normalised_mse(model: &Model, windows: &[WindowSample], stats: &NormStats) -> Result<f64> {
    contract!(!windows.is_empty(), "empty window set");
    let mut total = 0.0;
    let mut n = 0usize;
    for chunk in windows.chunks(64) {
        let inputs: Vec<_> = chunk.iter().map(WindowSample::input).collect();
        let refs: Vec<&WindowSample> = chunk.iter().collect();
        let targets = normalised_targets(&refs, stats);
        let pred: Vec<f64> = model.predict(&inputs)?.into_iter().flatten().collect();
        total += pred.iter().zip(&targets).map(|(p, t)| (p - t).powi(2)).sum::<f64>();
        n += targets.len();
    }
    Ok(total / n as f64)
}
