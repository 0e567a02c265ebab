//! Forecasting networks.

pub mod attengluco;
pub mod baseline;

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::params::{Bound, ParamSet};
use crate::tensor::Tensor;

pub use attengluco::{AttenGluco, ModelConfig};
pub use baseline::{Baseline, BaselineConfig};

/// The three normalised input channels of one window.
#[derive(Clone, Copy, Debug)]
pub struct ModelInput<'a> {
    pub glucose: &'a [f64],
    pub steps: &'a [f64],
    pub intervals: &'a [f64],
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ModelKind {
    AttenGluco,
    Baseline,
}

impl ModelKind {
    pub const ALL: [ModelKind; 2] = [ModelKind::Baseline, ModelKind::AttenGluco];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::AttenGluco => "attengluco",
            ModelKind::Baseline => "baseline",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "attengluco" => Ok(ModelKind::AttenGluco),
            "baseline" => Ok(ModelKind::Baseline),
            _ => Err(Error::Contract(format!(
                "unknown model '{s}' (expected attengluco or baseline)"
            ))),
        }
    }
}

/// Converts a prediction horizon in minutes to 5-minute samples.
pub fn horizon_samples(ph_minutes: u32) -> Result<usize> {
    if ph_minutes == 0 || !ph_minutes.is_multiple_of(5) {
        return Err(Error::Contract(format!(
            "prediction horizon {ph_minutes} min is not a positive multiple of 5"
        )));
    }
    Ok((ph_minutes / 5) as usize)
}

/// Architecture and hyperparameters of a model, without weights.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ModelSpec {
    AttenGluco(ModelConfig),
    Baseline(BaselineConfig),
}

impl ModelSpec {
    pub fn kind(&self) -> ModelKind {
        match self {
            ModelSpec::AttenGluco(_) => ModelKind::AttenGluco,
            ModelSpec::Baseline(_) => ModelKind::Baseline,
        }
    }

    pub fn window(&self) -> usize {
        match self {
            ModelSpec::AttenGluco(c) => c.window,
            ModelSpec::Baseline(c) => c.window,
        }
    }

    pub fn horizon(&self) -> usize {
        match self {
            ModelSpec::AttenGluco(c) => c.horizon,
            ModelSpec::Baseline(c) => c.horizon,
        }
    }

    pub fn with_horizon(&self, horizon: usize) -> ModelSpec {
        let mut s = self.clone();
        match &mut s {
            ModelSpec::AttenGluco(c) => c.horizon = horizon,
            ModelSpec::Baseline(c) => c.horizon = horizon,
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ModelSpec::AttenGluco(c) => c.validate(),
            ModelSpec::Baseline(c) => c.validate(),
        }
    }

    /// Freshly initialised weights, deterministic in `seed`.
    pub fn build(&self, seed: u64) -> Result<Model> {
        Ok(match self {
            ModelSpec::AttenGluco(c) => Model::AttenGluco(AttenGluco::new(c.clone(), seed)?),
            ModelSpec::Baseline(c) => Model::Baseline(Baseline::new(c.clone(), seed)?),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Model {
    AttenGluco(AttenGluco),
    Baseline(Baseline),
}

impl Model {
    pub fn kind(&self) -> ModelKind {
        match self {
            Model::AttenGluco(_) => ModelKind::AttenGluco,
            Model::Baseline(_) => ModelKind::Baseline,
        }
    }

    pub fn window(&self) -> usize {
        match self {
            Model::AttenGluco(m) => m.config.window,
            Model::Baseline(m) => m.config.window,
        }
    }

    pub fn horizon(&self) -> usize {
        match self {
            Model::AttenGluco(m) => m.config.horizon,
            Model::Baseline(m) => m.config.horizon,
        }
    }

    pub fn spec(&self) -> ModelSpec {
        match self {
            Model::AttenGluco(m) => ModelSpec::AttenGluco(m.config.clone()),
            Model::Baseline(m) => ModelSpec::Baseline(m.config.clone()),
        }
    }

    pub fn params(&self) -> &ParamSet {
        match self {
            Model::AttenGluco(m) => &m.params,
            Model::Baseline(m) => &m.params,
        }
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        match self {
            Model::AttenGluco(m) => &mut m.params,
            Model::Baseline(m) => &mut m.params,
        }
    }

    /// `batch × horizon` forecasts built on `g` from already-bound weights.
    pub fn forward_bound(&self, g: &mut Graph, bound: &Bound<'_>, inputs: &[ModelInput<'_>]) -> Result<Var> {
        match self {
            Model::AttenGluco(m) => m.forward_batch(g, bound, inputs),
            Model::Baseline(m) => m.forward_batch(g, bound, inputs),
        }
    }

    /// Forecasts in normalised units, one row per input.
    pub fn predict(&self, inputs: &[ModelInput<'_>]) -> Result<Vec<Vec<f64>>> {
        let mut g = Graph::new();
        let bound = self.params().bind_frozen(&mut g);
        let y = self.forward_bound(&mut g, &bound, inputs)?;
        let h = self.horizon();
        Ok(g.value(y).data().chunks(h).map(<[f64]>::to_vec).collect())
    }

    /// Mean squared error over `inputs` against normalised `targets`
    /// (row-major `batch × horizon`), with gradients for every parameter
    /// in parameter order.
    pub fn loss_and_grads(&self, inputs: &[ModelInput<'_>], targets: &[f64]) -> Result<(f64, Vec<Vec<f64>>)> {
        let mut g = Graph::new();
        let bound = self.params().bind(&mut g);
        let y = self.forward_bound(&mut g, &bound, inputs)?;
        let t = g.constant(Tensor::new(g.value(y).shape(), targets.to_vec())?);
        let loss = g.mse(y, t)?;
        g.backward(loss)?;
        let value = g.value(loss).data()[0];
        let grads = bound
            .vars()
            .iter()
            .zip(self.params().tensors())
            .map(|(&v, p)| g.take_grad(v).unwrap_or_else(|| vec![0.0; p.numel()]))
            .collect();
        Ok((value, grads))
    }
}
