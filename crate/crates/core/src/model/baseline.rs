//! CNN-LSTM comparison model.
//!
//! Two kernel-3 convolutions (64 and 128 filters, same padding, ReLU) over
//! the stacked 3-channel window, a two-layer LSTM (128 then 64 hidden units)
//! run over every time step, and an MLP `64 → 64 → 32 → m` on the last
//! hidden state. A batch is laid out time-major so each LSTM step reads a
//! contiguous `batch × features` block.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{contract, Result};
use crate::graph::{Graph, Var};
use crate::params::{Bound, ParamSet};
use crate::tensor::Tensor;

use super::ModelInput;

pub const INPUT_CHANNELS: usize = 3;
pub const CONV_FILTERS: [usize; 2] = [64, 128];
pub const LSTM_HIDDEN: [usize; 2] = [128, 64];
pub const MLP_HIDDEN: [usize; 2] = [64, 32];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BaselineConfig {
    pub window: usize,
    pub horizon: usize,
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        contract!(self.window >= 1, "window must be >= 1");
        contract!(self.horizon >= 1, "horizon must be >= 1");
        Ok(())
    }

    fn mlp_dims(&self) -> [(usize, usize); 3] {
        [
            (LSTM_HIDDEN[1], MLP_HIDDEN[0]),
            (MLP_HIDDEN[0], MLP_HIDDEN[1]),
            (MLP_HIDDEN[1], self.horizon),
        ]
    }

    pub fn param_count(&self) -> usize {
        let conv_in = [INPUT_CHANNELS, CONV_FILTERS[0]];
        let conv: usize = conv_in.iter().zip(CONV_FILTERS).map(|(i, o)| 3 * i * o + o).sum();
        let lstm_in = [CONV_FILTERS[1], LSTM_HIDDEN[0]];
        let lstm: usize = lstm_in
            .iter()
            .zip(LSTM_HIDDEN)
            .map(|(i, h)| i * 4 * h + h * 4 * h + 4 * h)
            .sum();
        let mlp: usize = self.mlp_dims().iter().map(|(i, o)| i * o + o).sum();
        conv + lstm + mlp
    }
}

pub fn init_params(config: &BaselineConfig, seed: u64) -> Result<ParamSet> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ParamSet::new();
    let mut c_in = INPUT_CHANNELS;
    for (i, &c_out) in CONV_FILTERS.iter().enumerate() {
        let fan_in = 3 * c_in;
        p.insert_uniform(format!("conv{}.w", i + 1), &[fan_in, c_out], fan_in, &mut rng);
        p.insert_uniform(format!("conv{}.b", i + 1), &[c_out], fan_in, &mut rng);
        c_in = c_out;
    }
    let mut input = CONV_FILTERS[1];
    for (i, &h) in LSTM_HIDDEN.iter().enumerate() {
        let n = i + 1;
        p.insert_uniform(format!("lstm{n}.w_ih"), &[input, 4 * h], h, &mut rng);
        p.insert_uniform(format!("lstm{n}.w_hh"), &[h, 4 * h], h, &mut rng);
        p.insert_uniform(format!("lstm{n}.b"), &[4 * h], h, &mut rng);
        input = h;
    }
    for (i, (fan_in, out)) in config.mlp_dims().into_iter().enumerate() {
        p.insert_uniform(format!("mlp{}.w", i + 1), &[fan_in, out], fan_in, &mut rng);
        p.insert_uniform(format!("mlp{}.b", i + 1), &[out], fan_in, &mut rng);
    }
    debug_assert_eq!(p.count(), config.param_count());
    Ok(p)
}

/// Gate weights of one LSTM layer; gate column blocks are ordered
/// input, forget, cell, output.
#[derive(Clone, Copy, Debug)]
pub struct LstmWeights {
    pub w_ih: Var,
    pub w_hh: Var,
    pub b: Var,
    pub hidden: usize,
}

/// One LSTM step for a `batch × input` block. Returns `(h', c')`.
pub fn lstm_cell(g: &mut Graph, x: Var, h: Var, c: Var, w: &LstmWeights) -> Result<(Var, Var)> {
    let n = w.hidden;
    let xi = g.matmul(x, w.w_ih)?;
    let hh = g.matmul(h, w.w_hh)?;
    let z = g.add(xi, hh)?;
    let z = g.add_bias(z, w.b)?;
    let zi = g.slice(z, 1, 0, n)?;
    let zf = g.slice(z, 1, n, n)?;
    let zg = g.slice(z, 1, 2 * n, n)?;
    let zo = g.slice(z, 1, 3 * n, n)?;
    let i = g.sigmoid(zi);
    let f = g.sigmoid(zf);
    let cand = g.tanh(zg);
    let o = g.sigmoid(zo);
    let keep = g.mul(f, c)?;
    let write = g.mul(i, cand)?;
    let c_next = g.add(keep, write)?;
    let tc = g.tanh(c_next);
    let h_next = g.mul(o, tc)?;
    Ok((h_next, c_next))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Baseline {
    pub config: BaselineConfig,
    pub params: ParamSet,
}

impl Baseline {
    pub fn new(config: BaselineConfig, seed: u64) -> Result<Self> {
        let params = init_params(&config, seed)?;
        Ok(Baseline { config, params })
    }

    pub fn forward_batch(&self, g: &mut Graph, bound: &Bound<'_>, inputs: &[ModelInput<'_>]) -> Result<Var> {
        contract!(!inputs.is_empty(), "empty batch");
        let t = self.config.window;
        let batch = inputs.len();
        for x in inputs {
            for ch in [x.glucose, x.steps, x.intervals] {
                contract!(ch.len() == t, "channel length {} does not match window {t}", ch.len());
            }
        }
        // time-major: row τ·batch + b = [g, ws, wi] of sample b at step τ
        let mut data = Vec::with_capacity(t * batch * INPUT_CHANNELS);
        for tau in 0..t {
            for x in inputs {
                data.extend_from_slice(&[x.glucose[tau], x.steps[tau], x.intervals[tau]]);
            }
        }
        let x = g.constant(Tensor::from_parts(vec![t * batch, INPUT_CHANNELS], data));

        let mut h = x;
        for i in 1..=2 {
            let c = g.conv1d(h, bound.var(&format!("conv{i}.w")), t)?;
            let c = g.add_bias(c, bound.var(&format!("conv{i}.b")))?;
            h = g.relu(c);
        }

        let layers: Vec<LstmWeights> = LSTM_HIDDEN
            .iter()
            .enumerate()
            .map(|(i, &hidden)| LstmWeights {
                w_ih: bound.var(&format!("lstm{}.w_ih", i + 1)),
                w_hh: bound.var(&format!("lstm{}.w_hh", i + 1)),
                b: bound.var(&format!("lstm{}.b", i + 1)),
                hidden,
            })
            .collect();
        let mut state: Vec<(Var, Var)> = LSTM_HIDDEN
            .iter()
            .map(|&n| {
                let z = g.constant(Tensor::zeros(&[batch, n]));
                (z, z)
            })
            .collect();
        for tau in 0..t {
            let mut input = g.slice(h, 0, tau * batch, batch)?;
            for (layer, st) in layers.iter().zip(state.iter_mut()) {
                *st = lstm_cell(g, input, st.0, st.1, layer)?;
                input = st.0;
            }
        }

        let mut y = state[LSTM_HIDDEN.len() - 1].0;
        for i in 1..=3 {
            let z = g.matmul(y, bound.var(&format!("mlp{i}.w")))?;
            let z = g.add_bias(z, bound.var(&format!("mlp{i}.b")))?;
            y = if i < 3 { g.relu(z) } else { z };
        }
        Ok(y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn param_count_matches_closed_form() {
        for m in [1, 6, 12] {
            let cfg = BaselineConfig { window: 12, horizon: m };
            let p = init_params(&cfg, 0).unwrap();
            assert_eq!(p.count(), cfg.param_count());
        }
        // conv 640 + 24_704, lstm 131_584 + 49_408, mlp 4_160 + 2_080 + (32·2 + 2)
        let cfg = BaselineConfig { window: 12, horizon: 2 };
        assert_eq!(cfg.param_count(), 640 + 24_704 + 131_584 + 49_408 + 4_160 + 2_080 + 66);
    }

    #[test]
    fn lstm_zero_everything_gives_zero_state() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[1, 3]));
        let h = g.constant(Tensor::zeros(&[1, 2]));
        let w = LstmWeights {
            w_ih: g.constant(Tensor::zeros(&[3, 8])),
            w_hh: g.constant(Tensor::zeros(&[2, 8])),
            b: g.constant(Tensor::zeros(&[8])),
            hidden: 2,
        };
        let (h1, c1) = lstm_cell(&mut g, x, h, h, &w).unwrap();
        assert_eq!(g.value(h1).data(), &[0.0, 0.0]);
        assert_eq!(g.value(c1).data(), &[0.0, 0.0]);
    }
}
