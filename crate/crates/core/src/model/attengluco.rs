//! Multimodal glucose transformer: cross-attention fusion of glucose with
//! the two activity channels, followed by multi-scale self-attention.
//!
//! Data flow for one window of `t` samples:
//!
//! ```text
//! x_g, x_ws, x_wi ──embed + positional──▶ X_G, X_WS, X_WI          (t×d each)
//! X_CA1 = CA₁(X_G, X_WS)    X_CA2 = CA₂(X_G, X_WI)
//! X_CA  = AddNorm₁(FF₁(X_CA1 + X_CA2))
//! X_MA  = AddNorm₂(FF₂(MA₁(X_CA) + Up₂(MA₂(Down₂ X_CA)) + Up₄(MA₃(Down₄ X_CA))))
//! x̂_g   = Linear(flatten(X_MA))                                    (m values)
//! ```
//!
//! Every attention head carries full `d×d` query/key/value projections and
//! the concatenated heads (`t × heads·d`) are projected back to `d`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{contract, Result};
use crate::graph::{Graph, Var};
use crate::params::{Bound, ParamSet};
use crate::tensor::Tensor;

use super::ModelInput;

/// Downsampling factors of the multi-scale attention branches.
pub const SCALES: [usize; 3] = [1, 2, 4];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    /// Input window length in 5-minute samples.
    pub window: usize,
    /// Forecast length in 5-minute samples.
    pub horizon: usize,
    pub d_model: usize,
    pub heads: usize,
    pub d_ff: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::new(80, 6, 64, 4)
    }
}

impl ModelConfig {
    /// Config with the feed-forward width defaulted to `4·d_model`.
    pub fn new(window: usize, horizon: usize, d_model: usize, heads: usize) -> Self {
        ModelConfig {
            window,
            horizon,
            d_model,
            heads,
            d_ff: 4 * d_model,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let max_scale = SCALES[SCALES.len() - 1];
        contract!(
            self.window >= max_scale,
            "window {} shorter than the largest downsampling factor {max_scale}",
            self.window
        );
        contract!(self.horizon >= 1, "horizon must be >= 1");
        contract!(self.d_model >= 2, "d_model must be >= 2 for layer normalisation");
        contract!(self.heads >= 1, "heads must be >= 1");
        contract!(self.d_ff >= 1, "d_ff must be >= 1");
        Ok(())
    }

    /// Closed-form parameter count.
    pub fn param_count(&self) -> usize {
        let (d, h, f) = (self.d_model, self.heads, self.d_ff);
        let embed = 3 * 2 * d;
        let attention_block = h * 3 * d * d + h * d * d;
        let attention = (2 + SCALES.len()) * attention_block;
        let ff = 2 * (d * f + f + f * d + d);
        let norm = 2 * 2 * d;
        let head = self.window * d * self.horizon + self.horizon;
        embed + attention + ff + norm + head
    }
}

/// Fixed sinusoidal positional table, `window × d_model`.
pub fn positional_table(window: usize, d_model: usize) -> Tensor {
    let mut data = Vec::with_capacity(window * d_model);
    for pos in 0..window {
        for j in 0..d_model {
            let pair = (j / 2) as f64;
            let angle = pos as f64 / 10000f64.powf(2.0 * pair / d_model as f64);
            data.push(if j % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    Tensor::from_parts(vec![window, d_model], data)
}

pub const CHANNELS: [&str; 3] = ["g", "ws", "wi"];

fn head_name(block: &str, h: usize, which: &str) -> String {
    format!("{block}.head{h}.{which}")
}

pub fn cross_attention_blocks() -> [&'static str; 2] {
    ["ca1", "ca2"]
}

pub fn multi_scale_blocks() -> [&'static str; 3] {
    ["ma1", "ma2", "ma3"]
}

/// Initialises parameters uniformly in `±√(1/fan_in)`, deterministic in `seed`.
pub fn init_params(config: &ModelConfig, seed: u64) -> Result<ParamSet> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (d, f) = (config.d_model, config.d_ff);
    let mut p = ParamSet::new();
    for ch in CHANNELS {
        p.insert_uniform(format!("embed.{ch}.w"), &[1, d], 1, &mut rng);
        p.insert(format!("embed.{ch}.b"), Tensor::zeros(&[d]));
    }
    for block in cross_attention_blocks().into_iter().chain(multi_scale_blocks()) {
        for h in 0..config.heads {
            for which in ["wq", "wk", "wv"] {
                p.insert_uniform(head_name(block, h, which), &[d, d], d, &mut rng);
            }
        }
        let concat = config.heads * d;
        p.insert_uniform(format!("{block}.wh"), &[concat, d], concat, &mut rng);
    }
    for i in 1..=2 {
        p.insert_uniform(format!("ff{i}.w1"), &[d, f], d, &mut rng);
        p.insert_uniform(format!("ff{i}.b1"), &[f], d, &mut rng);
        p.insert_uniform(format!("ff{i}.w2"), &[f, d], f, &mut rng);
        p.insert_uniform(format!("ff{i}.b2"), &[d], f, &mut rng);
        p.insert(format!("an{i}.gain"), Tensor::full(&[d], 1.0));
        p.insert(format!("an{i}.bias"), Tensor::zeros(&[d]));
    }
    let flat = config.window * d;
    p.insert_uniform("head.w", &[flat, config.horizon], flat, &mut rng);
    p.insert_uniform("head.b", &[config.horizon], flat, &mut rng);
    debug_assert_eq!(p.count(), config.param_count());
    Ok(p)
}

/// Weights of one multi-head attention block.
#[derive(Clone, Debug)]
pub struct AttentionWeights {
    /// `[W_Q, W_K, W_V]` per head.
    pub heads: Vec<[Var; 3]>,
    /// Output projection, `heads·d × d`.
    pub out: Var,
}

impl AttentionWeights {
    pub fn from_bound(b: &Bound<'_>, block: &str, heads: usize) -> Self {
        AttentionWeights {
            heads: (0..heads)
                .map(|h| ["wq", "wk", "wv"].map(|w| b.var(&head_name(block, h, w))))
                .collect(),
            out: b.var(&format!("{block}.wh")),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct FeedForwardWeights {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct NormWeights {
    pub gain: Var,
    pub bias: Var,
}

/// `softmax(Q·Kᵀ / √d_model) · V`.
pub fn scaled_attention(g: &mut Graph, q: Var, k: Var, v: Var, d_model: usize) -> Result<Var> {
    let kt = g.transpose(k);
    let logits = g.matmul(q, kt)?;
    let scaled = g.scale(logits, 1.0 / (d_model as f64).sqrt());
    let weights = g.softmax_rows(scaled)?;
    g.matmul(weights, v)
}

/// Multi-head attention with queries from `x_q` and keys/values from `x_kv`:
/// per-head attention, width-wise concatenation, output projection.
pub fn multi_head_attention(g: &mut Graph, x_q: Var, x_kv: Var, w: &AttentionWeights, d_model: usize) -> Result<Var> {
    let mut heads = Vec::with_capacity(w.heads.len());
    for &[wq, wk, wv] in &w.heads {
        let q = g.matmul(x_q, wq)?;
        let k = g.matmul(x_kv, wk)?;
        let v = g.matmul(x_kv, wv)?;
        heads.push(scaled_attention(g, q, k, v, d_model)?);
    }
    let concat = if heads.len() == 1 {
        heads[0]
    } else {
        g.concat(&heads, 1)?
    };
    g.matmul(concat, w.out)
}

/// One cross-attention branch: glucose queries against an activity channel.
pub fn cross_attention(g: &mut Graph, x_q: Var, x_kv: Var, w: &AttentionWeights, d_model: usize) -> Result<Var> {
    let (sq, skv) = (g.value(x_q).shape().to_vec(), g.value(x_kv).shape().to_vec());
    if sq.len() != 2 || skv.len() != 2 || sq[1] != skv[1] {
        return Err(crate::Error::Shape {
            op: "cross_attention",
            lhs: sq,
            rhs: skv,
        });
    }
    multi_head_attention(g, x_q, x_kv, w, d_model)
}

/// `relu(x·W1 + b1)·W2 + b2`.
pub fn feed_forward(g: &mut Graph, x: Var, w: &FeedForwardWeights) -> Result<Var> {
    let h = g.matmul(x, w.w1)?;
    let h = g.add_bias(h, w.b1)?;
    let h = g.relu(h);
    let o = g.matmul(h, w.w2)?;
    g.add_bias(o, w.b2)
}

/// Feed-forward wrapped in a residual connection, then layer-normalised.
pub fn ff_add_norm(g: &mut Graph, x: Var, ff: &FeedForwardWeights, norm: &NormWeights) -> Result<Var> {
    let f = feed_forward(g, x, ff)?;
    let r = g.add(x, f)?;
    g.layer_norm(r, norm.gain, norm.bias)
}

/// Sums the two cross-attention branches and applies FF₁ + Add&Norm₁.
pub fn fuse_branches(
    g: &mut Graph,
    x_ca1: Var,
    x_ca2: Var,
    ff: &FeedForwardWeights,
    norm: &NormWeights,
) -> Result<Var> {
    let s = g.add(x_ca1, x_ca2)?;
    ff_add_norm(g, s, ff, norm)
}

/// Mean pooling over non-overlapping groups of `k` rows. `k = 1` returns `x`.
pub fn downsample(g: &mut Graph, x: Var, k: usize) -> Result<Var> {
    if k == 1 {
        return Ok(x);
    }
    g.pool_rows(x, k)
}

/// Nearest-neighbour repeat by `k`, truncated to `target` rows. `k = 1` returns `x`
/// once the row count has been checked.
pub fn upsample(g: &mut Graph, x: Var, k: usize, target: usize) -> Result<Var> {
    if k == 1 {
        contract!(
            g.value(x).rows() == target,
            "upsample: {} rows cannot expand by 1 to {target}",
            g.value(x).rows()
        );
        return Ok(x);
    }
    g.repeat_rows(x, k, target)
}

/// Three self-attention branches at downsampling factors 1, 2, 4; the
/// coarse branches are upsampled back to `t` rows; the sum goes through
/// FF₂ + Add&Norm₂.
pub fn multi_scale_attention(
    g: &mut Graph,
    x_ca: Var,
    branches: &[AttentionWeights; 3],
    ff: &FeedForwardWeights,
    norm: &NormWeights,
    d_model: usize,
) -> Result<Var> {
    let t = g.value(x_ca).rows();
    let mut total: Option<Var> = None;
    for (w, &k) in branches.iter().zip(SCALES.iter()) {
        let xs = downsample(g, x_ca, k)?;
        let a = multi_head_attention(g, xs, xs, w, d_model)?;
        let up = upsample(g, a, k, t)?;
        total = Some(match total {
            None => up,
            Some(acc) => g.add(acc, up)?,
        });
    }
    ff_add_norm(g, total.expect("three branches"), ff, norm)
}

/// All weights of the network, bound to one graph.
pub struct BoundAttenGluco {
    pub embed: [(Var, Var); 3],
    pub positional: Var,
    pub cross: [AttentionWeights; 2],
    pub multi_scale: [AttentionWeights; 3],
    pub ff: [FeedForwardWeights; 2],
    pub norm: [NormWeights; 2],
    pub head_w: Var,
    pub head_b: Var,
}

impl BoundAttenGluco {
    pub fn new(g: &mut Graph, b: &Bound<'_>, config: &ModelConfig) -> Self {
        let positional = g.constant(positional_table(config.window, config.d_model));
        let ffw = |i: usize| FeedForwardWeights {
            w1: b.var(&format!("ff{i}.w1")),
            b1: b.var(&format!("ff{i}.b1")),
            w2: b.var(&format!("ff{i}.w2")),
            b2: b.var(&format!("ff{i}.b2")),
        };
        let nw = |i: usize| NormWeights {
            gain: b.var(&format!("an{i}.gain")),
            bias: b.var(&format!("an{i}.bias")),
        };
        let h = config.heads;
        BoundAttenGluco {
            embed: CHANNELS.map(|c| (b.var(&format!("embed.{c}.w")), b.var(&format!("embed.{c}.b")))),
            positional,
            cross: cross_attention_blocks().map(|n| AttentionWeights::from_bound(b, n, h)),
            multi_scale: multi_scale_blocks().map(|n| AttentionWeights::from_bound(b, n, h)),
            ff: [ffw(1), ffw(2)],
            norm: [nw(1), nw(2)],
            head_w: b.var("head.w"),
            head_b: b.var("head.b"),
        }
    }
}

/// Per-channel scalar→`d_model` affine embedding plus the positional table.
pub fn embed_and_encode(
    g: &mut Graph,
    input: &ModelInput<'_>,
    w: &BoundAttenGluco,
    config: &ModelConfig,
) -> Result<[Var; 3]> {
    let t = config.window;
    let channels = [input.glucose, input.steps, input.intervals];
    let mut out = Vec::with_capacity(3);
    for (i, ch) in channels.iter().enumerate() {
        contract!(
            ch.len() == t,
            "channel {} has length {} but the model window is {t}",
            CHANNELS[i],
            ch.len()
        );
        let x = g.constant(Tensor::from_parts(vec![t, 1], ch.to_vec()));
        let (ew, eb) = w.embed[i];
        let e = g.embed_affine(x, ew, eb)?;
        out.push(g.add(e, w.positional)?);
    }
    Ok([out[0], out[1], out[2]])
}

/// Forward pass for one window; returns a `1 × horizon` row in normalised units.
pub fn forward_one(g: &mut Graph, input: &ModelInput<'_>, w: &BoundAttenGluco, config: &ModelConfig) -> Result<Var> {
    let d = config.d_model;
    let [xg, xws, xwi] = embed_and_encode(g, input, w, config)?;
    let ca1 = cross_attention(g, xg, xws, &w.cross[0], d)?;
    let ca2 = cross_attention(g, xg, xwi, &w.cross[1], d)?;
    let x_ca = fuse_branches(g, ca1, ca2, &w.ff[0], &w.norm[0])?;
    let x_ma = multi_scale_attention(g, x_ca, &w.multi_scale, &w.ff[1], &w.norm[1], d)?;
    let flat = g.reshape(x_ma, &[1, config.window * d])?;
    let y = g.matmul(flat, w.head_w)?;
    g.add_bias(y, w.head_b)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttenGluco {
    pub config: ModelConfig,
    pub params: ParamSet,
}

impl AttenGluco {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let params = init_params(&config, seed)?;
        Ok(AttenGluco { config, params })
    }

    /// `batch × horizon` forecasts for `inputs` using weights bound on `g`.
    pub fn forward_batch(&self, g: &mut Graph, bound: &Bound<'_>, inputs: &[ModelInput<'_>]) -> Result<Var> {
        contract!(!inputs.is_empty(), "empty batch");
        let w = BoundAttenGluco::new(g, bound, &self.config);
        let rows = inputs
            .iter()
            .map(|x| forward_one(g, x, &w, &self.config))
            .collect::<Result<Vec<_>>>()?;
        if rows.len() == 1 {
            Ok(rows[0])
        } else {
            g.concat(&rows, 0)
        }
    }
}
