//! Registered gradient checks: every differentiable op on random small
//! shapes, plus end-to-end MSE gradients of both forecasting networks.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::GradChecker;
use crate::error::Result;
use crate::graph::{Graph, OpKind, Var};
use crate::model::{BaselineConfig, ModelConfig, ModelInput, ModelSpec};
use crate::params::Bound;
use crate::seeds::{derive, Purpose};
use crate::tensor::Tensor;

pub const SUITE_TOL: f64 = 1e-4;
pub const CASES_PER_OP: usize = 20;
/// Coordinates sampled per parameter tensor of the CNN-LSTM check.
pub const BASELINE_COORDS_PER_TENSOR: usize = 24;

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteEntry {
    pub name: String,
    pub cases: usize,
    pub coords: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Clone, Debug)]
pub struct SuiteReport {
    pub entries: Vec<SuiteEntry>,
    pub tol: f64,
    pub elapsed: Duration,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.passed)
    }

    pub fn entry(&self, name: &str) -> Option<&SuiteEntry> {
        self.entries.iter().find(|e| e.name == name)
    }
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("valid shape")
}

/// Keeps ReLU inputs away from the kink so central differences stay valid.
fn off_kink(mut t: Tensor) -> Tensor {
    for v in t.data_mut() {
        if v.abs() < 0.05 {
            *v += 0.1f64.copysign(*v);
        }
    }
    t
}

/// Reduces `y` to a scalar with fixed random weights, so every output
/// coordinate contributes a distinct amount.
fn probe(g: &mut Graph, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = random(&mut rng, g.value(y).shape());
    let w = g.constant(w);
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

type Case = (Vec<Tensor>, Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>);

fn op_case(op: OpKind, rng: &mut ChaCha8Rng) -> Case {
    let p = rng.random_range(1..=4);
    let q = rng.random_range(2..=5);
    let r = |rng: &mut ChaCha8Rng, shape: &[usize]| random(rng, shape);
    match op {
        OpKind::Add => (
            vec![r(rng, &[p, q]), r(rng, &[p, q])],
            Box::new(|g, v| g.add(v[0], v[1])),
        ),
        OpKind::Sub => (
            vec![r(rng, &[p, q]), r(rng, &[p, q])],
            Box::new(|g, v| g.sub(v[0], v[1])),
        ),
        OpKind::Mul => (
            vec![r(rng, &[p, q]), r(rng, &[p, q])],
            Box::new(|g, v| g.mul(v[0], v[1])),
        ),
        OpKind::Scale => {
            let c = rng.random_range(-3.0..3.0);
            (vec![r(rng, &[p, q])], Box::new(move |g, v| Ok(g.scale(v[0], c))))
        }
        OpKind::MatMul => {
            let k = rng.random_range(1..=4);
            (
                vec![r(rng, &[p, q]), r(rng, &[q, k])],
                Box::new(|g, v| g.matmul(v[0], v[1])),
            )
        }
        OpKind::Transpose => (vec![r(rng, &[p, q])], Box::new(|g, v| Ok(g.transpose(v[0])))),
        OpKind::AddBias => (
            vec![r(rng, &[p, q]), r(rng, &[q])],
            Box::new(|g, v| g.add_bias(v[0], v[1])),
        ),
        OpKind::Concat => {
            let axis = rng.random_range(0..2);
            let parts = rng.random_range(2..=3);
            let inputs = (0..parts)
                .map(|_| {
                    let n = rng.random_range(1..=3);
                    if axis == 0 {
                        r(rng, &[n, q])
                    } else {
                        r(rng, &[p, n])
                    }
                })
                .collect();
            (inputs, Box::new(move |g, v| g.concat(v, axis)))
        }
        OpKind::Slice => {
            let axis = rng.random_range(0..2);
            let dim = if axis == 0 { p } else { q };
            let len = rng.random_range(1..=dim);
            let start = rng.random_range(0..=dim - len);
            (
                vec![r(rng, &[p, q])],
                Box::new(move |g, v| g.slice(v[0], axis, start, len)),
            )
        }
        OpKind::Sum => (vec![r(rng, &[p, q])], Box::new(|g, v| Ok(g.sum(v[0])))),
        OpKind::Mean => (vec![r(rng, &[p, q])], Box::new(|g, v| Ok(g.mean(v[0])))),
        OpKind::Relu => (vec![off_kink(r(rng, &[p, q]))], Box::new(|g, v| Ok(g.relu(v[0])))),
        OpKind::Sigmoid => (vec![r(rng, &[p, q])], Box::new(|g, v| Ok(g.sigmoid(v[0])))),
        OpKind::Tanh => (vec![r(rng, &[p, q])], Box::new(|g, v| Ok(g.tanh(v[0])))),
        OpKind::Softmax => (vec![r(rng, &[p, q])], Box::new(|g, v| g.softmax_rows(v[0]))),
        OpKind::LayerNorm => (
            vec![r(rng, &[p, q]), r(rng, &[q]), r(rng, &[q])],
            Box::new(|g, v| g.layer_norm(v[0], v[1], v[2])),
        ),
        OpKind::Conv1d => {
            let t = rng.random_range(1..=4);
            let b = rng.random_range(1..=3);
            let cin = rng.random_range(1..=3);
            let cout = rng.random_range(1..=3);
            (
                vec![r(rng, &[t * b, cin]), r(rng, &[3 * cin, cout])],
                Box::new(move |g, v| g.conv1d(v[0], v[1], t)),
            )
        }
        OpKind::EmbedAffine => (
            vec![r(rng, &[p, 1]), r(rng, &[1, q]), r(rng, &[q])],
            Box::new(|g, v| g.embed_affine(v[0], v[1], v[2])),
        ),
        OpKind::PoolRows => {
            let k = rng.random_range(1..=4);
            let rows = rng.random_range(1..=9);
            (vec![r(rng, &[rows, q])], Box::new(move |g, v| g.pool_rows(v[0], k)))
        }
        OpKind::RepeatRows => {
            let k = rng.random_range(1..=4);
            let target: usize = rng.random_range(1..=9);
            (
                vec![r(rng, &[target.div_ceil(k), q])],
                Box::new(move |g, v| g.repeat_rows(v[0], k, target)),
            )
        }
        OpKind::Reshape => {
            let shape = if rng.random_bool(0.5) { [p * q, 1] } else { [1, p * q] };
            (vec![r(rng, &[p, q])], Box::new(move |g, v| g.reshape(v[0], &shape)))
        }
        OpKind::Leaf => unreachable!("leaves have no backward rule"),
    }
}

fn check_op(op: OpKind, seed: u64, fault: Option<OpKind>) -> Result<SuiteEntry> {
    let checker = GradChecker::new(SUITE_TOL).with_fault(fault);
    let mut entry = SuiteEntry {
        name: op.name().to_string(),
        cases: 0,
        coords: 0,
        max_rel_error: 0.0,
        passed: true,
    };
    for case in 0..CASES_PER_OP {
        let case_seed = derive(seed, Purpose::GradCheck, op as u64, case as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(case_seed);
        let (inputs, f) = op_case(op, &mut rng);
        let probe_seed = case_seed ^ 0x5eed;
        let report = checker.check(
            |g, v| {
                let y = f(g, v)?;
                probe(g, y, probe_seed)
            },
            &inputs,
        )?;
        entry.cases += 1;
        entry.coords += report.coords_checked;
        if report.max_rel_error > entry.max_rel_error || report.max_rel_error.is_nan() {
            entry.max_rel_error = report.max_rel_error;
        }
        entry.passed &= report.passed;
    }
    Ok(entry)
}

fn random_batch(rng: &mut ChaCha8Rng, batch: usize, window: usize) -> Vec<[Vec<f64>; 3]> {
    (0..batch)
        .map(|_| std::array::from_fn(|_| (0..window).map(|_| rng.random_range(-1.5..1.5)).collect()))
        .collect()
}

fn check_model(name: &str, spec: &ModelSpec, checker: GradChecker, seed: u64) -> Result<SuiteEntry> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive(seed, Purpose::GradCheck, 1000, spec.kind() as u64));
    let model = spec.build(rng.random())?;
    let batch = 2;
    let channels = random_batch(&mut rng, batch, spec.window());
    let targets = random(&mut rng, &[batch, spec.horizon()]);
    let f = |g: &mut Graph, vars: &[Var]| {
        let inputs: Vec<ModelInput<'_>> = channels
            .iter()
            .map(|[a, b, c]| ModelInput {
                glucose: a,
                steps: b,
                intervals: c,
            })
            .collect();
        let bound = Bound::from_vars(model.params(), vars.to_vec());
        let y = model.forward_bound(g, &bound, &inputs)?;
        let t = g.constant(targets.clone());
        g.mse(y, t)
    };
    let report = checker.check(f, model.params().tensors())?;
    Ok(SuiteEntry {
        name: name.to_string(),
        cases: 1,
        coords: report.coords_checked,
        max_rel_error: report.max_rel_error,
        passed: report.passed,
    })
}

/// Tiny AttenGluco used for the end-to-end check.
pub fn tiny_attengluco() -> ModelSpec {
    ModelSpec::AttenGluco(ModelConfig::new(8, 2, 4, 2))
}

/// Short-window CNN-LSTM used for the end-to-end check.
pub fn tiny_baseline() -> ModelSpec {
    ModelSpec::Baseline(BaselineConfig { window: 12, horizon: 2 })
}

/// Runs every registered check. `fault` corrupts one backward rule (the
/// negative control).
pub fn run_suite(seed: u64, fault: Option<OpKind>) -> Result<SuiteReport> {
    let start = Instant::now();
    let mut entries = OpKind::DIFFERENTIABLE
        .into_iter()
        .map(|op| check_op(op, seed, fault))
        .collect::<Result<Vec<_>>>()?;
    let full = GradChecker::new(SUITE_TOL).with_fault(fault);
    entries.push(check_model("model:attengluco", &tiny_attengluco(), full.clone(), seed)?);
    let sampled = full.sampled(BASELINE_COORDS_PER_TENSOR, derive(seed, Purpose::GradCheck, 2000, 0));
    entries.push(check_model("model:baseline", &tiny_baseline(), sampled, seed)?);
    Ok(SuiteReport {
        entries,
        tol: SUITE_TOL,
        elapsed: start.elapsed(),
    })
}
