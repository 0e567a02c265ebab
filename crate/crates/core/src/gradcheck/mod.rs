//! Central-difference gradient checking.

pub mod suite;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{contract, Result};
use crate::graph::{Graph, OpKind, Var};
use crate::tensor::Tensor;

/// Finite-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Denominator floor of the relative error, so coordinates whose true
/// gradient is ~0 are judged on absolute error instead.
pub const REL_ERROR_FLOOR: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(input index, flat coordinate)` of the worst coordinate.
    pub worst: Option<(usize, usize)>,
    pub coords_checked: usize,
    pub tol: f64,
    pub passed: bool,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Checks the gradient of a scalar-valued `f` at `x`, every coordinate.
pub fn grad_check<F>(f: F, x: &Tensor, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    GradChecker::new(tol).check(|g, v| f(g, v[0]), std::slice::from_ref(x))
}

/// Configurable multi-input gradient checker.
#[derive(Clone, Debug)]
pub struct GradChecker {
    pub tol: f64,
    /// When set, only this many randomly chosen coordinates per input are
    /// perturbed. Large parameter tensors would otherwise need one pair of
    /// forward passes per scalar.
    pub max_coords_per_input: Option<usize>,
    pub fault: Option<OpKind>,
    pub seed: u64,
}

impl GradChecker {
    pub fn new(tol: f64) -> Self {
        GradChecker {
            tol,
            max_coords_per_input: None,
            fault: None,
            seed: 0,
        }
    }

    pub fn sampled(mut self, max_coords: usize, seed: u64) -> Self {
        self.max_coords_per_input = Some(max_coords);
        self.seed = seed;
        self
    }

    pub fn with_fault(mut self, fault: Option<OpKind>) -> Self {
        self.fault = fault;
        self
    }

    fn graph(&self) -> Graph {
        match self.fault {
            Some(k) => Graph::with_fault(k),
            None => Graph::new(),
        }
    }

    fn eval<F>(&self, f: &F, inputs: &[Tensor]) -> Result<f64>
    where
        F: Fn(&mut Graph, &[Var]) -> Result<Var>,
    {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        contract!(g.value(out).numel() == 1, "gradient check needs a scalar function");
        Ok(g.value(out).data()[0])
    }

    pub fn check<F>(&self, f: F, inputs: &[Tensor]) -> Result<GradCheckReport>
    where
        F: Fn(&mut Graph, &[Var]) -> Result<Var>,
    {
        let mut g = self.graph();
        let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        g.backward(out)?;
        let analytic: Vec<Vec<f64>> = vars
            .iter()
            .zip(inputs)
            .map(|(&v, t)| g.take_grad(v).unwrap_or_else(|| vec![0.0; t.numel()]))
            .collect();
        drop(g);

        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut work: Vec<Tensor> = inputs.to_vec();
        let mut report = GradCheckReport {
            max_rel_error: 0.0,
            worst: None,
            coords_checked: 0,
            tol: self.tol,
            passed: true,
        };
        for (i, input) in inputs.iter().enumerate() {
            let n = input.numel();
            let coords: Vec<usize> = match self.max_coords_per_input {
                Some(k) if k < n => {
                    let mut c = sample(&mut rng, n, k).into_vec();
                    c.sort_unstable();
                    c
                }
                _ => (0..n).collect(),
            };
            for c in coords {
                let orig = input.data()[c];
                work[i].data_mut()[c] = orig + FD_STEP;
                let plus = self.eval(&f, &work)?;
                work[i].data_mut()[c] = orig - FD_STEP;
                let minus = self.eval(&f, &work)?;
                work[i].data_mut()[c] = orig;
                let numeric = (plus - minus) / (2.0 * FD_STEP);
                let err = relative_error(analytic[i][c], numeric);
                report.coords_checked += 1;
                if err > report.max_rel_error || err.is_nan() {
                    report.max_rel_error = err;
                    report.worst = Some((i, c));
                }
            }
        }
        report.passed = report.max_rel_error <= self.tol;
        Ok(report)
    }
}
