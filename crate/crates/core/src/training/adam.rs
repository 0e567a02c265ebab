use crate::error::{contract, Result};
use crate::params::ParamSet;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// First and second moment estimates, one buffer per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &ParamSet) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.numel()]).collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(params: &mut ParamSet, grads: &[Vec<f64>], state: &mut AdamState, lr: f64) -> Result<()> {
    contract!(
        grads.len() == params.len() && state.m.len() == params.len(),
        "adam: {} parameters, {} gradients, {} moment buffers",
        params.len(),
        grads.len(),
        state.m.len()
    );
    state.step += 1;
    let c1 = 1.0 - BETA1.powi(state.step as i32);
    let c2 = 1.0 - BETA2.powi(state.step as i32);
    for (((p, g), m), v) in params
        .tensors_mut()
        .iter_mut()
        .zip(grads)
        .zip(&mut state.m)
        .zip(&mut state.v)
    {
        contract!(
            p.numel() == g.len() && g.len() == m.len(),
            "adam: gradient length {} for a parameter of {} values",
            g.len(),
            p.numel()
        );
        for (((x, &gi), mi), vi) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = BETA1 * *mi + (1.0 - BETA1) * gi;
            *vi = BETA2 * *vi + (1.0 - BETA2) * gi * gi;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *x -= lr * m_hat / (v_hat.sqrt() + EPSILON);
        }
    }
    Ok(())
}

/// Rescales `grads` in place so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut [Vec<f64>], max_norm: f64) -> f64 {
    let norm = grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grads.iter_mut().flatten().for_each(|g| *g *= s);
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn one(values: Vec<f64>) -> ParamSet {
        let mut p = ParamSet::new();
        let n = values.len();
        p.insert("w", Tensor::new(&[n], values).unwrap());
        p
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = one(vec![1.0, -2.0]);
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &[vec![0.0, 0.0]], &mut s, 0.1).unwrap();
        assert_eq!(p.tensors()[0].data(), &[1.0, -2.0]);
        assert_eq!(s.m[0], vec![0.0, 0.0]);
    }

    #[test]
    fn first_step_moves_by_about_lr() {
        // m̂ = g, v̂ = g², so Δ = lr·g/(|g| + ε)
        let mut p = one(vec![0.0, 0.0, 0.0]);
        let mut s = AdamState::new(&p);
        let g = vec![3.0, -0.5, 1e-3];
        adam_step(&mut p, std::slice::from_ref(&g), &mut s, 0.01).unwrap();
        for (x, gi) in p.tensors()[0].data().iter().zip(&g) {
            let expected = -0.01 * gi / (gi.abs() + EPSILON);
            assert!((x - expected).abs() < 1e-15);
            assert!(x.abs() <= 0.01);
        }
    }

    #[test]
    fn clipping_caps_norm() {
        let mut g = vec![vec![3.0], vec![4.0]];
        assert_eq!(clip_grad_norm(&mut g, 1.0), 5.0);
        assert!((g[0][0] - 0.6).abs() < 1e-15 && (g[1][0] - 0.8).abs() < 1e-15);
    }
}
