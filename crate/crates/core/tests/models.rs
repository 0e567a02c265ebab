use attengluco_core::graph::sigmoid;
use attengluco_core::model::attengluco::{cross_attention, AttentionWeights};
use attengluco_core::model::baseline::{lstm_cell, LstmWeights};
use attengluco_core::model::{horizon_samples, BaselineConfig};
use attengluco_core::{Graph, ModelConfig, ModelInput, ModelSpec, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_tensor(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
    Tensor::matrix(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn channels(t: usize, phase: f64) -> [Vec<f64>; 3] {
    [
        (0..t).map(|i| (i as f64 * 0.3 + phase).sin()).collect(),
        (0..t).map(|i| ((i * 7) % 5) as f64 * 0.4 - 0.8).collect(),
        (0..t).map(|i| (i as f64 * 0.11).cos()).collect(),
    ]
}

fn input(c: &[Vec<f64>; 3]) -> ModelInput<'_> {
    ModelInput {
        glucose: &c[0],
        steps: &c[1],
        intervals: &c[2],
    }
}

#[test]
fn forecasts_depend_on_input_order() {
    let t = 16;
    let forward = channels(t, 0.0);
    let mut reversed = forward.clone();
    reversed.iter_mut().for_each(|c| c.reverse());
    for spec in [
        ModelSpec::AttenGluco(ModelConfig::new(t, 3, 8, 2)),
        ModelSpec::Baseline(BaselineConfig { window: t, horizon: 3 }),
    ] {
        let m = spec.build(1).unwrap();
        let out = m.predict(&[input(&forward), input(&reversed)]).unwrap();
        let diff: f64 = out[0].iter().zip(&out[1]).map(|(a, b)| (a - b).abs()).sum();
        assert!(diff > 1e-6, "{}", spec.kind());
    }
}

#[test]
fn attention_is_linear_in_keys_and_values_when_queries_vanish() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (t, d, heads) = (5, 4, 2);
    let xq = rand_tensor(&mut rng, t, d);
    let (x1, x2) = (rand_tensor(&mut rng, 7, d), rand_tensor(&mut rng, 7, d));
    let wk: Vec<Tensor> = (0..heads).map(|_| rand_tensor(&mut rng, d, d)).collect();
    let wv: Vec<Tensor> = (0..heads).map(|_| rand_tensor(&mut rng, d, d)).collect();
    let wh = rand_tensor(&mut rng, heads * d, d);
    let (a, b) = (0.7, -1.3);

    let run = |xkv: Tensor| {
        let mut g = Graph::new();
        let q = g.constant(xq.clone());
        let kv = g.constant(xkv);
        let w = AttentionWeights {
            heads: (0..heads)
                .map(|h| {
                    [
                        g.constant(Tensor::zeros(&[d, d])),
                        g.constant(wk[h].clone()),
                        g.constant(wv[h].clone()),
                    ]
                })
                .collect(),
            out: g.constant(wh.clone()),
        };
        let y = cross_attention(&mut g, q, kv, &w, d).unwrap();
        g.value(y).clone()
    };
    let mixed: Vec<f64> = x1.data().iter().zip(x2.data()).map(|(p, q)| a * p + b * q).collect();
    let lhs = run(Tensor::matrix(7, d, mixed).unwrap());
    let (y1, y2) = (run(x1), run(x2));
    for ((l, p), q) in lhs.data().iter().zip(y1.data()).zip(y2.data()) {
        assert!((l - (a * p + b * q)).abs() < 1e-12);
    }
}

#[test]
fn output_width_tracks_horizon() {
    for (ph, m) in [(5, 1), (30, 6), (60, 12)] {
        assert_eq!(horizon_samples(ph).unwrap(), m);
        for spec in [
            ModelSpec::AttenGluco(ModelConfig::new(20, m, 8, 2)),
            ModelSpec::Baseline(BaselineConfig { window: 20, horizon: m }),
        ] {
            let c = channels(20, 0.5);
            let out = spec.build(0).unwrap().predict(&[input(&c); 3]).unwrap();
            assert_eq!(out.len(), 3);
            assert!(out.iter().all(|r| r.len() == m && r.iter().all(|v| v.is_finite())));
        }
    }
}

#[test]
fn wrong_window_length_is_rejected() {
    let m = ModelSpec::AttenGluco(ModelConfig::new(20, 2, 8, 2)).build(0).unwrap();
    let c = channels(19, 0.0);
    assert!(m.predict(&[input(&c)]).is_err());
}

#[test]
fn lstm_cell_matches_gate_equations() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (batch, n_in, n) = (2, 3, 4);
    let x = rand_tensor(&mut rng, batch, n_in);
    let h = rand_tensor(&mut rng, batch, n);
    let c = rand_tensor(&mut rng, batch, n);
    let w_ih = rand_tensor(&mut rng, n_in, 4 * n);
    let w_hh = rand_tensor(&mut rng, n, 4 * n);
    let bias = rand_tensor(&mut rng, 1, 4 * n);

    let mut g = Graph::new();
    let vars = [&x, &h, &c, &w_ih, &w_hh, &bias].map(|t| g.constant(t.clone()));
    let b = g.reshape(vars[5], &[4 * n]).unwrap();
    let w = LstmWeights {
        w_ih: vars[3],
        w_hh: vars[4],
        b,
        hidden: n,
    };
    let (hn, cn) = lstm_cell(&mut g, vars[0], vars[1], vars[2], &w).unwrap();

    for r in 0..batch {
        let z: Vec<f64> = (0..4 * n)
            .map(|j| {
                (0..n_in).map(|k| x.get(r, k) * w_ih.get(k, j)).sum::<f64>()
                    + (0..n).map(|k| h.get(r, k) * w_hh.get(k, j)).sum::<f64>()
                    + bias.get(0, j)
            })
            .collect();
        for j in 0..n {
            let (i, f, cand, o) = (
                sigmoid(z[j]),
                sigmoid(z[n + j]),
                z[2 * n + j].tanh(),
                sigmoid(z[3 * n + j]),
            );
            let c_next = f * c.get(r, j) + i * cand;
            assert!((g.value(cn).get(r, j) - c_next).abs() < 1e-12);
            assert!((g.value(hn).get(r, j) - o * c_next.tanh()).abs() < 1e-12);
        }
    }
}
