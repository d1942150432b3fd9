#![allow(dead_code)]

use rand::Rng;
use semadapt::latency::LatencyComponents;
use semadapt::shield::FeasibilityContext;
use semadapt::{Action, Primitive};

/// A frame context with arbitrary (not necessarily Table-shaped) latencies.
pub fn random_context<R: Rng + ?Sized>(n: usize, rng: &mut R) -> FeasibilityContext {
    let latencies = (0..n)
        .map(|_| {
            Primitive::ALL.map(|p| {
                if p == Primitive::NoOp {
                    LatencyComponents::new(0.03, 0.0, 0.045, 0.025)
                } else {
                    LatencyComponents::new(
                        rng.random_range(0.0..1.5),
                        rng.random_range(0.0..6.0),
                        rng.random_range(0.0..2.5),
                        rng.random_range(0.0..1.0),
                    )
                }
            })
        })
        .collect();
    FeasibilityContext {
        t_avail_ms: if rng.random_bool(0.05) { 0.0 } else { rng.random_range(0.0..8.0) },
        latencies,
        deadlines_ms: (0..n).map(|_| rng.random_range(1.0..12.0)).collect(),
        // Coarse values so urgency ties occur.
        debts: (0..n).map(|_| (rng.random_range(0..4) as f64) * 0.25).collect(),
        queues_ms: (0..n).map(|_| rng.random_range(0..5) as f64).collect(),
    }
}

pub fn random_action<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Action {
    let primitive = Primitive::ALL[rng.random_range(0..Primitive::COUNT)];
    Action::new(primitive, (0..n).map(|_| rng.random_bool(0.5)).collect())
}

/// Every nonempty sub-mask of `mask`.
pub fn submasks(mask: &[bool]) -> Vec<Vec<bool>> {
    let on: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
    (1u32..(1 << on.len()))
        .map(|bits| {
            let mut m = vec![false; mask.len()];
            for (k, &i) in on.iter().enumerate() {
                if bits & (1 << k) != 0 {
                    m[i] = true;
                }
            }
            m
        })
        .collect()
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

pub mod oracles {
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use semadapt::agent::{critic_loss, policy_loss, PolicyBatch, PolicyCoefficients, PolicyHeads};
    use semadapt::nn::Mlp;
    use semadapt::{Action, Primitive};

    use super::{random_action, rel_err};

    const H: f64 = 1e-5;
    pub const SEEDS: [u64; 3] = [1, 2, 3];
    pub const HIDDEN: [&[usize]; 3] = [&[8], &[16, 16], &[32, 8]];

    pub fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
    }

    /// Smallest |pre-activation| over the hidden layers of `net` at `x`.
    fn relu_margin(net: &Mlp, x: &Array2<f64>) -> f64 {
        let layers = net.layers();
        let mut h = x.clone();
        let mut margin = f64::INFINITY;
        for layer in &layers[..layers.len() - 1] {
            let z = h.dot(&layer.weight) + &layer.bias;
            margin = z.iter().fold(margin, |m, v| m.min(v.abs()));
            h = z.mapv(|v| v.max(0.0));
        }
        margin
    }

    /// Inputs whose hidden units all sit clearly off the ReLU kink, so central
    /// differences never straddle it.
    pub fn smooth_inputs(net: &Mlp, rows: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        let cols = net.input_len();
        let mut x = random_matrix(rows, cols, rng);
        for r in 0..rows {
            while relu_margin(net, &x.slice(ndarray::s![r..r + 1, ..]).to_owned()) < 1e-3 {
                let fresh = random_matrix(1, cols, rng);
                x.row_mut(r).assign(&fresh.row(0));
            }
        }
        x
    }

    /// Worst relative error of `analytic` against central differences of `f`
    /// over every parameter of `net`.
    pub fn worst_param_error(net: &Mlp, analytic: &[f64], f: impl Fn(&Mlp) -> f64) -> f64 {
        let base = net.params_to_vec();
        assert_eq!(base.len(), analytic.len());
        let mut probe = net.clone();
        let mut worst: f64 = 0.0;
        for k in 0..base.len() {
            let mut p = base.clone();
            p[k] = base[k] + H;
            probe.set_params_from_slice(&p).unwrap();
            let up = f(&probe);
            p[k] = base[k] - H;
            probe.set_params_from_slice(&p).unwrap();
            let down = f(&probe);
            worst = worst.max(rel_err(analytic[k], (up - down) / (2.0 * H), 1e-6));
        }
        worst
    }

    fn widths(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
        std::iter::once(input).chain(hidden.iter().copied()).chain([output]).collect()
    }

    /// Raw network outputs contracted with a random weight matrix.
    pub fn mlp_error(seed: u64, hidden: &[usize]) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = Mlp::new(&widths(6, hidden, 3), &mut rng);
        let x = smooth_inputs(&net, 5, &mut rng);
        let weights = random_matrix(5, 3, &mut rng);
        let (_, cache) = net.forward(x.view()).unwrap();
        let g = net.backward(&cache, weights.view()).unwrap();
        worst_param_error(&net, &g.to_vec(), |m| (m.forward(x.view()).unwrap().0 * &weights).sum())
    }

    /// Clipped Lagrangian objective, with ratios on both sides of the clip range.
    pub fn policy_error(seed: u64, hidden: &[usize]) -> f64 {
        let n_ues = 4;
        let coef = PolicyCoefficients {
            lambdas: [0.3, 0.7],
            clip_eps: 0.2,
            entropy_coef: 0.01,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = Mlp::new(&widths(7, hidden, Primitive::COUNT + n_ues), &mut rng);
        let rows = 32;
        let x = smooth_inputs(&net, rows, &mut rng);
        let (out, cache) = net.forward(x.view()).unwrap();
        let mut actions = Vec::new();
        let mut old = Vec::new();
        for row in out.outer_iter() {
            let heads = PolicyHeads::from_output(row.as_slice().unwrap(), n_ues).unwrap();
            let a = random_action(n_ues, &mut rng);
            let offset = [-0.6, -0.05, 0.05, 0.6][rng.random_range(0..4)];
            old.push(heads.log_prob(&a) + offset);
            actions.push(a);
        }
        let mut draw = || (0..rows).map(|_| rng.random_range(-2.0..2.0)).collect::<Vec<f64>>();
        let adv = draw();
        let costs = [draw(), draw()];
        let refs: Vec<&Action> = actions.iter().collect();
        let loss_of = |m: &Mlp| {
            let (out, _) = m.forward(x.view()).unwrap();
            let batch = PolicyBatch {
                actions: &refs,
                old_log_probs: &old,
                advantages: &adv,
                cost_advantages: [&costs[0], &costs[1]],
            };
            policy_loss(out.view(), batch, coef).unwrap()
        };
        let l = loss_of(&net);
        assert!(l.clip_fraction > 0.0 && l.clip_fraction < 1.0);
        let g = net.backward(&cache, l.grad.view()).unwrap();
        worst_param_error(&net, &g.to_vec(), |m| loss_of(m).loss)
    }

    pub fn critic_error(seed: u64, hidden: &[usize], heads: [bool; 3]) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = Mlp::new(&widths(5, hidden, 3), &mut rng);
        let x = smooth_inputs(&net, 9, &mut rng);
        let targets: Vec<Vec<f64>> = (0..3).map(|_| (0..9).map(|_| rng.random_range(-3.0..3.0)).collect()).collect();
        let loss_of = |m: &Mlp| {
            let (out, _) = m.forward(x.view()).unwrap();
            critic_loss(out.view(), [&targets[0], &targets[1], &targets[2]], heads).unwrap()
        };
        let (_, cache) = net.forward(x.view()).unwrap();
        let (_, grad) = loss_of(&net);
        let g = net.backward(&cache, grad.view()).unwrap();
        worst_param_error(&net, &g.to_vec(), |m| loss_of(m).0)
    }

    /// `A_t = sum_l (gamma lambda)^l delta_{t+l}`, evaluated as a double sum.
    pub fn gae_direct(values: &[f64], rewards: &[f64], gamma: f64, lambda: f64) -> Vec<f64> {
        let len = rewards.len();
        (0..len)
            .map(|t| {
                (t..len)
                    .map(|k| {
                        let delta = rewards[k] + gamma * values[k + 1] - values[k];
                        (gamma * lambda).powi((k - t) as i32) * delta
                    })
                    .sum()
            })
            .collect()
    }
}
