mod common;

use common::random_action;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use semadapt::agent::{policy_loss, PolicyBatch, PolicyCoefficients, PolicyHeads};
use semadapt::baselines::RandomScheduler;
use semadapt::{Action, Primitive};

const DRAWS: usize = 100_000;

/// Fails when an empirical frequency sits more than three standard errors from `p`.
fn within_3_sigma(hits: usize, trials: usize, p: f64, what: &str) {
    let freq = hits as f64 / trials as f64;
    let sigma = (p * (1.0 - p) / trials as f64).sqrt();
    assert!((freq - p).abs() <= 3.0 * sigma, "{what}: frequency {freq} vs probability {p} (sigma {sigma})");
}

#[test]
fn factored_sampler_matches_declared_probabilities() {
    let heads = PolicyHeads {
        primitive_logits: [0.4, -1.0, 1.2, 0.0, -0.3],
        mask_logits: vec![-1.5, 0.0, 0.7, 2.0],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut primitive_hits = [0usize; Primitive::COUNT];
    let mut bit_hits = [0usize; 4];
    let mut with_mask = 0;
    for _ in 0..DRAWS {
        let a = heads.sample(&mut rng);
        primitive_hits[a.primitive().index()] += 1;
        if a.primitive() != Primitive::NoOp {
            with_mask += 1;
            for i in a.scheduled() {
                bit_hits[i] += 1;
            }
        }
    }
    for (p, prob) in Primitive::ALL.iter().zip(heads.primitive_probs()) {
        within_3_sigma(primitive_hits[p.index()], DRAWS, prob, p.name());
    }
    for (i, prob) in heads.mask_probs().into_iter().enumerate() {
        within_3_sigma(bit_hits[i], with_mask, prob, &format!("bit {i}"));
    }
}

#[test]
fn factored_log_prob_is_normalised_over_masked_actions() {
    // Sum of exp(log_prob) over every (non-NoOp primitive, mask) pair plus
    // the NoOp marginal is one.
    let heads = PolicyHeads {
        primitive_logits: [0.1, 0.2, -0.3, 0.9, -1.1],
        mask_logits: vec![0.5, -0.25, 1.5],
    };
    let mut total = heads.primitive_probs()[Primitive::NoOp.index()];
    for p in Primitive::ALL.into_iter().filter(|p| *p != Primitive::NoOp) {
        for bits in 0u32..8 {
            let mask = (0..3).map(|i| bits & (1 << i) != 0).collect();
            total += heads.log_prob(&Action::new(p, mask)).exp();
        }
    }
    assert!((total - 1.0).abs() < 1e-12);
}

#[test]
fn random_scheduler_draws_uniformly() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 6;
    let mut primitive_hits = [0usize; Primitive::COUNT];
    let mut bit_hits = vec![0usize; n];
    let mut with_mask = 0;
    for _ in 0..DRAWS {
        let a = RandomScheduler::draw(n, &mut rng);
        primitive_hits[a.primitive().index()] += 1;
        if a.primitive() != Primitive::NoOp {
            with_mask += 1;
            for i in a.scheduled() {
                bit_hits[i] += 1;
            }
        }
    }
    for p in Primitive::ALL {
        within_3_sigma(primitive_hits[p.index()], DRAWS, 0.2, p.name());
    }
    for (i, hits) in bit_hits.into_iter().enumerate() {
        within_3_sigma(hits, with_mask, 0.5, &format!("bit {i}"));
    }
}

#[test]
fn zero_multipliers_reduce_to_plain_ppo() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let n_ues = 5;
    let rows = 16;
    let out = Array2::from_shape_fn((rows, Primitive::COUNT + n_ues), |_| rng.random_range(-2.0..2.0));
    let actions: Vec<Action> = (0..rows).map(|_| random_action(n_ues, &mut rng)).collect();
    let refs: Vec<&Action> = actions.iter().collect();
    let old: Vec<f64> = (0..rows).map(|_| rng.random_range(-6.0..-2.0)).collect();
    let adv: Vec<f64> = (0..rows).map(|_| rng.random_range(-1.0..1.0)).collect();
    let costs: Vec<f64> = (0..rows).map(|_| rng.random_range(-10.0..10.0)).collect();
    let zeros = vec![0.0; rows];
    let coef = PolicyCoefficients {
        lambdas: [0.0; 2],
        clip_eps: 0.2,
        entropy_coef: 0.01,
    };
    let with_costs = PolicyBatch {
        actions: &refs,
        old_log_probs: &old,
        advantages: &adv,
        cost_advantages: [&costs, &costs],
    };
    let without = PolicyBatch {
        cost_advantages: [&zeros, &zeros],
        ..with_costs
    };
    let a = policy_loss(out.view(), with_costs, coef).unwrap();
    let b = policy_loss(out.view(), without, coef).unwrap();
    assert_eq!(a.loss, b.loss);
    assert_eq!(a.grad, b.grad);
    assert_eq!(a.cost_term, 0.0);
}
