//! Clipped Lagrangian policy surrogate and critic regression, each returning
//! the gradient with respect to the network outputs.

use ndarray::{Array2, ArrayView2};

use super::policy::PolicyHeads;
use crate::action::Action;
use crate::error::{Error, Result};

/// Log-ratios are clipped to this magnitude before exponentiation.
pub const MAX_LOG_RATIO: f64 = 20.0;

/// One minibatch of policy-gradient inputs, aligned by row.
#[derive(Debug, Clone, Copy)]
pub struct PolicyBatch<'a> {
    pub actions: &'a [&'a Action],
    pub old_log_probs: &'a [f64],
    /// Reward advantages, already standardised.
    pub advantages: &'a [f64],
    pub cost_advantages: [&'a [f64]; 2],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyCoefficients {
    pub lambdas: [f64; 2],
    pub clip_eps: f64,
    pub entropy_coef: f64,
}

#[derive(Debug, Clone)]
pub struct PolicyLoss {
    pub loss: f64,
    /// Mean of `min(rho A, clip(rho) A)`.
    pub surrogate: f64,
    /// Mean of `sum_j lambda_j rho A^c_j`.
    pub cost_term: f64,
    pub entropy: f64,
    pub mean_ratio: f64,
    pub clip_fraction: f64,
    /// d loss / d outputs, same shape as the outputs.
    pub grad: Array2<f64>,
}

/// `-(mean(min(rho A, clip(rho, 1-eps, 1+eps) A) - sum_j lambda_j rho A^c_j) + c_H mean(H))`.
///
/// The cost term is importance weighted like the reward term, so the
/// multipliers act on the policy gradient.
pub fn policy_loss(outputs: ArrayView2<'_, f64>, batch: PolicyBatch<'_>, coef: PolicyCoefficients) -> Result<PolicyLoss> {
    let n = outputs.nrows();
    for (context, found) in [
        ("policy actions", batch.actions.len()),
        ("old log-probs", batch.old_log_probs.len()),
        ("advantages", batch.advantages.len()),
        ("cost advantages (1)", batch.cost_advantages[0].len()),
        ("cost advantages (2)", batch.cost_advantages[1].len()),
    ] {
        if found != n {
            return Err(Error::Dimension {
                context,
                expected: n,
                found,
            });
        }
    }
    if n == 0 {
        return Err(Error::Dimension {
            context: "policy batch",
            expected: 1,
            found: 0,
        });
    }
    let inv_n = 1.0 / n as f64;
    let (lo, hi) = (1.0 - coef.clip_eps, 1.0 + coef.clip_eps);
    let mut grad = Array2::zeros(outputs.raw_dim());
    let (mut surrogate, mut cost_term, mut entropy, mut ratio_sum, mut clipped) = (0.0, 0.0, 0.0, 0.0, 0usize);
    for (t, row) in outputs.outer_iter().enumerate() {
        let action = batch.actions[t];
        let heads = PolicyHeads::from_output(row.as_slice().expect("standard layout"), action.n_ues())?;
        let log_ratio = heads.log_prob(action) - batch.old_log_probs[t];
        let bounded = log_ratio.clamp(-MAX_LOG_RATIO, MAX_LOG_RATIO);
        let rho = bounded.exp();
        let d_rho = if bounded == log_ratio { rho } else { 0.0 };
        let adv = batch.advantages[t];
        let unclipped = rho * adv;
        let clipped_term = rho.clamp(lo, hi) * adv;
        let (surr, d_surr) = if unclipped <= clipped_term {
            (unclipped, adv)
        } else {
            clipped += 1;
            (clipped_term, 0.0)
        };
        let cost_adv: f64 = (0..2).map(|j| coef.lambdas[j] * batch.cost_advantages[j][t]).sum();
        let h = heads.entropy();
        surrogate += surr;
        cost_term += rho * cost_adv;
        entropy += h;
        ratio_sum += rho;

        let d_logp = -inv_n * (d_surr - cost_adv) * d_rho;
        let g_lp = heads.log_prob_grad(action);
        let g_h = heads.entropy_grad();
        for (k, g) in grad.row_mut(t).iter_mut().enumerate() {
            *g = d_logp * g_lp[k] - inv_n * coef.entropy_coef * g_h[k];
        }
    }
    let (surrogate, cost_term, entropy) = (surrogate * inv_n, cost_term * inv_n, entropy * inv_n);
    Ok(PolicyLoss {
        loss: -(surrogate - cost_term + coef.entropy_coef * entropy),
        surrogate,
        cost_term,
        entropy,
        mean_ratio: ratio_sum * inv_n,
        clip_fraction: clipped as f64 * inv_n,
        grad,
    })
}

/// Half mean-squared error summed over the enabled value heads
/// (reward, RIC cost, overshoot cost).
pub fn critic_loss(
    predictions: ArrayView2<'_, f64>,
    targets: [&[f64]; 3],
    heads: [bool; 3],
) -> Result<(f64, Array2<f64>)> {
    let n = predictions.nrows();
    if predictions.ncols() != 3 {
        return Err(Error::Dimension {
            context: "critic output",
            expected: 3,
            found: predictions.ncols(),
        });
    }
    for t in targets {
        if t.len() != n {
            return Err(Error::Dimension {
                context: "critic targets",
                expected: n,
                found: t.len(),
            });
        }
    }
    let inv_n = 1.0 / n.max(1) as f64;
    let mut loss = 0.0;
    let mut grad = Array2::zeros((n, 3));
    for h in (0..3).filter(|&h| heads[h]) {
        for t in 0..n {
            let err = predictions[[t, h]] - targets[h][t];
            loss += 0.5 * err * err * inv_n;
            grad[[t, h]] = err * inv_n;
        }
    }
    Ok((loss, grad))
}
