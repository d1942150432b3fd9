//! Per-UE state transition pieces: semantic quality, feedback, queues, reward, costs.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::EnvConfig;
use crate::action::{Action, Primitive};
use crate::error::{Error, Result};
use crate::latency::LatencyComponents;

fn gaussian<R: Rng + ?Sized>(rng: &mut R, sigma: f64) -> f64 {
    Normal::new(0.0, sigma).expect("sigma validated").sample(rng)
}

/// Quality increment for one UE in one frame, before clipping to `[0, 1]`.
///
/// Unscheduled UEs only decay. A scheduled UE gains the primitive's noisy
/// mean gain, attenuated by its channel and by how late the update landed.
pub fn semantic_gain<R: Rng + ?Sized>(
    cfg: &EnvConfig,
    primitive: Primitive,
    scheduled: bool,
    on_time_factor: f64,
    channel: f64,
    rng: &mut R,
) -> f64 {
    if !scheduled {
        return -cfg.quality_decay;
    }
    let raw = (cfg.gain_means[primitive.index()] + gaussian(rng, cfg.gain_noise)).max(0.0);
    raw * channel * on_time_factor - cfg.quality_decay
}

pub fn on_time_factor(debt: f64) -> f64 {
    (1.0 - debt).max(0.0)
}

/// Simulated evaluator score: tracks quality, marked down for tardy updates.
pub fn feedback_oracle<R: Rng + ?Sized>(cfg: &EnvConfig, quality: f64, debt: f64, rng: &mut R) -> f64 {
    let score = quality - cfg.tardiness_penalty * debt.min(1.0) + gaussian(rng, cfg.feedback_noise);
    score.clamp(0.0, 1.0)
}

/// Convex mix of objective quality and human feedback.
pub fn fuse_utility(quality: f64, feedback: f64, eta: f64) -> f64 {
    (1.0 - eta) * quality + eta * feedback
}

pub fn ewma_update(ema: f64, fused: f64, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::config(format!("EWMA factor must lie in (0, 1], got {alpha}")));
    }
    Ok((1.0 - alpha) * ema + alpha * fused)
}

/// RIC backlog after arrivals and (if scheduled) service, kept in `[0, q_max]`.
pub fn queue_update(queue_ms: f64, arrival_ms: f64, scheduled: bool, ric_ms: f64, q_max: f64) -> f64 {
    let served = if scheduled { ric_ms } else { 0.0 };
    (queue_ms + arrival_ms - served).max(0.0).min(q_max)
}

/// Post-transition reward: weighted utility minus compute and lateness penalties.
pub fn compute_reward(
    cfg: &EnvConfig,
    weights: &[f64],
    next_emas: &[f64],
    primitive: Primitive,
    next_debts: &[f64],
) -> f64 {
    let utility: f64 = weights.iter().zip(next_emas).map(|(w, u)| w * u).sum();
    let debt: f64 = next_debts.iter().sum();
    utility - cfg.beta_compute * cfg.compute_penalty[primitive.index()] - cfg.beta_debt * debt
}

/// Per-frame constraint signals.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CostVector {
    /// RIC processing time consumed by scheduled UEs.
    pub ric_time_ms: f64,
    /// Total deadline overshoot of scheduled UEs.
    pub overshoot_ms: f64,
}

impl CostVector {
    pub fn as_array(&self) -> [f64; 2] {
        [self.ric_time_ms, self.overshoot_ms]
    }
}

/// Costs of an executed action; only scheduled UEs contribute.
pub fn compute_costs(
    action: &Action,
    latencies: &[LatencyComponents],
    deadlines: &[f64],
) -> Result<CostVector> {
    let n = action.n_ues();
    for (context, found) in [("latencies", latencies.len()), ("deadlines", deadlines.len())] {
        if found != n {
            return Err(Error::Dimension {
                context,
                expected: n,
                found,
            });
        }
    }
    let mut costs = CostVector::default();
    for i in action.scheduled() {
        costs.ric_time_ms += latencies[i].ric_ms;
        costs.overshoot_ms += (latencies[i].total_ms - deadlines[i]).max(0.0);
    }
    Ok(costs)
}
