//! Per-frame action shield.
//!
//! The shield maps any proposed `(primitive, mask)` onto the instantaneous
//! feasible set: the summed RIC time of scheduled UEs fits the frame's
//! processing window, and every scheduled UE finishes before its deadline.
//!
//! Projection keeps the proposed primitive whenever some nonempty subset of
//! the proposed mask is feasible for it. Otherwise it walks down the fallback
//! ladder, ending at `NoOp` with an empty mask.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::action::{Action, Primitive};
use crate::error::{Error, Result};
use crate::latency::LatencyComponents;

/// Tolerance for budget and deadline comparisons.
pub const EPS: f64 = 1e-9;

/// Heaviest to lightest, by end-to-end latency.
pub const DEFAULT_LADDER: [Primitive; 5] = Primitive::BY_HEAVINESS;

/// Light, then FeatRefine, then FullRetrain; DeployCached and NoOp close the ladder.
pub const REVERSED_LADDER: [Primitive; 5] = [
    Primitive::LightAdapt,
    Primitive::FeatRefine,
    Primitive::FullRetrain,
    Primitive::DeployCached,
    Primitive::NoOp,
];

/// How the per-frame latency table handed to the shield is built.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorMode {
    /// The frame's realised latencies, jitter included.
    #[default]
    Oracle,
    /// Deterministic prediction: congestion and fading, no jitter.
    Nominal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShieldConfig {
    pub fallback_order: Vec<Primitive>,
    /// Replace the ladder by [`REVERSED_LADDER`].
    pub reversed: bool,
    pub predictor: PredictorMode,
}

impl Default for ShieldConfig {
    fn default() -> Self {
        ShieldConfig {
            fallback_order: DEFAULT_LADDER.to_vec(),
            reversed: false,
            predictor: PredictorMode::default(),
        }
    }
}

impl ShieldConfig {
    pub fn reversed() -> Self {
        ShieldConfig {
            reversed: true,
            ..ShieldConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let order = &self.fallback_order;
        let mut seen = [false; Primitive::COUNT];
        for p in order {
            if std::mem::replace(&mut seen[p.index()], true) {
                return Err(Error::config(format!("shield.fallback_order repeats {p}")));
            }
        }
        if order.len() != Primitive::COUNT || order.last() != Some(&Primitive::NoOp) {
            return Err(Error::config(
                "shield.fallback_order must list all five primitives and end with no_op",
            ));
        }
        Ok(())
    }

    /// The ladder actually walked by [`project`].
    pub fn ladder(&self) -> &[Primitive] {
        if self.reversed {
            &REVERSED_LADDER
        } else {
            &self.fallback_order
        }
    }
}

/// Everything the shield needs to know about the current frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityContext {
    pub t_avail_ms: f64,
    /// Predicted latency per UE and primitive (indexed by [`Primitive::index`]).
    pub latencies: Vec<[LatencyComponents; Primitive::COUNT]>,
    pub deadlines_ms: Vec<f64>,
    pub debts: Vec<f64>,
    pub queues_ms: Vec<f64>,
}

impl FeasibilityContext {
    pub fn n_ues(&self) -> usize {
        self.latencies.len()
    }

    pub fn latency(&self, ue: usize, primitive: Primitive) -> &LatencyComponents {
        &self.latencies[ue][primitive.index()]
    }

    fn check(&self, action: &Action) -> Result<()> {
        let n = self.n_ues();
        for (context, found) in [
            ("deadlines", self.deadlines_ms.len()),
            ("debts", self.debts.len()),
            ("queues", self.queues_ms.len()),
            ("action mask", action.n_ues()),
        ] {
            if found != n {
                return Err(Error::Dimension {
                    context,
                    expected: n,
                    found,
                });
            }
        }
        Ok(())
    }

    fn meets_deadline(&self, ue: usize, primitive: Primitive) -> bool {
        self.latency(ue, primitive).total_ms <= self.deadlines_ms[ue] + EPS
    }

    /// `Greater` means `a` is more urgent: higher debt, then longer queue, then lower index.
    pub fn urgency_cmp(&self, a: usize, b: usize) -> Ordering {
        self.debts[a]
            .total_cmp(&self.debts[b])
            .then(self.queues_ms[a].total_cmp(&self.queues_ms[b]))
            .then(b.cmp(&a))
    }

    /// UE indices from most to least urgent.
    pub fn by_urgency(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.n_ues()).collect();
        order.sort_by(|&a, &b| self.urgency_cmp(b, a));
        order
    }
}

pub fn is_feasible(ctx: &FeasibilityContext, action: &Action) -> Result<bool> {
    ctx.check(action)?;
    let u = action.primitive();
    let mut budget = 0.0;
    for i in action.scheduled() {
        if !ctx.meets_deadline(i, u) {
            return Ok(false);
        }
        budget += ctx.latency(i, u).ric_ms;
    }
    Ok(budget <= ctx.t_avail_ms + EPS)
}

/// What the shield changed about a proposal.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ShieldReport {
    /// UEs removed because they could not meet their deadline or did not fit the window alone.
    pub dropped_individual: Vec<usize>,
    /// UEs removed to bring the aggregate RIC time under the window.
    pub dropped_budget: Vec<usize>,
    /// Primitives tried after the proposal failed, in order.
    pub fallbacks: Vec<Primitive>,
}

impl ShieldReport {
    pub fn intervened(&self) -> bool {
        !(self.dropped_individual.is_empty() && self.dropped_budget.is_empty() && self.fallbacks.is_empty())
    }

    pub fn drops(&self) -> usize {
        self.dropped_individual.len() + self.dropped_budget.len()
    }
}

/// Greedy prune of `mask` under `primitive`; returns the surviving mask.
fn prune(
    ctx: &FeasibilityContext,
    primitive: Primitive,
    mask: &[bool],
    report: &mut ShieldReport,
) -> Vec<bool> {
    let mut kept = mask.to_vec();
    for i in 0..kept.len() {
        if kept[i] {
            let lat = ctx.latency(i, primitive);
            if !ctx.meets_deadline(i, primitive) || lat.ric_ms > ctx.t_avail_ms + EPS {
                kept[i] = false;
                report.dropped_individual.push(i);
            }
        }
    }
    let used = |kept: &[bool]| -> f64 {
        kept.iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| ctx.latency(i, primitive).ric_ms)
            .sum()
    };
    if used(&kept) > ctx.t_avail_ms + EPS {
        let mut order: Vec<usize> = (0..kept.len()).filter(|&i| kept[i]).collect();
        // Least urgent first.
        order.sort_by(|&a, &b| ctx.urgency_cmp(a, b));
        for i in order {
            if used(&kept) <= ctx.t_avail_ms + EPS {
                break;
            }
            kept[i] = false;
            report.dropped_budget.push(i);
        }
    }
    kept
}

/// Projects `proposed` onto the feasible set.
pub fn project(
    ctx: &FeasibilityContext,
    proposed: &Action,
    config: &ShieldConfig,
) -> Result<(Action, ShieldReport)> {
    ctx.check(proposed)?;
    let mut report = ShieldReport::default();
    if proposed.is_empty() {
        return Ok((proposed.clone(), report));
    }
    let ladder = config.ladder();
    let start = ladder
        .iter()
        .position(|p| *p == proposed.primitive())
        .ok_or_else(|| Error::config(format!("{} missing from fallback ladder", proposed.primitive())))?;

    let mut primitive = proposed.primitive();
    let mut next = start + 1;
    loop {
        if primitive == Primitive::NoOp {
            return Ok((Action::noop(ctx.n_ues()), report));
        }
        let mask = prune(ctx, primitive, proposed.mask(), &mut report);
        if mask.iter().any(|&b| b) {
            return Ok((Action::new(primitive, mask), report));
        }
        primitive = ladder.get(next).copied().unwrap_or(Primitive::NoOp);
        next += 1;
        report.fallbacks.push(primitive);
    }
}
