use serde::{Deserialize, Serialize};

/// How the multipliers evolve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DualMode {
    /// Projected, smoothed ascent from the given start.
    Adaptive([f64; 2]),
    /// Frozen at the given values.
    Fixed([f64; 2]),
    /// Pinned at zero.
    Zero,
}

/// Result of one multiplier update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualStep {
    /// Projected ascent step before smoothing.
    pub raw: f64,
    pub lambda: f64,
}

/// `raw = max(lambda + eta (c - d), 0)`, then `lambda' = ema lambda + (1 - ema) raw`.
pub fn dual_update(lambda: f64, mean_cost: f64, budget: f64, step_size: f64, ema: f64) -> DualStep {
    let raw = (lambda + step_size * (mean_cost - budget)).max(0.0);
    DualStep {
        raw,
        lambda: ema * lambda + (1.0 - ema) * raw,
    }
}

/// Multipliers plus the online estimate of the RIC budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualState {
    pub mode: DualMode,
    lambda: [f64; 2],
    pub step_size: f64,
    pub ema: f64,
    pub d2_ms: f64,
    window_sum: f64,
    window_frames: u64,
}

impl DualState {
    pub fn new(mode: DualMode, step_size: f64, ema: f64, d2_ms: f64) -> Self {
        let lambda = match mode {
            DualMode::Adaptive(l) | DualMode::Fixed(l) => l,
            DualMode::Zero => [0.0; 2],
        };
        DualState {
            mode,
            lambda,
            step_size,
            ema,
            d2_ms,
            window_sum: 0.0,
            window_frames: 0,
        }
    }

    pub fn lambdas(&self) -> [f64; 2] {
        self.lambda
    }

    /// Records one frame's processing window.
    pub fn observe_window(&mut self, t_avail_ms: f64) {
        self.window_sum += t_avail_ms;
        self.window_frames += 1;
    }

    /// `[d1, d2]`; d1 is the running mean of observed windows (0 before any frame).
    pub fn budgets(&self) -> [f64; 2] {
        let d1 = if self.window_frames == 0 {
            0.0
        } else {
            self.window_sum / self.window_frames as f64
        };
        [d1, self.d2_ms]
    }

    /// Applies one update from rollout-mean costs; returns the per-constraint steps.
    pub fn update(&mut self, mean_costs: [f64; 2]) -> [DualStep; 2] {
        let budgets = self.budgets();
        let steps: [DualStep; 2] =
            std::array::from_fn(|j| dual_update(self.lambda[j], mean_costs[j], budgets[j], self.step_size, self.ema));
        match self.mode {
            DualMode::Adaptive(_) => self.lambda = steps.map(|s| s.lambda),
            DualMode::Fixed(_) | DualMode::Zero => {}
        }
        steps
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projection_floor() {
        assert_eq!(dual_update(0.0, 1.0, 2.0, 1e-3, 0.9).lambda, 0.0);
    }

    #[test]
    fn ascent_without_smoothing() {
        let s = dual_update(0.1, 3.0, 2.0, 1e-3, 0.0);
        assert!((s.raw - 0.101).abs() < 1e-15);
        assert_eq!(s.lambda, s.raw);
    }

    #[test]
    fn smoothing_after_projection() {
        let s = dual_update(0.1, 3.0, 2.0, 1e-3, 0.9);
        assert!((s.lambda - 0.1001).abs() < 1e-15);
    }

    #[test]
    fn running_budget_and_modes() {
        let mut d = DualState::new(DualMode::Adaptive([0.2, 0.0]), 0.1, 0.0, 0.0);
        d.observe_window(2.0);
        d.observe_window(4.0);
        assert_eq!(d.budgets(), [3.0, 0.0]);
        d.update([4.0, 0.5]);
        let l = d.lambdas();
        assert!((l[0] - 0.3).abs() < 1e-12 && (l[1] - 0.05).abs() < 1e-12);

        let mut frozen = DualState::new(DualMode::Fixed([0.5, 0.5]), 0.1, 0.9, 0.0);
        frozen.update([100.0, 100.0]);
        assert_eq!(frozen.lambdas(), [0.5, 0.5]);
        let mut zero = DualState::new(DualMode::Zero, 0.1, 0.9, 0.0);
        zero.update([100.0, 100.0]);
        assert_eq!(zero.lambdas(), [0.0, 0.0]);
    }
}
