use serde::{Deserialize, Serialize};

/// Running mean and variance (Chan et al. parallel merge) used to keep
/// critic targets near unit scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunningNorm {
    count: f64,
    mean: f64,
    m2: f64,
}

/// Floor on the scale so constant targets stay finite.
const MIN_SCALE: f64 = 1e-2;

impl Default for RunningNorm {
    fn default() -> Self {
        RunningNorm {
            count: 0.0,
            mean: 0.0,
            m2: 0.0,
        }
    }
}

impl RunningNorm {
    pub fn update(&mut self, xs: &[f64]) {
        if xs.is_empty() {
            return;
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let m2 = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>();
        let total = self.count + n;
        let delta = mean - self.mean;
        self.mean += delta * n / total;
        self.m2 += m2 + delta * delta * self.count * n / total;
        self.count = total;
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Population standard deviation, floored; 1 before any data.
    pub fn scale(&self) -> f64 {
        if self.count == 0.0 {
            1.0
        } else {
            (self.m2 / self.count).sqrt().max(MIN_SCALE)
        }
    }

    pub fn normalize(&self, x: f64) -> f64 {
        (x - self.mean) / self.scale()
    }

    pub fn denormalize(&self, y: f64) -> f64 {
        y * self.scale() + self.mean
    }
}
