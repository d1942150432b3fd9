use serde::{Deserialize, Serialize};

use crate::action::Primitive;
use crate::error::{Error, Result};
use crate::latency::{LatencyConfig, RadioConfig};

/// Every tunable of the simulated cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub n_ues: usize,
    /// Permit UE counts outside {8, 16} (unit tests, small studies).
    pub allow_any_ue_count: bool,
    /// Service priorities; `None` means uniform `1/N`.
    pub weights: Option<Vec<f64>>,
    pub beta_compute: f64,
    pub beta_debt: f64,
    /// Compute penalty per primitive, indexed by [`Primitive::index`].
    pub compute_penalty: [f64; 5],
    /// Mean semantic gain per primitive, indexed by [`Primitive::index`].
    pub gain_means: [f64; 5],
    pub gain_noise: f64,
    pub quality_decay: f64,
    pub quality_init: [f64; 2],
    pub deadline_range_ms: [f64; 2],
    /// Weight of human feedback against objective quality when fusing.
    pub feedback_mix: f64,
    pub ewma_alpha: f64,
    pub feedback_noise: f64,
    /// Feedback reduction per unit of (capped) deadline debt.
    pub tardiness_penalty: f64,
    pub arrival_prob: f64,
    pub mean_job_ms: f64,
    pub channel_mean: f64,
    pub channel_persistence: f64,
    pub channel_noise: f64,
    pub episode_frames: usize,
    /// Frame period; RIC work that overflows the window waits this long.
    pub frame_ms: f64,
    pub latency: LatencyConfig,
    pub radio: RadioConfig,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            n_ues: 8,
            allow_any_ue_count: false,
            weights: None,
            beta_compute: 0.02,
            beta_debt: 0.5,
            compute_penalty: [2.7, 1.6, 0.7, 0.9, 0.0],
            gain_means: [0.028, 0.019, 0.011, 0.014, 0.0],
            gain_noise: 0.005,
            quality_decay: 0.008,
            quality_init: [0.5, 0.8],
            deadline_range_ms: [6.0, 12.0],
            feedback_mix: 0.5,
            ewma_alpha: 0.2,
            feedback_noise: 0.05,
            tardiness_penalty: 0.5,
            arrival_prob: 0.3,
            mean_job_ms: 1.0,
            channel_mean: 0.8,
            channel_persistence: 0.9,
            channel_noise: 0.05,
            episode_frames: 200,
            frame_ms: 10.0,
            latency: LatencyConfig::default(),
            radio: RadioConfig::default(),
        }
    }
}

fn unit(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::config(format!("env.{name} must lie in [0, 1], got {v}")))
    }
}

fn nonneg(name: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(format!("env.{name} must be finite and >= 0, got {v}")))
    }
}

impl EnvConfig {
    pub fn with_ues(n_ues: usize) -> Self {
        EnvConfig {
            n_ues,
            ..EnvConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.allow_any_ue_count && !matches!(self.n_ues, 8 | 16) {
            return Err(Error::config(format!(
                "env.n_ues = {} outside the supported topology {{8, 16}} (set allow_any_ue_count to override)",
                self.n_ues
            )));
        }
        if self.n_ues == 0 {
            return Err(Error::config("env.n_ues must be >= 1"));
        }
        if let Some(w) = &self.weights {
            if w.len() != self.n_ues {
                return Err(Error::config(format!(
                    "env.weights has {} entries for {} UEs",
                    w.len(),
                    self.n_ues
                )));
            }
            if w.iter().any(|x| !(*x >= 0.0)) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(Error::config("env.weights must be nonnegative and sum to 1"));
            }
        }
        nonneg("beta_compute", self.beta_compute)?;
        nonneg("beta_debt", self.beta_debt)?;
        for p in Primitive::ALL {
            nonneg("compute_penalty", self.compute_penalty[p.index()])?;
            nonneg("gain_means", self.gain_means[p.index()])?;
        }
        nonneg("gain_noise", self.gain_noise)?;
        nonneg("quality_decay", self.quality_decay)?;
        unit("quality_init[0]", self.quality_init[0])?;
        unit("quality_init[1]", self.quality_init[1])?;
        if self.quality_init[0] > self.quality_init[1] {
            return Err(Error::config("env.quality_init must be an ordered range"));
        }
        let [dlo, dhi] = self.deadline_range_ms;
        if !(dlo > 0.0 && dlo <= dhi && dhi.is_finite()) {
            return Err(Error::config(format!(
                "env.deadline_range_ms must be an ordered positive range, got [{dlo}, {dhi}]"
            )));
        }
        unit("feedback_mix", self.feedback_mix)?;
        if !(self.ewma_alpha > 0.0 && self.ewma_alpha <= 1.0) {
            return Err(Error::config(format!(
                "env.ewma_alpha must lie in (0, 1], got {}",
                self.ewma_alpha
            )));
        }
        nonneg("feedback_noise", self.feedback_noise)?;
        nonneg("tardiness_penalty", self.tardiness_penalty)?;
        unit("arrival_prob", self.arrival_prob)?;
        if !(self.mean_job_ms > 0.0 && self.mean_job_ms.is_finite()) {
            return Err(Error::config("env.mean_job_ms must be > 0"));
        }
        unit("channel_mean", self.channel_mean)?;
        unit("channel_persistence", self.channel_persistence)?;
        nonneg("channel_noise", self.channel_noise)?;
        if self.episode_frames == 0 {
            return Err(Error::config("env.episode_frames must be >= 1"));
        }
        nonneg("frame_ms", self.frame_ms)?;
        self.latency.validate()?;
        self.radio.validate()?;
        Ok(())
    }

    /// Resolved service weights.
    pub fn ue_weights(&self) -> Vec<f64> {
        match &self.weights {
            Some(w) => w.clone(),
            None => vec![1.0 / self.n_ues as f64; self.n_ues],
        }
    }

    pub fn observation_len(&self) -> usize {
        6 * self.n_ues + 1
    }

    /// Turns every noise source off; used by exact-arithmetic tests.
    pub fn noiseless(mut self) -> Self {
        self.gain_noise = 0.0;
        self.feedback_noise = 0.0;
        self.channel_noise = 0.0;
        self.latency.jitter_sigma = 0.0;
        self.radio.ctrl_std_ms = 0.0;
        self
    }
}
