//! Slot timing, processing windows and per-primitive latency decomposition.
//!
//! Every latency is in milliseconds. A primitive's end-to-end latency for one
//! UE is the sum of four parts: feedback acquisition, RIC processing, model
//! dissemination and UE-side reconfiguration. Only the RIC part and the total
//! are tabulated; the residual is split across the other three parts in fixed
//! proportions.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::action::Primitive;
use crate::error::{Error, Result};

/// Nominal RIC processing time per primitive, indexed by [`Primitive::index`].
pub const RIC_MS: [f64; 5] = [5.0, 2.8, 1.1, 1.5, 0.0];

/// Nominal end-to-end latency per primitive, indexed by [`Primitive::index`].
pub const END_TO_END_MS: [f64; 5] = [8.4, 5.0, 2.4, 3.1, 0.1];

pub const SYMBOLS_PER_SLOT: f64 = 14.0;

/// NR numerology index μ; the slot lasts `1 ms / 2^μ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct Numerology(u8);

impl Numerology {
    pub fn new(mu: u8) -> Result<Self> {
        if mu <= 2 {
            Ok(Numerology(mu))
        } else {
            Err(Error::config(format!("numerology {mu} outside {{0, 1, 2}}")))
        }
    }

    pub fn get(self) -> u8 {
        self.0
    }
}

impl TryFrom<u8> for Numerology {
    type Error = Error;

    fn try_from(mu: u8) -> Result<Self> {
        Numerology::new(mu)
    }
}

impl From<Numerology> for u8 {
    fn from(mu: Numerology) -> u8 {
        mu.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlotTiming {
    pub slot_ms: f64,
    pub symbol_ms: f64,
}

pub fn slot_timing(mu: Numerology) -> SlotTiming {
    let slot_ms = 1.0 / f64::from(1u32 << mu.get());
    SlotTiming {
        slot_ms,
        symbol_ms: slot_ms / SYMBOLS_PER_SLOT,
    }
}

/// Mini-slot grants provisioned to the semantic slice in one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrantAllocation {
    grants: u32,
    symbols: u32,
    ctrl_ms: f64,
}

impl GrantAllocation {
    pub fn new(grants: u32, symbols: u32, ctrl_ms: f64) -> Result<Self> {
        if !matches!(symbols, 2 | 4 | 7) {
            return Err(Error::config(format!(
                "mini-slot length {symbols} outside {{2, 4, 7}} symbols"
            )));
        }
        if !(ctrl_ms >= 0.0 && ctrl_ms.is_finite()) {
            return Err(Error::config(format!(
                "control overhead {ctrl_ms} ms must be finite and >= 0"
            )));
        }
        Ok(GrantAllocation {
            grants,
            symbols,
            ctrl_ms,
        })
    }

    pub fn grants(&self) -> u32 {
        self.grants
    }

    pub fn symbols(&self) -> u32 {
        self.symbols
    }

    pub fn ctrl_ms(&self) -> f64 {
        self.ctrl_ms
    }
}

/// Processing window left after control overhead, clamped at zero.
pub fn available_window(grant: &GrantAllocation, timing: &SlotTiming) -> f64 {
    let raw = f64::from(grant.grants) * f64::from(grant.symbols) * timing.symbol_ms;
    (raw - grant.ctrl_ms).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LatencyComponents {
    pub fb_ms: f64,
    pub ric_ms: f64,
    pub tx_ms: f64,
    pub reconf_ms: f64,
    pub total_ms: f64,
}

impl LatencyComponents {
    pub fn new(fb_ms: f64, ric_ms: f64, tx_ms: f64, reconf_ms: f64) -> Self {
        LatencyComponents {
            fb_ms,
            ric_ms,
            tx_ms,
            reconf_ms,
            total_ms: fb_ms + ric_ms + tx_ms + reconf_ms,
        }
    }

    /// Air-interface share: feedback uplink plus dissemination.
    pub fn air_ms(&self) -> f64 {
        self.fb_ms + self.tx_ms
    }

    /// Adds queueing delay at the RIC (work deferred past the window).
    pub fn with_extra_ric(self, extra_ms: f64) -> Self {
        LatencyComponents::new(self.fb_ms, self.ric_ms + extra_ms, self.tx_ms, self.reconf_ms)
    }
}

/// Coefficients of the stochastic latency model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LatencyConfig {
    /// Proportions of the non-RIC residual assigned to feedback, dissemination and reconfiguration.
    pub residual_split: [f64; 3],
    /// RIC slowdown at a full queue.
    pub congestion_coeff: f64,
    /// Dissemination slowdown at zero channel quality.
    pub fading_coeff: f64,
    /// Standard deviation of the multiplicative jitter factor.
    pub jitter_sigma: f64,
    pub queue_max_ms: f64,
}

impl Default for LatencyConfig {
    fn default() -> Self {
        LatencyConfig {
            residual_split: [0.30, 0.45, 0.25],
            congestion_coeff: 0.5,
            fading_coeff: 0.5,
            jitter_sigma: 0.05,
            queue_max_ms: 20.0,
        }
    }
}

impl LatencyConfig {
    pub fn validate(&self) -> Result<()> {
        let sum: f64 = self.residual_split.iter().sum();
        if self.residual_split.iter().any(|s| !(*s >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!(
                "latency.residual_split must be nonnegative and sum to 1, got {:?}",
                self.residual_split
            )));
        }
        for (name, v) in [
            ("latency.congestion_coeff", self.congestion_coeff),
            ("latency.fading_coeff", self.fading_coeff),
            ("latency.jitter_sigma", self.jitter_sigma),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if !(self.queue_max_ms > 0.0 && self.queue_max_ms.is_finite()) {
            return Err(Error::config(format!(
                "latency.queue_max_ms must be > 0, got {}",
                self.queue_max_ms
            )));
        }
        Ok(())
    }

    pub fn nominal(&self, primitive: Primitive) -> LatencyComponents {
        let i = primitive.index();
        let ric = RIC_MS[i];
        let residual = END_TO_END_MS[i] - ric;
        let [fb, tx, reconf] = self.residual_split.map(|s| s * residual);
        LatencyComponents::new(fb, ric, tx, reconf)
    }

    /// Draws the multiplicative jitter factor `max(N(1, sigma), 0)`.
    pub fn draw_jitter<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let normal = Normal::new(1.0, self.jitter_sigma).expect("sigma validated");
        normal.sample(rng).max(0.0)
    }

    /// Latency under backlog congestion, channel fading and a given jitter factor.
    pub fn perturbed_with_jitter(
        &self,
        primitive: Primitive,
        queue_ms: f64,
        channel_quality: f64,
        jitter: f64,
    ) -> LatencyComponents {
        let nominal = self.nominal(primitive);
        let load = (queue_ms / self.queue_max_ms).clamp(0.0, 1.0);
        let congestion = 1.0 + self.congestion_coeff * load;
        // NoOp disseminates no parameters, so fading does not apply to it.
        let fading = if primitive == Primitive::NoOp {
            1.0
        } else {
            1.0 + self.fading_coeff * (1.0 - channel_quality.clamp(0.0, 1.0))
        };
        LatencyComponents::new(
            nominal.fb_ms * jitter,
            nominal.ric_ms * congestion * jitter,
            nominal.tx_ms * fading,
            nominal.reconf_ms * jitter,
        )
    }

    pub fn perturbed<R: Rng + ?Sized>(
        &self,
        primitive: Primitive,
        queue_ms: f64,
        channel_quality: f64,
        rng: &mut R,
    ) -> LatencyComponents {
        let jitter = self.draw_jitter(rng);
        self.perturbed_with_jitter(primitive, queue_ms, channel_quality, jitter)
    }
}

/// Nominal latency with the default residual split.
pub fn nominal_latency(primitive: Primitive) -> LatencyComponents {
    LatencyConfig::default().nominal(primitive)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlackDebt {
    pub slack_ms: f64,
    pub debt: f64,
}

pub fn slack_and_debt(total_ms: f64, deadline_ms: f64) -> Result<SlackDebt> {
    if !(deadline_ms > 0.0) {
        return Err(Error::config(format!("deadline must be > 0 ms, got {deadline_ms}")));
    }
    let slack_ms = deadline_ms - total_ms;
    Ok(SlackDebt {
        slack_ms,
        debt: (-slack_ms).max(0.0) / deadline_ms,
    })
}

/// Distribution of per-frame radio resources for the semantic slice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RadioConfig {
    pub numerologies: Vec<u8>,
    pub symbols: Vec<u32>,
    pub grants_min: u32,
    pub grants_max: u32,
    pub ctrl_mean_ms: f64,
    pub ctrl_std_ms: f64,
}

impl Default for RadioConfig {
    fn default() -> Self {
        RadioConfig {
            numerologies: vec![0, 1, 2],
            symbols: vec![2, 4, 7],
            grants_min: 8,
            grants_max: 20,
            ctrl_mean_ms: 0.1,
            ctrl_std_ms: 0.02,
        }
    }
}

/// One frame's sampled radio resources.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameGrant {
    pub numerology: Numerology,
    pub timing: SlotTiming,
    pub allocation: GrantAllocation,
    pub t_avail_ms: f64,
}

impl RadioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.numerologies.is_empty() {
            return Err(Error::config("radio.numerologies must not be empty"));
        }
        for &mu in &self.numerologies {
            Numerology::new(mu).map_err(|_| {
                Error::config(format!("radio.numerologies: {mu} outside {{0, 1, 2}}"))
            })?;
        }
        if self.symbols.is_empty() || self.symbols.iter().any(|s| !matches!(s, 2 | 4 | 7)) {
            return Err(Error::config(format!(
                "radio.symbols must be a nonempty subset of {{2, 4, 7}}, got {:?}",
                self.symbols
            )));
        }
        if self.grants_min > self.grants_max {
            return Err(Error::config(format!(
                "radio.grants_min {} exceeds grants_max {}",
                self.grants_min, self.grants_max
            )));
        }
        if !(self.ctrl_mean_ms >= 0.0 && self.ctrl_std_ms >= 0.0)
            || !self.ctrl_mean_ms.is_finite()
            || !self.ctrl_std_ms.is_finite()
        {
            return Err(Error::config("radio.ctrl_mean_ms and ctrl_std_ms must be finite and >= 0"));
        }
        Ok(())
    }

    /// Largest window any frame can offer; used to normalise observations.
    pub fn max_window_ms(&self) -> f64 {
        let mu = self.numerologies.iter().copied().min().unwrap_or(0);
        let sym = self.symbols.iter().copied().max().unwrap_or(7);
        let timing = slot_timing(Numerology(mu.min(2)));
        f64::from(self.grants_max) * f64::from(sym) * timing.symbol_ms
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> FrameGrant {
        let mu = self.numerologies[rng.random_range(0..self.numerologies.len())];
        let numerology = Numerology(mu);
        let symbols = self.symbols[rng.random_range(0..self.symbols.len())];
        let grants = rng.random_range(self.grants_min..=self.grants_max);
        let ctrl = Normal::new(self.ctrl_mean_ms, self.ctrl_std_ms)
            .expect("validated")
            .sample(rng)
            .max(0.0);
        let timing = slot_timing(numerology);
        let allocation = GrantAllocation {
            grants,
            symbols,
            ctrl_ms: ctrl,
        };
        FrameGrant {
            numerology,
            timing,
            allocation,
            t_avail_ms: available_window(&allocation, &timing),
        }
    }
}
