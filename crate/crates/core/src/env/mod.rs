//! The simulated cell: a gNB whose near-RT RIC schedules semantic-model
//! updates for `N` UEs, one 10 ms frame per step.
//!
//! At the start of each frame the environment samples the radio grant (and
//! thus the processing window) and a jitter factor per UE. Together with the
//! UE's backlog and channel these fix the latency every primitive would take
//! for every UE this frame; [`Environment::feasibility_context`] exposes that
//! table to the shield.

mod config;
mod dynamics;

pub use config::EnvConfig;
pub use dynamics::{
    compute_costs, compute_reward, ewma_update, feedback_oracle, fuse_utility, on_time_factor,
    queue_update, semantic_gain, CostVector,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};

use crate::action::{Action, Primitive};
use crate::error::{Error, Result};
use crate::latency::{slack_and_debt, FrameGrant, LatencyComponents};
use crate::shield::{FeasibilityContext, PredictorMode, EPS};

#[derive(Debug, Clone, PartialEq)]
pub struct UeState {
    pub quality: f64,
    pub utility_ema: f64,
    pub slack_ms: f64,
    pub debt: f64,
    pub queue_ms: f64,
    pub channel: f64,
    pub deadline_ms: f64,
}

/// Flat, normalised state vector of length `6N + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation(pub Vec<f64>);

impl Observation {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Per-frame diagnostics returned alongside the reward.
#[derive(Debug, Clone, PartialEq)]
pub struct StepInfo {
    pub frame: usize,
    pub t_avail_ms: f64,
    /// Realised latency of each scheduled UE; `None` for idle UEs.
    pub latencies: Vec<Option<LatencyComponents>>,
    /// Whether each scheduled UE met its deadline.
    pub deadline_hits: Vec<Option<bool>>,
    /// Feedback plus dissemination time summed over scheduled UEs.
    pub air_overhead_ms: f64,
    /// Weighted utility after the transition.
    pub utility: f64,
}

impl StepInfo {
    pub fn scheduled(&self) -> usize {
        self.deadline_hits.iter().flatten().count()
    }

    pub fn hits(&self) -> usize {
        self.deadline_hits.iter().flatten().filter(|&&h| h).count()
    }
}

#[derive(Debug, Clone)]
pub struct Step {
    pub observation: Observation,
    pub reward: f64,
    pub costs: CostVector,
    pub done: bool,
    pub info: StepInfo,
}

#[derive(Debug, Clone)]
pub struct Environment {
    config: EnvConfig,
    weights: Vec<f64>,
    t_avail_max: f64,
    rng: ChaCha8Rng,
    ues: Vec<UeState>,
    grant: Option<FrameGrant>,
    jitter: Vec<f64>,
    frame: usize,
    done: bool,
}

impl Environment {
    pub fn new(config: EnvConfig) -> Result<Self> {
        config.validate()?;
        let weights = config.ue_weights();
        let t_avail_max = config.radio.max_window_ms();
        Ok(Environment {
            weights,
            t_avail_max,
            rng: ChaCha8Rng::seed_from_u64(0),
            ues: Vec::new(),
            grant: None,
            jitter: Vec::new(),
            frame: 0,
            done: true,
            config,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn n_ues(&self) -> usize {
        self.config.n_ues
    }

    pub fn ues(&self) -> &[UeState] {
        &self.ues
    }

    pub fn frame(&self) -> usize {
        self.frame
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn t_avail_ms(&self) -> f64 {
        self.grant.map_or(0.0, |g| g.t_avail_ms)
    }

    pub fn grant(&self) -> Option<&FrameGrant> {
        self.grant.as_ref()
    }

    /// Starts a new episode; identical seeds give bit-identical episodes.
    pub fn reset(&mut self, seed: u64) -> Observation {
        let cfg = &self.config;
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        let [dlo, dhi] = cfg.deadline_range_ms;
        let [qlo, qhi] = cfg.quality_init;
        let stationary_sd = cfg.channel_noise / (1.0 - cfg.channel_persistence.powi(2)).sqrt().max(1e-6);
        let channel0 = Normal::new(cfg.channel_mean, stationary_sd).expect("validated");
        self.ues = (0..cfg.n_ues)
            .map(|_| {
                let deadline_ms = uniform(&mut self.rng, dlo, dhi);
                let quality = uniform(&mut self.rng, qlo, qhi);
                UeState {
                    quality,
                    utility_ema: quality,
                    slack_ms: deadline_ms,
                    debt: 0.0,
                    queue_ms: 0.0,
                    channel: channel0.sample(&mut self.rng).clamp(0.0, 1.0),
                    deadline_ms,
                }
            })
            .collect();
        self.frame = 0;
        self.done = false;
        self.begin_frame();
        self.observation()
    }

    fn begin_frame(&mut self) {
        self.grant = Some(self.config.radio.sample(&mut self.rng));
        let latency = &self.config.latency;
        self.jitter = (0..self.config.n_ues)
            .map(|_| latency.draw_jitter(&mut self.rng))
            .collect();
    }

    /// Latency of `primitive` for UE `ue` in the current frame.
    pub fn latency(&self, ue: usize, primitive: Primitive, mode: PredictorMode) -> LatencyComponents {
        let s = &self.ues[ue];
        let jitter = match mode {
            PredictorMode::Oracle => self.jitter[ue],
            PredictorMode::Nominal => 1.0,
        };
        self.config
            .latency
            .perturbed_with_jitter(primitive, s.queue_ms, s.channel, jitter)
    }

    pub fn feasibility_context(&self, mode: PredictorMode) -> FeasibilityContext {
        FeasibilityContext {
            t_avail_ms: self.t_avail_ms(),
            latencies: (0..self.n_ues())
                .map(|i| Primitive::ALL.map(|p| self.latency(i, p, mode)))
                .collect(),
            deadlines_ms: self.ues.iter().map(|u| u.deadline_ms).collect(),
            debts: self.ues.iter().map(|u| u.debt).collect(),
            queues_ms: self.ues.iter().map(|u| u.queue_ms).collect(),
        }
    }

    pub fn observation(&self) -> Observation {
        let q_max = self.config.latency.queue_max_ms;
        let mut v = Vec::with_capacity(self.config.observation_len());
        for u in &self.ues {
            v.extend_from_slice(&[
                u.quality,
                u.utility_ema,
                u.slack_ms / u.deadline_ms,
                u.debt.min(1.0),
                u.queue_ms / q_max,
                u.channel,
            ]);
        }
        v.push(self.t_avail_ms() / self.t_avail_max);
        Observation(v)
    }

    /// Executes one frame. Callers are expected to shield `action` first;
    /// unshielded RIC work that overflows the window waits one frame period.
    pub fn step(&mut self, action: &Action) -> Result<Step> {
        if self.done {
            return Err(Error::EpisodeFinished);
        }
        let n = self.n_ues();
        if action.n_ues() != n {
            return Err(Error::Dimension {
                context: "action mask",
                expected: n,
                found: action.n_ues(),
            });
        }
        let u = action.primitive();
        let t_avail = self.t_avail_ms();

        let mut realised = vec![LatencyComponents::default(); n];
        let mut service = vec![0.0; n];
        let mut latencies = vec![None; n];
        let mut deadline_hits = vec![None; n];
        let mut air = 0.0;
        let mut ric_used = 0.0;
        for i in action.scheduled() {
            let mut lat = self.latency(i, u, PredictorMode::Oracle);
            service[i] = lat.ric_ms;
            ric_used += lat.ric_ms;
            if ric_used > t_avail + EPS {
                lat = lat.with_extra_ric(self.config.frame_ms);
            }
            air += lat.air_ms();
            realised[i] = lat;
            latencies[i] = Some(lat);
            deadline_hits[i] = Some(lat.total_ms <= self.ues[i].deadline_ms + EPS);
        }
        let deadlines: Vec<f64> = self.ues.iter().map(|s| s.deadline_ms).collect();
        let costs = compute_costs(action, &realised, &deadlines)?;

        let cfg = &self.config;
        let arrivals = Exp::new(1.0 / cfg.mean_job_ms).expect("validated");
        let channel_noise = Normal::new(0.0, cfg.channel_noise).expect("validated");
        let q_max = cfg.latency.queue_max_ms;
        for i in 0..n {
            let scheduled = action.mask()[i];
            let s = &mut self.ues[i];
            if scheduled {
                let sd = slack_and_debt(realised[i].total_ms, s.deadline_ms)?;
                s.slack_ms = sd.slack_ms;
                s.debt = sd.debt;
            }
            let gain = semantic_gain(cfg, u, scheduled, on_time_factor(s.debt), s.channel, &mut self.rng);
            s.quality = (s.quality + gain).clamp(0.0, 1.0);

            let feedback = feedback_oracle(cfg, s.quality, s.debt, &mut self.rng);
            let fused = fuse_utility(s.quality, feedback, cfg.feedback_mix);
            s.utility_ema = ewma_update(s.utility_ema, fused, cfg.ewma_alpha)?.clamp(0.0, 1.0);

            let arrival = if self.rng.random_bool(cfg.arrival_prob) {
                arrivals.sample(&mut self.rng)
            } else {
                0.0
            };
            s.queue_ms = queue_update(s.queue_ms, arrival, scheduled, service[i], q_max);

            let drift = cfg.channel_persistence * (s.channel - cfg.channel_mean);
            s.channel = (cfg.channel_mean + drift + channel_noise.sample(&mut self.rng)).clamp(0.0, 1.0);
        }

        let emas: Vec<f64> = self.ues.iter().map(|s| s.utility_ema).collect();
        let debts: Vec<f64> = self.ues.iter().map(|s| s.debt).collect();
        let reward = compute_reward(cfg, &self.weights, &emas, u, &debts);
        let utility = self.weights.iter().zip(&emas).map(|(w, e)| w * e).sum();

        let info = StepInfo {
            frame: self.frame,
            t_avail_ms: t_avail,
            latencies,
            deadline_hits,
            air_overhead_ms: air,
            utility,
        };
        self.frame += 1;
        self.done = self.frame >= self.config.episode_frames;
        self.begin_frame();
        Ok(Step {
            observation: self.observation(),
            reward,
            costs,
            done: self.done,
            info,
        })
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}
