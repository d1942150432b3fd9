//! Shielded interaction loop shared by every agent, plus evaluation.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::action::Action;
use crate::env::{EnvConfig, Environment, Observation, Step};
use crate::error::Result;
use crate::metrics::{MetricsRow, Phase, ShieldRow};
use crate::shield::{self, PredictorMode, ShieldConfig, ShieldReport};

const TRAIN_SALT: u64 = 0x7452_4149_4e00_0001;
const EVAL_SALT: u64 = 0x4556_414c_0000_0002;

/// Stream of per-episode environment seeds for one run. Streams depend only
/// on the run seed and phase, so every agent sees the same episodes.
pub fn episode_seeds(run_seed: u64, phase: Phase) -> ChaCha8Rng {
    let salt = match phase {
        Phase::Train => TRAIN_SALT,
        Phase::Eval => EVAL_SALT,
    };
    ChaCha8Rng::seed_from_u64(run_seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ salt)
}

/// Outcome of one executed frame.
#[derive(Debug, Clone)]
pub struct Executed {
    /// What actually ran: the shield's projection, or the proposal when unshielded.
    pub action: Action,
    pub report: Option<ShieldReport>,
    pub step: Step,
}

/// An environment behind an optional shield, with episode seeding.
#[derive(Debug, Clone)]
pub struct Runner {
    env: Environment,
    shield: Option<ShieldConfig>,
    seeds: ChaCha8Rng,
    obs: Observation,
}

impl Runner {
    /// Builds the environment and starts the first episode.
    pub fn new(env_config: EnvConfig, shield: Option<ShieldConfig>, seeds: ChaCha8Rng) -> Result<Self> {
        if let Some(s) = &shield {
            s.validate()?;
        }
        let env = Environment::new(env_config)?;
        let mut runner = Runner {
            env,
            shield,
            seeds,
            obs: Observation(Vec::new()),
        };
        runner.reset();
        Ok(runner)
    }

    /// Starts the next episode from the seed stream.
    pub fn reset(&mut self) -> &Observation {
        let seed = self.seeds.next_u64();
        self.obs = self.env.reset(seed);
        &self.obs
    }

    pub fn observation(&self) -> &Observation {
        &self.obs
    }

    pub fn env(&self) -> &Environment {
        &self.env
    }

    pub fn shield(&self) -> Option<&ShieldConfig> {
        self.shield.as_ref()
    }

    /// Predictor used to build feasibility contexts.
    pub fn predictor(&self) -> PredictorMode {
        self.shield.as_ref().map_or(PredictorMode::default(), |s| s.predictor)
    }

    /// Shields and executes `proposed`. Does not start a new episode.
    pub fn execute(&mut self, proposed: &Action) -> Result<Executed> {
        let (action, report) = match &self.shield {
            Some(cfg) => {
                let ctx = self.env.feasibility_context(cfg.predictor);
                let (a, r) = shield::project(&ctx, proposed, cfg)?;
                (a, Some(r))
            }
            None => (proposed.clone(), None),
        };
        let step = self.env.step(&action)?;
        self.obs = step.observation.clone();
        Ok(Executed { action, report, step })
    }
}

/// Frame-level sums over a rollout or an episode.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FrameStats {
    pub frames: u64,
    pub reward: f64,
    pub utility: f64,
    pub air_ms: f64,
    pub ric_ms: f64,
    pub overshoot_ms: f64,
    pub scheduled: u64,
    pub hits: u64,
    pub interventions: u64,
    pub dropped_individual: u64,
    pub dropped_budget: u64,
    pub fallbacks: u64,
}

impl FrameStats {
    pub fn record(&mut self, ex: &Executed) {
        let s = &ex.step;
        self.frames += 1;
        self.reward += s.reward;
        self.utility += s.info.utility;
        self.air_ms += s.info.air_overhead_ms;
        self.ric_ms += s.costs.ric_time_ms;
        self.overshoot_ms += s.costs.overshoot_ms;
        self.scheduled += s.info.scheduled() as u64;
        self.hits += s.info.hits() as u64;
        if let Some(r) = &ex.report {
            self.interventions += u64::from(r.intervened());
            self.dropped_individual += r.dropped_individual.len() as u64;
            self.dropped_budget += r.dropped_budget.len() as u64;
            self.fallbacks += r.fallbacks.len() as u64;
        }
    }

    /// Fraction of executed adaptations that met their deadline; 1 if none ran.
    pub fn hit_rate(&self) -> f64 {
        if self.scheduled == 0 {
            1.0
        } else {
            self.hits as f64 / self.scheduled as f64
        }
    }

    pub fn to_row(&self, phase: Phase, agent: &str, seed: u64, index: usize, lambdas: [f64; 2]) -> MetricsRow {
        let per = 1.0 / self.frames.max(1) as f64;
        MetricsRow {
            phase,
            agent: agent.to_string(),
            seed,
            index,
            mean_reward: self.reward * per,
            mean_utility: self.utility * per,
            air_overhead_ms: self.air_ms * per,
            ric_ms: self.ric_ms * per,
            hit_rate: self.hit_rate(),
            lambda1: lambdas[0],
            lambda2: lambdas[1],
            shield_fallback_count: self.fallbacks,
            overshoot_ms: self.overshoot_ms * per,
        }
    }

    pub fn to_shield_row(&self, phase: Phase, index: usize) -> ShieldRow {
        ShieldRow {
            phase,
            index,
            frames: self.frames,
            interventions: self.interventions,
            dropped_individual: self.dropped_individual,
            dropped_budget: self.dropped_budget,
            fallbacks: self.fallbacks,
        }
    }
}

/// Anything that proposes an action each frame.
pub trait Scheduler {
    fn propose(&mut self, env: &Environment, obs: &Observation) -> Result<Action>;
}

/// Evaluation rows: one [`MetricsRow`] and, when shielded, one [`ShieldRow`] per episode.
#[derive(Debug, Clone, Default)]
pub struct Evaluation {
    pub rows: Vec<MetricsRow>,
    pub shield_rows: Vec<ShieldRow>,
}

/// Runs `episodes` full evaluation episodes with the run's evaluation seed stream.
pub fn evaluate<S: Scheduler + ?Sized>(
    scheduler: &mut S,
    env_config: &EnvConfig,
    shield: Option<&ShieldConfig>,
    episodes: usize,
    run_seed: u64,
    agent: &str,
    lambdas: [f64; 2],
) -> Result<Evaluation> {
    let mut runner = Runner::new(env_config.clone(), shield.cloned(), episode_seeds(run_seed, Phase::Eval))?;
    let mut out = Evaluation::default();
    for ep in 0..episodes {
        if ep > 0 {
            runner.reset();
        }
        let mut stats = FrameStats::default();
        loop {
            let proposed = scheduler.propose(runner.env(), runner.observation())?;
            let ex = runner.execute(&proposed)?;
            stats.record(&ex);
            if ex.step.done {
                break;
            }
        }
        out.rows.push(stats.to_row(Phase::Eval, agent, run_seed, ep, lambdas));
        if shield.is_some() {
            out.shield_rows.push(stats.to_shield_row(Phase::Eval, ep));
        }
    }
    Ok(out)
}
