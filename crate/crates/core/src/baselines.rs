//! Comparison schedulers: unconstrained PPO, a template-action DQN and a
//! random feasible scheduler.

use std::collections::VecDeque;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::action::{Action, Primitive};
use crate::agent::{self, Ablations, PpoVariant, TrainConfig, TrainOutput};
use crate::env::{EnvConfig, Environment, Observation};
use crate::error::{Error, Result};
use crate::metrics::{MetricsRow, Phase, ShieldRow};
use crate::nn::{Adam, AdamConfig, Mlp};
use crate::rollout::{episode_seeds, FrameStats, Runner, Scheduler};
use crate::shield::{self, FeasibilityContext, PredictorMode, ShieldConfig};

/// The constrained trainer with multipliers pinned at zero and cost heads untrained.
pub fn unconstrained_ppo_train(
    env_config: &EnvConfig,
    cfg: &TrainConfig,
    shield: &ShieldConfig,
    seed: u64,
    label: &str,
) -> Result<TrainOutput> {
    agent::train(
        env_config,
        cfg,
        shield,
        Ablations::default(),
        PpoVariant::Unconstrained,
        seed,
        label,
    )
}

/// Uniform primitive, fair-coin mask; the runner's shield does the projection.
#[derive(Debug, Clone)]
pub struct RandomScheduler {
    rng: ChaCha8Rng,
}

impl RandomScheduler {
    pub fn new(seed: u64) -> Self {
        RandomScheduler {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Pre-projection draw.
    pub fn draw<R: Rng + ?Sized>(n_ues: usize, rng: &mut R) -> Action {
        let primitive = Primitive::ALL[rng.random_range(0..Primitive::COUNT)];
        Action::new(primitive, (0..n_ues).map(|_| rng.random_bool(0.5)).collect())
    }
}

impl Scheduler for RandomScheduler {
    fn propose(&mut self, env: &Environment, _: &Observation) -> Result<Action> {
        Ok(Self::draw(env.n_ues(), &mut self.rng))
    }
}

/// A random draw projected onto the feasible set of `ctx`.
pub fn random_feasible_act<R: Rng + ?Sized>(ctx: &FeasibilityContext, shield: &ShieldConfig, rng: &mut R) -> Result<Action> {
    let raw = RandomScheduler::draw(ctx.n_ues(), rng);
    Ok(shield::project(ctx, &raw, shield)?.0)
}

/// A primitive applied to the `k` most urgent UEs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Template {
    pub primitive: Primitive,
    pub k: usize,
}

/// The 25 templates: every primitive times `k` in `{0, 1, ceil(N/4), ceil(N/2), N}`.
pub fn templates(n_ues: usize) -> Vec<Template> {
    let ks = [0, 1, n_ues.div_ceil(4), n_ues.div_ceil(2), n_ues];
    Primitive::ALL
        .into_iter()
        .flat_map(|primitive| ks.map(|k| Template { primitive, k }))
        .collect()
}

impl Template {
    pub fn realize(&self, ctx: &FeasibilityContext) -> Action {
        let mut mask = vec![false; ctx.n_ues()];
        for i in ctx.by_urgency().into_iter().take(self.k) {
            mask[i] = true;
        }
        Action::new(self.primitive, mask)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DqnConfig {
    pub replay_capacity: usize,
    pub batch: usize,
    /// Environment steps between target-network copies.
    pub target_sync: usize,
    pub eps_start: f64,
    pub eps_end: f64,
    /// Fraction of training over which epsilon decays linearly.
    pub eps_decay_fraction: f64,
    pub gamma: f64,
    pub optimizer: AdamConfig,
    pub hidden: Vec<usize>,
    /// Environment steps per gradient step.
    pub train_every: usize,
    pub learning_starts: usize,
    pub huber_delta: f64,
    pub max_grad_norm: f64,
    /// Minimum RIC usage as a fraction of the window.
    pub ric_target_frac: f64,
    pub air_target_ms: f64,
    pub penalty: f64,
    /// Project template actions through the shield before execution.
    pub shielded: bool,
}

impl Default for DqnConfig {
    fn default() -> Self {
        DqnConfig {
            replay_capacity: 50_000,
            batch: 256,
            target_sync: 200,
            eps_start: 1.0,
            eps_end: 0.05,
            eps_decay_fraction: 0.5,
            gamma: 0.99,
            optimizer: AdamConfig::default(),
            hidden: vec![256, 128],
            train_every: 4,
            learning_starts: 256,
            huber_delta: 1.0,
            max_grad_norm: 10.0,
            ric_target_frac: 0.3,
            air_target_ms: 0.5,
            penalty: 0.2,
            shielded: true,
        }
    }
}

impl DqnConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("replay_capacity", self.replay_capacity),
            ("batch", self.batch),
            ("target_sync", self.target_sync),
            ("train_every", self.train_every),
        ] {
            if v == 0 {
                return Err(Error::config(format!("dqn.{name} must be >= 1")));
            }
        }
        let unit = [self.eps_start, self.eps_end, self.eps_decay_fraction, self.ric_target_frac];
        if unit.iter().any(|x| !(0.0..=1.0).contains(x)) {
            return Err(Error::config("dqn epsilon schedule and ric_target_frac must lie in [0, 1]"));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::config("dqn.gamma must lie in (0, 1)"));
        }
        if !(self.optimizer.lr > 0.0 && self.huber_delta > 0.0 && self.max_grad_norm > 0.0) {
            return Err(Error::config("dqn rates must be positive"));
        }
        if self.air_target_ms < 0.0 || self.penalty < 0.0 {
            return Err(Error::config("dqn service targets and penalty must be >= 0"));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::config("dqn.hidden must list positive layer widths"));
        }
        Ok(())
    }

    /// Exploration rate after `step` of `total` environment steps.
    pub fn epsilon(&self, step: usize, total: usize) -> f64 {
        let horizon = (self.eps_decay_fraction * total as f64).max(1.0);
        let frac = step as f64 / horizon;
        if frac >= 1.0 {
            return self.eps_end;
        }
        self.eps_start + (self.eps_end - self.eps_start) * frac
    }

    /// Reward deduction for a frame that under-uses its budgets. Frames
    /// without a processing window are never penalised.
    pub fn underutilisation_penalty(&self, t_avail_ms: f64, ric_ms: f64, air_ms: f64) -> f64 {
        if t_avail_ms <= 0.0 {
            return 0.0;
        }
        let mut p = 0.0;
        if ric_ms < self.ric_target_frac * t_avail_ms {
            p += self.penalty;
        }
        if air_ms < self.air_target_ms {
            p += self.penalty;
        }
        p
    }
}

/// Q-network over templates.
#[derive(Debug, Clone)]
pub struct DqnAgent {
    pub q: Mlp,
    templates: Vec<Template>,
    predictor: PredictorMode,
}

impl DqnAgent {
    pub fn new<R: Rng + ?Sized>(env: &EnvConfig, cfg: &DqnConfig, predictor: PredictorMode, rng: &mut R) -> Self {
        let templates = templates(env.n_ues);
        let mut w = vec![env.observation_len()];
        w.extend_from_slice(&cfg.hidden);
        w.push(templates.len());
        DqnAgent {
            q: Mlp::new(&w, rng),
            templates,
            predictor,
        }
    }

    pub fn from_network(q: Mlp, n_ues: usize, predictor: PredictorMode) -> Self {
        DqnAgent {
            q,
            templates: templates(n_ues),
            predictor,
        }
    }

    pub fn templates(&self) -> &[Template] {
        &self.templates
    }

    pub fn best_template(&self, obs: &[f64]) -> Result<usize> {
        let q = self.q.predict(obs)?;
        Ok(argmax(&q))
    }

    pub fn realize(&self, template: usize, env: &Environment) -> Action {
        self.templates[template].realize(&env.feasibility_context(self.predictor))
    }
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in xs.iter().enumerate() {
        if *x > xs[best] {
            best = i;
        }
    }
    best
}

impl Scheduler for DqnAgent {
    fn propose(&mut self, env: &Environment, obs: &Observation) -> Result<Action> {
        let t = self.best_template(obs.as_slice())?;
        Ok(self.realize(t, env))
    }
}

#[derive(Debug, Clone)]
struct Experience {
    obs: Vec<f64>,
    template: usize,
    reward: f64,
    next_obs: Vec<f64>,
    done: bool,
}

#[derive(Debug, Clone)]
pub struct DqnOutput {
    pub agent: DqnAgent,
    pub rows: Vec<MetricsRow>,
    pub shield_rows: Vec<ShieldRow>,
    pub shield: Option<ShieldConfig>,
}

/// Standard DQN over templates: replay, target network, linear epsilon decay
/// and Huber loss. Rows are logged every `frames_per_row` frames.
pub fn dqn_train(
    env_config: &EnvConfig,
    cfg: &DqnConfig,
    shield: &ShieldConfig,
    frames: usize,
    frames_per_row: usize,
    seed: u64,
    label: &str,
) -> Result<DqnOutput> {
    env_config.validate()?;
    cfg.validate()?;
    shield.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shield_cfg = cfg.shielded.then(|| shield.clone());
    let predictor = shield_cfg.as_ref().map_or(PredictorMode::default(), |s| s.predictor);
    let mut agent = DqnAgent::new(env_config, cfg, predictor, &mut rng);
    let mut target = agent.q.clone();
    let mut opt = Adam::new(&agent.q, cfg.optimizer);
    let mut runner = Runner::new(env_config.clone(), shield_cfg.clone(), episode_seeds(seed, Phase::Train))?;
    let mut replay: VecDeque<Experience> = VecDeque::with_capacity(cfg.replay_capacity.min(frames));
    let n_templates = agent.templates.len();

    let mut rows = Vec::new();
    let mut shield_rows = Vec::new();
    let mut stats = FrameStats::default();
    for step in 0..frames {
        let obs = runner.observation().0.clone();
        let template = if rng.random::<f64>() < cfg.epsilon(step, frames) {
            rng.random_range(0..n_templates)
        } else {
            agent.best_template(&obs)?
        };
        let t_avail = runner.env().t_avail_ms();
        let proposed = agent.realize(template, runner.env());
        let ex = runner.execute(&proposed)?;
        stats.record(&ex);
        let penalty = cfg.underutilisation_penalty(t_avail, ex.step.costs.ric_time_ms, ex.step.info.air_overhead_ms);
        if replay.len() == cfg.replay_capacity {
            replay.pop_front();
        }
        replay.push_back(Experience {
            obs,
            template,
            reward: ex.step.reward - penalty,
            next_obs: ex.step.observation.0.clone(),
            done: ex.step.done,
        });
        if ex.step.done {
            runner.reset();
        }

        if replay.len() >= cfg.learning_starts.max(1) && (step + 1) % cfg.train_every == 0 {
            let idx: Vec<usize> = (0..cfg.batch).map(|_| rng.random_range(0..replay.len())).collect();
            let batch: Vec<&Experience> = idx.iter().map(|&i| &replay[i]).collect();
            let cols = batch[0].obs.len();
            let x = Array2::from_shape_fn((batch.len(), cols), |(r, c)| batch[r].obs[c]);
            let x_next = Array2::from_shape_fn((batch.len(), cols), |(r, c)| batch[r].next_obs[c]);
            let (q_next, _) = target.forward(x_next.view())?;
            let (q, cache) = agent.q.forward(x.view())?;
            let mut grad = Array2::zeros(q.raw_dim());
            let inv = 1.0 / batch.len() as f64;
            for (r, e) in batch.iter().enumerate() {
                let next_best = q_next.row(r).iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let y = e.reward + if e.done { 0.0 } else { cfg.gamma * next_best };
                let err = q[[r, e.template]] - y;
                // Huber derivative
                grad[[r, e.template]] = err.clamp(-cfg.huber_delta, cfg.huber_delta) * inv;
            }
            let mut g = agent.q.backward(&cache, grad.view())?;
            g.clip_norm(cfg.max_grad_norm);
            opt.step(&mut agent.q, &g)?;
        }
        if (step + 1) % cfg.target_sync == 0 {
            target = agent.q.clone();
        }
        if (step + 1) % frames_per_row.max(1) == 0 || step + 1 == frames {
            let index = rows.len();
            rows.push(stats.to_row(Phase::Train, label, seed, index, [0.0; 2]));
            if shield_cfg.is_some() {
                shield_rows.push(stats.to_shield_row(Phase::Train, index));
            }
            stats = FrameStats::default();
        }
    }
    Ok(DqnOutput {
        agent,
        rows,
        shield_rows,
        shield: shield_cfg,
    })
}
