//! Shielded primal-dual PPO.
//!
//! Each update collects a rollout through the shield, estimates reward and
//! cost advantages with GAE, regresses the three critic heads, takes clipped
//! Lagrangian policy steps and finally moves the multipliers by projected,
//! smoothed dual ascent.

mod dual;
mod gae;
mod loss;
mod norm;
mod policy;

pub use dual::{dual_update, DualMode, DualState, DualStep};
pub use gae::{gae, gae_with_dones, Estimates};
pub use loss::{critic_loss, policy_loss, PolicyBatch, PolicyCoefficients, PolicyLoss, MAX_LOG_RATIO};
pub use norm::RunningNorm;
pub use policy::{log_sigmoid, log_softmax, sigmoid, PolicyHeads};

use std::fmt;

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::action::{Action, Primitive};
use crate::env::{CostVector, EnvConfig, Environment, Observation};
use crate::error::{Error, Result};
use crate::metrics::{MetricsRow, Phase, ShieldRow};
use crate::nn::{Adam, AdamConfig, Mlp};
use crate::rollout::{episode_seeds, FrameStats, Runner, Scheduler};
use crate::shield::ShieldConfig;

/// Which action's log-probability enters the importance ratio.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RatioAction {
    /// The shielded action that was executed.
    Executed,
    /// The raw policy sample, before projection.
    #[default]
    Sampled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub gamma: f64,
    pub lambda_gae: f64,
    pub clip_eps: f64,
    pub rollout_len: usize,
    pub minibatch: usize,
    pub updates: usize,
    pub epochs: usize,
    pub entropy_coef: f64,
    pub hidden: Vec<usize>,
    pub optimizer: AdamConfig,
    /// Global gradient-norm cap per network step.
    pub max_grad_norm: f64,
    /// Scale applied to the freshly initialised policy output layer.
    pub policy_init_scale: f64,
    pub dual_step: f64,
    /// Weight of the previous multiplier in the smoothed dual update.
    pub dual_ema: f64,
    pub lambda_init: [f64; 2],
    /// Multipliers used when duals are frozen.
    pub lambda_fixed: [f64; 2],
    /// Per-unit cost penalty folded into the reward when cost critics are removed.
    pub shaping_lambda: [f64; 2],
    /// Overshoot budget.
    pub d2_ms: f64,
    pub ratio_action: RatioAction,
    /// Fit critic heads to running-standardised targets.
    pub value_norm: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            gamma: 0.99,
            lambda_gae: 0.95,
            clip_eps: 0.2,
            rollout_len: 64,
            minibatch: 256,
            updates: 120,
            epochs: 4,
            entropy_coef: 0.01,
            hidden: vec![256, 128],
            optimizer: AdamConfig::default(),
            max_grad_norm: 0.5,
            policy_init_scale: 0.01,
            dual_step: 1e-3,
            dual_ema: 0.9,
            lambda_init: [0.02, 0.02],
            lambda_fixed: [0.5, 0.5],
            shaping_lambda: [0.02, 0.02],
            d2_ms: 0.0,
            ratio_action: RatioAction::Sampled,
            value_norm: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::config(format!("train.gamma must lie in (0, 1), got {}", self.gamma)));
        }
        if !(self.lambda_gae > 0.0 && self.lambda_gae <= 1.0) {
            return Err(Error::config(format!(
                "train.lambda_gae must lie in (0, 1], got {}",
                self.lambda_gae
            )));
        }
        if !(self.clip_eps > 0.0) {
            return Err(Error::config("train.clip_eps must be > 0"));
        }
        for (name, v) in [
            ("rollout_len", self.rollout_len),
            ("minibatch", self.minibatch),
            ("epochs", self.epochs),
        ] {
            if v == 0 {
                return Err(Error::config(format!("train.{name} must be >= 1")));
            }
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::config("train.hidden must list positive layer widths"));
        }
        if !(self.optimizer.lr > 0.0) {
            return Err(Error::config("train.optimizer.lr must be > 0"));
        }
        if !(0.0..1.0).contains(&self.dual_ema) {
            return Err(Error::config("train.dual_ema must lie in [0, 1)"));
        }
        let lambdas = self.lambda_init.iter().chain(&self.lambda_fixed).chain(&self.shaping_lambda);
        if self.dual_step < 0.0 || lambdas.into_iter().any(|l| !(*l >= 0.0)) {
            return Err(Error::config("train multipliers and dual_step must be >= 0"));
        }
        if !(self.max_grad_norm > 0.0) || !(self.policy_init_scale > 0.0) {
            return Err(Error::config("train.max_grad_norm and policy_init_scale must be > 0"));
        }
        Ok(())
    }

    /// Environment frames consumed by one training run.
    pub fn frames(&self) -> usize {
        self.updates * self.rollout_len
    }
}

/// Component ablations of the constrained agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablations {
    pub no_shield: bool,
    pub no_cost_critics: bool,
    pub fixed_duals: bool,
    pub reversed_shield_order: bool,
}

/// Identifier of a single ablation flag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    NoShield,
    NoCostCritics,
    FixedDuals,
    ReversedShieldOrder,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [
        Ablation::NoShield,
        Ablation::NoCostCritics,
        Ablation::FixedDuals,
        Ablation::ReversedShieldOrder,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::NoShield => "no_shield",
            Ablation::NoCostCritics => "no_cost_critics",
            Ablation::FixedDuals => "fixed_duals",
            Ablation::ReversedShieldOrder => "reversed_shield_order",
        }
    }

    pub fn flags(self) -> Ablations {
        let mut a = Ablations::default();
        match self {
            Ablation::NoShield => a.no_shield = true,
            Ablation::NoCostCritics => a.no_cost_critics = true,
            Ablation::FixedDuals => a.fixed_duals = true,
            Ablation::ReversedShieldOrder => a.reversed_shield_order = true,
        }
        a
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| {
                Error::config(format!(
                    "unknown ablation '{s}' (expected one of no_shield, no_cost_critics, fixed_duals, reversed_shield_order)"
                ))
            })
    }
}

impl Ablations {
    /// Shield actually used, if any.
    pub fn shield(&self, base: &ShieldConfig) -> Option<ShieldConfig> {
        if self.no_shield {
            return None;
        }
        let mut s = base.clone();
        s.reversed |= self.reversed_shield_order;
        Some(s)
    }
}

/// Constrained agent, or the same code path with multipliers pinned at zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PpoVariant {
    Constrained,
    Unconstrained,
}

/// One stored frame.
#[derive(Debug, Clone)]
pub struct Transition {
    pub observation: Vec<f64>,
    /// Action whose log-probability enters the ratio (see [`RatioAction`]).
    pub action: Action,
    pub log_prob: f64,
    /// Reward used for learning (includes cost shaping when cost critics are removed).
    pub reward: f64,
    pub costs: CostVector,
    pub values: [f64; 3],
    pub done: bool,
}

/// Policy and critic networks.
#[derive(Debug, Clone)]
pub struct PpoAgent {
    pub policy: Mlp,
    /// Outputs: reward value, RIC-cost value, overshoot-cost value.
    pub critic: Mlp,
    /// Target scaling per critic head; identity until training updates it.
    pub value_norm: [RunningNorm; 3],
    n_ues: usize,
}

fn widths(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut w = vec![input];
    w.extend_from_slice(hidden);
    w.push(output);
    w
}

fn rows_of(obs: &[&[f64]]) -> Array2<f64> {
    let cols = obs.first().map_or(0, |o| o.len());
    Array2::from_shape_fn((obs.len(), cols), |(r, c)| obs[r][c])
}

impl PpoAgent {
    pub fn new<R: Rng + ?Sized>(env: &EnvConfig, cfg: &TrainConfig, rng: &mut R) -> Self {
        let obs = env.observation_len();
        let mut policy = Mlp::new(&Self::policy_widths(env, cfg), rng);
        policy.scale_output(cfg.policy_init_scale);
        let critic = Mlp::new(&widths(obs, &cfg.hidden, 3), rng);
        PpoAgent {
            policy,
            critic,
            value_norm: [RunningNorm::default(); 3],
            n_ues: env.n_ues,
        }
    }

    pub fn policy_widths(env: &EnvConfig, cfg: &TrainConfig) -> Vec<usize> {
        widths(env.observation_len(), &cfg.hidden, Primitive::COUNT + env.n_ues)
    }

    pub fn critic_widths(env: &EnvConfig, cfg: &TrainConfig) -> Vec<usize> {
        widths(env.observation_len(), &cfg.hidden, 3)
    }

    pub fn from_networks(policy: Mlp, critic: Mlp, n_ues: usize) -> Self {
        PpoAgent {
            policy,
            critic,
            value_norm: [RunningNorm::default(); 3],
            n_ues,
        }
    }

    pub fn heads(&self, obs: &[f64]) -> Result<PolicyHeads> {
        PolicyHeads::from_output(&self.policy.predict(obs)?, self.n_ues)
    }

    pub fn values(&self, obs: &[f64]) -> Result<[f64; 3]> {
        let v = self.critic.predict(obs)?;
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("critic output"));
        }
        Ok(std::array::from_fn(|h| self.value_norm[h].denormalize(v[h])))
    }

    /// Deterministic evaluation policy.
    pub fn greedy(&self) -> GreedyPolicy<'_> {
        GreedyPolicy { agent: self }
    }

    /// Stochastic policy sampling with its own stream.
    pub fn stochastic(&self, seed: u64) -> StochasticPolicy<'_> {
        StochasticPolicy {
            agent: self,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

pub struct GreedyPolicy<'a> {
    agent: &'a PpoAgent,
}

impl Scheduler for GreedyPolicy<'_> {
    fn propose(&mut self, _: &Environment, obs: &Observation) -> Result<Action> {
        Ok(self.agent.heads(obs.as_slice())?.greedy())
    }
}

pub struct StochasticPolicy<'a> {
    agent: &'a PpoAgent,
    rng: ChaCha8Rng,
}

impl Scheduler for StochasticPolicy<'_> {
    fn propose(&mut self, _: &Environment, obs: &Observation) -> Result<Action> {
        Ok(self.agent.heads(obs.as_slice())?.sample(&mut self.rng))
    }
}

/// Everything a training run produces.
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub agent: PpoAgent,
    pub rows: Vec<MetricsRow>,
    /// Empty when the shield is ablated.
    pub shield_rows: Vec<ShieldRow>,
    pub duals: DualState,
    /// Shield configuration used during training, if any.
    pub shield: Option<ShieldConfig>,
}

/// Trains one agent for `cfg.updates` updates of `cfg.rollout_len` frames.
pub fn train(
    env_config: &EnvConfig,
    cfg: &TrainConfig,
    shield: &ShieldConfig,
    ablations: Ablations,
    variant: PpoVariant,
    seed: u64,
    label: &str,
) -> Result<TrainOutput> {
    env_config.validate()?;
    cfg.validate()?;
    shield.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut agent = PpoAgent::new(env_config, cfg, &mut rng);
    let mut policy_opt = Adam::new(&agent.policy, cfg.optimizer);
    let mut critic_opt = Adam::new(&agent.critic, cfg.optimizer);

    let shield_cfg = ablations.shield(shield);
    let mut runner = Runner::new(env_config.clone(), shield_cfg.clone(), episode_seeds(seed, Phase::Train))?;

    let constrained = variant == PpoVariant::Constrained;
    let cost_critics = constrained && !ablations.no_cost_critics;
    let dual_mode = match variant {
        PpoVariant::Unconstrained => DualMode::Zero,
        PpoVariant::Constrained if ablations.no_cost_critics => DualMode::Fixed(cfg.shaping_lambda),
        PpoVariant::Constrained if ablations.fixed_duals => DualMode::Fixed(cfg.lambda_fixed),
        PpoVariant::Constrained => DualMode::Adaptive(cfg.lambda_init),
    };
    let shaping = if constrained && ablations.no_cost_critics {
        cfg.shaping_lambda
    } else {
        [0.0; 2]
    };
    let mut duals = DualState::new(dual_mode, cfg.dual_step, cfg.dual_ema, cfg.d2_ms);
    let head_mask = [true, cost_critics, cost_critics];

    let mut rows = Vec::with_capacity(cfg.updates);
    let mut shield_rows = Vec::new();
    let mut buffer: Vec<Transition> = Vec::with_capacity(cfg.rollout_len);
    for update in 0..cfg.updates {
        buffer.clear();
        let mut stats = FrameStats::default();
        for _ in 0..cfg.rollout_len {
            let obs = runner.observation().0.clone();
            let heads = agent.heads(&obs)?;
            let values = agent.values(&obs)?;
            let sampled = heads.sample(&mut rng);
            duals.observe_window(runner.env().t_avail_ms());
            let ex = runner.execute(&sampled)?;
            stats.record(&ex);
            let action = match cfg.ratio_action {
                RatioAction::Executed => ex.action,
                RatioAction::Sampled => sampled,
            };
            let costs = ex.step.costs;
            let reward = ex.step.reward - shaping[0] * costs.ric_time_ms - shaping[1] * costs.overshoot_ms;
            buffer.push(Transition {
                observation: obs,
                log_prob: heads.log_prob(&action),
                action,
                reward,
                costs,
                values,
                done: ex.step.done,
            });
            if ex.step.done {
                runner.reset();
            }
        }
        let bootstrap = agent.values(runner.observation().as_slice())?;

        let dones: Vec<bool> = buffer.iter().map(|t| t.done).collect();
        let estimate = |head: usize, signal: fn(&Transition) -> f64| {
            let mut values: Vec<f64> = buffer.iter().map(|t| t.values[head]).collect();
            values.push(bootstrap[head]);
            let signals: Vec<f64> = buffer.iter().map(signal).collect();
            gae_with_dones(&values, &signals, &dones, cfg.gamma, cfg.lambda_gae)
        };
        let est_r = estimate(0, |t| t.reward)?;
        let est_c1 = estimate(1, |t| t.costs.ric_time_ms)?;
        let est_c2 = estimate(2, |t| t.costs.overshoot_ms)?;

        let adv_r = standardize(&est_r.advantages);
        let zeros = vec![0.0; buffer.len()];
        let (adv_c1, adv_c2) = if cost_critics {
            (&est_c1.advantages, &est_c2.advantages)
        } else {
            (&zeros, &zeros)
        };

        let mut targets_all = [est_r.returns.clone(), est_c1.returns.clone(), est_c2.returns.clone()];
        if cfg.value_norm {
            for (h, t) in targets_all.iter_mut().enumerate() {
                agent.value_norm[h].update(t);
                let norm = agent.value_norm[h];
                t.iter_mut().for_each(|x| *x = norm.normalize(*x));
            }
        }

        let obs_rows: Vec<&[f64]> = buffer.iter().map(|t| t.observation.as_slice()).collect();
        let batch_size = cfg.minibatch.min(buffer.len());
        let mut order: Vec<usize> = (0..buffer.len()).collect();

        for _ in 0..cfg.epochs {
            order.shuffle(&mut rng);
            for chunk in order.chunks(batch_size) {
                let x = rows_of(&chunk.iter().map(|&i| obs_rows[i]).collect::<Vec<_>>());
                let (pred, cache) = agent.critic.forward(x.view())?;
                let pick = |v: &[f64]| chunk.iter().map(|&i| v[i]).collect::<Vec<_>>();
                let targets = [pick(&targets_all[0]), pick(&targets_all[1]), pick(&targets_all[2])];
                let (_, grad) = critic_loss(pred.view(), [&targets[0], &targets[1], &targets[2]], head_mask)?;
                let mut g = agent.critic.backward(&cache, grad.view())?;
                g.clip_norm(cfg.max_grad_norm);
                critic_opt.step(&mut agent.critic, &g)?;
            }
        }

        let coef = PolicyCoefficients {
            lambdas: if cost_critics { duals.lambdas() } else { [0.0; 2] },
            clip_eps: cfg.clip_eps,
            entropy_coef: cfg.entropy_coef,
        };
        for _ in 0..cfg.epochs {
            order.shuffle(&mut rng);
            for chunk in order.chunks(batch_size) {
                let x = rows_of(&chunk.iter().map(|&i| obs_rows[i]).collect::<Vec<_>>());
                let (out, cache) = agent.policy.forward(x.view())?;
                let actions: Vec<&Action> = chunk.iter().map(|&i| &buffer[i].action).collect();
                let pick = |v: &[f64]| chunk.iter().map(|&i| v[i]).collect::<Vec<_>>();
                let old = pick(&buffer.iter().map(|t| t.log_prob).collect::<Vec<_>>());
                let (a, c1, c2) = (pick(&adv_r), pick(adv_c1), pick(adv_c2));
                let batch = PolicyBatch {
                    actions: &actions,
                    old_log_probs: &old,
                    advantages: &a,
                    cost_advantages: [&c1, &c2],
                };
                let l = policy_loss(out.view(), batch, coef)?;
                if !l.loss.is_finite() {
                    return Err(Error::NonFinite("policy loss"));
                }
                let mut g = agent.policy.backward(&cache, l.grad.view())?;
                g.clip_norm(cfg.max_grad_norm);
                policy_opt.step(&mut agent.policy, &g)?;
            }
        }

        let n = buffer.len() as f64;
        let mean_costs = [
            buffer.iter().map(|t| t.costs.ric_time_ms).sum::<f64>() / n,
            buffer.iter().map(|t| t.costs.overshoot_ms).sum::<f64>() / n,
        ];
        duals.update(mean_costs);

        rows.push(stats.to_row(Phase::Train, label, seed, update, duals.lambdas()));
        if shield_cfg.is_some() {
            shield_rows.push(stats.to_shield_row(Phase::Train, update));
        }
        log::debug!(
            "{label} seed {seed} update {update}: reward {:.4} ric {:.3} lambda {:?}",
            stats.reward / stats.frames as f64,
            stats.ric_ms / stats.frames as f64,
            duals.lambdas()
        );
    }
    Ok(TrainOutput {
        agent,
        rows,
        shield_rows,
        duals,
        shield: shield_cfg,
    })
}

/// Zero mean, unit variance; constant inputs map to zeros.
pub fn standardize(xs: &[f64]) -> Vec<f64> {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    xs.iter().map(|x| (x - mean) / (sd + 1e-8)).collect()
}

/// Policy-loss evaluation on a fixed batch, for comparisons across variants.
pub fn batch_policy_loss(
    agent: &PpoAgent,
    observations: &[&[f64]],
    batch: PolicyBatch<'_>,
    coef: PolicyCoefficients,
) -> Result<PolicyLoss> {
    let x = rows_of(observations);
    let (out, _) = agent.policy.forward(ArrayView2::from(&x))?;
    policy_loss(out.view(), batch, coef)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_env() -> EnvConfig {
        EnvConfig {
            episode_frames: 40,
            ..EnvConfig::default()
        }
    }

    fn small_train() -> TrainConfig {
        TrainConfig {
            updates: 3,
            rollout_len: 16,
            hidden: vec![16, 8],
            ..TrainConfig::default()
        }
    }

    #[test]
    fn frame_budget() {
        assert_eq!(TrainConfig::default().frames(), 7680);
    }

    #[test]
    fn training_is_reproducible() {
        let run = || {
            train(
                &small_env(),
                &small_train(),
                &ShieldConfig::default(),
                Ablations::default(),
                PpoVariant::Constrained,
                7,
                "tcppo",
            )
            .unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.rows, b.rows);
        assert_eq!(a.agent.policy, b.agent.policy);
        assert_eq!(a.rows.len(), 3);
        assert!(a.rows.iter().all(|r| r.hit_rate == 1.0 && r.overshoot_ms == 0.0));
    }

    #[test]
    fn unconstrained_multipliers_stay_zero() {
        let out = train(
            &small_env(),
            &small_train(),
            &ShieldConfig::default(),
            Ablations::default(),
            PpoVariant::Unconstrained,
            3,
            "ppo",
        )
        .unwrap();
        assert!(out.rows.iter().all(|r| r.lambda1 == 0.0 && r.lambda2 == 0.0));
    }

    #[test]
    fn fixed_duals_stay_frozen() {
        let cfg = small_train();
        let out = train(
            &small_env(),
            &cfg,
            &ShieldConfig::default(),
            Ablation::FixedDuals.flags(),
            PpoVariant::Constrained,
            3,
            "fixed",
        )
        .unwrap();
        assert!(out
            .rows
            .iter()
            .all(|r| [r.lambda1, r.lambda2] == cfg.lambda_fixed));
    }

    #[test]
    fn no_shield_drops_shield_rows() {
        let out = train(
            &small_env(),
            &small_train(),
            &ShieldConfig::default(),
            Ablation::NoShield.flags(),
            PpoVariant::Constrained,
            3,
            "bare",
        )
        .unwrap();
        assert!(out.shield_rows.is_empty() && out.shield.is_none());
    }

    #[test]
    fn ablation_names_round_trip() {
        for a in Ablation::ALL {
            assert_eq!(a.name().parse::<Ablation>().unwrap(), a);
        }
        assert!("nope".parse::<Ablation>().is_err());
        assert!(Ablation::ReversedShieldOrder
            .flags()
            .shield(&ShieldConfig::default())
            .unwrap()
            .reversed);
    }
}
