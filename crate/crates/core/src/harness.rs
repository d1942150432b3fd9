//! Experiment orchestration: configuration, (agent, seed) runs, ablation
//! grids, persisted metrics and offline summaries.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agent::{self, Ablation, Ablations, PpoAgent, PpoVariant, TrainConfig};
use crate::baselines::{self, DqnAgent, DqnConfig, RandomScheduler};
use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::metrics::{self, EvalSummary, MetricsRow, Phase, ShieldRow, Stats};
use crate::nn::Mlp;
use crate::rollout::{self, Scheduler};
use crate::shield::ShieldConfig;

pub const DEFAULT_SEEDS: [u64; 5] = [42, 43, 44, 45, 46];
const RANDOM_SALT: u64 = 0x5241_4e44;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    Tcppo,
    Ppo,
    Dqn,
    Random,
}

impl AgentKind {
    pub const ALL: [AgentKind; 4] = [AgentKind::Tcppo, AgentKind::Ppo, AgentKind::Dqn, AgentKind::Random];

    pub fn name(self) -> &'static str {
        match self {
            AgentKind::Tcppo => "tcppo",
            AgentKind::Ppo => "ppo",
            AgentKind::Dqn => "dqn",
            AgentKind::Random => "random",
        }
    }
}

impl fmt::Display for AgentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for AgentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AgentKind::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::config(format!("unknown agent '{s}' (expected tcppo, ppo, dqn or random)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub scenario: String,
    pub agents: Vec<AgentKind>,
    pub seeds: Vec<u64>,
    /// Applied to the constrained agent in `run`.
    pub ablations: Ablations,
    pub eval_episodes: usize,
    pub workers: usize,
    pub output_dir: PathBuf,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            scenario: "n8".into(),
            agents: AgentKind::ALL.to_vec(),
            seeds: DEFAULT_SEEDS.to_vec(),
            ablations: Ablations::default(),
            eval_episodes: 30,
            workers: 1,
            output_dir: PathBuf::from("runs"),
        }
    }
}

/// Complete experiment description; one TOML section per component.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvConfig,
    pub train: TrainConfig,
    pub dqn: DqnConfig,
    pub shield: ShieldConfig,
    pub experiment: ExperimentSection,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.train.validate()?;
        self.dqn.validate()?;
        self.shield.validate()?;
        let x = &self.experiment;
        if x.seeds.is_empty() {
            return Err(Error::config("experiment.seeds must not be empty"));
        }
        if x.agents.is_empty() {
            return Err(Error::config("experiment.agents must not be empty"));
        }
        if x.eval_episodes == 0 {
            return Err(Error::config("experiment.eval_episodes must be >= 1"));
        }
        if x.workers == 0 {
            return Err(Error::config("experiment.workers must be >= 1"));
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON form of every field.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serialises");
        Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// One (agent, configuration, seed) job.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunUnit {
    pub label: String,
    pub agent: AgentKind,
    pub ablations: Ablations,
    pub seed: u64,
}

impl RunUnit {
    pub fn metrics_file(&self) -> String {
        format!("metrics_{}_seed{}.csv", self.label, self.seed)
    }

    pub fn shield_file(&self) -> String {
        format!("shield_{}_seed{}.csv", self.label, self.seed)
    }

    fn checkpoint_file(&self, net: &str) -> String {
        format!("{}_seed{}_{net}.json", self.label, self.seed)
    }
}

/// Label of the constrained agent under a set of ablations.
pub fn ablation_label(ablations: &Ablations) -> String {
    let active = [
        (Ablation::NoShield, ablations.no_shield),
        (Ablation::NoCostCritics, ablations.no_cost_critics),
        (Ablation::FixedDuals, ablations.fixed_duals),
        (Ablation::ReversedShieldOrder, ablations.reversed_shield_order),
    ];
    let mut label = AgentKind::Tcppo.name().to_string();
    for (a, on) in active {
        if on {
            label.push('-');
            label.push_str(a.name());
        }
    }
    label
}

/// Jobs of `run`: every configured agent on every seed.
pub fn run_units(cfg: &ExperimentConfig) -> Vec<RunUnit> {
    let x = &cfg.experiment;
    x.agents
        .iter()
        .flat_map(|&agent| {
            let ablations = if agent == AgentKind::Tcppo {
                x.ablations
            } else {
                Ablations::default()
            };
            let label = if agent == AgentKind::Tcppo {
                ablation_label(&ablations)
            } else {
                agent.name().to_string()
            };
            x.seeds.iter().map(move |&seed| RunUnit {
                label: label.clone(),
                agent,
                ablations,
                seed,
            })
        })
        .collect()
}

/// Jobs of `ablate`: the unablated constrained agent plus each single ablation.
pub fn ablation_units(cfg: &ExperimentConfig) -> Vec<RunUnit> {
    std::iter::once(Ablations::default())
        .chain(Ablation::ALL.map(Ablation::flags))
        .flat_map(|ablations| {
            cfg.experiment.seeds.iter().map(move |&seed| RunUnit {
                label: ablation_label(&ablations),
                agent: AgentKind::Tcppo,
                ablations,
                seed,
            })
        })
        .collect()
}

/// Trained networks of a finished job.
#[derive(Debug, Clone)]
pub enum Trained {
    Ppo(PpoAgent),
    Dqn(DqnAgent),
    Untrained,
}

#[derive(Debug, Clone)]
pub struct UnitResult {
    pub unit: RunUnit,
    /// Training rows followed by evaluation rows.
    pub rows: Vec<MetricsRow>,
    /// `None` when the job ran without a shield.
    pub shield_rows: Option<Vec<ShieldRow>>,
    pub trained: Trained,
}

/// Trains and evaluates one job entirely in memory.
pub fn execute_unit(cfg: &ExperimentConfig, unit: &RunUnit) -> Result<UnitResult> {
    let episodes = cfg.experiment.eval_episodes;
    let seed = unit.seed;
    let label = unit.label.as_str();
    let ppo = |variant| -> Result<UnitResult> {
        let out = agent::train(&cfg.env, &cfg.train, &cfg.shield, unit.ablations, variant, seed, label)?;
        let lambdas = out.duals.lambdas();
        let ev = rollout::evaluate(
            &mut out.agent.greedy(),
            &cfg.env,
            out.shield.as_ref(),
            episodes,
            seed,
            label,
            lambdas,
        )?;
        Ok(UnitResult {
            unit: unit.clone(),
            rows: out.rows.into_iter().chain(ev.rows).collect(),
            shield_rows: out.shield.map(|_| out.shield_rows.into_iter().chain(ev.shield_rows).collect()),
            trained: Trained::Ppo(out.agent),
        })
    };
    match unit.agent {
        AgentKind::Tcppo => ppo(PpoVariant::Constrained),
        AgentKind::Ppo => ppo(PpoVariant::Unconstrained),
        AgentKind::Dqn => {
            let mut out = baselines::dqn_train(
                &cfg.env,
                &cfg.dqn,
                &cfg.shield,
                cfg.train.frames(),
                cfg.train.rollout_len,
                seed,
                label,
            )?;
            let ev = rollout::evaluate(&mut out.agent, &cfg.env, out.shield.as_ref(), episodes, seed, label, [0.0; 2])?;
            Ok(UnitResult {
                unit: unit.clone(),
                rows: out.rows.into_iter().chain(ev.rows).collect(),
                shield_rows: out.shield.map(|_| out.shield_rows.into_iter().chain(ev.shield_rows).collect()),
                trained: Trained::Dqn(out.agent),
            })
        }
        AgentKind::Random => {
            let ev = evaluate_random(cfg, seed, label)?;
            Ok(UnitResult {
                unit: unit.clone(),
                rows: ev.rows,
                shield_rows: Some(ev.shield_rows),
                trained: Trained::Untrained,
            })
        }
    }
}

fn evaluate_random(cfg: &ExperimentConfig, seed: u64, label: &str) -> Result<rollout::Evaluation> {
    rollout::evaluate(
        &mut RandomScheduler::new(seed ^ RANDOM_SALT),
        &cfg.env,
        Some(&cfg.shield),
        cfg.experiment.eval_episodes,
        seed,
        label,
        [0.0; 2],
    )
}

/// Runs jobs on a pool of `workers` threads; results keep the job order.
pub fn execute_units(cfg: &ExperimentConfig, units: &[RunUnit], workers: usize) -> Result<Vec<Result<UnitResult>>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Worker(e.to_string()))?;
    Ok(pool.install(|| units.par_iter().map(|u| execute_unit(cfg, u)).collect()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub label: String,
    pub agent: AgentKind,
    pub seed: u64,
    pub status: String,
    pub metrics_file: Option<String>,
    pub shield_file: Option<String>,
    pub wall_clock_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub scenario: String,
    pub seeds: Vec<u64>,
    pub crate_version: String,
    pub wall_clock_s: f64,
    pub runs: Vec<RunRecord>,
}

impl Manifest {
    pub fn failures(&self) -> usize {
        self.runs.iter().filter(|r| r.status != "ok").count()
    }
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CHECKPOINT_DIR: &str = "checkpoints";

fn write_unit(out: &Path, result: &UnitResult) -> Result<(String, Option<String>)> {
    let unit = &result.unit;
    metrics::write_csv(&out.join(unit.metrics_file()), &result.rows)?;
    let shield_file = match &result.shield_rows {
        Some(rows) => {
            metrics::write_csv(&out.join(unit.shield_file()), rows)?;
            Some(unit.shield_file())
        }
        None => None,
    };
    let ckpt = out.join(CHECKPOINT_DIR);
    match &result.trained {
        Trained::Ppo(a) => {
            std::fs::create_dir_all(&ckpt).map_err(|e| Error::io(&ckpt, e))?;
            a.policy.save(&ckpt.join(unit.checkpoint_file("policy")))?;
            a.critic.save(&ckpt.join(unit.checkpoint_file("critic")))?;
        }
        Trained::Dqn(a) => {
            std::fs::create_dir_all(&ckpt).map_err(|e| Error::io(&ckpt, e))?;
            a.q.save(&ckpt.join(unit.checkpoint_file("q")))?;
        }
        Trained::Untrained => {}
    }
    Ok((unit.metrics_file(), shield_file))
}

fn run_and_persist(cfg: &ExperimentConfig, units: &[RunUnit], out: &Path) -> Result<Manifest> {
    cfg.validate()?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let start = Instant::now();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.experiment.workers)
        .build()
        .map_err(|e| Error::Worker(e.to_string()))?;
    let runs: Vec<RunRecord> = pool.install(|| {
        units
            .par_iter()
            .map(|unit| {
                let t0 = Instant::now();
                let outcome = execute_unit(cfg, unit).and_then(|r| write_unit(out, &r));
                let (status, metrics_file, shield_file) = match outcome {
                    Ok((m, s)) => ("ok".to_string(), Some(m), s),
                    Err(e) => {
                        log::error!("{} seed {}: {e}", unit.label, unit.seed);
                        (format!("failed: {e}"), None, None)
                    }
                };
                log::info!("{} seed {} finished in {:.1}s", unit.label, unit.seed, t0.elapsed().as_secs_f64());
                RunRecord {
                    label: unit.label.clone(),
                    agent: unit.agent,
                    seed: unit.seed,
                    status,
                    metrics_file,
                    shield_file,
                    wall_clock_s: t0.elapsed().as_secs_f64(),
                }
            })
            .collect()
    });
    let manifest = Manifest {
        config_hash: cfg.hash(),
        scenario: cfg.experiment.scenario.clone(),
        seeds: cfg.experiment.seeds.clone(),
        crate_version: env!("CARGO_PKG_VERSION").to_string(),
        wall_clock_s: start.elapsed().as_secs_f64(),
        runs,
    };
    let path = out.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// Trains and evaluates every configured (agent, seed) pair into `out`.
pub fn run(cfg: &ExperimentConfig, out: &Path) -> Result<Manifest> {
    run_and_persist(cfg, &run_units(cfg), out)
}

/// Runs the constrained agent unablated and under each single ablation.
pub fn ablate(cfg: &ExperimentConfig, out: &Path) -> Result<Manifest> {
    run_and_persist(cfg, &ablation_units(cfg), out)
}

/// Re-evaluates agents from the checkpoints of a previous `run` in `out`,
/// replacing the evaluation rows of each metrics file.
pub fn evaluate_checkpoints(cfg: &ExperimentConfig, out: &Path) -> Result<Manifest> {
    cfg.validate()?;
    let start = Instant::now();
    let ckpt = out.join(CHECKPOINT_DIR);
    let mut runs = Vec::new();
    for unit in run_units(cfg) {
        let t0 = Instant::now();
        let label = unit.label.as_str();
        let shield = unit.ablations.shield(&cfg.shield);
        let episodes = cfg.experiment.eval_episodes;
        let ev = match unit.agent {
            AgentKind::Tcppo | AgentKind::Ppo => {
                let policy = Mlp::load(
                    &ckpt.join(unit.checkpoint_file("policy")),
                    &PpoAgent::policy_widths(&cfg.env, &cfg.train),
                )?;
                let critic = Mlp::load(
                    &ckpt.join(unit.checkpoint_file("critic")),
                    &PpoAgent::critic_widths(&cfg.env, &cfg.train),
                )?;
                let agent = PpoAgent::from_networks(policy, critic, cfg.env.n_ues);
                let lambdas = previous_lambdas(&out.join(unit.metrics_file()));
                rollout::evaluate(&mut agent.greedy(), &cfg.env, shield.as_ref(), episodes, unit.seed, label, lambdas)?
            }
            AgentKind::Dqn => {
                let shield = cfg.dqn.shielded.then(|| cfg.shield.clone());
                let mut w = vec![cfg.env.observation_len()];
                w.extend_from_slice(&cfg.dqn.hidden);
                w.push(baselines::templates(cfg.env.n_ues).len());
                let q = Mlp::load(&ckpt.join(unit.checkpoint_file("q")), &w)?;
                let predictor = shield.as_ref().map_or_else(Default::default, |s| s.predictor);
                let mut agent = DqnAgent::from_network(q, cfg.env.n_ues, predictor);
                rollout::evaluate(&mut agent as &mut dyn Scheduler, &cfg.env, shield.as_ref(), episodes, unit.seed, label, [0.0; 2])?
            }
            AgentKind::Random => evaluate_random(cfg, unit.seed, label)?,
        };
        let metrics_path = out.join(unit.metrics_file());
        let mut rows: Vec<MetricsRow> = if metrics_path.exists() {
            metrics::read_csv::<MetricsRow>(&metrics_path)?
                .into_iter()
                .filter(|r| r.phase == Phase::Train)
                .collect()
        } else {
            Vec::new()
        };
        rows.extend(ev.rows);
        metrics::write_csv(&metrics_path, &rows)?;
        let shield_file = if shield.is_some() || unit.agent == AgentKind::Random {
            let path = out.join(unit.shield_file());
            let mut srows: Vec<ShieldRow> = if path.exists() {
                metrics::read_csv::<ShieldRow>(&path)?
                    .into_iter()
                    .filter(|r| r.phase == Phase::Train)
                    .collect()
            } else {
                Vec::new()
            };
            srows.extend(ev.shield_rows);
            metrics::write_csv(&path, &srows)?;
            Some(unit.shield_file())
        } else {
            None
        };
        runs.push(RunRecord {
            label: unit.label.clone(),
            agent: unit.agent,
            seed: unit.seed,
            status: "ok".into(),
            metrics_file: Some(unit.metrics_file()),
            shield_file,
            wall_clock_s: t0.elapsed().as_secs_f64(),
        });
    }
    Ok(Manifest {
        config_hash: cfg.hash(),
        scenario: cfg.experiment.scenario.clone(),
        seeds: cfg.experiment.seeds.clone(),
        crate_version: env!("CARGO_PKG_VERSION").to_string(),
        wall_clock_s: start.elapsed().as_secs_f64(),
        runs,
    })
}

fn previous_lambdas(path: &Path) -> [f64; 2] {
    metrics::read_csv::<MetricsRow>(path)
        .ok()
        .and_then(|rows| rows.into_iter().filter(|r| r.phase == Phase::Train).last())
        .map_or([0.0; 2], |r| [r.lambda1, r.lambda2])
}

/// Across-seed mean and standard deviation at one update index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub agent: String,
    pub index: usize,
    pub seeds: usize,
    pub reward_mean: f64,
    pub reward_std: f64,
    pub air_overhead_mean: f64,
    pub air_overhead_std: f64,
    pub ric_mean: f64,
    pub ric_std: f64,
    pub lambda1_mean: f64,
    pub lambda2_mean: f64,
}

/// One flattened summary line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryLine {
    pub agent: String,
    pub metric: String,
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub se: f64,
    pub p95: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryTable {
    /// Evaluation statistics per agent label.
    pub eval: BTreeMap<String, EvalSummary>,
    pub train_series: Vec<SeriesPoint>,
    /// Files that could not be read, with the reason.
    pub errors: Vec<(String, String)>,
}

impl SummaryTable {
    pub fn lines(&self) -> Vec<SummaryLine> {
        let mut out = Vec::new();
        for (agent, s) in &self.eval {
            for (metric, st) in [
                ("reward", s.reward),
                ("utility", s.utility),
                ("air_overhead_ms", s.air_overhead_ms),
                ("ric_ms", s.ric_ms),
                ("hit_rate", s.hit_rate),
                ("overshoot_ms", s.overshoot_ms),
            ] {
                out.push(SummaryLine {
                    agent: agent.clone(),
                    metric: metric.into(),
                    n: st.n,
                    mean: st.mean,
                    std: st.std,
                    se: st.se,
                    p95: st.p95,
                });
            }
        }
        out
    }
}

/// Aggregates rows already in memory.
pub fn summarize_rows(rows: &[MetricsRow]) -> SummaryTable {
    let mut by_agent: BTreeMap<String, Vec<&MetricsRow>> = BTreeMap::new();
    for r in rows {
        by_agent.entry(r.agent.clone()).or_default().push(r);
    }
    let mut eval = BTreeMap::new();
    let mut train_series = Vec::new();
    for (agent, rows) in &by_agent {
        if rows.iter().any(|r| r.phase == Phase::Eval) {
            eval.insert(agent.clone(), EvalSummary::from_rows(rows.iter().copied()));
        }
        let mut by_index: BTreeMap<usize, Vec<&MetricsRow>> = BTreeMap::new();
        for r in rows.iter().filter(|r| r.phase == Phase::Train) {
            by_index.entry(r.index).or_default().push(r);
        }
        for (index, pts) in by_index {
            let st = |f: fn(&MetricsRow) -> f64| Stats::of(&pts.iter().map(|r| f(r)).collect::<Vec<_>>());
            let (reward, air, ric) = (st(|r| r.mean_reward), st(|r| r.air_overhead_ms), st(|r| r.ric_ms));
            train_series.push(SeriesPoint {
                agent: agent.clone(),
                index,
                seeds: pts.len(),
                reward_mean: reward.mean,
                reward_std: reward.std,
                air_overhead_mean: air.mean,
                air_overhead_std: air.std,
                ric_mean: ric.mean,
                ric_std: ric.std,
                lambda1_mean: st(|r| r.lambda1).mean,
                lambda2_mean: st(|r| r.lambda2).mean,
            });
        }
    }
    SummaryTable {
        eval,
        train_series,
        errors: Vec::new(),
    }
}

pub const SUMMARY_JSON: &str = "summary.json";
pub const SUMMARY_CSV: &str = "summary.csv";
pub const SERIES_CSV: &str = "train_series.csv";

/// Reads every `metrics_*.csv` under `dir` and writes the summary files next
/// to them. Unreadable files are reported and skipped.
pub fn summarize(dir: &Path) -> Result<SummaryTable> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("metrics_") && n.ends_with(".csv"))
        })
        .collect();
    files.sort();
    let mut rows = Vec::new();
    let mut errors = Vec::new();
    for f in &files {
        match metrics::read_csv::<MetricsRow>(f) {
            Ok(r) if !r.is_empty() => rows.extend(r),
            Ok(_) => errors.push((f.display().to_string(), "empty".to_string())),
            Err(e) => {
                log::warn!("skipping {}: {e}", f.display());
                errors.push((f.display().to_string(), e.to_string()));
            }
        }
    }
    if rows.is_empty() {
        return Err(Error::NoMetrics(dir.to_path_buf()));
    }
    let mut table = summarize_rows(&rows);
    table.errors = errors;
    let json_path = dir.join(SUMMARY_JSON);
    std::fs::write(&json_path, serde_json::to_string_pretty(&table)?).map_err(|e| Error::io(&json_path, e))?;
    metrics::write_csv(&dir.join(SUMMARY_CSV), &table.lines())?;
    metrics::write_csv(&dir.join(SERIES_CSV), &table.train_series)?;
    Ok(table)
}
