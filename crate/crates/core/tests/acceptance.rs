//! End-to-end acceptance checks. Each test prints one PASS/FAIL line to
//! stderr (uncaptured) and then asserts.
//!
//! The experiment criteria (4, 7-11) share one in-memory run of the N=8 grid
//! and the ablations; it is computed once, on first use.

mod common;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::Instant;

use common::oracles::{critic_error, gae_direct, mlp_error, policy_error, HIDDEN, SEEDS};
use common::{random_action, random_context, submasks};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use semadapt::agent::{dual_update, gae};
use semadapt::env::queue_update;
use semadapt::harness::{self, ExperimentConfig};
use semadapt::latency::{
    available_window, nominal_latency, slack_and_debt, slot_timing, GrantAllocation, LatencyConfig, Numerology,
};
use semadapt::metrics::{MetricsRow, Phase, Stats};
use semadapt::shield::{is_feasible, project, ShieldConfig};
use semadapt::{Action, Primitive};

fn verdict(criterion: u32, title: &str, pass: bool, detail: String) {
    let status = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "criterion {criterion:>2} [{status}] {title}: {detail}");
    assert!(pass, "criterion {criterion} ({title}) failed: {detail}");
}

fn config_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/default_n8.toml")
}

fn load_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::load(&config_path()).expect("default N=8 config");
    cfg.experiment.workers = std::thread::available_parallelism().map_or(1, |n| n.get());
    cfg
}

#[test]
fn criterion_01_shield_soundness() {
    let start = Instant::now();
    let configs = [ShieldConfig::default(), ShieldConfig::reversed()];
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let (mut unsound, mut unstable, mut lost, mut exhaustive) = (0, 0, 0, 0);
    let cases = 100_000;
    for k in 0..cases {
        let n = [4, 8, 16][k % 3];
        let ctx = random_context(n, &mut rng);
        let proposed = random_action(n, &mut rng);
        let cfg = &configs[k % 2];
        let (once, _) = project(&ctx, &proposed, cfg).unwrap();
        if !is_feasible(&ctx, &once).unwrap() {
            unsound += 1;
        }
        if project(&ctx, &once, cfg).unwrap().0 != once {
            unstable += 1;
        }
        if n <= 4 {
            exhaustive += 1;
            let feasible_exists = submasks(proposed.mask())
                .into_iter()
                .any(|m| is_feasible(&ctx, &Action::new(proposed.primitive(), m)).unwrap());
            let kept = once.primitive() == proposed.primitive() && !once.is_empty();
            if feasible_exists != kept && !proposed.is_empty() {
                lost += 1;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        1,
        "shield soundness & idempotence",
        unsound == 0 && unstable == 0 && lost == 0 && secs <= 60.0,
        format!(
            "{cases} cases, {unsound} infeasible, {unstable} non-idempotent, {lost}/{exhaustive} exhaustive mismatches, {secs:.1}s"
        ),
    );
}

#[test]
fn criterion_02_gae_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let len = rng.random_range(1..=8);
        let gamma = rng.random_range(0.5..1.0);
        let lambda = rng.random_range(0.0..=1.0);
        let values: Vec<f64> = (0..=len).map(|_| rng.random_range(-5.0..5.0)).collect();
        let rewards: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
        let est = gae(&values, &rewards, gamma, lambda).unwrap();
        for (a, b) in est.advantages.iter().zip(gae_direct(&values, &rewards, gamma, lambda)) {
            worst = worst.max((a - b).abs());
        }
    }
    verdict(2, "GAE oracle", worst <= 1e-10, format!("max |recursion - double sum| = {worst:e}"));
}

#[test]
fn criterion_03_gradient_checks() {
    let mut worst = [0.0f64; 3];
    for seed in SEEDS {
        for hidden in HIDDEN {
            worst[0] = worst[0].max(mlp_error(seed, hidden));
            worst[1] = worst[1].max(policy_error(seed, hidden));
            worst[2] = worst[2].max(critic_error(seed, hidden, [true; 3]));
        }
    }
    verdict(
        3,
        "finite-difference gradients",
        worst.iter().all(|&e| e <= 1e-4),
        format!("worst relative error mlp {:.1e}, policy {:.1e}, critic {:.1e}", worst[0], worst[1], worst[2]),
    );
}

#[test]
fn criterion_04_dual_dynamics() {
    // Synthetic means: the projected ascent step rises exactly when cost exceeds budget.
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut wrong = 0;
    for k in 0..10_000 {
        let lambda = if k % 10 == 0 { 0.0 } else { rng.random_range(0.0..2.0) };
        let cost = rng.random_range(0.0..5.0);
        let budget = if k % 7 == 0 { cost } else { rng.random_range(0.0..5.0) };
        let step = dual_update(lambda, cost, budget, 1e-3, 0.9);
        let increased = step.raw > lambda;
        if increased != (cost > budget) || step.raw < 0.0 || step.lambda < 0.0 {
            wrong += 1;
        }
    }
    let floor = dual_update(0.0, 1.0, 3.0, 1e-3, 0.9);

    let grid = grid();
    let lambdas: Vec<f64> = grid
        .rows
        .values()
        .flatten()
        .filter(|r| r.phase == Phase::Train && r.agent.starts_with("tcppo"))
        .flat_map(|r| [r.lambda1, r.lambda2])
        .collect();
    let negative = lambdas.iter().filter(|l| !(**l >= 0.0)).count();
    verdict(
        4,
        "dual dynamics",
        wrong == 0 && floor.raw == 0.0 && floor.lambda == 0.0 && negative == 0 && !lambdas.is_empty(),
        format!("{wrong} synthetic mismatches; {negative} negative of {} logged multipliers", lambdas.len()),
    );
}

#[test]
fn criterion_05_latency_arithmetic() {
    let mut failures = Vec::new();
    let mut check = |name: &str, ok: bool| {
        if !ok {
            failures.push(name.to_string());
        }
    };
    let t0 = slot_timing(Numerology::new(0).unwrap());
    let t1 = slot_timing(Numerology::new(1).unwrap());
    let t2 = slot_timing(Numerology::new(2).unwrap());
    check("slot mu=0", t0.slot_ms == 1.0 && t0.symbol_ms == 1.0 / 14.0);
    check("slot mu=1", t1.slot_ms == 0.5 && t1.symbol_ms == 0.5 / 14.0);
    check("slot mu=2", t2.slot_ms == 0.25 && t2.symbol_ms == 0.25 / 14.0);
    check("mu=3 rejected", Numerology::new(3).is_err());

    let w = available_window(&GrantAllocation::new(4, 7, 0.2).unwrap(), &t1);
    check("window 0.8", w == 4.0 * 7.0 * (0.5 / 14.0) - 0.2 && (w - 0.8).abs() < 1e-12);
    check("window zero grants", available_window(&GrantAllocation::new(0, 4, 0.1).unwrap(), &t0) == 0.0);
    check("window clamp", available_window(&GrantAllocation::new(1, 2, 0.1).unwrap(), &t2) == 0.0);

    let late = slack_and_debt(8.4, 6.0).unwrap();
    check("late slack", late.slack_ms == 6.0 - 8.4 && late.debt == (8.4 - 6.0) / 6.0);
    let early = slack_and_debt(2.4, 6.0).unwrap();
    check("early slack", early.slack_ms == 6.0 - 2.4 && early.debt == 0.0);
    let edge = slack_and_debt(6.0, 6.0).unwrap();
    check("boundary slack", edge.slack_ms == 0.0 && edge.debt == 0.0);
    check("deadline 0 rejected", slack_and_debt(1.0, 0.0).is_err());

    check("queue served", queue_update(2.0, 1.0, true, 1.1, 20.0) == 2.0 + 1.0 - 1.1);
    check("queue floor", queue_update(0.5, 0.0, true, 5.0, 20.0) == 0.0);
    check("queue cap", queue_update(19.8, 1.0, false, 0.0, 20.0) == 20.0);

    let zeroed = LatencyConfig {
        congestion_coeff: 0.0,
        fading_coeff: 0.0,
        jitter_sigma: 0.0,
        ..LatencyConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for p in Primitive::ALL {
        let got = zeroed.perturbed(p, rng.random_range(0.0..20.0), rng.random_range(0.0..1.0), &mut rng);
        check(&format!("zeroed {p}"), got == nominal_latency(p));
    }
    let table = [(5.0, 8.4), (2.8, 5.0), (1.1, 2.4), (1.5, 3.1), (0.0, 0.1)];
    for (p, (ric, total)) in Primitive::ALL.into_iter().zip(table) {
        let l = nominal_latency(p);
        check(&format!("nominal {p}"), l.ric_ms == ric && (l.total_ms - total).abs() < 1e-12);
    }
    verdict(
        5,
        "latency arithmetic",
        failures.is_empty(),
        if failures.is_empty() {
            "all hand computations reproduced".to_string()
        } else {
            format!("mismatches: {}", failures.join(", "))
        },
    );
}

#[test]
fn criterion_06_determinism() {
    let mut cfg = load_config();
    cfg.experiment.seeds = vec![42];
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    harness::run(&cfg, a.path()).unwrap();
    harness::run(&cfg, b.path()).unwrap();
    let mut compared = 0;
    let mut differing = Vec::new();
    for entry in std::fs::read_dir(a.path()).unwrap() {
        let name = entry.unwrap().file_name().into_string().unwrap();
        if !(name.starts_with("metrics_") || name.starts_with("shield_")) {
            continue;
        }
        compared += 1;
        let left = std::fs::read(a.path().join(&name)).unwrap();
        let right = std::fs::read(b.path().join(&name)).unwrap_or_default();
        if left != right {
            differing.push(name);
        }
    }
    verdict(
        6,
        "determinism",
        compared == 2 * cfg.experiment.agents.len() && differing.is_empty(),
        format!("{compared} files compared, differing: {differing:?}"),
    );
}

/// Rows of every (label, seed) job, grouped by label.
struct Grid {
    rows: BTreeMap<String, Vec<MetricsRow>>,
}

impl Grid {
    fn eval(&self, label: &str) -> Vec<&MetricsRow> {
        self.rows[label].iter().filter(|r| r.phase == Phase::Eval).collect()
    }

    fn stat(&self, label: &str, f: fn(&MetricsRow) -> f64) -> Stats {
        Stats::of(&self.eval(label).into_iter().map(f).collect::<Vec<_>>())
    }
}

fn grid() -> &'static Grid {
    static GRID: OnceLock<Grid> = OnceLock::new();
    GRID.get_or_init(|| {
        let cfg = load_config();
        let mut units = harness::run_units(&cfg);
        let main: Vec<String> = units.iter().map(|u| u.label.clone()).collect();
        units.extend(harness::ablation_units(&cfg).into_iter().filter(|u| !main.contains(&u.label)));
        let start = Instant::now();
        let results = harness::execute_units(&cfg, &units, cfg.experiment.workers).unwrap();
        let _ = writeln!(
            std::io::stderr(),
            "experiment grid: {} jobs in {:.1}s",
            units.len(),
            start.elapsed().as_secs_f64()
        );
        let mut rows: BTreeMap<String, Vec<MetricsRow>> = BTreeMap::new();
        for r in results {
            let r = r.expect("job failed");
            rows.entry(r.unit.label.clone()).or_default().extend(r.rows);
        }
        Grid { rows }
    })
}

#[test]
fn criterion_07_deadline_guarantee() {
    let g = grid();
    let eval = g.eval("tcppo");
    let below = eval.iter().filter(|r| r.hit_rate != 1.0).count();
    let overshoot = g.stat("tcppo", |r| r.overshoot_ms).mean;
    verdict(
        7,
        "deadline guarantee",
        eval.len() == 150 && below == 0 && overshoot == 0.0,
        format!("{} episodes, {below} with hit rate < 1, mean overshoot {overshoot} ms", eval.len()),
    );
}

#[test]
fn criterion_08_reward_ordering() {
    let g = grid();
    let reward = |l| g.stat(l, |r| r.mean_reward);
    let (tc, ppo, dqn, rnd) = (reward("tcppo"), reward("ppo"), reward("dqn"), reward("random"));
    let ordered = tc.mean > dqn.mean && dqn.mean > rnd.mean && tc.separated_from(&dqn) && dqn.separated_from(&rnd);
    let gap = (tc.mean - ppo.mean).abs() / ppo.mean.abs();
    verdict(
        8,
        "reward ordering",
        ordered && gap <= 0.10,
        format!(
            "tcppo {:.4}±{:.4}, ppo {:.4}±{:.4}, dqn {:.4}±{:.4}, random {:.4}±{:.4}; |tcppo-ppo|/ppo = {:.1}%",
            tc.mean,
            tc.se,
            ppo.mean,
            ppo.se,
            dqn.mean,
            dqn.se,
            rnd.mean,
            rnd.se,
            100.0 * gap
        ),
    );
}

#[test]
fn criterion_09_resource_dispersion() {
    let g = grid();
    let tc = g.stat("tcppo", |r| r.ric_ms);
    let ppo = g.stat("ppo", |r| r.ric_ms);
    verdict(
        9,
        "resource dispersion",
        tc.std <= 1.05 * ppo.std,
        format!("episode std of RIC time: tcppo {:.4} ms, ppo {:.4} ms (limit {:.4})", tc.std, ppo.std, 1.05 * ppo.std),
    );
}

#[test]
fn criterion_10_ablations() {
    let g = grid();
    let labels = [
        "tcppo",
        "tcppo-no_shield",
        "tcppo-no_cost_critics",
        "tcppo-fixed_duals",
        "tcppo-reversed_shield_order",
    ];
    let reward: BTreeMap<&str, Stats> = labels.iter().map(|&l| (l, g.stat(l, |r| r.mean_reward))).collect();
    let no_shield = reward["tcppo-no_shield"].mean;
    let lowest = labels[..].iter().all(|l| reward[l].mean >= no_shield);
    let violation_rate = {
        let rows = g.eval("tcppo-no_shield");
        rows.iter().filter(|r| r.hit_rate < 1.0 || r.overshoot_ms > 0.0).count() as f64 / rows.len() as f64
    };
    let air = |l| g.stat(l, |r| r.air_overhead_ms).mean;
    let reversed_cheaper = air("tcppo-reversed_shield_order") < air("tcppo");
    let fixed_ok = reward["tcppo-fixed_duals"].mean <= reward["tcppo"].mean;
    let table: Vec<String> = labels.iter().map(|l| format!("{l} {:.4}", reward[l].mean)).collect();
    verdict(
        10,
        "ablations",
        lowest && violation_rate > 0.0 && reversed_cheaper && fixed_ok,
        format!(
            "no_shield lowest: {lowest}, no_shield violating episodes: {:.1}%, reversed air {:.3} < {:.3}: {reversed_cheaper}, fixed <= adaptive: {fixed_ok} ({})",
            100.0 * violation_rate,
            air("tcppo-reversed_shield_order"),
            air("tcppo"),
            table.join(", ")
        ),
    );
}

#[test]
fn criterion_11_baseline_service_floor() {
    let g = grid();
    let dqn = g.stat("dqn", |r| r.ric_ms).mean;
    let tc = g.stat("tcppo", |r| r.ric_ms).mean;
    verdict(
        11,
        "baseline service floor",
        dqn >= 0.5 * tc,
        format!("mean RIC time per frame: dqn {dqn:.3} ms, tcppo {tc:.3} ms"),
    );
}
