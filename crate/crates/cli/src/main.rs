use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use semadapt::agent::Ablation;
use semadapt::harness::{self, AgentKind, ExperimentConfig, Manifest, SummaryTable};

/// Train, evaluate and compare shielded schedulers for semantic model updates.
///
/// Exit status: 0 on success, 1 for configuration or usage errors, 2 for
/// runtime failures.
#[derive(Debug, Parser)]
#[command(name = "semadapt", version)]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train and evaluate every configured (agent, seed) pair.
    Train(RunArgs),
    /// Re-evaluate agents from the checkpoints of an earlier `train`.
    Eval(RunArgs),
    /// Run the constrained agent unablated and under each single ablation.
    Ablate(RunArgs),
    /// Summarise the metrics files of an output directory.
    Report(ReportArgs),
    /// Parse and range-check a configuration file, then exit.
    ValidateConfig(ConfigArgs),
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// Experiment configuration (TOML).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,

    /// Accept UE counts outside {8, 16}.
    #[arg(long)]
    allow_any_ue_count: bool,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,

    /// Output directory (overrides experiment.output_dir).
    #[arg(long, value_name = "DIR", env = "SEMADAPT_OUT")]
    out: Option<PathBuf>,

    /// Comma-separated seeds.
    #[arg(long, alias = "seed", value_delimiter = ',', value_name = "SEEDS")]
    seeds: Option<Vec<u64>>,

    /// Comma-separated agents: tcppo, ppo, dqn, random.
    #[arg(long, value_delimiter = ',', value_name = "AGENTS")]
    agents: Option<Vec<AgentKind>>,

    /// Comma-separated ablations applied to tcppo: no_shield,
    /// no_cost_critics, fixed_duals, reversed_shield_order.
    #[arg(long, value_delimiter = ',', value_name = "FLAGS")]
    ablation: Option<Vec<Ablation>>,

    /// Parallel (agent, seed) workers.
    #[arg(long, value_name = "K")]
    workers: Option<usize>,

    /// Evaluation episodes per (agent, seed).
    #[arg(long, value_name = "N")]
    eval_episodes: Option<usize>,

    /// Policy updates per training run.
    #[arg(long, value_name = "N")]
    updates: Option<usize>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Directory holding metrics files.
    #[arg(long, value_name = "DIR", env = "SEMADAPT_OUT")]
    out: PathBuf,
}

enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

fn classify(e: semadapt::Error) -> Failure {
    if e.is_config() {
        Failure::Config(e.into())
    } else {
        Failure::Runtime(e.into())
    }
}

fn load(args: &ConfigArgs) -> Result<ExperimentConfig, Failure> {
    let mut cfg = ExperimentConfig::load(&args.config)
        .with_context(|| format!("cannot load config {}", args.config.display()))
        .map_err(Failure::Config)?;
    if args.allow_any_ue_count {
        cfg.env.allow_any_ue_count = true;
    }
    Ok(cfg)
}

fn prepare(args: &RunArgs) -> Result<(ExperimentConfig, PathBuf), Failure> {
    let mut cfg = load(&args.config)?;
    let x = &mut cfg.experiment;
    if let Some(seeds) = &args.seeds {
        x.seeds.clone_from(seeds);
    }
    if let Some(agents) = &args.agents {
        x.agents.clone_from(agents);
    }
    if let Some(flags) = &args.ablation {
        for f in flags {
            let a = f.flags();
            x.ablations.no_shield |= a.no_shield;
            x.ablations.no_cost_critics |= a.no_cost_critics;
            x.ablations.fixed_duals |= a.fixed_duals;
            x.ablations.reversed_shield_order |= a.reversed_shield_order;
        }
    }
    if let Some(w) = args.workers {
        x.workers = w;
    }
    if let Some(n) = args.eval_episodes {
        x.eval_episodes = n;
    }
    if let Some(u) = args.updates {
        cfg.train.updates = u;
    }
    cfg.validate().map_err(classify)?;
    let out = args.out.clone().unwrap_or_else(|| cfg.experiment.output_dir.clone());
    Ok((cfg, out))
}

fn finish(manifest: Manifest, out: &Path) -> Result<(), Failure> {
    let failed = manifest.failures();
    println!(
        "{} runs ({} failed) in {:.1}s -> {}",
        manifest.runs.len(),
        failed,
        manifest.wall_clock_s,
        out.display()
    );
    if failed > 0 {
        return Err(Failure::Runtime(anyhow::anyhow!("{failed} run(s) failed; see {}", out.join(harness::MANIFEST_FILE).display())));
    }
    Ok(())
}

fn print_summary(table: &SummaryTable) {
    println!(
        "{:<30} {:>5} {:>18} {:>9} {:>9} {:>9} {:>8}",
        "agent", "eps", "reward (mean±se)", "p95", "ric_ms", "air_ms", "hit"
    );
    for (agent, s) in &table.eval {
        println!(
            "{:<30} {:>5} {:>10.4}±{:<7.4} {:>9.4} {:>9.3} {:>9.3} {:>8.4}",
            agent, s.episodes, s.reward.mean, s.reward.se, s.reward.p95, s.ric_ms.mean, s.air_overhead_ms.mean, s.hit_rate.mean
        );
    }
    for (file, err) in &table.errors {
        eprintln!("warning: skipped {file}: {err}");
    }
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::ValidateConfig(args) => {
            let cfg = load(&args)?;
            cfg.validate().map_err(classify)?;
            println!("{}: ok (hash {})", args.config.display(), cfg.hash());
            Ok(())
        }
        Command::Train(args) => {
            let (cfg, out) = prepare(&args)?;
            let manifest = harness::run(&cfg, &out).map_err(classify)?;
            finish(manifest, &out)
        }
        Command::Eval(args) => {
            let (cfg, out) = prepare(&args)?;
            let manifest = harness::evaluate_checkpoints(&cfg, &out).map_err(classify)?;
            finish(manifest, &out)
        }
        Command::Ablate(args) => {
            let (cfg, out) = prepare(&args)?;
            let manifest = harness::ablate(&cfg, &out).map_err(classify)?;
            finish(manifest, &out)
        }
        Command::Report(args) => {
            let table = harness::summarize(&args.out).map_err(|e| Failure::Runtime(e.into()))?;
            print_summary(&table);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
