use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use uavnet::harness::commands::{self, cmd_adapt, cmd_bench, cmd_eval, cmd_export_traj, cmd_meta_train, cmd_train};
use uavnet::harness::{Algo, ExperimentConfig};
use uavnet::Result;

#[derive(Parser, Debug)]
#[command(name = "uavnet", version, about = "UAV-UGV emergency network simulator and trainer")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Debug)]
struct Common {
    /// TOML config path or built-in preset name (default, smoke).
    #[arg(long, default_value = "smoke")]
    config: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    /// Override the number of A3C workers.
    #[arg(long)]
    workers: Option<usize>,
    /// Single-threaded, fully deterministic execution.
    #[arg(long)]
    serial: bool,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Train with A3C (or meta-A3C with --algo meta-a3c).
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "a3c")]
        algo: Algo,
        /// Override the number of global updates.
        #[arg(long)]
        updates: Option<u64>,
        #[command(flatten)]
        meta: MetaFlags,
    },
    /// Meta-train over the task distribution.
    MetaTrain {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        meta: MetaFlags,
    },
    /// Adapt a checkpoint to a new task and report before/after rewards.
    Adapt {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 0)]
        task_seed: u64,
        /// Adaptation steps; defaults to the config's eval.adapt_steps.
        #[arg(long)]
        steps: Option<usize>,
        #[command(flatten)]
        meta: MetaFlags,
    },
    /// Greedy evaluation, optionally sweeping the user count.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Without a checkpoint a freshly initialized policy is evaluated.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        episodes: Option<usize>,
        /// Comma-separated user counts, e.g. 20,60,100.
        #[arg(long, value_delimiter = ',')]
        sweep_users: Vec<usize>,
    },
    /// Export one greedy episode as a trajectory table.
    ExportTraj {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        task_seed: u64,
        #[arg(long, default_value_t = 0)]
        episode_seed: u64,
    },
    /// Time training episodes per algorithm and config.
    Bench {
        /// Config paths or preset names; repeat for several.
        #[arg(long = "config", default_values_t = vec!["smoke".to_string()])]
        configs: Vec<String>,
        #[arg(long = "algo", default_values_t = vec![Algo::A3c, Algo::MetaA3c])]
        algos: Vec<Algo>,
        #[arg(long, default_value_t = 5)]
        reps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
    },
}

#[derive(Args, Debug)]
struct MetaFlags {
    #[arg(long)]
    inner_steps: Option<usize>,
    #[arg(long)]
    meta_batch: Option<usize>,
    /// Override the number of meta-iterations.
    #[arg(long)]
    iterations: Option<u64>,
}

fn load(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(w) = common.workers {
        cfg.train.num_workers = w;
    }
    if common.serial {
        cfg.train.serial = true;
        cfg.meta.parallel = false;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn apply_meta(cfg: &mut ExperimentConfig, m: &MetaFlags) -> Result<()> {
    if let Some(k) = m.inner_steps {
        cfg.meta.inner_steps = k;
    }
    if let Some(b) = m.meta_batch {
        cfg.meta.meta_batch = b;
    }
    if let Some(n) = m.iterations {
        cfg.meta.iterations = n;
    }
    cfg.validate()
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Train { common, algo, updates, meta } => {
            let mut cfg = load(&common)?;
            if let Some(n) = updates {
                cfg.train.max_updates = n;
            }
            apply_meta(&mut cfg, &meta)?;
            let out = match algo {
                Algo::A3c => cmd_train(&cfg, common.seed, &common.out)?,
                Algo::MetaA3c => cmd_meta_train(&cfg, common.seed, &common.out)?,
            };
            println!("{} rows -> {}", out.rows, common.out.join(commands::METRICS_FILE).display());
            println!("checkpoint -> {}", out.checkpoint.display());
        }
        Cmd::MetaTrain { common, meta } => {
            let mut cfg = load(&common)?;
            apply_meta(&mut cfg, &meta)?;
            let out = cmd_meta_train(&cfg, common.seed, &common.out)?;
            println!("{} rows -> {}", out.rows, common.out.join(commands::METRICS_FILE).display());
            println!("checkpoint -> {}", out.checkpoint.display());
        }
        Cmd::Adapt { common, checkpoint, task_seed, steps, meta } => {
            let mut cfg = load(&common)?;
            apply_meta(&mut cfg, &meta)?;
            let k = steps.unwrap_or(cfg.eval.adapt_steps);
            let r = cmd_adapt(&cfg, &checkpoint, task_seed, k, common.seed, &common.out)?;
            println!(
                "task {} after {} steps: reward {:.4} -> {:.4}, sum rate {:.4e} -> {:.4e} bit/s",
                r.task_id, r.steps, r.pre.mean_reward, r.post.mean_reward, r.pre.mean_sum_rate, r.post.mean_sum_rate
            );
        }
        Cmd::Eval { common, checkpoint, episodes, sweep_users } => {
            let mut cfg = load(&common)?;
            if let Some(e) = episodes {
                cfg.eval.episodes = e;
            }
            cfg.validate()?;
            for row in cmd_eval(&cfg, checkpoint.as_deref(), &sweep_users, common.seed, &common.out)? {
                let s = &row.stats;
                println!(
                    "K={:<4} sum rate {:.4e} ± {:.3e} bit/s, QoS {:.3}, reward {:.4}",
                    row.users, s.mean_sum_rate, s.std_sum_rate, s.qos_fraction, s.mean_reward
                );
            }
        }
        Cmd::ExportTraj { common, checkpoint, task_seed, episode_seed } => {
            let cfg = load(&common)?;
            let rows = cmd_export_traj(&cfg, checkpoint.as_deref(), task_seed, episode_seed, common.seed, &common.out)?;
            println!("{} rows -> {}", rows.len(), common.out.join("traj.csv").display());
        }
        Cmd::Bench { configs, algos, reps, seed, out } => {
            let cfgs = configs.iter().map(|c| ExperimentConfig::load(c)).collect::<Result<Vec<_>>>()?;
            for r in cmd_bench(&cfgs, &algos, reps, seed, &out)? {
                println!(
                    "{:<9} {:<10} episode {:.4e} ± {:.2e} s, rollout {:.4e} s",
                    r.algo.to_string(),
                    r.config,
                    r.mean_episode_secs,
                    r.std_episode_secs,
                    r.mean_rollout_secs
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 1 } else { 2 })
        }
    }
}
