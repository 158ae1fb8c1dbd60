//! `merci` — train, evaluate, and inspect count-based exploration runs.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use merci_core::config::RunConfig;
use merci_core::harness::{
    self, ablate, count_demo, evaluate, pretrain_cfn, train, write_eval_csv, AblationMode,
};
use merci_core::Error;

#[derive(Parser)]
#[command(name = "merci", about = "Count-based intrinsic-reward exploration lab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the training loop described by a config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Override the config's master seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Pretrain the bonus model on rollouts from the initial policy.
    PretrainCfn {
        #[arg(long)]
        config: PathBuf,
    },
    /// Evaluate a policy checkpoint with pass@k / mean@k.
    Eval {
        /// Path to a policy checkpoint (e.g. runs/x/checkpoints/policy.json).
        #[arg(long)]
        checkpoint: PathBuf,
        /// Comma-separated k values.
        #[arg(long, value_delimiter = ',', default_value = "1,8,16")]
        k: Vec<usize>,
        #[arg(long, default_value_t = 64)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Config describing the environment; defaults to the
        /// config.resolved.json two levels above the checkpoint.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run the base config plus one-flag ablation variants on shared seeds.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated modes: no_ps,no_noise,cum_std,token_int
        #[arg(long, value_delimiter = ',')]
        modes: Vec<String>,
    },
    /// Train the bonus model on a synthetic visitation stream and report
    /// count-recovery quality.
    CountDemo {
        #[arg(long)]
        config: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Train { config, seed } => {
            let mut cfg = RunConfig::from_path(&config)?;
            if let Some(seed) = seed {
                cfg.train.seed = seed;
            }
            let artifacts = train(&cfg)?;
            let last = artifacts.records.last();
            println!(
                "run complete: {} iterations into {}",
                artifacts.records.len(),
                artifacts.run_dir.display()
            );
            if let Some(r) = last {
                println!(
                    "final: mean_reward {:.4}, success_rate {:.4}, distinct_states {}",
                    r.mean_outcome_reward, r.success_rate, r.distinct_states
                );
            }
            match artifacts.first_success_iteration {
                Some(t) => println!("first training success at iteration {t}"),
                None => println!("no training success within budget"),
            }
            Ok(())
        }
        Command::PretrainCfn { config } => {
            let cfg = RunConfig::from_path(&config)?;
            let (_, report) = pretrain_cfn(&cfg)?;
            println!(
                "pretrained bonus model: {} steps over {} pairs ({} distinct states), loss {:.4} -> {:.4}",
                report.steps, report.pairs, report.distinct_states, report.first_loss, report.final_loss
            );
            Ok(())
        }
        Command::Eval {
            checkpoint,
            k,
            samples,
            seed,
            config,
        } => {
            let cfg_path = match config {
                Some(p) => p,
                None => checkpoint
                    .parent()
                    .and_then(|p| p.parent())
                    .map(|p| p.join("config.resolved.json"))
                    .ok_or_else(|| Error::config("cannot locate config next to checkpoint"))?,
            };
            let cfg = RunConfig::from_path(&cfg_path)?;
            let policy = harness::load_net(&checkpoint)?;
            let report = evaluate(&policy, &cfg.env, cfg.policy.window, &k, samples, seed)?;
            let csv_path = checkpoint
                .parent()
                .and_then(|p| p.parent())
                .map(|p| p.join("eval.csv"))
                .unwrap_or_else(|| PathBuf::from("eval.csv"));
            write_eval_csv(&csv_path, &report)?;
            for row in &report.rows {
                println!(
                    "prompt {} k={}: pass@k {:.4} mean@k {:.4} ({} successes / {} samples)",
                    row.prompt_id, row.k, row.pass_at_k, row.mean_at_k, row.successes, row.samples
                );
            }
            println!("wrote {}", csv_path.display());
            Ok(())
        }
        Command::Ablate { config, modes } => {
            let cfg = RunConfig::from_path(&config)?;
            let modes: Result<Vec<AblationMode>, Error> =
                modes.iter().map(|m| m.parse()).collect();
            let report = ablate(&cfg, &modes?)?;
            print!("{}", report.to_csv());
            Ok(())
        }
        Command::CountDemo { config } => {
            let cfg = RunConfig::from_path(&config)?;
            let report = count_demo(&cfg)?;
            print!("{}", report.render());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            match err {
                Error::Config(_) => ExitCode::from(2),
                Error::Numerical(_) => ExitCode::from(3),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
