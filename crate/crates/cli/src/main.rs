use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use kr1_cli::commands::{self, output_dir};
use kr1_cli::config::{parse_assignment, parse_config, CliConfig};
use serde_json::json;
use toml::Value;

#[derive(Parser)]
#[command(name = "kr1", version, about = "Knowledge-conflict policy optimization on synthetic worlds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a world and its train/test example files.
    GenWorld {
        #[command(flatten)]
        common: Common,
    },
    /// Pretrain a policy on a generated world.
    Pretrain {
        #[command(flatten)]
        common: Common,
        /// Directory written by gen-world.
        #[arg(long)]
        data: PathBuf,
    },
    /// Run policy optimization and write a run directory.
    Train {
        #[command(flatten)]
        common: Common,
        /// Directory written by gen-world; generated in memory when absent.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Initial parameters; defaults to <data>/pretrained.params, else pretrains in memory.
        #[arg(long)]
        init: Option<PathBuf>,
    },
    /// Compute the conflict metrics of a checkpoint or parameter file.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Policy used for the query-only labels.
        #[arg(long)]
        probe: Option<PathBuf>,
        #[arg(long, default_value = "test", value_parser = ["train", "test"])]
        split: String,
    },
    /// Partition an external prediction file and compute its metrics.
    Partition {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Merge run directories into one comparison table.
    Report {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Write the table here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Clone, Default)]
struct Common {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Any configuration key, e.g. `--set dim=32`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long, value_parser = ["kr1", "grpo_rag", "grpo_norag"])]
    mode: Option<String>,
    /// Number of optimization steps.
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    n1: Option<usize>,
    #[arg(long)]
    n2: Option<usize>,
    #[arg(long)]
    clip_eps: Option<f64>,
    #[arg(long)]
    beta_kl: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta_adv: Option<f64>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long, value_parser = ["sgd", "adam"])]
    optimizer: Option<String>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    eval_every: Option<usize>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
    #[arg(long)]
    threads: Option<usize>,
}

impl Common {
    fn overrides(&self) -> Result<Vec<(String, Value)>> {
        let mut out = self
            .set
            .iter()
            .map(|s| parse_assignment(s))
            .collect::<Result<Vec<_>, _>>()?;
        let int = |k: &str, v: Option<usize>| v.map(|v| (k.to_string(), Value::Integer(v as i64)));
        let float = |k: &str, v: Option<f64>| v.map(|v| (k.to_string(), Value::Float(v)));
        let string = |k: &str, v: &Option<String>| v.clone().map(|v| (k.to_string(), Value::String(v)));
        out.extend(
            [
                self.seed.map(|s| ("seed".to_string(), Value::Integer(s as i64))),
                string("mode", &self.mode),
                int("steps_max", self.steps),
                float("lr", self.lr),
                int("n1", self.n1),
                int("n2", self.n2),
                float("clip_eps", self.clip_eps),
                float("beta_kl", self.beta_kl),
                float("alpha", self.alpha),
                float("beta_adv", self.beta_adv),
                float("temperature", self.temperature),
                string("optimizer", &self.optimizer),
                int("batch_size", self.batch_size),
                int("eval_every", self.eval_every),
                int("checkpoint_every", self.checkpoint_every),
                int("threads", self.threads),
            ]
            .into_iter()
            .flatten(),
        );
        Ok(out)
    }

    fn resolve(&self) -> Result<CliConfig> {
        Ok(parse_config(self.config.as_deref(), &self.overrides()?)?)
    }
}

fn execute(cli: Cli) -> Result<String> {
    let summary = match cli.command {
        Command::GenWorld { common } => {
            let cfg = common.resolve()?;
            let out = output_dir(common.out.as_deref(), &format!("data_seed{}", cfg.run.seed));
            commands::gen_world(&cfg, &out)?
        }
        Command::Pretrain { common, data } => {
            let cfg = common.resolve()?;
            let out = common.out.clone().unwrap_or_else(|| data.clone());
            commands::pretrain(&cfg, &data, &out)?
        }
        Command::Train { common, data, init } => {
            let cfg = common.resolve()?;
            let name = format!("{}_seed{}", cfg.run.mode.name(), cfg.run.seed);
            let out = output_dir(common.out.as_deref(), &name);
            commands::train(&cfg, data.as_deref(), init.as_deref(), &out)?
        }
        Command::Eval { common, data, checkpoint, probe, split } => {
            let cfg = common.resolve()?;
            let out = output_dir(common.out.as_deref(), &format!("eval_seed{}", cfg.run.seed));
            commands::eval(&cfg, &data, &checkpoint, probe.as_deref(), &split, &out)?
        }
        Command::Partition { predictions, out } => commands::partition(&predictions, out.as_deref())?,
        Command::Report { runs, out } => {
            let table = commands::report(&runs)?;
            return match out {
                Some(path) => {
                    std::fs::write(&path, &table).map_err(|e| kr1_core::Error::io(&path, e))?;
                    Ok(json!({ "command": "report", "out": path, "rows": runs.len() }).to_string())
                }
                None => Ok(table.trim_end().to_string()),
            };
        }
    };
    Ok(summary.to_string())
}

/// The error chain joined by ": ", skipping causes already quoted by the
/// message above them.
fn message(e: &anyhow::Error) -> String {
    let mut parts: Vec<String> = Vec::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !parts.last().is_some_and(|p| p.contains(&text)) {
            parts.push(text);
        }
    }
    parts.join(": ")
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(line) => {
            println!("{line}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            let kind = e.downcast_ref::<kr1_core::Error>().map(|k| k.kind()).unwrap_or("error");
            let record = json!({ "error": kind, "message": message(&e) });
            eprintln!("{record}");
            ExitCode::FAILURE
        }
    }
}
