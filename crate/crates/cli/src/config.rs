//! Flat TOML configuration.
//!
//! Every key lives at the top level: task keys (world and pretraining), the
//! hyperparameters, and the run settings. Precedence, lowest first: built-in
//! defaults, the config file, `--set key=value`, dedicated flags.

use std::fs;
use std::path::Path;

use kr1_core::experiment::TaskSpec;
use kr1_core::objective::HyperParams;
use kr1_core::trainer::{Mode, OptimizerKind, RunConfig};
use kr1_core::Error;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSettings {
    pub mode: Mode,
    pub steps_max: usize,
    pub batch_size: usize,
    pub eval_every: usize,
    pub checkpoint_every: usize,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub threads: usize,
    pub trace: bool,
}

impl Default for RunSettings {
    fn default() -> Self {
        let r = RunConfig::default();
        RunSettings {
            mode: r.mode,
            steps_max: r.steps_max,
            batch_size: r.batch_size,
            eval_every: r.eval_every,
            checkpoint_every: r.checkpoint_every,
            optimizer: r.optimizer,
            seed: r.seed,
            threads: r.threads,
            trace: r.trace,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CliConfig {
    pub task: TaskSpec,
    pub hp: HyperParams,
    pub run: RunSettings,
}

impl CliConfig {
    pub fn run_config(&self) -> RunConfig {
        RunConfig {
            hp: self.hp.clone(),
            mode: self.run.mode,
            steps_max: self.run.steps_max,
            batch_size: self.run.batch_size,
            eval_every: self.run.eval_every,
            checkpoint_every: self.run.checkpoint_every,
            optimizer: self.run.optimizer,
            seed: self.run.seed,
            threads: self.run.threads,
            trace: self.run.trace,
        }
    }

    /// The fully resolved configuration as one flat, key-sorted table.
    pub fn to_toml(&self) -> String {
        let mut flat = Table::new();
        for part in [table_of(&self.task), table_of(&self.hp), table_of(&self.run)] {
            flat.extend(part);
        }
        toml::to_string(&flat).expect("config serializes")
    }
}

fn table_of<T: Serialize>(v: &T) -> Table {
    match Value::try_from(v).expect("config section serializes") {
        Value::Table(t) => t,
        _ => unreachable!("config sections are structs"),
    }
}

/// Which section each known key belongs to.
fn sections() -> [(&'static str, Vec<String>); 3] {
    let keys = |t: Table| t.keys().cloned().collect::<Vec<_>>();
    [
        ("task", keys(table_of(&TaskSpec::default()))),
        ("hp", keys(table_of(&HyperParams::default()))),
        ("run", keys(table_of(&RunSettings::default()))),
    ]
}

pub fn known_keys() -> Vec<String> {
    let mut all: Vec<String> = sections().into_iter().flat_map(|(_, k)| k).collect();
    all.sort();
    all
}

fn suggestion(key: &str) -> Option<String> {
    known_keys()
        .into_iter()
        .map(|k| (strsim::damerau_levenshtein(key, &k), k))
        .filter(|(d, k)| *d <= 2.max(k.len() / 3))
        .min()
        .map(|(_, k)| k)
}

fn config_error(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

/// Parses the right-hand side of `--set key=value`. Anything that is not a
/// TOML literal is taken as a bare string, so `--set mode=kr1` works.
pub fn parse_assignment(raw: &str) -> Result<(String, Value), Error> {
    let (key, value) = raw
        .split_once('=')
        .ok_or_else(|| config_error(format!("expected key=value, got `{raw}`")))?;
    let key = key.trim().to_string();
    let value = value.trim();
    let parsed = format!("v = {value}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(value.to_string()));
    Ok((key, parsed))
}

/// Resolves a configuration from an optional file plus overrides. Later
/// overrides win over earlier ones.
pub fn parse_config(path: Option<&Path>, overrides: &[(String, Value)]) -> Result<CliConfig, Error> {
    let mut table = match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            text.parse::<Table>()
                .map_err(|e| config_error(format!("{}: {}", p.display(), e.message())))?
        }
        None => Table::new(),
    };
    for (k, v) in overrides {
        table.insert(k.clone(), v.clone());
    }
    resolve(table)
}

/// Deserializes one section. On failure, retries key by key so the error
/// names the offending key.
fn section<T: DeserializeOwned>(table: Table) -> Result<T, Error> {
    let whole: Result<T, toml::de::Error> = Value::Table(table.clone()).try_into();
    whole.map_err(|e| {
        for (k, v) in table {
            let single: Result<T, _> = Value::Table(Table::from_iter([(k.clone(), v)])).try_into();
            if let Err(e) = single {
                return config_error(format!("key `{k}`: {}", e.message()));
            }
        }
        config_error(e.message().to_string())
    })
}

fn resolve(table: Table) -> Result<CliConfig, Error> {
    let secs = sections();
    let mut parts: [Table; 3] = Default::default();
    for (key, value) in table {
        let Some(i) = secs.iter().position(|(_, keys)| keys.contains(&key)) else {
            let hint = suggestion(&key).map(|s| format!("; did you mean `{s}`?")).unwrap_or_default();
            return Err(config_error(format!("unknown key `{key}`{hint}")));
        };
        parts[i].insert(key, value);
    }
    let [task, hp, run] = parts;
    let (task, hp, run) = (section(task)?, section(hp)?, section(run)?);
    let cfg = CliConfig { task, hp, run };
    cfg.run_config().validate()?;
    Ok(cfg)
}
