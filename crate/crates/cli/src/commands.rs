//! One function per subcommand. Each returns a small JSON summary that the
//! binary prints on success.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use kr1_core::evalsuite::{self, MetricReport};
use kr1_core::experiment::{self, TaskData};
use kr1_core::policy::PolicyParams;
use kr1_core::trainer::{self, RunArtifacts};
use kr1_core::world::{self, ExampleSet, KnowledgeWorld};
use kr1_core::Error;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::CliConfig;

pub const OUT_ROOT_ENV: &str = "KR1_OUT_ROOT";
pub const DEFAULT_OUT_ROOT: &str = "runs";

pub const CONFIG_FILE: &str = "config.toml";
pub const WORLD_FILE: &str = "world.jsonl";
pub const TRAIN_FILE: &str = "train.jsonl";
pub const TEST_FILE: &str = "test.jsonl";
pub const PRETRAINED_FILE: &str = "pretrained.params";
pub const PRETRAIN_SUMMARY_FILE: &str = "pretrain.json";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const CURVES_FILE: &str = "curves.csv";
pub const RUN_LOG_FILE: &str = "run_log.jsonl";
pub const REPORT_FILE: &str = "report.json";
pub const REPORT_CSV_FILE: &str = "report.csv";
pub const TRACE_FILE: &str = "traces.jsonl";
pub const SUBSETS_FILE: &str = "subsets.json";

/// `--out` if given, otherwise `$KR1_OUT_ROOT/<default_name>`.
pub fn output_dir(explicit: Option<&Path>, default_name: &str) -> PathBuf {
    match explicit {
        Some(p) => p.to_path_buf(),
        None => {
            let root = std::env::var_os(OUT_ROOT_ENV)
                .map(PathBuf::from)
                .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_ROOT));
            root.join(default_name)
        }
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    Ok(())
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn write_json(path: &Path, v: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(v)?;
    text.push('\n');
    write_file(path, text)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_params(path: &Path, params: &PolicyParams) -> Result<()> {
    let mut buf = Vec::new();
    params.write_to(&mut buf)?;
    write_file(path, buf)
}

fn read_params(path: &Path) -> Result<PolicyParams> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(PolicyParams::read_from(&mut bytes.as_slice())?)
}

pub fn gen_world(cfg: &CliConfig, out: &Path) -> Result<Value> {
    let data = experiment::build_data(&cfg.task, cfg.run.seed)?;
    create_dir(out)?;
    world::save_world(&data.world, out.join(WORLD_FILE))?;
    world::save_examples(&data.train, out.join(TRAIN_FILE))?;
    world::save_examples(&data.test, out.join(TEST_FILE))?;
    write_file(&out.join(CONFIG_FILE), cfg.to_toml())?;
    Ok(json!({
        "command": "gen-world",
        "out": out,
        "facts": data.world.facts.len(),
        "belief_errors": data.world.belief_errors(),
        "train": data.train.len(),
        "test": data.test.len(),
    }))
}

fn load_data(dir: &Path) -> Result<TaskData> {
    let world = world::load_world(dir.join(WORLD_FILE))?;
    let train = world::load_examples(dir.join(TRAIN_FILE))?;
    let test = world::load_examples(dir.join(TEST_FILE))?;
    let overlap = train.ids().intersection(&test.ids()).count();
    if overlap > 0 {
        return Err(Error::Config(format!("{overlap} example ids appear in both splits")).into());
    }
    Ok(TaskData { world, train, test })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PretrainSummary {
    pub epochs: usize,
    pub fit_accuracy: f64,
    pub final_log_likelihood: f64,
    pub belief_accuracy: f64,
    pub query_only_gold_accuracy: f64,
}

fn pretrain_world(cfg: &CliConfig, world: &KnowledgeWorld) -> Result<(PolicyParams, PretrainSummary)> {
    let (params, report) = experiment::pretrain_policy(&cfg.task, world, cfg.run.seed)?;
    let (belief, gold) = experiment::belief_and_gold_accuracy(&params, world)?;
    Ok((
        params,
        PretrainSummary {
            epochs: report.epochs,
            fit_accuracy: report.greedy_accuracy,
            final_log_likelihood: report.final_log_likelihood,
            belief_accuracy: belief,
            query_only_gold_accuracy: gold,
        },
    ))
}

pub fn pretrain(cfg: &CliConfig, data_dir: &Path, out: &Path) -> Result<Value> {
    let world = world::load_world(data_dir.join(WORLD_FILE))?;
    let (params, summary) = pretrain_world(cfg, &world)?;
    create_dir(out)?;
    write_params(&out.join(PRETRAINED_FILE), &params)?;
    write_json(&out.join(PRETRAIN_SUMMARY_FILE), &summary)?;
    if out != data_dir {
        write_file(&out.join(CONFIG_FILE), cfg.to_toml())?;
    }
    Ok(json!({ "command": "pretrain", "out": out, "summary": summary }))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub mode: String,
    pub seed: u64,
    pub steps: usize,
    pub steps_to_90pct_ctx_reward: Option<usize>,
    pub final_ctx_reward: Option<f64>,
    pub metrics: MetricReport,
}

fn write_run(out: &Path, cfg: &CliConfig, art: &RunArtifacts) -> Result<RunReport> {
    write_file(&out.join(CURVES_FILE), trainer::curves_csv(&art.curves))?;
    write_file(&out.join(RUN_LOG_FILE), trainer::run_log_jsonl(&art.curves))?;
    if cfg.run.trace {
        let mut f = fs::File::create(out.join(TRACE_FILE)).map_err(|e| Error::io(out.join(TRACE_FILE), e))?;
        for r in &art.traces {
            writeln!(f, "{}", serde_json::to_string(r)?)?;
        }
    }
    let ctx: Vec<f64> = art.curves.iter().filter_map(|c| c.stats.reward_ctx).collect();
    let tail = ctx.len().min(20);
    let report = RunReport {
        mode: cfg.run.mode.name().to_string(),
        seed: cfg.run.seed,
        steps: art.curves.len(),
        steps_to_90pct_ctx_reward: trainer::steps_to_fraction_of_final(&ctx, 0.9, 20),
        final_ctx_reward: (tail > 0).then(|| ctx[ctx.len() - tail..].iter().sum::<f64>() / tail as f64),
        metrics: art.final_eval.report,
    };
    write_json(&out.join(REPORT_FILE), &report)?;
    write_file(
        &out.join(REPORT_CSV_FILE),
        format!("{}\n{}\n", MetricReport::csv_header(), report.metrics.csv_row()),
    )?;
    Ok(report)
}

pub fn train(cfg: &CliConfig, data_dir: Option<&Path>, init: Option<&Path>, out: &Path) -> Result<Value> {
    let data = match data_dir {
        Some(d) => load_data(d)?,
        None => experiment::build_data(&cfg.task, cfg.run.seed)?,
    };
    let init = init
        .map(Path::to_path_buf)
        .or_else(|| data_dir.map(|d| d.join(PRETRAINED_FILE)).filter(|p| p.exists()));
    let initial = match init {
        Some(p) => read_params(&p)?,
        None => pretrain_world(cfg, &data.world)?.0,
    };
    create_dir(out)?;
    write_file(&out.join(CONFIG_FILE), cfg.to_toml())?;
    let ckpt = out.join(CHECKPOINT_DIR);
    let art = trainer::run(
        &cfg.run_config(),
        &initial,
        &data.train.examples,
        &data.test.examples,
        Some(&ckpt),
    )?;
    let final_state = ckpt.join(trainer::checkpoint_name(art.final_state.step));
    if !final_state.exists() {
        trainer::save_checkpoint(&art.final_state, &final_state)?;
    }
    let report = write_run(out, cfg, &art)?;
    Ok(json!({ "command": "train", "out": out, "report": report }))
}

/// A training checkpoint or a bare parameter file. For a checkpoint the
/// reference policy inside it is the natural query-only probe.
fn load_policy(path: &Path) -> Result<(PolicyParams, Option<PolicyParams>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(b"KR1TRAIN") {
        let state = trainer::decode_checkpoint(&bytes)?;
        Ok((state.params, Some(state.ref_params)))
    } else {
        Ok((PolicyParams::read_from(&mut bytes.as_slice())?, None))
    }
}

#[derive(Debug, Clone, Serialize)]
struct SubsetIds {
    cq: Vec<u64>,
    tife: Vec<u64>,
    fite: Vec<u64>,
    fe: Vec<u64>,
    te: Vec<u64>,
    tite: Vec<u64>,
    tite_strict: Vec<u64>,
    fife: Vec<u64>,
    scti: Vec<u64>,
    scfi: Vec<u64>,
}

fn subset_ids(ids: &[u64], s: &evalsuite::Subsets) -> SubsetIds {
    let m = |v: &Vec<usize>| v.iter().map(|&i| ids[i]).collect();
    SubsetIds {
        cq: m(&s.cq),
        tife: m(&s.tife),
        fite: m(&s.fite),
        fe: m(&s.fe),
        te: m(&s.te),
        tite: m(&s.tite),
        tite_strict: m(&s.tite_strict),
        fife: m(&s.fife),
        scti: m(&s.scti),
        scfi: m(&s.scfi),
    }
}

fn sizes(s: &SubsetIds) -> Value {
    json!({
        "cq": s.cq.len(), "tife": s.tife.len(), "fite": s.fite.len(), "fe": s.fe.len(),
        "te": s.te.len(), "tite": s.tite.len(), "tite_strict": s.tite_strict.len(),
        "fife": s.fife.len(), "scti": s.scti.len(), "scfi": s.scfi.len(),
    })
}

fn write_report(out: &Path, report: &MetricReport, subsets: &SubsetIds) -> Result<()> {
    create_dir(out)?;
    write_json(&out.join(REPORT_FILE), report)?;
    write_file(
        &out.join(REPORT_CSV_FILE),
        format!("{}\n{}\n", MetricReport::csv_header(), report.csv_row()),
    )?;
    write_json(&out.join(SUBSETS_FILE), subsets)
}

pub fn eval(
    cfg: &CliConfig,
    data_dir: &Path,
    checkpoint: &Path,
    probe: Option<&Path>,
    split: &str,
    out: &Path,
) -> Result<Value> {
    let set: ExampleSet = match split {
        "test" => world::load_examples(data_dir.join(TEST_FILE))?,
        "train" => world::load_examples(data_dir.join(TRAIN_FILE))?,
        other => return Err(Error::Config(format!("split must be `train` or `test`, got `{other}`")).into()),
    };
    let (policy, embedded_probe) = load_policy(checkpoint)?;
    let probe = match probe {
        Some(p) => load_policy(p)?.0,
        None => embedded_probe
            .or_else(|| {
                let p = data_dir.join(PRETRAINED_FILE);
                p.exists().then(|| read_params(&p).ok()).flatten()
            })
            .ok_or_else(|| anyhow!("no query-only probe: pass --probe or use a training checkpoint"))?,
    };
    let ev = evalsuite::evaluate_policy(&probe, &policy, &set.examples, cfg.hp.max_new_tokens)?;
    let ids: Vec<u64> = set.examples.iter().map(|e| e.id).collect();
    let subsets = subset_ids(&ids, &evalsuite::partition(&ev.labels));
    write_report(out, &ev.report, &subsets)?;
    Ok(json!({ "command": "eval", "out": out, "sizes": sizes(&subsets), "report": ev.report }))
}

pub fn partition(predictions: &Path, out: Option<&Path>) -> Result<Value> {
    let records = world::load_predictions(predictions)?;
    let (labels, report) = evalsuite::evaluate_predictions(&records)?;
    let ids: Vec<u64> = records.iter().map(|r| r.id).collect();
    let subsets = subset_ids(&ids, &evalsuite::partition(&labels));
    if let Some(out) = out {
        write_report(out, &report, &subsets)?;
    }
    Ok(json!({ "command": "partition", "sizes": sizes(&subsets), "subsets": subsets, "report": report }))
}

/// One row per run directory, mirroring a results table: run, mode, seed,
/// then every metric and subset size.
pub fn report(runs: &[PathBuf]) -> Result<String> {
    if runs.is_empty() {
        return Err(Error::Config("report needs at least one run directory".into()).into());
    }
    let mut out = format!("run,mode,seed,steps,{}\n", MetricReport::csv_header());
    for dir in runs {
        let r: RunReport = read_json(&dir.join(REPORT_FILE))?;
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
            r.mode,
            r.seed,
            r.steps,
            r.metrics.csv_row()
        ));
    }
    Ok(out)
}
