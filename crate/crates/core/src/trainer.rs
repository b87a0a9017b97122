//! Training loop.
//!
//! Each step samples a batch of examples, collects both rollout groups per
//! example under the old policy, computes advantages and the per-example
//! objective, ascends the batch-mean gradient, then refreshes the old policy.
//! The reference policy is the initial (pretrained) policy and never moves.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::advantage;
use crate::error::{Error, Result};
use crate::evalsuite::{self, MetricReport, SubsetLabels};
use crate::objective::{self, HyperParams, ObjectiveParts};
use crate::policy::{read_u64, GradVector, PolicyParams};
use crate::rng::{self, Purpose};
use crate::rollout::{self, RolloutBatch, StreamKey, TraceRecord};
use crate::world::{make_prompts, Example};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Joint parametric + contextual sampling with the exploration term.
    #[default]
    Kr1,
    /// Group-relative optimization on the retrieval-augmented prompt only.
    GrpoRag,
    /// Group-relative optimization on the query-only prompt only.
    GrpoNorag,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Kr1 => "kr1",
            Mode::GrpoRag => "grpo_rag",
            Mode::GrpoNorag => "grpo_norag",
        }
    }

    /// Hyperparameters the objective actually sees. The baselines spend the
    /// same rollout budget `n1 + n2` on a single prompt.
    pub fn effective(self, hp: &HyperParams) -> HyperParams {
        let budget = hp.n1 + hp.n2;
        match self {
            Mode::Kr1 => hp.clone(),
            Mode::GrpoRag => HyperParams {
                n1: 0,
                n2: budget,
                exploration: false,
                ..hp.clone()
            },
            Mode::GrpoNorag => HyperParams {
                n1: budget,
                n2: 0,
                exploration: false,
                ..hp.clone()
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Sgd,
    Adam,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub t: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, len: usize) -> Self {
        let moments = if kind == OptimizerKind::Adam { len } else { 0 };
        OptimizerState {
            kind,
            t: 0,
            m: vec![0.0; moments],
            v: vec![0.0; moments],
        }
    }

    /// Gradient ascent step.
    fn apply(&mut self, params: &mut PolicyParams, grad: &GradVector, lr: f64) {
        match self.kind {
            OptimizerKind::Sgd => params.ascend(grad, lr),
            OptimizerKind::Adam => {
                self.t += 1;
                let c1 = 1.0 - ADAM_BETA1.powi(self.t as i32);
                let c2 = 1.0 - ADAM_BETA2.powi(self.t as i32);
                for (((p, g), m), v) in params
                    .values_mut()
                    .iter_mut()
                    .zip(&grad.0)
                    .zip(&mut self.m)
                    .zip(&mut self.v)
                {
                    *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                    *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                    *p += lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: PolicyParams,
    pub old_params: PolicyParams,
    pub ref_params: PolicyParams,
    /// Completed steps. Rollout and batch streams are keyed by step, so this
    /// is also the position of every random stream.
    pub step: u64,
    pub seed: u64,
    pub optimizer: OptimizerState,
}

impl TrainState {
    pub fn new(initial: PolicyParams, seed: u64, optimizer: OptimizerKind) -> Self {
        let len = initial.values().len();
        TrainState {
            old_params: initial.clone(),
            ref_params: initial.clone(),
            params: initial,
            step: 0,
            seed,
            optimizer: OptimizerState::new(optimizer, len),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub hp: HyperParams,
    pub mode: Mode,
    pub steps_max: usize,
    pub batch_size: usize,
    /// Evaluate every this many steps; 0 evaluates only after the last step.
    pub eval_every: usize,
    /// Write a checkpoint every this many steps; 0 disables checkpoints.
    pub checkpoint_every: usize,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    /// Worker threads; 0 uses the rayon default.
    pub threads: usize,
    /// Keep per-rollout trace records.
    pub trace: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            hp: HyperParams::default(),
            mode: Mode::Kr1,
            steps_max: 300,
            batch_size: 8,
            eval_every: 0,
            checkpoint_every: 0,
            optimizer: OptimizerKind::Sgd,
            seed: 0,
            threads: 0,
            trace: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps_max == 0 {
            return Err(Error::Config("steps_max must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        self.hp.validate()?;
        self.mode.effective(&self.hp).validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    /// 1-based index of the completed step.
    pub step: u64,
    pub reward_mean: f64,
    pub reward_param: Option<f64>,
    pub reward_ctx: Option<f64>,
    pub j: f64,
    pub l: f64,
    pub l_ctx: f64,
    pub l_hat: f64,
    pub kl: f64,
    pub grad_norm: f64,
}

/// Training examples used at `step`, ascending by position.
pub fn select_batch(seed: u64, step: u64, available: usize, batch_size: usize) -> Vec<usize> {
    if batch_size >= available {
        return (0..available).collect();
    }
    let mut rng = rng::stream(seed, Purpose::Batch, &[step]);
    let mut picked = index::sample(&mut rng, available, batch_size).into_vec();
    picked.sort_unstable();
    picked
}

struct ExampleOutcome {
    rollouts: RolloutBatch,
    parts: ObjectiveParts,
}

fn example_outcome(state: &TrainState, example: &Example, hp: &HyperParams) -> Result<ExampleOutcome> {
    let prompts = make_prompts(example);
    let rollouts = rollout::collect_groups(
        &state.old_params,
        example,
        &prompts,
        &hp.sampling(),
        StreamKey {
            seed: state.seed,
            step: state.step,
        },
    )?;
    let adv = advantage::compute(&rollouts.rewards_param(), &rollouts.rewards_ctx(), &hp.advantage());
    let parts = objective::total_objective(&state.params, &state.ref_params, &prompts, &rollouts, &adv, hp)?;
    for (term, v) in [
        ("l", parts.l),
        ("l_ctx", parts.l_ctx),
        ("l_hat", parts.l_hat),
        ("kl", parts.kl),
    ] {
        if !v.is_finite() {
            return Err(Error::NonFinite {
                example_id: example.id,
                term: term.into(),
            });
        }
    }
    if !parts.grad.is_finite() {
        return Err(Error::NonFinite {
            example_id: example.id,
            term: "gradient".into(),
        });
    }
    Ok(ExampleOutcome { rollouts, parts })
}

pub struct StepOutcome {
    pub stats: StepStats,
    pub traces: Vec<TraceRecord>,
}

/// One optimisation step on `batch` with the mode's effective hyperparameters.
pub fn train_step(state: &mut TrainState, batch: &[&Example], hp: &HyperParams) -> Result<StepOutcome> {
    if batch.is_empty() {
        return Err(Error::Config("empty training batch".into()));
    }
    let outcomes: Vec<ExampleOutcome> = batch
        .par_iter()
        .map(|ex| example_outcome(state, ex, hp))
        .collect::<Result<Vec<_>>>()?;

    let inv_b = 1.0 / batch.len() as f64;
    let mut grad = state.params.zero_grad();
    let (mut j, mut l, mut l_ctx, mut l_hat, mut kl) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let (mut r_param, mut n_param, mut r_ctx, mut n_ctx) = (0.0, 0usize, 0.0, 0usize);
    for o in &outcomes {
        grad.add_scaled(&o.parts.grad, inv_b);
        j += o.parts.j * inv_b;
        l += o.parts.l * inv_b;
        l_ctx += o.parts.l_ctx * inv_b;
        l_hat += o.parts.l_hat * inv_b;
        kl += o.parts.kl * inv_b;
        r_param += o.rollouts.group_param.iter().map(|r| r.reward).sum::<f64>();
        n_param += o.rollouts.group_param.len();
        r_ctx += o.rollouts.group_ctx.iter().map(|r| r.reward).sum::<f64>();
        n_ctx += o.rollouts.group_ctx.len();
    }
    let grad_norm = grad.0.iter().map(|g| g * g).sum::<f64>().sqrt();

    let step = state.step;
    let traces = outcomes
        .iter()
        .flat_map(|o| rollout::trace_records(step + 1, &o.rollouts))
        .collect();

    state.optimizer.apply(&mut state.params, &grad, hp.lr);
    state.old_params = state.params.clone();
    state.step += 1;

    let mean = |sum: f64, n: usize| (n > 0).then(|| sum / n as f64);
    Ok(StepOutcome {
        stats: StepStats {
            step: state.step,
            reward_mean: (r_param + r_ctx) / (n_param + n_ctx) as f64,
            reward_param: mean(r_param, n_param),
            reward_ctx: mean(r_ctx, n_ctx),
            j,
            l,
            l_ctx,
            l_hat,
            kl,
            grad_norm,
        },
        traces,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    #[serde(flatten)]
    pub stats: StepStats,
    pub eval: Option<MetricReport>,
}

pub const CURVE_COLUMNS: [&str; 10] = [
    "step",
    "reward_mean",
    "reward_param",
    "reward_ctx",
    "j",
    "l",
    "l_ctx",
    "l_hat",
    "kl",
    "grad_norm",
];

pub fn curves_csv(rows: &[CurveRow]) -> String {
    let mut out = CURVE_COLUMNS.join(",");
    for c in MetricReport::COLUMNS {
        out.push(',');
        out.push_str(c);
    }
    out.push('\n');
    let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
    for r in rows {
        let s = &r.stats;
        let mut cells = vec![
            s.step.to_string(),
            s.reward_mean.to_string(),
            opt(s.reward_param),
            opt(s.reward_ctx),
            s.j.to_string(),
            s.l.to_string(),
            s.l_ctx.to_string(),
            s.l_hat.to_string(),
            s.kl.to_string(),
            s.grad_norm.to_string(),
        ];
        match &r.eval {
            Some(rep) => cells.extend(rep.metrics().iter().map(|m| opt(m.value))),
            None => cells.extend(std::iter::repeat(String::new()).take(MetricReport::COLUMNS.len())),
        }
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn run_log_jsonl(rows: &[CurveRow]) -> String {
    rows.iter()
        .map(|r| serde_json::to_string(r).expect("curve row serializes") + "\n")
        .collect()
}

#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub curves: Vec<CurveRow>,
    pub checkpoints: Vec<PathBuf>,
    pub final_eval: evalsuite::PolicyEvaluation,
    pub final_state: TrainState,
    pub traces: Vec<TraceRecord>,
}

pub fn checkpoint_name(step: u64) -> String {
    format!("step_{step:06}.ckpt")
}

/// Runs `steps_max` steps from a freshly pretrained policy.
pub fn run(
    cfg: &RunConfig,
    initial: &PolicyParams,
    train: &[Example],
    test: &[Example],
    checkpoint_dir: Option<&Path>,
) -> Result<RunArtifacts> {
    cfg.validate()?;
    let state = TrainState::new(initial.clone(), cfg.seed, cfg.optimizer);
    resume(cfg, state, train, test, checkpoint_dir)
}

/// Continues `state` until `steps_max` completed steps. Produces the same rows
/// the uninterrupted run would from `state.step + 1` onward.
pub fn resume(
    cfg: &RunConfig,
    mut state: TrainState,
    train: &[Example],
    test: &[Example],
    checkpoint_dir: Option<&Path>,
) -> Result<RunArtifacts> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    if state.seed != cfg.seed {
        return Err(Error::Config(format!(
            "state seed {} differs from configured seed {}",
            state.seed, cfg.seed
        )));
    }
    if state.optimizer.kind != cfg.optimizer {
        return Err(Error::Config("checkpoint optimizer differs from configuration".into()));
    }
    if let Some(dir) = checkpoint_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;

    pool.install(|| {
        let hp = cfg.mode.effective(&cfg.hp);
        let probe_labels: Vec<SubsetLabels> = {
            let ti = evalsuite::label_parametric(&state.ref_params, test, hp.max_new_tokens)?;
            evalsuite::labels_for(test, &ti)
        };
        let mut curves = Vec::new();
        let mut checkpoints = Vec::new();
        let mut traces = Vec::new();
        let mut last_eval = None;

        while (state.step as usize) < cfg.steps_max {
            let picked = select_batch(cfg.seed, state.step, train.len(), cfg.batch_size);
            let batch: Vec<&Example> = picked.iter().map(|&i| &train[i]).collect();
            let outcome = train_step(&mut state, &batch, &hp)?;
            if cfg.trace {
                traces.extend(outcome.traces);
            }
            let done = state.step as usize;
            let eval_now = done == cfg.steps_max || (cfg.eval_every > 0 && done % cfg.eval_every == 0);
            let eval = if eval_now {
                let e = evalsuite::evaluate_with_labels(&state.params, test, probe_labels.clone(), hp.max_new_tokens)?;
                let report = e.report;
                last_eval = Some(e);
                Some(report)
            } else {
                None
            };
            curves.push(CurveRow {
                stats: outcome.stats,
                eval,
            });
            if let Some(dir) = checkpoint_dir {
                if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 {
                    let path = dir.join(checkpoint_name(state.step));
                    save_checkpoint(&state, &path)?;
                    checkpoints.push(path);
                }
            }
        }
        let final_eval = match last_eval {
            Some(e) => e,
            None => evalsuite::evaluate_with_labels(&state.params, test, probe_labels, hp.max_new_tokens)?,
        };
        Ok(RunArtifacts {
            curves,
            checkpoints,
            final_eval,
            final_state: state,
            traces,
        })
    })
}

/// First step at which the smoothed curve reaches `fraction` of its final
/// level. The curve is a trailing moving average over `window` steps and the
/// final level is the mean of the last `window` raw values.
pub fn steps_to_fraction_of_final(values: &[f64], fraction: f64, window: usize) -> Option<usize> {
    if values.is_empty() || window == 0 {
        return None;
    }
    let w = window.min(values.len());
    let final_level = values[values.len() - w..].iter().sum::<f64>() / w as f64;
    let target = fraction * final_level;
    let mut sum = 0.0;
    for (i, v) in values.iter().enumerate() {
        sum += v;
        if i >= w {
            sum -= values[i - w];
        }
        let avg = sum / (i + 1).min(w) as f64;
        if avg >= target {
            return Some(i + 1);
        }
    }
    None
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"KR1TRAIN";
pub const CHECKPOINT_VERSION: u32 = 1;

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

fn write_f64s(out: &mut Vec<u8>, xs: &[f64]) {
    out.extend((xs.len() as u64).to_le_bytes());
    for x in xs {
        out.extend(x.to_bits().to_le_bytes());
    }
}

fn read_f64s(r: &mut impl Read) -> Result<Vec<f64>> {
    let n = read_u64(r)? as usize;
    if n > 1 << 28 {
        return Err(Error::Corrupt(format!("implausible vector length {n}")));
    }
    (0..n).map(|_| read_u64(r).map(f64::from_bits)).collect()
}

/// Layout (little-endian): magic, version u32, body, FNV-1a checksum of body.
/// Body: step, seed, optimizer tag u8, adam t, m, v, then params, old, ref.
pub fn encode_checkpoint(state: &TrainState) -> Vec<u8> {
    let mut body = Vec::new();
    body.extend(state.step.to_le_bytes());
    body.extend(state.seed.to_le_bytes());
    body.push(match state.optimizer.kind {
        OptimizerKind::Sgd => 0,
        OptimizerKind::Adam => 1,
    });
    body.extend(state.optimizer.t.to_le_bytes());
    write_f64s(&mut body, &state.optimizer.m);
    write_f64s(&mut body, &state.optimizer.v);
    for p in [&state.params, &state.old_params, &state.ref_params] {
        p.write_to(&mut body).expect("vec write");
    }
    let mut out = Vec::with_capacity(body.len() + 20);
    out.extend(CHECKPOINT_MAGIC);
    out.extend(CHECKPOINT_VERSION.to_le_bytes());
    out.extend(&body);
    out.extend(fnv1a(&body).to_le_bytes());
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<TrainState> {
    if bytes.len() < 20 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(Error::Corrupt("not a training checkpoint".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            expected: CHECKPOINT_VERSION,
            found: version,
        });
    }
    let (body, sum) = bytes[12..].split_at(bytes.len() - 20);
    if fnv1a(body).to_le_bytes() != sum {
        return Err(Error::Corrupt("checksum mismatch".into()));
    }
    let mut r = body;
    let step = read_u64(&mut r)?;
    let seed = read_u64(&mut r)?;
    let mut tag = [0u8; 1];
    r.read_exact(&mut tag).map_err(|e| Error::Corrupt(e.to_string()))?;
    let kind = match tag[0] {
        0 => OptimizerKind::Sgd,
        1 => OptimizerKind::Adam,
        t => return Err(Error::Corrupt(format!("unknown optimizer tag {t}"))),
    };
    let t = read_u64(&mut r)?;
    let m = read_f64s(&mut r)?;
    let v = read_f64s(&mut r)?;
    let params = PolicyParams::read_from(&mut r)?;
    let old_params = PolicyParams::read_from(&mut r)?;
    let ref_params = PolicyParams::read_from(&mut r)?;
    if !r.is_empty() {
        return Err(Error::Corrupt(format!("{} trailing bytes", r.len())));
    }
    Ok(TrainState {
        params,
        old_params,
        ref_params,
        step,
        seed,
        optimizer: OptimizerState { kind, t, m, v },
    })
}

pub fn save_checkpoint(state: &TrainState, path: &Path) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode_checkpoint(state)).map_err(|e| Error::io(path, e))
}

pub fn restore_checkpoint(path: &Path) -> Result<TrainState> {
    decode_checkpoint(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{build_examples, generate_world, WorldSpec};

    fn small_task() -> (PolicyParams, Vec<Example>) {
        let spec = WorldSpec {
            num_entities: 6,
            num_attributes: 2,
            vocab_size: 48,
            belief_error_rate: 0.5,
            context_error_rate: 0.5,
            self_conflict_rate: 0.0,
            seed: 1,
        };
        let world = generate_world(&spec).unwrap();
        let set = build_examples(&world, 12, 0.5, 0.0, 2).unwrap();
        let pairs: Vec<_> = set
            .examples
            .iter()
            .map(|e| (make_prompts(e).p, e.belief_answer.clone()))
            .collect();
        let (p, _) = crate::policy::pretrain(&PolicyParams::init(48, 8, 1.0, 3), &pairs, 60, 0.2).unwrap();
        (p, set.examples)
    }

    fn cfg(mode: Mode) -> RunConfig {
        RunConfig {
            hp: HyperParams {
                n1: 3,
                n2: 3,
                lr: 0.05,
                ..Default::default()
            },
            mode,
            steps_max: 4,
            batch_size: 4,
            seed: 11,
            ..Default::default()
        }
    }

    #[test]
    fn step_bookkeeping() {
        let (p, ex) = small_task();
        let mut state = TrainState::new(p.clone(), 5, OptimizerKind::Sgd);
        let batch: Vec<&Example> = ex.iter().take(3).collect();
        let hp = cfg(Mode::Kr1).hp;
        train_step(&mut state, &batch, &hp).unwrap();
        assert_eq!(state.step, 1);
        assert_eq!(state.old_params, state.params);
        assert_eq!(state.ref_params, p);
        assert_ne!(state.params, p);
    }

    #[test]
    fn default_temperature_and_lrs() {
        let hp = HyperParams::default();
        assert_eq!(hp.temperature, 0.9);
        assert_eq!(objective::PAPER_SCALE_LR, 1e-6);
        assert_eq!(hp.lr, objective::TOY_SCALE_LR);
        assert_eq!((hp.n1, hp.n2, hp.clip_eps, hp.alpha, hp.beta_adv), (8, 8, 0.2, 2.0, 0.05));
        assert_eq!(RunConfig::default().batch_size, 8);
    }

    #[test]
    fn zero_steps_rejected() {
        let (p, ex) = small_task();
        let mut c = cfg(Mode::Kr1);
        c.steps_max = 0;
        assert!(matches!(run(&c, &p, &ex, &ex, None), Err(Error::Config(_))));
    }

    #[test]
    fn batch_order_depends_only_on_seed_and_step() {
        let a = select_batch(3, 7, 100, 8);
        assert_eq!(a, select_batch(3, 7, 100, 8));
        assert_ne!(a, select_batch(3, 8, 100, 8));
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(select_batch(3, 7, 5, 8), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn runs_are_reproducible() {
        let (p, ex) = small_task();
        let (train, test) = ex.split_at(8);
        let a = run(&cfg(Mode::Kr1), &p, train, test, None).unwrap();
        let b = run(&cfg(Mode::Kr1), &p, train, test, None).unwrap();
        assert_eq!(curves_csv(&a.curves), curves_csv(&b.curves));
        assert_eq!(a.curves.len(), 4);
    }

    #[test]
    fn checkpoint_round_trip_and_version_guard() {
        let (p, ex) = small_task();
        let mut state = TrainState::new(p, 5, OptimizerKind::Adam);
        let batch: Vec<&Example> = ex.iter().take(2).collect();
        train_step(&mut state, &batch, &cfg(Mode::Kr1).hp).unwrap();
        let bytes = encode_checkpoint(&state);
        let back = decode_checkpoint(&bytes).unwrap();
        assert_eq!(back, state);
        assert_eq!(encode_checkpoint(&back), bytes);

        let mut wrong = bytes.clone();
        wrong[8] = 9;
        assert!(matches!(decode_checkpoint(&wrong), Err(Error::Version { found: 9, .. })));
        let mut flipped = bytes.clone();
        flipped[40] ^= 1;
        assert!(matches!(decode_checkpoint(&flipped), Err(Error::Corrupt(_))));
    }

    #[test]
    fn fraction_of_final() {
        let xs = [0.0, 0.5, 1.0, 1.0, 1.0];
        assert_eq!(steps_to_fraction_of_final(&xs, 0.9, 1), Some(3));
        assert_eq!(steps_to_fraction_of_final(&[], 0.9, 1), None);
        assert_eq!(steps_to_fraction_of_final(&[0.0, 0.0], 0.9, 1), Some(1));
    }
}
