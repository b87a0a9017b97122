//! Per-example objective
//!
//! `j = l + l_ctx + l_hat - beta_kl * kl` where
//!
//! * `l` is the clipped surrogate for the parametric group under the
//!   query-only prompt,
//! * `l_ctx` is the clipped surrogate for the contextual group under the
//!   retrieval-augmented prompt,
//! * `l_hat` scores parametric rollouts teacher-forced after the
//!   retrieval-augmented prompt, weighted by transformed joint advantages,
//!   with no ratio and no clipping,
//! * `kl` is the mean per-token `exp(d) - d - 1` estimator, `d = ref - new`,
//!   over both sampled groups under their generating prompts.
//!
//! Each term is a per-token weight on `grad log pi`, so the whole gradient is
//! one weighted backward pass per (prompt, rollout) pair.

use serde::{Deserialize, Serialize};

use crate::advantage::{AdvantageConfig, AdvantageSet, StdKind};
use crate::error::{Error, Result};
use crate::policy::{self, GradVector, PolicyParams, DEFAULT_TEMPERATURE};
use crate::rollout::{Rollout, RolloutBatch, SamplingSpec};
use crate::world::{PromptPair, Token};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ExplorationForm {
    /// Per-token probability times the transformed advantage.
    #[default]
    RawProb,
    /// Per-token log-probability times the transformed advantage.
    LogProb,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperParams {
    pub clip_eps: f64,
    pub beta_kl: f64,
    pub alpha: f64,
    pub beta_adv: f64,
    pub std_floor: f64,
    pub std_kind: StdKind,
    pub n1: usize,
    pub n2: usize,
    pub temperature: f64,
    pub lr: f64,
    pub exploration_form: ExplorationForm,
    /// Include the teacher-forced exploration term.
    pub exploration: bool,
    pub max_new_tokens: usize,
}

/// Learning rate used at billion-parameter scale; stalls the toy policy.
pub const PAPER_SCALE_LR: f64 = 1e-6;
pub const TOY_SCALE_LR: f64 = 1e-2;

impl Default for HyperParams {
    fn default() -> Self {
        let adv = AdvantageConfig::default();
        HyperParams {
            clip_eps: 0.2,
            beta_kl: 0.01,
            alpha: adv.alpha,
            beta_adv: adv.beta_adv,
            std_floor: adv.std_floor,
            std_kind: adv.std_kind,
            n1: 8,
            n2: 8,
            temperature: DEFAULT_TEMPERATURE,
            lr: TOY_SCALE_LR,
            exploration_form: ExplorationForm::RawProb,
            exploration: true,
            max_new_tokens: 3,
        }
    }
}

impl HyperParams {
    /// Defaults with the learning rate used for billion-parameter models.
    pub fn paper_scale() -> Self {
        HyperParams {
            lr: PAPER_SCALE_LR,
            ..Default::default()
        }
    }

    pub fn advantage(&self) -> AdvantageConfig {
        AdvantageConfig {
            alpha: self.alpha,
            beta_adv: self.beta_adv,
            std_floor: self.std_floor,
            std_kind: self.std_kind,
        }
    }

    pub fn sampling(&self) -> SamplingSpec {
        SamplingSpec {
            n_param: self.n1,
            n_ctx: self.n2,
            temperature: self.temperature,
            max_new_tokens: self.max_new_tokens,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return bad(format!("clip_eps must lie in (0, 1), got {}", self.clip_eps));
        }
        if !(self.lr > 0.0) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(self.beta_kl >= 0.0) {
            return bad(format!("beta_kl must be non-negative, got {}", self.beta_kl));
        }
        if !(self.temperature > 0.0) {
            return bad(format!("temperature must be positive, got {}", self.temperature));
        }
        if self.n1 + self.n2 == 0 {
            return bad("n1 + n2 must be at least 1".into());
        }
        if self.max_new_tokens == 0 {
            return bad("max_new_tokens must be at least 1".into());
        }
        self.advantage().validate().map_err(Error::Config)
    }
}

/// Clipped surrogate for one rollout, summed over its tokens.
///
/// Returns the value and its derivative with respect to each new log-prob.
/// Tokens where the clipped branch attains the min contribute no gradient.
pub fn surrogate_clipped(
    new_log_probs: &[f64],
    old_log_probs: &[f64],
    advantage: f64,
    clip_eps: f64,
) -> Result<(f64, Vec<f64>)> {
    if new_log_probs.len() != old_log_probs.len() {
        return Err(Error::Shape(format!(
            "{} new log-probs vs {} old",
            new_log_probs.len(),
            old_log_probs.len()
        )));
    }
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(new_log_probs.len());
    for (&new, &old) in new_log_probs.iter().zip(old_log_probs) {
        let ratio = (new - old).exp();
        let unclipped = ratio * advantage;
        let clipped = ratio.clamp(1.0 - clip_eps, 1.0 + clip_eps) * advantage;
        if unclipped <= clipped {
            value += unclipped;
            grad.push(unclipped);
        } else {
            value += clipped;
            grad.push(0.0);
        }
    }
    Ok((value, grad))
}

/// Exploration term for one teacher-forced rollout: value and derivative
/// with respect to each log-prob.
pub fn exploration_terms(log_probs: &[f64], t_adv: f64, form: ExplorationForm) -> (f64, Vec<f64>) {
    match form {
        ExplorationForm::RawProb => {
            let probs: Vec<f64> = log_probs.iter().map(|lp| lp.exp()).collect();
            let value = probs.iter().sum::<f64>() * t_adv;
            (value, probs.into_iter().map(|p| p * t_adv).collect())
        }
        ExplorationForm::LogProb => (
            log_probs.iter().sum::<f64>() * t_adv,
            vec![t_adv; log_probs.len()],
        ),
    }
}

/// Single-rollout exploration value and gradient after `p_ctx`.
pub fn surrogate_exploration(
    params: &PolicyParams,
    p_ctx: &[Token],
    tokens: &[Token],
    t_adv: f64,
    form: ExplorationForm,
) -> Result<(f64, GradVector)> {
    let lp = policy::log_prob(params, p_ctx, tokens)?;
    let (value, weights) = exploration_terms(&lp.per_token, t_adv, form);
    let mut grad = params.zero_grad();
    policy::accumulate_weighted_grad(params, p_ctx, tokens, &weights, &mut grad)?;
    Ok((value, grad))
}

/// `k = exp(d) - d - 1` with `d = ref - new`, and `dk/dnew = 1 - exp(d)`.
pub fn kl_token(ref_log_prob: f64, new_log_prob: f64) -> (f64, f64) {
    let d = ref_log_prob - new_log_prob;
    // exp_m1 keeps k >= 0 exact near d = 0
    let em1 = d.exp_m1();
    ((em1 - d).max(0.0), -em1)
}

/// Mean per-token KL estimate over `(prompt, tokens)` pairs.
pub fn kl_penalty(
    params: &PolicyParams,
    ref_params: &PolicyParams,
    sequences: &[(&[Token], &[Token])],
) -> Result<(f64, GradVector)> {
    let total_tokens: usize = sequences.iter().map(|(_, t)| t.len()).sum();
    let mut grad = params.zero_grad();
    if total_tokens == 0 {
        return Ok((0.0, grad));
    }
    let inv = 1.0 / total_tokens as f64;
    let mut value = 0.0;
    for (prompt, tokens) in sequences {
        let new = policy::log_prob(params, prompt, tokens)?.per_token;
        let reference = policy::log_prob(ref_params, prompt, tokens)?.per_token;
        let mut weights = Vec::with_capacity(tokens.len());
        for (&r, &n) in reference.iter().zip(&new) {
            let (k, dk) = kl_token(r, n);
            value += k * inv;
            weights.push(dk * inv);
        }
        policy::accumulate_weighted_grad(params, prompt, tokens, &weights, &mut grad)?;
    }
    Ok((value, grad))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveParts {
    pub l: f64,
    pub l_ctx: f64,
    pub l_hat: f64,
    pub kl: f64,
    pub j: f64,
    pub grad: GradVector,
}

/// Coefficients on each term when forming a combined scalar.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TermWeights {
    pub l: f64,
    pub l_ctx: f64,
    pub l_hat: f64,
    pub kl: f64,
}

impl TermWeights {
    pub fn full(beta_kl: f64) -> Self {
        TermWeights {
            l: 1.0,
            l_ctx: 1.0,
            l_hat: 1.0,
            kl: -beta_kl,
        }
    }

    pub fn only_l() -> Self {
        TermWeights { l: 1.0, l_ctx: 0.0, l_hat: 0.0, kl: 0.0 }
    }

    pub fn only_l_ctx() -> Self {
        TermWeights { l: 0.0, l_ctx: 1.0, l_hat: 0.0, kl: 0.0 }
    }

    pub fn only_l_hat() -> Self {
        TermWeights { l: 0.0, l_ctx: 0.0, l_hat: 1.0, kl: 0.0 }
    }

    pub fn only_kl() -> Self {
        TermWeights { l: 0.0, l_ctx: 0.0, l_hat: 0.0, kl: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightedObjective {
    pub l: f64,
    pub l_ctx: f64,
    pub l_hat: f64,
    pub kl: f64,
    /// `sum_k weights_k * term_k`.
    pub value: f64,
    pub grad: GradVector,
}

fn check_advantages(batch: &RolloutBatch, adv: &AdvantageSet) -> Result<()> {
    let (n1, n2) = (batch.group_param.len(), batch.group_ctx.len());
    if adv.a_param.len() != n1 || adv.a_joint_transformed.len() != n1 || adv.a_ctx.len() != n2 {
        return Err(Error::Shape(format!(
            "advantages ({}, {}, {}) do not match groups ({n1}, {n2})",
            adv.a_param.len(),
            adv.a_ctx.len(),
            adv.a_joint_transformed.len()
        )));
    }
    Ok(())
}

/// Evaluates every term and the gradient of `sum_k weights_k * term_k`.
///
/// Old log-probs come from the rollouts themselves, recorded at sampling time.
pub fn weighted_objective(
    params: &PolicyParams,
    ref_params: &PolicyParams,
    prompts: &PromptPair,
    batch: &RolloutBatch,
    adv: &AdvantageSet,
    hp: &HyperParams,
    weights: TermWeights,
) -> Result<WeightedObjective> {
    check_advantages(batch, adv)?;
    let n1 = batch.group_param.len();
    let total_tokens: usize = batch.rollouts().map(|r| r.tokens.len()).sum();
    let kl_scale = if total_tokens > 0 { 1.0 / total_tokens as f64 } else { 0.0 };
    let mut grad = params.zero_grad();
    let (mut l, mut l_ctx, mut l_hat, mut kl) = (0.0, 0.0, 0.0, 0.0);

    // Clipped surrogate + KL for one sampled group under its own prompt.
    let sampled_group = |group: &[Rollout],
                             advantages: &[f64],
                             prompt: &[Token],
                             term_weight: f64,
                             acc: &mut f64,
                             kl: &mut f64,
                             grad: &mut GradVector|
     -> Result<()> {
        let inv_n = 1.0 / group.len().max(1) as f64;
        for (r, &a) in group.iter().zip(advantages) {
            let new = policy::log_prob(params, prompt, &r.tokens)?.per_token;
            let reference = policy::log_prob(ref_params, prompt, &r.tokens)?.per_token;
            let (value, d_surr) = surrogate_clipped(&new, &r.old_log_probs, a, hp.clip_eps)?;
            *acc += value * inv_n;
            let mut w = Vec::with_capacity(new.len());
            for ((&ds, &rf), &nw) in d_surr.iter().zip(&reference).zip(&new) {
                let (k, dk) = kl_token(rf, nw);
                *kl += k * kl_scale;
                w.push(term_weight * ds * inv_n + weights.kl * dk * kl_scale);
            }
            policy::accumulate_weighted_grad(params, prompt, &r.tokens, &w, grad)?;
        }
        Ok(())
    };

    sampled_group(&batch.group_param, &adv.a_param, &prompts.p, weights.l, &mut l, &mut kl, &mut grad)?;
    sampled_group(&batch.group_ctx, &adv.a_ctx, &prompts.p_ctx, weights.l_ctx, &mut l_ctx, &mut kl, &mut grad)?;

    if hp.exploration && n1 > 0 {
        let inv_n = 1.0 / n1 as f64;
        for (r, &t_adv) in batch.group_param.iter().zip(&adv.a_joint_transformed) {
            let lp = policy::log_prob(params, &prompts.p_ctx, &r.tokens)?.per_token;
            let (value, d) = exploration_terms(&lp, t_adv, hp.exploration_form);
            l_hat += value * inv_n;
            let w: Vec<f64> = d.iter().map(|x| weights.l_hat * x * inv_n).collect();
            policy::accumulate_weighted_grad(params, &prompts.p_ctx, &r.tokens, &w, &mut grad)?;
        }
    }

    Ok(WeightedObjective {
        value: weights.l * l + weights.l_ctx * l_ctx + weights.l_hat * l_hat + weights.kl * kl,
        l,
        l_ctx,
        l_hat,
        kl,
        grad,
    })
}

/// Full objective `j = l + l_ctx + l_hat - beta_kl * kl` and its gradient.
pub fn total_objective(
    params: &PolicyParams,
    ref_params: &PolicyParams,
    prompts: &PromptPair,
    batch: &RolloutBatch,
    adv: &AdvantageSet,
    hp: &HyperParams,
) -> Result<ObjectiveParts> {
    let w = weighted_objective(params, ref_params, prompts, batch, adv, hp, TermWeights::full(hp.beta_kl))?;
    Ok(ObjectiveParts {
        j: w.l + w.l_ctx + w.l_hat - hp.beta_kl * w.kl,
        l: w.l,
        l_ctx: w.l_ctx,
        l_hat: w.l_hat,
        kl: w.kl,
        grad: w.grad,
    })
}
