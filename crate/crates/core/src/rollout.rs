//! Joint sampling of the parametric group (from the query-only prompt) and the
//! contextual group (from the retrieval-augmented prompt) under the old policy.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::policy::{self, Decoding, PolicyParams};
use crate::rng::{self, Purpose};
use crate::world::{Example, PromptPair, Token, EOS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    /// Sampled from the query-only prompt.
    Param,
    /// Sampled from the retrieval-augmented prompt.
    Ctx,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub origin: Origin,
    pub tokens: Vec<Token>,
    /// Per-token log-probabilities under the generating prompt and old policy.
    pub old_log_probs: Vec<f64>,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutBatch {
    pub example_id: u64,
    pub group_param: Vec<Rollout>,
    pub group_ctx: Vec<Rollout>,
}

impl RolloutBatch {
    pub fn rewards_param(&self) -> Vec<f64> {
        self.group_param.iter().map(|r| r.reward).collect()
    }

    pub fn rewards_ctx(&self) -> Vec<f64> {
        self.group_ctx.iter().map(|r| r.reward).collect()
    }

    pub fn rollouts(&self) -> impl Iterator<Item = &Rollout> {
        self.group_param.iter().chain(&self.group_ctx)
    }
}

/// Exact match: the tokens before the first EOS must equal `gold`.
pub fn reward(tokens: &[Token], gold: &[Token]) -> f64 {
    let answer = match tokens.iter().position(|&t| t == EOS) {
        Some(end) => &tokens[..end],
        None => tokens,
    };
    if answer == gold {
        1.0
    } else {
        0.0
    }
}

/// Where a rollout's random stream comes from. Each rollout gets an
/// independent stream keyed by `(seed, step, example_id, origin, index)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamKey {
    pub seed: u64,
    pub step: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingSpec {
    pub n_param: usize,
    pub n_ctx: usize,
    pub temperature: f64,
    pub max_new_tokens: usize,
}

fn draw(
    old: &PolicyParams,
    prompt: &[Token],
    example: &Example,
    origin: Origin,
    index: usize,
    spec: &SamplingSpec,
    key: StreamKey,
) -> Result<Rollout> {
    let tag = match origin {
        Origin::Param => 0,
        Origin::Ctx => 1,
    };
    let mut rng = rng::stream(
        key.seed,
        Purpose::Rollout,
        &[key.step, example.id, tag, index as u64],
    );
    let tokens = policy::sample(
        old,
        prompt,
        Decoding::Temperature(spec.temperature),
        &mut rng,
        spec.max_new_tokens,
    )?;
    let old_log_probs = policy::log_prob(old, prompt, &tokens)?.per_token;
    let reward = reward(&tokens, &example.gold_answer);
    Ok(Rollout {
        origin,
        tokens,
        old_log_probs,
        reward,
    })
}

pub fn collect_groups(
    old: &PolicyParams,
    example: &Example,
    prompts: &PromptPair,
    spec: &SamplingSpec,
    key: StreamKey,
) -> Result<RolloutBatch> {
    let group_param = (0..spec.n_param)
        .map(|i| draw(old, &prompts.p, example, Origin::Param, i, spec, key))
        .collect::<Result<Vec<_>>>()?;
    let group_ctx = (0..spec.n_ctx)
        .map(|j| draw(old, &prompts.p_ctx, example, Origin::Ctx, j, spec, key))
        .collect::<Result<Vec<_>>>()?;
    Ok(RolloutBatch {
        example_id: example.id,
        group_param,
        group_ctx,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: u64,
    pub example_id: u64,
    pub origin: Origin,
    pub tokens: Vec<Token>,
    pub reward: f64,
}

pub fn trace_records(step: u64, batch: &RolloutBatch) -> Vec<TraceRecord> {
    batch
        .rollouts()
        .map(|r| TraceRecord {
            step,
            example_id: batch.example_id,
            origin: r.origin,
            tokens: r.tokens.clone(),
            reward: r.reward,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{build_examples, generate_world, make_prompts, WorldSpec};

    fn fixture() -> (PolicyParams, Example) {
        let spec = WorldSpec {
            num_entities: 4,
            num_attributes: 2,
            vocab_size: 40,
            belief_error_rate: 0.5,
            context_error_rate: 0.5,
            self_conflict_rate: 0.0,
            seed: 3,
        };
        let world = generate_world(&spec).unwrap();
        let ex = build_examples(&world, 4, 0.5, 0.0, 1).unwrap().examples.remove(0);
        (PolicyParams::init(40, 6, 1.0, 2), ex)
    }

    fn sspec(n1: usize, n2: usize) -> SamplingSpec {
        SamplingSpec {
            n_param: n1,
            n_ctx: n2,
            temperature: 0.9,
            max_new_tokens: 3,
        }
    }

    #[test]
    fn reward_is_strict_exact_match() {
        assert_eq!(reward(&[7, EOS], &[7]), 1.0);
        assert_eq!(reward(&[EOS], &[7]), 0.0);
        assert_eq!(reward(&[7, 8, EOS], &[7]), 0.0);
        assert_eq!(reward(&[8, EOS], &[7]), 0.0);
    }

    #[test]
    fn group_shapes_and_origins() {
        let (p, ex) = fixture();
        let b = collect_groups(&p, &ex, &make_prompts(&ex), &sspec(2, 2), StreamKey { seed: 1, step: 0 }).unwrap();
        assert_eq!(b.group_param.len(), 2);
        assert_eq!(b.group_ctx.len(), 2);
        assert!(b.group_param.iter().all(|r| r.origin == Origin::Param));
        assert!(b.group_ctx.iter().all(|r| r.origin == Origin::Ctx));
        for r in b.rollouts() {
            assert_eq!(r.tokens.len(), r.old_log_probs.len());
            assert!(r.old_log_probs.iter().all(|&x| x <= 0.0));
        }
    }

    #[test]
    fn deterministic_and_ctx_group_independent_of_param_count() {
        let (p, ex) = fixture();
        let pp = make_prompts(&ex);
        let key = StreamKey { seed: 5, step: 3 };
        let a = collect_groups(&p, &ex, &pp, &sspec(4, 4), key).unwrap();
        let b = collect_groups(&p, &ex, &pp, &sspec(4, 4), key).unwrap();
        assert_eq!(a, b);
        let c = collect_groups(&p, &ex, &pp, &sspec(0, 4), key).unwrap();
        assert!(c.group_param.is_empty());
        assert_eq!(c.group_ctx, a.group_ctx);
    }

    #[test]
    fn stored_log_probs_reproduce() {
        let (p, ex) = fixture();
        let pp = make_prompts(&ex);
        let b = collect_groups(&p, &ex, &pp, &sspec(3, 3), StreamKey { seed: 9, step: 1 }).unwrap();
        for r in b.rollouts() {
            let prompt = if r.origin == Origin::Param { &pp.p } else { &pp.p_ctx };
            let again = policy::log_prob(&p, prompt, &r.tokens).unwrap().per_token;
            for (x, y) in again.iter().zip(&r.old_log_probs) {
                assert!((x - y).abs() <= 1e-12);
            }
        }
    }
}
