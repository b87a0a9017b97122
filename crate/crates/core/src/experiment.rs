//! End-to-end preparation of a synthetic conflict task: world, examples,
//! train/test split, and a pretrained starting policy.
//!
//! Pretraining mixes two kinds of pairs. Memory pairs teach the query-only
//! prompt to answer with the (possibly wrong) belief. Reading pairs show a
//! context prompt whose single passage carries a random value for a real key
//! and ask for that value, so the starting policy has some tendency to copy
//! from context as well as to recall. Without them the context prompt is
//! entirely out of distribution and every rollout earns zero reward.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{self, PolicyParams, PretrainReport};
use crate::rng::{self, Purpose};
use crate::world::{self, Example, ExampleSet, KnowledgeWorld, Split, Token, WorldSpec, QRY};

/// How the test set relates to the training set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TestDesign {
    /// Test examples are a held-out subset of keys.
    HeldOutKeys,
    /// Test examples revisit keys seen in training with independently drawn
    /// contexts and fresh ids.
    #[default]
    FreshContexts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskSpec {
    pub num_entities: usize,
    pub num_attributes: usize,
    /// Zero means "the smallest vocabulary that fits".
    pub vocab_size: usize,
    pub belief_error_rate: f64,
    pub context_error_rate: f64,
    pub self_conflict_rate: f64,
    pub num_examples: usize,
    pub test_count: usize,
    pub test_design: TestDesign,
    pub dim: usize,
    pub init_scale: f64,
    pub reading_pairs: usize,
    pub pretrain_epochs: usize,
    pub pretrain_lr: f64,
}

impl Default for TaskSpec {
    fn default() -> Self {
        TaskSpec {
            num_entities: 20,
            num_attributes: 10,
            vocab_size: 0,
            belief_error_rate: 0.5,
            context_error_rate: 0.5,
            self_conflict_rate: 0.0,
            num_examples: 200,
            test_count: 200,
            test_design: TestDesign::default(),
            dim: 32,
            init_scale: 1.0,
            reading_pairs: 1000,
            pretrain_epochs: 200,
            pretrain_lr: 0.2,
        }
    }
}

impl TaskSpec {
    pub fn world_spec(&self, seed: u64) -> WorldSpec {
        let vocab_size = if self.vocab_size == 0 {
            WorldSpec::required_vocab(self.num_entities, self.num_attributes)
        } else {
            self.vocab_size
        };
        WorldSpec {
            num_entities: self.num_entities,
            num_attributes: self.num_attributes,
            vocab_size,
            belief_error_rate: self.belief_error_rate,
            context_error_rate: self.context_error_rate,
            self_conflict_rate: self.self_conflict_rate,
            seed,
        }
    }
}

pub struct PreparedTask {
    pub world: KnowledgeWorld,
    pub train: ExampleSet,
    pub test: ExampleSet,
    pub pretrained: PolicyParams,
    pub pretrain_report: PretrainReport,
}

/// `[QRY, entity, attribute] -> belief` for every fact in the world.
pub fn memory_pairs(world: &KnowledgeWorld) -> Vec<(Vec<Token>, Vec<Token>)> {
    world
        .facts
        .iter()
        .map(|f| {
            let mut p = vec![QRY];
            p.extend(world.query(f));
            (p, vec![f.belief])
        })
        .collect()
}

/// Context prompts over random keys, each holding one passage with a value
/// drawn uniformly from the attribute's range; the target is that value.
pub fn reading_pairs(world: &KnowledgeWorld, count: usize, seed: u64) -> Vec<(Vec<Token>, Vec<Token>)> {
    let mut rng = rng::stream(seed, Purpose::Curriculum, &[]);
    (0..count)
        .map(|_| {
            let f = world.facts[rng.gen_range(0..world.facts.len())];
            let v = rng.gen_range(world.vocab.value_range(f.attribute));
            let query = world.query(&f);
            let ex = Example {
                id: 0,
                contexts: vec![vec![query[0], query[1], v]],
                query,
                gold_answer: vec![v],
                context_correct: true,
                self_conflict: false,
                belief_answer: vec![v],
            };
            (world::make_prompts(&ex).p_ctx, vec![v])
        })
        .collect()
}

pub fn pretraining_pairs(world: &KnowledgeWorld, reading: usize, seed: u64) -> Vec<(Vec<Token>, Vec<Token>)> {
    let mut pairs = memory_pairs(world);
    pairs.extend(reading_pairs(world, reading, seed));
    pairs
}

pub struct TaskData {
    pub world: KnowledgeWorld,
    pub train: ExampleSet,
    pub test: ExampleSet,
}

pub fn build_data(spec: &TaskSpec, seed: u64) -> Result<TaskData> {
    let world = world::generate_world(&spec.world_spec(seed))?;
    let set = world::build_examples(
        &world,
        spec.num_examples,
        spec.context_error_rate,
        spec.self_conflict_rate,
        seed,
    )?;
    let (train, test) = match spec.test_design {
        TestDesign::HeldOutKeys => set.split_off_test(spec.test_count, seed)?,
        TestDesign::FreshContexts => {
            let mut test = world::build_examples(
                &world,
                spec.test_count,
                spec.context_error_rate,
                spec.self_conflict_rate,
                rng::derive_seed(seed, Purpose::Split, &[1]),
            )?;
            let offset = spec.num_examples as u64;
            for ex in &mut test.examples {
                ex.id += offset;
            }
            test.split = Split::Test;
            (set, test)
        }
    };
    if train.is_empty() {
        return Err(Error::Config("the training split is empty".into()));
    }
    Ok(TaskData { world, train, test })
}

/// Fits a fresh policy to the memory and reading curriculum of `world`.
pub fn pretrain_policy(spec: &TaskSpec, world: &KnowledgeWorld, seed: u64) -> Result<(PolicyParams, PretrainReport)> {
    if spec.dim == 0 {
        return Err(Error::Config("dim must be positive".into()));
    }
    let init = PolicyParams::init(world.vocab.size, spec.dim, spec.init_scale, seed);
    let pairs = pretraining_pairs(world, spec.reading_pairs, seed);
    policy::pretrain(&init, &pairs, spec.pretrain_epochs, spec.pretrain_lr)
}

/// Greedy query-only accuracy against beliefs and against gold, over every fact.
pub fn belief_and_gold_accuracy(params: &PolicyParams, world: &KnowledgeWorld) -> Result<(f64, f64)> {
    let (mut belief, mut gold) = (0usize, 0usize);
    for f in &world.facts {
        let mut prompt = vec![QRY];
        prompt.extend(world.query(f));
        let out = policy::greedy(params, &prompt, 2)?;
        belief += (out == [f.belief, world::EOS]) as usize;
        gold += (out == [f.gold, world::EOS]) as usize;
    }
    let n = world.facts.len().max(1) as f64;
    Ok((belief as f64 / n, gold as f64 / n))
}

pub fn prepare(spec: &TaskSpec, seed: u64) -> Result<PreparedTask> {
    let TaskData { world, train, test } = build_data(spec, seed)?;
    let (pretrained, pretrain_report) = pretrain_policy(spec, &world, seed)?;
    Ok(PreparedTask {
        world,
        train,
        test,
        pretrained,
        pretrain_report,
    })
}
