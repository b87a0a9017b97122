//! Synthetic knowledge worlds.
//!
//! A world holds a gold fact table and a divergent belief table. The belief
//! table is what pretraining instills into the policy, so it plays the role of
//! parametric knowledge; passages placed in the prompt play the role of
//! contextual knowledge and may or may not agree with gold.

mod io;
mod predictions;

use std::collections::BTreeSet;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Purpose};

pub use io::{load_examples, load_world, save_examples, save_world};
pub use predictions::{load_predictions, PredictionRecord};

pub type Token = u32;

pub const QRY: Token = 0;
pub const CTX: Token = 1;
pub const SEP: Token = 2;
pub const EOS: Token = 3;
pub const NUM_SPECIAL: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldSpec {
    pub num_entities: usize,
    pub num_attributes: usize,
    pub vocab_size: usize,
    pub belief_error_rate: f64,
    pub context_error_rate: f64,
    pub self_conflict_rate: f64,
    pub seed: u64,
}

impl WorldSpec {
    /// Smallest vocabulary that gives every gold and counterfactual value its
    /// own token.
    pub fn required_vocab(num_entities: usize, num_attributes: usize) -> usize {
        NUM_SPECIAL + num_entities + num_attributes + 2 * num_entities * num_attributes
    }

    pub fn num_facts(&self) -> usize {
        self.num_entities * self.num_attributes
    }

    pub fn validate(&self) -> Result<()> {
        for (name, rate) in [
            ("belief_error_rate", self.belief_error_rate),
            ("context_error_rate", self.context_error_rate),
            ("self_conflict_rate", self.self_conflict_rate),
        ] {
            if !(0.0..=1.0).contains(&rate) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {rate}")));
            }
        }
        if self.num_entities == 0 || self.num_attributes == 0 {
            return Err(Error::Config("world needs at least one entity and one attribute".into()));
        }
        let required = Self::required_vocab(self.num_entities, self.num_attributes);
        if self.vocab_size < required {
            return Err(Error::Capacity(format!(
                "vocab_size {} too small: {} entities x {} attributes need at least {required}",
                self.vocab_size, self.num_entities, self.num_attributes
            )));
        }
        Ok(())
    }
}

/// Token id layout: specials, entities, attributes, then one block of
/// `2 * num_entities` value tokens per attribute. Ids past the value blocks are
/// unused padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    pub size: usize,
    pub num_entities: usize,
    pub num_attributes: usize,
}

impl Vocab {
    pub fn entity(&self, e: usize) -> Token {
        (NUM_SPECIAL + e) as Token
    }

    pub fn attribute(&self, a: usize) -> Token {
        (NUM_SPECIAL + self.num_entities + a) as Token
    }

    pub fn values_per_attribute(&self) -> usize {
        2 * self.num_entities
    }

    pub fn value_range(&self, a: usize) -> std::ops::Range<Token> {
        let start = NUM_SPECIAL + self.num_entities + self.num_attributes + a * self.values_per_attribute();
        start as Token..(start + self.values_per_attribute()) as Token
    }

    pub fn is_value(&self, t: Token) -> bool {
        let lo = (NUM_SPECIAL + self.num_entities + self.num_attributes) as Token;
        let hi = lo + (self.num_attributes * self.values_per_attribute()) as Token;
        (lo..hi).contains(&t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fact {
    pub entity: usize,
    pub attribute: usize,
    pub gold: Token,
    pub belief: Token,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeWorld {
    pub spec: WorldSpec,
    pub vocab: Vocab,
    /// Indexed by `entity * num_attributes + attribute`.
    pub facts: Vec<Fact>,
}

impl KnowledgeWorld {
    pub fn fact(&self, entity: usize, attribute: usize) -> &Fact {
        &self.facts[entity * self.vocab.num_attributes + attribute]
    }

    pub fn query(&self, fact: &Fact) -> Vec<Token> {
        vec![self.vocab.entity(fact.entity), self.vocab.attribute(fact.attribute)]
    }

    pub fn belief_errors(&self) -> usize {
        self.facts.iter().filter(|f| f.gold != f.belief).count()
    }

    /// Uniform draw from the attribute's value block, excluding `avoid`.
    fn draw_value_excluding(&self, attribute: usize, avoid: &[Token], rng: &mut impl Rng) -> Token {
        let range = self.vocab.value_range(attribute);
        loop {
            let t = rng.gen_range(range.clone());
            if !avoid.contains(&t) {
                return t;
            }
        }
    }
}

pub fn generate_world(spec: &WorldSpec) -> Result<KnowledgeWorld> {
    spec.validate()?;
    let vocab = Vocab {
        size: spec.vocab_size,
        num_entities: spec.num_entities,
        num_attributes: spec.num_attributes,
    };
    let mut rng = rng::stream(spec.seed, Purpose::World, &[]);

    // Each attribute's gold values are a random injection of entities into
    // its value block.
    let mut gold_by_attr = Vec::with_capacity(spec.num_attributes);
    for a in 0..spec.num_attributes {
        let mut block: Vec<Token> = vocab.value_range(a).collect();
        block.shuffle(&mut rng);
        block.truncate(spec.num_entities);
        gold_by_attr.push(block);
    }

    let facts: Vec<Fact> = (0..spec.num_entities)
        .flat_map(|e| (0..spec.num_attributes).map(move |a| (e, a)))
        .map(|(e, a)| Fact {
            entity: e,
            attribute: a,
            gold: gold_by_attr[a][e],
            belief: gold_by_attr[a][e],
        })
        .collect();

    let n = facts.len();
    let wrong = (spec.belief_error_rate * n as f64).round() as usize;
    let mut world = KnowledgeWorld {
        spec: spec.clone(),
        vocab,
        facts,
    };
    for i in index::sample(&mut rng, n, wrong.min(n)).into_vec() {
        let f = world.facts[i];
        world.facts[i].belief = world.draw_value_excluding(f.attribute, &[f.gold], &mut rng);
    }
    Ok(world)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub id: u64,
    pub query: Vec<Token>,
    pub gold_answer: Vec<Token>,
    pub contexts: Vec<Vec<Token>>,
    pub context_correct: bool,
    pub self_conflict: bool,
    pub belief_answer: Vec<Token>,
}

impl Example {
    /// Value asserted by a passage (its last token).
    pub fn asserted_values(&self) -> impl Iterator<Item = Token> + '_ {
        self.contexts.iter().filter_map(|p| p.last().copied())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExampleSet {
    pub split: Split,
    pub examples: Vec<Example>,
}

impl ExampleSet {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn ids(&self) -> BTreeSet<u64> {
        self.examples.iter().map(|e| e.id).collect()
    }

    /// Deterministically move `test_count` examples into a test set; the
    /// remainder keep their order as the training set.
    pub fn split_off_test(self, test_count: usize, seed: u64) -> Result<(ExampleSet, ExampleSet)> {
        if test_count > self.examples.len() {
            return Err(Error::Capacity(format!(
                "cannot hold out {test_count} of {} examples",
                self.examples.len()
            )));
        }
        let mut rng = rng::stream(seed, Purpose::Split, &[]);
        let picked: BTreeSet<usize> = index::sample(&mut rng, self.examples.len(), test_count)
            .into_iter()
            .collect();
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for (i, ex) in self.examples.into_iter().enumerate() {
            if picked.contains(&i) {
                test.push(ex);
            } else {
                train.push(ex);
            }
        }
        Ok((
            ExampleSet { split: Split::Train, examples: train },
            ExampleSet { split: Split::Test, examples: test },
        ))
    }
}

/// Builds `n` examples over `n` distinct facts. Exactly
/// `round(context_error_rate * n)` examples carry counterfactual context and
/// `round(self_conflict_rate * n)` carry two contradictory passages.
pub fn build_examples(
    world: &KnowledgeWorld,
    n: usize,
    context_error_rate: f64,
    self_conflict_rate: f64,
    seed: u64,
) -> Result<ExampleSet> {
    for (name, rate) in [
        ("context_error_rate", context_error_rate),
        ("self_conflict_rate", self_conflict_rate),
    ] {
        if !(0.0..=1.0).contains(&rate) {
            return Err(Error::Config(format!("{name} must lie in [0, 1], got {rate}")));
        }
    }
    let keys = world.facts.len();
    if n > keys {
        return Err(Error::Capacity(format!(
            "requested {n} examples but the world has only {keys} facts"
        )));
    }
    let mut rng = rng::stream(seed, Purpose::Examples, &[]);
    let chosen = index::sample(&mut rng, keys, n).into_vec();
    let wrong_ctx: BTreeSet<usize> = index::sample(&mut rng, n, (context_error_rate * n as f64).round() as usize)
        .into_iter()
        .collect();
    let conflicted: BTreeSet<usize> = index::sample(&mut rng, n, (self_conflict_rate * n as f64).round() as usize)
        .into_iter()
        .collect();

    let mut examples = Vec::with_capacity(n);
    for (i, &key) in chosen.iter().enumerate() {
        let fact = world.facts[key];
        let context_correct = !wrong_ctx.contains(&i);
        let self_conflict = conflicted.contains(&i);
        let query = world.query(&fact);
        let passage = |v: Token| vec![query[0], query[1], v];

        let values = match (context_correct, self_conflict) {
            (true, false) => vec![fact.gold],
            (false, false) => vec![world.draw_value_excluding(fact.attribute, &[fact.gold], &mut rng)],
            (true, true) => {
                let cf = world.draw_value_excluding(fact.attribute, &[fact.gold], &mut rng);
                let mut v = vec![fact.gold, cf];
                v.shuffle(&mut rng);
                v
            }
            (false, true) => {
                let a = world.draw_value_excluding(fact.attribute, &[fact.gold], &mut rng);
                let b = world.draw_value_excluding(fact.attribute, &[fact.gold, a], &mut rng);
                vec![a, b]
            }
        };

        examples.push(Example {
            id: i as u64,
            contexts: values.into_iter().map(passage).collect(),
            query,
            gold_answer: vec![fact.gold],
            context_correct,
            self_conflict,
            belief_answer: vec![fact.belief],
        });
    }
    Ok(ExampleSet { split: Split::Train, examples })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptPair {
    /// Query-only prompt.
    pub p: Vec<Token>,
    /// Retrieval-augmented prompt; always ends with `p`.
    pub p_ctx: Vec<Token>,
}

pub fn make_prompts(example: &Example) -> PromptPair {
    let mut p = Vec::with_capacity(example.query.len() + 1);
    p.push(QRY);
    p.extend_from_slice(&example.query);

    let mut p_ctx = vec![CTX];
    for passage in &example.contexts {
        p_ctx.extend_from_slice(passage);
        p_ctx.push(SEP);
    }
    if example.contexts.is_empty() {
        p_ctx.push(SEP);
    }
    p_ctx.extend_from_slice(&p);
    PromptPair { p, p_ctx }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spec(e: usize, a: usize, belief_error_rate: f64, seed: u64) -> WorldSpec {
        WorldSpec {
            num_entities: e,
            num_attributes: a,
            vocab_size: WorldSpec::required_vocab(e, a),
            belief_error_rate,
            context_error_rate: 0.5,
            self_conflict_rate: 0.0,
            seed,
        }
    }

    #[test]
    fn zero_error_world_believes_gold() {
        let w = generate_world(&spec(2, 1, 0.0, 1)).unwrap();
        assert_eq!(w.facts.len(), 2);
        assert!(w.facts.iter().all(|f| f.belief == f.gold));
    }

    #[test]
    fn full_error_world_believes_nothing() {
        let w = generate_world(&spec(2, 1, 1.0, 1)).unwrap();
        assert!(w.facts.iter().all(|f| f.belief != f.gold));
    }

    #[test]
    fn world_generation_is_deterministic() {
        let s = spec(20, 10, 0.5, 7);
        let a = serde_json::to_string(&generate_world(&s).unwrap()).unwrap();
        let b = serde_json::to_string(&generate_world(&s).unwrap()).unwrap();
        assert_eq!(a, b);
        let w = generate_world(&s).unwrap();
        assert_eq!(w.belief_errors(), 100);
    }

    #[test]
    fn small_vocab_names_the_minimum() {
        let mut s = spec(3, 2, 0.0, 1);
        s.vocab_size -= 1;
        let err = generate_world(&s).unwrap_err();
        assert!(matches!(err, Error::Capacity(_)));
        assert!(err.to_string().contains(&WorldSpec::required_vocab(3, 2).to_string()));
    }

    #[test]
    fn gold_values_are_distinct_within_attribute() {
        let w = generate_world(&spec(12, 3, 0.0, 3)).unwrap();
        for a in 0..3 {
            let golds: BTreeSet<Token> = (0..12).map(|e| w.fact(e, a).gold).collect();
            assert_eq!(golds.len(), 12);
            assert!(golds.iter().all(|g| w.vocab.value_range(a).contains(g)));
        }
    }

    #[test]
    fn context_error_rate_is_exact() {
        let w = generate_world(&spec(4, 1, 0.0, 1)).unwrap();
        let set = build_examples(&w, 4, 0.5, 0.0, 9).unwrap();
        assert_eq!(set.examples.iter().filter(|e| !e.context_correct).count(), 2);
    }

    #[test]
    fn too_many_examples_is_capacity_error() {
        let w = generate_world(&spec(4, 1, 0.0, 1)).unwrap();
        assert!(matches!(build_examples(&w, 5, 0.5, 0.0, 9), Err(Error::Capacity(_))));
    }

    #[test]
    fn full_self_conflict_has_two_distinct_passages() {
        let w = generate_world(&spec(10, 4, 0.3, 2)).unwrap();
        let set = build_examples(&w, 40, 0.5, 1.0, 5).unwrap();
        for ex in &set.examples {
            assert!(ex.self_conflict);
            let vals: BTreeSet<Token> = ex.asserted_values().collect();
            assert!(ex.contexts.len() >= 2 && vals.len() >= 2);
        }
    }

    #[test]
    fn counterfactual_passages_never_assert_gold() {
        let w = generate_world(&spec(20, 10, 0.5, 11)).unwrap();
        let set = build_examples(&w, 200, 0.5, 0.3, 12).unwrap();
        for ex in &set.examples {
            let gold = ex.gold_answer[0];
            let has_gold = ex.asserted_values().any(|v| v == gold);
            assert_eq!(has_gold, ex.context_correct, "example {}", ex.id);
            let attr = (ex.query[1] as usize) - NUM_SPECIAL - w.vocab.num_entities;
            assert!(ex.asserted_values().all(|v| w.vocab.value_range(attr).contains(&v)));
        }
    }

    #[test]
    fn empty_context_prompt() {
        let ex = Example {
            id: 0,
            query: vec![10, 11],
            gold_answer: vec![20],
            contexts: vec![],
            context_correct: false,
            self_conflict: false,
            belief_answer: vec![20],
        };
        let pp = make_prompts(&ex);
        assert_eq!(pp.p, vec![QRY, 10, 11]);
        assert_eq!(pp.p_ctx, vec![CTX, SEP, QRY, 10, 11]);
    }

    #[test]
    fn prompt_length_arithmetic() {
        let ex = Example {
            id: 0,
            query: vec![10, 11],
            gold_answer: vec![20],
            contexts: vec![vec![10, 11, 20]],
            context_correct: true,
            self_conflict: false,
            belief_answer: vec![20],
        };
        let pp = make_prompts(&ex);
        assert_eq!(pp.p_ctx.len(), pp.p.len() + 3 + 2);
    }

    #[test]
    fn split_is_disjoint_and_labeled() {
        let w = generate_world(&spec(10, 4, 0.5, 2)).unwrap();
        let set = build_examples(&w, 40, 0.5, 0.0, 5).unwrap();
        let (train, test) = set.split_off_test(15, 3).unwrap();
        assert_eq!((train.len(), test.len()), (25, 15));
        assert_eq!((train.split, test.split), (Split::Train, Split::Test));
        assert!(train.ids().is_disjoint(&test.ids()));
    }

    proptest! {
        #[test]
        fn query_prompt_is_suffix_of_context_prompt(
            seed in any::<u64>(),
            sc in 0.0f64..=1.0,
        ) {
            let w = generate_world(&spec(5, 3, 0.5, seed)).unwrap();
            let set = build_examples(&w, 15, 0.5, sc, seed ^ 1).unwrap();
            for ex in &set.examples {
                let pp = make_prompts(ex);
                prop_assert!(pp.p_ctx.ends_with(&pp.p));
                prop_assert!(pp.p_ctx.len() > pp.p.len());
            }
        }
    }
}
