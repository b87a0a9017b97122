//! Autoregressive toy policy.
//!
//! The next-token distribution is `softmax(P^T mean(E[prefix]) + b)`: the
//! prefix is mean-pooled through an embedding table and read out by a linear
//! head. Small enough for exact hand-derived gradients, yet every generated
//! token still depends on the whole prefix, prompt included.

use std::io::{Read, Write};

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::rng::{self, Purpose};
use crate::world::{Token, EOS};

pub const DEFAULT_DIM: usize = 16;
pub const DEFAULT_TEMPERATURE: f64 = 0.9;

/// Flat parameter vector in canonical layout: embeddings (`vocab x dim`,
/// row-major), projection (`dim x vocab`, row-major), bias (`vocab`).
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    vocab_size: usize,
    dim: usize,
    values: Vec<f64>,
}

/// Gradient with the same layout as [`PolicyParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradVector(pub Vec<f64>);

impl GradVector {
    pub fn zeros(len: usize) -> Self {
        GradVector(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn add_scaled(&mut self, other: &GradVector, scale: f64) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += scale * b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.0.iter_mut().for_each(|x| *x *= s);
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    pub fn max_abs_diff(&self, other: &GradVector) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

impl PolicyParams {
    pub fn param_count(vocab_size: usize, dim: usize) -> usize {
        2 * vocab_size * dim + vocab_size
    }

    pub fn zeros(vocab_size: usize, dim: usize) -> Self {
        PolicyParams {
            vocab_size,
            dim,
            values: vec![0.0; Self::param_count(vocab_size, dim)],
        }
    }

    /// Gaussian initialisation: unit-variance embeddings, projection scaled by
    /// `scale / sqrt(dim)`, zero bias.
    pub fn init(vocab_size: usize, dim: usize, scale: f64, seed: u64) -> Self {
        let mut p = Self::zeros(vocab_size, dim);
        let mut rng = rng::stream(seed, Purpose::Init, &[vocab_size as u64, dim as u64]);
        let unit = Normal::new(0.0, 1.0).expect("valid normal");
        let head = scale / (dim as f64).sqrt();
        let (emb, rest) = p.values.split_at_mut(vocab_size * dim);
        emb.iter_mut().for_each(|x| *x = unit.sample(&mut rng));
        rest[..dim * vocab_size]
            .iter_mut()
            .for_each(|x| *x = head * unit.sample(&mut rng));
        p
    }

    pub fn from_parts(vocab_size: usize, dim: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != Self::param_count(vocab_size, dim) {
            return Err(Error::Shape(format!(
                "{} values for vocab {vocab_size} x dim {dim}, expected {}",
                values.len(),
                Self::param_count(vocab_size, dim)
            )));
        }
        if !values.iter().all(|x| x.is_finite()) {
            return Err(Error::Corrupt("non-finite parameter".into()));
        }
        Ok(PolicyParams { vocab_size, dim, values })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn embedding(&self, token: Token) -> &[f64] {
        let t = token as usize;
        &self.values[t * self.dim..(t + 1) * self.dim]
    }

    fn projection(&self) -> &[f64] {
        let off = self.vocab_size * self.dim;
        &self.values[off..off + self.dim * self.vocab_size]
    }

    fn bias(&self) -> &[f64] {
        &self.values[2 * self.vocab_size * self.dim..]
    }

    pub fn zero_grad(&self) -> GradVector {
        GradVector::zeros(self.values.len())
    }

    /// `self += lr * grad`.
    pub fn ascend(&mut self, grad: &GradVector, lr: f64) {
        for (p, g) in self.values.iter_mut().zip(&grad.0) {
            *p += lr * g;
        }
    }

    fn check(&self, tokens: &[Token]) -> Result<()> {
        match tokens.iter().find(|&&t| t as usize >= self.vocab_size) {
            Some(&token) => Err(Error::TokenOutOfRange {
                token,
                vocab_size: self.vocab_size,
            }),
            None => Ok(()),
        }
    }

    fn logits_from_mean(&self, mean: &[f64]) -> Vec<f64> {
        let v = self.vocab_size;
        let proj = self.projection();
        let mut out = self.bias().to_vec();
        for (k, &hk) in mean.iter().enumerate() {
            if hk == 0.0 {
                continue;
            }
            for (o, &w) in out.iter_mut().zip(&proj[k * v..(k + 1) * v]) {
                *o += hk * w;
            }
        }
        out
    }

    // Binary layout: vocab u64, dim u64, then f64 bit patterns, all little-endian.
    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(&(self.vocab_size as u64).to_le_bytes())?;
        w.write_all(&(self.dim as u64).to_le_bytes())?;
        for x in &self.values {
            w.write_all(&x.to_bits().to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let vocab = read_u64(r)? as usize;
        let dim = read_u64(r)? as usize;
        if vocab == 0 || dim == 0 || vocab.saturating_mul(dim) > 1 << 28 {
            return Err(Error::Corrupt(format!("implausible shape {vocab} x {dim}")));
        }
        let values = (0..Self::param_count(vocab, dim))
            .map(|_| read_u64(r).map(f64::from_bits))
            .collect::<Result<Vec<_>>>()?;
        Self::from_parts(vocab, dim, values)
    }
}

pub(crate) fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Corrupt(format!("truncated: {e}")))?;
    Ok(u64::from_le_bytes(buf))
}

/// Running mean of prefix embeddings.
struct PrefixMean {
    sum: Vec<f64>,
    count: usize,
}

impl PrefixMean {
    fn new(params: &PolicyParams, prefix: &[Token]) -> Self {
        let mut m = PrefixMean {
            sum: vec![0.0; params.dim],
            count: 0,
        };
        for &t in prefix {
            m.push(params, t);
        }
        m
    }

    fn push(&mut self, params: &PolicyParams, t: Token) {
        for (s, e) in self.sum.iter_mut().zip(params.embedding(t)) {
            *s += e;
        }
        self.count += 1;
    }

    fn mean(&self) -> Vec<f64> {
        let n = self.count as f64;
        self.sum.iter().map(|s| s / n).collect()
    }
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub fn logits(params: &PolicyParams, prefix: &[Token]) -> Result<Vec<f64>> {
    if prefix.is_empty() {
        return Err(Error::Shape("empty prefix".into()));
    }
    params.check(prefix)?;
    Ok(params.logits_from_mean(&PrefixMean::new(params, prefix).mean()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogProb {
    pub total: f64,
    pub per_token: Vec<f64>,
}

fn check_sequence(params: &PolicyParams, prompt: &[Token], tokens: &[Token]) -> Result<()> {
    if prompt.is_empty() {
        return Err(Error::Shape("empty prompt".into()));
    }
    if tokens.is_empty() {
        return Err(Error::Shape("empty token sequence".into()));
    }
    params.check(prompt)?;
    params.check(tokens)
}

/// Per-token `log pi(tokens[t] | prompt ++ tokens[..t])`.
pub fn log_prob(params: &PolicyParams, prompt: &[Token], tokens: &[Token]) -> Result<LogProb> {
    check_sequence(params, prompt, tokens)?;
    let mut prefix = PrefixMean::new(params, prompt);
    let mut per_token = Vec::with_capacity(tokens.len());
    for &t in tokens {
        let lp = log_softmax(&params.logits_from_mean(&prefix.mean()));
        per_token.push(lp[t as usize]);
        prefix.push(params, t);
    }
    Ok(LogProb {
        total: per_token.iter().sum(),
        per_token,
    })
}

/// Adds `sum_t weights[t] * grad log pi(tokens[t] | prefix_t)` into `grad`.
///
/// Every objective in the crate reduces to per-token weights on the score
/// function, so this is the single backward pass.
pub fn accumulate_weighted_grad(
    params: &PolicyParams,
    prompt: &[Token],
    tokens: &[Token],
    weights: &[f64],
    grad: &mut GradVector,
) -> Result<()> {
    check_sequence(params, prompt, tokens)?;
    if weights.len() != tokens.len() {
        return Err(Error::Shape(format!(
            "{} weights for {} tokens",
            weights.len(),
            tokens.len()
        )));
    }
    let (v, d) = (params.vocab_size, params.dim);
    let proj = params.projection();
    let mut prefix_tokens: Vec<Token> = prompt.to_vec();
    let mut prefix = PrefixMean::new(params, prompt);
    let (g_emb, rest) = grad.0.split_at_mut(v * d);
    let (g_proj, g_bias) = rest.split_at_mut(d * v);
    let mut g_logits = vec![0.0; v];
    let mut g_mean = vec![0.0; d];

    for (&t, &w) in tokens.iter().zip(weights) {
        if w != 0.0 {
            let mean = prefix.mean();
            let probs = softmax(&params.logits_from_mean(&mean));
            for (g, p) in g_logits.iter_mut().zip(&probs) {
                *g = -w * p;
            }
            g_logits[t as usize] += w;

            for (gb, gl) in g_bias.iter_mut().zip(&g_logits) {
                *gb += gl;
            }
            for k in 0..d {
                let row = &mut g_proj[k * v..(k + 1) * v];
                let hk = mean[k];
                let prow = &proj[k * v..(k + 1) * v];
                let mut acc = 0.0;
                for j in 0..v {
                    row[j] += hk * g_logits[j];
                    acc += prow[j] * g_logits[j];
                }
                g_mean[k] = acc;
            }
            let inv = 1.0 / prefix_tokens.len() as f64;
            for &pt in &prefix_tokens {
                let row = &mut g_emb[pt as usize * d..(pt as usize + 1) * d];
                for (r, gm) in row.iter_mut().zip(&g_mean) {
                    *r += gm * inv;
                }
            }
        }
        prefix.push(params, t);
        prefix_tokens.push(t);
    }
    Ok(())
}

pub fn grad_log_prob(params: &PolicyParams, prompt: &[Token], tokens: &[Token]) -> Result<GradVector> {
    let mut grad = params.zero_grad();
    accumulate_weighted_grad(params, prompt, tokens, &vec![1.0; tokens.len()], &mut grad)?;
    Ok(grad)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Decoding {
    Greedy,
    Temperature(f64),
}

/// Lowest-id argmax.
fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Decodes until EOS (included in the output) or `max_len` tokens.
pub fn sample(
    params: &PolicyParams,
    prompt: &[Token],
    decoding: Decoding,
    rng: &mut impl Rng,
    max_len: usize,
) -> Result<Vec<Token>> {
    if prompt.is_empty() {
        return Err(Error::Shape("empty prompt".into()));
    }
    if let Decoding::Temperature(t) = decoding {
        if !(t > 0.0) {
            return Err(Error::Config(format!("temperature must be positive, got {t}")));
        }
    }
    params.check(prompt)?;
    let mut prefix = PrefixMean::new(params, prompt);
    let mut out = Vec::new();
    while out.len() < max_len {
        let z = params.logits_from_mean(&prefix.mean());
        let t = match decoding {
            Decoding::Greedy => argmax(&z),
            Decoding::Temperature(temp) => {
                let scaled: Vec<f64> = z.iter().map(|x| x / temp).collect();
                let probs = softmax(&scaled);
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                let mut pick = probs.len() - 1;
                for (i, p) in probs.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        pick = i;
                        break;
                    }
                }
                pick
            }
        } as Token;
        out.push(t);
        if t == EOS {
            break;
        }
        prefix.push(params, t);
    }
    Ok(out)
}

/// Greedy decode with no randomness.
pub fn greedy(params: &PolicyParams, prompt: &[Token], max_len: usize) -> Result<Vec<Token>> {
    sample(params, prompt, Decoding::Greedy, &mut rand::rngs::mock::StepRng::new(0, 0), max_len)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainReport {
    pub epochs: usize,
    pub final_log_likelihood: f64,
    pub greedy_accuracy: f64,
}

/// Fits the policy to `(prompt, answer)` pairs by stochastic gradient ascent on
/// `log pi(answer ++ EOS | prompt)`, sweeping the pairs in order each epoch.
pub fn pretrain(
    params: &PolicyParams,
    pairs: &[(Vec<Token>, Vec<Token>)],
    epochs: usize,
    lr: f64,
) -> Result<(PolicyParams, PretrainReport)> {
    if !(lr > 0.0) {
        return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
    }
    let targets: Vec<Vec<Token>> = pairs
        .iter()
        .map(|(_, a)| a.iter().copied().chain(std::iter::once(EOS)).collect())
        .collect();
    let mut current = params.clone();
    let mut grad = current.zero_grad();
    for _ in 0..epochs {
        for ((prompt, _), target) in pairs.iter().zip(&targets) {
            grad.0.iter_mut().for_each(|g| *g = 0.0);
            accumulate_weighted_grad(&current, prompt, target, &vec![1.0; target.len()], &mut grad)?;
            current.ascend(&grad, lr);
        }
    }
    let mut ll = 0.0;
    let mut hits = 0usize;
    for ((prompt, _), target) in pairs.iter().zip(&targets) {
        ll += log_prob(&current, prompt, target)?.total;
        if greedy(&current, prompt, target.len())? == *target {
            hits += 1;
        }
    }
    let report = PretrainReport {
        epochs,
        final_log_likelihood: ll,
        greedy_accuracy: if pairs.is_empty() { 1.0 } else { hits as f64 / pairs.len() as f64 },
    };
    Ok((current, report))
}
