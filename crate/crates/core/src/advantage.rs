//! Group-relative advantages.
//!
//! * per-group z-scores for the parametric and contextual groups,
//! * the joint z-score of parametric rewards against the union of both
//!   groups, which drives the exploration pathway,
//! * an asymmetric piecewise-linear transform that amplifies positive joint
//!   advantages and damps negative ones.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum StdKind {
    #[default]
    Population,
    Sample,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdvantageConfig {
    pub alpha: f64,
    pub beta_adv: f64,
    pub std_floor: f64,
    pub std_kind: StdKind,
}

impl Default for AdvantageConfig {
    fn default() -> Self {
        AdvantageConfig {
            alpha: 2.0,
            beta_adv: 0.05,
            std_floor: 1e-8,
            std_kind: StdKind::Population,
        }
    }
}

impl AdvantageConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.alpha > 0.0) || !(self.beta_adv > 0.0) {
            return Err(format!(
                "alpha and beta_adv must be positive, got {} and {}",
                self.alpha, self.beta_adv
            ));
        }
        if !(self.std_floor > 0.0) {
            return Err(format!("std_floor must be positive, got {}", self.std_floor));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdvantageSet {
    pub a_param: Vec<f64>,
    pub a_ctx: Vec<f64>,
    pub a_joint: Vec<f64>,
    pub a_joint_transformed: Vec<f64>,
}

fn mean_std(xs: &[f64], kind: StdKind) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let ss: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum();
    let denom = match kind {
        StdKind::Population => n,
        StdKind::Sample => n - 1.0,
    };
    let std = if denom > 0.0 { (ss / denom).sqrt() } else { 0.0 };
    (mean, std)
}

fn zscore(subject: &[f64], mean: f64, std: f64, cfg: &AdvantageConfig) -> Vec<f64> {
    if std < cfg.std_floor {
        return vec![0.0; subject.len()];
    }
    subject.iter().map(|r| (r - mean) / std).collect()
}

/// `(r - mean) / std` within the group; all zeros when the group has no spread.
pub fn normalize_group(rewards: &[f64], cfg: &AdvantageConfig) -> Vec<f64> {
    if rewards.is_empty() {
        return Vec::new();
    }
    let (mean, std) = mean_std(rewards, cfg.std_kind);
    zscore(rewards, mean, std, cfg)
}

/// Parametric rewards z-scored against the pooled statistics of both groups.
pub fn normalize_joint(rewards_param: &[f64], rewards_ctx: &[f64], cfg: &AdvantageConfig) -> Vec<f64> {
    if rewards_param.is_empty() {
        return Vec::new();
    }
    let union: Vec<f64> = rewards_param.iter().chain(rewards_ctx).copied().collect();
    let (mean, std) = mean_std(&union, cfg.std_kind);
    zscore(rewards_param, mean, std, cfg)
}

pub fn transform(a: f64, cfg: &AdvantageConfig) -> f64 {
    if a > 0.0 {
        cfg.alpha * a
    } else {
        cfg.beta_adv * a
    }
}

pub fn compute(rewards_param: &[f64], rewards_ctx: &[f64], cfg: &AdvantageConfig) -> AdvantageSet {
    let a_joint = normalize_joint(rewards_param, rewards_ctx, cfg);
    AdvantageSet {
        a_param: normalize_group(rewards_param, cfg),
        a_ctx: normalize_group(rewards_ctx, cfg),
        a_joint_transformed: a_joint.iter().map(|&a| transform(a, cfg)).collect(),
        a_joint,
    }
}
