//! Terminal rewards for one traversal.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    /// Rank penalty per position.
    pub alpha: f64,
    pub r_node_pos: f64,
    pub r_node_neg: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig { alpha: 0.2, r_node_pos: 1.0, r_node_neg: -1.0 }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(Error::Config(format!("alpha must be positive, got {}", self.alpha)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Rewards {
    pub r_node: f64,
    pub r_gold: f64,
    pub r_pool: f64,
    pub total: f64,
}

impl Rewards {
    pub fn new(r_node: f64, r_gold: f64, r_pool: f64) -> Self {
        Rewards { r_node, r_gold, r_pool, total: r_node + r_gold + r_pool }
    }
}

/// `r_node_pos` when the traversal halts on `target`, `r_node_neg` otherwise,
/// and 0 when the sample defines no target node.
pub fn reward_node(halt: &str, target: Option<&str>, cfg: &RewardConfig) -> f64 {
    match target {
        None => 0.0,
        Some(t) if t == halt => cfg.r_node_pos,
        Some(_) => cfg.r_node_neg,
    }
}

/// `max(1 - alpha * r, -1)` for the best 1-indexed rank `r` of a gold id in
/// the pool, or -1 when no gold made the pool.
pub fn reward_gold<I: AsRef<str>>(pool: &[I], golds: &[String], cfg: &RewardConfig) -> f64 {
    match pool.iter().position(|id| golds.iter().any(|g| g == id.as_ref())) {
        Some(p) => gold_rank_reward(p + 1, cfg.alpha),
        None => -1.0,
    }
}

pub fn gold_rank_reward(rank: usize, alpha: f64) -> f64 {
    (1.0 - alpha * rank as f64).max(-1.0)
}

pub fn reward_pool(r_gold: f64, pool_size: usize) -> f64 {
    assert!(pool_size >= 1, "pool size must be at least 1");
    r_gold / pool_size as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn node_reward_cases() {
        let cfg = RewardConfig::default();
        assert_eq!(reward_node("T0", Some("T0"), &cfg), 1.0);
        assert_eq!(reward_node("T0", Some("T1"), &cfg), -1.0);
        assert_eq!(reward_node("T0", None, &cfg), 0.0);
    }

    #[test]
    fn gold_reward_cases() {
        let cfg = RewardConfig::default();
        let golds = vec!["g".to_string()];
        assert!((reward_gold(&["g", "x"], &golds, &cfg) - 0.8).abs() < 1e-15);
        let mut pool: Vec<String> = (0..11).map(|i| format!("x{i}")).collect();
        pool.push("g".into());
        assert_eq!(reward_gold(&pool, &golds, &cfg), -1.0);
        assert_eq!(reward_gold(&["x"], &golds, &cfg), -1.0);
    }

    #[test]
    fn pool_reward_cases() {
        assert!((reward_pool(0.8, 4) - 0.2).abs() < 1e-15);
        assert!((reward_pool(-1.0, 10) + 0.1).abs() < 1e-15);
        assert_eq!(reward_pool(1.0, 1), 1.0);
    }

    #[test]
    fn total_is_exact_sum() {
        let r = Rewards::new(1.0, 0.6, 0.3);
        assert_eq!(r.total, 1.0 + 0.6 + 0.3);
    }
}
