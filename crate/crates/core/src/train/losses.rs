//! Policy-gradient and cross-entropy objectives.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::tape::log_sum_exp;
use crate::train::rewards::Rewards;

/// One decision of a traversal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceDecision {
    pub node: String,
    pub action: String,
    pub logp: f64,
    /// The action space the decision was taken over, current node first.
    pub candidates: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraversalTrace {
    pub steps: Vec<TraceDecision>,
    pub halt_node: String,
    pub rewards: Rewards,
}

impl TraversalTrace {
    pub fn logp_sum(&self) -> f64 {
        self.steps.iter().map(|s| s.logp).sum()
    }
}

/// `-(1/N) sum_traces total * sum_steps logp`, rewards held constant.
pub fn reinforce_loss(traces: &[TraversalTrace]) -> Result<f64> {
    if traces.is_empty() {
        return Err(Error::validation("reinforce loss over an empty trace set"));
    }
    let n = traces.len() as f64;
    Ok(-traces.iter().map(|t| t.rewards.total * t.logp_sum()).sum::<f64>() / n)
}

/// `-log softmax(logits)[target]`.
pub fn cross_entropy(logits: &[f64], target: usize) -> f64 {
    log_sum_exp(logits) - logits[target]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SupervisedLosses {
    pub l_node: f64,
    /// `None` when no gold knowledge is among the candidates.
    pub l_knowledge: Option<f64>,
}

/// Node loss averaged over the steps that have a target; knowledge loss
/// averaged over the golds present among the candidates.
pub fn supervised_losses(
    steps: &[(Vec<f64>, Option<usize>)],
    knowledge_scores: &[f64],
    gold_positions: &[usize],
) -> SupervisedLosses {
    let node_terms: Vec<f64> = steps
        .iter()
        .filter_map(|(logits, target)| target.map(|t| cross_entropy(logits, t)))
        .collect();
    let l_node = if node_terms.is_empty() {
        0.0
    } else {
        node_terms.iter().sum::<f64>() / node_terms.len() as f64
    };
    let l_knowledge = if gold_positions.is_empty() || knowledge_scores.is_empty() {
        None
    } else {
        let lse = log_sum_exp(knowledge_scores);
        let total: f64 = gold_positions.iter().map(|&g| lse - knowledge_scores[g]).sum();
        Some(total / gold_positions.len() as f64)
    };
    SupervisedLosses { l_node, l_knowledge }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace(total: f64, logps: &[f64]) -> TraversalTrace {
        TraversalTrace {
            steps: logps
                .iter()
                .map(|&logp| TraceDecision { node: "a".into(), action: "b".into(), logp, candidates: vec![] })
                .collect(),
            halt_node: "b".into(),
            rewards: Rewards { r_node: total, r_gold: 0.0, r_pool: 0.0, total },
        }
    }

    #[test]
    fn reinforce_cases() {
        assert!(reinforce_loss(&[]).is_err());
        assert_eq!(reinforce_loss(&[trace(0.0, &[-0.3, -1.0])]).unwrap(), 0.0);
        assert_eq!(reinforce_loss(&[trace(1.0, &[-0.7])]).unwrap(), 0.7);
        let two = reinforce_loss(&[trace(1.0, &[-0.5]), trace(-2.0, &[-0.25, -0.25])]).unwrap();
        assert!((two - (0.5 - 1.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn node_loss_bound() {
        let l = supervised_losses(&[(vec![2.0, 0.0], Some(0))], &[], &[]);
        assert!(l.l_node < 2f64.ln());
        assert_eq!(l.l_knowledge, None);
    }

    #[test]
    fn uniform_knowledge_loss_is_ln_n() {
        let l = supervised_losses(&[], &[0.3; 4], &[2]);
        assert!((l.l_knowledge.unwrap() - 4f64.ln()).abs() < 1e-12);
        assert_eq!(l.l_node, 0.0);
    }

    #[test]
    fn hand_cross_entropy() {
        // logits [1, 2, 0], target 0: ln(e + e^2 + 1) - 1
        let want = (1f64.exp() + 2f64.exp() + 1.0).ln() - 1.0;
        assert!((cross_entropy(&[1.0, 2.0, 0.0], 0) - want).abs() < 1e-12);
        let l = supervised_losses(&[(vec![1.0, 2.0, 0.0], Some(0)), (vec![0.0, 0.0], None)], &[1.0, 2.0, 0.0], &[0, 1]);
        assert!((l.l_node - want).abs() < 1e-12);
        let want_k = (want + cross_entropy(&[1.0, 2.0, 0.0], 1)) / 2.0;
        assert!((l.l_knowledge.unwrap() - want_k).abs() < 1e-12);
    }
}
