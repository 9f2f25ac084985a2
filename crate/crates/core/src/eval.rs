//! Recall@k for the selector and the random and semantic baselines.

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::UnifiedGraph;
use crate::kb::DialogueSample;
use crate::nn::params::ModelParams;
use crate::scalar::Scalar;
use crate::selector::{dialogue_embedding, GraphIndex, SelectorConfig, Selector, Traversal};
use crate::text::{Embedder, TextRef};

pub const DEFAULT_KS: [usize; 3] = [1, 5, 10];

/// A sample's full candidate ranking, best first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedSample {
    pub id: String,
    pub ranking: Vec<String>,
    /// Size of the cut handed to the generator.
    pub pool_size: usize,
}

impl RankedSample {
    /// 1-indexed best rank of any gold id.
    pub fn gold_rank(&self, golds: &[String]) -> Option<usize> {
        self.ranking.iter().position(|id| golds.contains(id)).map(|p| p + 1)
    }
}

/// Fraction of samples with any gold id among the top `min(k, len)` entries.
pub fn recall_at_k(ranked: &[RankedSample], samples: &[DialogueSample], ks: &[usize]) -> Result<BTreeMap<usize, f64>> {
    if ranked.len() != samples.len() {
        return Err(Error::validation(format!("{} rankings for {} samples", ranked.len(), samples.len())));
    }
    let mut hits = vec![0usize; ks.len()];
    for (r, s) in ranked.iter().zip(samples) {
        if r.id != s.id {
            return Err(Error::validation(format!("ranking for `{}` aligned with sample `{}`", r.id, s.id)));
        }
        let rank = r.gold_rank(&s.gold_knowledge);
        for (h, &k) in hits.iter_mut().zip(ks) {
            if rank.is_some_and(|p| p <= k.min(r.ranking.len())) {
                *h += 1;
            }
        }
    }
    let n = samples.len().max(1) as f64;
    Ok(ks.iter().zip(hits).map(|(&k, h)| (k, h as f64 / n)).collect())
}

/// Knowledge reachable from the sample's start node, or all knowledge when
/// the sample names none.
pub fn baseline_candidates(graph: &UnifiedGraph, sample: &DialogueSample) -> Result<Vec<usize>> {
    let Some(start) = &sample.start_node else {
        return Ok((0..graph.knowledge_nodes().len()).collect());
    };
    let s = graph.require_process(start)?;
    let mut out: Vec<usize> = graph.owned_knowledge(s).to_vec();
    for &n in graph.neighbor_indices(s) {
        out.extend_from_slice(graph.owned_knowledge(n));
    }
    Ok(out)
}

fn ids(graph: &UnifiedGraph, idx: &[usize]) -> Vec<String> {
    idx.iter().map(|&k| graph.knowledge_nodes()[k].id.clone()).collect()
}

pub fn rank_random(graph: &UnifiedGraph, samples: &[DialogueSample], seed: u64) -> Result<Vec<RankedSample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    samples
        .iter()
        .map(|s| {
            let mut c = baseline_candidates(graph, s)?;
            c.shuffle(&mut rng);
            Ok(RankedSample { id: s.id.clone(), pool_size: c.len(), ranking: ids(graph, &c) })
        })
        .collect()
}

pub fn rank_semantic(graph: &UnifiedGraph, samples: &[DialogueSample], provider: &dyn Embedder) -> Result<Vec<RankedSample>> {
    samples
        .iter()
        .map(|s| {
            let ctx = dialogue_embedding(&s.history, &s.utterance, provider)?;
            let mut scored = baseline_candidates(graph, s)?
                .into_iter()
                .map(|k| {
                    let kn = &graph.knowledge_nodes()[k];
                    let e = provider.embed(TextRef::Node { id: &kn.id, text: &kn.text })?;
                    let score: f64 = e.values().iter().zip(&ctx).map(|(a, b)| a * b).sum();
                    Ok((score, kn.id.clone()))
                })
                .collect::<Result<Vec<_>>>()?;
            scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
            Ok(RankedSample { id: s.id.clone(), pool_size: scored.len(), ranking: scored.into_iter().map(|x| x.1).collect() })
        })
        .collect()
}

pub fn rank_selector<S: Scalar>(selector: &Selector<'_, S>, samples: &[DialogueSample]) -> Result<Vec<RankedSample>> {
    samples
        .iter()
        .map(|s| {
            let r = selector.select(s)?;
            Ok(RankedSample {
                id: s.id.clone(),
                pool_size: r.pool_size,
                ranking: r.ranking.into_iter().map(|k| k.id).collect(),
            })
        })
        .collect()
}

pub fn baseline_random(graph: &UnifiedGraph, samples: &[DialogueSample], seed: u64, ks: &[usize]) -> Result<BTreeMap<usize, f64>> {
    recall_at_k(&rank_random(graph, samples, seed)?, samples, ks)
}

pub fn baseline_semantic(
    graph: &UnifiedGraph,
    samples: &[DialogueSample],
    provider: &dyn Embedder,
    ks: &[usize],
) -> Result<BTreeMap<usize, f64>> {
    recall_at_k(&rank_semantic(graph, samples, provider)?, samples, ks)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub recall: BTreeMap<usize, f64>,
    pub pool_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub per_seed: Vec<SeedResult>,
    pub mean: BTreeMap<usize, f64>,
    /// Sample standard deviation over seeds; 0 for a single seed.
    pub std: BTreeMap<usize, f64>,
    pub pool_mean: f64,
}

impl MethodReport {
    fn from_seeds(per_seed: Vec<SeedResult>) -> Self {
        let n = per_seed.len() as f64;
        let mut mean = BTreeMap::new();
        let mut std = BTreeMap::new();
        if let Some(first) = per_seed.first() {
            for &k in first.recall.keys() {
                let xs: Vec<f64> = per_seed.iter().map(|s| s.recall[&k]).collect();
                let m = xs.iter().sum::<f64>() / n;
                let var = if xs.len() > 1 {
                    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0)
                } else {
                    0.0
                };
                mean.insert(k, m);
                std.insert(k, var.sqrt());
            }
        }
        let pool_mean = per_seed.iter().map(|s| s.pool_mean).sum::<f64>() / n.max(1.0);
        MethodReport { per_seed, mean, std, pool_mean }
    }

    pub fn r_at(&self, k: usize) -> f64 {
        self.mean.get(&k).copied().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub ks: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Keyed by `selector`, `random` and `semantic`.
    pub methods: BTreeMap<String, MethodReport>,
    /// Per-sample ranks for CSV export; not serialized.
    #[serde(skip)]
    pub rows: Vec<RankRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankRow {
    pub method: String,
    pub seed: u64,
    pub sample: String,
    pub gold_rank: Option<usize>,
    pub candidates: usize,
    pub pool_size: usize,
}

impl EvalReport {
    pub fn method(&self, name: &str) -> Option<&MethodReport> {
        self.methods.get(name)
    }

    pub fn write_csv(&self, sink: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn pool_mean(ranked: &[RankedSample]) -> f64 {
    ranked.iter().map(|r| r.pool_size as f64).sum::<f64>() / ranked.len().max(1) as f64
}

/// Selector, random and semantic R@k for every seed. Seeds change the random
/// shuffle and, for sampled traversal, the walk.
pub fn run_eval<S: Scalar>(
    graph: &UnifiedGraph,
    corpus: &[DialogueSample],
    params: &ModelParams<S>,
    provider: &dyn Embedder,
    seeds: &[u64],
    config: &SelectorConfig,
    ks: &[usize],
) -> Result<EvalReport> {
    if seeds.is_empty() {
        return Err(Error::validation("evaluation needs at least one seed"));
    }
    let index = Arc::new(GraphIndex::build(graph, provider)?);
    let semantic = rank_semantic(graph, corpus, provider)?;
    let mut greedy_cache: Option<Vec<RankedSample>> = None;
    let mut per: BTreeMap<String, Vec<SeedResult>> = BTreeMap::new();
    let mut rows = Vec::new();
    for &seed in seeds {
        let selector_ranked = match config.traversal {
            Traversal::Greedy => match &greedy_cache {
                Some(r) => r.clone(),
                None => {
                    let sel = Selector::with_index(graph, provider, params, *config, Arc::clone(&index), None)?;
                    let r = rank_selector(&sel, corpus)?;
                    greedy_cache = Some(r.clone());
                    r
                }
            },
            Traversal::Sampled { .. } => {
                let cfg = SelectorConfig { traversal: Traversal::Sampled { seed }, ..*config };
                let sel = Selector::with_index(graph, provider, params, cfg, Arc::clone(&index), None)?;
                rank_selector(&sel, corpus)?
            }
        };
        let random = rank_random(graph, corpus, seed)?;
        for (name, ranked) in [("selector", &selector_ranked), ("random", &random), ("semantic", &semantic)] {
            per.entry(name.to_string()).or_default().push(SeedResult {
                seed,
                recall: recall_at_k(ranked, corpus, ks)?,
                pool_mean: pool_mean(ranked),
            });
            for (r, s) in ranked.iter().zip(corpus) {
                rows.push(RankRow {
                    method: name.to_string(),
                    seed,
                    sample: s.id.clone(),
                    gold_rank: r.gold_rank(&s.gold_knowledge),
                    candidates: r.ranking.len(),
                    pool_size: r.pool_size,
                });
            }
        }
    }
    Ok(EvalReport {
        ks: ks.to_vec(),
        seeds: seeds.to_vec(),
        methods: per.into_iter().map(|(k, v)| (k, MethodReport::from_seeds(v))).collect(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(id: &str, gold: &str) -> DialogueSample {
        DialogueSample {
            id: id.into(),
            history: vec![],
            utterance: "x".into(),
            gold_knowledge: vec![gold.into()],
            gold_path: None,
            start_node: None,
        }
    }

    fn ranked(id: &str, ranking: &[&str]) -> RankedSample {
        RankedSample { id: id.into(), ranking: ranking.iter().map(|s| s.to_string()).collect(), pool_size: 1 }
    }

    #[test]
    fn recall_counting() {
        let samples: Vec<_> = (0..10).map(|i| sample(&format!("s{i}"), "g")).collect();
        let r: Vec<_> = (0..10)
            .map(|i| {
                if i < 3 {
                    ranked(&format!("s{i}"), &["g", "a", "b"])
                } else {
                    ranked(&format!("s{i}"), &["a", "b", "g"])
                }
            })
            .collect();
        let rec = recall_at_k(&r, &samples, &[1, 5]).unwrap();
        assert!((rec[&1] - 0.3).abs() < 1e-15);
        assert_eq!(rec[&5], 1.0);
    }

    #[test]
    fn recall_rejects_misaligned_ids() {
        let err = recall_at_k(&[ranked("a", &["g"])], &[sample("b", "g")], &[1]).unwrap_err();
        assert!(err.to_string().contains("`a`"));
    }

    #[test]
    fn std_is_sample_std() {
        let mk = |seed, v| SeedResult { seed, recall: [(1usize, v)].into_iter().collect(), pool_mean: 1.0 };
        let m = MethodReport::from_seeds(vec![mk(0, 0.2), mk(1, 0.4)]);
        assert!((m.mean[&1] - 0.3).abs() < 1e-15);
        assert!((m.std[&1] - (0.02f64).sqrt()).abs() < 1e-12);
        let single = MethodReport::from_seeds(vec![mk(0, 0.2)]);
        assert_eq!(single.std[&1], 0.0);
    }
}
