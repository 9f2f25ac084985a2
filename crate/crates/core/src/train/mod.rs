//! Rollouts, rewards and the combined training objective.

pub mod losses;
pub mod optim;
pub mod rewards;

use std::io::Write;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{GraphKind, UnifiedGraph};
use crate::kb::DialogueSample;
use crate::nn::params::{Dims, ModelParams, ModelVars};
use crate::nn::tape::{Tape, Var};
use crate::scalar::Scalar;
use crate::selector::{
    context_on_tape, episode_result, resolve_start, run_episode, validate_corpus, Episode, EpisodeInputs,
    GraphIndex, LazyRefresh, ModalitySummaries, NodeSource, Policy, SelectorConfig, Selector,
};
use crate::text::Embedder;

pub use losses::{cross_entropy, reinforce_loss, supervised_losses, SupervisedLosses, TraceDecision, TraversalTrace};
pub use optim::{AdamW, AdamWConfig, OneCycle};
pub use rewards::{reward_gold, reward_node, reward_pool, RewardConfig, Rewards};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossToggles {
    pub walk: bool,
    pub node: bool,
    pub knowledge: bool,
}

impl Default for LossToggles {
    fn default() -> Self {
        LossToggles { walk: true, node: true, knowledge: true }
    }
}

impl LossToggles {
    pub fn any(&self) -> bool {
        self.walk || self.node || self.knowledge
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub dims: Dims,
    pub epochs: usize,
    pub batch_size: usize,
    pub rollouts: usize,
    pub schedule: OneCycle,
    pub optimizer: AdamWConfig,
    pub seed: u64,
    pub losses: LossToggles,
    /// Subtract the per-sample mean reward in the walk loss.
    pub baseline: bool,
    /// Rescale gradients whose global norm exceeds this.
    pub clip_norm: Option<f64>,
    /// Trailing fraction of the corpus held out by [`train`] for per-epoch R@1.
    pub heldout_fraction: f64,
    pub selector: SelectorConfig,
    pub rewards: RewardConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dims: Dims::default(),
            epochs: 30,
            batch_size: 10,
            rollouts: 4,
            schedule: OneCycle::default(),
            optimizer: AdamWConfig::default(),
            seed: 0,
            losses: LossToggles::default(),
            baseline: false,
            clip_norm: None,
            heldout_fraction: 0.1,
            selector: SelectorConfig::default(),
            rewards: RewardConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.losses.any() {
            return Err(Error::Config("at least one loss component must be enabled".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.rollouts == 0 {
            return Err(Error::Config("epochs, batch_size and rollouts must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.heldout_fraction) {
            return Err(Error::Config("heldout_fraction must lie in [0, 1)".into()));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::Config("clip_norm must be positive".into()));
            }
        }
        self.dims.validate()?;
        self.schedule.validate()?;
        self.rewards.validate()?;
        self.selector.validate()
    }
}

/// Per-sample data that stays fixed during training.
#[derive(Debug, Clone)]
pub(crate) struct Prepared {
    sources: ModalitySummaries,
    start: usize,
    path: Vec<usize>,
    node_target: Option<String>,
    golds: Vec<usize>,
    gold_ids: Vec<String>,
}

fn prepare(
    graph: &UnifiedGraph,
    index: &GraphIndex,
    provider: &dyn Embedder,
    sample: &DialogueSample,
    selector: &SelectorConfig,
) -> Result<Prepared> {
    let keywords = index.keywords.extract(&sample.history, &sample.utterance, selector.keywords);
    let sources = ModalitySummaries::compute(&sample.history, &sample.utterance, &keywords, provider)?;
    let start = resolve_start(graph, index, sample, provider)?;
    let path = sample
        .gold_path
        .iter()
        .flatten()
        .map(|id| graph.process_index(id).ok_or_else(|| Error::UnknownNode(id.clone())))
        .collect::<Result<Vec<_>>>()?;
    let golds = sample
        .gold_knowledge
        .iter()
        .map(|id| graph.knowledge_index(id).ok_or_else(|| Error::UnknownNode(id.clone())))
        .collect::<Result<Vec<_>>>()?;
    let node_target = match (&sample.gold_path, graph.kind()) {
        (Some(p), _) if !p.is_empty() => p.last().cloned(),
        (_, GraphKind::Documents) => golds
            .first()
            .map(|&k| graph.knowledge_nodes()[k].owner.clone()),
        _ => None,
    };
    Ok(Prepared { sources, start, path, node_target, golds, gold_ids: sample.gold_knowledge.clone() })
}

/// Differentiable pieces of one traversal.
#[derive(Debug, Clone)]
pub struct TrajectoryVars {
    /// Sum of the chosen actions' log-probabilities; `None` for a 0-step walk.
    pub logp_sum: Option<Var>,
    /// Mean node cross-entropy over steps with a gold target.
    pub node_ce: Option<Var>,
    /// Mean knowledge cross-entropy over reachable golds.
    pub knowledge_ce: Option<Var>,
    pub rewards: Rewards,
    pub pool_size: usize,
    pub trace: TraversalTrace,
}

fn trajectory_terms<S: Scalar>(
    tape: &mut Tape<S>,
    graph: &UnifiedGraph,
    prep: &Prepared,
    episode: &Episode,
    cfg: &TrainConfig,
) -> TrajectoryVars {
    let result = episode_result(tape, graph, episode, &cfg.selector);
    let pool_ids: Vec<&str> = result.pool.iter().map(|k| k.id.as_str()).collect();
    let r_node = reward_node(&result.halt_node, prep.node_target.as_deref(), &cfg.rewards);
    let r_gold = reward_gold(&pool_ids, &prep.gold_ids, &cfg.rewards);
    let rewards = Rewards::new(r_node, r_gold, reward_pool(r_gold, result.pool_size));

    let logps: Vec<Var> = episode.steps.iter().map(|s| s.logp).collect();
    let logp_sum = if logps.is_empty() { None } else { Some(tape.sum_n(&logps)) };

    let mut node_terms = Vec::new();
    for step in &episode.steps {
        let Some(i) = prep.path.iter().position(|&p| p == step.node) else { continue };
        let target = prep.path.get(i + 1).copied().unwrap_or(step.node);
        if let Some(pos) = step.action_space.iter().position(|&n| n == target) {
            let lp = tape.index(step.log_probs, pos);
            node_terms.push(tape.neg(lp));
        }
    }
    let node_ce = if node_terms.is_empty() { None } else { Some(tape.mean_n(&node_terms)) };

    let gold_pos: Vec<usize> = episode
        .candidates
        .iter()
        .enumerate()
        .filter(|(_, k)| prep.golds.contains(k))
        .map(|(i, _)| i)
        .collect();
    let knowledge_ce = if gold_pos.is_empty() {
        None
    } else {
        let ls = tape.log_softmax(episode.knowledge_scores);
        let terms: Vec<Var> = gold_pos
            .iter()
            .map(|&g| {
                let lp = tape.index(ls, g);
                tape.neg(lp)
            })
            .collect();
        Some(tape.mean_n(&terms))
    };

    let id = |n: usize| graph.process_nodes()[n].id.clone();
    let trace = TraversalTrace {
        steps: episode
            .steps
            .iter()
            .map(|s| TraceDecision {
                node: id(s.node),
                action: id(s.action_space[s.chosen]),
                logp: tape.scalar_value(s.logp).to_f64_lossy(),
                candidates: s.action_space.iter().map(|&n| id(n)).collect(),
            })
            .collect(),
        halt_node: result.halt_node.clone(),
        rewards,
    };
    TrajectoryVars { logp_sum, node_ce, knowledge_ce, rewards, pool_size: result.pool_size, trace }
}

#[allow(clippy::too_many_arguments)]
fn trajectory_with<S: Scalar>(
    tape: &mut Tape<S>,
    vars: &ModelVars,
    source: &mut dyn NodeSource<S>,
    graph: &UnifiedGraph,
    index: &GraphIndex,
    prep: &Prepared,
    context: Var,
    cfg: &TrainConfig,
    policy: &mut Policy<'_>,
) -> Result<TrajectoryVars> {
    let inputs = EpisodeInputs { graph, index, config: &cfg.selector };
    let episode = run_episode(tape, vars, source, &inputs, context, prep.start, policy)?;
    Ok(trajectory_terms(tape, graph, prep, &episode, cfg))
}

/// Records one traversal of `sample` on `tape`, differentiable through the
/// graph refresh, context encoding and every decision.
#[allow(clippy::too_many_arguments)]
pub fn trajectory_on_tape<S: Scalar>(
    tape: &mut Tape<S>,
    vars: &ModelVars,
    graph: &UnifiedGraph,
    index: &GraphIndex,
    provider: &dyn Embedder,
    sample: &DialogueSample,
    cfg: &TrainConfig,
    policy: &mut Policy<'_>,
) -> Result<TrajectoryVars> {
    let prep = prepare(graph, index, provider, sample, &cfg.selector)?;
    let mut lazy = LazyRefresh::new(graph, &index.encodings, &vars.graph_gat);
    let (context, _) = context_on_tape(tape, vars, &prep.sources)?;
    trajectory_with(tape, vars, &mut lazy, graph, index, &prep, context, cfg, policy)
}

/// Sampled traversal with rewards filled in.
pub fn rollout<S: Scalar>(
    graph: &UnifiedGraph,
    sample: &DialogueSample,
    provider: &dyn Embedder,
    params: &ModelParams<S>,
    cfg: &TrainConfig,
    rng: &mut dyn rand::RngCore,
) -> Result<TraversalTrace> {
    let index = GraphIndex::build(graph, provider)?;
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape);
    let t = trajectory_on_tape(&mut tape, &vars, graph, &index, provider, sample, cfg, &mut Policy::Sample(rng))?;
    Ok(t.trace)
}

/// Loss components on a tape. Disabled components are still recorded but
/// excluded from `total`.
#[derive(Debug, Clone, Copy)]
pub struct Objective {
    pub total: Var,
    pub l_walk: Var,
    pub l_node: Var,
    pub l_knowledge: Var,
}

/// Combines trajectories into the objective. `groups` gives each
/// trajectory's sample so the optional baseline is a per-sample mean.
pub fn combine<S: Scalar>(
    tape: &mut Tape<S>,
    trajectories: &[TrajectoryVars],
    groups: &[usize],
    toggles: &LossToggles,
    baseline: bool,
) -> Result<Objective> {
    if trajectories.is_empty() {
        return Err(Error::validation("objective over an empty trajectory set"));
    }
    let n = trajectories.len() as f64;
    let mut walk_terms = Vec::new();
    for (i, t) in trajectories.iter().enumerate() {
        let Some(lp) = t.logp_sum else { continue };
        let b = if baseline {
            let same: Vec<f64> = trajectories
                .iter()
                .zip(groups)
                .filter(|(_, &g)| g == groups[i])
                .map(|(o, _)| o.rewards.total)
                .collect();
            same.iter().sum::<f64>() / same.len() as f64
        } else {
            0.0
        };
        walk_terms.push(tape.scale(lp, S::of(-(t.rewards.total - b) / n)));
    }
    let mean_of = |tape: &mut Tape<S>, terms: Vec<Var>| {
        if terms.is_empty() {
            tape.scalar(S::zero())
        } else {
            tape.mean_n(&terms)
        }
    };
    let l_walk = if walk_terms.is_empty() { tape.scalar(S::zero()) } else { tape.sum_n(&walk_terms) };
    let l_node = mean_of(tape, trajectories.iter().filter_map(|t| t.node_ce).collect());
    let l_knowledge = mean_of(tape, trajectories.iter().filter_map(|t| t.knowledge_ce).collect());
    let enabled: Vec<Var> = [(toggles.walk, l_walk), (toggles.node, l_node), (toggles.knowledge, l_knowledge)]
        .into_iter()
        .filter_map(|(on, v)| on.then_some(v))
        .collect();
    let total = if enabled.is_empty() { tape.scalar(S::zero()) } else { tape.sum_n(&enabled) };
    Ok(Objective { total, l_walk, l_node, l_knowledge })
}

/// The full objective for fixed action sequences, one per rollout. Rewards
/// are computed from the replayed traversals and held constant, which makes
/// this a deterministic function of the parameters for gradient checks.
#[allow(clippy::too_many_arguments)]
pub fn replay_objective<S: Scalar>(
    tape: &mut Tape<S>,
    vars: &ModelVars,
    graph: &UnifiedGraph,
    index: &GraphIndex,
    provider: &dyn Embedder,
    sample: &DialogueSample,
    actions: &[Vec<usize>],
    cfg: &TrainConfig,
) -> Result<Objective> {
    let prep = prepare(graph, index, provider, sample, &cfg.selector)?;
    let mut lazy = LazyRefresh::new(graph, &index.encodings, &vars.graph_gat);
    let (context, _) = context_on_tape(tape, vars, &prep.sources)?;
    let mut trajectories = Vec::with_capacity(actions.len());
    for a in actions {
        let mut policy = Policy::Replay(a);
        trajectories.push(trajectory_with(tape, vars, &mut lazy, graph, index, &prep, context, cfg, &mut policy)?);
    }
    let groups = vec![0; trajectories.len()];
    combine(tape, &trajectories, &groups, &cfg.losses, cfg.baseline)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub l_walk: f64,
    pub l_node: f64,
    pub l_knowledge: f64,
    pub reward_mean: f64,
    /// Greedy R@1 on the held-out split; `None` without one.
    pub r_at_1: Option<f64>,
    pub pool_mean: f64,
    pub gold_unreachable_rate: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochReport>,
}

impl TrainReport {
    pub fn write_jsonl(&self, mut sink: impl Write) -> Result<()> {
        for e in &self.epochs {
            serde_json::to_writer(&mut sink, e)?;
            sink.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn last(&self) -> Option<&EpochReport> {
        self.epochs.last()
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutput<S> {
    pub params: ModelParams<S>,
    pub report: TrainReport,
}

/// Epoch-by-epoch training. After an error the trainer still holds the last
/// parameters that produced a finite loss.
pub struct Trainer<'a, S: Scalar> {
    graph: &'a UnifiedGraph,
    provider: &'a dyn Embedder,
    heldout: &'a [DialogueSample],
    index: Arc<GraphIndex>,
    config: TrainConfig,
    params: ModelParams<S>,
    optimizer: AdamW<S>,
    prepared: Vec<Prepared>,
    rng: ChaCha8Rng,
    step: usize,
    total_steps: usize,
    report: TrainReport,
}

impl<'a, S: Scalar> Trainer<'a, S> {
    pub fn new(
        graph: &'a UnifiedGraph,
        corpus: &'a [DialogueSample],
        heldout: &'a [DialogueSample],
        provider: &'a dyn Embedder,
        config: TrainConfig,
    ) -> Result<Self> {
        let params = ModelParams::init(config.dims, config.seed)?;
        Self::with_params(graph, corpus, heldout, provider, config, params)
    }

    pub fn with_params(
        graph: &'a UnifiedGraph,
        corpus: &'a [DialogueSample],
        heldout: &'a [DialogueSample],
        provider: &'a dyn Embedder,
        config: TrainConfig,
        params: ModelParams<S>,
    ) -> Result<Self> {
        config.validate()?;
        if corpus.is_empty() {
            return Err(Error::validation("training corpus is empty"));
        }
        if graph.is_empty() {
            return Err(Error::EmptyKb);
        }
        validate_corpus(graph, corpus)?;
        validate_corpus(graph, heldout)?;
        if provider.dim() != params.dims.d_in {
            return Err(Error::Config(format!(
                "embedding width {} does not match d_in {}",
                provider.dim(),
                params.dims.d_in
            )));
        }
        let index = Arc::new(GraphIndex::build(graph, provider)?);
        let prepared = corpus
            .iter()
            .map(|s| prepare(graph, &index, provider, s, &config.selector))
            .collect::<Result<Vec<_>>>()?;
        let batches = corpus.len().div_ceil(config.batch_size);
        Ok(Trainer {
            graph,
            provider,
            heldout,
            index,
            optimizer: AdamW::new(config.optimizer, &params),
            params,
            prepared,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            step: 0,
            total_steps: batches * config.epochs,
            report: TrainReport::default(),
            config,
        })
    }

    pub fn params(&self) -> &ModelParams<S> {
        &self.params
    }

    pub fn report(&self) -> &TrainReport {
        &self.report
    }

    pub fn index(&self) -> &Arc<GraphIndex> {
        &self.index
    }

    pub fn into_output(self) -> TrainOutput<S> {
        TrainOutput { params: self.params, report: self.report }
    }

    pub fn epochs_done(&self) -> usize {
        self.report.epochs.len()
    }

    /// Runs every remaining epoch.
    pub fn run(&mut self) -> Result<()> {
        while self.epochs_done() < self.config.epochs {
            self.run_epoch()?;
        }
        Ok(())
    }

    pub fn run_epoch(&mut self) -> Result<EpochReport> {
        let epoch = self.epochs_done() + 1;
        let mut order: Vec<usize> = (0..self.prepared.len()).collect();
        order.shuffle(&mut self.rng);
        let mut sums = [0.0f64; 3];
        let mut batches = 0usize;
        let (mut reward_sum, mut pool_sum, mut unreachable, mut traces) = (0.0, 0.0, 0usize, 0usize);
        let mut lr = 0.0;
        for chunk in order.chunks(self.config.batch_size) {
            lr = self.config.schedule.lr(self.step, self.total_steps);
            let mut tape = Tape::new();
            let vars = self.params.bind(&mut tape);
            let mut lazy = LazyRefresh::new(self.graph, &self.index.encodings, &vars.graph_gat);
            let mut trajectories = Vec::new();
            let mut groups = Vec::new();
            for (g, &i) in chunk.iter().enumerate() {
                let prep = &self.prepared[i];
                let (context, _) = context_on_tape(&mut tape, &vars, &prep.sources)?;
                for _ in 0..self.config.rollouts {
                    let mut policy = Policy::Sample(&mut self.rng);
                    let t = trajectory_with(
                        &mut tape,
                        &vars,
                        &mut lazy,
                        self.graph,
                        &self.index,
                        prep,
                        context,
                        &self.config,
                        &mut policy,
                    )?;
                    reward_sum += t.rewards.total;
                    pool_sum += t.pool_size as f64;
                    unreachable += usize::from(t.knowledge_ce.is_none());
                    traces += 1;
                    trajectories.push(t);
                    groups.push(g);
                }
            }
            let obj = combine(&mut tape, &trajectories, &groups, &self.config.losses, self.config.baseline)?;
            let total = tape.scalar_value(obj.total);
            if !total.is_finite() {
                return Err(Error::Diverged { epoch, reason: format!("non-finite loss at step {}", self.step) });
            }
            let grads = tape.backward(obj.total)?;
            let mut g = self.params.gradients(&vars, &grads);
            if !g.is_finite() {
                return Err(Error::Diverged { epoch, reason: format!("non-finite gradient at step {}", self.step) });
            }
            if let Some(c) = self.config.clip_norm {
                let norm = g.norm().to_f64_lossy();
                if norm > c {
                    g.scale(S::of(c / norm));
                }
            }
            let mut next = self.params.clone();
            self.optimizer.step(&mut next, &g, lr)?;
            if !next.is_finite() {
                return Err(Error::Diverged { epoch, reason: format!("non-finite parameters at step {}", self.step) });
            }
            self.params = next;
            for (s, v) in sums.iter_mut().zip([obj.l_walk, obj.l_node, obj.l_knowledge]) {
                *s += tape.scalar_value(v).to_f64_lossy();
            }
            batches += 1;
            self.step += 1;
        }
        let r_at_1 = if self.heldout.is_empty() { None } else { Some(self.heldout_recall()?) };
        let b = batches.max(1) as f64;
        let t = traces.max(1) as f64;
        let report = EpochReport {
            epoch,
            l_walk: sums[0] / b,
            l_node: sums[1] / b,
            l_knowledge: sums[2] / b,
            reward_mean: reward_sum / t,
            r_at_1,
            pool_mean: pool_sum / t,
            gold_unreachable_rate: unreachable as f64 / t,
            lr,
        };
        self.report.epochs.push(report.clone());
        Ok(report)
    }

    fn heldout_recall(&self) -> Result<f64> {
        let selector = Selector::with_index(
            self.graph,
            self.provider,
            &self.params,
            self.config.selector,
            Arc::clone(&self.index),
            None,
        )?;
        let mut hits = 0usize;
        for s in self.heldout {
            let r = selector.select(s)?;
            hits += usize::from(r.gold_rank(&s.gold_knowledge) == Some(1));
        }
        Ok(hits as f64 / self.heldout.len() as f64)
    }
}

/// Trains on the leading part of `corpus`, reporting R@1 on the trailing
/// `heldout_fraction`.
pub fn train<S: Scalar>(
    graph: &UnifiedGraph,
    corpus: &[DialogueSample],
    provider: &dyn Embedder,
    config: &TrainConfig,
) -> Result<TrainOutput<S>> {
    config.validate()?;
    let held = ((corpus.len() as f64) * config.heldout_fraction).floor() as usize;
    let held = held.min(corpus.len().saturating_sub(1));
    let (fit, heldout) = corpus.split_at(corpus.len() - held);
    let mut trainer = Trainer::<S>::new(graph, fit, heldout, provider, *config)?;
    trainer.run()?;
    Ok(trainer.into_output())
}
