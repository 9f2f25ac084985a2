//! Context encoding, graph traversal and knowledge pool selection.
//!
//! Everything here is built on a [`Tape`] so the same code serves greedy
//! inference and differentiable training rollouts.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::UnifiedGraph;
use crate::kb::DialogueSample;
use crate::nn::layers::{gat_aggregate, gat_layer, gat_project, mha, mlp, GatProjection};
use crate::nn::params::{GatVars, ModelParams, ModelVars, LEAKY_SLOPE};
use crate::nn::tape::{Tape, Var};
use crate::scalar::{to_scalars, Scalar};
use crate::text::{Embedder, Embedding, KeywordExtractor, KeywordSet, StaticEncodings, TextRef};

pub const DEFAULT_T_MAX: usize = 3;
pub const DEFAULT_M_MIN: f64 = 0.05;
pub const DEFAULT_KEYWORDS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolMode {
    Adaptive,
    Fixed(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Traversal {
    Greedy,
    Sampled { seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectorConfig {
    pub t_max: usize,
    pub pool: PoolMode,
    pub m_min: f64,
    pub traversal: Traversal,
    pub use_node_attention: bool,
    /// Keywords extracted per turn for the keyword modality.
    pub keywords: usize,
}

impl Default for SelectorConfig {
    fn default() -> Self {
        SelectorConfig {
            t_max: DEFAULT_T_MAX,
            pool: PoolMode::Adaptive,
            m_min: DEFAULT_M_MIN,
            traversal: Traversal::Greedy,
            use_node_attention: true,
            keywords: DEFAULT_KEYWORDS,
        }
    }
}

impl SelectorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t_max == 0 {
            return Err(Error::Config("t_max must be at least 1".into()));
        }
        if let PoolMode::Fixed(0) = self.pool {
            return Err(Error::Config("fixed pool size must be at least 1".into()));
        }
        if !(self.m_min > 0.0 && self.m_min <= 1.0) {
            return Err(Error::Config(format!("m_min must lie in (0, 1], got {}", self.m_min)));
        }
        Ok(())
    }
}

/// Pool size from the softmax-normalized node scores of the final action space.
pub fn adapt_pool(scores: &[f64], candidates: usize, config: &SelectorConfig) -> usize {
    if candidates == 0 {
        return 0;
    }
    match config.pool {
        PoolMode::Fixed(k) => k.min(candidates).max(1),
        PoolMode::Adaptive => {
            let m = pool_fraction(population_variance(scores), config.m_min);
            ((candidates as f64 * m).round() as usize).clamp(1, candidates)
        }
    }
}

/// The mapping `M`: 1 at zero variance, falling linearly to `m_min` at the
/// one-hot-over-two variance of 0.25.
pub fn pool_fraction(variance: f64, m_min: f64) -> f64 {
    let x = 1.0 / (1.0 - variance);
    (m_min + (1.0 - m_min) * (4.0 / 3.0 - x) * 3.0).clamp(m_min, 1.0)
}

pub fn population_variance(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n
}

/// Per-graph data that does not depend on the parameters.
#[derive(Debug, Clone)]
pub struct GraphIndex {
    pub encodings: StaticEncodings,
    pub keywords: KeywordExtractor,
    pub fingerprint: u64,
}

impl GraphIndex {
    pub fn build(graph: &UnifiedGraph, provider: &dyn Embedder) -> Result<Self> {
        Ok(GraphIndex {
            encodings: StaticEncodings::compute(graph, provider)?,
            keywords: KeywordExtractor::from_graph(graph),
            fingerprint: graph.fingerprint(),
        })
    }

    pub fn dim(&self) -> usize {
        self.encodings.dim()
    }
}

/// Modality summaries in the static embedding space.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalitySummaries {
    pub history: Vec<f64>,
    pub utterance: Vec<f64>,
    pub keywords: Vec<f64>,
}

impl ModalitySummaries {
    /// History mean, utterance embedding and weight-weighted keyword mean.
    /// Keywords the provider cannot embed are dropped.
    pub fn compute(
        history: &[String],
        utterance: &str,
        keywords: &KeywordSet,
        provider: &dyn Embedder,
    ) -> Result<Self> {
        if utterance.trim().is_empty() {
            return Err(Error::validation("utterance must not be empty"));
        }
        let dim = provider.dim();
        let utt = provider.embed(TextRef::Turn(utterance))?;
        let mut hist = vec![0.0; dim];
        for turn in history {
            let e = provider.embed(TextRef::Turn(turn))?;
            add_scaled(&mut hist, &e, 1.0);
        }
        if !history.is_empty() {
            hist.iter_mut().for_each(|v| *v /= history.len() as f64);
        }
        let mut kw = vec![0.0; dim];
        let mut total = 0.0;
        for (term, w) in &keywords.keywords {
            match provider.embed(TextRef::Turn(term)) {
                Ok(e) => {
                    add_scaled(&mut kw, &e, *w);
                    total += w;
                }
                Err(Error::EmbeddingMiss(_)) => {}
                Err(e) => return Err(e),
            }
        }
        if total > 0.0 {
            kw.iter_mut().for_each(|v| *v /= total);
        }
        Ok(ModalitySummaries { history: hist, utterance: utt.values().to_vec(), keywords: kw })
    }
}

fn add_scaled(acc: &mut [f64], e: &Embedding, c: f64) {
    for (a, v) in acc.iter_mut().zip(e.values()) {
        *a += c * v;
    }
}

fn to_f64<S: Scalar>(xs: &[S]) -> Vec<f64> {
    xs.iter().map(|v| v.to_f64_lossy()).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContextEncoding<S> {
    /// `x̄`, width `d_state`.
    pub vector: Vec<S>,
    pub sources: ModalitySummaries,
    /// `[history, utterance, keywords] x heads` attention weights.
    pub weights: Vec<Vec<S>>,
}

pub fn encode_context<S: Scalar>(
    history: &[String],
    utterance: &str,
    keywords: &KeywordSet,
    provider: &dyn Embedder,
    params: &ModelParams<S>,
) -> Result<ContextEncoding<S>> {
    let sources = ModalitySummaries::compute(history, utterance, keywords, provider)?;
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape);
    let (x, alpha) = context_on_tape(&mut tape, &vars, &sources)?;
    let weights = tape.value(alpha).chunks(params.dims.heads).map(<[S]>::to_vec).collect();
    Ok(ContextEncoding { vector: tape.value(x).to_vec(), sources, weights })
}

pub(crate) fn context_on_tape<S: Scalar>(
    tape: &mut Tape<S>,
    vars: &ModelVars,
    sources: &ModalitySummaries,
) -> Result<(Var, Var)> {
    let h = tape.vector(to_scalars(&sources.history));
    let u = tape.vector(to_scalars(&sources.utterance));
    let k = tape.vector(to_scalars(&sources.keywords));
    mha(tape, &vars.modality_attn, u, &[h, u, k])
}

pub(crate) fn state_on_tape<S: Scalar>(
    tape: &mut Tape<S>,
    vars: &ModelVars,
    prev: Var,
    context: Var,
    node_enc: Var,
) -> Result<Var> {
    let projected = tape.matvec(vars.node_proj, node_enc);
    Ok(mha(tape, &vars.state_attn, prev, &[context, prev, projected])?.0)
}

/// Logits over a star action space; `encs[0]` is the current node.
pub(crate) fn subgraph_logits_on_tape<S: Scalar>(
    tape: &mut Tape<S>,
    vars: &ModelVars,
    state: Var,
    encs: &[Var],
) -> Result<Var> {
    let feats: Vec<Var> = encs.iter().map(|&e| tape.concat(&[state, e])).collect();
    let mut star = vec![(1..encs.len()).collect::<Vec<_>>()];
    star.extend((1..encs.len()).map(|_| vec![0]));
    let out = gat_layer(tape, &vars.score_gat, &feats, &star)?;
    let logits = out
        .into_iter()
        .map(|o| mlp(tape, &vars.score_mlp, o))
        .collect::<Result<Vec<_>>>()?;
    Ok(tape.concat(&logits))
}

/// Knowledge scores `w_owner * (query_proj S ⋅ e_k)` in candidate order.
pub(crate) fn knowledge_on_tape<S: Scalar>(
    tape: &mut Tape<S>,
    vars: &ModelVars,
    state: Var,
    node_probs: Var,
    owner_pos: &[usize],
    knowledge: &[&[f64]],
    use_node_attention: bool,
) -> Result<Var> {
    if knowledge.is_empty() {
        return Err(Error::NoCandidates);
    }
    let d = knowledge[0].len();
    let mut stacked = Vec::with_capacity(knowledge.len() * d);
    for e in knowledge {
        if e.len() != d {
            return Err(Error::shape("knowledge encodings have mixed widths"));
        }
        stacked.extend(e.iter().map(|&v| S::of(v)));
    }
    let query = tape.matvec(vars.query_proj, state);
    if tape.len_of(query) != d {
        return Err(Error::shape(format!(
            "query projection has width {}, knowledge encodings {d}",
            tape.len_of(query)
        )));
    }
    let k_mat = tape.matrix(stacked, knowledge.len(), d);
    let dots = tape.matvec(k_mat, query);
    if !use_node_attention {
        return Ok(dots);
    }
    let m = tape.len_of(node_probs);
    let centre = S::of(-1.0 / m as f64);
    let mut logits = Vec::with_capacity(m);
    for n in 0..m {
        let p = tape.index(node_probs, n);
        let shifted = tape.add_const(p, centre);
        let input = tape.concat(&[p, shifted]);
        logits.push(mlp(tape, &vars.node_attn_mlp, input)?);
    }
    let stacked_logits = tape.concat(&logits);
    let weights = tape.softmax(stacked_logits);
    let per_item = tape.gather(weights, owner_pos);
    Ok(tape.mul(per_item, dots))
}

/// Supplies refreshed process-node encodings on a tape.
pub(crate) trait NodeSource<S: Scalar> {
    fn encode(&mut self, tape: &mut Tape<S>, node: usize) -> Result<Var>;
}

/// Precomputed refresh values, bound as constants on first use.
pub(crate) struct FixedSource<'a, S> {
    values: &'a [Vec<S>],
    memo: HashMap<usize, Var>,
}

impl<'a, S> FixedSource<'a, S> {
    pub(crate) fn new(values: &'a [Vec<S>]) -> Self {
        FixedSource { values, memo: HashMap::new() }
    }
}

impl<S: Scalar> NodeSource<S> for FixedSource<'_, S> {
    fn encode(&mut self, tape: &mut Tape<S>, node: usize) -> Result<Var> {
        if let Some(&v) = self.memo.get(&node) {
            return Ok(v);
        }
        let v = tape.vector(self.values[node].clone());
        self.memo.insert(node, v);
        Ok(v)
    }
}

/// Differentiable refresh that only builds the receptive field of the nodes
/// actually visited.
pub(crate) struct LazyRefresh<'a> {
    graph: &'a UnifiedGraph,
    statics: &'a StaticEncodings,
    layers: Vec<GatVars>,
    inputs: Vec<HashMap<usize, Var>>,
    projections: Vec<HashMap<usize, GatProjection>>,
    outputs: Vec<HashMap<usize, Var>>,
}

impl<'a> LazyRefresh<'a> {
    pub(crate) fn new(graph: &'a UnifiedGraph, statics: &'a StaticEncodings, layers: &[GatVars]) -> Self {
        let n = layers.len();
        LazyRefresh {
            graph,
            statics,
            layers: layers.to_vec(),
            inputs: vec![HashMap::new(); n],
            projections: vec![HashMap::new(); n],
            outputs: vec![HashMap::new(); n],
        }
    }

    fn input<S: Scalar>(&mut self, tape: &mut Tape<S>, layer: usize, node: usize) -> Result<Var> {
        if let Some(&v) = self.inputs[layer].get(&node) {
            return Ok(v);
        }
        let v = if layer == 0 {
            tape.vector(to_scalars(self.statics.process[node].values()))
        } else {
            let prev = self.output(tape, layer - 1, node)?;
            tape.leaky_relu(prev, S::of(LEAKY_SLOPE))
        };
        self.inputs[layer].insert(node, v);
        Ok(v)
    }

    fn projection<S: Scalar>(&mut self, tape: &mut Tape<S>, layer: usize, node: usize) -> Result<GatProjection> {
        if let Some(&p) = self.projections[layer].get(&node) {
            return Ok(p);
        }
        let h = self.input(tape, layer, node)?;
        let p = gat_project(tape, &self.layers[layer], h)?;
        self.projections[layer].insert(node, p);
        Ok(p)
    }

    fn output<S: Scalar>(&mut self, tape: &mut Tape<S>, layer: usize, node: usize) -> Result<Var> {
        if let Some(&v) = self.outputs[layer].get(&node) {
            return Ok(v);
        }
        let own = self.projection(tape, layer, node)?;
        let graph = self.graph;
        let others = graph
            .neighbor_indices(node)
            .iter()
            .map(|&j| self.projection(tape, layer, j))
            .collect::<Result<Vec<_>>>()?;
        let v = gat_aggregate(tape, &self.layers[layer], own, &others);
        self.outputs[layer].insert(node, v);
        Ok(v)
    }
}

impl<S: Scalar> NodeSource<S> for LazyRefresh<'_> {
    fn encode(&mut self, tape: &mut Tape<S>, node: usize) -> Result<Var> {
        let top = self.layers.len() - 1;
        self.output(tape, top, node)
    }
}

/// One full-graph pass of the refresh layers over the static process encodings.
pub fn refresh_graph<S: Scalar>(
    graph: &UnifiedGraph,
    statics: &StaticEncodings,
    params: &ModelParams<S>,
) -> Result<Vec<Vec<S>>> {
    if statics.process.len() != graph.process_nodes().len() {
        return Err(Error::shape("static encodings do not cover the graph"));
    }
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape);
    let mut lazy = LazyRefresh::new(graph, statics, &vars.graph_gat);
    (0..graph.process_nodes().len())
        .map(|i| {
            let v = lazy.encode(&mut tape, i)?;
            Ok(tape.value(v).to_vec())
        })
        .collect()
}

/// Memoizes [`refresh_graph`] per (graph, parameters) fingerprint pair.
#[derive(Debug, Default)]
pub struct RefreshCache<S> {
    slot: Mutex<Option<(u64, u64, Arc<Vec<Vec<S>>>)>>,
    hits: AtomicUsize,
    misses: AtomicUsize,
}

impl<S: Scalar> RefreshCache<S> {
    pub fn new() -> Self {
        RefreshCache { slot: Mutex::new(None), hits: AtomicUsize::new(0), misses: AtomicUsize::new(0) }
    }

    pub fn get(&self, graph: &UnifiedGraph, index: &GraphIndex, params: &ModelParams<S>) -> Result<Arc<Vec<Vec<S>>>> {
        let key = (index.fingerprint, params.fingerprint());
        let mut slot = self.slot.lock().unwrap_or_else(|p| p.into_inner());
        if let Some((g, p, values)) = slot.as_ref() {
            if (*g, *p) == key {
                self.hits.fetch_add(1, Ordering::Relaxed);
                return Ok(Arc::clone(values));
            }
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let values = Arc::new(refresh_graph(graph, &index.encodings, params)?);
        *slot = Some((key.0, key.1, Arc::clone(&values)));
        Ok(values)
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> usize {
        self.misses.load(Ordering::Relaxed)
    }
}

/// S_t from S_{t-1}, the context and the refreshed encoding of the new node.
pub fn update_state<S: Scalar>(prev: &[S], context: &[S], node_enc: &[S], params: &ModelParams<S>) -> Result<Vec<S>> {
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape);
    let p = tape.vector(prev.to_vec());
    let c = tape.vector(context.to_vec());
    let e = tape.vector(node_enc.to_vec());
    let s = state_on_tape(&mut tape, &vars, p, c, e)?;
    Ok(tape.value(s).to_vec())
}

/// Softmax-normalized scores over a star action space; `node_encs[0]` is the
/// current node.
pub fn score_subgraph<S: Scalar>(state: &[S], node_encs: &[Vec<S>], params: &ModelParams<S>) -> Result<Vec<S>> {
    if node_encs.is_empty() {
        return Err(Error::validation("action space is empty"));
    }
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape);
    let s = tape.vector(state.to_vec());
    let encs: Vec<Var> = node_encs.iter().map(|e| tape.vector(e.clone())).collect();
    let logits = subgraph_logits_on_tape(&mut tape, &vars, s, &encs)?;
    let p = tape.softmax(logits);
    Ok(tape.value(p).to_vec())
}

/// Ranks the knowledge owned by `action_space` (node indices, scores aligned).
#[allow(clippy::too_many_arguments)]
pub fn score_knowledge<S: Scalar>(
    state: &[S],
    node_scores: &[S],
    action_space: &[usize],
    graph: &UnifiedGraph,
    encodings: &StaticEncodings,
    params: &ModelParams<S>,
    use_node_attention: bool,
) -> Result<Vec<ScoredKnowledge>> {
    if node_scores.is_empty() || node_scores.len() != action_space.len() {
        return Err(Error::validation("node scores must align with a non-empty action space"));
    }
    let (cands, owner_pos) = candidate_set(graph, action_space);
    let knowledge: Vec<&[f64]> = cands.iter().map(|&k| encodings.knowledge[k].values()).collect();
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape);
    let s = tape.vector(state.to_vec());
    let p = tape.vector(node_scores.to_vec());
    let scores = knowledge_on_tape(&mut tape, &vars, s, p, &owner_pos, &knowledge, use_node_attention)?;
    Ok(rank(graph, &cands, tape.value(scores)))
}

/// Knowledge owned by the action space and each item's owner position.
pub(crate) fn candidate_set(graph: &UnifiedGraph, action_space: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let mut cands = Vec::new();
    let mut owner_pos = Vec::new();
    for (pos, &n) in action_space.iter().enumerate() {
        for &k in graph.owned_knowledge(n) {
            cands.push(k);
            owner_pos.push(pos);
        }
    }
    (cands, owner_pos)
}

pub(crate) fn rank<S: Scalar>(graph: &UnifiedGraph, cands: &[usize], scores: &[S]) -> Vec<ScoredKnowledge> {
    let mut ranked: Vec<ScoredKnowledge> = cands
        .iter()
        .zip(scores)
        .map(|(&k, s)| {
            let kn = &graph.knowledge_nodes()[k];
            ScoredKnowledge { id: kn.id.clone(), text: kn.text.clone(), score: s.to_f64_lossy() }
        })
        .collect();
    sort_ranking(&mut ranked);
    ranked
}

pub fn sort_ranking(ranked: &mut [ScoredKnowledge]) {
    ranked.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.id.cmp(&b.id)));
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredKnowledge {
    pub id: String,
    pub text: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub node: String,
    pub chosen: String,
    pub logp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    /// Top `pool_size` entries of the ranking.
    pub pool: Vec<ScoredKnowledge>,
    pub pool_size: usize,
    pub candidates: usize,
    pub halt_node: String,
    pub variance: f64,
    pub trace: Vec<TraceStep>,
    /// Full ranking of every candidate; not part of the wire format.
    #[serde(skip)]
    pub ranking: Vec<ScoredKnowledge>,
}

impl SelectionResult {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    /// 1-indexed best rank of any of `golds` in the full ranking.
    pub fn gold_rank(&self, golds: &[String]) -> Option<usize> {
        let ranking = if self.ranking.is_empty() { &self.pool } else { &self.ranking };
        ranking.iter().position(|r| golds.contains(&r.id)).map(|p| p + 1)
    }
}

/// How actions are chosen during a traversal.
pub enum Policy<'r> {
    Greedy,
    Sample(&'r mut dyn RngCore),
    /// Action positions within each step's action space, in order.
    Replay(&'r [usize]),
}

/// One decision on the tape.
#[derive(Debug, Clone)]
pub(crate) struct Step {
    pub node: usize,
    pub action_space: Vec<usize>,
    pub chosen: usize,
    pub log_probs: Var,
    pub logp: Var,
}

/// A traversal recorded on a tape.
#[derive(Debug, Clone)]
pub(crate) struct Episode {
    pub steps: Vec<Step>,
    pub halt: usize,
    pub node_probs: Var,
    pub candidates: Vec<usize>,
    pub knowledge_scores: Var,
}

pub(crate) struct EpisodeInputs<'a> {
    pub graph: &'a UnifiedGraph,
    pub index: &'a GraphIndex,
    pub config: &'a SelectorConfig,
}

fn choose<S: Scalar>(probs: &[S], policy: &mut Policy<'_>, step: usize) -> Result<usize> {
    match policy {
        Policy::Greedy => {
            let mut best = 0;
            for (i, p) in probs.iter().enumerate() {
                if *p > probs[best] {
                    best = i;
                }
            }
            Ok(best)
        }
        Policy::Sample(rng) => {
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            for (i, p) in probs.iter().enumerate() {
                acc += p.to_f64_lossy();
                if u < acc {
                    return Ok(i);
                }
            }
            Ok(probs.len() - 1)
        }
        Policy::Replay(actions) => {
            let a = *actions
                .get(step)
                .ok_or_else(|| Error::validation(format!("replay has no action for step {step}")))?;
            if a >= probs.len() {
                return Err(Error::validation(format!("replayed action {a} outside action space of {}", probs.len())));
            }
            Ok(a)
        }
    }
}

fn action_space(graph: &UnifiedGraph, node: usize) -> Vec<usize> {
    let mut adj = vec![node];
    adj.extend_from_slice(graph.neighbor_indices(node));
    adj
}

pub(crate) fn run_episode<S: Scalar>(
    tape: &mut Tape<S>,
    vars: &ModelVars,
    source: &mut dyn NodeSource<S>,
    inputs: &EpisodeInputs<'_>,
    context: Var,
    start: usize,
    policy: &mut Policy<'_>,
) -> Result<Episode> {
    let graph = inputs.graph;
    let mut node = start;
    let mut state = context;
    let mut steps = Vec::new();
    let (adj, probs) = loop {
        let adj = action_space(graph, node);
        let encs = adj.iter().map(|&n| source.encode(tape, n)).collect::<Result<Vec<_>>>()?;
        let logits = subgraph_logits_on_tape(tape, vars, state, &encs)?;
        let log_probs = tape.log_softmax(logits);
        let probs = tape.exp(log_probs);
        if adj.len() == 1 || steps.len() == inputs.config.t_max {
            break (adj, probs);
        }
        let chosen = choose(tape.value(probs), policy, steps.len())?;
        let logp = tape.index(log_probs, chosen);
        steps.push(Step { node, action_space: adj.clone(), chosen, log_probs, logp });
        if chosen == 0 {
            break (adj, probs);
        }
        node = adj[chosen];
        state = state_on_tape(tape, vars, state, context, encs[chosen])?;
    };
    let (candidates, owner_pos) = candidate_set(graph, &adj);
    let knowledge: Vec<&[f64]> = candidates
        .iter()
        .map(|&k| inputs.index.encodings.knowledge[k].values())
        .collect();
    let knowledge_scores = knowledge_on_tape(
        tape,
        vars,
        state,
        probs,
        &owner_pos,
        &knowledge,
        inputs.config.use_node_attention,
    )?;
    Ok(Episode { steps, halt: node, node_probs: probs, candidates, knowledge_scores })
}

/// Converts an episode into the public result form.
pub(crate) fn episode_result<S: Scalar>(
    tape: &Tape<S>,
    graph: &UnifiedGraph,
    episode: &Episode,
    config: &SelectorConfig,
) -> SelectionResult {
    let ranking = rank(graph, &episode.candidates, tape.value(episode.knowledge_scores));
    let node_scores = to_f64(tape.value(episode.node_probs));
    let pool_size = adapt_pool(&node_scores, ranking.len(), config);
    let id = |n: usize| graph.process_nodes()[n].id.clone();
    let trace = episode
        .steps
        .iter()
        .map(|s| TraceStep {
            node: id(s.node),
            chosen: id(s.action_space[s.chosen]),
            logp: tape.scalar_value(s.logp).to_f64_lossy(),
        })
        .collect();
    SelectionResult {
        pool: ranking[..pool_size].to_vec(),
        pool_size,
        candidates: ranking.len(),
        halt_node: id(episode.halt),
        variance: population_variance(&node_scores),
        trace,
        ranking,
    }
}

/// Mean of the history and utterance embeddings.
pub fn dialogue_embedding(history: &[String], utterance: &str, provider: &dyn Embedder) -> Result<Vec<f64>> {
    let mut acc = vec![0.0; provider.dim()];
    let mut n = 0usize;
    for turn in history.iter().map(String::as_str).chain(std::iter::once(utterance)) {
        add_scaled(&mut acc, &provider.embed(TextRef::Turn(turn))?, 1.0);
        n += 1;
    }
    acc.iter_mut().for_each(|v| *v /= n as f64);
    Ok(acc)
}

/// The sample's start node, or the process node whose static encoding best
/// matches the dialogue embedding (ties to the smaller id).
pub fn resolve_start(
    graph: &UnifiedGraph,
    index: &GraphIndex,
    sample: &DialogueSample,
    provider: &dyn Embedder,
) -> Result<usize> {
    if let Some(id) = &sample.start_node {
        return graph.require_process(id);
    }
    if graph.process_nodes().is_empty() {
        return Err(Error::EmptyKb);
    }
    let ctx = dialogue_embedding(&sample.history, &sample.utterance, provider)?;
    let mut best: Option<(f64, usize)> = None;
    for (i, e) in index.encodings.process.iter().enumerate() {
        let s: f64 = e.values().iter().zip(&ctx).map(|(a, b)| a * b).sum();
        let better = match best {
            None => true,
            Some((bs, bi)) => s > bs || (s == bs && graph.process_nodes()[i].id < graph.process_nodes()[bi].id),
        };
        if better {
            best = Some((s, i));
        }
    }
    Ok(best.map(|(_, i)| i).unwrap_or(0))
}

/// Checks that every sample's start node, gold path and gold knowledge exist.
pub fn validate_corpus(graph: &UnifiedGraph, samples: &[DialogueSample]) -> Result<()> {
    for s in samples {
        if s.utterance.trim().is_empty() {
            return Err(Error::validation(format!("sample `{}` has an empty utterance", s.id)));
        }
        if let Some(start) = &s.start_node {
            if graph.process_index(start).is_none() {
                return Err(Error::validation(format!("sample `{}`: unknown start node `{start}`", s.id)));
            }
        }
        for n in s.gold_path.iter().flatten() {
            if graph.process_index(n).is_none() {
                return Err(Error::validation(format!("sample `{}`: unknown gold path node `{n}`", s.id)));
            }
        }
        for k in &s.gold_knowledge {
            if graph.knowledge_index(k).is_none() {
                return Err(Error::validation(format!("sample `{}`: unknown gold knowledge `{k}`", s.id)));
            }
        }
    }
    Ok(())
}

/// Reusable selection state for one graph, provider and parameter set.
pub struct Selector<'a, S: Scalar> {
    pub graph: &'a UnifiedGraph,
    pub provider: &'a dyn Embedder,
    pub params: &'a ModelParams<S>,
    pub config: SelectorConfig,
    index: Arc<GraphIndex>,
    refreshed: Arc<Vec<Vec<S>>>,
}

impl<'a, S: Scalar> Selector<'a, S> {
    pub fn new(
        graph: &'a UnifiedGraph,
        provider: &'a dyn Embedder,
        params: &'a ModelParams<S>,
        config: SelectorConfig,
    ) -> Result<Self> {
        let index = Arc::new(GraphIndex::build(graph, provider)?);
        Self::with_index(graph, provider, params, config, index, None)
    }

    /// Reuses a prebuilt index and, when given, a shared refresh cache.
    pub fn with_index(
        graph: &'a UnifiedGraph,
        provider: &'a dyn Embedder,
        params: &'a ModelParams<S>,
        config: SelectorConfig,
        index: Arc<GraphIndex>,
        cache: Option<&RefreshCache<S>>,
    ) -> Result<Self> {
        config.validate()?;
        if graph.is_empty() {
            return Err(Error::EmptyKb);
        }
        if index.dim() != params.dims.d_in {
            return Err(Error::shape(format!(
                "embedding width {} does not match model input width {}",
                index.dim(),
                params.dims.d_in
            )));
        }
        let refreshed = match cache {
            Some(c) => c.get(graph, &index, params)?,
            None => Arc::new(refresh_graph(graph, &index.encodings, params)?),
        };
        Ok(Selector { graph, provider, params, config, index, refreshed })
    }

    pub fn index(&self) -> &GraphIndex {
        &self.index
    }

    pub fn refreshed(&self) -> &[Vec<S>] {
        &self.refreshed
    }

    pub fn select(&self, sample: &DialogueSample) -> Result<SelectionResult> {
        match self.config.traversal {
            Traversal::Greedy => self.select_with(sample, &mut Policy::Greedy),
            Traversal::Sampled { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                self.select_with(sample, &mut Policy::Sample(&mut rng))
            }
        }
    }

    pub fn select_with(&self, sample: &DialogueSample, policy: &mut Policy<'_>) -> Result<SelectionResult> {
        let keywords = self.index.keywords.extract(&sample.history, &sample.utterance, self.config.keywords);
        let sources = ModalitySummaries::compute(&sample.history, &sample.utterance, &keywords, self.provider)?;
        let start = resolve_start(self.graph, &self.index, sample, self.provider)?;
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape);
        let (context, _) = context_on_tape(&mut tape, &vars, &sources)?;
        let mut source = FixedSource::new(&self.refreshed);
        let inputs = EpisodeInputs { graph: self.graph, index: &self.index, config: &self.config };
        let episode = run_episode(&mut tape, &vars, &mut source, &inputs, context, start, policy)?;
        Ok(episode_result(&tape, self.graph, &episode, &self.config))
    }
}

/// One-shot selection; builds the graph index and refresh from scratch.
pub fn select<S: Scalar>(
    graph: &UnifiedGraph,
    sample: &DialogueSample,
    provider: &dyn Embedder,
    params: &ModelParams<S>,
    config: &SelectorConfig,
) -> Result<SelectionResult> {
    Selector::new(graph, provider, params, *config)?.select(sample)
}
