//! The unified knowledge graph.
//!
//! Both KB types are mapped onto one structure with two node types:
//! *process* nodes (topics, article titles, entities) that the agent walks
//! over, and *knowledge* nodes (sentences, linearized triples) that hang off
//! exactly one process node and are what finally gets selected.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kb::{DocumentKb, KnowledgeBase, TripleKb};

pub const GRAPH_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraphKind {
    Documents,
    Triples,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProcessKind {
    Topic,
    Title,
    Entity,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProcessNode {
    pub id: String,
    pub label: String,
    pub kind: ProcessKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeNode {
    pub id: String,
    pub text: String,
    pub owner: String,
}

/// A process edge. Triple edges carry the id of the knowledge node they
/// came from; document containment edges carry none.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub source: String,
    pub target: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct GraphFile {
    version: u32,
    kind: GraphKind,
    process_nodes: Vec<ProcessNode>,
    knowledge_nodes: Vec<KnowledgeNode>,
    edges: Vec<Edge>,
}

#[derive(Debug, Clone)]
pub struct UnifiedGraph {
    kind: GraphKind,
    process_nodes: Vec<ProcessNode>,
    knowledge_nodes: Vec<KnowledgeNode>,
    edges: Vec<Edge>,
    process_index: HashMap<String, usize>,
    knowledge_index: HashMap<String, usize>,
    // neighbor process indices, sorted by id, deduplicated, self excluded
    adjacency: Vec<Vec<usize>>,
    owned: Vec<Vec<usize>>,
    degree: Vec<usize>,
}

impl PartialEq for UnifiedGraph {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind
            && self.process_nodes == other.process_nodes
            && self.knowledge_nodes == other.knowledge_nodes
            && self.edges == other.edges
    }
}

impl UnifiedGraph {
    /// Assembles a graph from raw parts without enforcing invariants.
    /// Dangling references are ignored by the indices; use [`validate`](Self::validate)
    /// to find them.
    pub fn from_parts(
        kind: GraphKind,
        process_nodes: Vec<ProcessNode>,
        knowledge_nodes: Vec<KnowledgeNode>,
        edges: Vec<Edge>,
    ) -> Self {
        let mut process_index = HashMap::with_capacity(process_nodes.len());
        for (i, n) in process_nodes.iter().enumerate() {
            process_index.entry(n.id.clone()).or_insert(i);
        }
        let mut knowledge_index = HashMap::with_capacity(knowledge_nodes.len());
        for (i, k) in knowledge_nodes.iter().enumerate() {
            knowledge_index.entry(k.id.clone()).or_insert(i);
        }

        let n = process_nodes.len();
        let mut neighbor_sets: Vec<BTreeSet<(&str, usize)>> = vec![BTreeSet::new(); n];
        let mut degree = vec![0; n];
        for e in &edges {
            let (Some(&s), Some(&t)) = (process_index.get(&e.source), process_index.get(&e.target))
            else {
                continue;
            };
            degree[s] += 1;
            if s != t {
                degree[t] += 1;
                neighbor_sets[s].insert((process_nodes[t].id.as_str(), t));
                neighbor_sets[t].insert((process_nodes[s].id.as_str(), s));
            }
        }
        let adjacency = neighbor_sets
            .into_iter()
            .map(|set| set.into_iter().map(|(_, i)| i).collect())
            .collect();

        let mut owned = vec![Vec::new(); n];
        for (i, k) in knowledge_nodes.iter().enumerate() {
            if let Some(&o) = process_index.get(&k.owner) {
                owned[o].push(i);
            }
        }

        UnifiedGraph {
            kind,
            process_nodes,
            knowledge_nodes,
            edges,
            process_index,
            knowledge_index,
            adjacency,
            owned,
            degree,
        }
    }

    pub fn into_parts(self) -> (GraphKind, Vec<ProcessNode>, Vec<KnowledgeNode>, Vec<Edge>) {
        (self.kind, self.process_nodes, self.knowledge_nodes, self.edges)
    }

    pub fn kind(&self) -> GraphKind {
        self.kind
    }

    pub fn process_nodes(&self) -> &[ProcessNode] {
        &self.process_nodes
    }

    pub fn knowledge_nodes(&self) -> &[KnowledgeNode] {
        &self.knowledge_nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn num_nodes(&self) -> usize {
        self.process_nodes.len() + self.knowledge_nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.process_nodes.is_empty()
    }

    pub fn process_index(&self, id: &str) -> Option<usize> {
        self.process_index.get(id).copied()
    }

    pub fn knowledge_index(&self, id: &str) -> Option<usize> {
        self.knowledge_index.get(id).copied()
    }

    pub(crate) fn require_process(&self, id: &str) -> Result<usize> {
        self.process_index(id)
            .ok_or_else(|| Error::UnknownNode(id.to_string()))
    }

    /// Neighbor indices of a process node, sorted by node id.
    pub fn neighbor_indices(&self, node: usize) -> &[usize] {
        &self.adjacency[node]
    }

    /// Knowledge indices owned by a process node, in insertion order.
    pub fn owned_knowledge(&self, node: usize) -> &[usize] {
        &self.owned[node]
    }

    /// One-hop neighbors in both edge directions, sorted by id.
    pub fn neighbors(&self, id: &str) -> Result<Vec<&str>> {
        let idx = self.require_process(id)?;
        Ok(self.adjacency[idx]
            .iter()
            .map(|&j| self.process_nodes[j].id.as_str())
            .collect())
    }

    /// Number of incident edges, with a self-loop counted once.
    pub fn degree(&self, id: &str) -> Result<usize> {
        Ok(self.degree[self.require_process(id)?])
    }

    /// Adjacency lists by index, sorted.
    pub fn adjacency(&self) -> &[Vec<usize>] {
        &self.adjacency
    }

    /// Reports every structural invariant violation; empty iff valid.
    pub fn validate(&self) -> ValidationReport {
        let mut report = ValidationReport::default();
        let mut ids = HashSet::new();
        for n in &self.process_nodes {
            if !ids.insert(n.id.as_str()) {
                report.push(ViolationKind::DuplicateId, format!("duplicate node id `{}`", n.id));
            }
        }
        for k in &self.knowledge_nodes {
            if !ids.insert(k.id.as_str()) {
                report.push(ViolationKind::DuplicateId, format!("duplicate node id `{}`", k.id));
            }
        }
        for k in &self.knowledge_nodes {
            if self.process_index(&k.owner).is_none() {
                report.push(
                    ViolationKind::DanglingOwner,
                    format!("knowledge node `{}` has unknown owner `{}`", k.id, k.owner),
                );
            }
        }
        for e in &self.edges {
            for end in [&e.source, &e.target] {
                if self.process_index(end).is_none() {
                    report.push(
                        ViolationKind::DanglingEdge,
                        format!("edge {} -> {} references unknown node `{}`", e.source, e.target, end),
                    );
                }
            }
        }
        let kind_of = |id: &str| self.process_index(id).map(|i| self.process_nodes[i].kind);
        match self.kind {
            GraphKind::Documents => {
                let mut parents: HashMap<&str, usize> = HashMap::new();
                for e in &self.edges {
                    match (kind_of(&e.source), kind_of(&e.target)) {
                        (Some(ProcessKind::Topic), Some(ProcessKind::Title)) => {
                            *parents.entry(e.target.as_str()).or_default() += 1;
                        }
                        (Some(_), Some(_)) => report.push(
                            ViolationKind::Layering,
                            format!("edge {} -> {} is not topic -> title", e.source, e.target),
                        ),
                        _ => {}
                    }
                }
                for n in &self.process_nodes {
                    match n.kind {
                        ProcessKind::Title => {
                            let count = parents.get(n.id.as_str()).copied().unwrap_or(0);
                            if count != 1 {
                                report.push(
                                    ViolationKind::Layering,
                                    format!("title `{}` has {count} parent topics", n.id),
                                );
                            }
                        }
                        ProcessKind::Entity => report.push(
                            ViolationKind::WrongKind,
                            format!("entity node `{}` in a document graph", n.id),
                        ),
                        ProcessKind::Topic => {}
                    }
                }
                for k in &self.knowledge_nodes {
                    if let Some(kind) = kind_of(&k.owner) {
                        if kind != ProcessKind::Title {
                            report.push(
                                ViolationKind::Ownership,
                                format!("knowledge `{}` is owned by a non-title node", k.id),
                            );
                        }
                    }
                }
            }
            GraphKind::Triples => {
                for n in &self.process_nodes {
                    if n.kind != ProcessKind::Entity {
                        report.push(
                            ViolationKind::WrongKind,
                            format!("non-entity node `{}` in a triple graph", n.id),
                        );
                    }
                }
                let mut by_provenance: HashMap<&str, &Edge> = HashMap::new();
                for e in &self.edges {
                    match e.provenance.as_deref() {
                        Some(p) => {
                            if by_provenance.insert(p, e).is_some() {
                                report.push(
                                    ViolationKind::Provenance,
                                    format!("knowledge `{p}` has more than one edge"),
                                );
                            }
                            if self.knowledge_index(p).is_none() {
                                report.push(
                                    ViolationKind::Provenance,
                                    format!("edge {} -> {} cites unknown knowledge `{p}`", e.source, e.target),
                                );
                            }
                        }
                        None => report.push(
                            ViolationKind::Provenance,
                            format!("edge {} -> {} has no source triple", e.source, e.target),
                        ),
                    }
                }
                for k in &self.knowledge_nodes {
                    match by_provenance.get(k.id.as_str()) {
                        Some(e) if e.source != k.owner => report.push(
                            ViolationKind::Ownership,
                            format!("knowledge `{}` owned by `{}` but its triple head is `{}`", k.id, k.owner, e.source),
                        ),
                        Some(_) => {}
                        None => report.push(
                            ViolationKind::Provenance,
                            format!("knowledge `{}` has no entity edge", k.id),
                        ),
                    }
                }
            }
        }
        report
    }

    pub fn save(&self, mut sink: impl Write) -> Result<()> {
        let file = GraphFile {
            version: GRAPH_FORMAT_VERSION,
            kind: self.kind,
            process_nodes: self.process_nodes.clone(),
            knowledge_nodes: self.knowledge_nodes.clone(),
            edges: self.edges.clone(),
        };
        serde_json::to_writer(&mut sink, &file)?;
        sink.write_all(b"\n")?;
        Ok(())
    }

    /// Loads a graph cache file and rejects it unless it validates cleanly.
    pub fn load(mut source: impl Read) -> Result<Self> {
        let mut text = String::new();
        source.read_to_string(&mut text)?;
        let file: GraphFile = serde_json::from_str(&text).map_err(Error::from_json)?;
        if file.version != GRAPH_FORMAT_VERSION {
            return Err(Error::validation(format!(
                "unsupported graph file version {} (expected {GRAPH_FORMAT_VERSION})",
                file.version
            )));
        }
        let graph = Self::from_parts(file.kind, file.process_nodes, file.knowledge_nodes, file.edges);
        let report = graph.validate();
        if !report.is_valid() {
            return Err(Error::validation(format!("invalid graph file: {report}")));
        }
        Ok(graph)
    }

    /// Stable 64-bit fingerprint of the graph contents (FNV-1a over the ids and texts).
    pub fn fingerprint(&self) -> u64 {
        let mut h = crate::text::Fnv1a::new();
        for n in &self.process_nodes {
            h.write(n.id.as_bytes());
            h.write(&[0xff]);
        }
        for k in &self.knowledge_nodes {
            h.write(k.id.as_bytes());
            h.write(&[0xfe]);
            h.write(k.text.as_bytes());
            h.write(&[0xfd]);
        }
        for e in &self.edges {
            h.write(e.source.as_bytes());
            h.write(&[0xfc]);
            h.write(e.target.as_bytes());
            h.write(&[0xfb]);
        }
        h.finish()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    DuplicateId,
    DanglingOwner,
    DanglingEdge,
    Layering,
    WrongKind,
    Ownership,
    Provenance,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub kind: ViolationKind,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    fn push(&mut self, kind: ViolationKind, message: String) {
        self.violations.push(Violation { kind, message });
    }

    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let msgs: Vec<&str> = self.violations.iter().map(|v| v.message.as_str()).collect();
        f.write_str(&msgs.join("; "))
    }
}

pub fn topic_id(topic: usize) -> String {
    format!("T{topic}")
}

pub fn title_id(topic: usize, article: usize) -> String {
    format!("T{topic}.A{article}")
}

pub fn sentence_id(topic: usize, article: usize, sentence: usize) -> String {
    format!("T{topic}.A{article}.S{sentence}")
}

/// Knowledge id of a triple: its three components joined by `|`.
pub fn triple_id(head: &str, relation: &str, tail: &str) -> String {
    format!("{head}|{relation}|{tail}")
}

/// Topics and titles become process nodes joined by containment edges;
/// every sentence becomes a knowledge node owned by its title.
pub fn unify_documents(kb: &DocumentKb) -> Result<UnifiedGraph> {
    if kb.is_empty() {
        return Err(Error::EmptyKb);
    }
    kb.validate()?;
    let mut process = Vec::new();
    let mut knowledge = Vec::new();
    let mut edges = Vec::new();
    for (ti, topic) in kb.topics.iter().enumerate() {
        let tid = topic_id(ti);
        process.push(ProcessNode {
            id: tid.clone(),
            label: topic.label.clone(),
            kind: ProcessKind::Topic,
        });
        for (ai, article) in topic.articles.iter().enumerate() {
            let aid = title_id(ti, ai);
            process.push(ProcessNode {
                id: aid.clone(),
                label: article.title.clone(),
                kind: ProcessKind::Title,
            });
            edges.push(Edge {
                source: tid.clone(),
                target: aid.clone(),
                provenance: None,
            });
            for (si, sentence) in article.sentences.iter().enumerate() {
                knowledge.push(KnowledgeNode {
                    id: sentence_id(ti, ai, si),
                    text: sentence.clone(),
                    owner: aid.clone(),
                });
            }
        }
    }
    Ok(UnifiedGraph::from_parts(GraphKind::Documents, process, knowledge, edges))
}

/// Entities stay process nodes with one undirected edge per triple; each
/// triple is merged into a knowledge node owned by its head entity.
pub fn unify_triples(kb: &TripleKb) -> Result<UnifiedGraph> {
    if kb.is_empty() {
        return Err(Error::EmptyKb);
    }
    let mut process = Vec::new();
    let mut seen = HashSet::new();
    let mut knowledge = Vec::with_capacity(kb.triples.len());
    let mut knowledge_ids = HashSet::new();
    let mut edges = Vec::with_capacity(kb.triples.len());
    for t in &kb.triples {
        for entity in [&t.head, &t.tail] {
            if seen.insert(entity.as_str()) {
                process.push(ProcessNode {
                    id: entity.clone(),
                    label: entity.clone(),
                    kind: ProcessKind::Entity,
                });
            }
        }
        let kid = triple_id(&t.head, &t.relation, &t.tail);
        if !knowledge_ids.insert(kid.clone()) {
            return Err(Error::validation(format!("duplicate triple `{kid}`")));
        }
        knowledge.push(KnowledgeNode {
            id: kid.clone(),
            text: t.linearize(),
            owner: t.head.clone(),
        });
        edges.push(Edge {
            source: t.head.clone(),
            target: t.tail.clone(),
            provenance: Some(kid),
        });
    }
    Ok(UnifiedGraph::from_parts(GraphKind::Triples, process, knowledge, edges))
}

pub fn unify(kb: &KnowledgeBase) -> Result<UnifiedGraph> {
    match kb {
        KnowledgeBase::Documents(d) => unify_documents(d),
        KnowledgeBase::Triples(t) => unify_triples(t),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kb::{Article, Topic, Triple};

    fn doc(topics: usize, titles: usize, sentences: usize) -> DocumentKb {
        DocumentKb {
            topics: (0..topics)
                .map(|t| Topic {
                    label: format!("topic {t}"),
                    articles: (0..titles)
                        .map(|a| Article {
                            title: format!("title {a}"),
                            sentences: (0..sentences).map(|s| format!("sentence {t} {a} {s}")).collect(),
                        })
                        .collect(),
                })
                .collect(),
        }
    }

    #[test]
    fn one_topic_one_title_two_sentences() {
        let g = unify_documents(&doc(1, 1, 2)).unwrap();
        assert_eq!(g.process_nodes().len(), 2);
        assert_eq!(g.knowledge_nodes().len(), 2);
        assert_eq!(g.edges().len(), 1);
        assert!(g.knowledge_nodes().iter().all(|k| k.owner == "T0.A0"));
        assert!(g.validate().is_valid());
    }

    #[test]
    fn veterinary_sentence_is_verbatim() {
        let sentence = "In many cases, the activities that may be undertaken by a veterinarian (such as treatment of illness or surgery in animals) are restricted only to those professionals who are registered as a veterinarian.";
        let kb = DocumentKb {
            topics: vec![Topic {
                label: "Veterinary physician".into(),
                articles: vec![Article {
                    title: "Veterinary physician".into(),
                    sentences: vec![sentence.into()],
                }],
            }],
        };
        let g = unify_documents(&kb).unwrap();
        assert_eq!(g.knowledge_nodes()[0].text, sentence);
        assert!(g.knowledge_nodes()[0].text.contains("treatment of illness or surgery"));
    }

    #[test]
    fn three_by_two_by_two_is_a_forest() {
        let kb = doc(3, 2, 2);
        let g = unify_documents(&kb).unwrap();
        // independent count: one node per topic and per (topic, title) pair
        let expected_process: usize = kb.topics.iter().map(|t| 1 + t.articles.len()).sum();
        let expected_knowledge: usize = kb
            .topics
            .iter()
            .flat_map(|t| t.articles.iter().map(|a| a.sentences.len()))
            .sum();
        assert_eq!(expected_process, 9);
        assert_eq!(expected_knowledge, 12);
        assert_eq!(g.process_nodes().len(), expected_process);
        assert_eq!(g.knowledge_nodes().len(), expected_knowledge);
        assert_eq!(g.edges().len(), 6);
        // forest: edges = nodes - components (one component per topic)
        assert_eq!(g.edges().len(), g.process_nodes().len() - 3);
        assert!(g.validate().is_valid());
    }

    #[test]
    fn empty_kbs_error() {
        assert!(matches!(unify_documents(&DocumentKb::default()), Err(Error::EmptyKb)));
        assert!(matches!(unify_triples(&TripleKb::default()), Err(Error::EmptyKb)));
    }

    #[test]
    fn paper_towns_triple() {
        let kb = TripleKb {
            triples: vec![Triple::new("Paper Towns", "written_by", "John Green")],
        };
        let g = unify_triples(&kb).unwrap();
        let ids: Vec<&str> = g.process_nodes().iter().map(|n| n.id.as_str()).collect();
        assert_eq!(ids, ["Paper Towns", "John Green"]);
        assert_eq!(g.knowledge_nodes()[0].text, "Paper Towns written_by John Green");
        assert_eq!(g.knowledge_nodes()[0].owner, "Paper Towns");
        assert_eq!(g.edges().len(), 1);
        assert!(g.validate().is_valid());
    }

    #[test]
    fn self_loop_triple() {
        let g = unify_triples(&TripleKb {
            triples: vec![Triple::new("A", "rel", "A")],
        })
        .unwrap();
        assert_eq!(g.process_nodes().len(), 1);
        assert_eq!(g.knowledge_nodes().len(), 1);
        assert_eq!(g.edges().len(), 1);
        assert_eq!(g.degree("A").unwrap(), 1);
        assert!(g.neighbors("A").unwrap().is_empty());
        assert!(g.validate().is_valid());
    }

    #[test]
    fn star_degree_and_neighbors() {
        let kb = TripleKb {
            triples: (0..5).map(|i| Triple::new("H", "r", format!("S{i}"))).collect(),
        };
        let g = unify_triples(&kb).unwrap();
        let hub = g.process_index("H").unwrap();
        assert_eq!(g.owned_knowledge(hub).len(), 5);
        // independent count: triples touching H
        let touching = kb.triples.iter().filter(|t| t.head == "H" || t.tail == "H").count();
        assert_eq!(g.degree("H").unwrap(), touching);
        assert_eq!(g.neighbors("H").unwrap(), ["S0", "S1", "S2", "S3", "S4"]);
        assert_eq!(g.neighbors("S3").unwrap(), ["H"]);
    }

    #[test]
    fn neighbors_of_title_and_isolated() {
        let g = unify_documents(&doc(2, 2, 1)).unwrap();
        assert_eq!(g.neighbors("T1.A0").unwrap(), ["T1"]);
        assert_eq!(g.neighbors("T0").unwrap(), ["T0.A0", "T0.A1"]);
        let (kind, mut p, k, e) = g.into_parts();
        p.push(ProcessNode { id: "lonely".into(), label: "x".into(), kind: ProcessKind::Topic });
        let g = UnifiedGraph::from_parts(kind, p, k, e);
        assert!(g.neighbors("lonely").unwrap().is_empty());
        assert!(matches!(g.neighbors("nope"), Err(Error::UnknownNode(_))));
    }

    #[test]
    fn dangling_owner_is_reported() {
        let (kind, p, mut k, e) = unify_documents(&doc(1, 1, 1)).unwrap().into_parts();
        k[0].owner = "ghost".into();
        let report = UnifiedGraph::from_parts(kind, p, k, e).validate();
        assert_eq!(report.violations.len(), 1);
        assert!(report.violations[0].message.contains("T0.A0.S0"));
        assert_eq!(report.violations[0].kind, ViolationKind::DanglingOwner);
    }

    #[test]
    fn title_to_title_edge_breaks_layering() {
        let (kind, p, k, mut e) = unify_documents(&doc(1, 2, 1)).unwrap().into_parts();
        e.push(Edge { source: "T0.A0".into(), target: "T0.A1".into(), provenance: None });
        let report = UnifiedGraph::from_parts(kind, p, k, e).validate();
        assert!(report.violations.iter().any(|v| v.kind == ViolationKind::Layering));
    }

    #[test]
    fn cache_round_trip() {
        let g = unify_triples(&TripleKb {
            triples: vec![
                Triple::new("Zero Dark Thirty", "has_genre", "War film"),
                Triple::new("Mark Boal", "wrote", "Zero Dark Thirty"),
            ],
        })
        .unwrap();
        let mut buf = Vec::new();
        g.save(&mut buf).unwrap();
        let back = UnifiedGraph::load(buf.as_slice()).unwrap();
        assert_eq!(g, back);
        assert_eq!(g.fingerprint(), back.fingerprint());
        assert_eq!(back.neighbors("Zero Dark Thirty").unwrap(), ["Mark Boal", "War film"]);
    }

    #[test]
    fn load_rejects_bad_version() {
        let text = r#"{"version":99,"kind":"triples","process_nodes":[],"knowledge_nodes":[],"edges":[]}"#;
        assert!(UnifiedGraph::load(text.as_bytes()).is_err());
    }
}
