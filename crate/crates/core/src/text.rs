//! Static text encoders and keyword extraction.
//!
//! The selector only needs a fixed vector per text; where those vectors come
//! from is pluggable through [`Embedder`]. Two providers ship with the crate:
//! a hashed bag-of-words encoder that needs no model files, and a file-backed
//! table for vectors precomputed by an external sentence encoder.

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, BufReader, Read};

use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graph::UnifiedGraph;

pub const DEFAULT_DIM: usize = 384;

/// 64-bit FNV-1a.
#[derive(Debug, Clone, Copy)]
pub struct Fnv1a(u64);

impl Fnv1a {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;

    pub fn new() -> Self {
        Fnv1a(Self::OFFSET)
    }

    pub fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= u64::from(b);
            self.0 = self.0.wrapping_mul(Self::PRIME);
        }
    }

    pub fn finish(&self) -> u64 {
        self.0
    }

    pub fn hash(bytes: &[u8]) -> u64 {
        let mut h = Self::new();
        h.write(bytes);
        h.finish()
    }
}

impl Default for Fnv1a {
    fn default() -> Self {
        Self::new()
    }
}

/// Lowercased alphanumeric runs.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

/// An L2-normalized vector, or the zero vector for empty text.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    values: Vec<f64>,
}

impl Embedding {
    pub fn zeros(dim: usize) -> Self {
        Embedding { values: vec![0.0; dim] }
    }

    /// Normalizes `values` to unit length; all-zero input stays zero.
    pub fn normalized(mut values: Vec<f64>) -> Self {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            values.iter_mut().for_each(|v| *v /= norm);
        }
        Embedding { values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    pub fn dot(&self, other: &Embedding) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum()
    }
}

/// What is being embedded. Graph content carries its node id so file-backed
/// providers can look it up; dialogue turns are keyed by their text hash.
#[derive(Debug, Clone, Copy)]
pub enum TextRef<'a> {
    Node { id: &'a str, text: &'a str },
    Turn(&'a str),
}

impl TextRef<'_> {
    pub fn text(&self) -> &str {
        match self {
            TextRef::Node { text, .. } => text,
            TextRef::Turn(text) => text,
        }
    }
}

pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;

    fn embed(&self, item: TextRef<'_>) -> Result<Embedding>;
}

pub fn embed_text(provider: &dyn Embedder, text: &str) -> Result<Embedding> {
    provider.embed(TextRef::Turn(text))
}

/// Bag-of-words counts hashed into `dim` buckets with FNV-1a, then L2-normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashedBow {
    dim: usize,
}

impl HashedBow {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("embedding dimension must be at least 1".into()));
        }
        Ok(HashedBow { dim })
    }

    pub fn bucket(&self, token: &str) -> usize {
        (Fnv1a::hash(token.as_bytes()) % self.dim as u64) as usize
    }
}

impl Embedder for HashedBow {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, item: TextRef<'_>) -> Result<Embedding> {
        let mut counts = vec![0.0; self.dim];
        for token in tokenize(item.text()) {
            counts[self.bucket(&token)] += 1.0;
        }
        Ok(Embedding::normalized(counts))
    }
}

#[derive(Deserialize)]
struct VectorRecord {
    id: String,
    vector: Vec<f64>,
}

/// Lookup table of precomputed vectors keyed by node id, or by the hex
/// SHA-256 of the raw text for dialogue turns.
#[derive(Debug, Clone, PartialEq)]
pub struct FileBacked {
    dim: usize,
    table: HashMap<String, Embedding>,
}

impl FileBacked {
    pub fn from_jsonl(source: impl Read) -> Result<Self> {
        let mut table = HashMap::new();
        let mut dim = None;
        for (idx, line) in BufReader::new(source).lines().enumerate() {
            let line = line?;
            let line_no = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            let rec: VectorRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: line_no,
                column: e.column(),
                message: e.to_string(),
            })?;
            match dim {
                None => dim = Some(rec.vector.len()),
                Some(d) if d != rec.vector.len() => {
                    return Err(Error::validation(format!(
                        "line {line_no}: vector for `{}` has dimension {}, expected {d}",
                        rec.id,
                        rec.vector.len()
                    )))
                }
                Some(_) => {}
            }
            if rec.vector.iter().any(|v| !v.is_finite()) {
                return Err(Error::validation(format!(
                    "line {line_no}: vector for `{}` has non-finite entries",
                    rec.id
                )));
            }
            table.insert(rec.id, Embedding::normalized(rec.vector));
        }
        let dim = dim.ok_or_else(|| Error::validation("embedding file is empty"))?;
        if dim == 0 {
            return Err(Error::validation("embedding vectors must be non-empty"));
        }
        Ok(FileBacked { dim, table })
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }
}

pub fn text_key(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

impl Embedder for FileBacked {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, item: TextRef<'_>) -> Result<Embedding> {
        let key = match item {
            TextRef::Node { id, .. } => id.to_string(),
            TextRef::Turn(text) => text_key(text),
        };
        self.table
            .get(&key)
            .cloned()
            .ok_or(Error::EmbeddingMiss(key))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EmbeddingProvider {
    HashedBow(HashedBow),
    FileBacked(FileBacked),
}

impl EmbeddingProvider {
    pub fn hashed(dim: usize) -> Result<Self> {
        Ok(EmbeddingProvider::HashedBow(HashedBow::new(dim)?))
    }
}

impl Embedder for EmbeddingProvider {
    fn dim(&self) -> usize {
        match self {
            EmbeddingProvider::HashedBow(p) => p.dim(),
            EmbeddingProvider::FileBacked(p) => p.dim(),
        }
    }

    fn embed(&self, item: TextRef<'_>) -> Result<Embedding> {
        match self {
            EmbeddingProvider::HashedBow(p) => p.embed(item),
            EmbeddingProvider::FileBacked(p) => p.embed(item),
        }
    }
}

/// Arithmetic mean of the inputs, re-normalized. Summation runs in a
/// canonical order so the result does not depend on input order.
pub fn mean_pool(items: &[Embedding]) -> Option<Embedding> {
    let first = items.first()?;
    let mut sorted: Vec<&Embedding> = items.iter().collect();
    sorted.sort_by(|a, b| {
        a.values
            .iter()
            .zip(&b.values)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut acc = vec![0.0; first.dim()];
    for e in sorted {
        for (a, v) in acc.iter_mut().zip(&e.values) {
            *a += v;
        }
    }
    let n = items.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Some(Embedding::normalized(acc))
}

/// Mean-pooled encoding of the knowledge a process node owns; nodes that own
/// nothing are encoded from their label.
pub fn encode_node(graph: &UnifiedGraph, provider: &dyn Embedder, node: usize) -> Result<Embedding> {
    let owned = graph.owned_knowledge(node);
    let mut parts = Vec::with_capacity(owned.len());
    for &k in owned {
        let kn = &graph.knowledge_nodes()[k];
        parts.push(provider.embed(TextRef::Node { id: &kn.id, text: &kn.text })?);
    }
    match mean_pool(&parts) {
        Some(e) => Ok(e),
        None => {
            let pn = &graph.process_nodes()[node];
            provider.embed(TextRef::Node { id: &pn.id, text: &pn.label })
        }
    }
}

/// Static encodings of every process and knowledge node of a graph.
#[derive(Debug, Clone, PartialEq)]
pub struct StaticEncodings {
    pub process: Vec<Embedding>,
    pub knowledge: Vec<Embedding>,
}

impl StaticEncodings {
    pub fn compute(graph: &UnifiedGraph, provider: &dyn Embedder) -> Result<Self> {
        let knowledge = graph
            .knowledge_nodes()
            .iter()
            .map(|k| provider.embed(TextRef::Node { id: &k.id, text: &k.text }))
            .collect::<Result<Vec<_>>>()?;
        let process = (0..graph.process_nodes().len())
            .map(|i| encode_node(graph, provider, i))
            .collect::<Result<Vec<_>>>()?;
        Ok(StaticEncodings { process, knowledge })
    }

    pub fn dim(&self) -> usize {
        self.knowledge
            .first()
            .or(self.process.first())
            .map_or(0, Embedding::dim)
    }
}

const STOPWORDS: &[&str] = &[
    "a", "about", "above", "after", "again", "against", "all", "am", "an", "and", "any", "are",
    "as", "at", "be", "because", "been", "before", "being", "below", "between", "both", "but",
    "by", "can", "could", "did", "do", "does", "doing", "down", "during", "each", "few", "for",
    "from", "further", "had", "has", "have", "having", "he", "her", "here", "hers", "herself",
    "him", "himself", "his", "how", "i", "if", "in", "into", "is", "it", "its", "itself", "just",
    "know", "like", "me", "more", "most", "my", "myself", "no", "nor", "not", "now", "of", "off",
    "on", "once", "only", "or", "other", "our", "ours", "ourselves", "out", "over", "own", "really",
    "s", "same", "she", "should", "so", "some", "such", "t", "tell", "than", "that", "the", "their",
    "theirs", "them", "themselves", "then", "there", "these", "they", "this", "those", "through",
    "to", "too", "under", "until", "up", "very", "was", "we", "were", "what", "when", "where",
    "which", "while", "who", "whom", "why", "will", "with", "would", "you", "your", "yours",
    "yourself", "yourselves",
];

pub fn is_stopword(word: &str) -> bool {
    STOPWORDS.binary_search(&word).is_ok()
}


#[derive(Debug, Clone, PartialEq)]
pub struct KeywordSet {
    /// `(term, weight)` sorted by descending weight, ties by term.
    pub keywords: Vec<(String, f64)>,
}

impl KeywordSet {
    pub fn is_empty(&self) -> bool {
        self.keywords.is_empty()
    }

    pub fn len(&self) -> usize {
        self.keywords.len()
    }

    pub fn terms(&self) -> impl Iterator<Item = &str> {
        self.keywords.iter().map(|(t, _)| t.as_str())
    }
}

/// TF-IDF keyword extractor with document frequencies from a KB corpus.
#[derive(Debug, Clone)]
pub struct KeywordExtractor {
    doc_freq: HashMap<String, usize>,
    num_docs: usize,
    stopwords: HashSet<String>,
}

impl KeywordExtractor {
    pub fn new<'a>(documents: impl IntoIterator<Item = &'a str>) -> Self {
        let mut doc_freq: HashMap<String, usize> = HashMap::new();
        let mut num_docs = 0;
        for doc in documents {
            num_docs += 1;
            let unique: HashSet<String> = tokenize(doc).into_iter().collect();
            for t in unique {
                *doc_freq.entry(t).or_default() += 1;
            }
        }
        KeywordExtractor {
            doc_freq,
            num_docs,
            stopwords: STOPWORDS.iter().map(|s| s.to_string()).collect(),
        }
    }

    /// IDF statistics from every knowledge node text in the graph.
    pub fn from_graph(graph: &UnifiedGraph) -> Self {
        Self::new(graph.knowledge_nodes().iter().map(|k| k.text.as_str()))
    }

    pub fn with_stopwords(mut self, words: impl IntoIterator<Item = String>) -> Self {
        self.stopwords = words.into_iter().map(|w| w.to_lowercase()).collect();
        self
    }

    /// One stopword per line; blank lines and `#` comments ignored.
    pub fn load_stopwords(source: impl Read) -> Result<Vec<String>> {
        let mut words = Vec::new();
        for line in BufReader::new(source).lines() {
            let line = line?;
            let w = line.trim();
            if !w.is_empty() && !w.starts_with('#') {
                words.push(w.to_string());
            }
        }
        Ok(words)
    }

    /// Smoothed inverse document frequency, `ln((1 + N) / (1 + df)) + 1`.
    pub fn idf(&self, term: &str) -> f64 {
        let df = self.doc_freq.get(term).copied().unwrap_or(0) as f64;
        ((1.0 + self.num_docs as f64) / (1.0 + df)).ln() + 1.0
    }

    pub fn extract(&self, history: &[String], utterance: &str, k: usize) -> KeywordSet {
        let mut tf: HashMap<String, usize> = HashMap::new();
        for turn in history.iter().map(String::as_str).chain(std::iter::once(utterance)) {
            for token in tokenize(turn) {
                if !self.stopwords.contains(&token) {
                    *tf.entry(token).or_default() += 1;
                }
            }
        }
        let mut scored: Vec<(String, f64)> = tf
            .into_iter()
            .map(|(term, count)| {
                let w = count as f64 * self.idf(&term);
                (term, w)
            })
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        scored.truncate(k);
        KeywordSet { keywords: scored }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::unify_documents;
    use crate::kb::{Article, DocumentKb, Topic};

    #[test]
    fn fnv_reference_vectors() {
        assert_eq!(Fnv1a::hash(b""), 0xcbf29ce484222325);
        assert_eq!(Fnv1a::hash(b"a"), 0xaf63dc4c8601ec8c);
    }

    #[test]
    fn empty_text_is_zero_vector() {
        let p = HashedBow::new(16).unwrap();
        let e = embed_text(&p, "").unwrap();
        assert!(e.is_zero());
        assert_eq!(e.dim(), 16);
        assert!(embed_text(&p, "  ,;! ").unwrap().is_zero());
    }

    #[test]
    fn repeated_token_normalizes_to_same_vector() {
        let p = HashedBow::new(32).unwrap();
        assert_eq!(embed_text(&p, "abc abc").unwrap(), embed_text(&p, "abc").unwrap());
        assert_eq!(embed_text(&p, "ABC").unwrap(), embed_text(&p, "abc").unwrap());
    }

    #[test]
    fn two_tokens_in_distinct_buckets() {
        // fnv1a64("a") = 0xaf63dc4c8601ec8c -> bucket 4 of 8
        // fnv1a64("b") = 0xaf63df4c8601f1a5 -> bucket 5 of 8
        let p = HashedBow::new(8).unwrap();
        let e = embed_text(&p, "a b").unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let mut expected = [0.0; 8];
        expected[4] = h;
        expected[5] = h;
        for (got, want) in e.values().iter().zip(expected) {
            assert!((got - want).abs() < 1e-15);
        }
        assert!((e.norm() - 1.0).abs() < 1e-12);
    }

    fn kb(sentences: &[&[&str]]) -> DocumentKb {
        DocumentKb {
            topics: vec![Topic {
                label: "Zoo topic".into(),
                articles: sentences
                    .iter()
                    .enumerate()
                    .map(|(i, s)| Article {
                        title: format!("title {i}"),
                        sentences: s.iter().map(|x| x.to_string()).collect(),
                    })
                    .collect(),
            }],
        }
    }

    #[test]
    fn node_with_one_item_equals_item() {
        let g = unify_documents(&kb(&[&["lions roar loudly"]])).unwrap();
        let p = HashedBow::new(64).unwrap();
        let title = g.process_index("T0.A0").unwrap();
        let e = encode_node(&g, &p, title).unwrap();
        assert_eq!(e, embed_text(&p, "lions roar loudly").unwrap());
    }

    #[test]
    fn orthogonal_items_pool_to_scaled_mean() {
        let a = Embedding::normalized(vec![1.0, 0.0, 0.0]);
        let b = Embedding::normalized(vec![0.0, 1.0, 0.0]);
        let m = mean_pool(&[a, b]).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((m.values()[0] - h).abs() < 1e-15);
        assert!((m.values()[1] - h).abs() < 1e-15);
        assert_eq!(m.values()[2], 0.0);
    }

    #[test]
    fn ownerless_topic_uses_label() {
        let g = unify_documents(&kb(&[&["x y"]])).unwrap();
        let p = HashedBow::new(64).unwrap();
        let topic = g.process_index("T0").unwrap();
        assert_eq!(encode_node(&g, &p, topic).unwrap(), embed_text(&p, "Zoo topic").unwrap());
    }

    #[test]
    fn file_backed_lookup_and_miss() {
        let turn_key = text_key("hello there");
        let data = format!(
            "{{\"id\":\"k1\",\"vector\":[3.0,4.0]}}\n{{\"id\":\"{turn_key}\",\"vector\":[0.0,2.0]}}\n"
        );
        let p = FileBacked::from_jsonl(data.as_bytes()).unwrap();
        assert_eq!(p.dim(), 2);
        let k = p.embed(TextRef::Node { id: "k1", text: "ignored" }).unwrap();
        assert_eq!(k.values(), &[0.6, 0.8]);
        let t = embed_text(&p, "hello there").unwrap();
        assert_eq!(t.values(), &[0.0, 1.0]);
        match p.embed(TextRef::Node { id: "k2", text: "" }) {
            Err(Error::EmbeddingMiss(id)) => assert_eq!(id, "k2"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn file_backed_rejects_ragged_dimensions() {
        let data = "{\"id\":\"a\",\"vector\":[1.0]}\n{\"id\":\"b\",\"vector\":[1.0,2.0]}\n";
        assert!(FileBacked::from_jsonl(data.as_bytes()).is_err());
    }

    #[test]
    fn keywords_drop_stopwords() {
        let ex = KeywordExtractor::new(["Mark Boal wrote Zero Dark Thirty"]);
        let kw = ex.extract(&[], "who wrote Zero Dark Thirty", 10);
        let terms: Vec<&str> = kw.terms().collect();
        for t in ["zero", "dark", "thirty"] {
            assert!(terms.contains(&t), "{terms:?}");
        }
        assert!(!terms.contains(&"who"));
        assert_eq!(ex.extract(&[], "who wrote Zero Dark Thirty", 1).len(), 1);
        assert!(ex.extract(&[], "", 5).is_empty());
    }

    #[test]
    fn rare_repeated_term_outranks_common_term() {
        // corpus of 3 docs: "apple" in all three, "durian" in one
        let ex = KeywordExtractor::new(["apple banana", "apple cherry", "apple durian"]);
        let kw = ex.extract(&[], "durian durian apple", 5);
        // durian: tf 2 * (ln(4/2) + 1) = 3.386294..., apple: tf 1 * (ln(4/4) + 1) = 1
        assert_eq!(kw.keywords[0].0, "durian");
        assert!((kw.keywords[0].1 - 2.0 * (2.0f64.ln() + 1.0)).abs() < 1e-12);
        assert_eq!(kw.keywords[1], ("apple".to_string(), 1.0));
    }

    #[test]
    fn ties_break_lexicographically() {
        let ex = KeywordExtractor::new(["x"]);
        let kw = ex.extract(&[], "zeta alpha mid", 3);
        let terms: Vec<&str> = kw.terms().collect();
        assert_eq!(terms, ["alpha", "mid", "zeta"]);
    }

    #[test]
    fn custom_stopwords() {
        let words = KeywordExtractor::load_stopwords("# comment\nzeta\n\n".as_bytes()).unwrap();
        let ex = KeywordExtractor::new(["x"]).with_stopwords(words);
        let kw = ex.extract(&[], "zeta the", 5);
        let terms: Vec<&str> = kw.terms().collect();
        assert_eq!(terms, ["the"]);
    }
}
