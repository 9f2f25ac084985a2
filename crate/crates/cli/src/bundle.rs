//! Graph, parameters, embedder and selector settings loaded as one unit.

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};

use kpsel::kb::{parse_document_kb, parse_triple_kb};
use kpsel::nn::params::load_checkpoint_any;
use kpsel::selector::{GraphIndex, RefreshCache};
use kpsel::text::FileBacked;
use kpsel::{
    DialogueSample, EmbeddingProvider, KnowledgeBase, ModelParams32, ModelParams64, Precision, SelectionResult,
    Selector, SelectorConfig, UnifiedGraph,
};

/// Reads a knowledge base, choosing the format by extension: `.json` for
/// documents, anything else for tab-separated triples.
pub fn read_kb(path: &Path) -> Result<KnowledgeBase> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let reader = BufReader::new(file);
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    Ok(if is_json {
        KnowledgeBase::Documents(parse_document_kb(reader)?)
    } else {
        KnowledgeBase::Triples(parse_triple_kb(reader)?)
    })
}

/// A graph from either a saved unified graph or a raw knowledge base.
pub fn read_graph(graph: Option<&Path>, kb: Option<&Path>) -> Result<UnifiedGraph> {
    match (graph, kb) {
        (Some(g), None) => {
            let file = File::open(g).with_context(|| format!("opening {}", g.display()))?;
            Ok(UnifiedGraph::load(BufReader::new(file))?)
        }
        (None, Some(k)) => Ok(kpsel::unify(&read_kb(k)?)?),
        (Some(_), Some(_)) => bail!("give either --graph or --kb, not both"),
        (None, None) => bail!("one of --graph or --kb is required"),
    }
}

pub fn provider(embeddings: Option<&Path>, d_in: usize) -> Result<EmbeddingProvider> {
    match embeddings {
        Some(p) => {
            let file = File::open(p).with_context(|| format!("opening {}", p.display()))?;
            Ok(EmbeddingProvider::FileBacked(FileBacked::from_jsonl(BufReader::new(file))?))
        }
        None => Ok(EmbeddingProvider::hashed(d_in)?),
    }
}

pub enum Model {
    F32(ModelParams32, RefreshCache<f32>),
    F64(ModelParams64, RefreshCache<f64>),
}

impl Model {
    /// Loads a checkpoint, converting to `precision` when given.
    pub fn load(path: &Path, precision: Option<Precision>) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading checkpoint {}", path.display()))?;
        let stored = kpsel::nn::params::checkpoint_precision(&text)?;
        Ok(match precision.unwrap_or(stored) {
            Precision::F32 => Model::F32(load_checkpoint_any(&text)?, RefreshCache::new()),
            Precision::F64 => Model::F64(load_checkpoint_any(&text)?, RefreshCache::new()),
        })
    }

    pub fn d_in(&self) -> usize {
        match self {
            Model::F32(p, _) => p.dims.d_in,
            Model::F64(p, _) => p.dims.d_in,
        }
    }

    pub fn fingerprint(&self) -> u64 {
        match self {
            Model::F32(p, _) => p.fingerprint(),
            Model::F64(p, _) => p.fingerprint(),
        }
    }
}

/// Where a bundle comes from, kept so a service can reload it.
#[derive(Debug, Clone, PartialEq)]
pub struct BundleSpec {
    pub graph: Option<PathBuf>,
    pub kb: Option<PathBuf>,
    pub checkpoint: PathBuf,
    pub embeddings: Option<PathBuf>,
    pub precision: Option<Precision>,
    pub selector: SelectorConfig,
}

pub struct Bundle {
    pub graph: UnifiedGraph,
    pub model: Model,
    pub provider: EmbeddingProvider,
    pub selector: SelectorConfig,
    pub index: Arc<GraphIndex>,
}

impl Bundle {
    /// Loads everything or nothing; the refresh pass runs here so requests
    /// only pay for traversal.
    pub fn load(spec: &BundleSpec) -> Result<Self> {
        spec.selector.validate()?;
        let graph = read_graph(spec.graph.as_deref(), spec.kb.as_deref())?;
        let model = Model::load(&spec.checkpoint, spec.precision)?;
        let provider = provider(spec.embeddings.as_deref(), model.d_in())?;
        let index = Arc::new(GraphIndex::build(&graph, &provider)?);
        let bundle = Bundle { graph, model, provider, selector: spec.selector, index };
        bundle.warm()?;
        Ok(bundle)
    }

    fn warm(&self) -> Result<()> {
        match &self.model {
            Model::F32(p, cache) => {
                Selector::with_index(&self.graph, &self.provider, p, self.selector, Arc::clone(&self.index), Some(cache))?;
            }
            Model::F64(p, cache) => {
                Selector::with_index(&self.graph, &self.provider, p, self.selector, Arc::clone(&self.index), Some(cache))?;
            }
        }
        Ok(())
    }

    pub fn select(&self, sample: &DialogueSample) -> kpsel::Result<SelectionResult> {
        match &self.model {
            Model::F32(p, cache) => {
                Selector::with_index(&self.graph, &self.provider, p, self.selector, Arc::clone(&self.index), Some(cache))?
                    .select(sample)
            }
            Model::F64(p, cache) => {
                Selector::with_index(&self.graph, &self.provider, p, self.selector, Arc::clone(&self.index), Some(cache))?
                    .select(sample)
            }
        }
    }
}
