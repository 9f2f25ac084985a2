//! Subcommands of the `kpsel` binary.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use kpsel::kb::{parse_dialogue_corpus, write_dialogue_corpus, write_document_kb, write_triple_kb};
use kpsel::nn::ModelParams;
use kpsel::selector::PoolMode;
use kpsel::train::Trainer;
use kpsel::{
    gen_synthetic, render_prompt, run_eval, DialogueSample, EmbeddingProvider, KnowledgeBase, Precision, PromptMode,
    Scalar, SynthConfig, SynthMode, TrainConfig, UnifiedGraph,
};

use crate::bundle::{self, Bundle, BundleSpec};
use crate::config::FileConfig;
use crate::service::{self, AppState, DEFAULT_MAX_CONCURRENT};

const DEFAULT_SEEDS: [u64; 3] = [0, 1, 2];
const DEFAULT_KS: [usize; 3] = [1, 5, 10];
const DEFAULT_BIND: &str = "127.0.0.1:8080";

#[derive(Debug, Parser)]
#[command(name = "kpsel", version, about = "Knowledge pre-selection over a unified knowledge graph")]
pub struct Cli {
    /// TOML config file; defaults to $GATE_CONFIG when set.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// f32 or f64.
    #[arg(long, global = true)]
    pub precision: Option<Precision>,
    /// JSONL of `{"id": .., "vector": [..]}` keyed by node id or SHA-256 of the text; hashed bag-of-words otherwise.
    #[arg(long, global = true)]
    pub embeddings: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic knowledge base with train and test dialogues.
    Synth(SynthArgs),
    /// Build the unified graph from a knowledge base.
    Unify(UnifyArgs),
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Report R@k for the selector and the random and semantic baselines.
    Eval(EvalArgs),
    /// Select a knowledge pool for one dialogue turn.
    Select(SelectArgs),
    /// Serve selection over HTTP.
    Serve(ServeArgs),
    /// Render the generator prompt.
    RenderPrompt(RenderArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Documents,
    Triples,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum, default_value = "triples")]
    pub mode: ModeArg,
    #[arg(long)]
    pub train: Option<usize>,
    #[arg(long)]
    pub test: Option<usize>,
    #[arg(long)]
    pub path_length: Option<usize>,
    #[arg(long)]
    pub distractor_rate: Option<f64>,
    /// Writes kb.json or kb.tsv, train.jsonl and test.jsonl here.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct GraphSource {
    /// Knowledge base: `.json` documents or tab-separated triples.
    #[arg(long)]
    pub kb: Option<PathBuf>,
    /// Unified graph written by `unify`.
    #[arg(long, conflicts_with = "kb")]
    pub graph: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct UnifyArgs {
    #[arg(long)]
    pub kb: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub source: GraphSource,
    #[arg(long)]
    pub corpus: PathBuf,
    /// Held-out dialogues for per-epoch R@1; without it a trailing fraction of the corpus is used.
    #[arg(long)]
    pub heldout: Option<PathBuf>,
    /// Checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch JSONL report.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub no_walk_loss: bool,
    #[arg(long)]
    pub no_node_loss: bool,
    #[arg(long)]
    pub no_knowledge_loss: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub source: GraphSource,
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    /// Use a fixed pool of this size instead of the adaptive one.
    #[arg(long)]
    pub fixed_pool: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long, value_delimiter = ',')]
    pub ks: Option<Vec<usize>>,
    /// Per-sample ranks as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[command(flatten)]
    pub source: GraphSource,
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub utterance: String,
    /// One earlier turn; repeat for more.
    #[arg(long)]
    pub history: Vec<String>,
    #[arg(long)]
    pub start_node: Option<String>,
    #[arg(long)]
    pub fixed_pool: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub source: GraphSource,
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub bind: Option<String>,
    #[arg(long)]
    pub max_concurrent: Option<usize>,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub history: Vec<String>,
    /// One knowledge line; repeat for more.
    #[arg(long)]
    pub pool: Vec<String>,
    #[arg(long, default_value = "with_knowledge")]
    pub mode: PromptMode,
}

pub fn run(cli: Cli) -> Result<()> {
    let mut file = FileConfig::resolve(cli.config.as_deref())?;
    if cli.seed.is_some() {
        file.seed = cli.seed;
    }
    if let Some(p) = cli.precision {
        file.precision = Some(p.to_string());
    }
    if cli.embeddings.is_some() {
        file.embeddings = cli.embeddings;
    }
    match cli.command {
        Command::Synth(a) => synth(&file, a),
        Command::Unify(a) => unify(a),
        Command::Train(a) => train_cmd(file, a),
        Command::Eval(a) => eval(file, a),
        Command::Select(a) => select(file, a),
        Command::Serve(a) => serve(file, a),
        Command::RenderPrompt(a) => render(a),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn read_corpus(path: &Path) -> Result<Vec<DialogueSample>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    parse_dialogue_corpus(BufReader::new(file)).with_context(|| format!("reading corpus {}", path.display()))
}

fn synth(file: &FileConfig, a: SynthArgs) -> Result<()> {
    let mut cfg = SynthConfig {
        mode: match a.mode {
            ModeArg::Documents => SynthMode::Documents,
            ModeArg::Triples => SynthMode::Triples,
        },
        seed: file.seed.unwrap_or(0),
        ..Default::default()
    };
    if let Some(n) = a.train {
        cfg.train = n;
    }
    if let Some(n) = a.test {
        cfg.test = n;
    }
    if let Some(n) = a.path_length {
        cfg.path_length = n;
    }
    if let Some(r) = a.distractor_rate {
        cfg.distractor_rate = r;
    }
    let corpus = gen_synthetic(&cfg)?;
    let kb_path = match &corpus.kb {
        KnowledgeBase::Documents(kb) => {
            let p = a.out_dir.join("kb.json");
            let mut w = create(&p)?;
            write_document_kb(kb, &mut w)?;
            w.flush()?;
            p
        }
        KnowledgeBase::Triples(kb) => {
            let p = a.out_dir.join("kb.tsv");
            let mut w = create(&p)?;
            write_triple_kb(kb, &mut w)?;
            w.flush()?;
            p
        }
    };
    for (name, samples) in [("train.jsonl", &corpus.train), ("test.jsonl", &corpus.test)] {
        let mut w = create(&a.out_dir.join(name))?;
        write_dialogue_corpus(samples, &mut w)?;
        w.flush()?;
    }
    println!("{}", kb_path.display());
    Ok(())
}

fn unify(a: UnifyArgs) -> Result<()> {
    let graph = kpsel::unify(&bundle::read_kb(&a.kb)?)?;
    let mut w = create(&a.out)?;
    graph.save(&mut w)?;
    w.flush()?;
    println!("{} nodes", graph.num_nodes());
    Ok(())
}

fn train_cmd(mut file: FileConfig, a: TrainArgs) -> Result<()> {
    if a.epochs.is_some() {
        file.epochs = a.epochs;
    }
    if a.no_walk_loss {
        file.walk_loss = Some(false);
    }
    if a.no_node_loss {
        file.node_loss = Some(false);
    }
    if a.no_knowledge_loss {
        file.knowledge_loss = Some(false);
    }
    let config = file.train()?;
    config.validate()?;
    let graph = bundle::read_graph(a.source.graph.as_deref(), a.source.kb.as_deref())?;
    let corpus = read_corpus(&a.corpus)?;
    let heldout = a.heldout.as_deref().map(read_corpus).transpose()?;
    let provider = bundle::provider(file.embeddings.as_deref(), config.dims.d_in)?;
    let inputs = TrainInputs { graph: &graph, corpus: &corpus, heldout: heldout.as_deref(), provider: &provider, config };
    match file.precision()?.unwrap_or(Precision::F32) {
        Precision::F32 => train_with::<f32>(&inputs, &a),
        Precision::F64 => train_with::<f64>(&inputs, &a),
    }
}

struct TrainInputs<'a> {
    graph: &'a UnifiedGraph,
    corpus: &'a [DialogueSample],
    heldout: Option<&'a [DialogueSample]>,
    provider: &'a EmbeddingProvider,
    config: TrainConfig,
}

fn train_with<S: Scalar>(inputs: &TrainInputs<'_>, a: &TrainArgs) -> Result<()> {
    let output = match inputs.heldout {
        Some(heldout) => {
            let mut trainer = Trainer::<S>::new(inputs.graph, inputs.corpus, heldout, inputs.provider, inputs.config)?;
            trainer.run()?;
            trainer.into_output()
        }
        None => kpsel::train::<S>(inputs.graph, inputs.corpus, inputs.provider, &inputs.config)?,
    };
    let mut w = create(&a.out)?;
    output.params.save(&mut w)?;
    w.flush()?;
    if let Some(path) = &a.report {
        let mut w = create(path)?;
        output.report.write_jsonl(&mut w)?;
        w.flush()?;
    }
    if let Some(last) = output.report.epochs.last() {
        println!("{}", serde_json::to_string(last)?);
    }
    Ok(())
}

fn with_fixed_pool(file: &FileConfig, fixed: Option<usize>) -> Result<kpsel::SelectorConfig> {
    let mut selector = file.selector()?;
    if let Some(k) = fixed {
        selector.pool = PoolMode::Fixed(k);
    }
    selector.validate()?;
    Ok(selector)
}

fn eval(file: FileConfig, a: EvalArgs) -> Result<()> {
    let selector = with_fixed_pool(&file, a.fixed_pool)?;
    let seeds = a.seeds.or(file.eval_seeds.clone()).unwrap_or_else(|| DEFAULT_SEEDS.to_vec());
    let ks = a.ks.or(file.ks.clone()).unwrap_or_else(|| DEFAULT_KS.to_vec());
    let graph = bundle::read_graph(a.source.graph.as_deref(), a.source.kb.as_deref())?;
    let corpus = read_corpus(&a.corpus)?;
    let model = bundle::Model::load(&a.ckpt, file.precision()?)?;
    let provider = bundle::provider(file.embeddings.as_deref(), model.d_in())?;
    let report = match &model {
        bundle::Model::F32(p, _) => eval_with(&graph, &corpus, p, &provider, &seeds, &selector, &ks)?,
        bundle::Model::F64(p, _) => eval_with(&graph, &corpus, p, &provider, &seeds, &selector, &ks)?,
    };
    if let Some(path) = &a.csv {
        let mut w = create(path)?;
        report.write_csv(&mut w)?;
        w.flush()?;
    }
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn eval_with<S: Scalar>(
    graph: &UnifiedGraph,
    corpus: &[DialogueSample],
    params: &ModelParams<S>,
    provider: &EmbeddingProvider,
    seeds: &[u64],
    selector: &kpsel::SelectorConfig,
    ks: &[usize],
) -> Result<kpsel::EvalReport> {
    Ok(run_eval(graph, corpus, params, provider, seeds, selector, ks)?)
}

fn bundle_spec(file: &FileConfig, source: GraphSource, ckpt: PathBuf, fixed: Option<usize>) -> Result<BundleSpec> {
    Ok(BundleSpec {
        graph: source.graph,
        kb: source.kb,
        checkpoint: ckpt,
        embeddings: file.embeddings.clone(),
        precision: file.precision()?,
        selector: with_fixed_pool(file, fixed)?,
    })
}

fn select(file: FileConfig, a: SelectArgs) -> Result<()> {
    let spec = bundle_spec(&file, a.source, a.ckpt, a.fixed_pool)?;
    let bundle = Bundle::load(&spec)?;
    let sample = DialogueSample { start_node: a.start_node, ..DialogueSample::query(a.history, a.utterance) };
    let result = bundle.select(&sample)?;
    println!("{}", serde_json::to_string_pretty(&result)?);
    Ok(())
}

fn serve(file: FileConfig, a: ServeArgs) -> Result<()> {
    let bind = a.bind.or(file.bind.clone()).unwrap_or_else(|| DEFAULT_BIND.to_string());
    let max_concurrent = a.max_concurrent.or(file.max_concurrent).unwrap_or(DEFAULT_MAX_CONCURRENT);
    let spec = bundle_spec(&file, a.source, a.ckpt, None)?;
    let bundle = Bundle::load(&spec)?;
    let state = AppState::new(bundle, spec, max_concurrent);
    tokio::runtime::Runtime::new()?.block_on(service::serve(state, &bind))
}

fn render(a: RenderArgs) -> Result<()> {
    let prompt = render_prompt(&a.history, &a.pool, a.mode)?;
    let mut out = std::io::stdout().lock();
    out.write_all(prompt.as_bytes())?;
    out.flush()?;
    Ok(())
}
