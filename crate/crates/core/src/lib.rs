//! Knowledge pre-selection for knowledge-grounded dialogue.
//!
//! Documents or triples are unified into one graph of process nodes (topics,
//! titles, entities) and knowledge nodes (sentences, linearized triples). A
//! policy walks the graph from the dialogue context, scores the knowledge
//! around where it halts, and cuts a pool whose size adapts to how confident
//! the walk was. The pool is handed to any downstream generator through a
//! fixed prompt template.
//!
//! The model is generic over the scalar type; [`f32`] and [`f64`] aliases are
//! provided at the crate root.

pub mod error;
pub mod eval;
pub mod graph;
pub mod kb;
pub mod nn;
pub mod prompt;
pub mod scalar;
pub mod selector;
pub mod synth;
pub mod text;
pub mod train;

pub use error::{Error, Result};
pub use eval::{run_eval, EvalReport};
pub use graph::{unify, UnifiedGraph};
pub use kb::{DialogueSample, KnowledgeBase};
pub use prompt::{render_prompt, PromptMode};
pub use scalar::{Precision, Scalar};
pub use selector::{select, SelectionResult, Selector, SelectorConfig};
pub use synth::{gen_synthetic, SynthConfig, SynthMode};
pub use text::{EmbeddingProvider, HashedBow};
pub use train::{train, TrainConfig, TrainReport};

pub type ModelParams32 = nn::ModelParams<f32>;
pub type ModelParams64 = nn::ModelParams<f64>;
pub type Gradients32 = nn::Gradients<f32>;
pub type Gradients64 = nn::Gradients<f64>;
pub type Tape32 = nn::Tape<f32>;
pub type Tape64 = nn::Tape<f64>;
pub type Selector32<'a> = selector::Selector<'a, f32>;
pub type Selector64<'a> = selector::Selector<'a, f64>;
