//! Differentiable building blocks and their parameters.

pub mod gradcheck;
pub mod layers;
pub mod params;
pub mod tape;

pub use gradcheck::{grad_check, GradCheck, GradCheckOptions};
pub use layers::{gat_forward, gat_forward_indexed, mha_forward, mlp_forward, AttentionOutput};
pub use params::{Dims, GatParams, Gradients, MhaParams, MlpParams, ModelParams, ModelVars, Tensor};
pub use tape::{Tape, TapeGrads, Var};
