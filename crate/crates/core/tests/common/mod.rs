#![allow(dead_code)]

use kpsel::nn::Dims;
use kpsel::synth::SynthCorpus;
use kpsel::train::{LossToggles, OneCycle};
use kpsel::{gen_synthetic, SynthConfig, TrainConfig};

/// Embedding width used by the desk-scale benchmark.
pub const BENCH_D_IN: usize = 64;

pub fn bench_corpus() -> SynthCorpus {
    gen_synthetic(&SynthConfig::default()).unwrap()
}

pub fn bench_config(losses: LossToggles) -> TrainConfig {
    TrainConfig {
        dims: Dims { d_in: BENCH_D_IN, d_hidden: 32, d_state: 64, heads: 4, gat_layers: 1, mlp_hidden: 16 },
        schedule: OneCycle { max_lr: 1e-2, ..Default::default() },
        losses,
        ..Default::default()
    }
}

pub fn tiny_dims(d_in: usize) -> Dims {
    Dims { d_in, d_hidden: 4, d_state: 8, heads: 2, gat_layers: 1, mlp_hidden: 4 }
}
