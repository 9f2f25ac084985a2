//! Flat TOML run configuration. Keys left out keep their built-in defaults;
//! command-line flags override both.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Deserialize;

use kpsel::selector::{PoolMode, Traversal};
use kpsel::train::LossToggles;
use kpsel::{Precision, SelectorConfig, TrainConfig};

/// Environment variable naming the default config file.
pub const CONFIG_ENV: &str = "GATE_CONFIG";

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub precision: Option<String>,
    pub embeddings: Option<PathBuf>,

    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub rollouts: Option<usize>,
    pub max_lr: Option<f64>,
    pub warmup_fraction: Option<f64>,
    pub weight_decay: Option<f64>,
    pub baseline: Option<bool>,
    pub clip_norm: Option<f64>,
    pub heldout_fraction: Option<f64>,
    pub walk_loss: Option<bool>,
    pub node_loss: Option<bool>,
    pub knowledge_loss: Option<bool>,

    pub d_in: Option<usize>,
    pub d_hidden: Option<usize>,
    pub d_state: Option<usize>,
    pub heads: Option<usize>,
    pub gat_layers: Option<usize>,
    pub mlp_hidden: Option<usize>,

    pub t_max: Option<usize>,
    pub m_min: Option<f64>,
    /// Fixed pool size; absent means adaptive.
    pub pool_size: Option<usize>,
    pub node_attention: Option<bool>,
    pub keywords: Option<usize>,
    /// `greedy` or `sampled`.
    pub traversal: Option<String>,
    pub traversal_seed: Option<u64>,

    pub eval_seeds: Option<Vec<u64>>,
    pub ks: Option<Vec<usize>>,

    pub bind: Option<String>,
    pub max_concurrent: Option<usize>,
}

impl FileConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// The explicit path if given, else `$GATE_CONFIG` if set, else defaults.
    pub fn resolve(explicit: Option<&Path>) -> Result<Self> {
        match explicit {
            Some(p) => Self::read(p),
            None => match std::env::var_os(CONFIG_ENV) {
                Some(p) if !p.is_empty() => Self::read(Path::new(&p)),
                _ => Ok(Self::default()),
            },
        }
    }

    pub fn precision(&self) -> Result<Option<Precision>> {
        self.precision
            .as_deref()
            .map(|p| p.parse::<Precision>().map_err(anyhow::Error::msg))
            .transpose()
    }

    pub fn selector(&self) -> Result<SelectorConfig> {
        let mut c = SelectorConfig::default();
        set(&mut c.t_max, self.t_max);
        set(&mut c.m_min, self.m_min);
        set(&mut c.use_node_attention, self.node_attention);
        set(&mut c.keywords, self.keywords);
        if let Some(k) = self.pool_size {
            c.pool = PoolMode::Fixed(k);
        }
        c.traversal = match self.traversal.as_deref() {
            None | Some("greedy") => Traversal::Greedy,
            Some("sampled") => Traversal::Sampled { seed: self.traversal_seed.or(self.seed).unwrap_or(0) },
            Some(other) => anyhow::bail!("unknown traversal `{other}` (expected greedy or sampled)"),
        };
        Ok(c)
    }

    pub fn train(&self) -> Result<TrainConfig> {
        let mut c = TrainConfig { selector: self.selector()?, ..Default::default() };
        set(&mut c.seed, self.seed);
        set(&mut c.epochs, self.epochs);
        set(&mut c.batch_size, self.batch_size);
        set(&mut c.rollouts, self.rollouts);
        set(&mut c.schedule.max_lr, self.max_lr);
        set(&mut c.schedule.warmup_fraction, self.warmup_fraction);
        set(&mut c.optimizer.weight_decay, self.weight_decay);
        set(&mut c.baseline, self.baseline);
        set(&mut c.heldout_fraction, self.heldout_fraction);
        if self.clip_norm.is_some() {
            c.clip_norm = self.clip_norm;
        }
        let d = &mut c.dims;
        set(&mut d.d_in, self.d_in);
        set(&mut d.d_hidden, self.d_hidden);
        set(&mut d.d_state, self.d_state);
        set(&mut d.heads, self.heads);
        set(&mut d.gat_layers, self.gat_layers);
        set(&mut d.mlp_hidden, self.mlp_hidden);
        c.losses = LossToggles {
            walk: self.walk_loss.unwrap_or(true),
            node: self.node_loss.unwrap_or(true),
            knowledge: self.knowledge_loss.unwrap_or(true),
        };
        Ok(c)
    }
}

fn set<T: Copy>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keys_override_defaults() {
        let f = FileConfig::from_toml("epochs = 3\nd_in = 64\npool_size = 5\nwalk_loss = false\ntraversal = \"sampled\"\nseed = 4").unwrap();
        let t = f.train().unwrap();
        assert_eq!(t.epochs, 3);
        assert_eq!(t.dims.d_in, 64);
        assert_eq!(t.selector.pool, PoolMode::Fixed(5));
        assert!(!t.losses.walk && t.losses.node);
        assert_eq!(t.selector.traversal, Traversal::Sampled { seed: 4 });
        assert_eq!(t.batch_size, TrainConfig::default().batch_size);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(FileConfig::from_toml("epoch = 3").is_err());
        assert!(FileConfig::from_toml("traversal = \"beam\"").unwrap().selector().is_err());
    }
}
