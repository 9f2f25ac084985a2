//! Learnable parameters, their gradients, and checkpoint files.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::tape::{Tape, TapeGrads, Var};
use crate::scalar::{Precision, Scalar};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Negative slope of every LeakyReLU in the model.
pub const LEAKY_SLOPE: f64 = 0.21;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tensor<S> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor { rows, cols, data: vec![S::zero(); rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<S>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(format!(
                "tensor buffer of {} elements does not fit {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Tensor { rows, cols, data })
    }

    /// Uniform in `±sqrt(6 / (fan_in + fan_out))` with `fan_out = rows`, `fan_in = cols`.
    pub fn glorot(rows: usize, cols: usize, rng: &mut impl Rng) -> Self {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols).map(|_| S::of(rng.gen_range(-bound..=bound))).collect();
        Tensor { rows, cols, data }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn bind(&self, tape: &mut Tape<S>) -> Var {
        tape.matrix(self.data.clone(), self.rows, self.cols)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| T::of(v.to_f64_lossy())).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    /// Static embedding width.
    pub d_in: usize,
    /// Graph attention output width (all heads).
    pub d_hidden: usize,
    /// Agent state width.
    pub d_state: usize,
    pub heads: usize,
    pub gat_layers: usize,
    pub mlp_hidden: usize,
}

impl Default for Dims {
    fn default() -> Self {
        Dims {
            d_in: crate::text::DEFAULT_DIM,
            d_hidden: 128,
            d_state: 256,
            heads: 4,
            gat_layers: 1,
            mlp_hidden: 32,
        }
    }
}

impl Dims {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d_in", self.d_in),
            ("d_hidden", self.d_hidden),
            ("d_state", self.d_state),
            ("heads", self.heads),
            ("gat_layers", self.gat_layers),
            ("mlp_hidden", self.mlp_hidden),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.d_hidden % self.heads != 0 || self.d_state % self.heads != 0 {
            return Err(Error::Config(format!(
                "d_hidden ({}) and d_state ({}) must be divisible by heads ({})",
                self.d_hidden, self.d_state, self.heads
            )));
        }
        Ok(())
    }
}

/// One attentive-aggregation graph attention layer. The joint projection
/// `W` of `[h_i || h_j]` is stored as its two column blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct GatParams<S> {
    pub heads: usize,
    /// Block of `W` applied to the receiving node.
    pub w_self: Tensor<S>,
    /// Block of `W` applied to the neighbor; also projects the messages.
    pub w_nbr: Tensor<S>,
    /// Attention vector `a`, stored as a `1 x d_out` row.
    pub attn: Tensor<S>,
}

impl<S: Scalar> GatParams<S> {
    pub fn init(d_in: usize, d_out: usize, heads: usize, rng: &mut impl Rng) -> Self {
        GatParams {
            heads,
            w_self: Tensor::glorot(d_out, d_in, rng),
            w_nbr: Tensor::glorot(d_out, d_in, rng),
            attn: Tensor::glorot(1, d_out, rng),
        }
    }

    pub fn d_in(&self) -> usize {
        self.w_self.cols
    }

    pub fn d_out(&self) -> usize {
        self.w_self.rows
    }

    fn tensors(&self) -> [&Tensor<S>; 3] {
        [&self.w_self, &self.w_nbr, &self.attn]
    }

    fn tensors_mut(&mut self) -> [&mut Tensor<S>; 3] {
        [&mut self.w_self, &mut self.w_nbr, &mut self.attn]
    }

    pub fn bind(&self, tape: &mut Tape<S>) -> GatVars {
        GatVars {
            heads: self.heads,
            d_in: self.d_in(),
            w_self: self.w_self.bind(tape),
            w_nbr: self.w_nbr.bind(tape),
            attn: self.attn.bind(tape),
        }
    }
}

/// Affine layers with LeakyReLU between them (not after the last).
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams<S> {
    /// `(weight, bias)` per layer; bias is `out x 1`.
    pub layers: Vec<(Tensor<S>, Tensor<S>)>,
}

impl<S: Scalar> MlpParams<S> {
    pub fn init(sizes: &[usize], rng: &mut impl Rng) -> Self {
        let layers = sizes
            .windows(2)
            .map(|w| (Tensor::glorot(w[1], w[0], rng), Tensor::zeros(w[1], 1)))
            .collect();
        MlpParams { layers }
    }

    pub fn d_in(&self) -> usize {
        self.layers.first().map_or(0, |l| l.0.cols)
    }

    pub fn d_out(&self) -> usize {
        self.layers.last().map_or(0, |l| l.0.rows)
    }

    pub fn bind(&self, tape: &mut Tape<S>) -> MlpVars {
        MlpVars {
            d_in: self.d_in(),
            layers: self.layers.iter().map(|(w, b)| (w.bind(tape), b.bind(tape))).collect(),
        }
    }
}

/// Multi-head scaled dot-product attention with an output projection.
#[derive(Debug, Clone, PartialEq)]
pub struct MhaParams<S> {
    pub heads: usize,
    pub wq: Tensor<S>,
    pub wk: Tensor<S>,
    pub wv: Tensor<S>,
    pub wo: Tensor<S>,
}

impl<S: Scalar> MhaParams<S> {
    pub fn init(d_query: usize, d_input: usize, d_att: usize, d_out: usize, heads: usize, rng: &mut impl Rng) -> Self {
        MhaParams {
            heads,
            wq: Tensor::glorot(d_att, d_query, rng),
            wk: Tensor::glorot(d_att, d_input, rng),
            wv: Tensor::glorot(d_att, d_input, rng),
            wo: Tensor::glorot(d_out, d_att, rng),
        }
    }

    fn tensors(&self) -> [&Tensor<S>; 4] {
        [&self.wq, &self.wk, &self.wv, &self.wo]
    }

    fn tensors_mut(&mut self) -> [&mut Tensor<S>; 4] {
        [&mut self.wq, &mut self.wk, &mut self.wv, &mut self.wo]
    }

    pub fn bind(&self, tape: &mut Tape<S>) -> MhaVars {
        MhaVars {
            heads: self.heads,
            d_query: self.wq.cols,
            d_input: self.wk.cols,
            wq: self.wq.bind(tape),
            wk: self.wk.bind(tape),
            wv: self.wv.bind(tape),
            wo: self.wo.bind(tape),
        }
    }
}

#[derive(Debug, Clone)]
pub struct GatVars {
    pub heads: usize,
    pub d_in: usize,
    pub w_self: Var,
    pub w_nbr: Var,
    pub attn: Var,
}

#[derive(Debug, Clone)]
pub struct MlpVars {
    pub d_in: usize,
    pub layers: Vec<(Var, Var)>,
}

#[derive(Debug, Clone)]
pub struct MhaVars {
    pub heads: usize,
    pub d_query: usize,
    pub d_input: usize,
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
    pub wo: Var,
}

/// Every learnable tensor of the selector.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<S> {
    pub dims: Dims,
    /// Full-graph refresh of static node encodings.
    pub graph_gat: Vec<GatParams<S>>,
    /// Star-subgraph layer over `[state ; node]` features.
    pub score_gat: GatParams<S>,
    /// Maps a scored node's attention output to a scalar logit.
    pub score_mlp: MlpParams<S>,
    /// Maps per-node score statistics to a node attention logit.
    pub node_attn_mlp: MlpParams<S>,
    /// Attention over the history, utterance and keyword modalities.
    pub modality_attn: MhaParams<S>,
    /// State update attention.
    pub state_attn: MhaParams<S>,
    /// Projects refreshed node encodings into the state space.
    pub node_proj: Tensor<S>,
    /// Projects the state into the static embedding space for knowledge scoring.
    pub query_proj: Tensor<S>,
}

/// [`ModelParams`] bound onto a tape.
#[derive(Debug, Clone)]
pub struct ModelVars {
    pub graph_gat: Vec<GatVars>,
    pub score_gat: GatVars,
    pub score_mlp: MlpVars,
    pub node_attn_mlp: MlpVars,
    pub modality_attn: MhaVars,
    pub state_attn: MhaVars,
    pub node_proj: Var,
    pub query_proj: Var,
}

impl ModelVars {
    /// All tensor vars in [`ModelParams::tensors`] order.
    pub fn all(&self) -> Vec<Var> {
        let mut out = Vec::new();
        for g in &self.graph_gat {
            out.extend([g.w_self, g.w_nbr, g.attn]);
        }
        let s = &self.score_gat;
        out.extend([s.w_self, s.w_nbr, s.attn]);
        for m in [&self.score_mlp, &self.node_attn_mlp] {
            for &(w, b) in &m.layers {
                out.extend([w, b]);
            }
        }
        for a in [&self.modality_attn, &self.state_attn] {
            out.extend([a.wq, a.wk, a.wv, a.wo]);
        }
        out.extend([self.node_proj, self.query_proj]);
        out
    }
}

impl<S: Scalar> ModelParams<S> {
    /// Glorot-uniform weights and zero biases from a seeded generator.
    pub fn init(dims: Dims, seed: u64) -> Result<Self> {
        dims.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rng = &mut rng;
        let graph_gat = (0..dims.gat_layers)
            .map(|l| {
                let d_in = if l == 0 { dims.d_in } else { dims.d_hidden };
                GatParams::init(d_in, dims.d_hidden, dims.heads, rng)
            })
            .collect();
        let score_gat = GatParams::init(dims.d_state + dims.d_hidden, dims.d_hidden, dims.heads, rng);
        let score_mlp = MlpParams::init(&[dims.d_hidden, dims.mlp_hidden, 1], rng);
        let node_attn_mlp = MlpParams::init(&[2, dims.mlp_hidden, 1], rng);
        let modality_attn = MhaParams::init(dims.d_in, dims.d_in, dims.d_state, dims.d_state, dims.heads, rng);
        let state_attn = MhaParams::init(dims.d_state, dims.d_state, dims.d_state, dims.d_state, dims.heads, rng);
        let node_proj = Tensor::glorot(dims.d_state, dims.d_hidden, rng);
        let query_proj = Tensor::glorot(dims.d_in, dims.d_state, rng);
        Ok(ModelParams {
            dims,
            graph_gat,
            score_gat,
            score_mlp,
            node_attn_mlp,
            modality_attn,
            state_attn,
            node_proj,
            query_proj,
        })
    }

    /// Same shapes, every entry zero.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.data.iter_mut().for_each(|v| *v = S::zero());
        }
        z
    }

    /// Tensors in a fixed traversal order shared by names, binding and gradients.
    pub fn tensors(&self) -> Vec<&Tensor<S>> {
        let mut out = Vec::new();
        for g in &self.graph_gat {
            out.extend(g.tensors());
        }
        out.extend(self.score_gat.tensors());
        for m in [&self.score_mlp, &self.node_attn_mlp] {
            for (w, b) in &m.layers {
                out.extend([w, b]);
            }
        }
        out.extend(self.modality_attn.tensors());
        out.extend(self.state_attn.tensors());
        out.extend([&self.node_proj, &self.query_proj]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<S>> {
        let mut out = Vec::new();
        for g in &mut self.graph_gat {
            out.extend(g.tensors_mut());
        }
        out.extend(self.score_gat.tensors_mut());
        for m in [&mut self.score_mlp, &mut self.node_attn_mlp] {
            for (w, b) in &mut m.layers {
                out.extend([w, b]);
            }
        }
        out.extend(self.modality_attn.tensors_mut());
        out.extend(self.state_attn.tensors_mut());
        out.extend([&mut self.node_proj, &mut self.query_proj]);
        out
    }

    pub fn names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for l in 0..self.graph_gat.len() {
            for t in ["w_self", "w_nbr", "attn"] {
                out.push(format!("graph_gat.{l}.{t}"));
            }
        }
        for t in ["w_self", "w_nbr", "attn"] {
            out.push(format!("score_gat.{t}"));
        }
        for (name, m) in [("score_mlp", &self.score_mlp), ("node_attn_mlp", &self.node_attn_mlp)] {
            for l in 0..m.layers.len() {
                out.push(format!("{name}.{l}.weight"));
                out.push(format!("{name}.{l}.bias"));
            }
        }
        for name in ["modality_attn", "state_attn"] {
            for t in ["wq", "wk", "wv", "wo"] {
                out.push(format!("{name}.{t}"));
            }
        }
        out.push("node_proj".into());
        out.push("query_proj".into());
        out
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }

    pub fn bind(&self, tape: &mut Tape<S>) -> ModelVars {
        ModelVars {
            graph_gat: self.graph_gat.iter().map(|g| g.bind(tape)).collect(),
            score_gat: self.score_gat.bind(tape),
            score_mlp: self.score_mlp.bind(tape),
            node_attn_mlp: self.node_attn_mlp.bind(tape),
            modality_attn: self.modality_attn.bind(tape),
            state_attn: self.state_attn.bind(tape),
            node_proj: self.node_proj.bind(tape),
            query_proj: self.query_proj.bind(tape),
        }
    }

    /// Collects tape adjoints for every parameter tensor.
    pub fn gradients(&self, vars: &ModelVars, grads: &TapeGrads<S>) -> Gradients<S> {
        let tensors = self
            .tensors()
            .into_iter()
            .zip(vars.all())
            .map(|(t, v)| Tensor { rows: t.rows, cols: t.cols, data: grads.wrt(v, t.len()) })
            .collect();
        Gradients { tensors }
    }

    /// 64-bit FNV-1a over the dims and the bit patterns of every entry.
    pub fn fingerprint(&self) -> u64 {
        let mut h = crate::text::Fnv1a::new();
        h.write(serde_json::to_string(&self.dims).unwrap_or_default().as_bytes());
        for t in self.tensors() {
            for v in &t.data {
                h.write(&v.to_f64_lossy().to_bits().to_le_bytes());
            }
        }
        h.finish()
    }

    pub fn cast<T: Scalar>(&self) -> ModelParams<T> {
        ModelParams {
            dims: self.dims,
            graph_gat: self
                .graph_gat
                .iter()
                .map(|g| GatParams {
                    heads: g.heads,
                    w_self: g.w_self.cast(),
                    w_nbr: g.w_nbr.cast(),
                    attn: g.attn.cast(),
                })
                .collect(),
            score_gat: GatParams {
                heads: self.score_gat.heads,
                w_self: self.score_gat.w_self.cast(),
                w_nbr: self.score_gat.w_nbr.cast(),
                attn: self.score_gat.attn.cast(),
            },
            score_mlp: MlpParams { layers: self.score_mlp.layers.iter().map(|(w, b)| (w.cast(), b.cast())).collect() },
            node_attn_mlp: MlpParams {
                layers: self.node_attn_mlp.layers.iter().map(|(w, b)| (w.cast(), b.cast())).collect(),
            },
            modality_attn: cast_mha(&self.modality_attn),
            state_attn: cast_mha(&self.state_attn),
            node_proj: self.node_proj.cast(),
            query_proj: self.query_proj.cast(),
        }
    }

    pub fn save(&self, mut sink: impl Write) -> Result<()> {
        let file = CheckpointFile {
            version: CHECKPOINT_VERSION,
            dims: self.dims,
            precision: S::PRECISION,
            tensors: self
                .names()
                .into_iter()
                .zip(self.tensors())
                .map(|(name, t)| NamedTensor { name, shape: [t.rows, t.cols], data: t.data.clone() })
                .collect(),
        };
        serde_json::to_writer(&mut sink, &file)?;
        sink.write_all(b"\n")?;
        Ok(())
    }

    /// Loads a checkpoint written at precision `S`. Use [`load_checkpoint_any`]
    /// to convert between precisions.
    pub fn load(mut source: impl Read) -> Result<Self> {
        let mut text = String::new();
        source.read_to_string(&mut text)?;
        let header: CheckpointHeader = serde_json::from_str(&text).map_err(Error::from_json)?;
        if header.precision != S::PRECISION {
            return Err(Error::validation(format!(
                "checkpoint precision is {}, expected {}",
                header.precision,
                S::PRECISION
            )));
        }
        let file: CheckpointFile<S> = serde_json::from_str(&text).map_err(Error::from_json)?;
        Self::from_file(file)
    }

    fn from_file(file: CheckpointFile<S>) -> Result<Self> {
        if file.version != CHECKPOINT_VERSION {
            return Err(Error::validation(format!(
                "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
                file.version
            )));
        }
        let mut params = Self::init(file.dims, 0)?.zeros_like();
        let names = params.names();
        if names.len() != file.tensors.len() {
            return Err(Error::validation(format!(
                "checkpoint has {} tensors, dims imply {}",
                file.tensors.len(),
                names.len()
            )));
        }
        for ((name, slot), stored) in names.iter().zip(params.tensors_mut()).zip(file.tensors) {
            if &stored.name != name {
                return Err(Error::validation(format!("expected tensor `{name}`, found `{}`", stored.name)));
            }
            if stored.shape != [slot.rows, slot.cols] || stored.data.len() != slot.len() {
                return Err(Error::shape(format!(
                    "tensor `{name}` has shape {:?} with {} values, expected [{}, {}]",
                    stored.shape,
                    stored.data.len(),
                    slot.rows,
                    slot.cols
                )));
            }
            if stored.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::validation(format!("tensor `{name}` has non-finite entries")));
            }
            slot.data = stored.data;
        }
        Ok(params)
    }
}

fn cast_mha<S: Scalar, T: Scalar>(m: &MhaParams<S>) -> MhaParams<T> {
    MhaParams { heads: m.heads, wq: m.wq.cast(), wk: m.wk.cast(), wv: m.wv.cast(), wo: m.wo.cast() }
}

/// Reads the precision a checkpoint was written at.
pub fn checkpoint_precision(text: &str) -> Result<Precision> {
    let header: CheckpointHeader = serde_json::from_str(text).map_err(Error::from_json)?;
    Ok(header.precision)
}

/// Loads a checkpoint of either precision, converting to `S`.
pub fn load_checkpoint_any<S: Scalar>(text: &str) -> Result<ModelParams<S>> {
    match checkpoint_precision(text)? {
        Precision::F32 => Ok(ModelParams::<f32>::load(text.as_bytes())?.cast()),
        Precision::F64 => Ok(ModelParams::<f64>::load(text.as_bytes())?.cast()),
    }
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
struct NamedTensor<S> {
    name: String,
    shape: [usize; 2],
    data: Vec<S>,
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
struct CheckpointFile<S> {
    version: u32,
    dims: Dims,
    precision: Precision,
    tensors: Vec<NamedTensor<S>>,
}

#[derive(Deserialize)]
struct CheckpointHeader {
    precision: Precision,
}

/// Gradient tensors in [`ModelParams::tensors`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<S> {
    pub tensors: Vec<Tensor<S>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn zeros_like(params: &ModelParams<S>) -> Self {
        Gradients {
            tensors: params.tensors().iter().map(|t| Tensor::zeros(t.rows, t.cols)).collect(),
        }
    }

    pub fn is_congruent(&self, params: &ModelParams<S>) -> bool {
        let p = params.tensors();
        p.len() == self.tensors.len()
            && p.iter().zip(&self.tensors).all(|(a, b)| a.rows == b.rows && a.cols == b.cols)
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    pub fn norm(&self) -> S {
        self.tensors
            .iter()
            .flat_map(|t| &t.data)
            .map(|&v| v * v)
            .sum::<S>()
            .sqrt()
    }

    pub fn scale(&mut self, c: S) {
        for t in &mut self.tensors {
            t.data.iter_mut().for_each(|v| *v = *v * c);
        }
    }

    /// Flattened view in traversal order.
    pub fn flat(&self) -> Vec<S> {
        self.tensors.iter().flat_map(|t| t.data.iter().copied()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_dims() -> Dims {
        Dims { d_in: 6, d_hidden: 4, d_state: 4, heads: 2, gat_layers: 2, mlp_hidden: 3 }
    }

    #[test]
    fn names_tensors_and_vars_line_up() {
        let p = ModelParams::<f64>::init(small_dims(), 1).unwrap();
        let mut tape = Tape::new();
        let vars = p.bind(&mut tape);
        let all = vars.all();
        let tensors = p.tensors();
        assert_eq!(all.len(), tensors.len());
        assert_eq!(p.names().len(), tensors.len());
        for (v, t) in all.iter().zip(&tensors) {
            assert_eq!(tape.shape(*v), (t.rows, t.cols));
            assert_eq!(tape.value(*v), &t.data[..]);
        }
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let a = ModelParams::<f64>::init(small_dims(), 9).unwrap();
        let b = ModelParams::<f64>::init(small_dims(), 9).unwrap();
        let c = ModelParams::<f64>::init(small_dims(), 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let bound = (6.0f64 / (4 + 6) as f64).sqrt();
        assert!(a.graph_gat[0].w_self.data.iter().all(|v| v.abs() <= bound));
        assert!(a.score_mlp.layers[0].1.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bad_dims_rejected() {
        let dims = Dims { heads: 3, ..small_dims() };
        assert!(ModelParams::<f64>::init(dims, 0).is_err());
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let p = ModelParams::<f64>::init(small_dims(), 3).unwrap();
        let mut buf = Vec::new();
        p.save(&mut buf).unwrap();
        assert_eq!(ModelParams::<f64>::load(buf.as_slice()).unwrap(), p);

        let p32 = ModelParams::<f32>::init(small_dims(), 3).unwrap();
        let mut buf = Vec::new();
        p32.save(&mut buf).unwrap();
        assert_eq!(ModelParams::<f32>::load(buf.as_slice()).unwrap(), p32);
        assert!(ModelParams::<f64>::load(buf.as_slice()).is_err());
        let widened: ModelParams<f64> = load_checkpoint_any(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(widened.dims, p32.dims);
    }

    #[test]
    fn checkpoint_shape_mismatch_rejected() {
        let p = ModelParams::<f64>::init(small_dims(), 3).unwrap();
        let mut buf = Vec::new();
        p.save(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap().replacen("\"shape\":[4,6]", "\"shape\":[6,4]", 1);
        assert!(ModelParams::<f64>::load(text.as_bytes()).is_err());
    }
}
