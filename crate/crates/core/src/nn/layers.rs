//! Graph attention, MLP and multi-head attention, recorded on a tape.
//!
//! Each layer has a tape-level builder used during training and a
//! value-level `*_forward` wrapper that runs it on a throwaway tape.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::nn::params::{GatParams, GatVars, MhaParams, MhaVars, MlpParams, MlpVars, LEAKY_SLOPE};
use crate::nn::tape::{Tape, Var};
use crate::scalar::Scalar;

fn check_len<S: Scalar>(tape: &Tape<S>, v: Var, expected: usize, what: &str) -> Result<()> {
    let got = tape.len_of(v);
    if got != expected {
        return Err(Error::shape(format!("{what} has length {got}, expected {expected}")));
    }
    Ok(())
}

/// Per-node projections shared by every attention edge touching the node.
#[derive(Debug, Clone, Copy)]
pub struct GatProjection {
    pub self_part: Var,
    pub message: Var,
}

pub fn gat_project<S: Scalar>(tape: &mut Tape<S>, vars: &GatVars, h: Var) -> Result<GatProjection> {
    check_len(tape, h, vars.d_in, "gat input feature")?;
    Ok(GatProjection {
        self_part: tape.matvec(vars.w_self, h),
        message: tape.matvec(vars.w_nbr, h),
    })
}

/// Output for one receiving node. `others` are the neighbors' projections;
/// the self-loop is added here and always sits first.
pub fn gat_aggregate<S: Scalar>(
    tape: &mut Tape<S>,
    vars: &GatVars,
    node: GatProjection,
    others: &[GatProjection],
) -> Var {
    let slope = S::of(LEAKY_SLOPE);
    let mut logits = Vec::with_capacity(others.len() + 1);
    let mut messages = Vec::with_capacity(others.len() + 1);
    for p in std::iter::once(&node).chain(others) {
        let pre = tape.add(node.self_part, p.message);
        let act = tape.leaky_relu(pre, slope);
        let weighted = tape.mul(act, vars.attn);
        logits.push(tape.segment_sum(weighted, vars.heads));
        messages.push(p.message);
    }
    let stacked = tape.concat(&logits);
    let alpha = tape.softmax_columns(stacked, vars.heads);
    tape.head_weighted_sum(alpha, &messages, vars.heads)
}

/// One layer over a whole graph given as neighbor lists (self excluded).
pub fn gat_layer<S: Scalar>(
    tape: &mut Tape<S>,
    vars: &GatVars,
    features: &[Var],
    neighbors: &[Vec<usize>],
) -> Result<Vec<Var>> {
    if features.len() != neighbors.len() {
        return Err(Error::shape(format!(
            "{} feature vectors for {} adjacency lists",
            features.len(),
            neighbors.len()
        )));
    }
    let proj = features
        .iter()
        .map(|&h| gat_project(tape, vars, h))
        .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::with_capacity(features.len());
    for (i, nbrs) in neighbors.iter().enumerate() {
        let others: Vec<GatProjection> = nbrs.iter().map(|&j| proj[j]).collect();
        out.push(gat_aggregate(tape, vars, proj[i], &others));
    }
    Ok(out)
}

/// Stacked layers with LeakyReLU between them.
pub fn gat_stack<S: Scalar>(
    tape: &mut Tape<S>,
    layers: &[GatVars],
    features: &[Var],
    neighbors: &[Vec<usize>],
) -> Result<Vec<Var>> {
    let mut h = features.to_vec();
    for (l, vars) in layers.iter().enumerate() {
        if l > 0 {
            h = h.into_iter().map(|v| tape.leaky_relu(v, S::of(LEAKY_SLOPE))).collect();
        }
        h = gat_layer(tape, vars, &h, neighbors)?;
    }
    Ok(h)
}

pub fn mlp<S: Scalar>(tape: &mut Tape<S>, vars: &MlpVars, x: Var) -> Result<Var> {
    check_len(tape, x, vars.d_in, "mlp input")?;
    let mut h = x;
    for (l, &(w, b)) in vars.layers.iter().enumerate() {
        if l > 0 {
            h = tape.leaky_relu(h, S::of(LEAKY_SLOPE));
        }
        let z = tape.matvec(w, h);
        h = tape.add(z, b);
    }
    Ok(h)
}

/// Output vector and the `inputs x heads` attention matrix.
pub fn mha<S: Scalar>(tape: &mut Tape<S>, vars: &MhaVars, query: Var, inputs: &[Var]) -> Result<(Var, Var)> {
    if inputs.is_empty() {
        return Err(Error::shape("attention needs at least one input"));
    }
    check_len(tape, query, vars.d_query, "attention query")?;
    for &x in inputs {
        check_len(tape, x, vars.d_input, "attention input")?;
    }
    let q = tape.matvec(vars.wq, query);
    let d_head = tape.len_of(q) / vars.heads;
    let inv_sqrt = S::one() / S::of(d_head as f64).sqrt();
    let mut logits = Vec::with_capacity(inputs.len());
    let mut values = Vec::with_capacity(inputs.len());
    for &x in inputs {
        let k = tape.matvec(vars.wk, x);
        let qk = tape.mul(q, k);
        let per_head = tape.segment_sum(qk, vars.heads);
        logits.push(tape.scale(per_head, inv_sqrt));
        values.push(tape.matvec(vars.wv, x));
    }
    let stacked = tape.concat(&logits);
    let alpha = tape.softmax_columns(stacked, vars.heads);
    let mixed = tape.head_weighted_sum(alpha, &values, vars.heads);
    Ok((tape.matvec(vars.wo, mixed), alpha))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionOutput<S> {
    pub vector: Vec<S>,
    /// `weights[i][h]`: weight of input `i` under head `h`.
    pub weights: Vec<Vec<S>>,
}

pub fn mha_forward<S: Scalar>(query: &[S], inputs: &[Vec<S>], params: &MhaParams<S>) -> Result<AttentionOutput<S>> {
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape);
    let q = tape.vector(query.to_vec());
    let xs: Vec<Var> = inputs.iter().map(|x| tape.vector(x.clone())).collect();
    let (out, alpha) = mha(&mut tape, &vars, q, &xs)?;
    let weights = tape.value(alpha).chunks(params.heads).map(<[S]>::to_vec).collect();
    Ok(AttentionOutput { vector: tape.value(out).to_vec(), weights })
}

pub fn mlp_forward<S: Scalar>(x: &[S], params: &MlpParams<S>) -> Result<Vec<S>> {
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape);
    let xv = tape.vector(x.to_vec());
    let out = mlp(&mut tape, &vars, xv)?;
    Ok(tape.value(out).to_vec())
}

/// Index-based layer: `neighbors[i]` lists the nodes adjacent to `i`.
pub fn gat_forward_indexed<S: Scalar>(
    features: &[Vec<S>],
    neighbors: &[Vec<usize>],
    params: &GatParams<S>,
) -> Result<Vec<Vec<S>>> {
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape);
    let h: Vec<Var> = features.iter().map(|f| tape.vector(f.clone())).collect();
    let out = gat_layer(&mut tape, &vars, &h, neighbors)?;
    Ok(out.into_iter().map(|v| tape.value(v).to_vec()).collect())
}

/// One layer over an undirected edge list keyed by node id.
pub fn gat_forward<S: Scalar>(
    features: &BTreeMap<String, Vec<S>>,
    edges: &[(String, String)],
    params: &GatParams<S>,
) -> Result<BTreeMap<String, Vec<S>>> {
    let ids: Vec<&String> = features.keys().collect();
    let index: BTreeMap<&str, usize> = ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); ids.len()];
    for (a, b) in edges {
        let ia = *index
            .get(a.as_str())
            .ok_or_else(|| Error::shape(format!("edge endpoint `{a}` has no feature vector")))?;
        let ib = *index
            .get(b.as_str())
            .ok_or_else(|| Error::shape(format!("edge endpoint `{b}` has no feature vector")))?;
        if ia != ib {
            adj[ia].insert(ib);
            adj[ib].insert(ia);
        }
    }
    let neighbors: Vec<Vec<usize>> = adj.into_iter().map(|s| s.into_iter().collect()).collect();
    let feats: Vec<Vec<S>> = features.values().cloned().collect();
    let out = gat_forward_indexed(&feats, &neighbors, params)?;
    Ok(ids.into_iter().cloned().zip(out).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::Tensor;

    fn t(rows: usize, cols: usize, data: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(rows, cols, data.to_vec()).unwrap()
    }

    fn leaky(x: f64) -> f64 {
        if x > 0.0 {
            x
        } else {
            0.21 * x
        }
    }

    #[test]
    fn isolated_node_gets_its_own_message() {
        let p = GatParams { heads: 1, w_self: t(2, 2, &[1.0, 0.0, 0.0, 1.0]), w_nbr: t(2, 2, &[2.0, 1.0, 0.0, 1.0]), attn: t(1, 2, &[0.3, -0.4]) };
        let out = gat_forward_indexed(&[vec![1.0, 2.0]], &[vec![]], &p).unwrap();
        assert_eq!(out[0], vec![4.0, 2.0]);
    }

    #[test]
    fn symmetric_pair_gives_symmetric_outputs() {
        let p = GatParams::<f64>::init(3, 4, 2, &mut rand::rngs::mock::StepRng::new(1, 7));
        let f = vec![0.5, -0.5, 1.0];
        let out = gat_forward_indexed(&[f.clone(), f], &[vec![1], vec![0]], &p).unwrap();
        assert_eq!(out[0], out[1]);
    }

    #[test]
    fn three_node_path_matches_formula() {
        // 2-d features, one head, nodes 0 - 1 - 2.
        let ws = [[0.5, -0.2], [0.1, 0.3]];
        let wn = [[0.4, 0.1], [-0.3, 0.2]];
        let a = [0.7, -0.6];
        let h = [[1.0, 0.0], [0.5, -1.0], [-0.3, 0.8]];
        let nbrs: [&[usize]; 3] = [&[1], &[0, 2], &[1]];
        let mv = |w: &[[f64; 2]; 2], x: &[f64; 2]| [w[0][0] * x[0] + w[0][1] * x[1], w[1][0] * x[0] + w[1][1] * x[1]];
        let mut expected = Vec::new();
        for i in 0..3 {
            let s = mv(&ws, &h[i]);
            let mut js = vec![i];
            js.extend_from_slice(nbrs[i]);
            let logits: Vec<f64> = js
                .iter()
                .map(|&j| {
                    let m = mv(&wn, &h[j]);
                    a[0] * leaky(s[0] + m[0]) + a[1] * leaky(s[1] + m[1])
                })
                .collect();
            let z: f64 = logits.iter().map(|l| l.exp()).sum();
            let mut o = [0.0; 2];
            for (&j, l) in js.iter().zip(&logits) {
                let m = mv(&wn, &h[j]);
                o[0] += l.exp() / z * m[0];
                o[1] += l.exp() / z * m[1];
            }
            expected.push(o);
        }
        let p = GatParams {
            heads: 1,
            w_self: t(2, 2, &[0.5, -0.2, 0.1, 0.3]),
            w_nbr: t(2, 2, &[0.4, 0.1, -0.3, 0.2]),
            attn: t(1, 2, &a),
        };
        let feats: Vec<Vec<f64>> = h.iter().map(|r| r.to_vec()).collect();
        let got = gat_forward_indexed(&feats, &[vec![1], vec![0, 2], vec![1]], &p).unwrap();
        for (g, e) in got.iter().zip(&expected) {
            assert!((g[0] - e[0]).abs() < 1e-12 && (g[1] - e[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn gat_forward_by_id_rejects_unknown_endpoint() {
        let p = GatParams::<f64>::init(2, 2, 1, &mut rand::rngs::mock::StepRng::new(3, 5));
        let mut f = BTreeMap::new();
        f.insert("x".to_string(), vec![1.0, 0.0]);
        let err = gat_forward(&f, &[("x".into(), "y".into())], &p).unwrap_err();
        assert!(err.to_string().contains("`y`"));
    }

    #[test]
    fn gat_dimension_mismatch_is_a_shape_error() {
        let p = GatParams::<f64>::init(3, 2, 1, &mut rand::rngs::mock::StepRng::new(3, 5));
        assert!(matches!(gat_forward_indexed(&[vec![1.0]], &[vec![]], &p), Err(Error::Shape(_))));
    }

    #[test]
    fn mlp_hand_cases() {
        let zero = MlpParams { layers: vec![(Tensor::zeros(2, 3), Tensor::zeros(2, 1))] };
        assert_eq!(mlp_forward(&[1.0, 2.0, 3.0], &zero).unwrap(), vec![0.0, 0.0]);

        let ident = MlpParams { layers: vec![(t(2, 2, &[1.0, 0.0, 0.0, 1.0]), Tensor::zeros(2, 1))] };
        assert_eq!(mlp_forward(&[0.25, 4.0], &ident).unwrap(), vec![0.25, 4.0]);

        // 2-2-1: hidden = [0.5*1 - 1*2 + 0.1, 1*1 + 0.5*2] = [-1.4, 2.0]
        let net = MlpParams {
            layers: vec![
                (t(2, 2, &[0.5, -1.0, 1.0, 0.5]), t(2, 1, &[0.1, 0.0])),
                (t(1, 2, &[2.0, 1.0]), t(1, 1, &[0.3])),
            ],
        };
        let want = 2.0 * (0.21 * -1.4) + 1.0 * 2.0 + 0.3;
        let got = mlp_forward(&[1.0, 2.0], &net).unwrap();
        assert!((got[0] - want).abs() < 1e-12);
    }

    #[test]
    fn mha_hand_cases() {
        let id = t(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let p = MhaParams { heads: 1, wq: id.clone(), wk: id.clone(), wv: t(2, 2, &[2.0, 0.0, 0.0, 1.0]), wo: id };

        let single = mha_forward(&[1.0, 1.0], &[vec![3.0, -1.0]], &p).unwrap();
        assert_eq!(single.vector, vec![6.0, -1.0]);
        assert_eq!(single.weights, vec![vec![1.0]]);

        let twin = mha_forward(&[0.3, 0.9], &[vec![1.0, 2.0], vec![1.0, 2.0]], &p).unwrap();
        assert_eq!(twin.weights, vec![vec![0.5], vec![0.5]]);

        // q = [1, 0]; logits = [1, 0] / sqrt(2)
        let out = mha_forward(&[1.0, 0.0], &[vec![1.0, 0.0], vec![0.0, 1.0]], &p).unwrap();
        let e = (1.0f64 / 2f64.sqrt()).exp();
        let w0 = e / (e + 1.0);
        assert!((out.weights[0][0] - w0).abs() < 1e-12);
        assert!((out.vector[0] - 2.0 * w0).abs() < 1e-12);
        assert!((out.vector[1] - (1.0 - w0)).abs() < 1e-12);
    }

    #[test]
    fn mha_needs_inputs() {
        let p = MhaParams::<f64>::init(2, 2, 2, 2, 1, &mut rand::rngs::mock::StepRng::new(1, 1));
        assert!(mha_forward(&[1.0, 0.0], &[], &p).is_err());
    }
}
