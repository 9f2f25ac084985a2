//! Reverse-mode differentiation over vector-valued nodes.
//!
//! Every forward computation is recorded on a [`Tape`] as a flat list of
//! nodes. Values are dense row-major buffers; vectors are `n x 1`. Calling
//! [`Tape::backward`] on a scalar node propagates adjoints back through the
//! recorded ops in reverse insertion order.
//!
//! Ops assert on shape mismatches: shapes are checked once at the layer
//! boundary (see `layers`), so a failure here is a bug, not bad input.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op<S> {
    Leaf,
    MatVec { w: Var, x: Var },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddConst(Var),
    ScaleConst(Var, S),
    Concat(Vec<Var>),
    Slice { x: Var, start: usize },
    Gather { x: Var, indices: Vec<usize> },
    Dot(Var, Var),
    Sum(Var),
    SumN(Vec<Var>),
    LeakyRelu(Var, S),
    Ln(Var),
    Exp(Var),
    Softmax(Var),
    LogSoftmax(Var),
    SegmentSum { x: Var, segments: usize },
    SoftmaxColumns { x: Var, cols: usize },
    HeadWeightedSum { alpha: Var, values: Vec<Var>, heads: usize },
}

#[derive(Debug, Clone)]
struct Node<S> {
    value: Vec<S>,
    rows: usize,
    cols: usize,
    op: Op<S>,
}

#[derive(Debug, Clone, Default)]
pub struct Tape<S> {
    nodes: Vec<Node<S>>,
}

fn softmax_in_place<S: Scalar>(xs: &mut [S]) {
    let max = xs.iter().copied().fold(S::neg_infinity(), S::max);
    let mut total = S::zero();
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        total = total + *x;
    }
    for x in xs.iter_mut() {
        *x = *x / total;
    }
}

pub(crate) fn log_sum_exp<S: Scalar>(xs: &[S]) -> S {
    let max = xs.iter().copied().fold(S::neg_infinity(), S::max);
    if max == S::neg_infinity() {
        return max;
    }
    let total: S = xs.iter().map(|&x| (x - max).exp()).sum();
    max + total.ln()
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Vec<S>, rows: usize, cols: usize, op: Op<S>) -> Var {
        debug_assert_eq!(value.len(), rows * cols);
        self.nodes.push(Node { value, rows, cols, op });
        Var(self.nodes.len() - 1)
    }

    /// A leaf holding a `rows x cols` row-major matrix.
    pub fn matrix(&mut self, value: Vec<S>, rows: usize, cols: usize) -> Var {
        assert_eq!(value.len(), rows * cols, "matrix buffer does not match shape");
        self.push(value, rows, cols, Op::Leaf)
    }

    pub fn vector(&mut self, value: Vec<S>) -> Var {
        let n = value.len();
        self.push(value, n, 1, Op::Leaf)
    }

    pub fn scalar(&mut self, value: S) -> Var {
        self.push(vec![value], 1, 1, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &[S] {
        &self.nodes[v.0].value
    }

    pub fn scalar_value(&self, v: Var) -> S {
        let node = &self.nodes[v.0];
        assert_eq!(node.value.len(), 1, "not a scalar");
        node.value[0]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    pub fn len_of(&self, v: Var) -> usize {
        self.nodes[v.0].value.len()
    }

    pub fn matvec(&mut self, w: Var, x: Var) -> Var {
        let (rows, cols) = self.shape(w);
        assert_eq!(self.len_of(x), cols, "matvec: matrix has {cols} columns, vector {}", self.len_of(x));
        let wv = &self.nodes[w.0].value;
        let xv = &self.nodes[x.0].value;
        let out: Vec<S> = (0..rows)
            .map(|r| {
                let row = &wv[r * cols..(r + 1) * cols];
                row.iter().zip(xv).fold(S::zero(), |acc, (&a, &b)| acc + a * b)
            })
            .collect();
        self.push(out, rows, 1, Op::MatVec { w, x })
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(S, S) -> S, op: Op<S>) -> Var {
        assert_eq!(self.len_of(a), self.len_of(b), "elementwise op on different lengths");
        let out: Vec<S> = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(&x, &y)| f(x, y))
            .collect();
        let (rows, cols) = self.shape(a);
        self.push(out, rows, cols, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn add_const(&mut self, x: Var, c: S) -> Var {
        let out = self.nodes[x.0].value.iter().map(|&v| v + c).collect();
        let (rows, cols) = self.shape(x);
        self.push(out, rows, cols, Op::AddConst(x))
    }

    pub fn scale(&mut self, x: Var, c: S) -> Var {
        let out = self.nodes[x.0].value.iter().map(|&v| v * c).collect();
        let (rows, cols) = self.shape(x);
        self.push(out, rows, cols, Op::ScaleConst(x, c))
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.scale(x, -S::one())
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let mut out = Vec::new();
        for p in parts {
            out.extend_from_slice(&self.nodes[p.0].value);
        }
        let n = out.len();
        self.push(out, n, 1, Op::Concat(parts.to_vec()))
    }

    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Var {
        let out = self.nodes[x.0].value[start..start + len].to_vec();
        self.push(out, len, 1, Op::Slice { x, start })
    }

    pub fn index(&mut self, x: Var, i: usize) -> Var {
        self.slice(x, i, 1)
    }

    pub fn gather(&mut self, x: Var, indices: &[usize]) -> Var {
        let xv = &self.nodes[x.0].value;
        let out: Vec<S> = indices.iter().map(|&i| xv[i]).collect();
        let n = out.len();
        self.push(out, n, 1, Op::Gather { x, indices: indices.to_vec() })
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.len_of(a), self.len_of(b), "dot of different lengths");
        let v = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .fold(S::zero(), |acc, (&x, &y)| acc + x * y);
        self.push(vec![v], 1, 1, Op::Dot(a, b))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let v = self.nodes[x.0].value.iter().copied().sum();
        self.push(vec![v], 1, 1, Op::Sum(x))
    }

    /// Elementwise sum of equally sized nodes.
    pub fn sum_n(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "sum_n of nothing");
        let (rows, cols) = self.shape(parts[0]);
        let mut out = vec![S::zero(); rows * cols];
        for p in parts {
            let v = &self.nodes[p.0].value;
            assert_eq!(v.len(), out.len(), "sum_n of different lengths");
            for (o, &x) in out.iter_mut().zip(v) {
                *o = *o + x;
            }
        }
        self.push(out, rows, cols, Op::SumN(parts.to_vec()))
    }

    pub fn mean_n(&mut self, parts: &[Var]) -> Var {
        let s = self.sum_n(parts);
        self.scale(s, S::one() / S::of(parts.len() as f64))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: S) -> Var {
        let out = self.nodes[x.0]
            .value
            .iter()
            .map(|&v| if v > S::zero() { v } else { v * slope })
            .collect();
        let (rows, cols) = self.shape(x);
        self.push(out, rows, cols, Op::LeakyRelu(x, slope))
    }

    pub fn ln(&mut self, x: Var) -> Var {
        let out = self.nodes[x.0].value.iter().map(|v| v.ln()).collect();
        let (rows, cols) = self.shape(x);
        self.push(out, rows, cols, Op::Ln(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let out = self.nodes[x.0].value.iter().map(|v| v.exp()).collect();
        let (rows, cols) = self.shape(x);
        self.push(out, rows, cols, Op::Exp(x))
    }

    pub fn softmax(&mut self, x: Var) -> Var {
        let mut out = self.nodes[x.0].value.clone();
        softmax_in_place(&mut out);
        let n = out.len();
        self.push(out, n, 1, Op::Softmax(x))
    }

    pub fn log_softmax(&mut self, x: Var) -> Var {
        let xv = &self.nodes[x.0].value;
        let lse = log_sum_exp(xv);
        let out: Vec<S> = xv.iter().map(|&v| v - lse).collect();
        let n = out.len();
        self.push(out, n, 1, Op::LogSoftmax(x))
    }

    /// Sums each of `segments` equal contiguous blocks of `x`.
    pub fn segment_sum(&mut self, x: Var, segments: usize) -> Var {
        let xv = &self.nodes[x.0].value;
        assert!(segments > 0 && xv.len() % segments == 0, "segment_sum: {} not divisible by {segments}", xv.len());
        let width = xv.len() / segments;
        let out: Vec<S> = xv.chunks(width).map(|c| c.iter().copied().sum()).collect();
        self.push(out, segments, 1, Op::SegmentSum { x, segments })
    }

    /// Treats `x` as a row-major `rows x cols` matrix and normalizes each
    /// column with a softmax over its rows.
    pub fn softmax_columns(&mut self, x: Var, cols: usize) -> Var {
        let mut out = self.nodes[x.0].value.clone();
        assert!(cols > 0 && out.len() % cols == 0, "softmax_columns: bad column count");
        let rows = out.len() / cols;
        let mut column = vec![S::zero(); rows];
        for c in 0..cols {
            for r in 0..rows {
                column[r] = out[r * cols + c];
            }
            softmax_in_place(&mut column);
            for r in 0..rows {
                out[r * cols + c] = column[r];
            }
        }
        self.push(out, rows, cols, Op::SoftmaxColumns { x, cols })
    }

    /// Per-head convex combination. `alpha` is `k x heads`; each value is
    /// `heads` contiguous blocks, and block `h` of the output is
    /// `sum_i alpha[i, h] * values[i][block h]`.
    pub fn head_weighted_sum(&mut self, alpha: Var, values: &[Var], heads: usize) -> Var {
        let av = &self.nodes[alpha.0].value;
        assert_eq!(av.len(), values.len() * heads, "head_weighted_sum: alpha shape");
        let len = self.len_of(values[0]);
        assert!(len % heads == 0, "head_weighted_sum: value length not divisible by heads");
        let width = len / heads;
        let mut out = vec![S::zero(); len];
        for (i, v) in values.iter().enumerate() {
            let vv = &self.nodes[v.0].value;
            assert_eq!(vv.len(), len, "head_weighted_sum: ragged values");
            for h in 0..heads {
                let a = av[i * heads + h];
                for d in h * width..(h + 1) * width {
                    out[d] = out[d] + a * vv[d];
                }
            }
        }
        self.push(out, len, 1, Op::HeadWeightedSum { alpha, values: values.to_vec(), heads })
    }

    /// Adjoints of `loss` with respect to every node recorded before it.
    pub fn backward(&self, loss: Var) -> Result<TapeGrads<S>> {
        if self.len_of(loss) != 1 {
            return Err(Error::shape(format!(
                "backward needs a scalar loss, got {} elements",
                self.len_of(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<S>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![S::one()]);

        fn acc<S: Scalar>(grads: &mut [Option<Vec<S>>], v: Var, len: usize) -> &mut Vec<S> {
            grads[v.0].get_or_insert_with(|| vec![S::zero(); len])
        }

        for idx in (0..=loss.0).rev() {
            let Some(gy) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let val = |v: Var| &self.nodes[v.0].value;
            match &node.op {
                Op::Leaf => {}
                Op::MatVec { w, x } => {
                    let (rows, cols) = self.shape(*w);
                    let wv = val(*w);
                    let xv = val(*x);
                    {
                        let gw = acc(&mut grads, *w, rows * cols);
                        for r in 0..rows {
                            if gy[r] == S::zero() {
                                continue;
                            }
                            for c in 0..cols {
                                gw[r * cols + c] = gw[r * cols + c] + gy[r] * xv[c];
                            }
                        }
                    }
                    let gx = acc(&mut grads, *x, cols);
                    for r in 0..rows {
                        if gy[r] == S::zero() {
                            continue;
                        }
                        for c in 0..cols {
                            gx[c] = gx[c] + wv[r * cols + c] * gy[r];
                        }
                    }
                }
                Op::Add(a, b) => {
                    for v in [*a, *b] {
                        let g = acc(&mut grads, v, gy.len());
                        g.iter_mut().zip(&gy).for_each(|(g, &d)| *g = *g + d);
                    }
                }
                Op::Sub(a, b) => {
                    let g = acc(&mut grads, *a, gy.len());
                    g.iter_mut().zip(&gy).for_each(|(g, &d)| *g = *g + d);
                    let g = acc(&mut grads, *b, gy.len());
                    g.iter_mut().zip(&gy).for_each(|(g, &d)| *g = *g - d);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (val(*a), val(*b));
                    let g = acc(&mut grads, *a, gy.len());
                    for i in 0..gy.len() {
                        g[i] = g[i] + gy[i] * bv[i];
                    }
                    let g = acc(&mut grads, *b, gy.len());
                    for i in 0..gy.len() {
                        g[i] = g[i] + gy[i] * av[i];
                    }
                }
                Op::AddConst(x) => {
                    let g = acc(&mut grads, *x, gy.len());
                    g.iter_mut().zip(&gy).for_each(|(g, &d)| *g = *g + d);
                }
                Op::ScaleConst(x, c) => {
                    let g = acc(&mut grads, *x, gy.len());
                    g.iter_mut().zip(&gy).for_each(|(g, &d)| *g = *g + *c * d);
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let n = self.len_of(*p);
                        let g = acc(&mut grads, *p, n);
                        for i in 0..n {
                            g[i] = g[i] + gy[offset + i];
                        }
                        offset += n;
                    }
                }
                Op::Slice { x, start } => {
                    let n = self.len_of(*x);
                    let g = acc(&mut grads, *x, n);
                    for (i, &d) in gy.iter().enumerate() {
                        g[start + i] = g[start + i] + d;
                    }
                }
                Op::Gather { x, indices } => {
                    let n = self.len_of(*x);
                    let g = acc(&mut grads, *x, n);
                    for (&i, &d) in indices.iter().zip(&gy) {
                        g[i] = g[i] + d;
                    }
                }
                Op::Dot(a, b) => {
                    let (av, bv) = (val(*a), val(*b));
                    let d = gy[0];
                    let g = acc(&mut grads, *a, av.len());
                    for i in 0..av.len() {
                        g[i] = g[i] + d * bv[i];
                    }
                    let g = acc(&mut grads, *b, bv.len());
                    for i in 0..bv.len() {
                        g[i] = g[i] + d * av[i];
                    }
                }
                Op::Sum(x) => {
                    let n = self.len_of(*x);
                    let g = acc(&mut grads, *x, n);
                    g.iter_mut().for_each(|g| *g = *g + gy[0]);
                }
                Op::SumN(parts) => {
                    for p in parts {
                        let g = acc(&mut grads, *p, gy.len());
                        g.iter_mut().zip(&gy).for_each(|(g, &d)| *g = *g + d);
                    }
                }
                Op::LeakyRelu(x, slope) => {
                    let xv = val(*x);
                    let g = acc(&mut grads, *x, gy.len());
                    for i in 0..gy.len() {
                        let k = if xv[i] > S::zero() { S::one() } else { *slope };
                        g[i] = g[i] + gy[i] * k;
                    }
                }
                Op::Ln(x) => {
                    let xv = val(*x);
                    let g = acc(&mut grads, *x, gy.len());
                    for i in 0..gy.len() {
                        g[i] = g[i] + gy[i] / xv[i];
                    }
                }
                Op::Exp(x) => {
                    let y = &node.value;
                    let g = acc(&mut grads, *x, gy.len());
                    for i in 0..gy.len() {
                        g[i] = g[i] + gy[i] * y[i];
                    }
                }
                Op::Softmax(x) => {
                    let y = &node.value;
                    let inner: S = gy.iter().zip(y).map(|(&d, &p)| d * p).sum();
                    let g = acc(&mut grads, *x, gy.len());
                    for i in 0..gy.len() {
                        g[i] = g[i] + y[i] * (gy[i] - inner);
                    }
                }
                Op::LogSoftmax(x) => {
                    let y = &node.value;
                    let total: S = gy.iter().copied().sum();
                    let g = acc(&mut grads, *x, gy.len());
                    for i in 0..gy.len() {
                        g[i] = g[i] + gy[i] - y[i].exp() * total;
                    }
                }
                Op::SegmentSum { x, segments } => {
                    let n = self.len_of(*x);
                    let width = n / segments;
                    let g = acc(&mut grads, *x, n);
                    for i in 0..n {
                        g[i] = g[i] + gy[i / width];
                    }
                }
                Op::SoftmaxColumns { x, cols } => {
                    let y = &node.value;
                    let rows = y.len() / cols;
                    let g = acc(&mut grads, *x, y.len());
                    for c in 0..*cols {
                        let inner: S = (0..rows).map(|r| gy[r * cols + c] * y[r * cols + c]).sum();
                        for r in 0..rows {
                            let i = r * cols + c;
                            g[i] = g[i] + y[i] * (gy[i] - inner);
                        }
                    }
                }
                Op::HeadWeightedSum { alpha, values, heads } => {
                    let av = val(*alpha);
                    let width = gy.len() / heads;
                    {
                        let ga = acc(&mut grads, *alpha, av.len());
                        for (i, v) in values.iter().enumerate() {
                            let vv = &self.nodes[v.0].value;
                            for h in 0..*heads {
                                let mut s = S::zero();
                                for d in h * width..(h + 1) * width {
                                    s = s + gy[d] * vv[d];
                                }
                                ga[i * heads + h] = ga[i * heads + h] + s;
                            }
                        }
                    }
                    for (i, v) in values.iter().enumerate() {
                        let gv = acc(&mut grads, *v, gy.len());
                        for h in 0..*heads {
                            let a = av[i * heads + h];
                            for d in h * width..(h + 1) * width {
                                gv[d] = gv[d] + a * gy[d];
                            }
                        }
                    }
                }
            }
            grads[idx] = Some(gy);
        }
        Ok(TapeGrads { grads })
    }
}

#[derive(Debug, Clone)]
pub struct TapeGrads<S> {
    grads: Vec<Option<Vec<S>>>,
}

impl<S: Scalar> TapeGrads<S> {
    /// Adjoint of `v`, or `None` when the loss does not depend on it.
    pub fn get(&self, v: Var) -> Option<&[S]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Adjoint of `v`, zero-filled when the loss does not depend on it.
    pub fn wrt(&self, v: Var, len: usize) -> Vec<S> {
        self.get(v).map_or_else(|| vec![S::zero(); len], <[S]>::to_vec)
    }
}
