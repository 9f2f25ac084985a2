//! Central finite-difference checks of tape gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::nn::params::{Gradients, ModelParams, ModelVars};
use crate::nn::tape::{Tape, Var};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    pub eps: f64,
    /// Fraction of coordinates to probe.
    pub fraction: f64,
    /// Lower bound on the number of probed coordinates.
    pub min_coords: usize,
    /// Denominator floor so near-zero gradients are judged absolutely.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions { eps: 1e-4, fraction: 0.05, min_coords: 32, floor: 1e-4, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// `(coordinate, analytic, numeric)` at the worst coordinate.
    pub worst: Option<(usize, f64, f64)>,
    pub checked: usize,
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(floor);
    (analytic - numeric).abs() / denom
}

fn probe_coords(n: usize, opts: &GradCheckOptions) -> Vec<usize> {
    let want = ((n as f64 * opts.fraction).ceil() as usize).max(opts.min_coords).min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut idx = sample(&mut rng, n, want).into_vec();
    idx.sort_unstable();
    idx
}

/// Compares `analytic` against central differences of `f` around `x` on a
/// seeded coordinate sample.
pub fn check_gradient(
    x: &[f64],
    analytic: &[f64],
    mut f: impl FnMut(&[f64]) -> Result<f64>,
    opts: &GradCheckOptions,
) -> Result<GradCheck> {
    assert_eq!(x.len(), analytic.len(), "gradient length differs from point");
    let mut report = GradCheck { max_rel_error: 0.0, worst: None, checked: 0 };
    let mut probe = x.to_vec();
    for i in probe_coords(x.len(), opts) {
        probe[i] = x[i] + opts.eps;
        let up = f(&probe)?;
        probe[i] = x[i] - opts.eps;
        let down = f(&probe)?;
        probe[i] = x[i];
        let numeric = (up - down) / (2.0 * opts.eps);
        let err = relative_error(analytic[i], numeric, opts.floor);
        report.checked += 1;
        if report.worst.is_none() || err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst = Some((i, analytic[i], numeric));
        }
    }
    Ok(report)
}

/// Builds the loss on a fresh tape with `params` bound and returns its value
/// and gradients.
pub fn value_and_grad<S, F>(params: &ModelParams<S>, loss: &F) -> Result<(S, Gradients<S>)>
where
    S: Scalar,
    F: Fn(&mut Tape<S>, &ModelVars) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape);
    let l = loss(&mut tape, &vars)?;
    let grads = tape.backward(l)?;
    Ok((tape.scalar_value(l), params.gradients(&vars, &grads)))
}

pub fn loss_value<S, F>(params: &ModelParams<S>, loss: &F) -> Result<S>
where
    S: Scalar,
    F: Fn(&mut Tape<S>, &ModelVars) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape);
    let l = loss(&mut tape, &vars)?;
    Ok(tape.scalar_value(l))
}

fn flatten<S: Scalar>(params: &ModelParams<S>) -> Vec<f64> {
    params.tensors().iter().flat_map(|t| t.data.iter().map(|v| v.to_f64_lossy())).collect()
}

fn unflatten<S: Scalar>(params: &mut ModelParams<S>, flat: &[f64]) {
    let mut it = flat.iter();
    for t in params.tensors_mut() {
        for v in &mut t.data {
            *v = S::of(*it.next().expect("flat parameter vector too short"));
        }
    }
}

/// Checks the tape gradient of `loss` w.r.t. every parameter tensor.
pub fn grad_check<S, F>(params: &ModelParams<S>, loss: F, opts: &GradCheckOptions) -> Result<GradCheck>
where
    S: Scalar,
    F: Fn(&mut Tape<S>, &ModelVars) -> Result<Var>,
{
    let (_, grads) = value_and_grad(params, &loss)?;
    let analytic: Vec<f64> = grads.flat().into_iter().map(|v| v.to_f64_lossy()).collect();
    grad_check_against(params, &analytic, loss, opts)
}

/// Like [`grad_check`] but with a caller-supplied analytic gradient.
pub fn grad_check_against<S, F>(
    params: &ModelParams<S>,
    analytic: &[f64],
    loss: F,
    opts: &GradCheckOptions,
) -> Result<GradCheck>
where
    S: Scalar,
    F: Fn(&mut Tape<S>, &ModelVars) -> Result<Var>,
{
    let x = flatten(params);
    let mut work = params.clone();
    check_gradient(
        &x,
        analytic,
        |p| {
            unflatten(&mut work, p);
            Ok(loss_value(&work, &loss)?.to_f64_lossy())
        },
        opts,
    )
}
