//! Loss/gradient evaluation and a central finite-difference checker.
//!
//! The checker only re-evaluates the loss on perturbed copies of the
//! parameters; it never looks at the tape's adjoints, so it stays an
//! independent check of [`grad_eval`].

use super::matrix::DenseMatrix;
use super::param::{BoundParams, ParamId, ParamSet};
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// Evaluates the scalar built by `build` and stores its gradient in the
/// `grad` buffer of every trainable tensor (zero for the others).
pub fn grad_eval<F>(params: &mut ParamSet, build: F) -> Result<f64>
where
    F: FnOnce(&mut Tape, &BoundParams) -> Result<Var>,
{
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let loss = build(&mut tape, &bound)?;
    let value = tape
        .value(loss)
        .to_scalar()
        .ok_or_else(|| Error::Contract(format!("loss must be scalar, got {:?}", tape.shape(loss))))?;
    let grads = tape.backward(loss)?;
    params.absorb(&bound, &grads);
    Ok(value)
}

/// Central differences of `loss` with respect to every entry of tensor `id`.
pub fn finite_difference<F>(params: &ParamSet, id: ParamId, step: f64, mut loss: F) -> Result<DenseMatrix>
where
    F: FnMut(&ParamSet) -> Result<f64>,
{
    let mut probe = params.clone();
    let (rows, cols) = params.get(id).shape();
    let mut out = DenseMatrix::zeros(rows, cols);
    for k in 0..rows * cols {
        let original = params.get(id).value.as_slice()[k];
        probe.get_mut(id).value.as_mut_slice()[k] = original + step;
        let up = loss(&probe)?;
        probe.get_mut(id).value.as_mut_slice()[k] = original - step;
        let down = loss(&probe)?;
        probe.get_mut(id).value.as_mut_slice()[k] = original;
        out.as_mut_slice()[k] = (up - down) / (2.0 * step);
    }
    Ok(out)
}

/// Relative error `|a − b| / max(|a|, |b|, 1e-6)`; the floor keeps
/// entries that are zero up to rounding from dominating the comparison.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Largest per-entry relative error between two gradients.
pub fn max_relative_error(analytic: &DenseMatrix, numeric: &DenseMatrix) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape());
    analytic
        .as_slice()
        .iter()
        .zip(numeric.as_slice())
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max)
}
