//! Adam with bias correction.
//!
//! Moment buffers start at zero. A tensor whose updatable gradient is
//! identically zero is skipped for that step: its value, its moments and its
//! own step count stay as they are, while the global step counter still
//! advances. Bias correction uses the per-tensor count, so a tensor that
//! starts receiving gradient late is corrected as if it were fresh.

use serde::{Deserialize, Serialize};

use super::matrix::DenseMatrix;
use super::param::ParamSet;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub m: DenseMatrix,
    pub v: DenseMatrix,
    pub steps: u64,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct AdamState {
    pub step: u64,
    pub moments: Vec<Moments>,
}

impl AdamState {
    /// Zeroed moments shaped like every tensor of `params`.
    pub fn new(params: &ParamSet) -> Self {
        Self {
            step: 0,
            moments: params
                .iter()
                .map(|p| Moments {
                    m: DenseMatrix::zeros(p.value.rows(), p.value.cols()),
                    v: DenseMatrix::zeros(p.value.rows(), p.value.cols()),
                    steps: 0,
                })
                .collect(),
        }
    }
}

/// One Adam update of every trainable tensor from its `grad` buffer.
pub fn adam_step(params: &mut ParamSet, state: &mut AdamState, hyper: &AdamConfig) -> Result<()> {
    if state.moments.len() != params.len() {
        return Err(Error::State(format!(
            "{} moment buffers for {} parameters",
            state.moments.len(),
            params.len()
        )));
    }
    for (p, mo) in params.iter().zip(&state.moments) {
        if mo.m.shape() != p.value.shape() || mo.v.shape() != p.value.shape() {
            return Err(Error::State(format!(
                "moment shape {:?} does not match parameter {} {:?}",
                mo.m.shape(),
                p.name,
                p.value.shape()
            )));
        }
        if p.grad.shape() != p.value.shape() {
            return Err(Error::State(format!("gradient shape mismatch for {}", p.name)));
        }
    }
    state.step += 1;
    for (p, mo) in params.iter_mut().zip(state.moments.iter_mut()) {
        if !p.trainable {
            continue;
        }
        let cols = p.value.cols();
        let start = p.frozen_rows.min(p.value.rows()) * cols;
        let grad = &p.grad.as_slice()[start..];
        if grad.iter().all(|&g| g == 0.0) {
            continue;
        }
        mo.steps += 1;
        let t = mo.steps as i32;
        let bc1 = 1.0 - hyper.beta1.powi(t);
        let bc2 = 1.0 - hyper.beta2.powi(t);
        let m = &mut mo.m.as_mut_slice()[start..];
        let v = &mut mo.v.as_mut_slice()[start..];
        let value = &mut p.value.as_mut_slice()[start..];
        for k in 0..grad.len() {
            let g = grad[k];
            m[k] = hyper.beta1 * m[k] + (1.0 - hyper.beta1) * g;
            v[k] = hyper.beta2 * v[k] + (1.0 - hyper.beta2) * g * g;
            let m_hat = m[k] / bc1;
            let v_hat = v[k] / bc2;
            value[k] -= hyper.lr * m_hat / (v_hat.sqrt() + hyper.eps);
        }
    }
    Ok(())
}
