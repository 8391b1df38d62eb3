use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::matrix::DenseMatrix;
use super::tape::{Gradients, Tape, Var};
use crate::error::{Error, Result};

/// A trainable tensor with its gradient buffer.
///
/// `frozen_rows` excludes a leading block of rows from optimizer updates
/// while leaving the rest trainable; embedding tables use it to keep
/// pre-existing rows fixed while newly onboarded rows learn.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamTensor {
    pub name: String,
    pub value: DenseMatrix,
    pub grad: DenseMatrix,
    pub trainable: bool,
    pub frozen_rows: usize,
}

impl ParamTensor {
    pub fn new(name: impl Into<String>, value: DenseMatrix) -> Self {
        let grad = DenseMatrix::zeros(value.rows(), value.cols());
        Self {
            name: name.into(),
            value,
            grad,
            trainable: true,
            frozen_rows: 0,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value.shape()
    }

    pub fn zero_grad(&mut self) {
        self.grad = DenseMatrix::zeros(self.value.rows(), self.value.cols());
    }

    /// Number of scalars an optimizer step may change.
    pub fn updatable_len(&self) -> usize {
        if !self.trainable {
            return 0;
        }
        self.value.rows().saturating_sub(self.frozen_rows) * self.value.cols()
    }

    /// Replaces the value (e.g. after appending rows) and resizes the gradient.
    pub fn set_value(&mut self, value: DenseMatrix) {
        self.value = value;
        self.zero_grad();
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// Ordered collection of every parameter of a model.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    tensors: Vec<ParamTensor>,
}

/// Tape handles for every tensor of a [`ParamSet`], indexed by [`ParamId`].
#[derive(Clone, Debug)]
pub struct BoundParams {
    vars: Vec<Var>,
}

impl BoundParams {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }
}

impl std::ops::Index<ParamId> for BoundParams {
    type Output = Var;

    fn index(&self, id: ParamId) -> &Var {
        &self.vars[id.0]
    }
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, tensor: ParamTensor) -> ParamId {
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &ParamTensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut ParamTensor {
        &mut self.tensors[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = &ParamTensor> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut ParamTensor> {
        self.tensors.iter_mut()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.tensors.iter().position(|t| t.name == name).map(ParamId)
    }

    /// Registers every tensor on the tape. Trainable tensors become
    /// gradient-tracking leaves; the rest are constants.
    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        BoundParams {
            vars: self.tensors.iter().map(|t| tape.param(t)).collect(),
        }
    }

    /// Registers every tensor as a constant; nothing tracks gradients.
    pub fn bind_constant(&self, tape: &mut Tape) -> BoundParams {
        BoundParams {
            vars: self.tensors.iter().map(|t| tape.constant(t.value.clone())).collect(),
        }
    }

    /// Overwrites each trainable tensor's `grad` with the tape gradient.
    pub fn absorb(&mut self, bound: &BoundParams, grads: &Gradients) {
        for (tensor, &var) in self.tensors.iter_mut().zip(&bound.vars) {
            tensor.zero_grad();
            if !tensor.trainable {
                continue;
            }
            if let Some(g) = grads.get(var) {
                tensor.grad = g.clone();
            }
        }
    }

    pub fn zero_grads(&mut self) {
        self.tensors.iter_mut().for_each(ParamTensor::zero_grad);
    }

    /// SHA-256 over names, shapes and raw values of the selected tensors,
    /// restricted to their first `rows` rows when given.
    pub fn digest(&self, selection: impl IntoIterator<Item = (ParamId, Option<usize>)>) -> String {
        let mut hasher = Sha256::new();
        for (id, rows) in selection {
            let t = self.get(id);
            let rows = rows.unwrap_or(t.value.rows()).min(t.value.rows());
            hasher.update(t.name.as_bytes());
            hasher.update((rows as u64).to_le_bytes());
            hasher.update((t.value.cols() as u64).to_le_bytes());
            for v in &t.value.as_slice()[..rows * t.value.cols()] {
                hasher.update(v.to_le_bytes());
            }
        }
        hex::encode(hasher.finalize())
    }

    pub(crate) fn check_same_layout(&self, other: &ParamSet) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::Contract(format!(
                "parameter count mismatch: {} vs {}",
                self.len(),
                other.len()
            )));
        }
        for (a, b) in self.iter().zip(other.iter()) {
            if a.name != b.name || a.shape() != b.shape() {
                return Err(Error::Contract(format!(
                    "parameter {}{:?} does not match {}{:?}",
                    a.name,
                    a.shape(),
                    b.name,
                    b.shape()
                )));
            }
        }
        Ok(())
    }
}
