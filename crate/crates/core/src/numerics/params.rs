//! Named, ordered parameter collections.

use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;

/// Stable handle to one tensor in a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered set of named parameter tensors.
///
/// Order is fixed at construction; optimizers, checkpoints and gradient
/// buffers all index by the same positions.
#[derive(Debug, Clone)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        let id = ParamId(self.tensors.len());
        self.names.push(name.into());
        self.tensors.push(tensor.with_grad());
        id
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn tensor(&self, i: usize) -> &Tensor {
        &self.tensors[i]
    }

    pub fn tensor_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.tensors[i]
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(|s| s.as_str()).zip(self.tensors.iter())
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Total number of scalar coordinates.
    pub fn total_coords(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn assert_finite(&self) -> Result<()> {
        for (name, t) in self.iter() {
            t.assert_finite(name)?;
        }
        Ok(())
    }

    /// Overwrite a tensor by name, checking the shape.
    pub fn set_by_name(&mut self, name: &str, tensor: Tensor) -> Result<()> {
        let i = self
            .position(name)
            .ok_or_else(|| Error::Config(format!("unknown parameter `{name}`")))?;
        if self.tensors[i].shape() != tensor.shape() {
            return Err(Error::ShapeMismatch {
                op: "set_by_name",
                lhs: self.tensors[i].shape().to_vec(),
                rhs: tensor.shape().to_vec(),
            });
        }
        self.tensors[i] = tensor.with_grad();
        Ok(())
    }
}

impl Default for ParamSet {
    fn default() -> Self {
        Self::new()
    }
}
