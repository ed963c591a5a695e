use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorInfo {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.numel()
    }
}

/// Named dense tensors packed into one flat buffer.
///
/// Shapes are fixed once a tensor is registered; gradients and optimizer
/// moments use buffers of the same length and layout.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    infos: Vec<TensorInfo>,
    values: Vec<f64>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a tensor filled by `init`; returns its offset.
    pub fn add(&mut self, name: impl Into<String>, shape: &[usize], mut init: impl FnMut() -> f64) -> Result<usize> {
        let name = name.into();
        if self.infos.iter().any(|t| t.name == name) {
            return Err(Error::invalid(format!("duplicate parameter name {name}")));
        }
        let offset = self.values.len();
        let info = TensorInfo {
            name,
            shape: shape.to_vec(),
            offset,
        };
        self.values.extend((0..info.numel()).map(|_| init()));
        self.infos.push(info);
        Ok(offset)
    }

    /// Uniform fan-in initialisation, bound `1/sqrt(fan_in)`.
    pub fn add_uniform<R: Rng>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        rng: &mut R,
    ) -> Result<usize> {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        self.add(name, shape, || rng.random_range(-bound..bound))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn infos(&self) -> &[TensorInfo] {
        &self.infos
    }

    pub fn info(&self, name: &str) -> Option<&TensorInfo> {
        self.infos.iter().find(|t| t.name == name)
    }

    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        self.info(name).map(|t| &self.values[t.range()])
    }

    pub fn zeros_like(&self) -> Vec<f64> {
        vec![0.0; self.values.len()]
    }

    /// Overwrites values from another store with an identical layout.
    pub fn copy_from(&mut self, other: &ParamStore) -> Result<()> {
        if self.infos != other.infos {
            return Err(Error::Shape("parameter layouts differ".into()));
        }
        self.values.copy_from_slice(&other.values);
        Ok(())
    }

    /// Replaces one tensor's values, checking its shape.
    pub fn set_tensor(&mut self, name: &str, shape: &[usize], data: &[f64]) -> Result<()> {
        let info = self
            .info(name)
            .ok_or_else(|| Error::Checkpoint(format!("unknown tensor {name}")))?
            .clone();
        if info.shape != shape {
            return Err(Error::Shape(format!(
                "tensor {name}: expected shape {:?}, got {:?}",
                info.shape, shape
            )));
        }
        self.values[info.range()].copy_from_slice(data);
        Ok(())
    }
}
