//! Layered flat parameter storage and the exact algebra on it.
//!
//! A [`ParamVector`] is an ordered list of `(layer id, flat f64 array)`
//! pairs. Model weights, updates, gradients, and masks all share one layout
//! within an experiment, so every binary operation first checks that both
//! operands agree layer by layer.

use alloc::format;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};

/// One named layer of flat values.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamLayer {
    pub id: u32,
    pub values: Vec<f64>,
}

/// Layered flat parameter/update storage.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    layers: Vec<ParamLayer>,
}

impl ParamVector {
    pub fn from_layers(layers: Vec<(u32, Vec<f64>)>) -> Self {
        ParamVector {
            layers: layers
                .into_iter()
                .map(|(id, values)| ParamLayer { id, values })
                .collect(),
        }
    }

    /// Single-layer vector with id 0; convenient for plain flat vectors.
    pub fn single(values: Vec<f64>) -> Self {
        Self::from_layers(alloc::vec![(0, values)])
    }

    pub fn zeros_like(&self) -> Self {
        ParamVector {
            layers: self
                .layers
                .iter()
                .map(|l| ParamLayer {
                    id: l.id,
                    values: alloc::vec![0.0; l.values.len()],
                })
                .collect(),
        }
    }

    pub fn layers(&self) -> &[ParamLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [ParamLayer] {
        &mut self.layers
    }

    /// Count of all scalars across layers.
    pub fn total_dim(&self) -> usize {
        self.layers.iter().map(|l| l.values.len()).sum()
    }

    pub fn iter_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers.iter().flat_map(|l| l.values.iter().copied())
    }

    pub fn same_layout(&self, other: &ParamVector) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.id == b.id && a.values.len() == b.values.len())
    }

    pub(crate) fn check_layout(&self, other: &ParamVector, op: &str) -> Result<()> {
        if self.same_layout(other) {
            Ok(())
        } else {
            Err(Error::layout(format!(
                "{op}: operands have different layouts ({} vs {} layers, {} vs {} scalars)",
                self.layers.len(),
                other.layers.len(),
                self.total_dim(),
                other.total_dim()
            )))
        }
    }

    pub fn l2_norm(&self) -> f64 {
        self.iter_values().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.iter_values().all(|v| v.is_finite())
    }

    pub fn add(&self, other: &ParamVector) -> Result<ParamVector> {
        self.zip_map(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &ParamVector) -> Result<ParamVector> {
        self.zip_map(other, "sub", |a, b| a - b)
    }

    pub fn hadamard(&self, other: &ParamVector) -> Result<ParamVector> {
        self.zip_map(other, "hadamard", |a, b| a * b)
    }

    pub fn scale(&self, factor: f64) -> ParamVector {
        ParamVector {
            layers: self
                .layers
                .iter()
                .map(|l| ParamLayer {
                    id: l.id,
                    values: l.values.iter().map(|v| v * factor).collect(),
                })
                .collect(),
        }
    }

    pub fn scale_in_place(&mut self, factor: f64) {
        for layer in &mut self.layers {
            for v in &mut layer.values {
                *v *= factor;
            }
        }
    }

    /// `self += a * other`, the hot-path update step.
    pub fn axpy_in_place(&mut self, a: f64, other: &ParamVector) -> Result<()> {
        self.check_layout(other, "axpy")?;
        for (dst, src) in self.layers.iter_mut().zip(&other.layers) {
            for (d, s) in dst.values.iter_mut().zip(&src.values) {
                *d += a * s;
            }
        }
        Ok(())
    }

    pub fn add_in_place(&mut self, other: &ParamVector) -> Result<()> {
        self.check_layout(other, "add")?;
        for (dst, src) in self.layers.iter_mut().zip(&other.layers) {
            for (d, s) in dst.values.iter_mut().zip(&src.values) {
                *d += s;
            }
        }
        Ok(())
    }

    fn zip_map(
        &self,
        other: &ParamVector,
        op: &str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<ParamVector> {
        self.check_layout(other, op)?;
        Ok(ParamVector {
            layers: self
                .layers
                .iter()
                .zip(&other.layers)
                .map(|(a, b)| ParamLayer {
                    id: a.id,
                    values: a
                        .values
                        .iter()
                        .zip(&b.values)
                        .map(|(&x, &y)| f(x, y))
                        .collect(),
                })
                .collect(),
        })
    }
}
