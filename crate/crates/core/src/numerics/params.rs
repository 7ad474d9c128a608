use crate::error::{Error, Result};

/// Anything that exposes its trainable parameters as a fixed list of flat tensors.
///
/// The order of [`tensors`](Params::tensors), [`tensors_mut`](Params::tensors_mut)
/// and [`tensor_specs`](Params::tensor_specs) must agree.
pub trait Params {
    fn tensors(&self) -> Vec<&[f64]>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;
    /// `(name, shape)` per tensor.
    fn tensor_specs(&self) -> Vec<(String, Vec<usize>)>;

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Concatenation of every tensor.
    fn flatten(&self) -> Vec<f64> {
        self.tensors().concat()
    }

    /// Overwrites every tensor from a flat vector produced by [`flatten`](Params::flatten).
    fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        let n = self.num_params();
        if flat.len() != n {
            return Err(Error::dim("Params::assign_flat", n, flat.len()));
        }
        let mut off = 0;
        for t in self.tensors_mut() {
            let len = t.len();
            t.copy_from_slice(&flat[off..off + len]);
            off += len;
        }
        Ok(())
    }
}

/// Polyak averaging `target ← (1 − τ)·target + τ·online`.
pub fn soft_update<P: Params + ?Sized, Q: Params + ?Sized>(target: &mut P, online: &Q, tau: f64) -> Result<()> {
    let src = online.tensors();
    let dst = target.tensors_mut();
    if src.len() != dst.len() {
        return Err(Error::dim("soft_update tensor count", dst.len(), src.len()));
    }
    for (i, (d, s)) in dst.into_iter().zip(src).enumerate() {
        if d.len() != s.len() {
            return Err(Error::dim(format!("soft_update tensor {i}"), d.len(), s.len()));
        }
        for (x, y) in d.iter_mut().zip(s) {
            *x = (1.0 - tau) * *x + tau * y;
        }
    }
    Ok(())
}

/// A plain vector is a single tensor named `value`.
impl Params for Vec<f64> {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![self.as_slice()]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![self.as_mut_slice()]
    }

    fn tensor_specs(&self) -> Vec<(String, Vec<usize>)> {
        vec![("value".into(), vec![self.len()])]
    }
}

/// A bare list of named tensors; handy for tests and for grouping parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVec {
    pub names: Vec<String>,
    pub shapes: Vec<Vec<usize>>,
    pub values: Vec<Vec<f64>>,
}

impl ParamVec {
    pub fn single(name: &str, values: Vec<f64>) -> Self {
        Self {
            names: vec![name.to_string()],
            shapes: vec![vec![values.len()]],
            values: vec![values],
        }
    }
}

impl Params for ParamVec {
    fn tensors(&self) -> Vec<&[f64]> {
        self.values.iter().map(Vec::as_slice).collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.values.iter_mut().map(Vec::as_mut_slice).collect()
    }

    fn tensor_specs(&self) -> Vec<(String, Vec<usize>)> {
        self.names.iter().cloned().zip(self.shapes.iter().cloned()).collect()
    }
}
