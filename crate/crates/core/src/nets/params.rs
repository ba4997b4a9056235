use std::ops::Range;

use ndarray::{ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2};

use crate::{Error, Result};

/// Index of a tensor inside a [`NetParams`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorId(pub(crate) usize);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    offset: usize,
}

impl TensorSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.numel()
    }
}

/// Named tensors stored back to back in one flat buffer.
///
/// Matrices are row-major `(out, in)`; vectors are 1-D. Gradients and
/// optimizer moments share the same flat layout.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NetParams {
    specs: Vec<TensorSpec>,
    data: Vec<f64>,
}

impl NetParams {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, shape: &[usize]) -> TensorId {
        let spec = TensorSpec {
            name: name.into(),
            shape: shape.to_vec(),
            offset: self.data.len(),
        };
        self.data.resize(self.data.len() + spec.numel(), 0.0);
        self.specs.push(spec);
        TensorId(self.specs.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn specs(&self) -> &[TensorSpec] {
        &self.specs
    }

    pub fn spec(&self, id: TensorId) -> &TensorSpec {
        &self.specs[id.0]
    }

    pub fn find(&self, name: &str) -> Option<TensorId> {
        self.specs.iter().position(|s| s.name == name).map(TensorId)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn tensor(&self, id: TensorId) -> &[f64] {
        &self.data[self.specs[id.0].range()]
    }

    pub fn tensor_mut(&mut self, id: TensorId) -> &mut [f64] {
        let r = self.specs[id.0].range();
        &mut self.data[r]
    }

    pub(crate) fn mat(&self, id: TensorId) -> ArrayView2<'_, f64> {
        let s = &self.specs[id.0];
        ArrayView2::from_shape((s.shape[0], s.shape[1]), &self.data[s.range()]).expect("matrix")
    }

    pub(crate) fn vector(&self, id: TensorId) -> ArrayView1<'_, f64> {
        ArrayView1::from(self.tensor(id))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Same tensor names and shapes, ignoring values.
    pub fn same_layout(&self, other: &NetParams) -> bool {
        self.specs == other.specs
    }

    /// Replaces every value, keeping the layout.
    pub fn load_values(&mut self, values: Vec<f64>) -> Result<()> {
        Error::check_dim(self.data.len(), values.len())?;
        self.data = values;
        Ok(())
    }

    /// Copies a tensor of identical shape from another parameter set.
    pub(crate) fn copy_tensor(&mut self, dst: TensorId, src: &NetParams, src_id: TensorId) {
        assert_eq!(self.specs[dst.0].shape, src.specs[src_id.0].shape);
        let values = src.tensor(src_id).to_vec();
        self.tensor_mut(dst).copy_from_slice(&values);
    }
}

/// Flat gradient buffer laid out like the [`NetParams`] it belongs to.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    data: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(params: &NetParams) -> Self {
        Gradients {
            data: vec![0.0; params.len()],
        }
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|g| g * g).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn scale(&mut self, a: f64) {
        self.data.iter_mut().for_each(|g| *g *= a);
    }

    /// `self += a * other`.
    pub fn add_scaled(&mut self, a: f64, other: &Gradients) {
        assert_eq!(self.data.len(), other.data.len());
        for (g, o) in self.data.iter_mut().zip(&other.data) {
            *g += a * o;
        }
    }

    pub(crate) fn mat_mut(&mut self, params: &NetParams, id: TensorId) -> ArrayViewMut2<'_, f64> {
        let s = params.spec(id);
        ArrayViewMut2::from_shape((s.shape[0], s.shape[1]), &mut self.data[s.range()])
            .expect("matrix")
    }

    pub(crate) fn vector_mut(&mut self, params: &NetParams, id: TensorId) -> ArrayViewMut1<'_, f64> {
        ArrayViewMut1::from(&mut self.data[params.spec(id).range()])
    }
}
