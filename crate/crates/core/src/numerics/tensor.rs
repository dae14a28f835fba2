//! Dense row-major tensors and the named parameter store.

use std::collections::HashMap;

/// Dense row-major array of `f32` with an optional gradient buffer of the
/// same length. Shapes are validated at construction; `product(shape)`
/// always equals `values.len()`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f32>,
    grad: Option<Vec<f32>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f32>) -> Self {
        let numel: usize = shape.iter().product();
        assert_eq!(
            numel,
            values.len(),
            "shape {:?} implies {} elements, got {}",
            shape,
            numel,
            values.len()
        );
        Tensor { shape, values, grad: None }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel: usize = shape.iter().product();
        Tensor { shape, values: vec![0.0; numel], grad: None }
    }

    pub fn filled(shape: Vec<usize>, value: f32) -> Self {
        let numel: usize = shape.iter().product();
        Tensor { shape, values: vec![value; numel], grad: None }
    }

    pub fn scalar(value: f32) -> Self {
        Tensor::new(vec![1], vec![value])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    pub fn grad(&self) -> Option<&[f32]> {
        self.grad.as_deref()
    }

    /// Gradient buffer, allocating a zeroed one if absent.
    pub fn grad_mut(&mut self) -> &mut [f32] {
        if self.grad.is_none() {
            self.grad = Some(vec![0.0; self.values.len()]);
        }
        self.grad.as_mut().unwrap()
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.iter_mut().for_each(|x| *x = 0.0);
        }
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    /// Number of rows of a 2-D tensor.
    pub fn rows(&self) -> usize {
        assert_eq!(self.shape.len(), 2, "rows() on non-2-D shape {:?}", self.shape);
        self.shape[0]
    }

    /// Number of columns of a 2-D tensor.
    pub fn cols(&self) -> usize {
        assert_eq!(self.shape.len(), 2, "cols() on non-2-D shape {:?}", self.shape);
        self.shape[1]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Which side of the multi-task parameter partition an entry belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    /// Shared encoder parameters, used by every task.
    Shared,
    /// Path-recommendation head (and single-task decoder) parameters.
    Path,
    /// Knowledge-tracing head parameters.
    Dkt,
}

impl std::fmt::Display for ParamGroup {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ParamGroup::Shared => write!(f, "shared"),
            ParamGroup::Path => write!(f, "path"),
            ParamGroup::Dkt => write!(f, "dkt"),
        }
    }
}

#[derive(Debug, Clone)]
struct ParamEntry {
    name: String,
    group: ParamGroup,
    tensor: Tensor,
}

/// Ordered map from unique names to trainable tensors. Iteration order is
/// insertion order, which makes every downstream loop deterministic.
#[derive(Debug, Clone, Default)]
pub struct ParameterStore {
    entries: Vec<ParamEntry>,
    index: HashMap<String, usize>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, group: ParamGroup, tensor: Tensor) {
        assert!(
            !self.index.contains_key(name),
            "duplicate parameter name {name:?}"
        );
        self.index.insert(name.to_string(), self.entries.len());
        self.entries.push(ParamEntry { name: name.to_string(), group, tensor });
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name_at(&self, idx: usize) -> &str {
        &self.entries[idx].name
    }

    pub fn group_at(&self, idx: usize) -> ParamGroup {
        self.entries[idx].group
    }

    pub fn tensor_at(&self, idx: usize) -> &Tensor {
        &self.entries[idx].tensor
    }

    pub fn tensor_at_mut(&mut self, idx: usize) -> &mut Tensor {
        &mut self.entries[idx].tensor
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index_of(name).map(|i| &self.entries[i].tensor)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        let idx = self.index_of(name)?;
        Some(&mut self.entries[idx].tensor)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, ParamGroup, &Tensor)> {
        self.entries.iter().map(|e| (e.name.as_str(), e.group, &e.tensor))
    }

    /// Zero every gradient buffer, allocating missing ones.
    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            e.tensor.grad_mut().iter_mut().for_each(|x| *x = 0.0);
        }
    }

    /// Total number of trainable scalars.
    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.numel()).sum()
    }
}
