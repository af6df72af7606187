use std::collections::HashMap;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;

/// Handle to a parameter inside a [`ParamStore`]. Indices are stable for the
/// lifetime of the store, so they can be kept inside model structs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

/// A named tensor with its gradient buffer. Frozen parameters
/// (`trainable == false`) keep a gradient buffer for uniformity but no
/// optimizer ever applies it.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    pub trainable: bool,
}

/// Ordered collection of model parameters. Iteration order is insertion
/// order everywhere (optimizer, digests, checkpoints), which keeps every
/// consumer deterministic.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
    by_name: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, value: Tensor, trainable: bool) -> Result<ParamId> {
        if self.by_name.contains_key(name) {
            return Err(Error::Contract(format!("duplicate parameter name {name}")));
        }
        let id = self.params.len();
        self.by_name.insert(name.to_string(), id);
        let grad = Tensor::zeros(value.shape().to_vec());
        self.params.push(Parameter {
            name: name.to_string(),
            value,
            grad,
            trainable,
        });
        Ok(ParamId(id))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().fill(0.0);
        }
    }

    /// Move accumulated gradients into the store's grad buffers.
    pub fn load_grads(&mut self, accum: &GradAccum) {
        for (i, g) in accum.grads.iter().enumerate() {
            if let Some(g) = g {
                self.params[i].grad = g.clone();
            } else {
                self.params[i].grad.data_mut().fill(0.0);
            }
        }
    }

    /// SHA-256 over the little-endian bytes of every frozen parameter, in
    /// store order. Training must leave this digest unchanged.
    pub fn frozen_digest(&self) -> String {
        let mut hasher = Sha256::new();
        for p in &self.params {
            if !p.trainable {
                for v in p.value.data() {
                    hasher.update(v.to_le_bytes());
                }
            }
        }
        hex_string(&hasher.finalize())
    }

    /// Digest over every parameter, used to verify checkpoint round-trips.
    pub fn full_digest(&self) -> String {
        let mut hasher = Sha256::new();
        for p in &self.params {
            for v in p.value.data() {
                hasher.update(v.to_le_bytes());
            }
        }
        hex_string(&hasher.finalize())
    }
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Gradient accumulator keyed by parameter index. One accumulator serves a
/// whole batch: each sample's backward pass adds its scaled contribution in
/// sample order, which keeps reductions bit-deterministic.
#[derive(Debug, Clone)]
pub struct GradAccum {
    shapes: Vec<Vec<usize>>,
    grads: Vec<Option<Tensor>>,
}

impl GradAccum {
    pub fn new(store: &ParamStore) -> Self {
        let shapes: Vec<_> = store.params.iter().map(|p| p.value.shape().to_vec()).collect();
        let grads = vec![None; shapes.len()];
        GradAccum { shapes, grads }
    }

    fn slot(&mut self, id: ParamId) -> &mut Tensor {
        let shape = self.shapes[id.0].clone();
        self.grads[id.0].get_or_insert_with(|| Tensor::zeros(shape))
    }

    pub fn add(&mut self, id: ParamId, grad: &Tensor, scale: f64) {
        let slot = self.slot(id);
        debug_assert_eq!(slot.shape(), grad.shape());
        for (dst, src) in slot.data_mut().iter_mut().zip(grad.data()) {
            *dst += scale * src;
        }
    }

    /// Scatter-add row gradients into the rows of an embedding-table parameter.
    pub fn add_rows(&mut self, id: ParamId, rows: &[usize], grad: &Tensor, scale: f64) {
        let cols = self.shapes[id.0][1];
        debug_assert_eq!(grad.cols(), cols);
        let slot = self.slot(id);
        for (k, &r) in rows.iter().enumerate() {
            let src = &grad.data()[k * cols..(k + 1) * cols];
            let dst = &mut slot.data_mut()[r * cols..(r + 1) * cols];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += scale * s;
            }
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.grads[id.0].as_ref()
    }

    pub fn merge(&mut self, other: &GradAccum) {
        for (i, g) in other.grads.iter().enumerate() {
            if let Some(g) = g {
                self.add(ParamId(i), g, 1.0);
            }
        }
    }
}
