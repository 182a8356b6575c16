//! Dense f64 tensors, persistent parameter storage, and the SGD update.
//!
//! Everything is 64-bit: the models here are desk-scale and doubles keep
//! finite-difference gradient checks reliable.

mod tape;

pub use tape::{NodeId, Tape};

use crate::error::{Error, Result};
use crate::util::fnv1a64_f64;
use rand::Rng;
use std::sync::Arc;

/// Dense multi-dimensional value array in row-major order. A tensor may be
/// attached to the active [`Tape`] through `node`, in which case gradients
/// for it can be queried after a backward pass.
#[derive(Clone, Debug)]
pub struct Tensor {
    shape: Vec<usize>,
    /// Shared storage: cloning a tensor (or binding a parameter to a tape)
    /// is a refcount bump, and mutation copies on write.
    values: Arc<Vec<f64>>,
    requires_grad: bool,
    node: Option<NodeId>,
}

impl Tensor {
    /// Detached tensor from explicit shape and row-major values.
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != values.len() {
            return Err(Error::contract(format!(
                "tensor shape {:?} implies {} values, got {}",
                shape,
                numel,
                values.len()
            )));
        }
        Ok(Tensor {
            shape,
            values: Arc::new(values),
            requires_grad: false,
            node: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape,
            values: Arc::new(vec![0.0; numel]),
            requires_grad: false,
            node: None,
        }
    }

    /// Tensor filled by the given RNG, uniform over [lo, hi).
    pub fn uniform(shape: Vec<usize>, lo: f64, hi: f64, rng: &mut impl Rng) -> Self {
        let numel = shape.iter().product();
        let values = (0..numel).map(|_| rng.gen_range(lo..hi)).collect();
        Tensor {
            shape,
            values: Arc::new(values),
            requires_grad: false,
            node: None,
        }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![1, 1],
            values: Arc::new(vec![v]),
            requires_grad: false,
            node: None,
        }
    }

    /// Single row vector `[1 x n]`.
    pub fn row(values: Vec<f64>) -> Self {
        Tensor {
            shape: vec![1, values.len()],
            values: Arc::new(values),
            requires_grad: false,
            node: None,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Mutable access to the raw values, used for in-place initialization,
    /// checkpoint loading, and finite-difference probing in tests.
    pub fn values_mut(&mut self) -> &mut [f64] {
        Arc::make_mut(&mut self.values).as_mut_slice()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn node(&self) -> Option<NodeId> {
        self.node
    }

    pub fn numel(&self) -> usize {
        self.values.len()
    }

    /// Rows of a rank-2 tensor (rank-1 counts as a single row).
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 | 1 => 1,
            _ => self.shape[0],
        }
    }

    /// Columns of a rank-2 tensor.
    pub fn cols(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => self.shape[0],
            _ => self.shape[1],
        }
    }

    pub fn is_scalar(&self) -> bool {
        self.numel() == 1
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols() + c]
    }

    pub(crate) fn with_requires_grad(mut self, requires_grad: bool) -> Self {
        self.requires_grad = requires_grad;
        self
    }
}

/// Handle to one parameter tensor inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(&self) -> usize {
        self.0
    }
}

/// Persistent storage for trainable parameters. Parameters keep canonical
/// dotted names (`enc_s.layer0.fwd.w_i`, ...) used by checkpoints and by
/// per-component fingerprinting in tests.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    grads: Vec<Vec<f64>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        let name = name.into();
        debug_assert!(
            !self.names.contains(&name),
            "duplicate parameter name {name}"
        );
        let numel = tensor.numel();
        self.names.push(name);
        self.tensors.push(tensor.with_requires_grad(true));
        self.grads.push(vec![0.0; numel]);
        ParamId(self.names.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn grad(&self, id: ParamId) -> &[f64] {
        &self.grads[id.0]
    }

    pub fn accumulate_grad(&mut self, id: ParamId, grad: &[f64]) {
        let dst = &mut self.grads[id.0];
        debug_assert_eq!(dst.len(), grad.len());
        for (d, g) in dst.iter_mut().zip(grad) {
            *d += g;
        }
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Global L2 norm over all parameter gradients.
    pub fn grad_norm(&self) -> f64 {
        self.grads
            .iter()
            .flat_map(|g| g.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// One SGD update: clip the global gradient norm to `clip_norm`, apply
    /// `p -= lr * g`, and zero all gradients.
    pub fn sgd_step(&mut self, lr: f64, clip_norm: f64) {
        let norm = self.grad_norm();
        let scale = if clip_norm > 0.0 && norm > clip_norm {
            clip_norm / norm
        } else {
            1.0
        };
        for (tensor, grad) in self.tensors.iter_mut().zip(&mut self.grads) {
            let values = Arc::make_mut(&mut tensor.values);
            for (p, g) in values.iter_mut().zip(grad.iter()) {
                *p -= lr * scale * g;
            }
            grad.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.names
            .iter()
            .enumerate()
            .map(|(i, n)| (ParamId(i), n.as_str(), &self.tensors[i]))
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    /// Order-independent fingerprint over the values of all parameters whose
    /// name starts with `prefix`. Empty prefix covers the whole store.
    pub fn fingerprint(&self, prefix: &str) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        for (name, tensor) in self.names.iter().zip(&self.tensors) {
            if name.starts_with(prefix) {
                for &v in tensor.values.iter() {
                    h = fnv1a64_f64(h, v);
                }
            }
        }
        h
    }

    pub fn total_values(&self) -> usize {
        self.tensors.iter().map(|t| t.numel()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_shape_value_mismatch_is_error() {
        assert!(Tensor::new(vec![2, 2], vec![1.0, 2.0]).is_err());
    }

    #[test]
    fn sgd_zero_grad_leaves_params_unchanged() {
        let mut store = ParamStore::new();
        let id = store.register("p", Tensor::row(vec![1.0, -2.0]));
        store.sgd_step(1.0, 5.0);
        assert_eq!(store.value(id).values(), &[1.0, -2.0]);
    }

    #[test]
    fn sgd_plain_step() {
        // p=1, grad=0.5, lr=1.0, no clip triggered -> p=0.5
        let mut store = ParamStore::new();
        let id = store.register("p", Tensor::row(vec![1.0]));
        store.accumulate_grad(id, &[0.5]);
        store.sgd_step(1.0, 5.0);
        assert_eq!(store.value(id).values(), &[0.5]);
    }

    #[test]
    fn sgd_clips_by_global_norm() {
        // single grad vector of norm 10, clip 5 -> effective grads halved
        let mut store = ParamStore::new();
        let id = store.register("p", Tensor::row(vec![0.0, 0.0]));
        let g = 10.0 / 2.0_f64.sqrt();
        store.accumulate_grad(id, &[g, g]);
        store.sgd_step(1.0, 5.0);
        let expect = -0.5 * g;
        for v in store.value(id).values() {
            assert!((v - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn fingerprint_tracks_prefix() {
        let mut store = ParamStore::new();
        let a = store.register("enc_s.w", Tensor::row(vec![1.0]));
        store.register("dec.w", Tensor::row(vec![2.0]));
        let before = store.fingerprint("dec");
        store.value_mut(a).values_mut()[0] = 9.0;
        assert_eq!(store.fingerprint("dec"), before);
        assert_ne!(store.fingerprint("enc_s"), store.fingerprint("dec"));
    }
}
