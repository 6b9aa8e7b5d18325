//! Named learnable tensors with gradient slots and Adam state.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::math;
use crate::tape::LeafGrad;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NumericsError {
    #[error("non-finite gradient in parameter {0:?}")]
    NonFiniteGradient(String),
    #[error("non-finite value in parameter {0:?} after update")]
    NonFiniteParam(String),
}

/// Handle to a parameter tensor in a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// A contiguous slice of a parameter tensor, viewed with its own shape.
/// This is what gets bound onto a tape as a leaf (for example one relation's
/// embedding row, or one query relation's transform block).
#[derive(Clone, Debug, PartialEq)]
pub struct ParamRef {
    pub id: ParamId,
    pub offset: usize,
    pub shape: Vec<usize>,
}

impl ParamRef {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: Vec<f64>,
    m: Vec<f64>,
    v: Vec<f64>,
    trainable: bool,
}

/// Parameter tensors plus matching gradient accumulators and Adam moments.
#[derive(Debug, Default)]
pub struct ParamStore {
    entries: Vec<Entry>,
    step: u64,
}

impl Clone for ParamStore {
    fn clone(&self) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .map(|e| Entry {
                    name: e.name.clone(),
                    shape: e.shape.clone(),
                    data: e.data.clone(),
                    grad: e.grad.clone(),
                    m: e.m.clone(),
                    v: e.v.clone(),
                    trainable: e.trainable,
                })
                .collect(),
            step: self.step,
        }
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, shape: Vec<usize>, data: Vec<f64>) -> ParamId {
        self.add_inner(name, shape, data, true)
    }

    /// Adds a tensor that Adam never updates (it still participates in the
    /// forward pass and may accumulate gradients, which are discarded).
    pub fn add_frozen(&mut self, name: &str, shape: Vec<usize>, data: Vec<f64>) -> ParamId {
        self.add_inner(name, shape, data, false)
    }

    fn add_inner(&mut self, name: &str, shape: Vec<usize>, data: Vec<f64>, trainable: bool) -> ParamId {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "shape/data mismatch for {name}");
        assert!(self.find(name).is_none(), "duplicate parameter name {name}");
        let len = data.len();
        self.entries.push(Entry {
            name: name.to_string(),
            shape,
            data,
            grad: vec![0.0; len],
            m: vec![0.0; len],
            v: vec![0.0; len],
            trainable,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + use<> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn shape(&self, id: ParamId) -> &[usize] {
        &self.entries[id.0].shape
    }

    pub fn data(&self, id: ParamId) -> &[f64] {
        &self.entries[id.0].data
    }

    pub fn data_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.entries[id.0].data
    }

    pub fn grad(&self, id: ParamId) -> &[f64] {
        &self.entries[id.0].grad
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.entries[id.0].trainable
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn full_ref(&self, id: ParamId) -> ParamRef {
        ParamRef { id, offset: 0, shape: self.entries[id.0].shape.clone() }
    }

    /// A sub-slice view with its own shape; bounds-checked.
    pub fn slice_ref(&self, id: ParamId, offset: usize, shape: Vec<usize>) -> ParamRef {
        let len: usize = shape.iter().product();
        assert!(offset + len <= self.entries[id.0].data.len(), "slice out of range");
        ParamRef { id, offset, shape }
    }

    pub fn slice(&self, r: &ParamRef) -> &[f64] {
        &self.entries[r.id.0].data[r.offset..r.offset + r.len()]
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            e.grad.fill(0.0);
        }
    }

    /// Adds `scale * grad` into each referenced gradient slot. Applying
    /// per-query gradients in a fixed order keeps training deterministic.
    pub fn accumulate_scaled(&mut self, grads: &[LeafGrad], scale: f64) {
        for lg in grads {
            let entry = &mut self.entries[lg.param.id.0];
            let dst = &mut entry.grad[lg.param.offset..lg.param.offset + lg.grad.len()];
            for (d, g) in dst.iter_mut().zip(&lg.grad) {
                *d += scale * g;
            }
        }
    }

    /// One bias-corrected Adam update over every trainable tensor; gradients
    /// are zeroed afterwards. Fails fast on non-finite gradients or outputs.
    pub fn adam_step(
        &mut self,
        lr: f64,
        beta1: f64,
        beta2: f64,
        epsilon: f64,
    ) -> Result<(), NumericsError> {
        self.step += 1;
        let bc1 = 1.0 - math::powi(beta1, self.step);
        let bc2 = 1.0 - math::powi(beta2, self.step);
        for e in &mut self.entries {
            if !e.trainable {
                e.grad.fill(0.0);
                continue;
            }
            for g in &e.grad {
                if !g.is_finite() {
                    return Err(NumericsError::NonFiniteGradient(e.name.clone()));
                }
            }
            for i in 0..e.data.len() {
                let g = e.grad[i];
                e.m[i] = beta1 * e.m[i] + (1.0 - beta1) * g;
                e.v[i] = beta2 * e.v[i] + (1.0 - beta2) * g * g;
                let m_hat = e.m[i] / bc1;
                let v_hat = e.v[i] / bc2;
                e.data[i] -= lr * m_hat / (math::sqrt(v_hat) + epsilon);
                if !e.data[i].is_finite() {
                    return Err(NumericsError::NonFiniteParam(e.name.clone()));
                }
            }
            e.grad.fill(0.0);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::LeafGrad;
    use approx::assert_relative_eq;

    #[test]
    fn first_adam_step_closed_form() {
        let mut store = ParamStore::new();
        let id = store.add("theta", vec![1], vec![0.0]);
        let r = store.full_ref(id);
        store.accumulate_scaled(&[LeafGrad { param: r, grad: vec![1.0] }], 1.0);
        store.adam_step(0.1, 0.9, 0.999, 1e-8).unwrap();
        // bias correction makes m_hat = v_hat = 1 on the first step
        assert_relative_eq!(store.data(id)[0], -0.1 / (1.0 + 1e-8), epsilon = 1e-15);
        assert_eq!(store.step_count(), 1);
        assert_eq!(store.grad(id), &[0.0]);
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut store = ParamStore::new();
        let id = store.add("theta", vec![2], vec![0.5, -0.5]);
        for _ in 0..5 {
            store.adam_step(0.1, 0.9, 0.999, 1e-8).unwrap();
        }
        assert_eq!(store.data(id), &[0.5, -0.5]);
    }

    #[test]
    fn identical_state_updates_identically() {
        let mut store = ParamStore::new();
        let a = store.add("a", vec![1], vec![0.3]);
        let b = store.add("b", vec![1], vec![0.3]);
        let (ra, rb) = (store.full_ref(a), store.full_ref(b));
        for _ in 0..3 {
            store.accumulate_scaled(
                &[
                    LeafGrad { param: ra.clone(), grad: vec![0.7] },
                    LeafGrad { param: rb.clone(), grad: vec![0.7] },
                ],
                1.0,
            );
            store.adam_step(0.05, 0.9, 0.999, 1e-8).unwrap();
        }
        assert_eq!(store.data(a), store.data(b));
    }

    #[test]
    fn non_finite_gradient_fails_fast() {
        let mut store = ParamStore::new();
        let id = store.add("theta", vec![1], vec![0.0]);
        let r = store.full_ref(id);
        store.accumulate_scaled(&[LeafGrad { param: r, grad: vec![f64::NAN] }], 1.0);
        assert_eq!(
            store.adam_step(0.1, 0.9, 0.999, 1e-8).unwrap_err(),
            NumericsError::NonFiniteGradient("theta".into())
        );
        let _ = id;
    }

    #[test]
    fn frozen_entries_never_move() {
        let mut store = ParamStore::new();
        let id = store.add_frozen("fixed", vec![1], vec![1.5]);
        let r = store.full_ref(id);
        store.accumulate_scaled(&[LeafGrad { param: r, grad: vec![10.0] }], 1.0);
        store.adam_step(0.1, 0.9, 0.999, 1e-8).unwrap();
        assert_eq!(store.data(id), &[1.5]);
    }

    #[test]
    fn slice_ref_windows_the_tensor() {
        let mut store = ParamStore::new();
        let id = store.add("emb", vec![3, 2], vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        let row1 = store.slice_ref(id, 2, vec![2]);
        assert_eq!(store.slice(&row1), &[2.0, 3.0]);
        store.accumulate_scaled(&[LeafGrad { param: row1, grad: vec![1.0, 1.0] }], 2.0);
        assert_eq!(store.grad(id), &[0.0, 0.0, 2.0, 2.0, 0.0, 0.0]);
    }
}
