//! Central-finite-difference gradient checking.
//!
//! The closure under test must be deterministic: fixed seeds, fixed masks.
//! Perturbations only touch parameter values, and masks/pruning depend on
//! parameters only through hard selections, so the check is exact as long as
//! no selection sits within `fd_step` of a decision boundary.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::math;
use crate::params::ParamStore;

/// Worst relative error observed for one named tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub n_coords: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.tensors.iter().map(|t| t.max_rel_err).fold(0.0, f64::max)
    }

    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_err() < tolerance
    }
}

/// Relative error with a floor that absorbs finite-difference noise on
/// coordinates where both gradients vanish.
fn rel_err(analytic: f64, numeric: f64) -> f64 {
    let denom = math::abs(analytic).max(math::abs(numeric)).max(1e-6);
    math::abs(analytic - numeric) / denom
}

/// Compares analytic gradients against central finite differences, one
/// coordinate at a time, over every trainable tensor.
///
/// `loss_with_grads` must run the model and accumulate gradients into the
/// store; `loss_only` must evaluate the same loss without touching gradients.
pub fn grad_check<E>(
    store: &mut ParamStore,
    loss_with_grads: &mut dyn FnMut(&mut ParamStore) -> Result<f64, E>,
    loss_only: &mut dyn FnMut(&ParamStore) -> Result<f64, E>,
    fd_step: f64,
) -> Result<GradCheckReport, E> {
    store.zero_grads();
    let _ = loss_with_grads(store)?;
    let ids: Vec<_> = store.ids().filter(|&id| store.is_trainable(id)).collect();
    let analytic: Vec<Vec<f64>> = ids.iter().map(|&id| store.grad(id).to_vec()).collect();

    let mut report = GradCheckReport::default();
    for (&id, grads) in ids.iter().zip(&analytic) {
        let mut max_rel = 0.0f64;
        let mut max_abs = 0.0f64;
        for coord in 0..grads.len() {
            let original = store.data(id)[coord];
            store.data_mut(id)[coord] = original + fd_step;
            let up = loss_only(store)?;
            store.data_mut(id)[coord] = original - fd_step;
            let down = loss_only(store)?;
            store.data_mut(id)[coord] = original;
            let numeric = (up - down) / (2.0 * fd_step);
            max_rel = max_rel.max(rel_err(grads[coord], numeric));
            max_abs = max_abs.max(math::abs(grads[coord] - numeric));
        }
        report.tensors.push(TensorCheck {
            name: store.name(id).to_string(),
            max_rel_err: max_rel,
            max_abs_err: max_abs,
            n_coords: grads.len(),
        });
    }
    store.zero_grads();
    Ok(report)
}
