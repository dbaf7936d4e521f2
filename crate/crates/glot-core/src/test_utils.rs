//! Support code for gradient checks, shared by unit and integration tests.

use crate::numeric::{ParamId, ParamStore};

/// Central finite-difference check of `store.grad(id)` against the loss
/// produced by `loss_fn`. Returns the worst relative error over all
/// entries of the parameter.
///
/// `loss_fn` must rebuild the forward pass from the store's current
/// values; the analytic gradient is read from the store and therefore has
/// to be populated before calling this.
pub fn finite_diff_max_rel_err(
    store: &mut ParamStore,
    id: ParamId,
    h: f64,
    loss_fn: impl Fn(&ParamStore) -> f64,
) -> f64 {
    let n = store.value(id).len();
    let mut worst = 0.0f64;
    for k in 0..n {
        let original = store.value(id).data()[k];

        store.value_mut(id).data_mut()[k] = original + h;
        let up = loss_fn(store);
        store.value_mut(id).data_mut()[k] = original - h;
        let down = loss_fn(store);
        store.value_mut(id).data_mut()[k] = original;

        let fd = (up - down) / (2.0 * h);
        let analytic = store.grad(id).data()[k];
        let denom = fd.abs().max(analytic.abs()).max(1e-3);
        worst = worst.max((fd - analytic).abs() / denom);
    }
    worst
}
