//! Central finite-difference verification of analytic gradients.

use crate::error::{AvnError, Result};
use crate::nn::params::ParamStore;

/// Compares analytic gradients against central differences.
///
/// `loss_fn` must be a deterministic function of the parameter values.
/// When called with `accumulate = true` it must also populate gradients
/// in the store (via a tape backward pass); with `false` it must only
/// return the loss. Returns the max over all parameter entries of
/// |analytic - numeric| / max(1, |analytic|, |numeric|).
pub fn gradient_check<F>(params: &mut ParamStore, mut loss_fn: F, h: f64) -> Result<f64>
where
    F: FnMut(&mut ParamStore, bool) -> Result<f64>,
{
    params.zero_grads();
    let base = loss_fn(params, true)?;
    if !base.is_finite() {
        return Err(AvnError::Numeric("non-finite loss in gradient_check".into()));
    }
    let names: Vec<String> = params.names().map(String::from).collect();
    let analytic: Vec<Vec<f64>> = names
        .iter()
        .map(|n| params.grad(n).unwrap().data().to_vec())
        .collect();
    let mut max_rel = 0.0f64;
    for (name, grads) in names.iter().zip(&analytic) {
        for i in 0..grads.len() {
            let orig = params.get(name).unwrap().data()[i];
            params.get_mut(name).unwrap().data_mut()[i] = orig + h;
            let lp = loss_fn(params, false)?;
            params.get_mut(name).unwrap().data_mut()[i] = orig - h;
            let lm = loss_fn(params, false)?;
            params.get_mut(name).unwrap().data_mut()[i] = orig;
            if !lp.is_finite() || !lm.is_finite() {
                return Err(AvnError::Numeric("non-finite loss in gradient_check".into()));
            }
            let numeric = (lp - lm) / (2.0 * h);
            let a = grads[i];
            let rel = (a - numeric).abs() / 1.0f64.max(a.abs()).max(numeric.abs());
            max_rel = max_rel.max(rel);
        }
    }
    params.zero_grads();
    Ok(max_rel)
}
