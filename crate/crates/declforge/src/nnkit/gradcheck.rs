//! Finite-difference gradient auditor.
//!
//! Compares the analytic gradients already accumulated in a [`ParamSet`]
//! against central differences of a caller-supplied loss closure, perturbing
//! every scalar parameter in turn.

use super::{NnError, ParamSet};

/// Max over all parameter entries of
/// `|analytic - central| / max(1, |central|)`.
///
/// The closure must recompute the same scalar loss whose analytic gradients
/// are currently stored in `params`; parameters are restored bit-exactly
/// after each probe. `eps` must lie in (1e-5, 1e-2).
pub fn finite_diff_check<F>(params: &mut ParamSet, eps: f32, mut loss: F) -> Result<f32, NnError>
where
    F: FnMut(&ParamSet) -> f32,
{
    if !(eps > 1e-5 && eps < 1e-2) {
        return Err(NnError::BadEpsilon(eps));
    }
    let ids: Vec<_> = params.ids().collect();
    let mut worst = 0.0f32;
    for id in ids {
        for j in 0..params.get(id).values.len() {
            let analytic = params.get(id).grad[j];
            if !analytic.is_finite() {
                return Err(NnError::NonFiniteGrad(params.get(id).name.clone()));
            }
            let orig = params.get(id).values[j];
            params.get_mut(id).values[j] = orig + eps;
            let plus = loss(params);
            params.get_mut(id).values[j] = orig - eps;
            let minus = loss(params);
            params.get_mut(id).values[j] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(NnError::NonFiniteLoss(params.get(id).name.clone()));
            }
            let central = (plus - minus) / (2.0 * eps);
            let rel = (analytic - central).abs() / central.abs().max(1.0);
            if rel > worst {
                worst = rel;
            }
        }
    }
    Ok(worst)
}
