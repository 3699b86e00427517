//! Finite-difference gradient checking.
//!
//! The independent oracle for every analytic gradient in the crate: central
//! differences `(f(w+h) - f(w-h)) / 2h` computed in 64-bit arithmetic with
//! `h = 1e-5`, compared against tape gradients with a relative-error
//! tolerance of `1e-4`.

use crate::error::{contract, Result};
use crate::numerics::{ParameterStore, Real};

/// Default perturbation step.
pub const FD_STEP: Real = 1e-5;

/// Default acceptance threshold for [`rel_err`].
pub const FD_TOL: Real = 1e-4;

/// Relative error with an absolute floor: `|a - b| / max(|a|, |b|, 1e-3)`.
/// The floor keeps near-zero gradient pairs (where central differences are
/// pure roundoff noise) from reporting huge relative errors.
pub fn rel_err(a: Real, b: Real) -> Real {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

/// Central finite difference of `loss` with respect to element `idx` of
/// parameter `name`. Restores the original value bit-exactly afterwards.
pub fn central_difference<F>(
    store: &mut ParameterStore,
    name: &str,
    idx: usize,
    h: Real,
    loss: &mut F,
) -> Result<Real>
where
    F: FnMut(&ParameterStore) -> Result<Real>,
{
    let original = {
        let p = store
            .get(name)
            .ok_or_else(|| contract(format!("unknown parameter '{name}'")))?;
        if idx >= p.value.len() {
            return Err(contract(format!(
                "index {idx} out of range for parameter '{name}'"
            )));
        }
        p.value.data()[idx]
    };
    store.get_mut(name).unwrap().value.data_mut()[idx] = original + h;
    let plus = loss(store)?;
    store.get_mut(name).unwrap().value.data_mut()[idx] = original - h;
    let minus = loss(store)?;
    store.get_mut(name).unwrap().value.data_mut()[idx] = original;
    Ok((plus - minus) / (2.0 * h))
}

/// Per-parameter worst relative error between the analytic gradients held
/// in `store` (the caller must have run backward + `grads_into` already)
/// and central finite differences of `loss`. Every element of every listed
/// parameter is checked.
pub fn check_params<F>(
    store: &mut ParameterStore,
    names: &[String],
    h: Real,
    loss: &mut F,
) -> Result<Vec<(String, Real)>>
where
    F: FnMut(&ParameterStore) -> Result<Real>,
{
    let mut report = Vec::with_capacity(names.len());
    for name in names {
        let len = store
            .get(name)
            .ok_or_else(|| contract(format!("unknown parameter '{name}'")))?
            .value
            .len();
        let analytic: Vec<Real> = store.get(name).unwrap().grad.data().to_vec();
        let mut worst = 0.0;
        for idx in 0..len {
            let numeric = central_difference(store, name, idx, h, loss)?;
            let err = rel_err(analytic[idx], numeric);
            if err > worst {
                worst = err;
            }
        }
        report.push((name.clone(), worst));
    }
    Ok(report)
}
