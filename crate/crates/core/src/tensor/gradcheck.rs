//! Central finite-difference verification of tape gradients.

use super::{ParamId, ParamStore, Tape, Var};
use crate::error::Result;

/// Denominator floor of the relative error.
pub const GRAD_CHECK_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// `max |analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
    pub max_rel_error: f64,
    /// Parameter and flat element index where the maximum occurred.
    pub worst: Option<(ParamId, usize)>,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
    /// Number of scalar entries compared.
    pub checked: usize,
}

/// Compares tape gradients of `loss_fn` against central differences for
/// every scalar in `store`.
///
/// `loss_fn` must rebuild the whole computation from the store on the given
/// tape and be deterministic (reseed any RNG inside it).
pub fn grad_check<F>(store: &mut ParamStore<f64>, loss_fn: F, eps: f64) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore<f64>, &mut Tape<f64>) -> Result<Var>,
{
    let ids: Vec<ParamId> = store.ids().collect();
    grad_check_subset(store, loss_fn, eps, &ids)
}

/// Like [`grad_check`], restricted to the listed parameters.
pub fn grad_check_subset<F>(
    store: &mut ParamStore<f64>,
    mut loss_fn: F,
    eps: f64,
    ids: &[ParamId],
) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore<f64>, &mut Tape<f64>) -> Result<Var>,
{
    let mut tape = Tape::new();
    let loss = loss_fn(store, &mut tape)?;
    let grads = tape.backward(loss, store)?;

    let mut eval = |store: &ParamStore<f64>| -> Result<f64> {
        let mut tape = Tape::new();
        let loss = loss_fn(store, &mut tape)?;
        tape.value(loss).item()
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        analytic_at_worst: 0.0,
        numeric_at_worst: 0.0,
        checked: 0,
    };
    for &id in ids {
        for i in 0..store.get(id).len() {
            let orig = store.get(id).data()[i];
            store.get_mut(id).data_mut()[i] = orig + eps;
            let plus = eval(store)?;
            store.get_mut(id).data_mut()[i] = orig - eps;
            let minus = eval(store)?;
            store.get_mut(id).data_mut()[i] = orig;

            let numeric = (plus - minus) / (2.0 * eps);
            let analytic = grads.get(id).data()[i];
            let denom = analytic.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR);
            let rel = (analytic - numeric).abs() / denom;
            report.checked += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = rel;
                report.worst = Some((id, i));
                report.analytic_at_worst = analytic;
                report.numeric_at_worst = numeric;
            }
        }
    }
    Ok(report)
}
