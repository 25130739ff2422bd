use super::ParamStore;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub analytic: f64,
    pub numeric: f64,
    pub entries_checked: usize,
}

/// Compares analytic gradients against central finite differences.
///
/// `f` must return the loss and accumulate its gradient into the store; the
/// store's gradients are zeroed before every call. The error of an entry is
/// `|analytic − numeric| / max(|analytic|, |numeric|, 1e-8)`. On return the
/// store holds the analytic gradients at the unperturbed point.
pub fn grad_check<F>(store: &mut ParamStore, eps: f64, mut f: F) -> Result<GradCheckReport>
where
    F: FnMut(&mut ParamStore) -> Result<f64>,
{
    let mut eval = |s: &mut ParamStore| -> Result<f64> {
        s.zero_grad();
        let v = f(s)?;
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("objective evaluated to {v}")));
        }
        Ok(v)
    };

    eval(store)?;
    let analytic: Vec<Vec<f64>> = store.iter().map(|(_, p)| p.grad.data().to_vec()).collect();
    let ids: Vec<_> = store.iter().map(|(id, p)| (id, p.name().to_string())).collect();

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        analytic: 0.0,
        numeric: 0.0,
        entries_checked: 0,
    };
    for ((id, name), grads) in ids.iter().zip(&analytic) {
        for (k, &a) in grads.iter().enumerate() {
            let orig = store.value(*id).data()[k];
            store.value_mut(*id).data_mut()[k] = orig + eps;
            let plus = eval(store)?;
            store.value_mut(*id).data_mut()[k] = orig - eps;
            let minus = eval(store)?;
            store.value_mut(*id).data_mut()[k] = orig;

            let numeric = (plus - minus) / (2.0 * eps);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            report.entries_checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((name.clone(), k));
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }

    for (p, grads) in store.iter_mut().zip(analytic) {
        p.grad.data_mut().copy_from_slice(&grads);
    }
    Ok(report)
}
