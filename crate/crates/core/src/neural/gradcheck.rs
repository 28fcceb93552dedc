//! Central finite-difference checks against analytic gradients.

use crate::error::Result;
use crate::neural::ParamStore;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

/// Relative error with a floor on the denominator.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-8);
    (analytic - numeric).abs() / denom
}

/// Compares the gradients currently held in `store` with
/// `(f(θ+ε) − f(θ−ε)) / 2ε` for every scalar parameter.
pub fn finite_diff_check<F>(store: &mut ParamStore, eps: f64, mut objective: F) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore) -> Result<f64>,
{
    let mut report = GradCheckReport { max_rel_error: 0.0, worst: None, checked: 0 };
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        for j in 0..store.value(id).len() {
            let orig = store.value(id).data()[j];
            store.value_mut(id).data_mut()[j] = orig + eps;
            let plus = objective(store)?;
            store.value_mut(id).data_mut()[j] = orig - eps;
            let minus = objective(store)?;
            store.value_mut(id).data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let err = relative_error(store.grad(id).data()[j], numeric);
            report.checked += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((store.name(id).to_string(), j));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::Tensor;

    fn quadratic(store: &ParamStore) -> Result<f64> {
        let w = store.value(store.id("w").unwrap()).data();
        Ok(w.iter().enumerate().map(|(i, x)| (i as f64 + 1.0) * x * x).sum())
    }

    #[test]
    fn exact_gradient_passes() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::from_vec(&[3], vec![0.3, -1.2, 2.0]).unwrap()).unwrap();
        let g: Vec<f64> = store.value(id).data().iter().enumerate().map(|(i, x)| 2.0 * (i as f64 + 1.0) * x).collect();
        store.grad_mut(id).data_mut().copy_from_slice(&g);
        let r = finite_diff_check(&mut store, 1e-5, quadratic).unwrap();
        assert_eq!(r.checked, 3);
        assert!(r.max_rel_error < 1e-8, "{r:?}");
    }

    #[test]
    fn corrupted_gradient_is_caught() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::from_vec(&[3], vec![0.3, -1.2, 2.0]).unwrap()).unwrap();
        let g = vec![0.6, -4.8, 12.0 * 1.001];
        store.grad_mut(id).data_mut().copy_from_slice(&g);
        let r = finite_diff_check(&mut store, 1e-5, quadratic).unwrap();
        assert!(r.max_rel_error > 1e-4);
        assert_eq!(r.worst, Some(("w".to_string(), 2)));
    }
}
