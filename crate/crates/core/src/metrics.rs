//! Relative L² error.

use crate::error::{Error, Result};

/// `100 · ‖pred − exact‖₂ / ‖exact‖₂`.
pub fn relative_l2_percent(pred: &[f64], exact: &[f64]) -> Result<f64> {
    if pred.len() != exact.len() {
        return Err(Error::Validation(format!(
            "prediction has {} values, reference has {}",
            pred.len(),
            exact.len()
        )));
    }
    let den: f64 = exact.iter().map(|e| e * e).sum();
    if !(den > 0.0) {
        return Err(Error::Validation("reference field has zero norm".into()));
    }
    let num: f64 = pred.iter().zip(exact).map(|(p, e)| (p - e) * (p - e)).sum();
    Ok(100.0 * (num / den).sqrt())
}
