use crate::algebra::ComplexVector;
use crate::error::{Error, Result};

/// `‖ĥ - h‖² / ‖h‖²`.
pub fn compute_nmse(h_hat: &ComplexVector, h_true: &ComplexVector) -> Result<f64> {
    if h_hat.len() != h_true.len() {
        return Err(Error::dims(
            "compute_nmse",
            format!("estimate has length {}, truth {}", h_hat.len(), h_true.len()),
        ));
    }
    let den = h_true.norm_squared();
    if !(den > 0.0) {
        return Err(Error::param("h_true", "zero-norm reference channel"));
    }
    Ok((h_hat - h_true).norm_squared() / den)
}

pub fn to_db(x: f64) -> f64 {
    10.0 * x.log10()
}
