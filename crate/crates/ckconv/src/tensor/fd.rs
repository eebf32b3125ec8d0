//! Central finite differences, the independent gradient oracle.

use crate::error::{Error, Result};

/// Central-difference gradient estimate `(f(x+eps*e_i) - f(x-eps*e_i)) / 2eps`
/// per element. `f` is re-evaluated from scratch for every probe, so it must
/// be a pure function of its argument.
pub fn finite_difference_grad(
    mut f: impl FnMut(&[f64]) -> Result<f64>,
    x: &[f64],
    eps: f64,
) -> Result<Vec<f64>> {
    let mut probe = x.to_vec();
    let mut grad = vec![0.0; x.len()];
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + eps;
        let plus = f(&probe)?;
        probe[i] = orig - eps;
        let minus = f(&probe)?;
        probe[i] = orig;
        let d = (plus - minus) / (2.0 * eps);
        if !d.is_finite() {
            return Err(Error::Numeric(format!(
                "finite difference produced {d} at element {i}"
            )));
        }
        grad[i] = d;
    }
    Ok(grad)
}
