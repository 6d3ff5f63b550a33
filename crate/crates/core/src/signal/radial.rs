//! Laguerre-type radial functions.

use crate::error::{Error, Result};

/// Generalized Laguerre polynomial `L_n^{(alpha)}(x)` by the three-term recurrence.
pub fn laguerre(n: usize, alpha: f64, x: f64) -> f64 {
    let mut prev = 1.0;
    if n == 0 {
        return prev;
    }
    let mut cur = 1.0 + alpha - x;
    for k in 1..n {
        let kf = k as f64;
        let next = ((2.0 * kf + 1.0 + alpha - x) * cur - (kf + alpha) * prev) / (kf + 1.0);
        prev = cur;
        cur = next;
    }
    cur
}

/// `ψ_n(r) = L_n(r) e^{-r/2}`, orthonormal on `[0, ∞)` under `dr`.
pub fn radial(n: usize, r: f64) -> Result<f64> {
    if !r.is_finite() || r < 0.0 {
        return Err(Error::InvalidArgument(format!("radius must be finite and ≥ 0, got {r}")));
    }
    Ok(laguerre(n, 0.0, r) * (-0.5 * r).exp())
}

/// `φ_n(r) = r^{3/2} L_n^{(2)}(r) e^{-r/2} / √((n+1)(n+2))`, orthonormal under
/// the scale-invariant measure `dr / r`.
pub fn invariant_radial(n: usize, r: f64) -> Result<f64> {
    if !r.is_finite() || r <= 0.0 {
        return Err(Error::OffManifold(format!("radius must be positive, got {r}")));
    }
    let nf = n as f64;
    let norm = ((nf + 1.0) * (nf + 2.0)).sqrt();
    Ok(r.powf(1.5) * laguerre(n, 2.0, r) * (-0.5 * r).exp() / norm)
}

/// Fills `out[n] = φ_n(r)` for `n < out.len()`.
pub(crate) fn invariant_radial_into(r: f64, out: &mut [f64]) {
    let env = r.powf(1.5) * (-0.5 * r).exp();
    let mut prev = 1.0;
    let mut cur = 3.0 - r;
    for (n, slot) in out.iter_mut().enumerate() {
        let nf = n as f64;
        let l = match n {
            0 => 1.0,
            1 => cur,
            _ => {
                let k = nf - 1.0;
                let next = ((2.0 * k + 3.0 - r) * cur - (k + 2.0) * prev) / (k + 1.0);
                prev = cur;
                cur = next;
                cur
            }
        };
        *slot = env * l / ((nf + 1.0) * (nf + 2.0)).sqrt();
    }
}
