//! Real spherical harmonics without the Condon–Shortley phase.

use std::f64::consts::PI;

use nalgebra::Vector3;

use crate::error::{Error, Result};

/// Flat index of `(l, m)` in degree-major order.
pub fn lm_index(l: usize, m: i64) -> usize {
    ((l * l + l) as i64 + m) as usize
}

/// Number of harmonics with degree `≤ l_max`.
pub fn harmonic_count(l_max: usize) -> usize {
    (l_max + 1) * (l_max + 1)
}

/// All real harmonics `Y_l^m(v)` for `l ≤ l_max`, written at `lm_index(l, m)`.
///
/// Uses the fully normalized associated Legendre recurrence, stable well
/// past the degrees needed here.
pub fn real_harmonics_into(l_max: usize, v: &Vector3<f64>, out: &mut [f64]) {
    debug_assert!(out.len() >= harmonic_count(l_max));
    let x = v.z.clamp(-1.0, 1.0);
    let rho = (v.x * v.x + v.y * v.y).sqrt();
    let s = rho;
    let (cphi, sphi) = if rho > 0.0 { (v.x / rho, v.y / rho) } else { (1.0, 0.0) };

    // p[l][m] for the current m column, normalized so that Y_l^0 = p.
    let n = l_max + 1;
    let mut pmm = 1.0 / (4.0 * PI).sqrt();
    let (mut cm, mut sm) = (1.0, 0.0); // cos(mφ), sin(mφ)
    for m in 0..n {
        if m > 0 {
            let mf = m as f64;
            pmm *= ((2.0 * mf + 1.0) / (2.0 * mf)).sqrt() * s;
            let c_next = cm * cphi - sm * sphi;
            sm = sm * cphi + cm * sphi;
            cm = c_next;
        }
        let mut p_lm2 = 0.0;
        let mut p_lm1 = pmm;
        for l in m..n {
            let p = if l == m {
                pmm
            } else if l == m + 1 {
                (2.0 * m as f64 + 3.0).sqrt() * x * pmm
            } else {
                let lf = l as f64;
                let mf = m as f64;
                let a = ((4.0 * lf * lf - 1.0) / (lf * lf - mf * mf)).sqrt();
                let b = (((lf - 1.0) * (lf - 1.0) - mf * mf) / (4.0 * (lf - 1.0) * (lf - 1.0) - 1.0)).sqrt();
                a * (x * p_lm1 - b * p_lm2)
            };
            if l > m {
                p_lm2 = p_lm1;
                p_lm1 = p;
            }
            let base = l * l + l;
            if m == 0 {
                out[base] = p;
            } else {
                let r2 = std::f64::consts::SQRT_2 * p;
                out[base + m] = r2 * cm;
                out[base - m] = r2 * sm;
            }
        }
    }
}

/// Single real harmonic `Y_l^m` at a unit vector.
pub fn real_harmonic(l: usize, m: i64, v: &Vector3<f64>) -> Result<f64> {
    if m.unsigned_abs() as usize > l {
        return Err(Error::IndexOutOfRange { index: m.unsigned_abs() as usize, limit: l });
    }
    let mut buf = vec![0.0; harmonic_count(l)];
    real_harmonics_into(l, v, &mut buf);
    Ok(buf[lm_index(l, m)])
}
