//! Ensemble average propagator by direct summation of the Fourier integral
//! over a `S²×R⁺` grid of q-space samples.

use std::sync::Arc;

use nalgebra::Vector3;
use ndarray::Array2;

use crate::error::{Error, Result};
use crate::geometry::{ManifoldGrid, ManifoldPoint};
use crate::signal::SampledFunction;

fn cartesian(grid: &ManifoldGrid) -> Result<Vec<Vector3<f64>>> {
    grid.nodes()
        .iter()
        .map(|p| match p {
            ManifoldPoint::Product(u, r) => Ok(u * *r),
            _ => Err(Error::InvalidArgument("EAP grids must live on S²×R⁺".into())),
        })
        .collect()
}

/// Volume weights `wᵢ qᵢ³`: grid weights integrate against `dΩ dq/q`, and the
/// Euclidean volume element is `q² dq dΩ`.
pub fn volume_weights(grid: &ManifoldGrid) -> Result<Vec<f64>> {
    Ok(cartesian(grid)?.iter().zip(grid.weights()).map(|(q, w)| w * q.norm().powi(3)).collect())
}

/// `C[j, i] = wᵢ qᵢ³ cos(2π qᵢ·rⱼ)`, so that `P = S Cᵀ` row by row.
pub fn eap_matrix(q_grid: &ManifoldGrid, r_grid: &ManifoldGrid) -> Result<Array2<f64>> {
    let q = cartesian(q_grid)?;
    let r = cartesian(r_grid)?;
    let w = volume_weights(q_grid)?;
    Ok(Array2::from_shape_fn((r.len(), q.len()), |(j, i)| {
        w[i] * (std::f64::consts::TAU * q[i].dot(&r[j])).cos()
    }))
}

/// `P(r) = Σᵢ wᵢ qᵢ³ S(qᵢ) cos(2π qᵢ·r)`, the real part of the 3D Fourier
/// transform for antipodally symmetric signals.
pub fn eap_transform(
    s: &SampledFunction<ManifoldPoint>,
    r_grid: Arc<ManifoldGrid>,
) -> Result<SampledFunction<ManifoldPoint>> {
    let c = eap_matrix(s.grid(), &r_grid)?;
    SampledFunction::new(r_grid, s.values().dot(&c.t()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_grid, GridSpec, RadialSpec};
    use std::f64::consts::PI;

    fn grid(order: usize, nodes: usize) -> Arc<ManifoldGrid> {
        Arc::new(build_grid(&GridSpec::Product { order, radial: RadialSpec::new(nodes) }).unwrap())
    }

    fn gaussian(g: &Arc<ManifoldGrid>, a: f64) -> SampledFunction<ManifoldPoint> {
        let v: Vec<f64> = cartesian(g).unwrap().iter().map(|q| (-q.norm_squared() / (2.0 * a * a)).exp()).collect();
        SampledFunction::new(g.clone(), Array2::from_shape_vec((1, v.len()), v).unwrap()).unwrap()
    }

    #[test]
    fn zero_origin_and_linearity() {
        let q = grid(6, 24);
        let r = Arc::new(
            build_grid(&GridSpec::Product { order: 2, radial: RadialSpec { nodes: 3, log_min: -2.0, log_max: 0.0 } })
                .unwrap(),
        );
        let zero = SampledFunction::zeros(q.clone(), 2);
        assert!(eap_transform(&zero, r.clone()).unwrap().values().iter().all(|v| *v == 0.0));
        let (s1, s2) = (gaussian(&q, 0.4), gaussian(&q, 1.1));
        let lhs = eap_transform(&s1.linear_combination(2.0, &s2, -0.5).unwrap(), r.clone()).unwrap();
        let rhs = eap_transform(&s1, r.clone()).unwrap().linear_combination(2.0, &eap_transform(&s2, r.clone()).unwrap(), -0.5).unwrap();
        assert!((lhs.values() - rhs.values()).iter().all(|d| d.abs() < 1e-12));
        // At r → 0 the kernel is the weight itself.
        let origin = Arc::new(ManifoldGrid::from_parts(vec![ManifoldPoint::Product(Vector3::z(), 1e-300)], vec![1.0]).unwrap());
        let p0 = eap_transform(&s1, origin).unwrap().values()[[0, 0]];
        let direct: f64 = volume_weights(&q).unwrap().iter().zip(s1.values().row(0)).map(|(w, s)| w * s).sum();
        assert!((p0 - direct).abs() <= 1e-14 * direct.abs());
    }

    #[test]
    fn gaussian_pair_widths_are_reciprocal() {
        let a: f64 = 0.3;
        let q = grid(12, 64);
        let p0_exact = (2.0 * PI).powf(1.5) * a.powi(3);
        let width = 1.0 / (2.0 * PI * a);
        let probes: Vec<ManifoldPoint> =
            [0.5, 1.0, 1.5].iter().map(|k| ManifoldPoint::Product(Vector3::new(1.0, 2.0, 2.0) / 3.0, k * width)).collect();
        let n = probes.len();
        let r = Arc::new(ManifoldGrid::from_parts(probes, vec![1.0; n]).unwrap());
        let p = eap_transform(&gaussian(&q, a), r).unwrap();
        for (i, k) in [0.5f64, 1.0, 1.5].iter().enumerate() {
            let ratio = p.values()[[0, i]] / p0_exact;
            let fitted = k * width / (-2.0 * ratio.ln()).sqrt();
            assert!((fitted / width - 1.0).abs() < 0.1, "{fitted} vs {width}");
        }
    }
}
