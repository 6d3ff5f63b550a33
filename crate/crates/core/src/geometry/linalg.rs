//! Small dense 3×3 matrix functions: rotations, symmetric spectral calculus,
//! and the general matrix exponential / principal logarithm.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};

use crate::error::{Error, Result};

/// Eigenvalue floor used before taking logs or inverse square roots of SPD matrices.
pub const EIGEN_FLOOR: f64 = 1e-12;

pub fn rot_x(theta: f64) -> Matrix3<f64> {
    let (s, c) = theta.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

pub fn rot_y(theta: f64) -> Matrix3<f64> {
    let (s, c) = theta.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

pub fn rot_z(theta: f64) -> Matrix3<f64> {
    let (s, c) = theta.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// ZYZ Euler rotation `Rz(alpha) Ry(beta) Rz(gamma)`.
pub fn euler_zyz(alpha: f64, beta: f64, gamma: f64) -> Matrix3<f64> {
    rot_z(alpha) * rot_y(beta) * rot_z(gamma)
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rodrigues formula: rotation by angle `|v|` about `v / |v|`.
pub fn so3_exp(v: &Vector3<f64>) -> Matrix3<f64> {
    let theta = v.norm();
    let k = skew(v);
    let k2 = k * k;
    let (a, b) = if theta < 1e-6 {
        let t2 = theta * theta;
        (1.0 - t2 / 6.0 + t2 * t2 / 120.0, 0.5 - t2 / 24.0 + t2 * t2 / 720.0)
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / (theta * theta))
    };
    Matrix3::identity() + k * a + k2 * b
}

/// Rotation vector of `r` with angle in `[0, π]`.
///
/// Near angle π the axis is recovered from the symmetric part; its sign follows the
/// residual skew part when one is measurable and otherwise the first nonzero
/// component is made positive.
pub fn so3_log(r: &Matrix3<f64>) -> Vector3<f64> {
    let v = Vector3::new(
        r[(2, 1)] - r[(1, 2)],
        r[(0, 2)] - r[(2, 0)],
        r[(1, 0)] - r[(0, 1)],
    ) * 0.5;
    let s = v.norm();
    let c = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = s.atan2(c);
    if theta < 1e-6 {
        return v * (1.0 + theta * theta / 6.0);
    }
    if std::f64::consts::PI - theta > 1e-3 {
        return v * (theta / s);
    }
    // Symmetric part is cos θ I + (1 - cos θ) a aᵀ.
    let cos_t = theta.cos();
    let b = ((r + r.transpose()) * 0.5 - Matrix3::identity() * cos_t) / (1.0 - cos_t);
    let mut col = 0;
    for j in 1..3 {
        if b[(j, j)] > b[(col, col)] {
            col = j;
        }
    }
    let mut axis = b.column(col).into_owned();
    axis /= axis.norm();
    let flip = if s > 1e-12 {
        axis.dot(&v) < 0.0
    } else {
        let first = axis.iter().copied().find(|x| x.abs() > 1e-12).unwrap_or(1.0);
        first < 0.0
    };
    if flip {
        axis = -axis;
    }
    axis * theta
}

/// Geodesic angle between two rotations.
pub fn rotation_angle_between(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    so3_log(&(a.transpose() * b)).norm()
}

pub fn is_rotation(r: &Matrix3<f64>, tol: f64) -> bool {
    let e = r.transpose() * r - Matrix3::identity();
    e.amax() < tol && r.determinant() > 0.0
}

fn sym_spectral(x: &Matrix3<f64>, f: impl Fn(f64) -> f64) -> Matrix3<f64> {
    let sym = (x + x.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let d = Matrix3::from_diagonal(&eig.eigenvalues.map(f));
    let v = eig.eigenvectors;
    let out = v * d * v.transpose();
    (out + out.transpose()) * 0.5
}

pub fn sym_eigenvalues(x: &Matrix3<f64>) -> Vector3<f64> {
    let sym = (x + x.transpose()) * 0.5;
    SymmetricEigen::new(sym).eigenvalues
}

pub fn spd_sqrt(x: &Matrix3<f64>) -> Matrix3<f64> {
    sym_spectral(x, |l| l.max(EIGEN_FLOOR).sqrt())
}

pub fn spd_inv_sqrt(x: &Matrix3<f64>) -> Matrix3<f64> {
    sym_spectral(x, |l| 1.0 / l.max(EIGEN_FLOOR).sqrt())
}

pub fn spd_log(x: &Matrix3<f64>) -> Matrix3<f64> {
    sym_spectral(x, |l| l.max(EIGEN_FLOOR).ln())
}

pub fn sym_exp(x: &Matrix3<f64>) -> Matrix3<f64> {
    sym_spectral(x, f64::exp)
}

/// Affine-invariant distance `‖Log(X^{-1/2} Y X^{-1/2})‖_F`.
pub fn spd_distance(x: &Matrix3<f64>, y: &Matrix3<f64>) -> f64 {
    let w = spd_inv_sqrt(x);
    let m = w * y * w;
    sym_eigenvalues(&m)
        .iter()
        .map(|l| l.max(EIGEN_FLOOR).ln().powi(2))
        .sum::<f64>()
        .sqrt()
}

pub fn is_spd(x: &Matrix3<f64>, tol: f64) -> bool {
    (x - x.transpose()).amax() <= tol * x.amax().max(1.0) && x.cholesky().is_some()
}

fn one_norm(a: &Matrix3<f64>) -> f64 {
    (0..3)
        .map(|j| (0..3).map(|i| a[(i, j)].abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// General matrix exponential by scaling and squaring with a truncated Taylor core.
pub fn expm(a: &Matrix3<f64>) -> Matrix3<f64> {
    let norm = one_norm(a);
    let squarings = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as i32
    } else {
        0
    };
    let scaled = a / 2f64.powi(squarings);
    let mut term = Matrix3::identity();
    let mut sum = Matrix3::identity();
    for k in 1..=18 {
        term = term * scaled / k as f64;
        sum += term;
    }
    for _ in 0..squarings {
        sum = sum * sum;
    }
    sum
}

fn has_negative_real_eigenvalue(a: &Matrix3<f64>) -> bool {
    let scale = a.amax().max(1e-300);
    a.complex_eigenvalues()
        .iter()
        .any(|l| l.im.abs() <= 1e-12 * scale && l.re <= 1e-14 * scale)
}

/// Principal matrix logarithm by inverse scaling and squaring.
///
/// Fails with [`Error::LogBranch`] when `a` has an eigenvalue on the closed
/// negative real axis (including zero).
pub fn logm(a: &Matrix3<f64>) -> Result<Matrix3<f64>> {
    if !a.iter().all(|x| x.is_finite()) {
        return Err(Error::NonFinite("matrix logarithm input".into()));
    }
    if has_negative_real_eigenvalue(a) {
        return Err(Error::LogBranch(
            "matrix has an eigenvalue on the closed negative real axis".into(),
        ));
    }
    let id = Matrix3::identity();
    let mut x = *a;
    let mut roots = 0;
    while one_norm(&(x - id)) > 0.25 {
        if roots > 60 {
            return Err(Error::LogBranch("square-root iteration did not settle".into()));
        }
        x = sqrtm_db(&x)?;
        roots += 1;
    }
    // Gregory series: log X = 2 atanh((X - I)(X + I)^{-1}).
    let inv = (x + id)
        .try_inverse()
        .ok_or_else(|| Error::LogBranch("singular (X + I) in log series".into()))?;
    let z = (x - id) * inv;
    let z2 = z * z;
    let mut term = z;
    let mut sum = z;
    for k in 1..30 {
        term *= z2;
        let add = term / (2 * k + 1) as f64;
        sum += add;
        if add.amax() < 1e-18 {
            break;
        }
    }
    Ok(sum * (2.0 * 2f64.powi(roots)))
}

/// Principal square root by the Denman–Beavers iteration.
fn sqrtm_db(a: &Matrix3<f64>) -> Result<Matrix3<f64>> {
    let mut y = *a;
    let mut z = Matrix3::identity();
    for _ in 0..100 {
        let yi = y
            .try_inverse()
            .ok_or(Error::SingularGroupElement)?;
        let zi = z
            .try_inverse()
            .ok_or(Error::SingularGroupElement)?;
        let y_next = (y + zi) * 0.5;
        let z_next = (z + yi) * 0.5;
        let delta = (y_next - y).amax();
        y = y_next;
        z = z_next;
        if delta <= 1e-15 * y.amax().max(1.0) {
            return Ok(y);
        }
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn taylor_exp(a: &Matrix3<f64>) -> Matrix3<f64> {
        let mut term = Matrix3::identity();
        let mut sum = Matrix3::identity();
        for k in 1..60 {
            term = term * a / k as f64;
            sum += term;
        }
        sum
    }

    #[test]
    fn rodrigues_matches_axis_rotation() {
        let r = so3_exp(&Vector3::new(0.0, 0.0, 0.7));
        assert!((r - rot_z(0.7)).amax() < 1e-15);
    }

    #[test]
    fn so3_log_near_pi_roundtrips() {
        let axis = Vector3::new(1.0, -2.0, 0.5).normalize();
        for theta in [PI - 1e-9, PI - 1e-5, PI] {
            let r = so3_exp(&(axis * theta));
            let back = so3_exp(&so3_log(&r));
            assert!((back - r).amax() < 1e-9, "theta={theta}");
        }
    }

    #[test]
    fn expm_matches_series_for_small_matrices() {
        let a = Matrix3::new(0.1, -0.3, 0.2, 0.05, -0.2, 0.4, 0.3, 0.1, 0.0);
        assert!((expm(&a) - taylor_exp(&a)).amax() < 1e-14);
        let big = a * 9.0;
        assert!((expm(&big) - taylor_exp(&big)).amax() / taylor_exp(&big).amax() < 1e-12);
    }

    #[test]
    fn logm_rejects_negative_eigenvalues() {
        let m = Matrix3::from_diagonal(&Vector3::new(-1.0, 2.0, 3.0));
        assert!(matches!(logm(&m), Err(Error::LogBranch(_))));
        assert!(matches!(logm(&rot_z(PI)), Err(Error::LogBranch(_))));
    }

    #[test]
    fn spd_distance_closed_form() {
        let y = Matrix3::from_diagonal(&Vector3::new(2f64.exp(), 1.0, 1.0));
        assert!((spd_distance(&Matrix3::identity(), &y) - 2.0).abs() < 1e-12);
    }
}
