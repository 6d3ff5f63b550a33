use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::linalg::{expm, is_rotation, logm, rotation_angle_between, so3_exp, so3_log};
use crate::error::{Error, Result};

/// Symmetry groups acting on the supported spaces.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GroupKind {
    So3,
    /// `R \ {0}`; acts on the half-line through the absolute value.
    Scale,
    So3xScale,
    Gl3,
}

impl GroupKind {
    pub fn algebra_dim(self) -> usize {
        match self {
            GroupKind::So3 => 3,
            GroupKind::Scale => 1,
            GroupKind::So3xScale => 4,
            GroupKind::Gl3 => 9,
        }
    }

    /// Number of reals in the flat serialization of an element.
    pub fn coord_len(self) -> usize {
        match self {
            GroupKind::So3 => 9,
            GroupKind::Scale => 1,
            GroupKind::So3xScale => 10,
            GroupKind::Gl3 => 9,
        }
    }
}

/// Coordinates in the Lie algebra of a group kind.
#[derive(Clone, Debug, PartialEq)]
pub struct AlgebraCoords(pub Vec<f64>);

impl AlgebraCoords {
    pub fn zeros(kind: GroupKind) -> Self {
        AlgebraCoords(vec![0.0; kind.algebra_dim()])
    }

    pub fn relu(&self) -> Self {
        AlgebraCoords(self.0.iter().map(|v| v.max(0.0)).collect())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum GroupElement {
    Rotation(Matrix3<f64>),
    Scale(f64),
    RotScale(Matrix3<f64>, f64),
    General(Matrix3<f64>),
}

const ROTATION_TOL: f64 = 1e-10;
const DET_FLOOR: f64 = 1e-12;

fn check_rotation(r: &Matrix3<f64>) -> Result<()> {
    if is_rotation(r, ROTATION_TOL) {
        Ok(())
    } else {
        Err(Error::InvalidArgument("matrix is not a proper rotation".into()))
    }
}

fn check_scale(s: f64) -> Result<()> {
    if s.is_finite() && s != 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("scale {s} must be finite and nonzero")))
    }
}

impl GroupElement {
    pub fn rotation(r: Matrix3<f64>) -> Result<Self> {
        check_rotation(&r)?;
        Ok(GroupElement::Rotation(r))
    }

    pub fn scale(s: f64) -> Result<Self> {
        check_scale(s)?;
        Ok(GroupElement::Scale(s))
    }

    pub fn rot_scale(r: Matrix3<f64>, s: f64) -> Result<Self> {
        check_rotation(&r)?;
        check_scale(s)?;
        Ok(GroupElement::RotScale(r, s))
    }

    pub fn general(m: Matrix3<f64>) -> Result<Self> {
        if !m.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("GL(3) element".into()));
        }
        if m.determinant().abs() <= DET_FLOOR {
            return Err(Error::SingularGroupElement);
        }
        Ok(GroupElement::General(m))
    }

    pub fn identity(kind: GroupKind) -> Self {
        match kind {
            GroupKind::So3 => GroupElement::Rotation(Matrix3::identity()),
            GroupKind::Scale => GroupElement::Scale(1.0),
            GroupKind::So3xScale => GroupElement::RotScale(Matrix3::identity(), 1.0),
            GroupKind::Gl3 => GroupElement::General(Matrix3::identity()),
        }
    }

    pub fn kind(&self) -> GroupKind {
        match self {
            GroupElement::Rotation(_) => GroupKind::So3,
            GroupElement::Scale(_) => GroupKind::Scale,
            GroupElement::RotScale(..) => GroupKind::So3xScale,
            GroupElement::General(_) => GroupKind::Gl3,
        }
    }

    /// Rotation part, if the element has one.
    pub fn rotation_part(&self) -> Option<&Matrix3<f64>> {
        match self {
            GroupElement::Rotation(r) | GroupElement::RotScale(r, _) => Some(r),
            _ => None,
        }
    }

    pub fn scale_part(&self) -> Option<f64> {
        match self {
            GroupElement::Scale(s) | GroupElement::RotScale(_, s) => Some(*s),
            _ => None,
        }
    }

    fn mismatch(&self, other: &GroupElement) -> Error {
        Error::InvalidArgument(format!(
            "group kind mismatch: {:?} vs {:?}",
            self.kind(),
            other.kind()
        ))
    }

    /// Group law `self · other`.
    pub fn compose(&self, other: &GroupElement) -> Result<GroupElement> {
        use GroupElement::*;
        Ok(match (self, other) {
            (Rotation(a), Rotation(b)) => Rotation(a * b),
            (Scale(a), Scale(b)) => Scale(a * b),
            (RotScale(a, s), RotScale(b, t)) => RotScale(a * b, s * t),
            (General(a), General(b)) => {
                let m = a * b;
                if m.determinant().abs() <= DET_FLOOR {
                    return Err(Error::SingularGroupElement);
                }
                General(m)
            }
            _ => return Err(self.mismatch(other)),
        })
    }

    pub fn inverse(&self) -> Result<GroupElement> {
        use GroupElement::*;
        Ok(match self {
            Rotation(r) => Rotation(r.transpose()),
            Scale(s) => Scale(1.0 / s),
            RotScale(r, s) => RotScale(r.transpose(), 1.0 / s),
            General(m) => {
                if m.determinant().abs() <= DET_FLOOR {
                    return Err(Error::SingularGroupElement);
                }
                General(m.try_inverse().ok_or(Error::SingularGroupElement)?)
            }
        })
    }

    /// Left-invariant distance: geodesic angle on SO(3), `|log|a|/|b||` on
    /// scales, the product metric on SO(3)×scale, and `‖log(g⁻¹h)‖_F` on GL(3).
    pub fn distance(&self, other: &GroupElement) -> Result<f64> {
        use GroupElement::*;
        match (self, other) {
            (Rotation(a), Rotation(b)) => Ok(rotation_angle_between(a, b)),
            (Scale(a), Scale(b)) => Ok((a.abs().ln() - b.abs().ln()).abs()),
            (RotScale(a, s), RotScale(b, t)) => {
                let dr = rotation_angle_between(a, b);
                let ds = s.abs().ln() - t.abs().ln();
                Ok((dr * dr + ds * ds).sqrt())
            }
            (General(_), General(_)) => {
                let rel = self.inverse()?.compose(other)?;
                match rel {
                    General(m) => Ok(logm(&m)?.norm()),
                    _ => unreachable!(),
                }
            }
            _ => Err(self.mismatch(other)),
        }
    }

    /// Exponential map from algebra coordinates.
    ///
    /// Layouts: so(3) is a rotation vector; scale is `log|s|`; so(3)⊕R is the
    /// rotation vector followed by `log|s|`; gl(3) is a row-major 3×3 matrix.
    pub fn exp(kind: GroupKind, v: &AlgebraCoords) -> Result<GroupElement> {
        let c = &v.0;
        if c.len() != kind.algebra_dim() {
            return Err(Error::InvalidArgument(format!(
                "{kind:?} algebra has dimension {}, got {}",
                kind.algebra_dim(),
                c.len()
            )));
        }
        if !c.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite("algebra coordinates".into()));
        }
        Ok(match kind {
            GroupKind::So3 => GroupElement::Rotation(so3_exp(&Vector3::new(c[0], c[1], c[2]))),
            GroupKind::Scale => GroupElement::Scale(c[0].exp()),
            GroupKind::So3xScale => {
                GroupElement::RotScale(so3_exp(&Vector3::new(c[0], c[1], c[2])), c[3].exp())
            }
            GroupKind::Gl3 => GroupElement::General(expm(&Matrix3::from_row_slice(c))),
        })
    }

    /// Logarithm map. The sign of a scale is dropped, so `exp(log(g)) = g`
    /// holds on the identity component; GL(3) elements outside the principal
    /// log domain fail with a log-branch error.
    pub fn log(&self) -> Result<AlgebraCoords> {
        Ok(match self {
            GroupElement::Rotation(r) => AlgebraCoords(so3_log(r).iter().copied().collect()),
            GroupElement::Scale(s) => AlgebraCoords(vec![s.abs().ln()]),
            GroupElement::RotScale(r, s) => {
                let w = so3_log(r);
                AlgebraCoords(vec![w.x, w.y, w.z, s.abs().ln()])
            }
            GroupElement::General(m) => {
                let l = logm(m)?;
                AlgebraCoords(row_major(&l))
            }
        })
    }

    /// Flat row-major coordinates used by the on-disk format.
    pub fn to_coords(&self) -> Vec<f64> {
        match self {
            GroupElement::Rotation(r) | GroupElement::General(r) => row_major(r),
            GroupElement::Scale(s) => vec![*s],
            GroupElement::RotScale(r, s) => {
                let mut v = row_major(r);
                v.push(*s);
                v
            }
        }
    }

    pub fn from_coords(kind: GroupKind, c: &[f64]) -> Result<GroupElement> {
        if c.len() != kind.coord_len() {
            return Err(Error::InvalidArgument(format!(
                "{kind:?} element needs {} coordinates, got {}",
                kind.coord_len(),
                c.len()
            )));
        }
        match kind {
            GroupKind::So3 => GroupElement::rotation(Matrix3::from_row_slice(c)),
            GroupKind::Scale => GroupElement::scale(c[0]),
            GroupKind::So3xScale => GroupElement::rot_scale(Matrix3::from_row_slice(&c[..9]), c[9]),
            GroupKind::Gl3 => GroupElement::general(Matrix3::from_row_slice(c)),
        }
    }

    /// Largest absolute coordinate difference, for tolerance checks.
    pub fn max_abs_diff(&self, other: &GroupElement) -> f64 {
        self.to_coords()
            .iter()
            .zip(other.to_coords())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

pub(crate) fn row_major(m: &Matrix3<f64>) -> Vec<f64> {
    let mut v = Vec::with_capacity(9);
    for i in 0..3 {
        for j in 0..3 {
            v.push(m[(i, j)]);
        }
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::linalg::rot_z;

    #[test]
    fn rotations_about_z_add() {
        let a = GroupElement::Rotation(rot_z(0.3));
        let b = GroupElement::Rotation(rot_z(1.1));
        let c = a.compose(&b).unwrap();
        assert!(c.max_abs_diff(&GroupElement::Rotation(rot_z(1.4))) < 1e-15);
    }

    #[test]
    fn inverse_of_rz_is_negative_angle() {
        let g = GroupElement::Rotation(rot_z(0.8));
        let inv = g.inverse().unwrap();
        assert!(inv.max_abs_diff(&GroupElement::Rotation(rot_z(-0.8))) < 1e-15);
        let id = GroupElement::identity(GroupKind::So3);
        assert_eq!(id.inverse().unwrap(), id);
    }

    #[test]
    fn gl_inverse_solves_linear_system() {
        let m = Matrix3::new(2.0, 1.0, 0.5, -0.3, 1.5, 0.2, 0.7, 0.1, 3.0);
        let inv = match GroupElement::general(m).unwrap().inverse().unwrap() {
            GroupElement::General(x) => x,
            _ => unreachable!(),
        };
        // Gaussian elimination with partial pivoting, column by column.
        for col in 0..3 {
            let mut a = [[0.0f64; 4]; 3];
            for i in 0..3 {
                for j in 0..3 {
                    a[i][j] = m[(i, j)];
                }
                a[i][3] = if i == col { 1.0 } else { 0.0 };
            }
            for p in 0..3 {
                let piv = (p..3).max_by(|&x, &y| a[x][p].abs().total_cmp(&a[y][p].abs())).unwrap();
                a.swap(p, piv);
                for r in (p + 1)..3 {
                    let f = a[r][p] / a[p][p];
                    for c in p..4 {
                        a[r][c] -= f * a[p][c];
                    }
                }
            }
            let mut x = [0.0; 3];
            for i in (0..3).rev() {
                let s: f64 = ((i + 1)..3).map(|j| a[i][j] * x[j]).sum();
                x[i] = (a[i][3] - s) / a[i][i];
            }
            for i in 0..3 {
                assert!((inv[(i, col)] - x[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn singular_gl_is_rejected() {
        let m = Matrix3::new(1.0, 2.0, 3.0, 2.0, 4.0, 6.0, 0.0, 0.0, 1.0);
        assert!(matches!(GroupElement::general(m), Err(Error::SingularGroupElement)));
    }

    #[test]
    fn kind_mismatch_is_an_error() {
        let a = GroupElement::Scale(2.0);
        let b = GroupElement::Rotation(Matrix3::identity());
        assert!(matches!(a.compose(&b), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn log_of_identity_is_zero() {
        for kind in [GroupKind::So3, GroupKind::Scale, GroupKind::So3xScale, GroupKind::Gl3] {
            let l = GroupElement::identity(kind).log().unwrap();
            assert_eq!(l, AlgebraCoords::zeros(kind));
        }
    }

    #[test]
    fn so3_exp_of_z_coordinates_is_rz() {
        let g = GroupElement::exp(GroupKind::So3, &AlgebraCoords(vec![0.0, 0.0, 1.2])).unwrap();
        assert!(g.max_abs_diff(&GroupElement::Rotation(rot_z(1.2))) < 1e-15);
    }
}
