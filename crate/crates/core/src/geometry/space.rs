use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::group::{row_major, GroupElement, GroupKind};
use super::linalg::{is_spd, rot_y, rot_z, spd_distance, spd_sqrt, sym_exp};
use crate::error::{Error, Result};

const MEMBERSHIP_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SpaceKind {
    Sphere2,
    PositiveHalfLine,
    /// `S² × R⁺` with the product metric.
    ProductS2RPlus,
    /// 3×3 symmetric positive definite matrices, affine-invariant metric.
    Spd3,
}

impl SpaceKind {
    pub fn group_kind(self) -> GroupKind {
        match self {
            SpaceKind::Sphere2 => GroupKind::So3,
            SpaceKind::PositiveHalfLine => GroupKind::Scale,
            SpaceKind::ProductS2RPlus => GroupKind::So3xScale,
            SpaceKind::Spd3 => GroupKind::Gl3,
        }
    }

    pub fn coord_len(self) -> usize {
        match self {
            SpaceKind::Sphere2 => 3,
            SpaceKind::PositiveHalfLine => 1,
            SpaceKind::ProductS2RPlus => 4,
            SpaceKind::Spd3 => 9,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ManifoldPoint {
    Sphere(Vector3<f64>),
    HalfLine(f64),
    Product(Vector3<f64>, f64),
    Spd(Matrix3<f64>),
}

fn check_unit(v: &Vector3<f64>) -> Result<()> {
    if (v.norm() - 1.0).abs() <= MEMBERSHIP_TOL {
        Ok(())
    } else {
        Err(Error::OffManifold(format!("|x| = {} on the sphere", v.norm())))
    }
}

fn check_positive(r: f64) -> Result<()> {
    if r.is_finite() && r > 0.0 {
        Ok(())
    } else {
        Err(Error::OffManifold(format!("radius {r} is not positive")))
    }
}

impl ManifoldPoint {
    pub fn sphere(v: Vector3<f64>) -> Result<Self> {
        check_unit(&v)?;
        Ok(ManifoldPoint::Sphere(v))
    }

    pub fn half_line(r: f64) -> Result<Self> {
        check_positive(r)?;
        Ok(ManifoldPoint::HalfLine(r))
    }

    pub fn product(v: Vector3<f64>, r: f64) -> Result<Self> {
        check_unit(&v)?;
        check_positive(r)?;
        Ok(ManifoldPoint::Product(v, r))
    }

    pub fn spd(m: Matrix3<f64>) -> Result<Self> {
        if !is_spd(&m, MEMBERSHIP_TOL) {
            return Err(Error::OffManifold("matrix is not symmetric positive definite".into()));
        }
        Ok(ManifoldPoint::Spd(m))
    }

    /// Unit vector at polar angle `theta` and azimuth `phi`.
    pub fn from_angles(theta: f64, phi: f64) -> Self {
        let (st, ct) = theta.sin_cos();
        let (sp, cp) = phi.sin_cos();
        ManifoldPoint::Sphere(Vector3::new(st * cp, st * sp, ct))
    }

    pub fn kind(&self) -> SpaceKind {
        match self {
            ManifoldPoint::Sphere(_) => SpaceKind::Sphere2,
            ManifoldPoint::HalfLine(_) => SpaceKind::PositiveHalfLine,
            ManifoldPoint::Product(..) => SpaceKind::ProductS2RPlus,
            ManifoldPoint::Spd(_) => SpaceKind::Spd3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ManifoldPoint::Sphere(v) => check_unit(v),
            ManifoldPoint::HalfLine(r) => check_positive(*r),
            ManifoldPoint::Product(v, r) => check_unit(v).and_then(|_| check_positive(*r)),
            ManifoldPoint::Spd(m) => ManifoldPoint::spd(*m).map(|_| ()),
        }
    }

    /// Direction component of sphere and product points.
    pub fn direction(&self) -> Option<&Vector3<f64>> {
        match self {
            ManifoldPoint::Sphere(v) | ManifoldPoint::Product(v, _) => Some(v),
            _ => None,
        }
    }

    pub fn radius(&self) -> Option<f64> {
        match self {
            ManifoldPoint::HalfLine(r) | ManifoldPoint::Product(_, r) => Some(*r),
            _ => None,
        }
    }

    pub fn coords(&self) -> Vec<f64> {
        match self {
            ManifoldPoint::Sphere(v) => v.iter().copied().collect(),
            ManifoldPoint::HalfLine(r) => vec![*r],
            ManifoldPoint::Product(v, r) => vec![v.x, v.y, v.z, *r],
            ManifoldPoint::Spd(m) => row_major(m),
        }
    }

    pub fn from_coords(kind: SpaceKind, c: &[f64]) -> Result<Self> {
        if c.len() != kind.coord_len() {
            return Err(Error::InvalidArgument(format!(
                "{kind:?} point needs {} coordinates, got {}",
                kind.coord_len(),
                c.len()
            )));
        }
        match kind {
            SpaceKind::Sphere2 => ManifoldPoint::sphere(Vector3::new(c[0], c[1], c[2])),
            SpaceKind::PositiveHalfLine => ManifoldPoint::half_line(c[0]),
            SpaceKind::ProductS2RPlus => ManifoldPoint::product(Vector3::new(c[0], c[1], c[2]), c[3]),
            SpaceKind::Spd3 => ManifoldPoint::spd(Matrix3::from_row_slice(c)),
        }
    }

    fn mismatch(&self, what: &str) -> Error {
        Error::InvalidArgument(format!("{what} incompatible with {:?} point", self.kind()))
    }

    /// Action `g.x`: rotation on the sphere, `r ↦ |a| r` on the half-line,
    /// componentwise on the product, and congruence `X ↦ g X gᵀ` on SPD(3).
    pub fn act(&self, g: &GroupElement) -> Result<ManifoldPoint> {
        Ok(match (self, g) {
            (ManifoldPoint::Sphere(v), GroupElement::Rotation(r)) => ManifoldPoint::Sphere(r * v),
            (ManifoldPoint::HalfLine(x), GroupElement::Scale(a)) => ManifoldPoint::HalfLine(a.abs() * x),
            (ManifoldPoint::Product(v, x), GroupElement::RotScale(r, a)) => {
                ManifoldPoint::Product(r * v, a.abs() * x)
            }
            (ManifoldPoint::Spd(m), GroupElement::General(a)) => {
                if a.determinant().abs() <= 1e-12 {
                    return Err(Error::SingularGroupElement);
                }
                let y = a * m * a.transpose();
                ManifoldPoint::Spd((y + y.transpose()) * 0.5)
            }
            _ => return Err(self.mismatch(&format!("{:?} element", g.kind()))),
        })
    }

    /// Riemannian distance. The sphere angle is computed as
    /// `atan2(|x × y|, x·y)`, which equals the clamped arccos of `x·y` but
    /// keeps full precision for nearby points.
    pub fn distance(&self, other: &ManifoldPoint) -> Result<f64> {
        Ok(match (self, other) {
            (ManifoldPoint::Sphere(a), ManifoldPoint::Sphere(b)) => sphere_angle(a, b),
            (ManifoldPoint::HalfLine(a), ManifoldPoint::HalfLine(b)) => (a.ln() - b.ln()).abs(),
            (ManifoldPoint::Product(a, r), ManifoldPoint::Product(b, s)) => {
                let d1 = sphere_angle(a, b);
                let d2 = r.ln() - s.ln();
                (d1 * d1 + d2 * d2).sqrt()
            }
            (ManifoldPoint::Spd(a), ManifoldPoint::Spd(b)) => spd_distance(a, b),
            _ => return Err(self.mismatch(&format!("{:?} point", other.kind()))),
        })
    }

    pub fn max_abs_diff(&self, other: &ManifoldPoint) -> f64 {
        self.coords()
            .iter()
            .zip(other.coords())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

pub(crate) fn sphere_angle(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    a.cross(b).norm().atan2(a.dot(b))
}

/// A manifold together with its symmetry group and a chosen origin.
#[derive(Clone, Debug, PartialEq)]
pub struct HomogeneousSpace {
    kind: SpaceKind,
    origin: ManifoldPoint,
}

impl HomogeneousSpace {
    /// The space with its canonical origin: north pole, `r = 1`, or `I₃`.
    pub fn new(kind: SpaceKind) -> Self {
        let origin = match kind {
            SpaceKind::Sphere2 => ManifoldPoint::Sphere(Vector3::z()),
            SpaceKind::PositiveHalfLine => ManifoldPoint::HalfLine(1.0),
            SpaceKind::ProductS2RPlus => ManifoldPoint::Product(Vector3::z(), 1.0),
            SpaceKind::Spd3 => ManifoldPoint::Spd(Matrix3::identity()),
        };
        HomogeneousSpace { kind, origin }
    }

    pub fn with_origin(origin: ManifoldPoint) -> Result<Self> {
        origin.validate()?;
        Ok(HomogeneousSpace { kind: origin.kind(), origin })
    }

    pub fn kind(&self) -> SpaceKind {
        self.kind
    }

    pub fn group_kind(&self) -> GroupKind {
        self.kind.group_kind()
    }

    pub fn origin(&self) -> &ManifoldPoint {
        &self.origin
    }

    fn check(&self, x: &ManifoldPoint) -> Result<()> {
        if x.kind() != self.kind {
            return Err(Error::InvalidArgument(format!(
                "{:?} point given to {:?} space",
                x.kind(),
                self.kind
            )));
        }
        x.validate()
    }

    pub fn act(&self, g: &GroupElement, x: &ManifoldPoint) -> Result<ManifoldPoint> {
        self.check(x)?;
        if g.kind() != self.group_kind() {
            return Err(Error::InvalidArgument(format!(
                "{:?} element does not act on {:?}",
                g.kind(),
                self.kind
            )));
        }
        x.act(g)
    }

    pub fn distance(&self, x: &ManifoldPoint, y: &ManifoldPoint) -> Result<f64> {
        self.check(x)?;
        self.check(y)?;
        x.distance(y)
    }

    /// Deterministic right inverse of `g ↦ g.o` for the canonical origin.
    ///
    /// Sphere points at polar angle θ and azimuth φ map to `Rz(φ) Ry(θ)`, with
    /// φ = 0 at the poles. SPD points map to their symmetric square root.
    pub fn section(&self, x: &ManifoldPoint) -> Result<GroupElement> {
        self.check(x)?;
        if self.origin != HomogeneousSpace::new(self.kind).origin {
            return Err(Error::InvalidArgument(
                "sections are defined for the canonical origin only".into(),
            ));
        }
        Ok(match x {
            ManifoldPoint::Sphere(v) => GroupElement::Rotation(sphere_section(v)),
            ManifoldPoint::HalfLine(r) => GroupElement::Scale(*r),
            ManifoldPoint::Product(v, r) => GroupElement::RotScale(sphere_section(v), *r),
            ManifoldPoint::Spd(m) => GroupElement::General(spd_sqrt(m)),
        })
    }

    /// A group element carrying `x` to `y`.
    pub fn transport(&self, x: &ManifoldPoint, y: &ManifoldPoint) -> Result<GroupElement> {
        let sy = self.section(y)?;
        let sx = self.section(x)?;
        sy.compose(&sx.inverse()?)
    }

    pub fn random_point<R: Rng + ?Sized>(&self, rng: &mut R) -> ManifoldPoint {
        random_point(self.kind, rng)
    }
}

fn sphere_section(v: &Vector3<f64>) -> Matrix3<f64> {
    let rho = (v.x * v.x + v.y * v.y).sqrt();
    let theta = rho.atan2(v.z);
    let phi = if rho < 1e-15 { 0.0 } else { v.y.atan2(v.x) };
    rot_z(phi) * rot_y(theta)
}

fn gaussian<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

pub fn random_unit_vector<R: Rng + ?Sized>(rng: &mut R) -> Vector3<f64> {
    loop {
        let v = Vector3::new(gaussian(rng), gaussian(rng), gaussian(rng));
        let n = v.norm();
        if n > 1e-8 {
            return v / n;
        }
    }
}

/// Symmetric matrix with N(0, 1) diagonal and N(0, 1/2) off-diagonal entries.
pub fn random_symmetric<R: Rng + ?Sized>(rng: &mut R) -> Matrix3<f64> {
    let mut z = Matrix3::zeros();
    for i in 0..3 {
        z[(i, i)] = gaussian(rng);
        for j in (i + 1)..3 {
            let v = gaussian(rng) * std::f64::consts::FRAC_1_SQRT_2;
            z[(i, j)] = v;
            z[(j, i)] = v;
        }
    }
    z
}

pub fn random_point<R: Rng + ?Sized>(kind: SpaceKind, rng: &mut R) -> ManifoldPoint {
    match kind {
        SpaceKind::Sphere2 => ManifoldPoint::Sphere(random_unit_vector(rng)),
        SpaceKind::PositiveHalfLine => ManifoldPoint::HalfLine(gaussian(rng).exp()),
        SpaceKind::ProductS2RPlus => {
            ManifoldPoint::Product(random_unit_vector(rng), (0.5 * gaussian(rng)).exp())
        }
        SpaceKind::Spd3 => ManifoldPoint::Spd(sym_exp(&(random_symmetric(rng) * 0.7))),
    }
}

/// Uniformly distributed rotation (via a normalized random quaternion).
pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> Matrix3<f64> {
    let q = nalgebra::Quaternion::new(gaussian(rng), gaussian(rng), gaussian(rng), gaussian(rng));
    nalgebra::UnitQuaternion::from_quaternion(q).to_rotation_matrix().into_inner()
}

pub fn random_group_element<R: Rng + ?Sized>(kind: GroupKind, rng: &mut R) -> GroupElement {
    match kind {
        GroupKind::So3 => GroupElement::Rotation(random_rotation(rng)),
        GroupKind::Scale => GroupElement::Scale((0.5 * gaussian(rng)).exp()),
        GroupKind::So3xScale => {
            GroupElement::RotScale(random_rotation(rng), (0.5 * gaussian(rng)).exp())
        }
        GroupKind::Gl3 => loop {
            let m = Matrix3::from_fn(|_, _| gaussian(rng));
            if m.determinant().abs() > 0.05 {
                return GroupElement::General(m);
            }
        },
    }
}
