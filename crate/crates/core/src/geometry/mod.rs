//! Homogeneous spaces, their symmetry groups, and quadrature.

pub mod group;
pub mod linalg;
pub mod quadrature;
pub mod space;

use std::fmt::Debug;

pub use group::{AlgebraCoords, GroupElement, GroupKind};
pub use quadrature::{
    build_grid, gauss_laguerre, gauss_laguerre_lebesgue, gauss_legendre, grid_symmetries, haar_grid, GridSpec,
    GroupGrid, ManifoldGrid, QuadratureGrid, RadialSpec, ScaleSpec,
};
pub use space::{HomogeneousSpace, ManifoldPoint, SpaceKind};

use nalgebra::{Matrix3, Vector3};

use crate::error::Result;
use linalg::rotation_angle_between;
use space::sphere_angle;

/// The compact factor of a point of `S²×R⁺` or an element of SO(3)×scale.
#[derive(Clone, Copy, Debug)]
pub enum CompactPart {
    Direction(Vector3<f64>),
    Rotation(Matrix3<f64>),
}

impl CompactPart {
    /// Geodesic distance between two parts of the same kind.
    pub fn distance(&self, other: &CompactPart) -> f64 {
        match (self, other) {
            (CompactPart::Direction(a), CompactPart::Direction(b)) => sphere_angle(a, b),
            (CompactPart::Rotation(a), CompactPart::Rotation(b)) => rotation_angle_between(a, b),
            _ => f64::NAN,
        }
    }
}

/// Something a group acts on from the left with an invariant distance:
/// points of a homogeneous space, or elements of the group itself.
pub trait Site: Clone + Debug + Send + Sync + 'static {
    fn distance_to(&self, other: &Self) -> Result<f64>;
    /// `g.x` for points, `g·h` for group elements.
    fn translate(&self, g: &GroupElement) -> Result<Self>;
    fn coords(&self) -> Vec<f64>;
    /// The group whose elements translate this site.
    fn acting_group(&self) -> GroupKind;
    /// `(compact part, |scale|)` for sites whose distance splits as
    /// `√(d_compact² + log²(ratio))`.
    fn product_parts(&self) -> Option<(CompactPart, f64)> {
        None
    }
}

impl Site for ManifoldPoint {
    fn distance_to(&self, other: &Self) -> Result<f64> {
        self.distance(other)
    }

    fn translate(&self, g: &GroupElement) -> Result<Self> {
        self.act(g)
    }

    fn coords(&self) -> Vec<f64> {
        ManifoldPoint::coords(self)
    }

    fn acting_group(&self) -> GroupKind {
        self.kind().group_kind()
    }

    fn product_parts(&self) -> Option<(CompactPart, f64)> {
        match self {
            ManifoldPoint::Product(v, r) => Some((CompactPart::Direction(*v), *r)),
            _ => None,
        }
    }
}

impl Site for GroupElement {
    fn distance_to(&self, other: &Self) -> Result<f64> {
        self.distance(other)
    }

    fn translate(&self, g: &GroupElement) -> Result<Self> {
        g.compose(self)
    }

    fn coords(&self) -> Vec<f64> {
        self.to_coords()
    }

    fn acting_group(&self) -> GroupKind {
        self.kind()
    }

    fn product_parts(&self) -> Option<(CompactPart, f64)> {
        match self {
            GroupElement::RotScale(r, s) => Some((CompactPart::Rotation(*r), s.abs())),
            _ => None,
        }
    }
}
