//! Sampled functions, orthogonal bases and smooth masks on spaces and groups.

pub mod basis;
pub mod function;
pub mod harmonics;
pub mod mask;
pub mod radial;

pub use basis::{
    circle_grid, gram_matrix, induce_basis, shore_basis, Basis, CircleFourier, GramReport,
    InducedBasis, RadialBasis, RandomRotationFunctions, ShoreBasis, SphericalHarmonics,
};
pub use function::{fit_coefficients, synthesize, Band, GroupFunction, SampledFunction};
pub use harmonics::{harmonic_count, lm_index, real_harmonic};
pub use mask::{group_anchors, manifold_anchors, BumpMask, BumpRows};
pub use radial::{invariant_radial, laguerre, radial};
