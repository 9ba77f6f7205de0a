//! Shapes, poses, mass properties and contact detection.

pub mod broad_phase;
pub mod contact;
pub mod particle;
pub mod shape;

pub use broad_phase::{broad_phase, CandidatePair, DomainSpec};
pub use contact::{
    detect_contact, detect_contact_shifted, detect_wall_contact, pair_overlap, signed_distance_overlap, Contact,
    ContactError, ContactSettings, PairOverlap, Partner, Wall,
};
pub use particle::{orientation_from_wxyz, renormalize, Orientation, Particle};
pub use shape::{MassProperties, ParticleShape, ShapeKind};

use crate::scalar::Real;

/// Depth normalised by the sum of volume-equivalent radii (walls: the
/// particle's own equivalent radius).
pub fn relative_overlap<T: Real>(c: &Contact<T>, pi: &Particle<T>, pj: Option<&Particle<T>>) -> T {
    let denom = match pj {
        Some(pj) => pi.equivalent_radius() + pj.equivalent_radius(),
        None => pi.equivalent_radius(),
    };
    c.depth / denom
}
