//! Random packings of spheres, ellipsoids and poly-ellipsoids.
//!
//! Two generators share one particle assembly: a Monte Carlo overlap
//! relaxation ([`mc`]) and a DEM gravitational deposition ([`dem`]). The
//! [`metrics`] module measures and compares the resulting microstructures.
//!
//! Numeric kernels are generic over [`Real`] (`f32`, `f64`); the aliases at
//! the crate root fix the scalar to `f64`, which is what the file formats and
//! the command line use.

pub mod dem;
pub mod distribution;
pub mod error;
pub mod geometry;
pub mod io;
pub mod mc;
pub mod metrics;
pub mod snapshot;
pub mod scalar;

pub use scalar::{lit, Real};

pub type Vec3 = nalgebra::Vector3<f64>;
pub type Particle = geometry::Particle<f64>;
pub type ParticleShape = geometry::ParticleShape<f64>;
pub type Contact = geometry::Contact<f64>;
