use nalgebra::{Matrix3, Quaternion, Rotation3, UnitQuaternion, Vector3};

use crate::error::GeometryError;
use crate::geometry::shape::{MassProperties, ParticleShape};
use crate::scalar::{lit, Real};

/// Unit quaternion orientation, body frame to world frame.
pub type Orientation<T> = UnitQuaternion<T>;

/// Re-normalizes a quaternion that has drifted off the unit sphere.
pub fn renormalize<T: Real>(q: &Orientation<T>) -> Orientation<T> {
    UnitQuaternion::new_normalize(q.into_inner())
}

/// Builds an orientation from scalar-first components, normalizing them.
pub fn orientation_from_wxyz<T: Real>(w: T, x: T, y: T, z: T) -> Orientation<T> {
    UnitQuaternion::new_normalize(Quaternion::new(w, x, y, z))
}

/// A rigid grain: shape, pose and mass properties.
///
/// `position` is the composite centroid. For poly-ellipsoids the octant
/// junction sits at `position - R * centroid_offset`.
#[derive(Debug, Clone, PartialEq)]
pub struct Particle<T: Real> {
    pub id: usize,
    pub shape: ParticleShape<T>,
    pub position: Vector3<T>,
    pub orientation: Orientation<T>,
    pub density: T,
    pub mass: T,
    /// Inertia tensor about the centroid in the body frame.
    pub inertia: Matrix3<T>,
    pub centroid_offset: Vector3<T>,
    /// Cached enclosing radius about the centroid.
    pub bound_radius: T,
    /// Cached volume-equivalent radius.
    pub eq_radius: T,
}

impl<T: Real> Particle<T> {
    /// Particle at the origin with identity orientation.
    pub fn new(id: usize, shape: ParticleShape<T>, density: T) -> Result<Self, GeometryError> {
        if !(density > T::zero()) {
            return Err(GeometryError::InvalidDensity(crate::scalar::to_f64(density)));
        }
        let MassProperties {
            mass,
            inertia,
            centroid_offset,
        } = shape.mass_properties(density);
        Ok(Self {
            id,
            shape,
            position: Vector3::zeros(),
            orientation: UnitQuaternion::identity(),
            density,
            mass,
            inertia,
            centroid_offset,
            bound_radius: shape.circumscribing_radius(&centroid_offset),
            eq_radius: shape.equivalent_radius(),
        })
    }

    pub fn with_pose(mut self, position: Vector3<T>, orientation: Orientation<T>) -> Self {
        self.position = position;
        self.orientation = orientation;
        self
    }

    pub fn volume(&self) -> T {
        self.shape.volume()
    }

    #[inline]
    pub fn equivalent_radius(&self) -> T {
        self.eq_radius
    }

    pub fn principal_moments(&self) -> [T; 3] {
        MassProperties {
            mass: self.mass,
            inertia: self.inertia,
            centroid_offset: self.centroid_offset,
        }
        .principal_moments()
    }

    #[inline]
    pub fn rotation(&self) -> Rotation3<T> {
        self.orientation.to_rotation_matrix()
    }

    /// World position of the octant junction point.
    pub fn junction(&self) -> Vector3<T> {
        self.position - self.orientation * self.centroid_offset
    }

    /// Maps a world point into the shape (junction) frame.
    #[inline]
    pub fn to_shape_frame(&self, world: &Vector3<T>) -> Vector3<T> {
        self.orientation.inverse_transform_vector(&(world - self.position)) + self.centroid_offset
    }

    #[inline]
    pub fn to_world(&self, local: &Vector3<T>) -> Vector3<T> {
        self.position + self.orientation * (local - self.centroid_offset)
    }

    /// World support point along world direction `u` and its support value.
    #[inline]
    pub fn support(&self, u: &Vector3<T>) -> (Vector3<T>, T) {
        let rot = self.rotation();
        self.support_with(&rot, u)
    }

    #[inline]
    pub(crate) fn support_with(&self, rot: &Rotation3<T>, u: &Vector3<T>) -> (Vector3<T>, T) {
        let ul = rot.inverse_transform_vector(u);
        let (xl, _) = self.shape.support(&ul);
        let x = self.position + rot * (xl - self.centroid_offset);
        let h = x.dot(u);
        (x, h)
    }

    /// Implicit surface value of a world point (negative inside).
    pub fn implicit(&self, world: &Vector3<T>) -> T {
        self.shape.implicit(&self.to_shape_frame(world))
    }

    /// Surface residual of a world point, in units of the local semi-length.
    pub fn surface_residual(&self, world: &Vector3<T>) -> T {
        // implicit = |x/l|^2 - 1, so a radial error e gives ~ 2 e / l
        self.implicit(world).abs() / lit(2.0)
    }

    /// Mean-curvature radius of the surface at a world point.
    pub fn curvature_radius_at(&self, world: &Vector3<T>) -> Option<T> {
        self.shape.mean_curvature_radius(&self.to_shape_frame(world))
    }
}
