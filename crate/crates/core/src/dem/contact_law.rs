//! Hertz-Mindlin contact law with Coulomb slip and viscous normal damping.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::DemError;
use crate::geometry::Contact;
use crate::scalar::{lit, Real};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Material {
    /// Young's modulus (Pa).
    pub youngs_modulus: f64,
    pub poisson_ratio: f64,
    pub friction_coefficient: f64,
    /// Viscous normal damping ratio.
    pub damping_ratio: f64,
}

impl Default for Material {
    fn default() -> Self {
        Self {
            youngs_modulus: 1e8,
            poisson_ratio: 0.3,
            friction_coefficient: 0.5,
            damping_ratio: 0.3,
        }
    }
}

impl Material {
    pub fn validate(&self) -> Result<(), DemError> {
        let bad = |m: &str| Err(DemError::InvalidConfig(m.to_string()));
        if !(self.youngs_modulus > 0.0) {
            return bad("youngs_modulus must be > 0");
        }
        if !(self.poisson_ratio >= 0.0 && self.poisson_ratio < 0.5) {
            return bad("poisson_ratio must lie in [0, 0.5)");
        }
        if !(self.friction_coefficient >= 0.0) {
            return bad("friction_coefficient must be >= 0");
        }
        if !(self.damping_ratio >= 0.0 && self.damping_ratio < 1.0) {
            return bad("damping_ratio must lie in [0, 1)");
        }
        Ok(())
    }

    pub fn shear_modulus(&self) -> f64 {
        self.youngs_modulus / (2.0 * (1.0 + self.poisson_ratio))
    }

    /// Effective modulus of two bodies of this material.
    pub fn effective_modulus<T: Real>(&self) -> T {
        let nu = self.poisson_ratio;
        lit(self.youngs_modulus / (2.0 * (1.0 - nu * nu)))
    }

    /// Effective shear modulus of two bodies of this material.
    pub fn effective_shear_modulus<T: Real>(&self) -> T {
        lit(self.shear_modulus() / (2.0 * (2.0 - self.poisson_ratio)))
    }

    /// Effective two-body quantities; `None` for the partner means a rigid,
    /// flat, immovable wall.
    pub fn effective<T: Real>(&self, radius_i: T, radius_j: Option<T>, mass_i: T, mass_j: Option<T>) -> Effective<T> {
        Effective {
            modulus: self.effective_modulus(),
            shear_modulus: self.effective_shear_modulus(),
            radius: match radius_j {
                Some(rj) => radius_i * rj / (radius_i + rj),
                None => radius_i,
            },
            mass: match mass_j {
                Some(mj) => mass_i * mj / (mass_i + mj),
                None => mass_i,
            },
        }
    }
}

/// Effective contact quantities E*, G*, R*, m*.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Effective<T: Real> {
    pub modulus: T,
    pub shear_modulus: T,
    pub radius: T,
    pub mass: T,
}

/// Elastic Hertz force magnitude `(4/3) E* sqrt(R*) depth^(3/2)`.
#[inline]
pub fn hertz_elastic<T: Real>(eff: &Effective<T>, depth: T) -> T {
    if depth <= T::zero() {
        return T::zero();
    }
    lit::<T>(4.0 / 3.0) * eff.modulus * eff.radius.sqrt() * depth * depth.sqrt()
}

/// Normal tangent stiffness `2 E* sqrt(R* depth)`.
#[inline]
pub fn normal_stiffness<T: Real>(eff: &Effective<T>, depth: T) -> T {
    lit::<T>(2.0) * eff.modulus * (eff.radius * depth.max(T::zero())).sqrt()
}

/// Elastic energy stored in a Hertz contact, `(8/15) E* sqrt(R*) depth^(5/2)`.
pub fn hertz_energy<T: Real>(eff: &Effective<T>, depth: T) -> T {
    if depth <= T::zero() {
        return T::zero();
    }
    lit::<T>(8.0 / 15.0) * eff.modulus * eff.radius.sqrt() * depth * depth * depth.sqrt()
}

/// Normal force on body i, along `c.normal`.
///
/// `normal_velocity` is the relative velocity of body i with respect to its
/// partner projected on `c.normal` (negative while approaching). The viscous
/// term `-2 beta sqrt(S_n m*) v_n` is added and the total clamped to be
/// non-tensile.
pub fn hertz_normal_force<T: Real>(c: &Contact<T>, eff: &Effective<T>, damping_ratio: T, normal_velocity: T) -> Vector3<T> {
    c.normal * hertz_normal_magnitude(c.depth, eff, damping_ratio, normal_velocity)
}

#[inline]
pub fn hertz_normal_magnitude<T: Real>(depth: T, eff: &Effective<T>, damping_ratio: T, normal_velocity: T) -> T {
    let elastic = hertz_elastic(eff, depth);
    let sn = normal_stiffness(eff, depth);
    let viscous = -lit::<T>(2.0) * damping_ratio * (sn * eff.mass).sqrt() * normal_velocity;
    (elastic + viscous).max(T::zero())
}

/// Tangential stiffness `8 G* sqrt(R* depth)`.
#[inline]
pub fn tangential_stiffness<T: Real>(eff: &Effective<T>, depth: T) -> T {
    lit::<T>(8.0) * eff.shear_modulus * (eff.radius * depth.max(T::zero())).sqrt()
}

/// Mindlin tangential force on body i with Coulomb cap.
///
/// `memory` holds the elastic tangential force of the contact. It is first
/// rotated into the current tangent plane (magnitude kept), then
/// incremented by `-S_t v_t dt` with the stiffness at the current depth, so
/// a stiffness change never releases stored energy. On slip it is rescaled
/// onto the Coulomb limit.
pub fn mindlin_tangential_force<T: Real>(
    c: &Contact<T>,
    eff: &Effective<T>,
    friction: T,
    normal_force: T,
    memory: &mut Vector3<T>,
    tangential_velocity: &Vector3<T>,
    dt: T,
) -> Vector3<T> {
    let n = c.normal;
    let len = memory.norm();
    if len > T::zero() {
        let projected = *memory - n * n.dot(memory);
        let pl = projected.norm();
        *memory = if pl > T::zero() { projected * (len / pl) } else { Vector3::zeros() };
    }
    let vt = tangential_velocity - n * n.dot(tangential_velocity);
    let kt = tangential_stiffness(eff, c.depth);
    let mut force = *memory - vt * (kt * dt);
    let cap = friction * normal_force.abs();
    let fm = force.norm();
    if fm > cap {
        force = if fm > T::zero() { force * (cap / fm) } else { Vector3::zeros() };
    }
    *memory = force;
    force
}
