//! Contact-based metrics: coordination number and fabric tensor.

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::MetricsError;
use crate::geometry::{broad_phase, signed_distance_overlap, DomainSpec, Partner};
use crate::scalar::{lit, to_f64, Real};
use crate::snapshot::{PackingSnapshot, SnapshotDomain};

/// A particle pair that touches, overlaps, or is closer than a tolerance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeometricContact {
    /// Slice indices, `i < j`.
    pub i: usize,
    pub j: usize,
    /// Depth if positive, minus the gap otherwise.
    pub signed_overlap: f64,
    /// Unit vector from i toward j.
    pub normal: Vector3<f64>,
}

/// Default near-contact gap: `1e-3` of the mean equivalent radius.
pub fn default_contact_tolerance<T: Real>(s: &PackingSnapshot<T>) -> f64 {
    if s.particles.is_empty() {
        return 0.0;
    }
    let sum: f64 = s.particles.iter().map(|p| to_f64(p.eq_radius)).sum();
    1e-3 * sum / s.particles.len() as f64
}

/// Pairs whose surfaces are within `tolerance` of each other. Walls are
/// ignored.
pub fn geometric_contacts<T: Real>(s: &PackingSnapshot<T>, tolerance: f64) -> Vec<GeometricContact> {
    let domain = match s.domain {
        SnapshotDomain::Periodic { edge } => DomainSpec::Periodic { edge },
        _ => DomainSpec::Open,
    };
    let half: T = lit(0.5 * tolerance);
    let inflated: Vec<_> = s
        .particles
        .iter()
        .map(|p| {
            let mut q = p.clone();
            q.bound_radius += half;
            q
        })
        .collect();
    let candidates = broad_phase(&inflated, &domain);
    let mut out: Vec<GeometricContact> = candidates
        .par_iter()
        .filter_map(|c| {
            let ov = signed_distance_overlap(&s.particles[c.i], &s.particles[c.j], &c.shift);
            let depth = to_f64(ov.signed_depth);
            (depth >= -tolerance).then(|| GeometricContact {
                i: c.i,
                j: c.j,
                signed_overlap: depth,
                normal: ov.direction.map(to_f64).normalize(),
            })
        })
        .collect();
    out.sort_by_key(|c| (c.i, c.j));
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coordination {
    pub mean: f64,
    /// Contacting neighbours of each particle, in slice order.
    pub per_particle: Vec<usize>,
    /// `(cn, count)` for every cn from 0 to the largest observed.
    pub histogram: Vec<(usize, usize)>,
}

/// Mean number of neighbours within `tolerance` (walls excluded).
pub fn coordination_number<T: Real>(s: &PackingSnapshot<T>, tolerance: f64) -> Result<Coordination, MetricsError> {
    if !(tolerance >= 0.0) {
        return Err(MetricsError::InvalidParameter(format!(
            "contact tolerance must be >= 0, got {tolerance}"
        )));
    }
    Ok(coordination_from(s.particles.len(), &geometric_contacts(s, tolerance)))
}

pub(crate) fn coordination_from(n: usize, contacts: &[GeometricContact]) -> Coordination {
    let mut per_particle = vec![0usize; n];
    for c in contacts {
        per_particle[c.i] += 1;
        per_particle[c.j] += 1;
    }
    let max = per_particle.iter().copied().max().unwrap_or(0);
    let mut histogram: Vec<(usize, usize)> = (0..=max).map(|k| (k, 0)).collect();
    for &k in &per_particle {
        histogram[k].1 += 1;
    }
    let mean = if n == 0 {
        0.0
    } else {
        2.0 * contacts.len() as f64 / n as f64
    };
    Coordination {
        mean,
        per_particle,
        histogram,
    }
}

/// `(1 / N_c) sum n (x) n` over the given unit normals.
pub fn fabric_from_normals<I>(normals: I) -> Result<Matrix3<f64>, MetricsError>
where
    I: IntoIterator<Item = Vector3<f64>>,
{
    let mut sum = Matrix3::zeros();
    let mut count = 0usize;
    for n in normals {
        let u = n.normalize();
        sum += u * u.transpose();
        count += 1;
    }
    if count == 0 {
        return Err(MetricsError::NoContacts);
    }
    Ok(sum / count as f64)
}

/// Fabric tensor of the snapshot's particle-particle contacts.
pub fn fabric_tensor<T: Real>(s: &PackingSnapshot<T>) -> Result<Matrix3<f64>, MetricsError> {
    fabric_from_normals(
        s.contacts
            .iter()
            .filter(|c| matches!(c.contact.partner, Partner::Particle(_)))
            .map(|c| c.contact.normal.map(to_f64)),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Contact, Particle, ParticleShape};
    use crate::snapshot::{ContactRecord, Provenance, RunStatus};
    use nalgebra::UnitQuaternion;
    use rand::Rng;

    fn snapshot(domain: SnapshotDomain<f64>, particles: Vec<Particle<f64>>) -> PackingSnapshot<f64> {
        PackingSnapshot {
            provenance: Provenance::MonteCarlo,
            domain,
            particles,
            contacts: Vec::new(),
            status: RunStatus {
                iterations: 0,
                completed: true,
            },
        }
    }

    fn lattice(n: usize, q: UnitQuaternion<f64>, offset: Vector3<f64>) -> Vec<Particle<f64>> {
        let mut ps = Vec::new();
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    let x = q * Vector3::new(a as f64, b as f64, c as f64) + offset;
                    ps.push(Particle::new(ps.len(), ParticleShape::sphere(0.5).unwrap(), 1.0).unwrap().with_pose(x, q));
                }
            }
        }
        ps
    }

    #[test]
    fn cubic_lattice_interior_has_six() {
        let s = snapshot(SnapshotDomain::Unplaced, lattice(5, UnitQuaternion::identity(), Vector3::zeros()));
        let cn = coordination_number(&s, 1e-3).unwrap();
        // centre of the 5^3 block
        assert_eq!(cn.per_particle[62], 6);
        assert_eq!(cn.per_particle[0], 3);
        let periodic = snapshot(SnapshotDomain::Periodic { edge: 5.0 }, s.particles.clone());
        assert_eq!(coordination_number(&periodic, 1e-3).unwrap().mean, 6.0);
    }

    #[test]
    fn invariant_under_rigid_motion() {
        let base = snapshot(SnapshotDomain::Unplaced, lattice(4, UnitQuaternion::identity(), Vector3::zeros()));
        let q = UnitQuaternion::from_euler_angles(0.4, -0.3, 1.2);
        let moved = snapshot(SnapshotDomain::Unplaced, lattice(4, q, Vector3::new(3.0, -7.0, 2.5)));
        let a = coordination_number(&base, 1e-6).unwrap();
        let b = coordination_number(&moved, 1e-6).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn pairs_and_isolated() {
        let sph = |id, x: f64| {
            Particle::new(id, ParticleShape::sphere(0.5).unwrap(), 1.0)
                .unwrap()
                .with_pose(Vector3::new(x, 0.0, 0.0), UnitQuaternion::identity())
        };
        let two = snapshot(SnapshotDomain::Unplaced, vec![sph(0, 0.0), sph(1, 1.0)]);
        assert_eq!(coordination_number(&two, 0.0).unwrap().mean, 1.0);
        let apart = snapshot(SnapshotDomain::Unplaced, vec![sph(0, 0.0), sph(1, 3.0)]);
        let cn = coordination_number(&apart, 1e-3).unwrap();
        assert_eq!(cn.mean, 0.0);
        assert_eq!(cn.histogram, vec![(0, 2)]);
        // within tolerance but not touching
        let near = snapshot(SnapshotDomain::Unplaced, vec![sph(0, 0.0), sph(1, 1.0005)]);
        assert_eq!(coordination_number(&near, 1e-3).unwrap().mean, 1.0);
        assert_eq!(coordination_number(&near, 1e-4).unwrap().mean, 0.0);
        assert!(coordination_number(&near, -1.0).is_err());
    }

    #[test]
    fn fabric_examples() {
        let f = fabric_from_normals([Vector3::z(), -Vector3::z()]).unwrap();
        assert_eq!(f, Matrix3::from_diagonal(&Vector3::new(0.0, 0.0, 1.0)));
        let f = fabric_from_normals([Vector3::x(), Vector3::y()]).unwrap();
        assert_eq!(f, Matrix3::from_diagonal(&Vector3::new(0.5, 0.5, 0.0)));
        assert_eq!(fabric_from_normals(Vec::new()), Err(MetricsError::NoContacts));
    }

    #[test]
    fn isotropic_normals() {
        let mut rng = crate::distribution::rng_from_seed(17);
        let normals: Vec<Vector3<f64>> = (0..100_000)
            .map(|_| {
                let z: f64 = rng.random_range(-1.0..1.0);
                let t: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                let s = (1.0 - z * z).sqrt();
                Vector3::new(s * t.cos(), s * t.sin(), z)
            })
            .collect();
        let f = fabric_from_normals(normals).unwrap();
        for a in 0..3 {
            for b in 0..3 {
                let expect = if a == b { 1.0 / 3.0 } else { 0.0 };
                assert!((f[(a, b)] - expect).abs() < 0.01);
            }
        }
        assert!((f.trace() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn snapshot_fabric_skips_walls() {
        let contact = |partner, normal: Vector3<f64>| ContactRecord {
            contact: Contact {
                id_i: 0,
                partner,
                point_i: Vector3::zeros(),
                point_j: normal,
                delta: normal,
                depth: 1.0,
                normal,
            },
            force: None,
        };
        let mut s = snapshot(SnapshotDomain::Unplaced, Vec::new());
        assert_eq!(fabric_tensor(&s), Err(MetricsError::NoContacts));
        s.contacts.push(contact(Partner::Wall(0), Vector3::z()));
        s.contacts.push(contact(Partner::Particle(1), Vector3::x()));
        let f = fabric_tensor(&s).unwrap();
        assert_eq!(f[(0, 0)], 1.0);
    }
}
