//! Packing fraction inside a box, with sampled partial volumes.

use nalgebra::Vector3;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distribution::rng_from_seed;
use crate::error::MetricsError;
use crate::geometry::Particle;
use crate::scalar::{lit, to_f64, Real};
use crate::snapshot::{PackingSnapshot, SnapshotDomain};

/// Strata per axis; 46^3 is just under 10^5 points per particle.
pub const STRATA: usize = 46;

/// Axis-aligned box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Region {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Result<Self, MetricsError> {
        let r = Self { min, max };
        if (0..3).all(|k| r.max[k] > r.min[k] && r.min[k].is_finite() && r.max[k].is_finite()) {
            Ok(r)
        } else {
            Err(MetricsError::EmptyRegion)
        }
    }

    pub fn volume(&self) -> f64 {
        (0..3).map(|k| self.max[k] - self.min[k]).product()
    }

    pub fn contains(&self, x: &Vector3<f64>) -> bool {
        (0..3).all(|k| x[k] >= self.min[k] && x[k] <= self.max[k])
    }

    fn contains_box(&self, lo: &[f64; 3], hi: &[f64; 3]) -> bool {
        (0..3).all(|k| lo[k] >= self.min[k] && hi[k] <= self.max[k])
    }

    fn disjoint(&self, lo: &[f64; 3], hi: &[f64; 3]) -> bool {
        (0..3).any(|k| hi[k] <= self.min[k] || lo[k] >= self.max[k])
    }
}

/// Bounding box of a particle from its support function.
pub fn particle_bounds<T: Real>(p: &Particle<T>) -> ([f64; 3], [f64; 3]) {
    let mut lo = [0.0; 3];
    let mut hi = [0.0; 3];
    for k in 0..3 {
        let e = Vector3::ith(k, T::one());
        hi[k] = to_f64(p.support(&e).1);
        lo[k] = -to_f64(p.support(&(-e)).1);
    }
    (lo, hi)
}

/// Height of the free surface: 99th percentile of particle top heights.
pub fn free_surface_height<T: Real>(particles: &[Particle<T>]) -> Option<f64> {
    if particles.is_empty() {
        return None;
    }
    let mut tops: Vec<f64> = particles.iter().map(|p| particle_bounds(p).1[2]).collect();
    tops.sort_by(f64::total_cmp);
    let k = ((0.99 * tops.len() as f64).ceil() as usize).clamp(1, tops.len()) - 1;
    Some(tops[k])
}

/// Largest particle extent, twice the largest semi-length.
pub fn max_diameter<T: Real>(particles: &[Particle<T>]) -> f64 {
    particles
        .iter()
        .map(|p| 2.0 * to_f64(p.shape.major_semi_length()))
        .fold(0.0, f64::max)
}

/// Measurement box used when none is given.
///
/// Cubic domains use the whole cube. Containers use their cross-section
/// between `0.5 d_max` above the floor and `2 d_max` below the free surface.
pub fn default_region<T: Real>(s: &PackingSnapshot<T>) -> Result<Region, MetricsError> {
    match s.domain {
        SnapshotDomain::Periodic { edge } | SnapshotDomain::WalledCube { edge } => {
            let e = to_f64(edge);
            Region::new([0.0; 3], [e; 3])
        }
        SnapshotDomain::Container { width_x, width_y } => {
            let h = free_surface_height(&s.particles).ok_or(MetricsError::EmptyRegion)?;
            let d = max_diameter(&s.particles);
            let (wx, wy) = (to_f64(width_x), to_f64(width_y));
            // Beds thinner than the trim margins are measured whole.
            Region::new([0.0, 0.0, 0.5 * d], [wx, wy, h - 2.0 * d]).or_else(|_| Region::new([0.0; 3], [wx, wy, h]))
        }
        SnapshotDomain::Unplaced => Err(MetricsError::EmptyRegion),
    }
}

/// Volume fraction of `region` (default: [`default_region`]) occupied by
/// particles. Particles straddling the boundary contribute their volume
/// times the fraction of stratified sample points inside the particle that
/// also fall inside the region. The sampling seed derives from the snapshot
/// content, so the result is reproducible.
pub fn packing_fraction<T: Real>(s: &PackingSnapshot<T>, region: Option<Region>) -> Result<f64, MetricsError> {
    if let (None, SnapshotDomain::Periodic { edge }) = (region, s.domain) {
        return Ok(to_f64(s.total_volume()) / to_f64(edge).powi(3));
    }
    let region = match region {
        Some(r) => Region::new(r.min, r.max)?,
        None => default_region(s)?,
    };
    let shifts: Vec<Vector3<f64>> = match s.domain {
        SnapshotDomain::Periodic { edge } => {
            let e = to_f64(edge);
            let mut v = Vec::with_capacity(27);
            for a in -1..=1 {
                for b in -1..=1 {
                    for c in -1..=1 {
                        v.push(Vector3::new(a as f64, b as f64, c as f64) * e);
                    }
                }
            }
            v
        }
        _ => vec![Vector3::zeros()],
    };
    let seed = s.seed();
    let occupied: f64 = s
        .particles
        .par_iter()
        .enumerate()
        .map(|(k, p)| {
            let (lo, hi) = particle_bounds(p);
            let volume = to_f64(p.volume());
            let mut sum = 0.0;
            for (m, shift) in shifts.iter().enumerate() {
                let lo_s = [lo[0] + shift.x, lo[1] + shift.y, lo[2] + shift.z];
                let hi_s = [hi[0] + shift.x, hi[1] + shift.y, hi[2] + shift.z];
                if region.disjoint(&lo_s, &hi_s) {
                    continue;
                }
                if region.contains_box(&lo_s, &hi_s) {
                    sum += volume;
                    continue;
                }
                let stream = seed ^ ((k as u64) << 8 | m as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
                sum += volume * inside_share(p, &lo, &hi, shift, &region, stream);
            }
            sum
        })
        .collect::<Vec<f64>>()
        .iter()
        .sum();
    Ok(occupied / region.volume())
}

/// Share of the particle's sampled interior that lies in `region` once the
/// particle is translated by `shift`.
fn inside_share<T: Real>(
    p: &Particle<T>,
    lo: &[f64; 3],
    hi: &[f64; 3],
    shift: &Vector3<f64>,
    region: &Region,
    seed: u64,
) -> f64 {
    let mut rng = rng_from_seed(seed);
    let n = STRATA as f64;
    let step = [(hi[0] - lo[0]) / n, (hi[1] - lo[1]) / n, (hi[2] - lo[2]) / n];
    let (mut inside, mut both) = (0u64, 0u64);
    for a in 0..STRATA {
        for b in 0..STRATA {
            for c in 0..STRATA {
                let x = Vector3::new(
                    lo[0] + step[0] * (a as f64 + rng.random::<f64>()),
                    lo[1] + step[1] * (b as f64 + rng.random::<f64>()),
                    lo[2] + step[2] * (c as f64 + rng.random::<f64>()),
                );
                if p.implicit(&x.map(lit::<T>)) < T::zero() {
                    inside += 1;
                    if region.contains(&(x + shift)) {
                        both += 1;
                    }
                }
            }
        }
    }
    if inside == 0 {
        0.0
    } else {
        both as f64 / inside as f64
    }
}
