//! Radial distribution function of particle centroids.

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::MetricsError;
use crate::metrics::fraction::{free_surface_height, Region};
use crate::scalar::to_f64;
use crate::scalar::Real;
use crate::snapshot::{PackingSnapshot, SnapshotDomain};

/// Directions used to estimate how much of a shell lies inside the box.
const SHELL_DIRECTIONS: usize = 256;
/// Expected pairs per bin at `r_max` below which the binning is too fine.
pub const MIN_PAIRS_PER_BIN: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RdfCurve {
    /// Bin centres (m).
    pub r: Vec<f64>,
    pub g: Vec<f64>,
    pub bin_width: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rdf {
    pub curve: RdfCurve,
    /// Ordered-pair counts per bin.
    pub counts: Vec<u64>,
    /// Ideal-gas expectation of `counts`.
    pub expected: Vec<f64>,
    /// Set when fewer than [`MIN_PAIRS_PER_BIN`] pairs are expected in the
    /// last bin; the curve is still returned.
    pub bin_too_fine: bool,
}

fn shell_volume(r0: f64, r1: f64) -> f64 {
    4.0 / 3.0 * std::f64::consts::PI * (r1.powi(3) - r0.powi(3))
}

/// Near-uniform unit vectors on a Fibonacci spiral.
fn fibonacci_sphere(n: usize) -> Vec<Vector3<f64>> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|k| {
            let z = 1.0 - (2.0 * k as f64 + 1.0) / n as f64;
            let s = (1.0 - z * z).sqrt();
            let t = golden * k as f64;
            Vector3::new(s * t.cos(), s * t.sin(), z)
        })
        .collect()
}

/// Box used for non-periodic snapshots: the container up to the free
/// surface, the walled cube, or the bounding box of the centroids.
fn bounding_region<T: Real>(s: &PackingSnapshot<T>) -> Result<Region, MetricsError> {
    match s.domain {
        SnapshotDomain::Periodic { edge } | SnapshotDomain::WalledCube { edge } => {
            Region::new([0.0; 3], [to_f64(edge); 3])
        }
        SnapshotDomain::Container { width_x, width_y } => {
            let h = free_surface_height(&s.particles).ok_or(MetricsError::EmptyRegion)?;
            Region::new([0.0; 3], [to_f64(width_x), to_f64(width_y), h])
        }
        SnapshotDomain::Unplaced => {
            let mut lo = [f64::INFINITY; 3];
            let mut hi = [f64::NEG_INFINITY; 3];
            for p in &s.particles {
                for k in 0..3 {
                    lo[k] = lo[k].min(to_f64(p.position[k]));
                    hi[k] = hi[k].max(to_f64(p.position[k]));
                }
            }
            Region::new(lo, hi)
        }
    }
}

/// `g(r)` = pair count in each shell over the ideal-gas expectation
/// `N rho V_shell`. Periodic snapshots use minimum-image distances;
/// bounded ones scale each reference particle's shell volume by the share
/// of the shell inside the box.
pub fn rdf<T: Real>(s: &PackingSnapshot<T>, bin_width: f64, r_max: f64) -> Result<Rdf, MetricsError> {
    if !(bin_width > 0.0 && bin_width.is_finite()) {
        return Err(MetricsError::InvalidParameter(format!("bin width must be > 0, got {bin_width}")));
    }
    if !(r_max > bin_width && r_max.is_finite()) {
        return Err(MetricsError::InvalidParameter(format!(
            "r_max must exceed the bin width, got {r_max}"
        )));
    }
    let nbins = ((r_max / bin_width) - 1e-9).ceil() as usize;
    let periodic = match s.domain {
        SnapshotDomain::Periodic { edge } => {
            let e = to_f64(edge);
            if r_max > 0.5 * e + 1e-12 {
                return Err(MetricsError::InvalidParameter(format!(
                    "r_max {r_max} exceeds half the periodic edge {}",
                    0.5 * e
                )));
            }
            Some(e)
        }
        _ => None,
    };
    let region = bounding_region(s)?;
    let xs: Vec<Vector3<f64>> = s
        .particles
        .iter()
        .map(|p| p.position.map(to_f64))
        .filter(|x| periodic.is_some() || region.contains(x))
        .collect();
    let n = xs.len();
    if n < 2 {
        return Err(MetricsError::EmptyRegion);
    }
    let rho = n as f64 / region.volume();
    let reach = nbins as f64 * bin_width;

    let counts = xs
        .par_iter()
        .enumerate()
        .map(|(i, a)| {
            let mut local = vec![0u64; nbins];
            for b in &xs[i + 1..] {
                let mut d = b - a;
                if let Some(e) = periodic {
                    d = d.map(|x| x - (x / e).round() * e);
                }
                let r = d.norm();
                if r < reach {
                    let k = ((r / bin_width) as usize).min(nbins - 1);
                    local[k] += 2;
                }
            }
            local
        })
        .reduce(
            || vec![0u64; nbins],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += y;
                }
                a
            },
        );

    let shells: Vec<f64> = (0..nbins)
        .map(|k| shell_volume(k as f64 * bin_width, (k + 1) as f64 * bin_width))
        .collect();
    let expected: Vec<f64> = if periodic.is_some() {
        shells.iter().map(|v| n as f64 * rho * v).collect()
    } else {
        let dirs = fibonacci_sphere(SHELL_DIRECTIONS);
        let share: Vec<f64> = (0..nbins)
            .into_par_iter()
            .map(|k| {
                let r = (k as f64 + 0.5) * bin_width;
                let hits: usize = xs
                    .iter()
                    .map(|x| dirs.iter().filter(|u| region.contains(&(x + *u * r))).count())
                    .sum();
                hits as f64 / SHELL_DIRECTIONS as f64
            })
            .collect();
        share.iter().zip(&shells).map(|(s, v)| s * rho * v).collect()
    };
    let g = counts
        .iter()
        .zip(&expected)
        .map(|(&c, &e)| if e > 0.0 { c as f64 / e } else { 0.0 })
        .collect();
    let bin_too_fine = expected.last().map_or(true, |&e| 0.5 * e < MIN_PAIRS_PER_BIN);
    if bin_too_fine {
        log::warn!("rdf: fewer than {MIN_PAIRS_PER_BIN} pairs expected per bin at r_max = {r_max}");
    }
    Ok(Rdf {
        curve: RdfCurve {
            r: (0..nbins).map(|k| (k as f64 + 0.5) * bin_width).collect(),
            g,
            bin_width,
        },
        counts,
        expected,
        bin_too_fine,
    })
}
