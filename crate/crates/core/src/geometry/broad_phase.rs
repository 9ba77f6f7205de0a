//! Uniform-grid broad phase over enclosing spheres.

use std::collections::HashMap;

use nalgebra::Vector3;

use crate::geometry::particle::Particle;
use crate::scalar::{lit, Real};

/// Spatial domain the particles live in.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DomainSpec<T: Real> {
    /// Cube `[0, edge)^3` with periodic images.
    Periodic { edge: T },
    /// No wrapping.
    Open,
}

impl<T: Real> DomainSpec<T> {
    /// Minimum-image shift to apply to `b` so it is nearest to `a`.
    #[inline]
    pub fn image_shift(&self, a: &Vector3<T>, b: &Vector3<T>) -> Vector3<T> {
        match *self {
            DomainSpec::Periodic { edge } => {
                let d = b - a;
                d.map(|x| -(x / edge).round() * edge)
            }
            DomainSpec::Open => Vector3::zeros(),
        }
    }
}

/// Candidate pair of slice indices `i < j`; `shift` is added to particle j.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidatePair<T: Real> {
    pub i: usize,
    pub j: usize,
    pub shift: Vector3<T>,
}

/// Pairs whose enclosing spheres intersect.
///
/// Cell edge is the largest enclosing diameter in the assembly, so every
/// overlapping pair lies in adjacent cells. Periodic domains with fewer than
/// three cells per edge fall back to all pairs under minimum image.
pub fn broad_phase<T: Real>(particles: &[Particle<T>], domain: &DomainSpec<T>) -> Vec<CandidatePair<T>> {
    let n = particles.len();
    if n < 2 {
        return Vec::new();
    }
    let max_r = particles
        .iter()
        .fold(T::zero(), |m, p| if p.bound_radius > m { p.bound_radius } else { m });
    let cell = max_r * lit(2.0);

    let test = |i: usize, j: usize| -> Option<CandidatePair<T>> {
        let (a, b) = (&particles[i], &particles[j]);
        let shift = domain.image_shift(&a.position, &b.position);
        let d = b.position + shift - a.position;
        let reach = a.bound_radius + b.bound_radius;
        (d.norm_squared() <= reach * reach).then_some(CandidatePair { i, j, shift })
    };

    let (origin, dims, cell_size, periodic) = match *domain {
        DomainSpec::Periodic { edge } => {
            let c = (edge / cell).floor().to_f64().unwrap_or(0.0);
            if c < 3.0 {
                return brute_force(n, test);
            }
            let c = c as i64;
            (Vector3::zeros(), [c; 3], edge / lit(c as f64), true)
        }
        DomainSpec::Open => {
            let mut lo = particles[0].position;
            let mut hi = lo;
            for p in particles {
                lo = lo.inf(&p.position);
                hi = hi.sup(&p.position);
            }
            let mut dims = [1i64; 3];
            for a in 0..3 {
                dims[a] = ((hi[a] - lo[a]) / cell).floor().to_f64().unwrap_or(0.0) as i64 + 1;
            }
            if dims.iter().any(|&d| d > 1 << 20) || dims.iter().product::<i64>() > 64 * n as i64 + 64 {
                return sparse(particles, cell, test);
            }
            (lo, dims, cell, false)
        }
    };

    // positions wrapped into the primary cell; `wrap` undoes it
    let edge = cell_size * lit(dims[0] as f64);
    let wrap: Vec<Vector3<T>> = particles
        .iter()
        .map(|p| {
            if periodic {
                p.position.map(|x| -(x / edge).floor() * edge)
            } else {
                Vector3::zeros()
            }
        })
        .collect();
    let pos: Vec<Vector3<T>> = particles.iter().zip(&wrap).map(|(p, w)| p.position + w).collect();
    // counting sort of particles into a dense cell array
    let cell_of = |x: &Vector3<T>| -> [i64; 3] {
        let mut k = [0i64; 3];
        for a in 0..3 {
            let v = ((x[a] - origin[a]) / cell_size).floor().to_f64().unwrap_or(0.0) as i64;
            k[a] = v.clamp(0, dims[a] - 1);
        }
        k
    };
    let linear = |k: [i64; 3]| -> usize { ((k[0] * dims[1] + k[1]) * dims[2] + k[2]) as usize };
    let n_cells = (dims[0] * dims[1] * dims[2]) as usize;
    let keys: Vec<[i64; 3]> = pos.iter().map(|x| cell_of(x)).collect();
    let mut start = vec![0usize; n_cells + 1];
    for k in &keys {
        start[linear(*k) + 1] += 1;
    }
    for c in 0..n_cells {
        start[c + 1] += start[c];
    }
    let mut fill = start.clone();
    let mut members = vec![0usize; n];
    for (idx, k) in keys.iter().enumerate() {
        let c = linear(*k);
        members[fill[c]] = idx;
        fill[c] += 1;
    }

    let rad: Vec<T> = particles.iter().map(|p| p.bound_radius).collect();

    // half-shell stencil: each unordered cell pair is visited once
    let mut stencil: Vec<[i64; 3]> = Vec::with_capacity(14);
    for dx in -1..=1i64 {
        for dy in -1..=1i64 {
            for dz in -1..=1i64 {
                if (dx, dy, dz) >= (0, 0, 0) {
                    stencil.push([dx, dy, dz]);
                }
            }
        }
    }

    let mut out = Vec::new();
    for c0 in 0..n_cells {
        let (lo0, hi0) = (start[c0], start[c0 + 1]);
        if lo0 == hi0 {
            continue;
        }
        let k = keys[members[lo0]];
        for off in &stencil {
            let mut nk = [0i64; 3];
            let mut shift = Vector3::zeros();
            let mut inside = true;
            for a in 0..3 {
                let v = k[a] + off[a];
                if periodic {
                    let w = v.rem_euclid(dims[a]);
                    // image of the neighbour cell nearest to cell k
                    shift[a] = lit::<T>((v - w) as f64) * cell_size;
                    nk[a] = w;
                } else if v < 0 || v >= dims[a] {
                    inside = false;
                } else {
                    nk[a] = v;
                }
            }
            if !inside {
                continue;
            }
            let c1 = linear(nk);
            let same = c1 == c0;
            let (lo1, hi1) = (start[c1], start[c1 + 1]);
            for (ai, &i) in members[lo0..hi0].iter().enumerate() {
                let from = if same { lo0 + ai + 1 } else { lo1 };
                for &j in &members[from..hi1] {
                    let d = pos[j] + shift - pos[i];
                    let reach = rad[i] + rad[j];
                    if d.norm_squared() <= reach * reach {
                        let s = shift + wrap[j] - wrap[i];
                        let (a, b, s) = if i < j { (i, j, s) } else { (j, i, -s) };
                        out.push(CandidatePair { i: a, j: b, shift: s });
                    }
                }
            }
        }
    }
    out.sort_by(|a, b| (a.i, a.j).cmp(&(b.i, b.j)));
    out
}

fn sparse<T: Real>(
    particles: &[Particle<T>],
    cell: T,
    test: impl Fn(usize, usize) -> Option<CandidatePair<T>>,
) -> Vec<CandidatePair<T>> {
    let key_of = |x: &Vector3<T>| -> [i64; 3] {
        let mut k = [0i64; 3];
        for a in 0..3 {
            k[a] = (x[a] / cell).floor().to_f64().unwrap_or(0.0) as i64;
        }
        k
    };
    let mut grid: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
    let keys: Vec<[i64; 3]> = particles.iter().map(|p| key_of(&p.position)).collect();
    for (idx, k) in keys.iter().enumerate() {
        grid.entry(*k).or_default().push(idx);
    }
    let mut out = Vec::new();
    for (i, k) in keys.iter().enumerate() {
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(members) = grid.get(&[k[0] + dx, k[1] + dy, k[2] + dz]) {
                        for &j in members {
                            if j > i {
                                if let Some(p) = test(i, j) {
                                    out.push(p);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out.sort_by(|a, b| (a.i, a.j).cmp(&(b.i, b.j)));
    out
}

fn brute_force<T: Real>(
    n: usize,
    test: impl Fn(usize, usize) -> Option<CandidatePair<T>>,
) -> Vec<CandidatePair<T>> {
    let mut out = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if let Some(p) = test(i, j) {
                out.push(p);
            }
        }
    }
    out
}
