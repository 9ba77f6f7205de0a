//! Narrow-phase contact detection.
//!
//! For two convex bodies the function `f(u) = h_i(u) + h_j(-u)` of a unit
//! direction `u` (h = support function, world frame) measures how far the
//! projections of the bodies onto `u` overlap. Its minimum over the unit
//! sphere is the penetration depth when positive and minus the separation
//! distance otherwise. At the minimiser the support points `s_i(u)` and
//! `s_j(-u)` have antiparallel outward normals along `u`, and the segment
//! joining them is the overlap vector. The minimum is found by Riemannian
//! Newton iteration from several starting directions.
//!
//! Poly-ellipsoid support points are closed form: the octant holding the
//! support point is the one selected by the signs of `u` in the body frame.

use std::fmt::Debug;

use nalgebra::{Matrix2, Rotation3, Vector2, Vector3};
use thiserror::Error;

use crate::geometry::particle::Particle;
use crate::scalar::{lit, Real};

/// What the second body of a contact is.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Partner {
    Particle(usize),
    Wall(usize),
}

impl Partner {
    pub fn particle(self) -> Option<usize> {
        match self {
            Partner::Particle(j) => Some(j),
            Partner::Wall(_) => None,
        }
    }
}

/// Contact between particle `id_i` and a partner.
///
/// `point_i` is the point of body i penetrating deepest into the partner
/// and `point_j` the converse. `delta = point_j - point_i`; moving body i
/// by `delta` (or j by `-delta`) removes the overlap. `normal` is the unit
/// vector along `delta`.
#[derive(Debug, Clone, PartialEq)]
pub struct Contact<T: Real> {
    pub id_i: usize,
    pub partner: Partner,
    pub point_i: Vector3<T>,
    pub point_j: Vector3<T>,
    pub delta: Vector3<T>,
    pub depth: T,
    pub normal: Vector3<T>,
}

impl<T: Real> Contact<T> {
    pub fn id_j(&self) -> Option<usize> {
        self.partner.particle()
    }

    /// Same contact seen from the other particle.
    pub fn swapped(&self) -> Option<Self> {
        let j = self.partner.particle()?;
        Some(Self {
            id_i: j,
            partner: Partner::Particle(self.id_i),
            point_i: self.point_j,
            point_j: self.point_i,
            delta: -self.delta,
            depth: self.depth,
            normal: -self.normal,
        })
    }
}

/// Planar container boundary given by a point and the unit normal pointing
/// into the container.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Wall<T: Real> {
    pub point: Vector3<T>,
    pub normal: Vector3<T>,
}

impl<T: Real> Wall<T> {
    pub fn new(point: Vector3<T>, normal: Vector3<T>) -> Self {
        Self {
            point,
            normal: normal.normalize(),
        }
    }

    /// Signed distance of a point from the plane, positive inside.
    pub fn distance(&self, x: &Vector3<T>) -> T {
        (x - self.point).dot(&self.normal)
    }
}

#[derive(Debug, Clone, Error)]
pub enum ContactError<T: Real> {
    #[error("contact iteration did not converge for pair ({id_i}, {id_j})")]
    NonConvergence {
        id_i: usize,
        id_j: usize,
        /// Last iterate, reported when it indicates overlap.
        last: Option<Contact<T>>,
    },
}

/// Controls of the Newton iteration.
#[derive(Debug, Clone, Copy)]
pub struct ContactSettings<T: Real> {
    /// Converged when both support points move less than this (m).
    pub point_tolerance: T,
    pub max_iterations: usize,
}

impl<T: Real> Default for ContactSettings<T> {
    fn default() -> Self {
        Self {
            point_tolerance: lit(1e-10),
            max_iterations: 50,
        }
    }
}

/// Result of minimising the projected overlap over directions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairOverlap<T: Real> {
    /// Penetration depth if positive, minus the separation distance if
    /// negative. When the search stopped early this is only an upper bound.
    pub signed_depth: T,
    /// Direction from body i toward body j.
    pub direction: Vector3<T>,
    pub point_i: Vector3<T>,
    pub point_j: Vector3<T>,
    pub converged: bool,
    /// Set when the search stopped at a separating direction.
    pub stopped_early: bool,
}

impl<T: Real> PairOverlap<T> {
    fn into_contact(self, id_i: usize, partner: Partner) -> Contact<T> {
        let delta = self.point_j - self.point_i;
        let depth = delta.norm();
        let normal = if depth > T::zero() {
            delta / depth
        } else {
            -self.direction
        };
        Contact {
            id_i,
            partner,
            point_i: self.point_i,
            point_j: self.point_j,
            delta,
            depth,
            normal,
        }
    }
}

/// Contact between two particles, `None` if they do not overlap.
pub fn detect_contact<T: Real>(
    pi: &Particle<T>,
    pj: &Particle<T>,
) -> Result<Option<Contact<T>>, ContactError<T>> {
    detect_contact_shifted(pi, pj, &Vector3::zeros(), &ContactSettings::default(), None)
}

/// Contact between `pi` and `pj` translated by `shift` (periodic image).
pub fn detect_contact_shifted<T: Real>(
    pi: &Particle<T>,
    pj: &Particle<T>,
    shift: &Vector3<T>,
    settings: &ContactSettings<T>,
    warm_start: Option<Vector3<T>>,
) -> Result<Option<Contact<T>>, ContactError<T>> {
    let ov = pair_overlap(pi, pj, shift, settings, Some(T::zero()), warm_start);
    if !ov.converged {
        let last = (ov.signed_depth > T::zero())
            .then(|| ov.into_contact(pi.id, Partner::Particle(pj.id)));
        return Err(ContactError::NonConvergence {
            id_i: pi.id,
            id_j: pj.id,
            last,
        });
    }
    if ov.signed_depth > T::zero() && !ov.stopped_early {
        let c = ov.into_contact(pi.id, Partner::Particle(pj.id));
        if c.depth > T::zero() {
            return Ok(Some(c));
        }
    }
    Ok(None)
}

/// Signed overlap (depth, or minus the gap) of two particles.
pub fn signed_distance_overlap<T: Real>(
    pi: &Particle<T>,
    pj: &Particle<T>,
    shift: &Vector3<T>,
) -> PairOverlap<T> {
    pair_overlap(pi, pj, shift, &ContactSettings::default(), None, None)
}

/// Contact of a particle with a planar wall.
pub fn detect_wall_contact<T: Real>(p: &Particle<T>, wall: &Wall<T>, wall_index: usize) -> Option<Contact<T>> {
    let (point_i, _) = p.support(&(-wall.normal));
    let depth = -wall.distance(&point_i);
    if depth > T::zero() {
        let delta = wall.normal * depth;
        Some(Contact {
            id_i: p.id,
            partner: Partner::Wall(wall_index),
            point_i,
            point_j: point_i + delta,
            delta,
            depth,
            normal: wall.normal,
        })
    } else {
        None
    }
}

struct Frame<'a, T: Real> {
    pi: &'a Particle<T>,
    pj: &'a Particle<T>,
    ri: Rotation3<T>,
    rj: Rotation3<T>,
    shift: Vector3<T>,
}

#[derive(Clone, Copy)]
struct Eval<T: Real> {
    u: Vector3<T>,
    f: T,
    si: Vector3<T>,
    sj: Vector3<T>,
}

impl<T: Real> Frame<'_, T> {
    #[inline]
    fn eval(&self, u: Vector3<T>) -> Eval<T> {
        let (si, _) = self.pi.support_with(&self.ri, &u);
        let (sj, _) = self.pj.support_with(&self.rj, &(-u));
        let sj = sj + self.shift;
        Eval {
            u,
            f: (si - sj).dot(&u),
            si,
            sj,
        }
    }

    #[inline]
    fn hessian(&self, u: &Vector3<T>) -> nalgebra::Matrix3<T> {
        let ui = self.ri.inverse_transform_vector(u);
        let uj = self.rj.inverse_transform_vector(&(-u));
        let hi = self.pi.shape.support_hessian(&ui);
        let hj = self.pj.shape.support_hessian(&uj);
        let mi = self.ri.matrix();
        let mj = self.rj.matrix();
        mi * hi * mi.transpose() + mj * hj * mj.transpose()
    }
}

fn tangent_basis<T: Real>(u: &Vector3<T>) -> (Vector3<T>, Vector3<T>) {
    let a = if u.x.abs() < lit(0.6) {
        Vector3::x()
    } else if u.y.abs() < lit(0.6) {
        Vector3::y()
    } else {
        Vector3::z()
    };
    let e1 = (a - u * u.dot(&a)).normalize();
    let e2 = u.cross(&e1);
    (e1, e2)
}

/// Minimises the projected overlap over unit directions.
///
/// With `stop_below = Some(s)` the search returns as soon as a direction
/// with overlap `<= s` is found (a separating axis when `s <= 0`).
pub fn pair_overlap<T: Real>(
    pi: &Particle<T>,
    pj: &Particle<T>,
    shift: &Vector3<T>,
    settings: &ContactSettings<T>,
    stop_below: Option<T>,
    warm_start: Option<Vector3<T>>,
) -> PairOverlap<T> {
    let branch = pj.position + shift - pi.position;
    if pi.shape.is_sphere() && pj.shape.is_sphere() {
        return sphere_pair(pi, pj, shift, &branch);
    }
    let frame = Frame {
        pi,
        pj,
        ri: pi.rotation(),
        rj: pj.rotation(),
        shift: *shift,
    };

    let mut starts: Vec<Vector3<T>> = Vec::with_capacity(14);
    let dist = branch.norm();
    if dist > T::zero() {
        starts.push(branch / dist);
    }
    if let Some(w) = warm_start {
        if w.norm() > T::zero() {
            starts.push(w.normalize());
        }
    }
    for rot in [&frame.ri, &frame.rj] {
        for k in 0..3 {
            let axis = rot * Vector3::ith(k, T::one());
            starts.push(axis);
            starts.push(-axis);
        }
    }
    let mut evals: Vec<Eval<T>> = starts.into_iter().map(|u| frame.eval(u)).collect();
    if let Some(stop) = stop_below {
        if let Some(e) = evals.iter().find(|e| e.f <= stop) {
            return finish(e, true, true);
        }
    }
    // Best starts first; ties keep insertion order.
    evals.sort_by(|a, b| a.f.partial_cmp(&b.f).unwrap_or(std::cmp::Ordering::Equal));

    let scale = pi.shape.major_semi_length() + pj.shape.major_semi_length();
    let mut best: Option<(Eval<T>, bool)> = None;
    let mut found: Vec<Vector3<T>> = Vec::new();
    for start in evals {
        // skip starts sitting on a minimum already found
        if found.iter().any(|m| (m - start.u).norm() < lit(1e-6)) {
            continue;
        }
        let (e, converged) = newton(&frame, start, settings, scale, stop_below);
        if let Some(stop) = stop_below {
            if e.f <= stop {
                return finish(&e, true, true);
            }
        }
        if converged {
            found.push(e.u);
        }
        let better = match &best {
            None => true,
            Some((b, _)) => e.f < b.f,
        };
        if better {
            best = Some((e, converged));
        }
    }
    let (e, converged) = best.expect("at least one start direction");
    finish(&e, converged, false)
}

fn finish<T: Real>(e: &Eval<T>, converged: bool, stopped_early: bool) -> PairOverlap<T> {
    PairOverlap {
        signed_depth: e.f,
        direction: e.u,
        point_i: e.si,
        point_j: e.sj,
        converged,
        stopped_early,
    }
}

fn newton<T: Real>(
    frame: &Frame<'_, T>,
    start: Eval<T>,
    settings: &ContactSettings<T>,
    scale: T,
    stop_below: Option<T>,
) -> (Eval<T>, bool) {
    let eps = T::default_epsilon();
    let tol = settings.point_tolerance.max(lit::<T>(64.0) * eps * scale);
    let grad_tol = lit::<T>(16.0) * eps * scale;
    let max_angle: T = lit(0.5);
    let mut cur = start;
    for _ in 0..settings.max_iterations {
        let g = cur.si - cur.sj;
        let (e1, e2) = tangent_basis(&cur.u);
        let b = Vector2::new(e1.dot(&g), e2.dot(&g));
        if b.norm() <= grad_tol {
            return (cur, true);
        }
        let h = frame.hessian(&cur.u);
        let he1 = h * e1;
        let he2 = h * e2;
        let a = Matrix2::new(
            e1.dot(&he1) - cur.f,
            e1.dot(&he2),
            e2.dot(&he1),
            e2.dot(&he2) - cur.f,
        );
        let det = a.determinant();
        let mut step = if a[(0, 0)] > T::zero() && det > eps * a.norm_squared() {
            -(a.try_inverse().unwrap_or_else(Matrix2::identity) * b)
        } else {
            let curv = (a[(0, 0)].abs() + a[(1, 1)].abs()).max(scale * lit(1e-3));
            -b / curv
        };
        let n = step.norm();
        if n > max_angle {
            step *= max_angle / n;
        }
        let mut accepted = None;
        for _ in 0..30 {
            let u = (cur.u + e1 * step.x + e2 * step.y).normalize();
            let cand = frame.eval(u);
            if cand.f <= cur.f + eps * scale * lit(4.0) {
                accepted = Some(cand);
                break;
            }
            step *= lit::<T>(0.5);
        }
        let next = match accepted {
            Some(n) => n,
            // no decrease possible at working precision
            None => return (cur, true),
        };
        let moved = (next.si - cur.si).norm() + (next.sj - cur.sj).norm();
        cur = next;
        if let Some(stop) = stop_below {
            if cur.f <= stop {
                return (cur, true);
            }
        }
        if moved < tol {
            return (cur, true);
        }
    }
    (cur, false)
}

fn sphere_pair<T: Real>(
    pi: &Particle<T>,
    pj: &Particle<T>,
    shift: &Vector3<T>,
    branch: &Vector3<T>,
) -> PairOverlap<T> {
    let ri = pi.shape.semi_lengths()[0][0];
    let rj = pj.shape.semi_lengths()[0][0];
    let dist = branch.norm();
    let u = if dist > T::zero() {
        branch / dist
    } else {
        Vector3::x()
    };
    PairOverlap {
        signed_depth: ri + rj - dist,
        direction: u,
        point_i: pi.position + u * ri,
        point_j: pj.position + shift - u * rj,
        converged: true,
        stopped_early: false,
    }
}

/// Surface-point diagnostics used by tests and audits.
pub fn contact_residuals<T: Real + Debug>(c: &Contact<T>, pi: &Particle<T>, pj: &Particle<T>) -> (T, T) {
    (pi.surface_residual(&c.point_i), pj.surface_residual(&c.point_j))
}
