//! Monte Carlo overlap relaxation for arbitrary convex grains.
//!
//! Particles start uniformly scattered in a cube whose edge gives the
//! requested initial density. Every iteration detects all overlaps and moves
//! each overlapping particle by the sum of its per-contact translations
//! `t_ij = m_i / (m_i + m_j) * delta` and rotates it by the sum of
//! `r_ij = d_i x t_ij`, where `d_i` runs from the centroid to the contact
//! point. Moves are computed from one configuration and applied together.
//!
//! The initial density is deliberately above what non-overlapping grains
//! can reach. When the relaxation stalls, the cube is enlarged by a small
//! factor (positions scaled with it) until the overlap drops below the
//! tolerance.

use nalgebra::{Unit, UnitQuaternion, Vector3};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distribution::rng_from_seed;
use crate::error::McError;
use crate::geometry::{
    broad_phase, detect_contact_shifted, detect_wall_contact, relative_overlap, renormalize, Contact, ContactError,
    ContactSettings, DomainSpec, Particle, Wall,
};
use crate::scalar::{lit, to_f64, Real};
use crate::snapshot::{ContactRecord, PackingSnapshot, Provenance, RunStatus, SnapshotDomain};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    Periodic,
    HardWalls,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McConfig {
    pub phi0: f64,
    /// Target mean relative overlap.
    pub tolerance: f64,
    /// Largest single relative overlap accepted at convergence, as a
    /// multiple of `tolerance`.
    pub max_overlap_factor: f64,
    pub max_iterations: u64,
    pub rotation_scale: f64,
    pub boundary: Boundary,
    /// Set from the run's global seed; not part of the config file.
    #[serde(skip)]
    pub seed: u64,
    /// Divide summed moves by the contact count.
    pub average_moves: bool,
    /// Iterations without sufficient improvement before the domain grows.
    pub stall_window: u64,
    /// Relative improvement of the best mean overlap that resets the stall clock.
    pub stall_improvement: f64,
    /// Relative edge growth applied on each stall.
    pub expansion_step: f64,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            phi0: 0.86,
            tolerance: 1e-4,
            max_overlap_factor: 10.0,
            max_iterations: 100_000,
            rotation_scale: 1.0,
            boundary: Boundary::Periodic,
            seed: 0,
            average_moves: false,
            stall_window: 100,
            stall_improvement: 1e-2,
            expansion_step: 2e-3,
        }
    }
}

impl McConfig {
    pub fn validate(&self) -> Result<(), McError> {
        let bad = |m: &str| Err(McError::InvalidConfig(m.to_string()));
        if !(self.phi0 > 0.0 && self.phi0 <= 1.0) {
            return bad("phi0 must lie in (0, 1]");
        }
        if !(self.tolerance > 0.0) {
            return bad("tolerance must be > 0");
        }
        if !(self.max_overlap_factor >= 1.0) {
            return bad("max_overlap_factor must be >= 1");
        }
        if self.max_iterations < 1 {
            return bad("max_iterations must be >= 1");
        }
        if !(self.rotation_scale >= 0.0) {
            return bad("rotation_scale must be >= 0");
        }
        if self.stall_window < 1 || !(self.stall_improvement >= 0.0) || !(self.expansion_step >= 0.0) {
            return bad("stall_window >= 1, stall_improvement >= 0 and expansion_step >= 0 required");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub iteration: u64,
    pub mean_rel_overlap: f64,
    pub max_rel_overlap: f64,
    pub n_contacts: usize,
    pub domain_edge: f64,
}

#[derive(Debug, Clone)]
pub struct McState<T: Real> {
    pub particles: Vec<Particle<T>>,
    /// Edge from the initial-density formula.
    pub initial_edge: T,
    /// Current edge (grows on stalls).
    pub domain_edge: T,
    pub iteration: u64,
    pub mean_relative_overlap: T,
    pub max_relative_overlap: T,
    pub history: Vec<HistoryRow>,
}

/// Per-particle translation and rotation vectors of one iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Move<T: Real> {
    pub translation: Vector3<T>,
    pub rotation: Vector3<T>,
    pub contacts: usize,
}

impl<T: Real> Default for Move<T> {
    fn default() -> Self {
        Self {
            translation: Vector3::zeros(),
            rotation: Vector3::zeros(),
            contacts: 0,
        }
    }
}

/// Edge of the cube holding the assembly at density `phi0`.
pub fn initial_domain<T: Real>(assembly: &[Particle<T>], phi0: T) -> T {
    let v = assembly.iter().fold(T::zero(), |s, p| s + p.volume());
    (v / phi0).cbrt()
}

/// Uniformly random orientation from three uniform deviates.
pub fn random_orientation<T: Real, R: Rng + ?Sized>(rng: &mut R) -> UnitQuaternion<T> {
    let u1: f64 = rng.random();
    let u2: f64 = rng.random();
    let u3: f64 = rng.random();
    let tau = std::f64::consts::TAU;
    let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
    crate::geometry::orientation_from_wxyz(
        lit(b * (tau * u3).cos()),
        lit(a * (tau * u2).sin()),
        lit(a * (tau * u2).cos()),
        lit(b * (tau * u3).sin()),
    )
}

/// Scatters the assembly uniformly in `[0, edge)^3` with random orientations.
pub fn initial_placement<T: Real>(assembly: &[Particle<T>], edge: T, seed: u64) -> McState<T> {
    let mut rng = rng_from_seed(seed);
    let particles = assembly
        .iter()
        .map(|p| {
            let pos = Vector3::new(
                edge * lit(rng.random::<f64>()),
                edge * lit(rng.random::<f64>()),
                edge * lit(rng.random::<f64>()),
            );
            let q = random_orientation(&mut rng);
            p.clone().with_pose(pos, q)
        })
        .collect();
    McState {
        particles,
        initial_edge: edge,
        domain_edge: edge,
        iteration: 0,
        mean_relative_overlap: T::zero(),
        max_relative_overlap: T::zero(),
        history: Vec::new(),
    }
}

/// Translation and rotation of `p_i` caused by one contact.
///
/// `c` is seen from `p_i`; `mass_j = None` means an immovable wall, for
/// which the whole overlap vector is applied to `p_i`.
pub fn pair_move<T: Real>(c: &Contact<T>, p_i: &Particle<T>, mass_j: Option<T>) -> (Vector3<T>, Vector3<T>) {
    let t = match mass_j {
        Some(mj) => c.delta * (p_i.mass / (p_i.mass + mj)),
        None => c.delta,
    };
    let d = c.point_i - p_i.position;
    (t, d.cross(&t))
}

/// Contact of a candidate pair as seen from `i`, with `j` unshifted.
#[derive(Debug, Clone)]
pub struct PairContact<T: Real> {
    pub i: usize,
    pub j: usize,
    pub shift: Vector3<T>,
    pub contact: Contact<T>,
}

fn walls_of_cube<T: Real>(edge: T) -> [Wall<T>; 6] {
    let o = Vector3::zeros();
    let e = Vector3::repeat(edge);
    [
        Wall::new(o, Vector3::x()),
        Wall::new(e, -Vector3::x()),
        Wall::new(o, Vector3::y()),
        Wall::new(e, -Vector3::y()),
        Wall::new(o, Vector3::z()),
        Wall::new(e, -Vector3::z()),
    ]
}

fn domain_of<T: Real>(state: &McState<T>, boundary: Boundary) -> DomainSpec<T> {
    match boundary {
        Boundary::Periodic => DomainSpec::Periodic {
            edge: state.domain_edge,
        },
        Boundary::HardWalls => DomainSpec::Open,
    }
}

/// All particle-particle and wall contacts of the current state.
pub fn find_contacts<T: Real>(
    state: &McState<T>,
    boundary: Boundary,
) -> (Vec<PairContact<T>>, Vec<Contact<T>>) {
    let domain = domain_of(state, boundary);
    let candidates = broad_phase(&state.particles, &domain);
    let settings = ContactSettings::default();
    let pairs: Vec<PairContact<T>> = candidates
        .par_iter()
        .filter_map(|cand| {
            let (pi, pj) = (&state.particles[cand.i], &state.particles[cand.j]);
            let c = match detect_contact_shifted(pi, pj, &cand.shift, &settings, None) {
                Ok(c) => c,
                // keep the last iterate; the pair is treated as contacting
                Err(ContactError::NonConvergence { last, .. }) => last,
            }?;
            Some(PairContact {
                i: cand.i,
                j: cand.j,
                shift: cand.shift,
                contact: c,
            })
        })
        .collect();
    let walls = match boundary {
        Boundary::Periodic => Vec::new(),
        Boundary::HardWalls => {
            let ws = walls_of_cube(state.domain_edge);
            state
                .particles
                .iter()
                .flat_map(|p| {
                    ws.iter()
                        .enumerate()
                        .filter_map(|(k, w)| detect_wall_contact(p, w, k))
                        .collect::<Vec<_>>()
                })
                .collect()
        }
    };
    (pairs, walls)
}

/// Relative overlaps of all contacts, pairs first then walls.
pub fn relative_overlaps<T: Real>(
    particles: &[Particle<T>],
    pairs: &[PairContact<T>],
    walls: &[Contact<T>],
) -> Vec<T> {
    let index = index_of(particles);
    pairs
        .iter()
        .map(|pc| relative_overlap(&pc.contact, &particles[pc.i], Some(&particles[pc.j])))
        .chain(walls.iter().map(|c| {
            let p = &particles[index[&c.id_i]];
            relative_overlap(c, p, None)
        }))
        .collect()
}

/// Summed (or averaged) moves of every particle, accumulated in contact
/// order so results do not depend on scheduling.
pub fn aggregate_moves<T: Real>(
    particles: &[Particle<T>],
    pairs: &[PairContact<T>],
    walls: &[Contact<T>],
    average: bool,
) -> Vec<Move<T>> {
    let mut moves = vec![Move::default(); particles.len()];
    for pc in pairs {
        let (pi, pj) = (&particles[pc.i], &particles[pc.j]);
        let (t, r) = pair_move(&pc.contact, pi, Some(pj.mass));
        add(&mut moves[pc.i], t, r);
        // j's view: positions of j are shifted into i's image
        let mut pj_img = pj.clone();
        pj_img.position += pc.shift;
        let cj = pc.contact.swapped().expect("particle pair");
        let (t, r) = pair_move(&cj, &pj_img, Some(pi.mass));
        add(&mut moves[pc.j], t, r);
    }
    let index = index_of(particles);
    for c in walls {
        let i = index[&c.id_i];
        let (t, r) = pair_move(c, &particles[i], None);
        add(&mut moves[i], t, r);
    }
    if average {
        for m in moves.iter_mut().filter(|m| m.contacts > 1) {
            let n: T = lit(m.contacts as f64);
            m.translation /= n;
            m.rotation /= n;
        }
    }
    moves
}

fn index_of<T: Real>(particles: &[Particle<T>]) -> std::collections::HashMap<usize, usize> {
    particles.iter().enumerate().map(|(k, p)| (p.id, k)).collect()
}

fn add<T: Real>(m: &mut Move<T>, t: Vector3<T>, r: Vector3<T>) {
    m.translation += t;
    m.rotation += r;
    m.contacts += 1;
}

/// Applies moves simultaneously. Rotation angle is
/// `rotation_scale * |R| / r_eq^2` about `R / |R|`.
pub fn apply_moves<T: Real>(state: &mut McState<T>, moves: &[Move<T>], rotation_scale: T, boundary: Boundary) {
    let edge = state.domain_edge;
    state.particles.par_iter_mut().zip(moves.par_iter()).for_each(|(p, m)| {
        if m.contacts == 0 {
            return;
        }
        p.position += m.translation;
        let rn = m.rotation.norm();
        if rotation_scale > T::zero() && rn > T::zero() && !p.shape.is_sphere() {
            let req = p.equivalent_radius();
            let angle = rotation_scale * rn / (req * req);
            let axis = Unit::new_unchecked(m.rotation / rn);
            p.orientation = renormalize(&(UnitQuaternion::from_axis_angle(&axis, angle) * p.orientation));
        }
        match boundary {
            Boundary::Periodic => {
                p.position = p.position.map(|x| {
                    let w = x - (x / edge).floor() * edge;
                    if w >= edge {
                        T::zero()
                    } else {
                        w
                    }
                });
            }
            Boundary::HardWalls => {
                p.position = p.position.map(|x| x.max(T::zero()).min(edge));
            }
        }
    });
}

/// Outcome of [`run`]; the snapshot is returned whether or not it converged.
#[derive(Debug, Clone)]
pub struct McRun<T: Real> {
    pub snapshot: PackingSnapshot<T>,
    pub history: Vec<HistoryRow>,
    pub converged: bool,
    pub final_edge: T,
    pub initial_edge: T,
    pub expansions: u64,
}

impl<T: Real> McRun<T> {
    pub fn ensure_converged(&self) -> Result<(), McNotConverged> {
        if self.converged {
            Ok(())
        } else {
            let last = self.history.last();
            Err(McNotConverged {
                iterations: self.snapshot.status.iterations,
                mean_rel_overlap: last.map_or(f64::NAN, |h| h.mean_rel_overlap),
            })
        }
    }
}

#[derive(Debug, Clone, thiserror::Error)]
#[error("not converged after {iterations} iterations (mean relative overlap {mean_rel_overlap:.3e})")]
pub struct McNotConverged {
    pub iterations: u64,
    pub mean_rel_overlap: f64,
}

/// One full relaxation iteration. Returns `(mean, max, contacts)` measured
/// before the move.
pub fn iterate<T: Real>(state: &mut McState<T>, config: &McConfig) -> (T, T, usize) {
    let (pairs, walls) = find_contacts(state, config.boundary);
    let rel = relative_overlaps(&state.particles, &pairs, &walls);
    let (mean, max) = mean_max(&rel);
    let moves = aggregate_moves(&state.particles, &pairs, &walls, config.average_moves);
    apply_moves(state, &moves, lit(config.rotation_scale), config.boundary);
    (mean, max, rel.len())
}

fn mean_max<T: Real>(rel: &[T]) -> (T, T) {
    if rel.is_empty() {
        return (T::zero(), T::zero());
    }
    let sum = rel.iter().fold(T::zero(), |s, &x| s + x);
    let max = rel.iter().fold(T::zero(), |m, &x| if x > m { x } else { m });
    (sum / lit(rel.len() as f64), max)
}

fn expand<T: Real>(state: &mut McState<T>, factor: T) {
    state.domain_edge *= factor;
    for p in state.particles.iter_mut() {
        p.position *= factor;
    }
}

/// Runs the relaxation to convergence or `max_iterations`.
pub fn run<T: Real>(assembly: &[Particle<T>], config: &McConfig) -> Result<McRun<T>, McError> {
    config.validate()?;
    if assembly.is_empty() {
        return Err(McError::EmptyAssembly);
    }
    let l0 = initial_domain(assembly, lit(config.phi0));
    let mut state = initial_placement(assembly, l0, config.seed);
    let tol: T = lit(config.tolerance);
    let max_tol: T = lit(config.tolerance * config.max_overlap_factor);
    let mut best = T::max_value().unwrap_or_else(|| lit(f64::MAX));
    let mut last_progress = 0u64;
    let mut expansions = 0u64;
    let mut converged = false;

    loop {
        let (pairs, walls) = find_contacts(&state, config.boundary);
        let rel = relative_overlaps(&state.particles, &pairs, &walls);
        let (mean, max) = mean_max(&rel);
        state.mean_relative_overlap = mean;
        state.max_relative_overlap = max;
        state.history.push(HistoryRow {
            iteration: state.iteration,
            mean_rel_overlap: to_f64(mean),
            max_rel_overlap: to_f64(max),
            n_contacts: rel.len(),
            domain_edge: to_f64(state.domain_edge),
        });
        if mean <= tol && max <= max_tol {
            converged = true;
            break;
        }
        if state.iteration >= config.max_iterations {
            break;
        }
        if mean < best * (T::one() - lit(config.stall_improvement)) {
            best = mean;
            last_progress = state.iteration;
        } else if state.iteration - last_progress >= config.stall_window && config.expansion_step > 0.0 {
            expand(&mut state, lit(1.0 + config.expansion_step));
            expansions += 1;
            log::debug!(
                "mc: stall at iteration {} (mean {:.3e}), edge -> {:.6}",
                state.iteration,
                to_f64(mean),
                to_f64(state.domain_edge)
            );
            best = T::max_value().unwrap_or_else(|| lit(f64::MAX));
            last_progress = state.iteration;
            state.iteration += 1;
            continue;
        }
        let moves = aggregate_moves(&state.particles, &pairs, &walls, config.average_moves);
        apply_moves(&mut state, &moves, lit(config.rotation_scale), config.boundary);
        state.iteration += 1;
    }

    let (pairs, walls) = find_contacts(&state, config.boundary);
    let mut contacts: Vec<ContactRecord<T>> = pairs
        .into_iter()
        .map(|pc| ContactRecord {
            contact: pc.contact,
            force: None,
        })
        .collect();
    contacts.extend(walls.into_iter().map(|c| ContactRecord { contact: c, force: None }));
    let domain = match config.boundary {
        Boundary::Periodic => SnapshotDomain::Periodic {
            edge: state.domain_edge,
        },
        Boundary::HardWalls => SnapshotDomain::WalledCube {
            edge: state.domain_edge,
        },
    };
    Ok(McRun {
        snapshot: PackingSnapshot {
            provenance: Provenance::MonteCarlo,
            domain,
            particles: state.particles,
            contacts,
            status: RunStatus {
                iterations: state.iteration,
                completed: converged,
            },
        },
        history: state.history,
        converged,
        final_edge: state.domain_edge,
        initial_edge: state.initial_edge,
        expansions,
    })
}
