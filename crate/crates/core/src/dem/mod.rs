//! Gravitational deposition of an assembly into an open-top container.
//!
//! Particles start on a jittered grid above the floor with zero velocity and
//! fall under gravity. Contacts follow Hertz-Mindlin with Coulomb slip and
//! viscous normal damping; motion is integrated with a leapfrog central
//! difference scheme, rotations in the body frame with the full Euler
//! equations. The run stops once the mean kinetic energy per unit mass has
//! stayed below a threshold for a window of consecutive steps.

pub mod contact_law;
#[cfg(test)]
mod tests;

use std::collections::BTreeMap;

use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use contact_law::{
    hertz_elastic, hertz_energy, hertz_normal_force, hertz_normal_magnitude, mindlin_tangential_force,
    normal_stiffness, tangential_stiffness, Effective, Material,
};

use crate::distribution::rng_from_seed;
use crate::error::DemError;
use crate::geometry::{
    broad_phase, detect_wall_contact, pair_overlap, renormalize, Contact, ContactSettings, DomainSpec, Partner,
    Particle, Wall,
};
use crate::mc::random_orientation;
use crate::scalar::{lit, to_f64, Real};
use crate::snapshot::{ContactRecord, PackingSnapshot, Provenance, RunStatus, SnapshotDomain};

/// Open-top box `[0, width_x] x [0, width_y]` with the floor at `z = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Container {
    pub width_x: f64,
    pub width_y: f64,
}

impl Default for Container {
    fn default() -> Self {
        Self {
            width_x: 20.0,
            width_y: 20.0,
        }
    }
}

impl Container {
    pub fn validate(&self) -> Result<(), DemError> {
        if !(self.width_x > 0.0 && self.width_y > 0.0) || !self.width_x.is_finite() || !self.width_y.is_finite() {
            return Err(DemError::InvalidConfig("container widths must be positive".into()));
        }
        Ok(())
    }

    /// Floor first, then the walls at x = 0, x = wx, y = 0, y = wy.
    pub fn walls<T: Real>(&self) -> [Wall<T>; 5] {
        let o = Vector3::zeros();
        let far = Vector3::new(lit(self.width_x), lit(self.width_y), T::zero());
        [
            Wall::new(o, Vector3::z()),
            Wall::new(o, Vector3::x()),
            Wall::new(far, -Vector3::x()),
            Wall::new(o, Vector3::y()),
            Wall::new(far, -Vector3::y()),
        ]
    }

    pub fn area(&self) -> f64 {
        self.width_x * self.width_y
    }
}

/// Time step: fixed, or derived from the stiffest expected contact.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTimeStep", into = "RawTimeStep")]
pub enum TimeStep {
    Auto,
    Fixed(f64),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum RawTimeStep {
    Seconds(f64),
    Word(String),
}

impl TryFrom<RawTimeStep> for TimeStep {
    type Error = String;

    fn try_from(raw: RawTimeStep) -> Result<Self, String> {
        match raw {
            RawTimeStep::Seconds(dt) => Ok(TimeStep::Fixed(dt)),
            RawTimeStep::Word(w) if w == "auto" => Ok(TimeStep::Auto),
            RawTimeStep::Word(w) => Err(format!("dt must be a number or \"auto\", got \"{w}\"")),
        }
    }
}

impl From<TimeStep> for RawTimeStep {
    fn from(t: TimeStep) -> Self {
        match t {
            TimeStep::Auto => RawTimeStep::Word("auto".into()),
            TimeStep::Fixed(dt) => RawTimeStep::Seconds(dt),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DemConfig {
    pub material: Material,
    pub gravity: [f64; 3],
    pub dt: TimeStep,
    /// Mean kinetic energy per unit mass regarded as rest (J/kg).
    pub rest_ke_threshold: f64,
    pub rest_window: u64,
    pub max_steps: u64,
    /// Set from the run's global seed; not part of the config file.
    #[serde(skip)]
    pub seed: u64,
    /// Clearance around each enclosing sphere in the initial grid, relative
    /// to its radius.
    pub fill_gap: f64,
    /// Record every n-th step in the trace.
    pub trace_interval: u64,
}

impl Default for DemConfig {
    fn default() -> Self {
        Self {
            material: Material::default(),
            gravity: [0.0, 0.0, -9.81],
            dt: TimeStep::Auto,
            rest_ke_threshold: 1e-6,
            rest_window: 1000,
            max_steps: 1_000_000,
            seed: 0,
            fill_gap: 0.05,
            trace_interval: 1,
        }
    }
}

impl DemConfig {
    pub fn validate(&self) -> Result<(), DemError> {
        self.material.validate()?;
        let bad = |m: &str| Err(DemError::InvalidConfig(m.to_string()));
        if self.gravity.iter().any(|g| !g.is_finite()) {
            return bad("gravity must be finite");
        }
        if let TimeStep::Fixed(dt) = self.dt {
            if !(dt > 0.0 && dt.is_finite()) {
                return bad("dt must be > 0");
            }
        }
        if !(self.rest_ke_threshold > 0.0) {
            return bad("rest_ke_threshold must be > 0");
        }
        if self.rest_window == 0 {
            return bad("rest_window must be > 0");
        }
        if !(self.fill_gap > 0.0 && self.fill_gap < 1.0) {
            return bad("fill_gap must lie in (0, 1)");
        }
        if self.trace_interval == 0 {
            return bad("trace_interval must be > 0");
        }
        Ok(())
    }

    pub fn gravity_vector<T: Real>(&self) -> Vector3<T> {
        Vector3::new(lit(self.gravity[0]), lit(self.gravity[1]), lit(self.gravity[2]))
    }
}

/// Key of a contact in the tangential memory: slice index of body i and
/// its partner (slice index or wall index).
pub type ContactKey = (usize, Partner);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: u64,
    pub time: f64,
    pub kinetic_energy: f64,
    pub max_speed: f64,
    pub n_contacts: usize,
}

#[derive(Debug, Clone)]
pub struct DemState<T: Real> {
    pub particles: Vec<Particle<T>>,
    /// Half-step velocities `v^(n-1/2)` once stepping has started.
    pub velocities: Vec<Vector3<T>>,
    /// Angular velocities in the body frame.
    pub angular_velocities: Vec<Vector3<T>>,
    /// Elastic tangential force of each live contact.
    pub tangential: BTreeMap<ContactKey, Vector3<T>>,
    pub step: u64,
    pub time: T,
    pub trace: Vec<TraceRow>,
    /// Blow-up guard on particle speed.
    pub speed_limit: T,
    inverse_inertia: Vec<Matrix3<T>>,
    directions: BTreeMap<ContactKey, Vector3<T>>,
    started: bool,
}

impl<T: Real> DemState<T> {
    /// State at rest with no speed limit.
    pub fn new(particles: Vec<Particle<T>>) -> Self {
        let n = particles.len();
        let inverse_inertia = particles
            .iter()
            .map(|p| p.inertia.try_inverse().unwrap_or_else(Matrix3::zeros))
            .collect();
        Self {
            particles,
            velocities: vec![Vector3::zeros(); n],
            angular_velocities: vec![Vector3::zeros(); n],
            tangential: BTreeMap::new(),
            step: 0,
            time: T::zero(),
            trace: Vec::new(),
            speed_limit: T::max_value().unwrap_or_else(|| lit(f64::MAX)),
            inverse_inertia,
            directions: BTreeMap::new(),
            started: false,
        }
    }

    pub fn total_mass(&self) -> T {
        self.particles.iter().fold(T::zero(), |s, p| s + p.mass)
    }

    /// Translational plus rotational kinetic energy of the stored velocities.
    pub fn kinetic_energy(&self) -> T {
        self.particles
            .iter()
            .zip(self.velocities.iter().zip(&self.angular_velocities))
            .fold(T::zero(), |s, (p, (v, w))| {
                s + lit::<T>(0.5) * (p.mass * v.norm_squared() + w.dot(&(p.inertia * w)))
            })
    }

    /// Gravitational potential energy relative to the origin.
    pub fn potential_energy(&self, gravity: &Vector3<T>) -> T {
        self.particles
            .iter()
            .fold(T::zero(), |s, p| s - p.mass * gravity.dot(&p.position))
    }

    pub fn max_speed(&self) -> T {
        self.velocities
            .iter()
            .fold(T::zero(), |m, v| if v.norm() > m { v.norm() } else { m })
    }
}

/// Places the assembly on a jittered grid above the floor.
///
/// Each particle gets a cubic cell of edge `2 R (1 + gap)` around its
/// enclosing sphere of radius `R`; cells are laid out in rows along x, rows
/// stack along y, and full layers stack along z. The centre is jittered by
/// less than the clearance so no two enclosing spheres, and no sphere and
/// wall, can touch.
pub fn initial_fill<T: Real>(
    assembly: &[Particle<T>],
    container: &Container,
    seed: u64,
    gap: f64,
) -> Result<DemState<T>, DemError> {
    container.validate()?;
    let mut rng = rng_from_seed(seed);
    let (wx, wy) = (container.width_x, container.width_y);
    let (mut x, mut y, mut z) = (0.0f64, 0.0f64, 0.0f64);
    let (mut row_depth, mut layer_height) = (0.0f64, 0.0f64);
    let mut top = 0.0f64;
    let mut particles = Vec::with_capacity(assembly.len());
    for p in assembly {
        let r = to_f64(p.bound_radius);
        let cell = 2.0 * r * (1.0 + gap);
        if cell > wx || cell > wy {
            return Err(DemError::InvalidConfig(format!(
                "container ({wx} x {wy}) narrower than particle {} ({cell:.3})",
                p.id
            )));
        }
        if x + cell > wx {
            x = 0.0;
            y += row_depth;
            row_depth = 0.0;
        }
        if y + cell > wy {
            x = 0.0;
            y = 0.0;
            z += layer_height;
            row_depth = 0.0;
            layer_height = 0.0;
        }
        let amp = 0.9 * gap * r;
        let mut jitter = || amp * (2.0 * rng.random::<f64>() - 1.0);
        let centre = Vector3::new(
            x + 0.5 * cell + jitter(),
            y + 0.5 * cell + jitter(),
            z + 0.5 * cell + jitter(),
        );
        let q = random_orientation(&mut rng);
        particles.push(p.clone().with_pose(centre.map(lit), q));
        x += cell;
        row_depth = row_depth.max(cell);
        layer_height = layer_height.max(cell);
        top = top.max(z + cell);
    }
    // dense column of enclosing spheres, never thinner than one layer
    let (volume, diameter) = assembly.iter().fold((0.0f64, 0.0f64), |(v, d), p| {
        let r = to_f64(p.bound_radius);
        (v + 4.0 / 3.0 * std::f64::consts::PI * r * r * r, d.max(2.0 * r))
    });
    let allowed = 10.0 * (volume / (0.64 * container.area())).max(diameter);
    if top > allowed {
        return Err(DemError::FillOverflow { needed: top, allowed });
    }
    let mut state = DemState::new(particles);
    state.speed_limit = lit(speed_limit_for(top, 9.81));
    Ok(state)
}

fn speed_limit_for(height: f64, g: f64) -> f64 {
    let v = 10.0 * (2.0 * g.abs() * height).sqrt();
    if v > 0.0 {
        v
    } else {
        f64::MAX
    }
}

/// Largest radius of curvature any contact can see, used for the time step.
fn max_contact_radius<T: Real>(p: &Particle<T>) -> T {
    if p.shape.is_sphere() {
        p.eq_radius
    } else {
        let a = p.shape.major_semi_length();
        a * a / p.shape.min_semi_length()
    }
}

/// `0.2 sqrt(m_min / k_max)` with `k_max` the Hertz tangent stiffness at a
/// depth of `1e-3 r_min` for the flattest wall contact in the assembly.
pub fn auto_time_step<T: Real>(particles: &[Particle<T>], material: &Material) -> T {
    let m_min = particles
        .iter()
        .map(|p| p.mass)
        .fold(T::max_value().unwrap_or_else(|| lit(f64::MAX)), |a, b| if b < a { b } else { a });
    let r_min = particles
        .iter()
        .map(|p| p.eq_radius)
        .fold(T::max_value().unwrap_or_else(|| lit(f64::MAX)), |a, b| if b < a { b } else { a });
    let r_max = particles
        .iter()
        .map(max_contact_radius)
        .fold(T::zero(), |a, b| if b > a { b } else { a });
    let eff = Effective {
        modulus: material.effective_modulus(),
        shear_modulus: material.effective_shear_modulus(),
        radius: r_max,
        mass: m_min,
    };
    let k = normal_stiffness(&eff, r_min * lit(1e-3));
    lit::<T>(0.2) * (m_min / k).sqrt()
}

pub fn resolve_time_step<T: Real>(particles: &[Particle<T>], config: &DemConfig) -> T {
    match config.dt {
        TimeStep::Fixed(dt) => lit(dt),
        TimeStep::Auto => auto_time_step(particles, &config.material),
    }
}

/// One resolved contact with the force it exerts on body i.
#[derive(Debug, Clone)]
pub struct ContactForce<T: Real> {
    /// Slice index of body i.
    pub i: usize,
    /// Partner by slice index, or wall index.
    pub partner: Partner,
    pub contact: Contact<T>,
    pub normal_force: T,
    pub tangential_force: Vector3<T>,
    /// Elastic normal energy stored in the contact.
    pub elastic_energy: T,
    memory: Vector3<T>,
}

impl<T: Real> ContactForce<T> {
    pub fn force(&self) -> Vector3<T> {
        self.contact.normal * self.normal_force + self.tangential_force
    }

    /// Lever-arm origin shared by both bodies.
    pub fn point(&self) -> Vector3<T> {
        (self.contact.point_i + self.contact.point_j) * lit::<T>(0.5)
    }
}

/// Per-particle resultants and the contact list they came from.
#[derive(Debug, Clone)]
pub struct Loads<T: Real> {
    pub force: Vec<Vector3<T>>,
    /// Moments about the centroid in the body frame.
    pub torque: Vec<Vector3<T>>,
    pub contacts: Vec<ContactForce<T>>,
    memory: BTreeMap<ContactKey, Vector3<T>>,
    directions: BTreeMap<ContactKey, Vector3<T>>,
}

impl<T: Real> Loads<T> {
    pub fn elastic_energy(&self) -> T {
        self.contacts.iter().fold(T::zero(), |s, c| s + c.elastic_energy)
    }
}

/// Surface curvature radius at a contact point, or the equivalent radius.
fn local_radius<T: Real>(p: &Particle<T>, point: &Vector3<T>) -> T {
    if p.shape.is_sphere() {
        p.eq_radius
    } else {
        p.curvature_radius_at(point).unwrap_or(p.eq_radius)
    }
}

fn point_velocity<T: Real>(state: &DemState<T>, i: usize, x: &Vector3<T>) -> Vector3<T> {
    let p = &state.particles[i];
    let w = p.orientation * state.angular_velocities[i];
    state.velocities[i] + w.cross(&(x - p.position))
}

/// All contacts of the current configuration, sorted by key.
fn detect_all<T: Real>(state: &DemState<T>, container: &Container) -> Result<Vec<(ContactKey, Contact<T>)>, DemError> {
    let candidates = broad_phase(&state.particles, &DomainSpec::Open);
    let settings = ContactSettings::default();
    let pairs: Result<Vec<Option<(ContactKey, Contact<T>)>>, DemError> = candidates
        .par_iter()
        .map(|cand| {
            let (pi, pj) = (&state.particles[cand.i], &state.particles[cand.j]);
            let key = (cand.i, Partner::Particle(cand.j));
            let warm = state.directions.get(&key).copied();
            let ov = pair_overlap(pi, pj, &cand.shift, &settings, Some(T::zero()), warm);
            if !ov.converged {
                return Err(DemError::ContactNonConvergence {
                    id_i: pi.id,
                    id_j: pj.id,
                });
            }
            if ov.stopped_early || ov.signed_depth <= T::zero() {
                return Ok(None);
            }
            let delta = ov.point_j - ov.point_i;
            let depth = delta.norm();
            if depth <= T::zero() {
                return Ok(None);
            }
            Ok(Some((
                key,
                Contact {
                    id_i: pi.id,
                    partner: Partner::Particle(pj.id),
                    point_i: ov.point_i,
                    point_j: ov.point_j,
                    delta,
                    depth,
                    normal: delta / depth,
                },
            )))
        })
        .collect();
    let mut out: Vec<(ContactKey, Contact<T>)> = pairs?.into_iter().flatten().collect();
    let walls = container.walls::<T>();
    for (i, p) in state.particles.iter().enumerate() {
        for (k, w) in walls.iter().enumerate() {
            if let Some(c) = detect_wall_contact(p, w, k) {
                out.push(((i, Partner::Wall(k)), c));
            }
        }
    }
    out.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(out)
}

/// Contact forces and per-particle resultants `F = m g + sum f`,
/// `M = sum (x_c - x) x f` (body frame).
///
/// Tangential memory is read from `state` and the updated memory returned
/// inside the loads; it is committed by [`central_difference_step`].
pub fn resultant_loads<T: Real>(
    state: &DemState<T>,
    container: &Container,
    material: &Material,
    gravity: &Vector3<T>,
    dt: T,
) -> Result<Loads<T>, DemError> {
    let found = detect_all(state, container)?;
    let beta: T = lit(material.damping_ratio);
    let mu: T = lit(material.friction_coefficient);
    let contacts: Vec<ContactForce<T>> = found
        .into_par_iter()
        .map(|((i, partner), c)| {
            let pi = &state.particles[i];
            let cp = (c.point_i + c.point_j) * lit::<T>(0.5);
            let ri = local_radius(pi, &c.point_i);
            let (eff, v_rel) = match partner {
                Partner::Particle(j) => {
                    let pj = &state.particles[j];
                    let rj = local_radius(pj, &c.point_j);
                    let eff = material.effective(ri, Some(rj), pi.mass, Some(pj.mass));
                    (eff, point_velocity(state, i, &cp) - point_velocity(state, j, &cp))
                }
                Partner::Wall(_) => (material.effective(ri, None, pi.mass, None), point_velocity(state, i, &cp)),
            };
            let vn = v_rel.dot(&c.normal);
            let fn_mag = hertz_normal_magnitude(c.depth, &eff, beta, vn);
            let mut memory = state.tangential.get(&(i, partner)).copied().unwrap_or_else(Vector3::zeros);
            let ft = if mu > T::zero() {
                mindlin_tangential_force(&c, &eff, mu, fn_mag, &mut memory, &v_rel, dt)
            } else {
                memory = Vector3::zeros();
                Vector3::zeros()
            };
            ContactForce {
                i,
                partner,
                elastic_energy: hertz_energy(&eff, c.depth),
                contact: c,
                normal_force: fn_mag,
                tangential_force: ft,
                memory,
            }
        })
        .collect();

    let n = state.particles.len();
    let mut force: Vec<Vector3<T>> = state.particles.iter().map(|p| gravity * p.mass).collect();
    let mut torque_world = vec![Vector3::zeros(); n];
    let mut memory = BTreeMap::new();
    let mut directions = BTreeMap::new();
    for cf in &contacts {
        let f = cf.force();
        let x = cf.point();
        force[cf.i] += f;
        torque_world[cf.i] += (x - state.particles[cf.i].position).cross(&f);
        if let Partner::Particle(j) = cf.partner {
            force[j] -= f;
            torque_world[j] -= (x - state.particles[j].position).cross(&f);
            directions.insert((cf.i, cf.partner), -cf.contact.normal);
        }
        memory.insert((cf.i, cf.partner), cf.memory);
    }
    let torque = state
        .particles
        .iter()
        .zip(torque_world)
        .map(|(p, m)| p.orientation.inverse_transform_vector(&m))
        .collect();
    Ok(Loads {
        force,
        torque,
        contacts,
        memory,
        directions,
    })
}

/// Leapfrog update `v += F/m dt`, `x += v dt`; the first step kicks by half
/// a step from the initial velocities. Angular velocity follows
/// `I w' = M - w x (I w)` in the body frame and the orientation is advanced
/// by `q <- q exp(w dt)`.
pub fn central_difference_step<T: Real>(state: &mut DemState<T>, loads: Loads<T>, dt: T) -> Result<(), DemError> {
    let kick = if state.started { dt } else { dt * lit(0.5) };
    state.tangential = loads.memory;
    state.directions = loads.directions;
    let inv = &state.inverse_inertia;
    state
        .particles
        .par_iter_mut()
        .zip(state.velocities.par_iter_mut())
        .zip(state.angular_velocities.par_iter_mut())
        .enumerate()
        .for_each(|(k, ((p, v), w))| {
            *v += loads.force[k] * (kick / p.mass);
            p.position += *v * dt;
            let iw = p.inertia * *w;
            *w += inv[k] * (loads.torque[k] - w.cross(&iw)) * kick;
            let turn = UnitQuaternion::from_scaled_axis(*w * dt);
            p.orientation = renormalize(&(p.orientation * turn));
        });
    state.started = true;
    state.step += 1;
    state.time += dt;
    for (k, v) in state.velocities.iter().enumerate() {
        let speed = v.norm();
        if !(speed <= state.speed_limit) {
            return Err(DemError::InstabilityDetected {
                step: state.step,
                id: state.particles[k].id,
                speed: to_f64(speed),
                limit: to_f64(state.speed_limit),
            });
        }
    }
    Ok(())
}

/// Outcome of [`run_deposition`]; the snapshot is returned at rest or not.
#[derive(Debug, Clone)]
pub struct DemRun<T: Real> {
    pub snapshot: PackingSnapshot<T>,
    pub trace: Vec<TraceRow>,
    pub at_rest: bool,
    pub dt: T,
    pub velocities: Vec<Vector3<T>>,
    pub angular_velocities: Vec<Vector3<T>>,
    /// Largest `|F_t| / (mu |F_n|)` seen at any contact and step.
    pub max_friction_ratio: f64,
    /// Contact-steps where the tangential force exceeded `mu |F_n|`.
    pub friction_violations: u64,
}

impl<T: Real> DemRun<T> {
    pub fn ensure_at_rest(&self) -> Result<(), DemNotAtRest> {
        if self.at_rest {
            Ok(())
        } else {
            Err(DemNotAtRest {
                steps: self.snapshot.status.iterations,
                kinetic_energy: self.trace.last().map_or(f64::NAN, |t| t.kinetic_energy),
            })
        }
    }
}

#[derive(Debug, Clone, thiserror::Error)]
#[error("not at rest after {steps} steps (kinetic energy {kinetic_energy:.3e} J)")]
pub struct DemNotAtRest {
    pub steps: u64,
    pub kinetic_energy: f64,
}

/// Steps `state` until rest or `config.max_steps`.
pub fn run_from_state<T: Real>(
    mut state: DemState<T>,
    config: &DemConfig,
    container: &Container,
) -> Result<DemRun<T>, DemError> {
    config.validate()?;
    container.validate()?;
    if state.particles.is_empty() {
        return Err(DemError::InvalidConfig("empty assembly".into()));
    }
    let g = config.gravity_vector::<T>();
    let dt = resolve_time_step(&state.particles, config);
    let mass = state.total_mass();
    let threshold: T = lit(config.rest_ke_threshold);
    let mut quiet = 0u64;
    let mut at_rest = false;
    log::info!("dem: {} particles, dt = {:.3e} s", state.particles.len(), to_f64(dt));
    let mu = config.material.friction_coefficient;
    let mut max_friction_ratio = 0.0f64;
    let mut friction_violations = 0u64;
    while state.step < config.max_steps {
        let loads = resultant_loads(&state, container, &config.material, &g, dt)?;
        let n_contacts = loads.contacts.len();
        for c in &loads.contacts {
            let ft = to_f64(c.tangential_force.norm());
            let limit = mu * to_f64(c.normal_force).abs();
            if ft > 0.0 {
                max_friction_ratio = max_friction_ratio.max(ft / limit);
            }
            if ft > limit * (1.0 + 1e-12) {
                friction_violations += 1;
            }
        }
        central_difference_step(&mut state, loads, dt)?;
        let ke = state.kinetic_energy();
        if state.step % config.trace_interval == 0 {
            let row = TraceRow {
                step: state.step,
                time: to_f64(state.time),
                kinetic_energy: to_f64(ke),
                max_speed: to_f64(state.max_speed()),
                n_contacts,
            };
            state.trace.push(row);
        }
        if ke / mass < threshold {
            quiet += 1;
            if quiet >= config.rest_window {
                at_rest = true;
                break;
            }
        } else {
            quiet = 0;
        }
    }
    let loads = resultant_loads(&state, container, &config.material, &g, dt)?;
    let contacts = loads
        .contacts
        .iter()
        .map(|cf| ContactRecord {
            contact: cf.contact.clone(),
            force: Some(cf.force()),
        })
        .collect();
    Ok(DemRun {
        snapshot: PackingSnapshot {
            provenance: Provenance::Dem,
            domain: SnapshotDomain::Container {
                width_x: lit(container.width_x),
                width_y: lit(container.width_y),
            },
            particles: state.particles,
            contacts,
            status: RunStatus {
                iterations: state.step,
                completed: at_rest,
            },
        },
        trace: state.trace,
        at_rest,
        dt,
        velocities: state.velocities,
        angular_velocities: state.angular_velocities,
        max_friction_ratio,
        friction_violations,
    })
}

/// Fills the container and deposits the assembly under gravity.
pub fn run_deposition<T: Real>(
    assembly: &[Particle<T>],
    config: &DemConfig,
    container: &Container,
) -> Result<DemRun<T>, DemError> {
    config.validate()?;
    let mut state = initial_fill(assembly, container, config.seed, config.fill_gap)?;
    let top = state
        .particles
        .iter()
        .map(|p| to_f64(p.position.z + p.bound_radius))
        .fold(0.0, f64::max);
    let g = config.gravity.iter().map(|x| x * x).sum::<f64>().sqrt();
    state.speed_limit = lit(speed_limit_for(top, g));
    run_from_state(state, config, container)
}
