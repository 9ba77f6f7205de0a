use approx::assert_relative_eq;
use nalgebra::Vector3;

use super::*;
use crate::distribution::{build_assembly, AssemblySpec, FamilyKind, ShapeFamily, SizeDistribution};
use crate::geometry::{detect_contact, ParticleShape};

const DENSITY: f64 = 2650.0;

fn sphere(id: usize, r: f64, pos: [f64; 3]) -> Particle<f64> {
    Particle::new(id, ParticleShape::sphere(r).unwrap(), DENSITY)
        .unwrap()
        .with_pose(Vector3::from(pos), UnitQuaternion::identity())
}

fn g() -> Vector3<f64> {
    Vector3::new(0.0, 0.0, -9.81)
}

fn wide() -> Container {
    Container {
        width_x: 10.0,
        width_y: 10.0,
    }
}

fn step_n(state: &mut DemState<f64>, container: &Container, material: &Material, gravity: &Vector3<f64>, dt: f64, n: usize) {
    for _ in 0..n {
        let loads = resultant_loads(state, container, material, gravity, dt).unwrap();
        central_difference_step(state, loads, dt).unwrap();
    }
}

/// Static overlap of a sphere resting on a rigid floor.
fn equilibrium_depth(r: f64, m: f64, material: &Material) -> f64 {
    let e_star: f64 = material.effective_modulus();
    (m * 9.81 / (4.0 / 3.0 * e_star * r.sqrt())).powf(2.0 / 3.0)
}

#[test]
fn isolated_particle_feels_only_gravity() {
    let state = DemState::new(vec![sphere(0, 0.5, [5.0, 5.0, 3.0])]);
    let loads = resultant_loads(&state, &wide(), &Material::default(), &g(), 1e-3).unwrap();
    let m = state.particles[0].mass;
    assert_eq!(loads.force[0], g() * m);
    assert_eq!(loads.torque[0], Vector3::zeros());
    assert!(loads.contacts.is_empty());
}

#[test]
fn sphere_at_equilibrium_depth_is_balanced() {
    let material = Material::default();
    let r = 0.5;
    let p = sphere(0, r, [5.0, 5.0, 0.0]);
    let d = equilibrium_depth(r, p.mass, &material);
    let state = DemState::new(vec![p.with_pose(Vector3::new(5.0, 5.0, r - d), UnitQuaternion::identity())]);
    let loads = resultant_loads(&state, &wide(), &material, &g(), 1e-3).unwrap();
    let m = state.particles[0].mass;
    assert!(loads.force[0].z.abs() <= 1e-9 * m * 9.81, "{}", loads.force[0].z);
}

#[test]
fn head_on_contact_forces_cancel() {
    let material = Material::default();
    let mut state = DemState::new(vec![sphere(0, 0.5, [4.0, 5.0, 3.0]), sphere(1, 0.5, [4.99, 5.0, 3.0])]);
    state.velocities[0] = Vector3::new(0.3, 0.1, 0.0);
    state.velocities[1] = Vector3::new(-0.2, 0.0, 0.05);
    let loads = resultant_loads(&state, &wide(), &material, &g(), 1e-3).unwrap();
    assert_eq!(loads.contacts.len(), 1);
    let net: Vector3<f64> = loads.force.iter().sum();
    let weight = g() * state.total_mass();
    let scale = loads.contacts[0].force().norm();
    assert!((net - weight).norm() <= 1e-12 * scale);
    assert_relative_eq!(loads.force[0].x + loads.force[1].x, 0.0, epsilon = 1e-12 * scale);
}

#[test]
fn free_fall_matches_kinematics() {
    let mut state = DemState::new(vec![sphere(0, 0.5, [5.0, 5.0, 10.0])]);
    step_n(&mut state, &wide(), &Material::default(), &g(), 1e-3, 1000);
    let dz = state.particles[0].position.z - 10.0;
    assert!((dz + 4.905).abs() <= 0.5 * 9.81 * 1e-3 * 1.0, "dz = {dz}");
}

#[test]
fn uniform_motion_without_forces() {
    let mut state = DemState::new(vec![sphere(0, 0.5, [2.0, 3.0, 4.0])]);
    let v = Vector3::new(0.25, -0.125, 0.5);
    state.velocities[0] = v;
    let dt = 1.0 / 1024.0;
    step_n(&mut state, &wide(), &Material::default(), &Vector3::zeros(), dt, 1024);
    assert_eq!(state.particles[0].position, Vector3::new(2.0, 3.0, 4.0) + v);
}

#[test]
fn spin_of_free_sphere_is_conserved() {
    let mut state = DemState::new(vec![sphere(0, 0.5, [5.0, 5.0, 5.0])]);
    let w0 = Vector3::new(3.0, -1.0, 2.0);
    state.angular_velocities[0] = w0;
    step_n(&mut state, &wide(), &Material::default(), &Vector3::zeros(), 1e-3, 10_000);
    assert!((state.angular_velocities[0].norm() - w0.norm()).abs() <= 1e-10 * w0.norm());
    assert!((state.particles[0].orientation.norm() - 1.0).abs() < 1e-9);
}

#[test]
fn torque_free_ellipsoid_keeps_energy_and_momentum() {
    let p = Particle::new(0, ParticleShape::ellipsoid(1.0, 0.6, 0.3).unwrap(), DENSITY)
        .unwrap()
        .with_pose(Vector3::new(5.0, 5.0, 5.0), UnitQuaternion::identity());
    let mut state = DemState::new(vec![p]);
    state.angular_velocities[0] = Vector3::new(0.1, 2.0, 0.05);
    let world_l = |s: &DemState<f64>| s.particles[0].orientation * (s.particles[0].inertia * s.angular_velocities[0]);
    let l0 = world_l(&state);
    let e0 = state.kinetic_energy();
    step_n(&mut state, &wide(), &Material::default(), &Vector3::zeros(), 1e-4, 2000);
    assert!((world_l(&state) - l0).norm() < 1e-2 * l0.norm());
    assert_relative_eq!(state.kinetic_energy(), e0, max_relative = 1e-2);
}

#[test]
fn dropped_sphere_rests_at_hertz_depth() {
    let material = Material::default();
    let r = 0.5;
    let p = sphere(0, r, [5.0, 5.0, 1.0 + r]);
    let d = equilibrium_depth(r, p.mass, &material);
    let mut state = DemState::new(vec![p]);
    state.speed_limit = speed_limit_for(1.0 + 2.0 * r, 9.81);
    let run = run_from_state(state, &DemConfig::default(), &wide()).unwrap();
    assert!(run.at_rest);
    let z = run.snapshot.particles[0].position.z;
    assert!((z - (r - d)).abs() <= 1e-6, "z = {z}, expected {}", r - d);
}

#[test]
fn sphere_column_floor_carries_weight() {
    let r = 0.5;
    let particles = (0..3).map(|k| sphere(k, r, [5.0, 5.0, r + 0.05 + k as f64 * 1.1])).collect();
    let run = run_from_state(DemState::new(particles), &DemConfig::default(), &wide()).unwrap();
    assert!(run.at_rest);
    let weight: f64 = run.snapshot.particles.iter().map(|p| p.mass * 9.81).sum();
    let floor: f64 = run
        .snapshot
        .contacts
        .iter()
        .filter(|c| matches!(c.contact.partner, Partner::Wall(_)))
        .map(|c| c.force.unwrap().z)
        .sum();
    assert_relative_eq!(floor, weight, max_relative = 1e-3);
    assert_eq!(run.snapshot.contacts.len(), 3);
}

#[test]
fn bounce_conserves_energy_without_dissipation() {
    let material = Material {
        damping_ratio: 0.0,
        friction_coefficient: 0.0,
        ..Material::default()
    };
    let r = 0.5;
    let mut state = DemState::new(vec![sphere(0, r, [5.0, 5.0, r + 0.5])]);
    let dt = auto_time_step(&state.particles, &material);
    // energy at integer steps uses the mean of the bracketing half-step velocities
    let energy = |s: &DemState<f64>, v_prev: Vector3<f64>, z: f64, elastic: f64| {
        let m = s.particles[0].mass;
        let v = (v_prev + s.velocities[0]) * 0.5;
        0.5 * m * v.norm_squared() + m * 9.81 * z + elastic
    };
    let mut e_start = None;
    let mut touched = false;
    let mut e_end = None;
    for _ in 0..200_000 {
        let v_prev = state.velocities[0];
        let loads = resultant_loads(&state, &wide(), &material, &g(), dt).unwrap();
        let elastic = loads.elastic_energy();
        let in_contact = !loads.contacts.is_empty();
        let z_before = state.particles[0].position.z;
        central_difference_step(&mut state, loads, dt).unwrap();
        if state.step > 2 {
            let e = energy(&state, v_prev, z_before, elastic);
            if e_start.is_none() {
                e_start = Some(e);
            }
            if in_contact {
                touched = true;
            } else if touched && z_before > r {
                e_end = Some(e);
                break;
            }
        }
    }
    let (a, b) = (e_start.unwrap(), e_end.expect("sphere bounced back"));
    assert!(((b - a) / a).abs() <= 1e-2, "{a} -> {b}");
}

#[test]
fn friction_never_exceeds_coulomb_and_quaternions_stay_unit() {
    let spec = AssemblySpec {
        n: 12,
        family: ShapeFamily::default_for(FamilyKind::Prolate),
        distribution: SizeDistribution::new(0.3, 0.2, 0.15, 0.5).unwrap(),
        density: DENSITY,
        seed: 4,
    };
    let assembly = build_assembly(&spec).unwrap();
    let container = Container {
        width_x: 2.0,
        width_y: 2.0,
    };
    let config = DemConfig::default();
    let mut state = initial_fill(&assembly, &container, 1, config.fill_gap).unwrap();
    let dt = auto_time_step(&state.particles, &config.material);
    let mu = config.material.friction_coefficient;
    let mut contacts_seen = 0;
    for _ in 0..3000 {
        let loads = resultant_loads(&state, &container, &config.material, &g(), dt).unwrap();
        for c in &loads.contacts {
            assert!(c.tangential_force.norm() <= mu * c.normal_force * (1.0 + 1e-12));
            assert!(c.tangential_force.dot(&c.contact.normal).abs() <= 1e-9 * (1.0 + c.tangential_force.norm()));
        }
        contacts_seen += loads.contacts.len();
        let keys: Vec<ContactKey> = loads.contacts.iter().map(|c| (c.i, c.partner)).collect();
        central_difference_step(&mut state, loads, dt).unwrap();
        // memory only for live contacts
        assert!(state.tangential.keys().copied().eq(keys.into_iter()));
        for p in &state.particles {
            assert!((p.orientation.norm() - 1.0).abs() < 1e-9);
        }
    }
    assert!(contacts_seen > 0);
}

#[test]
fn deposition_is_deterministic() {
    let spec = AssemblySpec {
        n: 20,
        family: ShapeFamily::default_for(FamilyKind::Sphere),
        distribution: SizeDistribution::new(0.2, 0.25, 0.1, 0.4).unwrap(),
        density: DENSITY,
        seed: 9,
    };
    let assembly = build_assembly(&spec).unwrap();
    let container = Container {
        width_x: 1.5,
        width_y: 1.5,
    };
    let config = DemConfig {
        max_steps: 400,
        ..DemConfig::default()
    };
    let a = run_deposition(&assembly, &config, &container).unwrap();
    let b = run_deposition(&assembly, &config, &container).unwrap();
    assert_eq!(a.snapshot, b.snapshot);
    assert_eq!(a.trace, b.trace);
    assert!(!a.at_rest);
    assert!(a.ensure_at_rest().is_err());
}

#[test]
fn fill_single_sphere_is_clear_of_everything() {
    let state = initial_fill(&[sphere(0, 0.5, [0.0; 3])], &wide(), 0, 0.05).unwrap();
    let p = &state.particles[0];
    assert!(p.position.z > 0.5);
    for w in wide().walls::<f64>() {
        assert!(detect_wall_contact(p, &w, 0).is_none());
    }
    assert!(state.velocities[0] == Vector3::zeros());
}

#[test]
fn fill_of_thousand_spheres_has_positive_clearance() {
    let spec = AssemblySpec {
        n: 1000,
        family: ShapeFamily::default_for(FamilyKind::Sphere),
        distribution: SizeDistribution::default(),
        density: DENSITY,
        seed: 1,
    };
    let assembly = build_assembly(&spec).unwrap();
    let container = Container {
        width_x: 20.0,
        width_y: 20.0,
    };
    let state = initial_fill(&assembly, &container, 3, 0.05).unwrap();
    let ps = &state.particles;
    let mut min_gap = f64::INFINITY;
    for i in 0..ps.len() {
        for j in i + 1..ps.len() {
            let d = (ps[i].position - ps[j].position).norm() - ps[i].eq_radius - ps[j].eq_radius;
            min_gap = min_gap.min(d);
        }
        let x = ps[i].position;
        let r = ps[i].eq_radius;
        assert!(x.z - r > 0.0 && x.x - r > 0.0 && x.y - r > 0.0 && x.x + r < 20.0 && x.y + r < 20.0);
    }
    assert!(min_gap > 0.0, "{min_gap}");
}

#[test]
fn fill_of_poly_ellipsoids_has_no_contacts() {
    let spec = AssemblySpec {
        n: 60,
        family: ShapeFamily::default_for(FamilyKind::Carrot),
        distribution: SizeDistribution::default(),
        density: DENSITY,
        seed: 2,
    };
    let assembly = build_assembly(&spec).unwrap();
    let container = Container {
        width_x: 8.0,
        width_y: 8.0,
    };
    let state = initial_fill(&assembly, &container, 5, 0.05).unwrap();
    let ps = &state.particles;
    for i in 0..ps.len() {
        for j in i + 1..ps.len() {
            assert!(detect_contact(&ps[i], &ps[j]).unwrap().is_none());
        }
        for (k, w) in container.walls::<f64>().iter().enumerate() {
            assert!(detect_wall_contact(&ps[i], w, k).is_none());
        }
    }
}

#[test]
fn fill_overflow_and_narrow_container() {
    let big: Vec<_> = (0..50).map(|k| sphere(k, 0.5, [0.0; 3])).collect();
    let tight = Container {
        width_x: 1.2,
        width_y: 1.2,
    };
    // one sphere per layer is still within ten dense heights
    assert!(initial_fill(&big, &tight, 0, 0.05).is_ok());
    let err = initial_fill(&big, &tight, 0, 0.9).unwrap_err();
    assert!(matches!(err, DemError::InvalidConfig(_)));
    // one sphere per layer in cells far larger than the spheres
    let gappy = Container {
        width_x: 3.79,
        width_y: 3.79,
    };
    let err = initial_fill(&big, &gappy, 0, 0.9).unwrap_err();
    assert!(matches!(err, DemError::FillOverflow { .. }), "{err:?}");
}

#[test]
fn blow_up_is_detected() {
    let mut state = DemState::new(vec![sphere(0, 0.5, [5.0, 5.0, 3.0])]);
    state.speed_limit = 1.0;
    state.velocities[0] = Vector3::new(0.0, 0.0, 2.0);
    let loads = resultant_loads(&state, &wide(), &Material::default(), &g(), 1e-3).unwrap();
    let err = central_difference_step(&mut state, loads, 1e-3).unwrap_err();
    assert!(matches!(err, DemError::InstabilityDetected { id: 0, .. }));
}

#[test]
fn time_step_config_forms() {
    let c: DemConfig = toml::from_str("dt = \"auto\"").unwrap();
    assert_eq!(c.dt, TimeStep::Auto);
    let c: DemConfig = toml::from_str("dt = 0.002").unwrap();
    assert_eq!(c.dt, TimeStep::Fixed(0.002));
    assert!(toml::from_str::<DemConfig>("dt = \"fast\"").is_err());
    assert!(toml::from_str::<DemConfig>("dtt = 1.0").is_err());
    let bad = DemConfig {
        dt: TimeStep::Fixed(-1.0),
        ..DemConfig::default()
    };
    assert!(bad.validate().is_err());
    let round = toml::to_string(&DemConfig::default()).unwrap();
    assert_eq!(toml::from_str::<DemConfig>(&round).unwrap(), DemConfig::default());
}

#[test]
fn auto_time_step_formula() {
    let material = Material::default();
    let p = sphere(0, 0.5, [0.0; 3]);
    let e_star = 1e8 / (2.0 * (1.0 - 0.09));
    let k = 2.0 * e_star * (0.5 * 0.5e-3f64).sqrt();
    assert_relative_eq!(auto_time_step(&[p.clone()], &material), 0.2 * (p.mass / k).sqrt(), max_relative = 1e-12);
}
