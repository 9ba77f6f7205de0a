//! End-to-end acceptance checks. Prints one line per criterion and exits
//! non-zero if any of them fails.

use std::collections::BTreeMap;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use granpack::dem::{auto_time_step, central_difference_step, resultant_loads, Container, DemState, Material};
use granpack::distribution::{
    build_assembly, rng_from_seed, AssemblySpec, FamilyKind, ShapeFamily, SizeDistribution,
    TruncatedLogNormal,
};
use granpack::geometry::{detect_contact, Particle, ParticleShape};
use granpack::mc::{self, McConfig};
use granpack::metrics::{self, coordination_number, packing_fraction, rdf, MetricParams};
use granpack::snapshot::{PackingSnapshot, Provenance, RunStatus, SnapshotDomain};
use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use rand::Rng;
use serde_json::Value;

const SEED: u64 = 42;
const GRAVITY: f64 = 9.81;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    match panic::catch_unwind(AssertUnwindSafe(f)) {
        Ok(o) => o,
        Err(e) => {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            outcome(false, format!("panicked: {msg}"))
        }
    }
}

// ---------------------------------------------------------------- sizes

/// Standard normal CDF.
fn phi(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

fn size_distribution() -> Outcome {
    let (r0, sigma, lo, hi) = (1.0, 0.25, 0.2, 2.5);
    let dist = SizeDistribution::new(r0, sigma, lo, hi).unwrap();
    let z = |r: f64| (r.ln() - f64::ln(r0)) / sigma;
    let (f_lo, f_hi) = (phi(z(lo)), phi(z(hi)));
    let cdf = |r: f64| (phi(z(r)) - f_lo) / (f_hi - f_lo);

    let start = Instant::now();
    let sampler = TruncatedLogNormal::new(dist).unwrap();
    let mut rng = rng_from_seed(SEED);
    let mut radii: Vec<f64> = (0..100_000).map(|_| sampler.sample(&mut rng)).collect();
    let elapsed = start.elapsed();
    radii.sort_by(f64::total_cmp);
    let n = radii.len() as f64;
    let d = radii
        .iter()
        .enumerate()
        .map(|(k, &r)| {
            let f = cdf(r);
            (f - k as f64 / n).max((k + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max);
    let in_range = radii.iter().all(|&r| (lo..=hi).contains(&r));
    outcome(
        d < 0.01 && in_range && elapsed < Duration::from_secs(5),
        format!("KS D = {d:.5} on 1e5 radii, sampling {:.2} s", elapsed.as_secs_f64()),
    )
}

// ---------------------------------------------------------------- contact kernel

fn random_rotation(rng: &mut impl Rng) -> UnitQuaternion<f64> {
    UnitQuaternion::from_euler_angles(
        rng.random_range(-3.1..3.1),
        rng.random_range(-1.5..1.5),
        rng.random_range(-3.1..3.1),
    )
}

fn random_direction(rng: &mut impl Rng) -> Vector3<f64> {
    let z: f64 = rng.random_range(-1.0..1.0);
    let t: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let s = (1.0 - z * z).sqrt();
    Vector3::new(s * t.cos(), s * t.sin(), z)
}

fn posed(shape: ParticleShape<f64>, id: usize, x: Vector3<f64>, q: UnitQuaternion<f64>) -> Particle<f64> {
    Particle::new(id, shape, 1000.0).unwrap().with_pose(x, q)
}

fn contact_kernel() -> Outcome {
    let mut rng = rng_from_seed(SEED);
    let mut worst: f64 = 0.0;
    let mut mismatched = 0;
    let mut overlapping = 0;

    // round ellipsoids against the two-sphere closed form
    for _ in 0..500 {
        let (r1, r2): (f64, f64) = (rng.random_range(0.2..2.0), rng.random_range(0.2..2.0));
        let d = rng.random_range(0.3..0.999) * (r1 + r2);
        let dir = random_direction(&mut rng);
        let c0 = Vector3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
        let a = posed(ParticleShape::ellipsoid(r1, r1, r1).unwrap(), 0, c0, random_rotation(&mut rng));
        let b = posed(ParticleShape::ellipsoid(r2, r2, r2).unwrap(), 1, c0 + dir * d, random_rotation(&mut rng));
        let exact = r1 + r2 - d;
        match detect_contact(&a, &b).unwrap() {
            Some(c) => {
                overlapping += 1;
                worst = worst.max((c.depth - exact).abs() / exact);
            }
            None => mismatched += 1,
        }
    }

    // poly-ellipsoids with equal half-axes against the ellipsoid result
    for _ in 0..500 {
        let axes = |rng: &mut rand_chacha::ChaCha8Rng| {
            let mut s: [f64; 3] = [rng.random_range(0.2..2.0), rng.random_range(0.2..2.0), rng.random_range(0.2..2.0)];
            s.sort_by(|x, y| y.total_cmp(x));
            s
        };
        let (sa, sb) = (axes(&mut rng), axes(&mut rng));
        let d = rng.random_range(0.2..1.0) * (sa[0] + sb[0]);
        let dir = random_direction(&mut rng);
        let (qa, qb) = (random_rotation(&mut rng), random_rotation(&mut rng));
        let ell = |s: [f64; 3]| ParticleShape::ellipsoid(s[0], s[1], s[2]).unwrap();
        let poly = |s: [f64; 3]| ParticleShape::poly_ellipsoid(s[0], s[0], s[1], s[1], s[2], s[2]).unwrap();
        let e = detect_contact(
            &posed(ell(sa), 0, Vector3::zeros(), qa),
            &posed(ell(sb), 1, dir * d, qb),
        )
        .unwrap();
        let p = detect_contact(
            &posed(poly(sa), 0, Vector3::zeros(), qa),
            &posed(poly(sb), 1, dir * d, qb),
        )
        .unwrap();
        match (e, p) {
            (Some(e), Some(p)) => {
                overlapping += 1;
                worst = worst.max((e.depth - p.depth).abs() / e.depth);
            }
            (None, None) => {}
            _ => mismatched += 1,
        }
    }
    outcome(
        worst <= 1e-8 && mismatched == 0,
        format!("1000 pairs, {overlapping} overlapping, worst relative depth error {worst:.2e}, {mismatched} detection mismatches"),
    )
}

// ---------------------------------------------------------------- dem audits

fn sphere(r: f64, x: [f64; 3]) -> Particle<f64> {
    Particle::new(0, ParticleShape::sphere(r).unwrap(), 2650.0)
        .unwrap()
        .with_pose(Vector3::from(x), UnitQuaternion::identity())
}

fn free_fall() -> (bool, String) {
    let container = Container::default();
    let g = Vector3::new(0.0, 0.0, -GRAVITY);
    let mut state = DemState::new(vec![sphere(0.5, [10.0, 10.0, 100.0])]);
    let dt = 1e-4;
    for _ in 0..10_000 {
        let loads = resultant_loads(&state, &container, &Material::default(), &g, dt).unwrap();
        central_difference_step(&mut state, loads, dt).unwrap();
    }
    let t = state.time;
    let drop = 100.0 - state.particles[0].position.z;
    let exact = 0.5 * GRAVITY * t * t;
    // velocities are stored at the half step
    let v = -state.velocities[0].z;
    let v_exact = GRAVITY * (t - 0.5 * dt);
    let (e_x, e_v) = ((drop - exact).abs() / exact, (v - v_exact).abs() / v_exact);
    (e_x <= 1e-3 && e_v <= 1e-3, format!("free fall error {e_x:.1e} (position) {e_v:.1e} (velocity)"))
}

fn bounce() -> (bool, String) {
    let container = Container::default();
    let g = Vector3::new(0.0, 0.0, -GRAVITY);
    let material = Material {
        damping_ratio: 0.0,
        friction_coefficient: 0.0,
        ..Material::default()
    };
    let r = 0.5;
    let mut state = DemState::new(vec![sphere(r, [10.0, 10.0, r + 0.5])]);
    let dt = auto_time_step(&state.particles, &material);
    let m = state.particles[0].mass;
    let (mut e_start, mut e_end, mut touched) = (None, None, false);
    for _ in 0..1_000_000 {
        let v_prev = state.velocities[0];
        let loads = resultant_loads(&state, &container, &material, &g, dt).unwrap();
        let elastic = loads.elastic_energy();
        let in_contact = !loads.contacts.is_empty();
        let z = state.particles[0].position.z;
        central_difference_step(&mut state, loads, dt).unwrap();
        if state.step < 3 {
            continue;
        }
        let v = (v_prev + state.velocities[0]) * 0.5;
        let e = 0.5 * m * v.norm_squared() + m * GRAVITY * z + elastic;
        e_start.get_or_insert(e);
        if in_contact {
            touched = true;
        } else if touched && z > r {
            e_end = Some(e);
            break;
        }
    }
    match (e_start, e_end) {
        (Some(a), Some(b)) => {
            let drift = ((b - a) / a).abs();
            (drift <= 1e-2, format!("bounce energy drift {drift:.1e}"))
        }
        _ => (false, "sphere never left the floor".into()),
    }
}

fn dem_audits(pipeline: &Pipeline) -> Outcome {
    let (fall_ok, fall) = free_fall();
    let (bounce_ok, bounce) = bounce();
    let dem_metrics = pipeline.json("dem_metrics.json");
    let run = pipeline.json("dem_run.json");
    let support = &dem_metrics["floor_force"];
    let support_err = support["relative_error"].as_f64().unwrap_or(f64::INFINITY);
    let at_rest = run["at_rest"].as_bool().unwrap_or(false);
    let violations = run["friction_violations"].as_u64().unwrap_or(u64::MAX);
    let ratio = run["max_friction_ratio"].as_f64().unwrap_or(f64::NAN);
    outcome(
        fall_ok && bounce_ok && at_rest && support_err <= 1e-3 && violations == 0,
        format!(
            "{fall}; {bounce}; support {:.6e} N vs weight {:.6e} N (error {support_err:.1e}); \
             {violations} Coulomb violations over {} steps, max |Ft|/(mu |Fn|) = {ratio:.6}",
            support["total"].as_f64().unwrap_or(f64::NAN),
            support["weight"].as_f64().unwrap_or(f64::NAN),
            run["steps"],
        ),
    )
}

// ---------------------------------------------------------------- metrics

fn fabric_trace_error(f: &Matrix3<f64>) -> f64 {
    (f.trace() - 1.0).abs()
}

fn json_fabric(v: &Value) -> Option<Matrix3<f64>> {
    let rows = v.as_array()?;
    Some(Matrix3::from_fn(|a, b| rows[a][b].as_f64().unwrap_or(f64::NAN)))
}

fn plain_snapshot(domain: SnapshotDomain<f64>, particles: Vec<Particle<f64>>) -> PackingSnapshot<f64> {
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

fn metric_oracles(pipeline: &Pipeline, shape_fabrics: &[Option<Matrix3<f64>>]) -> Outcome {
    let n = 10;
    let r = 0.5;
    let lattice: Vec<_> = (0..n * n * n)
        .map(|k| {
            let (i, j, l) = (k % n, (k / n) % n, k / (n * n));
            let x = Vector3::new(i as f64 + 0.5, j as f64 + 0.5, l as f64 + 0.5);
            Particle::new(k, ParticleShape::sphere(r).unwrap(), 1.0).unwrap().with_pose(x, UnitQuaternion::identity())
        })
        .collect();
    let s = plain_snapshot(SnapshotDomain::WalledCube { edge: n as f64 }, lattice);
    let fraction = packing_fraction(&s, None).unwrap();
    let frac_ok = (fraction - std::f64::consts::PI / 6.0).abs() <= 2e-3;
    let cn = coordination_number(&s, 1e-3 * r).unwrap();
    let interior = |k: usize| [k % n, (k / n) % n, k / (n * n)].iter().all(|&c| c > 0 && c < n - 1);
    let bad_cn = (0..n * n * n).filter(|&k| interior(k) && cn.per_particle[k] != 6).count();

    // ideal gas in a periodic box
    let edge = 10.0;
    let mut rng = rng_from_seed(SEED);
    let gas: Vec<_> = (0..2000)
        .map(|k| {
            let x = Vector3::new(rng.random_range(0.0..edge), rng.random_range(0.0..edge), rng.random_range(0.0..edge));
            Particle::new(k, ParticleShape::sphere(0.01).unwrap(), 1.0).unwrap().with_pose(x, UnitQuaternion::identity())
        })
        .collect();
    let g = rdf(&plain_snapshot(SnapshotDomain::Periodic { edge }, gas), 0.25, 5.0).unwrap();
    let mut worst_sigma: f64 = 0.0;
    for (&c, &e) in g.counts.iter().zip(&g.expected) {
        // ordered-pair counts are twice a Poisson pair count
        let sigma = (2.0 / e).sqrt();
        worst_sigma = worst_sigma.max((c as f64 / e - 1.0).abs() / sigma);
    }

    let mut fabrics: Vec<Option<Matrix3<f64>>> = vec![metrics::analyze(&s, &MetricParams::default())
        .unwrap()
        .fabric
        .map(|f| Matrix3::from_fn(|a, b| f[a][b]))];
    fabrics.extend_from_slice(shape_fabrics);
    for name in ["mc_metrics.json", "dem_metrics.json"] {
        fabrics.push(json_fabric(&pipeline.json(name)["fabric"]));
    }
    let missing = fabrics.iter().filter(|f| f.is_none()).count();
    let worst_trace = fabrics.iter().flatten().map(fabric_trace_error).fold(0.0, f64::max);

    outcome(
        frac_ok && bad_cn == 0 && worst_sigma <= 3.0 && missing == 0 && worst_trace <= 1e-12,
        format!(
            "lattice fraction {fraction:.6}, {bad_cn} interior particles with CN != 6, ideal-gas g(r) within {worst_sigma:.2} sigma over {} bins, \
             fabric trace error {worst_trace:.1e} on {} snapshots ({missing} without contacts)",
            g.counts.len(),
            fabrics.len()
        ),
    )
}

// ---------------------------------------------------------------- mc shapes

fn shape_generality() -> (Outcome, Vec<Option<Matrix3<f64>>>) {
    let config = McConfig {
        seed: SEED,
        ..McConfig::default()
    };
    let mut pass = true;
    let mut parts = Vec::new();
    let mut fabrics = Vec::new();
    for (name, kind) in [
        ("prolate", FamilyKind::Prolate),
        ("oblate", FamilyKind::Oblate),
        ("carrot", FamilyKind::Carrot),
        ("half-dome", FamilyKind::HalfDome),
    ] {
        let spec = AssemblySpec {
            n: 300,
            family: ShapeFamily::default_for(kind),
            distribution: SizeDistribution::default(),
            density: 2650.0,
            seed: SEED,
        };
        let assembly = build_assembly(&spec).unwrap();
        let start = Instant::now();
        let run = mc::run(&assembly, &config).unwrap();
        let secs = start.elapsed().as_secs_f64();
        let last = run.history.last().unwrap();
        let ok = run.converged
            && last.mean_rel_overlap <= config.tolerance
            && last.max_rel_overlap <= 1e-3
            && secs < 900.0;
        pass &= ok;
        parts.push(format!(
            "{name} {} in {} iterations (mean {:.2e}, max {:.2e}, {secs:.0} s)",
            if run.converged { "converged" } else { "did not converge" },
            run.snapshot.status.iterations,
            last.mean_rel_overlap,
            last.max_rel_overlap
        ));
        fabrics.push(
            metrics::analyze(&run.snapshot, &MetricParams::default())
                .unwrap()
                .fabric
                .map(|f| Matrix3::from_fn(|a, b| f[a][b])),
        );
    }
    (outcome(pass, parts.join("; ")), fabrics)
}

// ---------------------------------------------------------------- pipeline

struct Pipeline {
    dir: PathBuf,
    seconds: BTreeMap<&'static str, f64>,
    failures: Vec<String>,
}

impl Pipeline {
    fn json(&self, name: &str) -> Value {
        std::fs::read_to_string(self.dir.join(name))
            .ok()
            .and_then(|t| serde_json::from_str(&t).ok())
            .unwrap_or(Value::Null)
    }
}

/// Assemble, pack both ways, analyse both packings and compare them, all
/// through the binary with the built-in defaults.
fn run_pipeline(dir: &Path, threads: usize) -> Pipeline {
    std::fs::create_dir_all(dir).unwrap();
    let steps: [(&'static str, Vec<&str>); 6] = [
        ("assemble", vec!["assemble"]),
        ("pack-mc", vec!["pack-mc", "assembly.gpk"]),
        ("pack-dem", vec!["pack-dem", "assembly.gpk"]),
        ("analyze-mc", vec!["analyze", "mc.gpk"]),
        ("analyze-dem", vec!["analyze", "dem.gpk"]),
        ("compare", vec!["compare", "mc.gpk", "dem.gpk"]),
    ];
    let mut seconds = BTreeMap::new();
    let mut failures = Vec::new();
    for (name, args) in steps {
        let start = Instant::now();
        let out = Command::new(env!("CARGO_BIN_EXE_granpack"))
            .current_dir(dir)
            .args(&args)
            .args(["--out", ".", "--seed", &SEED.to_string(), "--threads", &threads.to_string()])
            .arg("--allow-unconverged")
            .env_remove("GRANPACK_THREADS")
            .output()
            .unwrap();
        seconds.insert(name, start.elapsed().as_secs_f64());
        eprintln!("  {name}: {:.1} s", start.elapsed().as_secs_f64());
        if !out.status.success() {
            failures.push(format!("{name}: {}", String::from_utf8_lossy(&out.stderr).trim()));
        }
    }
    Pipeline {
        dir: dir.to_path_buf(),
        seconds,
        failures,
    }
}

fn mc_convergence(p: &Pipeline) -> Outcome {
    let run = p.json("mc_run.json");
    let secs = p.seconds["pack-mc"];
    let converged = run["converged"].as_bool().unwrap_or(false);
    let mean = run["mean_rel_overlap"].as_f64().unwrap_or(f64::INFINITY);
    let max = run["max_rel_overlap"].as_f64().unwrap_or(f64::INFINITY);
    outcome(
        converged && mean <= 1e-4 && max <= 1e-3 && secs < 300.0,
        format!(
            "1000 spheres, {} iterations, mean {mean:.2e}, max {max:.2e}, {secs:.0} s",
            run["iterations"]
        ),
    )
}

fn deposition(p: &Pipeline) -> Outcome {
    let run = p.json("dem_run.json");
    let at_rest = run["at_rest"].as_bool().unwrap_or(false);
    let fraction = p.json("dem_metrics.json")["packing_fraction"].as_f64().unwrap_or(f64::NAN);
    let secs = p.seconds["pack-dem"];
    outcome(
        at_rest && fraction > 0.54 && fraction < 0.66 && secs < 1800.0,
        format!(
            "1000 spheres {} after {} steps, packing fraction {fraction:.4}, {secs:.0} s",
            if at_rest { "at rest" } else { "not at rest" },
            run["steps"]
        ),
    )
}

fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap())
        .filter(|e| e.file_type().unwrap().is_file())
        .map(|e| (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap()))
        .collect()
}

fn populated(m: &Value) -> Vec<&'static str> {
    let mut missing = Vec::new();
    if !m["packing_fraction"].as_f64().is_some_and(|x| x > 0.0 && x < 1.0) {
        missing.push("packing_fraction");
    }
    if !m["mean_coordination"].as_f64().is_some_and(|x| x > 0.0) {
        missing.push("mean_coordination");
    }
    if !m["coordination_histogram"].as_array().is_some_and(|h| !h.is_empty()) {
        missing.push("coordination_histogram");
    }
    if !m["rdf"]["g"].as_array().is_some_and(|g| !g.is_empty()) || m["rdf_bin_too_fine"] != Value::Bool(false) {
        missing.push("rdf");
    }
    if json_fabric(&m["fabric"]).is_none() {
        missing.push("fabric");
    }
    missing
}

fn comparison(first: &Pipeline, repeat: &Pipeline) -> Outcome {
    let c = first.json("comparison.json");
    let (a, b) = (&c["a"], &c["b"]);
    let (miss_a, miss_b) = (populated(a), populated(b));
    let chains_ok = a["force_chains"].is_null()
        && b["force_chains"]["count"].as_u64().is_some()
        && c["force_chains"].is_null();
    let deltas_ok = c["fabric_deviator_difference"].as_f64().is_some() && c["shared_bins"].as_u64().is_some_and(|n| n > 0);
    let (fa, fb) = (files(&first.dir), files(&repeat.dir));
    let differing: Vec<_> = fa
        .keys()
        .chain(fb.keys())
        .filter(|k| fa.get(*k) != fb.get(*k))
        .cloned()
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let failures: Vec<_> = first.failures.iter().chain(&repeat.failures).cloned().collect();
    outcome(
        miss_a.is_empty() && miss_b.is_empty() && chains_ok && deltas_ok && differing.is_empty() && failures.is_empty(),
        format!(
            "{} vs {}: missing [{}] / [{}], force chains {}, {} files compared, differing {:?}{}",
            a["provenance"].as_str().unwrap_or("?"),
            b["provenance"].as_str().unwrap_or("?"),
            miss_a.join(", "),
            miss_b.join(", "),
            if chains_ok { "DEM only" } else { "misplaced" },
            fa.len(),
            differing,
            if failures.is_empty() {
                String::new()
            } else {
                format!(", command failures: {}", failures.join("; "))
            }
        ),
    )
}

fn main() {
    let tmp = tempfile::tempdir().unwrap();
    let live = tmp.path().join("run");
    let mut results: BTreeMap<u32, Outcome> = BTreeMap::new();

    results.insert(1, guarded(size_distribution));
    results.insert(4, guarded(contact_kernel));

    eprintln!("shape families");
    let mut shape_fabrics = Vec::new();
    results.insert(
        3,
        guarded(|| {
            let (o, f) = shape_generality();
            shape_fabrics = f;
            o
        }),
    );

    eprintln!("pipeline, first run");
    let first = run_pipeline(&live, 1);
    let kept = tmp.path().join("first");
    std::fs::rename(&live, &kept).unwrap();
    let first = Pipeline { dir: kept, ..first };
    eprintln!("pipeline, repeat run");
    let repeat = run_pipeline(&live, 2);

    results.insert(2, guarded(|| mc_convergence(&first)));
    results.insert(5, guarded(|| dem_audits(&first)));
    results.insert(6, guarded(|| deposition(&first)));
    results.insert(7, guarded(|| metric_oracles(&first, &shape_fabrics)));
    results.insert(8, guarded(|| comparison(&first, &repeat)));

    let mut failed = 0;
    for (k, o) in &results {
        println!("criterion {k}: {}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    println!("acceptance: {} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
