//! Batch commands behind the `granpack` binary.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use granpack::dem::{self, DemNotAtRest};
use granpack::distribution::{build_assembly, histogram_report};
use granpack::error::{DemError, DistributionError, McError, MetricsError};
use granpack::geometry::Partner;
use granpack::io::{self, csv, DirLock, IoError, RunConfig};
use granpack::mc::{self, McNotConverged};
use granpack::metrics::{self, PackingMetrics};
use granpack::snapshot::{PackingSnapshot, Provenance, RunStatus, SnapshotDomain};

/// Bins of the size histogram written by `assemble`.
pub const HISTOGRAM_BINS: usize = 40;

#[derive(Debug, Parser)]
#[command(name = "granpack", version, about = "Random packings of non-spherical grains")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML run configuration; built-in defaults if omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; defaults to `output_dir` from the config.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Overrides the global seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, env = "GRANPACK_THREADS")]
    pub threads: Option<usize>,
    /// Write results and exit 0 even if the packer did not converge or
    /// reach rest.
    #[arg(long, global = true)]
    pub allow_unconverged: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw a particle assembly.
    Assemble,
    /// Pack an assembly by Monte Carlo overlap relaxation.
    PackMc { assembly: PathBuf },
    /// Pack an assembly by gravitational deposition.
    PackDem { assembly: PathBuf },
    /// Measure a snapshot.
    Analyze { snapshot: PathBuf },
    /// Compare two snapshots.
    Compare { a: PathBuf, b: PathBuf },
    /// Export per-particle poses.
    Export {
        snapshot: PathBuf,
        #[arg(long, value_enum, default_value_t = ExportFormat::Csv)]
        format: ExportFormat,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExportFormat {
    Csv,
}

/// A failure with a stable machine-readable code.
#[derive(Debug)]
pub struct CliError {
    pub code: &'static str,
    pub message: String,
}

impl CliError {
    fn new(code: &'static str, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.code {
            "USAGE" | "CONFIG" => 2,
            "IO" | "LOCKED" => 3,
            "CORRUPT" | "VERSION" | "INPUT" => 4,
            "NOT_CONVERGED" | "NOT_AT_REST" => 5,
            "INCOMPATIBLE_BINNING" => 6,
            _ => 1,
        }
    }

    /// The single line printed on stderr.
    pub fn line(&self) -> String {
        let msg = self.message.split_whitespace().collect::<Vec<_>>().join(" ");
        format!("error[{}]: {}", self.code, msg)
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        let code = match e {
            IoError::Config(_) => "CONFIG",
            IoError::Io(_) => "IO",
            IoError::Version { .. } => "VERSION",
            IoError::Corrupt(_) => "CORRUPT",
            IoError::Locked(_) => "LOCKED",
        };
        Self::new(code, e.to_string())
    }
}

impl From<DistributionError> for CliError {
    fn from(e: DistributionError) -> Self {
        Self::new("CONFIG", e.to_string())
    }
}

impl From<McError> for CliError {
    fn from(e: McError) -> Self {
        match e {
            McError::InvalidConfig(_) => Self::new("CONFIG", e.to_string()),
            McError::EmptyAssembly => Self::new("INPUT", e.to_string()),
        }
    }
}

impl From<DemError> for CliError {
    fn from(e: DemError) -> Self {
        let code = match e {
            DemError::InvalidConfig(_) => "CONFIG",
            DemError::FillOverflow { .. } => "FILL_OVERFLOW",
            DemError::InstabilityDetected { .. } => "INSTABILITY",
            DemError::ContactNonConvergence { .. } => "CONTACT_NONCONVERGENCE",
        };
        Self::new(code, e.to_string())
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        let code = match e {
            MetricsError::IncompatibleBinning(_) => "INCOMPATIBLE_BINNING",
            _ => "METRICS",
        };
        Self::new(code, e.to_string())
    }
}

impl From<McNotConverged> for CliError {
    fn from(e: McNotConverged) -> Self {
        Self::new("NOT_CONVERGED", e.to_string())
    }
}

impl From<DemNotAtRest> for CliError {
    fn from(e: DemNotAtRest) -> Self {
        Self::new("NOT_AT_REST", e.to_string())
    }
}

/// Loads the config, applies the seed override and resolves the output
/// directory.
fn setup(common: &Common) -> Result<(RunConfig, PathBuf), CliError> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => {
            let mut c = RunConfig::default();
            c.expand();
            c
        }
    };
    if let Some(seed) = common.seed {
        cfg.set_seed(seed);
    }
    let out = common.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    cfg.output_dir = out.clone();
    Ok((cfg, out))
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "snapshot".into())
}

fn write_effective_config(out: &Path, command: &str, cfg: &RunConfig) -> Result<(), CliError> {
    io::write_file(&out.join(format!("{command}.config.toml")), cfg.to_toml())?;
    Ok(())
}

fn read_assembly(path: &Path) -> Result<Vec<granpack::Particle>, CliError> {
    let (_, s) = io::read_snapshot_file(path)?;
    if s.provenance != Provenance::Assembly {
        return Err(CliError::new(
            "INPUT",
            format!("{} is a {} snapshot, not an assembly", path.display(), s.provenance.label()),
        ));
    }
    Ok(s.particles)
}

fn json_text(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json");
    s.push('\n');
    s
}

/// Runs one command. Informational lines go to stdout through `say`.
pub fn run(cli: &Cli, mut say: impl FnMut(String)) -> Result<(), CliError> {
    if let Some(n) = cli.common.threads {
        // A second call in the same process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let (cfg, out) = setup(&cli.common)?;
    let _lock = DirLock::acquire(&out)?;
    match &cli.command {
        Command::Assemble => {
            let spec = cfg.assembly_spec();
            let particles = build_assembly(&spec)?;
            let hist = histogram_report(&particles, &spec.distribution, HISTOGRAM_BINS)?;
            let snapshot = PackingSnapshot {
                provenance: Provenance::Assembly,
                domain: SnapshotDomain::Unplaced,
                particles,
                contacts: Vec::new(),
                status: RunStatus {
                    iterations: 0,
                    completed: true,
                },
            };
            let path = out.join("assembly.gpk");
            io::write_snapshot_file(&path, &snapshot, &cfg.hash())?;
            io::write_file(&out.join("size_histogram.csv"), csv::size_histogram(&hist))?;
            write_effective_config(&out, "assemble", &cfg)?;
            say(format!("assembly: {} particles -> {}", snapshot.particles.len(), path.display()));
        }
        Command::PackMc { assembly } => {
            let particles = read_assembly(assembly)?;
            let result = mc::run(&particles, &cfg.mc)?;
            let path = out.join("mc.gpk");
            io::write_snapshot_file(&path, &result.snapshot, &cfg.hash())?;
            io::write_file(&out.join("mc_history.csv"), csv::mc_history(&result.history))?;
            let last = result.history.last().expect("history has the initial row");
            let summary = json!({
                "iterations": result.snapshot.status.iterations,
                "converged": result.converged,
                "mean_rel_overlap": last.mean_rel_overlap,
                "max_rel_overlap": last.max_rel_overlap,
                "initial_edge": result.initial_edge,
                "final_edge": result.final_edge,
                "expansions": result.expansions,
            });
            io::write_file(&out.join("mc_run.json"), json_text(&summary))?;
            write_effective_config(&out, "pack-mc", &cfg)?;
            say(format!(
                "mc: {} iterations, mean overlap {:.3e}, max {:.3e}, converged {} -> {}",
                result.snapshot.status.iterations,
                last.mean_rel_overlap,
                last.max_rel_overlap,
                result.converged,
                path.display()
            ));
            if let Err(e) = result.ensure_converged() {
                if !cli.common.allow_unconverged {
                    return Err(e.into());
                }
                log::warn!("{e}");
            }
        }
        Command::PackDem { assembly } => {
            let particles = read_assembly(assembly)?;
            let result = dem::run_deposition(&particles, &cfg.dem, &cfg.container)?;
            let path = out.join("dem.gpk");
            io::write_snapshot_file(&path, &result.snapshot, &cfg.hash())?;
            io::write_file(&out.join("dem_energy.csv"), csv::dem_trace(&result.trace))?;
            let summary = json!({
                "steps": result.snapshot.status.iterations,
                "at_rest": result.at_rest,
                "dt": result.dt,
                "max_friction_ratio": result.max_friction_ratio,
                "friction_violations": result.friction_violations,
            });
            io::write_file(&out.join("dem_run.json"), json_text(&summary))?;
            write_effective_config(&out, "pack-dem", &cfg)?;
            say(format!(
                "dem: {} steps, dt {:.3e} s, at rest {} -> {}",
                result.snapshot.status.iterations,
                result.dt,
                result.at_rest,
                path.display()
            ));
            if let Err(e) = result.ensure_at_rest() {
                if !cli.common.allow_unconverged {
                    return Err(e.into());
                }
                log::warn!("{e}");
            }
        }
        Command::Analyze { snapshot } => {
            let (_, s) = io::read_snapshot_file(snapshot)?;
            let m = metrics::analyze(&s, &cfg.metrics)?;
            let name = stem(snapshot);
            let doc = metrics_document(&s, &m, &cfg);
            io::write_file(&out.join(format!("{name}_metrics.json")), json_text(&doc))?;
            io::write_file(&out.join(format!("{name}_rdf.csv")), csv::rdf(&m.rdf))?;
            io::write_file(&out.join(format!("{name}_cn.csv")), csv::coordination_histogram(&cn_counts(&m)))?;
            write_effective_config(&out, "analyze", &cfg)?;
            say(format!(
                "{name}: fraction {:.5}, mean CN {:.3}, {} contacts",
                m.packing_fraction, m.mean_coordination, m.n_contacts
            ));
        }
        Command::Compare { a, b } => {
            let (_, sa) = io::read_snapshot_file(a)?;
            let (_, sb) = io::read_snapshot_file(b)?;
            let ma = metrics::analyze(&sa, &cfg.metrics)?;
            let mb = metrics::analyze(&sb, &cfg.metrics)?;
            let c = metrics::compare(&ma, &mb)?;
            let doc = serde_json::to_value(&c).expect("comparison serializes");
            io::write_file(&out.join("comparison.json"), json_text(&doc))?;
            let text = c.to_text();
            io::write_file(&out.join("comparison.txt"), &text)?;
            write_effective_config(&out, "compare", &cfg)?;
            say(text);
        }
        Command::Export { snapshot, format } => {
            let (_, s) = io::read_snapshot_file(snapshot)?;
            match format {
                ExportFormat::Csv => {
                    let path = out.join(format!("{}_particles.csv", stem(snapshot)));
                    io::write_file(&path, csv::particles(&s.particles))?;
                    say(format!("{} particles -> {}", s.particles.len(), path.display()));
                }
            }
        }
    }
    Ok(())
}

/// `histogram[k]` = particles with `k` contacts, dense from zero.
fn cn_counts(m: &PackingMetrics) -> Vec<usize> {
    let len = m.coordination_histogram.iter().map(|&(k, _)| k + 1).max().unwrap_or(0);
    let mut h = vec![0; len];
    for &(k, c) in &m.coordination_histogram {
        h[k] = c;
    }
    h
}

/// Metrics JSON: chain summary for force-bearing snapshots, a skip notice
/// otherwise, and the support audit for container snapshots: vertical
/// force from the floor and from side-wall friction against total weight.
pub fn metrics_document(s: &PackingSnapshot<f64>, m: &PackingMetrics, cfg: &RunConfig) -> Value {
    let mut doc = serde_json::to_value(m).expect("metrics serialize");
    let obj = doc.as_object_mut().expect("object");
    if m.force_chains.is_none() {
        obj.remove("force_chains");
        obj.insert("skipped".into(), json!({ "force_chains": "force data absent" }));
    }
    if let (true, SnapshotDomain::Container { .. }) = (s.has_forces(), s.domain) {
        let (mut floor, mut walls) = (0.0, 0.0);
        for c in &s.contacts {
            if let (Partner::Wall(k), Some(f)) = (c.contact.partner, c.force) {
                if k == 0 {
                    floor += f.z;
                } else {
                    walls += f.z;
                }
            }
        }
        let g = cfg.dem.gravity.iter().map(|x| x * x).sum::<f64>().sqrt();
        let weight = s.particles.iter().map(|p| p.mass).sum::<f64>() * g;
        let total = floor + walls;
        obj.insert(
            "floor_force".into(),
            json!({
                "floor": floor,
                "side_walls": walls,
                "total": total,
                "weight": weight,
                "relative_error": (total - weight).abs() / weight,
            }),
        );
    }
    doc
}
