//! Run configuration file (TOML).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dem::{Container, DemConfig};
use crate::distribution::{AssemblySpec, FamilyKind, ShapeFamily, SizeDistribution};
use crate::io::IoError;
use crate::mc::McConfig;
use crate::metrics::MetricParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilySection {
    pub kind: FamilyKind,
    /// Semi-length ratios; filled from the family's defaults when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ratios: Option<[[f64; 2]; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AssemblySection {
    pub n: usize,
    pub density: f64,
    pub family: FamilySection,
    pub distribution: SizeDistribution<f64>,
}

impl Default for AssemblySection {
    fn default() -> Self {
        Self {
            n: 1000,
            density: 2650.0,
            family: FamilySection {
                kind: FamilyKind::Sphere,
                ratios: None,
            },
            distribution: SizeDistribution::default(),
        }
    }
}

/// Everything one pipeline run needs. Every key has a default; unknown keys
/// are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Seeds the assembly draw, the MC placement and the DEM fill.
    pub seed: u64,
    pub output_dir: PathBuf,
    pub assembly: AssemblySection,
    pub mc: McConfig,
    pub dem: DemConfig,
    pub container: Container,
    pub metrics: MetricParams,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("out"),
            assembly: AssemblySection::default(),
            mc: McConfig::default(),
            dem: DemConfig::default(),
            container: Container::default(),
            metrics: MetricParams::default(),
        }
    }
}

impl RunConfig {
    /// Parses and validates a config, expanding all defaults.
    pub fn from_toml_str(text: &str) -> Result<Self, IoError> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| IoError::Config(one_line(&e.to_string())))?;
        cfg.expand();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, IoError> {
        let text = std::fs::read_to_string(path).map_err(|e| IoError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            IoError::Config(m) => IoError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Fills derived values so the serialized form is fully explicit.
    pub fn expand(&mut self) {
        let kind = self.assembly.family.kind;
        self.assembly.family.ratios.get_or_insert(ShapeFamily::default_for(kind).ratios);
        self.mc.seed = self.seed;
        self.dem.seed = self.seed;
    }

    /// Replaces the global seed everywhere it is used.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.expand();
    }

    pub fn validate(&self) -> Result<(), IoError> {
        let field = |name: &str, e: &dyn std::fmt::Display| IoError::Config(format!("{name}: {e}"));
        if self.assembly.n == 0 {
            return Err(IoError::Config("assembly.n: must be >= 1".into()));
        }
        if !(self.assembly.density > 0.0) {
            return Err(IoError::Config("assembly.density: must be > 0".into()));
        }
        self.assembly
            .distribution
            .validate()
            .map_err(|e| field("assembly.distribution", &e))?;
        self.family().validate().map_err(|e| field("assembly.family", &e))?;
        self.mc.validate().map_err(|e| field("mc", &e))?;
        self.dem.validate().map_err(|e| field("dem", &e))?;
        self.container.validate().map_err(|e| field("container", &e))?;
        let m = &self.metrics;
        for (name, v) in [("metrics.bin_width", m.bin_width), ("metrics.r_max", m.r_max)] {
            if let Some(v) = v {
                if !(v > 0.0) {
                    return Err(IoError::Config(format!("{name}: must be > 0")));
                }
            }
        }
        if let Some(t) = m.contact_tolerance {
            if !(t >= 0.0) {
                return Err(IoError::Config("metrics.contact_tolerance: must be >= 0".into()));
            }
        }
        if !(m.force_factor >= 0.0) {
            return Err(IoError::Config("metrics.force_factor: must be >= 0".into()));
        }
        if !(m.angle_limit_deg > 0.0 && m.angle_limit_deg <= 180.0) {
            return Err(IoError::Config("metrics.angle_limit_deg: must lie in (0, 180]".into()));
        }
        Ok(())
    }

    pub fn family(&self) -> ShapeFamily {
        let kind = self.assembly.family.kind;
        ShapeFamily {
            kind,
            ratios: self
                .assembly
                .family
                .ratios
                .unwrap_or(ShapeFamily::default_for(kind).ratios),
        }
    }

    pub fn assembly_spec(&self) -> AssemblySpec<f64> {
        AssemblySpec {
            n: self.assembly.n,
            family: self.family(),
            distribution: self.assembly.distribution,
            density: self.assembly.density,
            seed: self.seed,
        }
    }

    /// The effective config as TOML; loading it reproduces `self`.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the effective TOML, ignoring where outputs go.
    pub fn hash(&self) -> [u8; 32] {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        Sha256::digest(c.to_toml().as_bytes()).into()
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}
