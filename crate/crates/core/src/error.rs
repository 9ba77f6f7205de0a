use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("semi-length `{name}` must be positive and finite, got {value}")]
    InvalidSemiLength { name: &'static str, value: f64 },
    #[error("ellipsoid semi-axes must satisfy a >= b >= c")]
    UnorderedSemiAxes,
    #[error("semi-lengths inconsistent with shape kind")]
    InconsistentSemiLengths,
    #[error("density must be positive, got {0}")]
    InvalidDensity(f64),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DistributionError {
    #[error("invalid size distribution: {0}")]
    Invalid(String),
    #[error("radius must be positive, got {0}")]
    NonPositiveRadius(f64),
    #[error("histogram needs at least 2 bins, got {0}")]
    TooFewBins(usize),
}

#[derive(Debug, Error)]
pub enum McError {
    #[error("invalid Monte Carlo config: {0}")]
    InvalidConfig(String),
    #[error("empty assembly")]
    EmptyAssembly,
}

#[derive(Debug, Error)]
pub enum DemError {
    #[error("invalid DEM config: {0}")]
    InvalidConfig(String),
    #[error("assembly does not fit in the container column without overlap (needs {needed:.3} m, allowed {allowed:.3} m)")]
    FillOverflow { needed: f64, allowed: f64 },
    #[error("instability detected at step {step}: particle {id} speed {speed:.3e} m/s exceeds {limit:.3e} m/s")]
    InstabilityDetected { step: u64, id: usize, speed: f64, limit: f64 },
    #[error("contact iteration did not converge for pair ({id_i}, {id_j})")]
    ContactNonConvergence { id_i: usize, id_j: usize },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("measurement region is empty or degenerate")]
    EmptyRegion,
    #[error("no contacts in snapshot")]
    NoContacts,
    #[error("force chains require contact forces (DEM snapshot)")]
    RequiresForces,
    #[error("incompatible binning: {0}")]
    IncompatibleBinning(String),
    #[error("invalid metric parameter: {0}")]
    InvalidParameter(String),
}
