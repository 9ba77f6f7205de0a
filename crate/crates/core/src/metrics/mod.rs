//! Microstructure metrics of a packing and side-by-side comparison.

pub mod chains;
pub mod contacts;
pub mod fraction;
pub mod rdf;

use std::fmt::Write as _;

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

pub use chains::{force_chains, ChainSummary, ForceChain, ForceChainGraph, StrongEdge};
pub use contacts::{
    coordination_number, default_contact_tolerance, fabric_from_normals, fabric_tensor, geometric_contacts,
    Coordination, GeometricContact,
};
pub use fraction::{default_region, free_surface_height, packing_fraction, Region};
pub use rdf::{rdf, Rdf, RdfCurve};

use crate::error::MetricsError;
use crate::scalar::{to_f64, Real};
use crate::snapshot::{PackingSnapshot, SnapshotDomain};

/// Analysis settings. Unset values are derived from the snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricParams {
    /// RDF bin width; default a tenth of the mean equivalent radius.
    pub bin_width: Option<f64>,
    /// RDF range; default ten mean equivalent radii, capped at half a
    /// periodic edge.
    pub r_max: Option<f64>,
    /// Near-contact gap for coordination and fabric; default
    /// `1e-3` of the mean equivalent radius.
    pub contact_tolerance: Option<f64>,
    pub force_factor: f64,
    pub angle_limit_deg: f64,
    pub region: Option<Region>,
}

impl Default for MetricParams {
    fn default() -> Self {
        Self {
            bin_width: None,
            r_max: None,
            contact_tolerance: None,
            force_factor: 1.0,
            angle_limit_deg: 45.0,
            region: None,
        }
    }
}

/// Everything measured on one snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackingMetrics {
    pub provenance: String,
    pub n_particles: usize,
    pub packing_fraction: f64,
    pub region: Region,
    pub contact_tolerance: f64,
    pub mean_coordination: f64,
    pub coordination_histogram: Vec<(usize, usize)>,
    pub n_contacts: usize,
    pub rdf: RdfCurve,
    pub rdf_bin_too_fine: bool,
    /// Absent when the snapshot has no particle-particle contacts.
    pub fabric: Option<[[f64; 3]; 3]>,
    pub force_chains: Option<ChainSummary>,
}

fn mean_eq_radius<T: Real>(s: &PackingSnapshot<T>) -> f64 {
    let n = s.particles.len().max(1) as f64;
    s.particles.iter().map(|p| to_f64(p.eq_radius)).sum::<f64>() / n
}

/// Computes all metrics. Coordination and fabric both use the geometric
/// contacts within the tolerance, so MC and DEM packings are measured the
/// same way; force chains are computed only when forces are present.
pub fn analyze<T: Real>(s: &PackingSnapshot<T>, params: &MetricParams) -> Result<PackingMetrics, MetricsError> {
    if s.particles.is_empty() {
        return Err(MetricsError::EmptyRegion);
    }
    let r_mean = mean_eq_radius(s);
    let region = match params.region {
        Some(r) => Region::new(r.min, r.max)?,
        None => default_region(s)?,
    };
    let fraction = packing_fraction(s, params.region)?;
    let tolerance = params.contact_tolerance.unwrap_or_else(|| default_contact_tolerance(s));
    if !(tolerance >= 0.0) {
        return Err(MetricsError::InvalidParameter(format!("contact tolerance {tolerance}")));
    }
    let contacts = geometric_contacts(s, tolerance);
    let cn = contacts::coordination_from(s.particles.len(), &contacts);
    let fabric = match fabric_from_normals(contacts.iter().map(|c| c.normal)) {
        Ok(f) => Some(matrix_rows(&f)),
        Err(MetricsError::NoContacts) => None,
        Err(e) => return Err(e),
    };
    let bin_width = params.bin_width.unwrap_or(0.1 * r_mean);
    let mut r_max = params.r_max.unwrap_or(10.0 * r_mean);
    if let (None, SnapshotDomain::Periodic { edge }) = (params.r_max, s.domain) {
        r_max = r_max.min(0.5 * to_f64(edge));
    }
    let g = match rdf(s, bin_width, r_max) {
        Err(MetricsError::EmptyRegion) => Rdf {
            curve: RdfCurve {
                r: Vec::new(),
                g: Vec::new(),
                bin_width,
            },
            counts: Vec::new(),
            expected: Vec::new(),
            bin_too_fine: true,
        },
        other => other?,
    };
    let force_chains = if s.has_forces() {
        Some(force_chains(s, params.force_factor, params.angle_limit_deg)?.summary())
    } else {
        None
    };
    Ok(PackingMetrics {
        provenance: s.provenance.label().to_string(),
        n_particles: s.particles.len(),
        packing_fraction: fraction,
        region,
        contact_tolerance: tolerance,
        mean_coordination: cn.mean,
        coordination_histogram: cn.histogram,
        n_contacts: contacts.len(),
        rdf: g.curve,
        rdf_bin_too_fine: g.bin_too_fine,
        fabric,
        force_chains,
    })
}

fn matrix_rows(m: &Matrix3<f64>) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for (a, row) in out.iter_mut().enumerate() {
        for (b, v) in row.iter_mut().enumerate() {
            *v = m[(a, b)];
        }
    }
    out
}

fn deviatoric(f: &[[f64; 3]; 3]) -> Matrix3<f64> {
    let m = Matrix3::from_fn(|a, b| f[a][b]);
    m - Matrix3::identity() * (m.trace() / 3.0)
}

/// Differences `a - b` of the chain summaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainDelta {
    pub count: i64,
    pub mean_length: f64,
    pub mean_force: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub a: PackingMetrics,
    pub b: PackingMetrics,
    pub delta_fraction: f64,
    pub delta_coordination: f64,
    /// `sqrt(sum (g_a - g_b)^2 dr)` over the bins both curves share.
    pub rdf_l2: f64,
    pub shared_bins: usize,
    /// Frobenius norm of the difference of deviatoric fabric parts.
    pub fabric_deviator_difference: Option<f64>,
    /// Present only when both packings carry forces.
    pub force_chains: Option<ChainDelta>,
}

/// Side-by-side comparison; deltas are `a - b`.
pub fn compare(a: &PackingMetrics, b: &PackingMetrics) -> Result<Comparison, MetricsError> {
    if a.rdf.bin_width != b.rdf.bin_width {
        return Err(MetricsError::IncompatibleBinning(format!(
            "rdf bin widths {} and {}",
            a.rdf.bin_width, b.rdf.bin_width
        )));
    }
    if a.contact_tolerance != b.contact_tolerance {
        return Err(MetricsError::IncompatibleBinning(format!(
            "contact tolerances {} and {}",
            a.contact_tolerance, b.contact_tolerance
        )));
    }
    let shared = a.rdf.g.len().min(b.rdf.g.len());
    let rdf_l2 = (a.rdf.g[..shared]
        .iter()
        .zip(&b.rdf.g[..shared])
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        * a.rdf.bin_width)
        .sqrt();
    let force_chains = match (&a.force_chains, &b.force_chains) {
        (Some(x), Some(y)) => Some(ChainDelta {
            count: x.count as i64 - y.count as i64,
            mean_length: x.mean_length - y.mean_length,
            mean_force: x.mean_force - y.mean_force,
        }),
        _ => None,
    };
    Ok(Comparison {
        delta_fraction: a.packing_fraction - b.packing_fraction,
        delta_coordination: a.mean_coordination - b.mean_coordination,
        rdf_l2,
        shared_bins: shared,
        fabric_deviator_difference: match (&a.fabric, &b.fabric) {
            (Some(x), Some(y)) => Some((deviatoric(x) - deviatoric(y)).norm()),
            _ => None,
        },
        force_chains,
        a: a.clone(),
        b: b.clone(),
    })
}

impl Comparison {
    /// Plain-text table.
    pub fn to_text(&self) -> String {
        let mut t = String::new();
        let (a, b) = (&self.a, &self.b);
        let _ = writeln!(t, "{:<28}{:>16}{:>16}{:>16}", "metric", a.provenance, b.provenance, "delta");
        let _ = writeln!(t, "{}", "-".repeat(76));
        let row = |t: &mut String, name: &str, x: String, y: String, d: String| {
            let _ = writeln!(t, "{name:<28}{x:>16}{y:>16}{d:>16}");
        };
        row(&mut t, "particles", a.n_particles.to_string(), b.n_particles.to_string(), String::new());
        row(
            &mut t,
            "packing fraction",
            format!("{:.5}", a.packing_fraction),
            format!("{:.5}", b.packing_fraction),
            format!("{:+.5}", self.delta_fraction),
        );
        row(
            &mut t,
            "mean coordination",
            format!("{:.4}", a.mean_coordination),
            format!("{:.4}", b.mean_coordination),
            format!("{:+.4}", self.delta_coordination),
        );
        row(&mut t, "contacts", a.n_contacts.to_string(), b.n_contacts.to_string(), String::new());
        for k in 0..3 {
            let name = format!("fabric F{}{}", k + 1, k + 1);
            let diag = |m: &PackingMetrics| m.fabric.map(|f| f[k][k]);
            let cell = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"));
            let delta = match (diag(a), diag(b)) {
                (Some(x), Some(y)) => format!("{:+.4}", x - y),
                _ => String::new(),
            };
            row(&mut t, &name, cell(diag(a)), cell(diag(b)), delta);
        }
        row(
            &mut t,
            "fabric deviator difference",
            String::new(),
            String::new(),
            self.fabric_deviator_difference
                .map_or_else(|| "n/a".to_string(), |d| format!("{d:.5}")),
        );
        row(
            &mut t,
            "rdf L2 distance",
            format!("{} bins", a.rdf.g.len()),
            format!("{} bins", b.rdf.g.len()),
            format!("{:.5}", self.rdf_l2),
        );
        let chain = |m: &PackingMetrics, f: &dyn Fn(&ChainSummary) -> String| {
            m.force_chains.as_ref().map_or_else(|| "n/a".to_string(), f)
        };
        if a.force_chains.is_some() || b.force_chains.is_some() {
            let d = self.force_chains.as_ref();
            row(
                &mut t,
                "force chains",
                chain(a, &|c| c.count.to_string()),
                chain(b, &|c| c.count.to_string()),
                d.map_or(String::new(), |d| format!("{:+}", d.count)),
            );
            row(
                &mut t,
                "mean chain length",
                chain(a, &|c| format!("{:.3}", c.mean_length)),
                chain(b, &|c| format!("{:.3}", c.mean_length)),
                d.map_or(String::new(), |d| format!("{:+.3}", d.mean_length)),
            );
            row(
                &mut t,
                "mean chain force (N)",
                chain(a, &|c| format!("{:.4e}", c.mean_force)),
                chain(b, &|c| format!("{:.4e}", c.mean_force)),
                d.map_or(String::new(), |d| format!("{:+.4e}", d.mean_force)),
            );
        }
        t
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn metrics(fraction: f64, g: Vec<f64>) -> PackingMetrics {
        PackingMetrics {
            provenance: "MC".into(),
            n_particles: 10,
            packing_fraction: fraction,
            region: Region::new([0.0; 3], [1.0; 3]).unwrap(),
            contact_tolerance: 1e-3,
            mean_coordination: 5.0,
            coordination_histogram: vec![(5, 10)],
            n_contacts: 25,
            rdf: RdfCurve {
                r: (0..g.len()).map(|k| 0.05 + 0.1 * k as f64).collect(),
                g,
                bin_width: 0.1,
            },
            rdf_bin_too_fine: false,
            fabric: Some([[0.4, 0.0, 0.0], [0.0, 0.3, 0.0], [0.0, 0.0, 0.3]]),
            force_chains: None,
        }
    }

    #[test]
    fn self_comparison_is_zero() {
        let m = metrics(0.6, vec![0.0, 1.5, 1.0]);
        let c = compare(&m, &m).unwrap();
        assert_eq!(c.delta_fraction, 0.0);
        assert_eq!(c.delta_coordination, 0.0);
        assert_eq!(c.rdf_l2, 0.0);
        assert_eq!(c.fabric_deviator_difference, Some(0.0));
    }

    #[test]
    fn deltas() {
        let a = metrics(0.60, vec![0.0, 1.5, 1.0]);
        let b = metrics(0.58, vec![0.0, 1.0, 1.0, 1.0]);
        let c = compare(&a, &b).unwrap();
        assert!((c.delta_fraction - 0.02).abs() < 1e-15);
        assert!((c.rdf_l2 - (0.25f64 * 0.1).sqrt()).abs() < 1e-12);
        assert!((c.rdf_l2 - 0.158).abs() < 1e-3);
        assert_eq!(c.shared_bins, 3);
        assert!(c.force_chains.is_none());
        assert!(c.to_text().contains("packing fraction"));
        assert!(!c.to_text().contains("force chains"));
    }

    #[test]
    fn binning_must_match() {
        let a = metrics(0.6, vec![1.0]);
        let mut b = a.clone();
        b.rdf.bin_width = 0.2;
        assert!(matches!(compare(&a, &b), Err(MetricsError::IncompatibleBinning(_))));
        let mut b = a.clone();
        b.contact_tolerance = 2e-3;
        assert!(compare(&a, &b).is_err());
    }

    #[test]
    fn chains_shown_for_one_side_only() {
        let a = metrics(0.6, vec![1.0]);
        let mut b = a.clone();
        b.provenance = "DEM".into();
        b.force_chains = Some(ChainSummary {
            count: 3,
            mean_length: 4.0,
            max_length: 5,
            mean_force: 10.0,
            length_histogram: vec![(3, 1), (4, 1), (5, 1)],
        });
        let c = compare(&a, &b).unwrap();
        assert!(c.force_chains.is_none());
        let text = c.to_text();
        assert!(text.contains("force chains") && text.contains("n/a"));
    }
}
