//! The packing snapshot shared by both generators and the metrics.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::geometry::{Contact, Particle};
use crate::scalar::{to_f64, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Provenance {
    /// Freshly built assembly, poses unset.
    Assembly,
    MonteCarlo,
    Dem,
}

impl Provenance {
    pub fn code(self) -> u8 {
        match self {
            Provenance::Assembly => 0,
            Provenance::MonteCarlo => 1,
            Provenance::Dem => 2,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(Provenance::Assembly),
            1 => Some(Provenance::MonteCarlo),
            2 => Some(Provenance::Dem),
            _ => None,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Provenance::Assembly => "assembly",
            Provenance::MonteCarlo => "MC",
            Provenance::Dem => "DEM",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SnapshotDomain<T: Real> {
    /// No spatial domain yet.
    Unplaced,
    /// Periodic cube `[0, edge)^3`.
    Periodic { edge: T },
    /// Hard-walled cube `[0, edge]^3`.
    WalledCube { edge: T },
    /// Open-top container `[0, wx] x [0, wy]`, floor at z = 0.
    Container { width_x: T, width_y: T },
}

/// A contact plus, for DEM snapshots, the total contact force on body i.
#[derive(Debug, Clone, PartialEq)]
pub struct ContactRecord<T: Real> {
    pub contact: Contact<T>,
    pub force: Option<Vector3<T>>,
}

impl<T: Real> ContactRecord<T> {
    /// Magnitude of the normal force component, if forces are present.
    pub fn normal_force(&self) -> Option<T> {
        self.force.map(|f| f.dot(&self.contact.normal).abs())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunStatus {
    /// Iterations (MC) or steps (DEM) performed.
    pub iterations: u64,
    /// Converged (MC) or reached rest (DEM).
    pub completed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PackingSnapshot<T: Real> {
    pub provenance: Provenance,
    pub domain: SnapshotDomain<T>,
    pub particles: Vec<Particle<T>>,
    pub contacts: Vec<ContactRecord<T>>,
    pub status: RunStatus,
}

impl<T: Real> PackingSnapshot<T> {
    pub fn has_forces(&self) -> bool {
        self.provenance == Provenance::Dem && self.contacts.iter().all(|c| c.force.is_some())
    }

    pub fn total_volume(&self) -> T {
        self.particles.iter().fold(T::zero(), |s, p| s + p.volume())
    }

    /// SHA-256 over provenance, domain, shapes and poses.
    pub fn content_hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update([self.provenance.code()]);
        let dom: [f64; 3] = match self.domain {
            SnapshotDomain::Unplaced => [0.0, 0.0, 0.0],
            SnapshotDomain::Periodic { edge } => [1.0, to_f64(edge), 0.0],
            SnapshotDomain::WalledCube { edge } => [2.0, to_f64(edge), 0.0],
            SnapshotDomain::Container { width_x, width_y } => [3.0, to_f64(width_x), to_f64(width_y)],
        };
        for x in dom {
            h.update(x.to_le_bytes());
        }
        for p in &self.particles {
            h.update((p.id as u64).to_le_bytes());
            h.update([p.shape.kind().code()]);
            let q = p.orientation.quaternion();
            let wxyz = [q.w, q.i, q.j, q.k];
            let semi = p.shape.semi_lengths();
            let values = semi
                .iter()
                .flatten()
                .chain(p.position.iter())
                .chain(wxyz.iter())
                .map(|&v| to_f64(v));
            for v in values {
                h.update(v.to_le_bytes());
            }
        }
        h.finalize().into()
    }

    /// First eight bytes of [`content_hash`](Self::content_hash) as a seed.
    pub fn seed(&self) -> u64 {
        let h = self.content_hash();
        u64::from_le_bytes(h[..8].try_into().expect("eight bytes"))
    }
}
