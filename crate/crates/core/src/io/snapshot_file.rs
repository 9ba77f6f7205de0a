//! Binary snapshot format with a JSON sidecar.
//!
//! Little-endian throughout:
//!
//! ```text
//! magic "GRANPACK" | version u32 | provenance u8 | domain u8 | flags u8 | 0u8
//! domain params 2 x f64 | iterations u64 | particles u64 | contacts u64
//! config hash [u8; 32]
//! particle: id u64 | kind u8 | semi-lengths 6 x f64 (x+, x-, y+, y-, z+, z-)
//!           | position 3 x f64 | orientation w, x, y, z | density f64 | mass f64
//! contact:  id_i u64 | partner kind u8 (0 particle, 1 wall) | partner u64
//!           | point_i 3 x f64 | point_j 3 x f64 | delta 3 x f64 | depth f64
//!           | normal 3 x f64 | has force u8 | force 3 x f64
//! SHA-256 of everything above
//! ```

use std::path::Path;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::geometry::{Contact, Particle, ParticleShape, Partner, ShapeKind};
use crate::io::{hex, write_file, IoError};
use crate::snapshot::{ContactRecord, PackingSnapshot, Provenance, RunStatus, SnapshotDomain};

pub const MAGIC: &[u8; 8] = b"GRANPACK";
pub const FORMAT_VERSION: u32 = 1;

const FLAG_COMPLETED: u8 = 1;
const FLAG_FORCES: u8 = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotHeader {
    pub version: u32,
    pub provenance: Provenance,
    pub domain: SnapshotDomain<f64>,
    pub completed: bool,
    pub has_forces: bool,
    pub iterations: u64,
    pub n_particles: u64,
    pub n_contacts: u64,
    pub config_hash: [u8; 32],
}

fn domain_code(d: &SnapshotDomain<f64>) -> (u8, f64, f64) {
    match *d {
        SnapshotDomain::Unplaced => (0, 0.0, 0.0),
        SnapshotDomain::Periodic { edge } => (1, edge, 0.0),
        SnapshotDomain::WalledCube { edge } => (2, edge, 0.0),
        SnapshotDomain::Container { width_x, width_y } => (3, width_x, width_y),
    }
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn vec3(&mut self, v: &Vector3<f64>) {
        for x in v.iter() {
            self.f64(*x);
        }
    }
}

/// Serializes a snapshot.
pub fn write_snapshot(s: &PackingSnapshot<f64>, config_hash: &[u8; 32]) -> Vec<u8> {
    let mut w = Writer(Vec::with_capacity(128 + s.particles.len() * 137 + s.contacts.len() * 150));
    w.0.extend_from_slice(MAGIC);
    w.u32(FORMAT_VERSION);
    w.u8(s.provenance.code());
    let (code, a, b) = domain_code(&s.domain);
    w.u8(code);
    let mut flags = 0;
    if s.status.completed {
        flags |= FLAG_COMPLETED;
    }
    if s.has_forces() {
        flags |= FLAG_FORCES;
    }
    w.u8(flags);
    w.u8(0);
    w.f64(a);
    w.f64(b);
    w.u64(s.status.iterations);
    w.u64(s.particles.len() as u64);
    w.u64(s.contacts.len() as u64);
    w.0.extend_from_slice(config_hash);
    for p in &s.particles {
        w.u64(p.id as u64);
        w.u8(p.shape.kind().code());
        for axis in p.shape.semi_lengths() {
            w.f64(axis[0]);
            w.f64(axis[1]);
        }
        w.vec3(&p.position);
        let q = p.orientation.quaternion();
        for x in [q.w, q.i, q.j, q.k] {
            w.f64(x);
        }
        w.f64(p.density);
        w.f64(p.mass);
    }
    for r in &s.contacts {
        let c = &r.contact;
        w.u64(c.id_i as u64);
        match c.partner {
            Partner::Particle(j) => {
                w.u8(0);
                w.u64(j as u64);
            }
            Partner::Wall(k) => {
                w.u8(1);
                w.u64(k as u64);
            }
        }
        w.vec3(&c.point_i);
        w.vec3(&c.point_j);
        w.vec3(&c.delta);
        w.f64(c.depth);
        w.vec3(&c.normal);
        match r.force {
            Some(f) => {
                w.u8(1);
                w.vec3(&f);
            }
            None => {
                w.u8(0);
                w.vec3(&Vector3::zeros());
            }
        }
    }
    let digest = Sha256::digest(&w.0);
    w.0.extend_from_slice(&digest);
    w.0
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], IoError> {
        if self.pos + n > self.buf.len() {
            return Err(IoError::Corrupt("unexpected end of data".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, IoError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32, IoError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64, IoError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> Result<f64, IoError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn vec3(&mut self) -> Result<Vector3<f64>, IoError> {
        Ok(Vector3::new(self.f64()?, self.f64()?, self.f64()?))
    }
    fn index(&mut self) -> Result<usize, IoError> {
        usize::try_from(self.u64()?).map_err(|_| IoError::Corrupt("index out of range".into()))
    }
}

/// Unit quaternion from stored components; re-normalized only if the
/// stored value has drifted, so exact unit values survive unchanged.
fn orientation(w: f64, x: f64, y: f64, z: f64) -> Result<UnitQuaternion<f64>, IoError> {
    let q = Quaternion::new(w, x, y, z);
    let n = q.norm();
    if !(n > 0.0 && n.is_finite()) {
        return Err(IoError::Corrupt("degenerate orientation".into()));
    }
    if (n - 1.0).abs() <= 1e-12 {
        Ok(UnitQuaternion::new_unchecked(q))
    } else {
        Ok(UnitQuaternion::new_normalize(q))
    }
}

/// Parses a snapshot, checking magic, version and checksum.
pub fn read_snapshot(bytes: &[u8]) -> Result<(SnapshotHeader, PackingSnapshot<f64>), IoError> {
    if bytes.len() < MAGIC.len() + 4 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(IoError::Corrupt("not a snapshot file".into()));
    }
    let mut r = Reader {
        buf: bytes,
        pos: MAGIC.len(),
    };
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(IoError::Version {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    if bytes.len() < 32 {
        return Err(IoError::Corrupt("truncated".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(IoError::Corrupt("checksum mismatch".into()));
    }
    let r_body = &mut Reader { buf: body, pos: r.pos };
    let provenance =
        Provenance::from_code(r_body.u8()?).ok_or_else(|| IoError::Corrupt("unknown provenance".into()))?;
    let domain_kind = r_body.u8()?;
    let flags = r_body.u8()?;
    let _reserved = r_body.u8()?;
    let (a, b) = (r_body.f64()?, r_body.f64()?);
    let domain = match domain_kind {
        0 => SnapshotDomain::Unplaced,
        1 => SnapshotDomain::Periodic { edge: a },
        2 => SnapshotDomain::WalledCube { edge: a },
        3 => SnapshotDomain::Container { width_x: a, width_y: b },
        _ => return Err(IoError::Corrupt("unknown domain kind".into())),
    };
    let iterations = r_body.u64()?;
    let n_particles = r_body.u64()?;
    let n_contacts = r_body.u64()?;
    let mut config_hash = [0u8; 32];
    config_hash.copy_from_slice(r_body.take(32)?);

    let mut particles = Vec::with_capacity(n_particles.min(1 << 24) as usize);
    for _ in 0..n_particles {
        let id = r_body.index()?;
        let kind = ShapeKind::from_code(r_body.u8()?).ok_or_else(|| IoError::Corrupt("unknown shape kind".into()))?;
        let mut semi = [[0.0; 2]; 3];
        for axis in semi.iter_mut() {
            axis[0] = r_body.f64()?;
            axis[1] = r_body.f64()?;
        }
        let position = r_body.vec3()?;
        let q = orientation(r_body.f64()?, r_body.f64()?, r_body.f64()?, r_body.f64()?)?;
        let density = r_body.f64()?;
        let mass = r_body.f64()?;
        let shape = ParticleShape::from_parts(kind, semi).map_err(|e| IoError::Corrupt(format!("particle {id}: {e}")))?;
        let mut p = Particle::new(id, shape, density)
            .map_err(|e| IoError::Corrupt(format!("particle {id}: {e}")))?
            .with_pose(position, q);
        p.mass = mass;
        particles.push(p);
    }
    let mut contacts = Vec::with_capacity(n_contacts.min(1 << 24) as usize);
    for _ in 0..n_contacts {
        let id_i = r_body.index()?;
        let partner = match r_body.u8()? {
            0 => Partner::Particle(r_body.index()?),
            1 => Partner::Wall(r_body.index()?),
            _ => return Err(IoError::Corrupt("unknown contact partner".into())),
        };
        let contact = Contact {
            id_i,
            partner,
            point_i: r_body.vec3()?,
            point_j: r_body.vec3()?,
            delta: r_body.vec3()?,
            depth: r_body.f64()?,
            normal: r_body.vec3()?,
        };
        let has_force = r_body.u8()? != 0;
        let f = r_body.vec3()?;
        contacts.push(ContactRecord {
            contact,
            force: has_force.then_some(f),
        });
    }
    if r_body.pos != body.len() {
        return Err(IoError::Corrupt("trailing bytes".into()));
    }
    let completed = flags & FLAG_COMPLETED != 0;
    let snapshot = PackingSnapshot {
        provenance,
        domain,
        particles,
        contacts,
        status: RunStatus { iterations, completed },
    };
    let header = SnapshotHeader {
        version,
        provenance,
        domain,
        completed,
        has_forces: flags & FLAG_FORCES != 0,
        iterations,
        n_particles,
        n_contacts,
        config_hash,
    };
    Ok((header, snapshot))
}

/// Human-readable summary written next to a snapshot file.
pub fn sidecar_json(s: &PackingSnapshot<f64>, config_hash: &[u8; 32]) -> String {
    let (kind, a, b) = domain_code(&s.domain);
    let domain = match kind {
        0 => json!({ "kind": "unplaced" }),
        1 => json!({ "kind": "periodic", "edge": a }),
        2 => json!({ "kind": "walled_cube", "edge": a }),
        _ => json!({ "kind": "container", "width_x": a, "width_y": b }),
    };
    let doc = json!({
        "format_version": FORMAT_VERSION,
        "provenance": s.provenance.label(),
        "domain": domain,
        "particles": s.particles.len(),
        "contacts": s.contacts.len(),
        "has_forces": s.has_forces(),
        "completed": s.status.completed,
        "iterations": s.status.iterations,
        "total_volume": s.total_volume(),
        "config_hash": hex(config_hash),
        "content_hash": hex(&s.content_hash()),
    });
    let mut text = serde_json::to_string_pretty(&doc).expect("json");
    text.push('\n');
    text
}

/// Writes `path` and its `.json` sidecar.
pub fn write_snapshot_file(path: &Path, s: &PackingSnapshot<f64>, config_hash: &[u8; 32]) -> Result<(), IoError> {
    write_file(path, write_snapshot(s, config_hash))?;
    write_file(&path.with_extension("json"), sidecar_json(s, config_hash))
}

pub fn read_snapshot_file(path: &Path) -> Result<(SnapshotHeader, PackingSnapshot<f64>), IoError> {
    let bytes = std::fs::read(path).map_err(|e| IoError::Io(format!("{}: {e}", path.display())))?;
    read_snapshot(&bytes).map_err(|e| match e {
        IoError::Corrupt(m) => IoError::Corrupt(format!("{}: {m}", path.display())),
        other => other,
    })
}
