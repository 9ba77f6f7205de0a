//! Plain CSV writers. Floats use Rust's shortest round-trip formatting so
//! identical values always produce identical bytes.

use std::fmt::{self, Display, Write as _};

use crate::dem::TraceRow;
use crate::distribution::HistogramRow;
use crate::geometry::Particle;
use crate::mc::HistoryRow;
use crate::metrics::RdfCurve;

/// Shortest round-trip float, switching to exponent form for very small or
/// large magnitudes.
struct Num(f64);

impl Display for Num {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let a = self.0.abs();
        if a == 0.0 || (1e-4..1e15).contains(&a) || !a.is_finite() {
            write!(f, "{}", self.0)
        } else {
            write!(f, "{:e}", self.0)
        }
    }
}

fn table<R>(header: &str, rows: impl IntoIterator<Item = R>, mut line: impl FnMut(&mut String, R)) -> String {
    let mut out = String::from(header);
    out.push('\n');
    for r in rows {
        line(&mut out, r);
        out.push('\n');
    }
    out
}

pub fn size_histogram(rows: &[HistogramRow]) -> String {
    table("bin_center,empirical,analytic", rows, |o, r| {
        let _ = write!(o, "{},{},{}", Num(r.bin_center), Num(r.empirical), Num(r.analytic));
    })
}

pub fn mc_history(rows: &[HistoryRow]) -> String {
    table("iteration,mean_rel_overlap,max_rel_overlap,n_contacts", rows, |o, r| {
        let _ = write!(
            o,
            "{},{},{},{}",
            r.iteration,
            Num(r.mean_rel_overlap),
            Num(r.max_rel_overlap),
            r.n_contacts
        );
    })
}

pub fn dem_trace(rows: &[TraceRow]) -> String {
    table("step,time,kinetic_energy,max_speed,n_contacts", rows, |o, r| {
        let _ = write!(
            o,
            "{},{},{},{},{}",
            r.step,
            Num(r.time),
            Num(r.kinetic_energy),
            Num(r.max_speed),
            r.n_contacts
        );
    })
}

pub fn rdf(curve: &RdfCurve) -> String {
    table("r,g", curve.r.iter().zip(&curve.g), |o, (r, g)| {
        let _ = write!(o, "{},{}", Num(*r), Num(*g));
    })
}

/// `histogram[k]` is the number of particles with `k` contacts.
pub fn coordination_histogram(histogram: &[usize]) -> String {
    table("cn,count", histogram.iter().enumerate(), |o, (k, c)| {
        let _ = write!(o, "{k},{c}");
    })
}

/// Per-particle pose table for external plotting.
pub fn particles(particles: &[Particle<f64>]) -> String {
    let header = "id,kind,x,y,z,qw,qx,qy,qz,a_pos,a_neg,b_pos,b_neg,c_pos,c_neg,volume,mass";
    table(header, particles, |o, p| {
        let q = p.orientation.quaternion();
        let s = p.shape.semi_lengths();
        let _ = write!(
            o,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            p.id,
            p.shape.kind().name(),
            Num(p.position.x),
            Num(p.position.y),
            Num(p.position.z),
            Num(q.w),
            Num(q.i),
            Num(q.j),
            Num(q.k),
            Num(s[0][0]),
            Num(s[0][1]),
            Num(s[1][0]),
            Num(s[1][1]),
            Num(s[2][0]),
            Num(s[2][1]),
            Num(p.volume()),
            Num(p.mass)
        );
    })
}
