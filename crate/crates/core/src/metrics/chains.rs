//! Force chains: quasi-linear paths of strongly loaded contacts.

use std::collections::HashMap;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::MetricsError;
use crate::geometry::Partner;
use crate::scalar::{to_f64, Real};
use crate::snapshot::PackingSnapshot;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrongEdge {
    /// Particle ids.
    pub i: usize,
    pub j: usize,
    pub normal_force: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForceChain {
    /// Particle ids in path order.
    pub particles: Vec<usize>,
    pub mean_force: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForceChainGraph {
    pub nodes: Vec<usize>,
    pub edges: Vec<StrongEdge>,
    pub chains: Vec<ForceChain>,
    /// Mean normal force over all particle-particle contacts.
    pub mean_normal_force: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSummary {
    pub count: usize,
    pub mean_length: f64,
    pub max_length: usize,
    pub mean_force: f64,
    /// `(particles per chain, number of chains)`, ascending.
    pub length_histogram: Vec<(usize, usize)>,
}

impl ForceChainGraph {
    pub fn summary(&self) -> ChainSummary {
        let count = self.chains.len();
        let lengths: Vec<usize> = self.chains.iter().map(|c| c.particles.len()).collect();
        let max_length = lengths.iter().copied().max().unwrap_or(0);
        let mut length_histogram: Vec<(usize, usize)> = Vec::new();
        let mut sorted = lengths.clone();
        sorted.sort_unstable();
        for l in sorted {
            match length_histogram.last_mut() {
                Some((len, n)) if *len == l => *n += 1,
                _ => length_histogram.push((l, 1)),
            }
        }
        let (mean_length, mean_force) = if count == 0 {
            (0.0, 0.0)
        } else {
            (
                lengths.iter().sum::<usize>() as f64 / count as f64,
                self.chains.iter().map(|c| c.mean_force).sum::<f64>() / count as f64,
            )
        };
        ChainSummary {
            count,
            mean_length,
            max_length,
            mean_force,
            length_histogram,
        }
    }
}

/// Extracts force chains from a snapshot carrying contact forces.
///
/// Strong contacts carry a normal force of at least `force_factor` times the
/// mean over particle-particle contacts. Starting from the strongest
/// unassigned strong contact, a path is grown at both ends, each time along
/// the strongest unassigned strong contact whose branch vector turns by less
/// than `angle_limit_deg` from the previous one. Paths of at least three
/// particles are chains.
pub fn force_chains<T: Real>(
    s: &PackingSnapshot<T>,
    force_factor: f64,
    angle_limit_deg: f64,
) -> Result<ForceChainGraph, MetricsError> {
    if !s.has_forces() {
        return Err(MetricsError::RequiresForces);
    }
    if !(force_factor >= 0.0) || !(angle_limit_deg > 0.0 && angle_limit_deg <= 180.0) {
        return Err(MetricsError::InvalidParameter(format!(
            "force factor {force_factor} and angle limit {angle_limit_deg} out of range"
        )));
    }
    let index: HashMap<usize, usize> = s.particles.iter().enumerate().map(|(k, p)| (p.id, k)).collect();
    let pairs: Vec<(usize, usize, f64)> = s
        .contacts
        .iter()
        .filter_map(|c| match c.contact.partner {
            Partner::Particle(j) => Some((c.contact.id_i, j, to_f64(c.normal_force().unwrap_or_else(T::zero)))),
            Partner::Wall(_) => None,
        })
        .collect();
    if pairs.is_empty() {
        return Ok(ForceChainGraph {
            nodes: Vec::new(),
            edges: Vec::new(),
            chains: Vec::new(),
            mean_normal_force: 0.0,
        });
    }
    let mean = pairs.iter().map(|p| p.2).sum::<f64>() / pairs.len() as f64;
    let threshold = force_factor * mean;
    let mut edges: Vec<StrongEdge> = pairs
        .iter()
        .filter(|p| p.2 >= threshold)
        .map(|&(i, j, f)| StrongEdge {
            i,
            j,
            normal_force: f,
        })
        .collect();
    edges.sort_by(|a, b| (a.i, a.j).cmp(&(b.i, b.j)));
    let mut nodes: Vec<usize> = edges.iter().flat_map(|e| [e.i, e.j]).collect();
    nodes.sort_unstable();
    nodes.dedup();

    let mut incident: HashMap<usize, Vec<usize>> = HashMap::new();
    for (k, e) in edges.iter().enumerate() {
        incident.entry(e.i).or_default().push(k);
        incident.entry(e.j).or_default().push(k);
    }
    let position = |id: usize| -> Vector3<f64> { s.particles[index[&id]].position.map(to_f64) };
    let cos_limit = angle_limit_deg.to_radians().cos();
    let mut order: Vec<usize> = (0..edges.len()).collect();
    order.sort_by(|&a, &b| edges[b].normal_force.total_cmp(&edges[a].normal_force).then(a.cmp(&b)));
    let mut used = vec![false; edges.len()];
    let mut chains = Vec::new();

    for &seed in &order {
        if used[seed] {
            continue;
        }
        used[seed] = true;
        let mut path = vec![edges[seed].i, edges[seed].j];
        let mut forces = vec![edges[seed].normal_force];
        for forward in [true, false] {
            loop {
                let (end, prev) = if forward {
                    (path[path.len() - 1], path[path.len() - 2])
                } else {
                    (path[0], path[1])
                };
                let dir = position(end) - position(prev);
                let next = incident
                    .get(&end)
                    .into_iter()
                    .flatten()
                    .copied()
                    .filter(|&k| !used[k])
                    .filter_map(|k| {
                        let e = &edges[k];
                        let other = if e.i == end { e.j } else { e.i };
                        if path.contains(&other) {
                            return None;
                        }
                        let step = position(other) - position(end);
                        let cos = dir.dot(&step) / (dir.norm() * step.norm());
                        (cos > cos_limit).then_some((k, other))
                    })
                    .max_by(|a, b| edges[a.0].normal_force.total_cmp(&edges[b.0].normal_force).then(b.0.cmp(&a.0)));
                match next {
                    Some((k, other)) => {
                        used[k] = true;
                        forces.push(edges[k].normal_force);
                        if forward {
                            path.push(other);
                        } else {
                            path.insert(0, other);
                        }
                    }
                    None => break,
                }
            }
        }
        if path.len() >= 3 {
            chains.push(ForceChain {
                mean_force: forces.iter().sum::<f64>() / forces.len() as f64,
                particles: path,
            });
        }
    }
    Ok(ForceChainGraph {
        nodes,
        edges,
        chains,
        mean_normal_force: mean,
    })
}
