//! Modular centrality: each node's strength split into the part that stays
//! inside its community (local) and the part that leaves it (global).

use serde::{Deserialize, Serialize};

use crate::graph_builder::ClassGraph;
use crate::infomap::{module_count, InfomapError, Partition};

/// Tag recorded in outputs so results can be attributed to this scheme.
pub const CENTRALITY_SCHEME: &str = "strength-modulus";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeCentrality {
    pub local: f64,
    pub global: f64,
    /// `sqrt(local_hat^2 + global_hat^2)` with both parts divided by their graph-wide maxima.
    pub combined: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CentralityTable {
    pub nodes: Vec<NodeCentrality>,
}

impl CentralityTable {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn get(&self, node: usize) -> &NodeCentrality {
        &self.nodes[node]
    }

    pub fn combined(&self) -> Vec<f64> {
        self.nodes.iter().map(|c| c.combined).collect()
    }
}

/// Splits `strength` into `(local, global)` with `local + global == strength`
/// exactly; `global` is the float nearest `strength - local` satisfying that.
fn split_strength(strength: f64, local: f64) -> (f64, f64) {
    if local >= strength {
        return (strength, 0.0);
    }
    let mut global = strength - local;
    while local + global > strength {
        global = global.next_down();
    }
    while local + global < strength {
        global = global.next_up();
    }
    (local, global)
}

fn normalized(x: f64, max: f64) -> f64 {
    if max > 0.0 {
        x / max
    } else {
        0.0
    }
}

pub fn modular_centrality(graph: &ClassGraph, partition: &Partition) -> Result<CentralityTable, InfomapError> {
    let assignment = &partition.assignment;
    module_count(assignment, graph.node_count())?;
    let mut parts: Vec<(f64, f64)> = Vec::with_capacity(graph.node_count());
    for u in 0..graph.node_count() {
        let local: f64 = graph.neighbors(u).iter().filter(|&&(v, _)| assignment[v] == assignment[u]).map(|&(_, w)| w).sum();
        parts.push(split_strength(graph.strength(u), local));
    }
    let max_local = parts.iter().map(|p| p.0).fold(0.0, f64::max);
    let max_global = parts.iter().map(|p| p.1).fold(0.0, f64::max);
    let nodes = parts
        .into_iter()
        .map(|(local, global)| {
            let (l, g) = (normalized(local, max_local), normalized(global, max_global));
            NodeCentrality { local, global, combined: l.hypot(g) }
        })
        .collect();
    Ok(CentralityTable { nodes })
}
