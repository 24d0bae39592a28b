//! Two-level map equation and its minimization.

mod brute_force;
mod flow;
mod optimizer;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph_builder::ClassGraph;

pub use brute_force::{brute_force_optimum, for_each_set_partition, BRUTE_FORCE_MAX_NODES};
pub use flow::{map_equation, module_count, plogp, visit_rates, FlowModel};
pub use optimizer::{
    detect_communities, detect_communities_traced, DetectOptions, Detection, DEFAULT_MAX_SWEEPS, DEFAULT_TRIALS,
    MIN_IMPROVEMENT,
};

#[derive(Debug, Error)]
pub enum InfomapError {
    #[error("invalid assignment: {0}")]
    Assignment(String),
    #[error("graph has no nodes")]
    EmptyGraph,
    #[error("brute force refused: {nodes} nodes exceeds the limit of {max}")]
    TooLarge { nodes: usize, max: usize },
}

/// Module per node (ids `0..m`, contiguous) and its codelength in bits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub assignment: Vec<usize>,
    pub codelength: f64,
}

impl Partition {
    /// Relabels modules by first appearance and evaluates the codelength.
    pub fn from_assignment(graph: &ClassGraph, assignment: Vec<usize>) -> Self {
        let assignment = compact(&assignment);
        let codelength = map_equation(graph, &assignment).expect("compacted assignment is contiguous");
        Self { assignment, codelength }
    }

    pub fn module_count(&self) -> usize {
        self.assignment.iter().max().map_or(0, |m| m + 1)
    }

    pub fn members(&self, module: usize) -> Vec<usize> {
        (0..self.assignment.len()).filter(|&i| self.assignment[i] == module).collect()
    }
}

/// Renumbers module ids `0..m` in order of first appearance.
pub fn compact(assignment: &[usize]) -> Vec<usize> {
    let mut map = std::collections::HashMap::new();
    assignment
        .iter()
        .map(|m| {
            let next = map.len();
            *map.entry(*m).or_insert(next)
        })
        .collect()
}
