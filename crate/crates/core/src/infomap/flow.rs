use crate::graph_builder::ClassGraph;

use super::InfomapError;

/// `x * log2(x)`, with `0 log 0 = 0`.
#[inline]
pub fn plogp(x: f64) -> f64 {
    if x > 0.0 {
        x * x.log2()
    } else {
        0.0
    }
}

/// Stationary visit rates of an undirected random walk: `p_a = s_a / 2W`.
/// A graph without edges gets uniform rates.
pub fn visit_rates(graph: &ClassGraph) -> Vec<f64> {
    let n = graph.node_count();
    let w = graph.total_weight();
    if w > 0.0 {
        graph.strengths().into_iter().map(|s| s / (2.0 * w)).collect()
    } else {
        vec![1.0 / n as f64; n]
    }
}

/// Checks that `assignment` covers the graph and uses module ids `0..m` without gaps.
/// Returns `m`.
pub fn module_count(assignment: &[usize], nodes: usize) -> Result<usize, InfomapError> {
    if assignment.len() != nodes {
        return Err(InfomapError::Assignment(format!(
            "assignment covers {} nodes, graph has {nodes}",
            assignment.len()
        )));
    }
    let Some(&max) = assignment.iter().max() else {
        return Ok(0);
    };
    let mut used = vec![false; max + 1];
    for &m in assignment {
        used[m] = true;
    }
    if let Some(empty) = used.iter().position(|u| !u) {
        return Err(InfomapError::Assignment(format!("module {empty} is empty; module ids must be contiguous")));
    }
    Ok(max + 1)
}

/// Random-walk flow summarized per module.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowModel {
    /// `p_a` per node.
    pub visit_rate: Vec<f64>,
    /// `q_i` per module.
    pub exit_rate: Vec<f64>,
    /// `q = sum q_i`.
    pub total_exit: f64,
    /// `p_i = q_i + sum_{a in i} p_a` per module.
    pub module_flow: Vec<f64>,
}

impl FlowModel {
    pub fn new(graph: &ClassGraph, assignment: &[usize]) -> Result<Self, InfomapError> {
        let m = module_count(assignment, graph.node_count())?;
        let visit_rate = visit_rates(graph);
        let w = graph.total_weight();
        let mut exit_rate = vec![0.0; m];
        if w > 0.0 {
            for e in graph.edges() {
                let (a, b) = (assignment[e.u], assignment[e.v]);
                if a != b {
                    let f = e.weight / (2.0 * w);
                    exit_rate[a] += f;
                    exit_rate[b] += f;
                }
            }
        }
        let mut module_flow = exit_rate.clone();
        for (node, &module) in assignment.iter().enumerate() {
            module_flow[module] += visit_rate[node];
        }
        let total_exit = exit_rate.iter().sum();
        Ok(Self { visit_rate, exit_rate, total_exit, module_flow })
    }

    pub fn module_count(&self) -> usize {
        self.exit_rate.len()
    }

    /// Entropy of the visit rates, the one-module codelength.
    pub fn node_entropy(&self) -> f64 {
        -self.visit_rate.iter().map(|&p| plogp(p)).sum::<f64>()
    }

    /// Two-level map equation in bits per step:
    /// `plogp(q) - 2 sum plogp(q_i) - sum plogp(p_a) + sum plogp(p_i)`.
    pub fn codelength(&self) -> f64 {
        if self.module_count() == 1 {
            return self.node_entropy();
        }
        let exits: f64 = self.exit_rate.iter().map(|&q| plogp(q)).sum();
        let modules: f64 = self.module_flow.iter().map(|&p| plogp(p)).sum();
        let nodes: f64 = self.visit_rate.iter().map(|&p| plogp(p)).sum();
        (plogp(self.total_exit) - 2.0 * exits - nodes + modules).max(0.0)
    }
}

/// Codelength of `assignment` on `graph`.
pub fn map_equation(graph: &ClassGraph, assignment: &[usize]) -> Result<f64, InfomapError> {
    Ok(FlowModel::new(graph, assignment)?.codelength())
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;

    /// Literal `q H(Q) + sum p_i H(P_i)`, written independently of `codelength`.
    fn direct(graph: &ClassGraph, assignment: &[usize]) -> f64 {
        let w = graph.total_weight();
        let p: Vec<f64> = graph.strengths().iter().map(|s| s / (2.0 * w)).collect();
        let m = assignment.iter().max().unwrap() + 1;
        let mut q = vec![0.0; m];
        for e in graph.edges() {
            if assignment[e.u] != assignment[e.v] {
                q[assignment[e.u]] += e.weight / (2.0 * w);
                q[assignment[e.v]] += e.weight / (2.0 * w);
            }
        }
        let big_q: f64 = q.iter().sum();
        let mut total = 0.0;
        if big_q > 0.0 {
            let h: f64 = q.iter().filter(|&&x| x > 0.0).map(|&x| -(x / big_q) * (x / big_q).log2()).sum();
            total += big_q * h;
        }
        for i in 0..m {
            let inside: Vec<f64> = (0..p.len()).filter(|&a| assignment[a] == i).map(|a| p[a]).collect();
            let pi = q[i] + inside.iter().sum::<f64>();
            let mut h = 0.0;
            if q[i] > 0.0 {
                h -= (q[i] / pi) * (q[i] / pi).log2();
            }
            for &pa in &inside {
                if pa > 0.0 {
                    h -= (pa / pi) * (pa / pi).log2();
                }
            }
            total += pi * h;
        }
        total
    }

    fn barbell() -> ClassGraph {
        ClassGraph::from_edges(
            6,
            &[(0, 1, 1.0), (1, 2, 1.0), (0, 2, 1.0), (3, 4, 1.0), (4, 5, 1.0), (3, 5, 1.0), (2, 3, 1.0)],
        )
        .unwrap()
    }

    #[test]
    fn four_cycle_is_two_bits() {
        let g = ClassGraph::from_edges(4, &[(0, 1, 1.0), (1, 2, 1.0), (2, 3, 1.0), (3, 0, 1.0)]).unwrap();
        assert_eq!(map_equation(&g, &[0, 0, 0, 0]).unwrap(), 2.0);
    }

    #[test]
    fn single_edge_is_one_bit() {
        let g = ClassGraph::from_edges(2, &[(0, 1, 3.5)]).unwrap();
        assert_eq!(map_equation(&g, &[0, 0]).unwrap(), 1.0);
    }

    #[test]
    fn barbell_values() {
        let g = barbell();
        let two = map_equation(&g, &[0, 0, 0, 1, 1, 1]).unwrap();
        let one = map_equation(&g, &[0; 6]).unwrap();
        // frozen from the direct formula; see `agrees_with_direct_formula`
        assert!((two - 2.320_730_356_833_79).abs() < 1e-12, "{two}");
        assert!((one - 2.556_656_707_462_823).abs() < 1e-12, "{one}");
        assert!(two < one);
    }

    #[test]
    fn agrees_with_direct_formula() {
        let g = barbell();
        for a in [[0, 0, 0, 1, 1, 1], [0, 1, 2, 3, 4, 5], [0, 0, 1, 1, 2, 2], [0, 1, 0, 1, 0, 1]] {
            let got = map_equation(&g, &a).unwrap();
            assert!((got - direct(&g, &a)).abs() < 1e-12, "{a:?}");
        }
    }

    #[test]
    fn flow_invariants() {
        let g = barbell();
        let f = FlowModel::new(&g, &[0, 0, 0, 1, 1, 1]).unwrap();
        assert!((f.visit_rate.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(f.exit_rate, vec![1.0 / 14.0, 1.0 / 14.0]);
        assert!((f.total_exit - 1.0 / 7.0).abs() < 1e-15);
        for i in 0..2 {
            assert!((f.module_flow[i] - 8.0 / 14.0).abs() < 1e-15);
        }
    }

    #[test]
    fn gaps_in_module_ids_rejected() {
        let g = barbell();
        assert!(matches!(map_equation(&g, &[0, 0, 0, 2, 2, 2]), Err(InfomapError::Assignment(_))));
        assert!(matches!(map_equation(&g, &[0, 0, 0]), Err(InfomapError::Assignment(_))));
    }

    #[test]
    fn edgeless_graph() {
        let g = ClassGraph::from_edges(4, &[]).unwrap();
        assert_eq!(map_equation(&g, &[0, 0, 0, 0]).unwrap(), 2.0);
        assert_eq!(map_equation(&g, &[0, 1, 2, 3]).unwrap(), 0.0);
    }
}
