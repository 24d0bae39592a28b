use crate::graph_builder::ClassGraph;

use super::flow::{plogp, visit_rates};
use super::{InfomapError, Partition};

pub const BRUTE_FORCE_MAX_NODES: usize = 12;

/// Codelengths closer than this are treated as equal when picking the optimum.
const TIE_EPS: f64 = 1e-12;

/// Visits every set partition of `0..n` as a restricted growth string
/// (`a[0] = 0`, `a[i] <= 1 + max(a[..i])`), in lexicographic order.
pub fn for_each_set_partition(n: usize, mut visit: impl FnMut(&[usize], usize)) {
    if n == 0 {
        visit(&[], 0);
        return;
    }
    let mut a = vec![0usize; n];
    // prefix_max[i] = max(a[..=i])
    let mut prefix_max = vec![0usize; n];
    loop {
        visit(&a, prefix_max[n - 1] + 1);
        // rightmost position that can still be incremented
        let mut i = n - 1;
        while i > 0 && a[i] > prefix_max[i - 1] {
            i -= 1;
        }
        if i == 0 {
            return;
        }
        a[i] += 1;
        prefix_max[i] = prefix_max[i - 1].max(a[i]);
        for j in i + 1..n {
            a[j] = 0;
            prefix_max[j] = prefix_max[j - 1];
        }
    }
}

/// Exhaustive minimum of the map equation over all set partitions.
///
/// Ties within `1e-12` bits go to fewer modules, then to the lexicographically
/// smallest assignment.
pub fn brute_force_optimum(graph: &ClassGraph) -> Result<Partition, InfomapError> {
    let n = graph.node_count();
    if n > BRUTE_FORCE_MAX_NODES {
        return Err(InfomapError::TooLarge { nodes: n, max: BRUTE_FORCE_MAX_NODES });
    }
    if n == 0 {
        return Err(InfomapError::EmptyGraph);
    }
    let p = visit_rates(graph);
    let node_term: f64 = p.iter().map(|&x| plogp(x)).sum();
    let w = graph.total_weight();
    let edge_flow: Vec<(usize, usize, f64)> = if w > 0.0 {
        graph.edges().iter().map(|e| (e.u, e.v, e.weight / (2.0 * w))).collect()
    } else {
        Vec::new()
    };

    let mut exit = vec![0.0; n];
    let mut flow = vec![0.0; n];
    let mut best: Option<(f64, usize, Vec<usize>)> = None;
    for_each_set_partition(n, |a, m| {
        let length = if m == 1 {
            -node_term
        } else {
            exit[..m].fill(0.0);
            flow[..m].fill(0.0);
            for &(u, v, f) in &edge_flow {
                if a[u] != a[v] {
                    exit[a[u]] += f;
                    exit[a[v]] += f;
                }
            }
            for (node, &module) in a.iter().enumerate() {
                flow[module] += p[node];
            }
            let total: f64 = exit[..m].iter().sum();
            let mut l = plogp(total) - node_term;
            for i in 0..m {
                l += plogp(exit[i] + flow[i]) - 2.0 * plogp(exit[i]);
            }
            l.max(0.0)
        };
        let better = match &best {
            None => true,
            Some((bl, bm, _)) => length < bl - TIE_EPS || ((length - bl).abs() <= TIE_EPS && m < *bm),
        };
        if better {
            best = Some((length, m, a.to_vec()));
        }
    });
    let (codelength, _, assignment) = best.expect("at least one partition");
    Ok(Partition { assignment, codelength })
}
