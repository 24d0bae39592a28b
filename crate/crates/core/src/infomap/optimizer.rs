//! Greedy map-equation minimization: local node moves, aggregation of modules
//! into super-nodes, then repeated fine-tuning from the leaf level.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::graph_builder::{ClassGraph, Edge};

use super::flow::{map_equation, plogp, visit_rates};
use super::{compact, InfomapError, Partition};

/// A move must shorten the codelength by more than this many bits.
pub const MIN_IMPROVEMENT: f64 = 1e-10;
/// Candidate gains this close are ties; the lowest module index wins.
const TIE_EPS: f64 = 1e-12;
pub const DEFAULT_MAX_SWEEPS: usize = 100;
pub const DEFAULT_TRIALS: usize = 16;
const MAX_TUNE_ROUNDS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectOptions {
    pub seed: u64,
    /// Cap on node-move sweeps per optimization level.
    pub max_sweeps: usize,
    /// Independent restarts; the shortest codelength wins. Trial 0 starts
    /// from singletons, later trials from random coarse partitions.
    pub trials: usize,
}

impl DetectOptions {
    pub fn new(seed: u64, max_sweeps: usize) -> Self {
        Self { seed, max_sweeps, trials: DEFAULT_TRIALS }
    }
}

impl Default for DetectOptions {
    fn default() -> Self {
        Self::new(0, DEFAULT_MAX_SWEEPS)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub partition: Partition,
    /// Codelength with every node in one module.
    pub one_level_codelength: f64,
    /// Node-move sweeps over all trials, levels and tuning rounds.
    pub sweeps: usize,
    /// Index of the trial that produced the partition.
    pub best_trial: usize,
    /// For the winning trial: its starting codelength followed by the running
    /// codelength after each accepted move.
    pub trace: Vec<f64>,
}

impl Detection {
    pub fn module_count(&self) -> usize {
        self.partition.module_count()
    }
}

/// One level of the optimization: leaf nodes or aggregated modules.
#[derive(Debug, Clone)]
struct Level {
    flow: Vec<f64>,
    /// Flow from a node to all other nodes of this level.
    exit: Vec<f64>,
    /// Per-direction flow to each neighbour, excluding self-loops.
    adj: Vec<Vec<(usize, f64)>>,
    /// Leaf nodes each level node stands for.
    members: Vec<Vec<usize>>,
}

impl Level {
    fn leaves(graph: &ClassGraph) -> Self {
        let n = graph.node_count();
        let flow = visit_rates(graph);
        let w = graph.total_weight();
        let adj: Vec<Vec<(usize, f64)>> = (0..n)
            .map(|u| {
                if w > 0.0 {
                    graph.neighbors(u).iter().map(|&(v, wt)| (v, wt / (2.0 * w))).collect()
                } else {
                    Vec::new()
                }
            })
            .collect();
        let exit = adj.iter().map(|a| a.iter().map(|&(_, f)| f).sum()).collect();
        Self { flow, exit, adj, members: (0..n).map(|i| vec![i]).collect() }
    }

    fn len(&self) -> usize {
        self.flow.len()
    }

    /// Collapses each non-empty module into one node, in ascending module order.
    fn aggregate(&self, module: &[usize]) -> Level {
        let mut index = vec![usize::MAX; self.len()];
        let mut next = 0;
        let mut ids: Vec<usize> = module.to_vec();
        ids.sort_unstable();
        ids.dedup();
        for m in ids {
            index[m] = next;
            next += 1;
        }
        let mut flow = vec![0.0; next];
        let mut members = vec![Vec::new(); next];
        let mut links: Vec<Vec<(usize, f64)>> = vec![Vec::new(); next];
        for u in 0..self.len() {
            let a = index[module[u]];
            flow[a] += self.flow[u];
            members[a].extend_from_slice(&self.members[u]);
            for &(v, f) in &self.adj[u] {
                let b = index[module[v]];
                if a != b {
                    links[a].push((b, f));
                }
            }
        }
        let adj: Vec<Vec<(usize, f64)>> = links
            .into_iter()
            .map(|mut l| {
                l.sort_by_key(|&(b, _)| b);
                let mut merged: Vec<(usize, f64)> = Vec::with_capacity(l.len());
                for (b, f) in l {
                    match merged.last_mut() {
                        Some((last, acc)) if *last == b => *acc += f,
                        _ => merged.push((b, f)),
                    }
                }
                merged
            })
            .collect();
        let exit = adj.iter().map(|a| a.iter().map(|&(_, f)| f).sum()).collect();
        for m in &mut members {
            m.sort_unstable();
        }
        Level { flow, exit, adj, members }
    }
}

/// Per-module exit and flow sums with the codelength terms they feed.
struct ModuleState {
    module: Vec<usize>,
    size: Vec<usize>,
    exit: Vec<f64>,
    flow: Vec<f64>,
    /// Module ids with no members.
    empty: Vec<usize>,
    total_exit: f64,
    node_term: f64,
    codelength: f64,
}

impl ModuleState {
    fn new(level: &Level, module: Vec<usize>, node_term: f64) -> Self {
        let n = level.len();
        let mut size = vec![0; n];
        let mut exit = vec![0.0; n];
        let mut flow = vec![0.0; n];
        for u in 0..n {
            let m = module[u];
            size[m] += 1;
            flow[m] += level.flow[u];
            for &(v, f) in &level.adj[u] {
                if module[v] != m {
                    exit[m] += f;
                }
            }
        }
        let empty = (0..n).rev().filter(|&m| size[m] == 0).collect();
        let mut s = Self { module, size, exit, flow, empty, total_exit: 0.0, node_term, codelength: 0.0 };
        s.refresh();
        s
    }

    /// Recomputes the cached sums from the per-module vectors.
    fn refresh(&mut self) {
        self.total_exit = self.exit.iter().sum();
        self.codelength = self.recompute();
    }

    fn recompute(&self) -> f64 {
        let mut l = plogp(self.total_exit) - self.node_term;
        for (q, p) in self.exit.iter().zip(&self.flow) {
            l += plogp(q + p) - 2.0 * plogp(*q);
        }
        l
    }

    /// Codelength change from moving a node with flow `p` and exit `e` from `old`
    /// to `new`, where `f_old` / `f_new` is its flow to the rest of each module.
    fn delta(&self, old: usize, new: usize, p: f64, e: f64, f_old: f64, f_new: f64) -> f64 {
        let (q_old, q_new) = (self.exit[old], self.exit[new]);
        let q_old2 = (q_old - e + 2.0 * f_old).max(0.0);
        let q_new2 = (q_new + e - 2.0 * f_new).max(0.0);
        let total = self.total_exit;
        let total2 = total - q_old - q_new + q_old2 + q_new2;
        let p_old = self.flow[old];
        let p_new = self.flow[new];
        plogp(total2) - plogp(total) - 2.0 * (plogp(q_old2) + plogp(q_new2) - plogp(q_old) - plogp(q_new))
            + plogp(q_old2 + p_old - p)
            + plogp(q_new2 + p_new + p)
            - plogp(q_old + p_old)
            - plogp(q_new + p_new)
    }

    fn apply(&mut self, node: usize, new: usize, p: f64, e: f64, f_old: f64, f_new: f64) {
        let old = self.module[node];
        let (q_old, q_new) = (self.exit[old], self.exit[new]);
        self.exit[old] = (q_old - e + 2.0 * f_old).max(0.0);
        self.exit[new] = (q_new + e - 2.0 * f_new).max(0.0);
        self.total_exit += self.exit[old] + self.exit[new] - q_old - q_new;
        self.flow[old] -= p;
        self.flow[new] += p;
        if self.size[new] == 0 {
            if let Some(i) = self.empty.iter().position(|&m| m == new) {
                self.empty.swap_remove(i);
            }
        }
        self.size[old] -= 1;
        self.size[new] += 1;
        if self.size[old] == 0 {
            self.empty.push(old);
        }
        self.module[node] = new;
    }
}

struct Optimizer<'g> {
    graph: &'g ClassGraph,
    leaves: Level,
    node_term: f64,
    rng: ChaCha8Rng,
    max_sweeps: usize,
    sweeps: usize,
    trace: Vec<f64>,
}

impl<'g> Optimizer<'g> {
    fn new(graph: &'g ClassGraph, options: &DetectOptions) -> Self {
        let leaves = Level::leaves(graph);
        let node_term = leaves.flow.iter().map(|&p| plogp(p)).sum();
        Self {
            graph,
            leaves,
            node_term,
            rng: ChaCha8Rng::seed_from_u64(options.seed),
            max_sweeps: options.max_sweeps.max(1),
            sweeps: 0,
            trace: Vec::new(),
        }
    }

    /// Sweeps of single-node moves until a sweep moves nothing. Returns the move count.
    fn move_nodes(&mut self, level: &Level, state: &mut ModuleState) -> usize {
        let n = level.len();
        let mut order: Vec<usize> = (0..n).collect();
        let mut to_module = vec![0.0; n];
        let mut seen = vec![false; n];
        let mut touched: Vec<usize> = Vec::new();
        let mut total_moves = 0;
        for _ in 0..self.max_sweeps {
            order.shuffle(&mut self.rng);
            self.sweeps += 1;
            let mut moves = 0;
            for &u in &order {
                let old = state.module[u];
                touched.clear();
                for &(v, f) in &level.adj[u] {
                    let m = state.module[v];
                    if !seen[m] {
                        seen[m] = true;
                        touched.push(m);
                    }
                    to_module[m] += f;
                }
                let f_old = to_module[old];
                touched.sort_unstable();
                let (p, e) = (level.flow[u], level.exit[u]);

                let mut best: Option<(usize, f64, f64)> = None;
                let mut best_delta = f64::INFINITY;
                for &m in &touched {
                    if m == old {
                        continue;
                    }
                    let d = state.delta(old, m, p, e, f_old, to_module[m]);
                    if d < best_delta - TIE_EPS {
                        best_delta = d;
                        best = Some((m, d, to_module[m]));
                    }
                }
                // splitting off into a fresh module
                if state.size[old] > 1 {
                    if let Some(&m) = state.empty.last() {
                        let d = state.delta(old, m, p, e, f_old, 0.0);
                        if d < best_delta - TIE_EPS {
                            best = Some((m, d, 0.0));
                        }
                    }
                }
                for &m in &touched {
                    to_module[m] = 0.0;
                    seen[m] = false;
                }
                if let Some((m, d, f_new)) = best {
                    if d < -MIN_IMPROVEMENT {
                        state.apply(u, m, p, e, f_old, f_new);
                        state.codelength += d;
                        self.trace.push(state.codelength);
                        moves += 1;
                    }
                }
            }
            total_moves += moves;
            // drift from incremental updates is far below MIN_IMPROVEMENT
            state.refresh();
            if moves == 0 {
                break;
            }
        }
        total_moves
    }

    /// Runs move/aggregate rounds from `initial`, a module per node of `level`.
    /// Each round moves nodes, then collapses modules into super-nodes; it
    /// stops once no module holds more than one node of the current level.
    /// Returns the module of every leaf.
    fn optimize_level(&mut self, mut level: Level, initial: Vec<usize>) -> Vec<usize> {
        let mut state = ModuleState::new(&level, initial, self.node_term);
        loop {
            self.move_nodes(&level, &mut state);
            let next = level.aggregate(&state.module);
            if next.len() == level.len() {
                break;
            }
            level = next;
            state = ModuleState::new(&level, (0..level.len()).collect(), self.node_term);
        }
        let mut leaf_module = vec![0; self.leaves.len()];
        for (u, members) in level.members.iter().enumerate() {
            for &leaf in members {
                leaf_module[leaf] = state.module[u];
            }
        }
        leaf_module
    }

    /// Leaf-level moves starting from the current modules.
    fn fine_tune(&mut self, current: &[usize]) -> Vec<usize> {
        self.optimize_level(self.leaves.clone(), current.to_vec())
    }

    /// Splits every module into sub-modules found on its own subgraph, then
    /// moves whole sub-modules between the current modules.
    fn coarse_tune(&mut self, current: &[usize]) -> Vec<usize> {
        let n = self.leaves.len();
        let modules = current.iter().max().map_or(0, |m| m + 1);
        let mut sub = vec![0; n];
        let mut next_id = 0;
        for m in 0..modules {
            let members: Vec<usize> = (0..n).filter(|&u| current[u] == m).collect();
            if members.len() < 3 {
                for &u in &members {
                    sub[u] = next_id;
                    next_id += 1;
                }
                continue;
            }
            let mut local = vec![usize::MAX; n];
            for (i, &u) in members.iter().enumerate() {
                local[u] = i;
            }
            let edges: Vec<Edge> = self
                .graph
                .edges()
                .iter()
                .filter(|e| local[e.u] != usize::MAX && local[e.v] != usize::MAX)
                .map(|e| Edge { u: local[e.u], v: local[e.v], weight: e.weight })
                .collect();
            let ids = members.iter().map(|&u| self.graph.node_ids()[u].clone()).collect();
            let subgraph = ClassGraph::new(self.graph.class_label(), ids, edges).expect("induced subgraph is valid");
            let seed = self.rng.random::<u64>();
            let inner = Optimizer::new(&subgraph, &DetectOptions { seed, max_sweeps: self.max_sweeps, trials: 1 });
            let (assignment, sweeps) = inner.core();
            self.sweeps += sweeps;
            let count = assignment.iter().max().map_or(0, |m| m + 1);
            for (i, &u) in members.iter().enumerate() {
                sub[u] = next_id + assignment[i];
            }
            next_id += count;
        }
        let level = self.leaves.aggregate(&sub);
        let initial = level.members.iter().map(|m| current[m[0]]).collect();
        self.optimize_level(level, initial)
    }

    /// Move/aggregate from singletons, without tuning.
    fn core(mut self) -> (Vec<usize>, usize) {
        let singletons = (0..self.leaves.len()).collect();
        let assignment = self.optimize_level(self.leaves.clone(), singletons);
        (compact(&assignment), self.sweeps)
    }

    /// One trial: move/aggregate from `initial`, then alternate fine and
    /// coarse tuning until neither improves.
    fn trial(&mut self, initial: Vec<usize>) -> Partition {
        let start = map_equation(self.graph, &compact(&initial)).expect("initial assignment is valid");
        self.trace.push(start);
        let first = self.optimize_level(self.leaves.clone(), initial);
        let mut best = Partition::from_assignment(self.graph, first);
        for _ in 0..MAX_TUNE_ROUNDS {
            let mut improved = false;
            for coarse in [false, true] {
                let mark = self.trace.len();
                let tuned = if coarse { self.coarse_tune(&best.assignment) } else { self.fine_tune(&best.assignment) };
                let candidate = Partition::from_assignment(self.graph, tuned);
                if candidate.codelength < best.codelength - MIN_IMPROVEMENT {
                    best = candidate;
                    improved = true;
                } else {
                    self.trace.truncate(mark);
                }
            }
            if !improved {
                break;
            }
        }
        best
    }

    fn run(mut self, trials: usize) -> Detection {
        let n = self.leaves.len();
        let mut best: Option<(Partition, usize, Vec<f64>)> = None;
        for t in 0..trials.max(1) {
            let initial: Vec<usize> = if t == 0 {
                (0..n).collect()
            } else {
                let k = 2 + (t - 1) % 3;
                (0..n).map(|_| self.rng.random_range(0..k.min(n))).collect()
            };
            self.trace = Vec::new();
            let found = self.trial(initial);
            let trace = std::mem::take(&mut self.trace);
            let better = match &best {
                None => true,
                Some((b, _, _)) => found.codelength < b.codelength - MIN_IMPROVEMENT,
            };
            if better {
                best = Some((found, t, trace));
            }
        }
        let (mut partition, best_trial, trace) = best.expect("at least one trial");
        let one_level = map_equation(self.graph, &vec![0; n]).expect("one-module assignment is valid");
        let mut trace = trace;
        if one_level <= partition.codelength {
            partition = Partition { assignment: vec![0; n], codelength: one_level };
            if trace.last().is_some_and(|&l| one_level < l) {
                trace.push(one_level);
            }
        }
        Detection { partition, one_level_codelength: one_level, sweeps: self.sweeps, best_trial, trace }
    }
}

/// Minimizes the two-level map equation. Deterministic for a given seed.
pub fn detect_communities(graph: &ClassGraph, seed: u64, max_sweeps: usize) -> Result<Partition, InfomapError> {
    Ok(detect_communities_traced(graph, &DetectOptions::new(seed, max_sweeps))?.partition)
}

pub fn detect_communities_traced(graph: &ClassGraph, options: &DetectOptions) -> Result<Detection, InfomapError> {
    if graph.node_count() == 0 {
        return Err(InfomapError::EmptyGraph);
    }
    Ok(Optimizer::new(graph, options).run(options.trials))
}
