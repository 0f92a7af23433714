//! Log-domain weight-sum dynamic programming over supported task-graph
//! shapes, plus exact node/edge marginals and the exhaustive oracle.
//!
//! The learner's entire state is a pair of cumulative estimate tables
//! ([`CumulativeEstimates`]): one value per (task, device) and one per
//! (edge, device pair). An assignment's weight is
//! `exp(alpha * (sum of its node entries + sum of its edge entries))`, so the
//! weight of the whole assignment space factorizes over the graph and sums of
//! weights can be folded bottom-up: for each task and device, the sub-problem
//! value is the weight sum over all assignments of that task's descendants,
//! given the task's own device. Serial trees are combined through the device
//! of the previous tree root, and parallel chains multiply at the shared
//! final root.
//!
//! Everything runs in log space with max-shifted accumulation; probabilities
//! come out of ratios, so the shift never surfaces. Conditioning ("what is
//! the sum over assignments with task i pinned to device j?") is implemented
//! by masking: a pinned task contributes `-inf` at every other device. One
//! code path serves unconditioned sums, node marginals, edge marginals, and
//! prefix-conditioned sampling. The same traversal with (max, +) in place of
//! (log-sum-exp, +) yields the best fixed assignment for the offline genie.

use crate::graph::{
    bfs_reverse_order, classify_subset, validate_and_classify, StructureClass, SubsetClass,
    TaskGraph,
};
use crate::logsumexp::log_sum_exp;
use std::collections::BTreeMap;
use thiserror::Error;

/// Cap on explicit arm enumeration (`M^N`), for the oracle and naive paths.
pub const MAX_ENUMERATED_ARMS: u64 = 1_000_000;

#[derive(Debug, Error, PartialEq)]
pub enum DpError {
    #[error("graph is not a tree")]
    NotATree,
    #[error("graph is not a chain of serial trees")]
    NotSerialTrees,
    #[error("graph shape is not supported by the dynamic program")]
    UnsupportedStructure,
    #[error("task {task} is already fixed to device {existing}, cannot fix to {requested}")]
    FixConflict { task: usize, existing: usize, requested: usize },
    #[error("fix refers to task {task} or device {device} out of range")]
    BadFix { task: usize, device: usize },
    #[error("arm space M^N exceeds the enumeration cap of {MAX_ENUMERATED_ARMS}")]
    TooLarge,
    #[error("edge ({0}, {1}) not in graph")]
    UnknownEdge(usize, usize),
}

/// Running importance-weighted sums: one per (task, device) and one per
/// (edge, device pair). Storage is exactly `N*M + |E|*M^2` numbers.
///
/// The same layout doubles as a plain reward-sum table for the offline
/// optimum (node/edge rewards summed over frames).
#[derive(Debug, Clone, PartialEq)]
pub struct CumulativeEstimates {
    n_tasks: usize,
    n_edges: usize,
    m_devices: usize,
    node_sums: Vec<f64>,
    edge_sums: Vec<f64>,
}

impl CumulativeEstimates {
    pub fn zeros(n_tasks: usize, n_edges: usize, m_devices: usize) -> Self {
        CumulativeEstimates {
            n_tasks,
            n_edges,
            m_devices,
            node_sums: vec![0.0; n_tasks * m_devices],
            edge_sums: vec![0.0; n_edges * m_devices * m_devices],
        }
    }

    pub fn for_graph(graph: &TaskGraph, m_devices: usize) -> Self {
        Self::zeros(graph.n_tasks(), graph.n_edges(), m_devices)
    }

    pub fn n_tasks(&self) -> usize {
        self.n_tasks
    }

    pub fn n_edges(&self) -> usize {
        self.n_edges
    }

    pub fn m_devices(&self) -> usize {
        self.m_devices
    }

    #[inline]
    pub fn node(&self, task: usize, device: usize) -> f64 {
        self.node_sums[task * self.m_devices + device]
    }

    #[inline]
    pub fn edge(&self, edge: usize, from_device: usize, to_device: usize) -> f64 {
        self.edge_sums[(edge * self.m_devices + from_device) * self.m_devices + to_device]
    }

    pub fn add_node(&mut self, task: usize, device: usize, delta: f64) {
        self.node_sums[task * self.m_devices + device] += delta;
    }

    pub fn add_edge(&mut self, edge: usize, from_device: usize, to_device: usize, delta: f64) {
        self.edge_sums[(edge * self.m_devices + from_device) * self.m_devices + to_device] +=
            delta;
    }

    pub fn node_sums(&self) -> &[f64] {
        &self.node_sums
    }

    pub fn edge_sums(&self) -> &[f64] {
        &self.edge_sums
    }

    pub fn set_node(&mut self, task: usize, device: usize, value: f64) {
        self.node_sums[task * self.m_devices + device] = value;
    }

    pub fn set_edge(&mut self, edge: usize, from_device: usize, to_device: usize, value: f64) {
        self.edge_sums[(edge * self.m_devices + from_device) * self.m_devices + to_device] =
            value;
    }
}

/// A partial assignment pinning some tasks to devices.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConditionalFix {
    fixed: BTreeMap<usize, usize>,
}

impl ConditionalFix {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn from_pairs(pairs: &[(usize, usize)]) -> Result<Self, DpError> {
        let mut fix = Self::default();
        for &(task, device) in pairs {
            fix.pin(task, device)?;
        }
        Ok(fix)
    }

    /// Pins `task` to `device`. Pinning the same pair twice is fine;
    /// pinning a task to two different devices is a conflict.
    pub fn pin(&mut self, task: usize, device: usize) -> Result<(), DpError> {
        match self.fixed.get(&task) {
            Some(&existing) if existing != device => {
                Err(DpError::FixConflict { task, existing, requested: device })
            }
            _ => {
                self.fixed.insert(task, device);
                Ok(())
            }
        }
    }

    pub fn device_for(&self, task: usize) -> Option<usize> {
        self.fixed.get(&task).copied()
    }

    pub fn is_empty(&self) -> bool {
        self.fixed.is_empty()
    }

    pub fn len(&self) -> usize {
        self.fixed.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.fixed.iter().map(|(&t, &d)| (t, d))
    }

    fn validate(&self, n_tasks: usize, m_devices: usize) -> Result<(), DpError> {
        for (task, device) in self.iter() {
            if task >= n_tasks || device >= m_devices {
                return Err(DpError::BadFix { task, device });
            }
        }
        Ok(())
    }
}

/// Result of a weight-sum solve: the log sub-problem values at the final
/// root, and (for pure-tree solves) the full per-(task, device) table.
/// Masked-out entries are `-inf`.
#[derive(Debug, Clone)]
pub struct OmegaTable {
    m_devices: usize,
    root_log_weights: Vec<f64>,
    per_task: Option<Vec<f64>>,
}

impl OmegaTable {
    /// `log omega_root(j)`: weight sum over all assignments of the root's
    /// descendants with the root on device `j`.
    pub fn root_log_weight(&self, device: usize) -> f64 {
        self.root_log_weights[device]
    }

    pub fn root_log_weights(&self) -> &[f64] {
        &self.root_log_weights
    }

    /// `log sum_y w_y` over every assignment consistent with the fix.
    pub fn log_total(&self) -> f64 {
        log_sum_exp(&self.root_log_weights)
    }

    /// Per-(task, device) sub-problem value; available for pure-tree solves.
    pub fn per_task_log_weight(&self, task: usize, device: usize) -> Option<f64> {
        self.per_task.as_ref().map(|t| t[task * self.m_devices + device])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Fold {
    LogSumExp,
    Max,
}

#[inline]
fn fold_terms(fold: Fold, terms: &[f64]) -> f64 {
    match fold {
        Fold::LogSumExp => log_sum_exp(terms),
        Fold::Max => terms.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    }
}

/// One tree of the decomposition: traversal order, in-block children, and
/// the edges attaching it to the previous tree root of its chain.
#[derive(Debug, Clone)]
struct TreeBlock {
    root: usize,
    /// Children-first order of the block's tasks, root last.
    order: Vec<usize>,
    /// kids[pos] = in-block children of order[pos] as (child position in
    /// `order`, edge index).
    kids: Vec<Vec<(usize, usize)>>,
    /// Edges from the previous tree root into this block: (position in
    /// `order` of the target, edge index).
    attach: Vec<(usize, usize)>,
}

/// Decomposition of a supported graph into chains of tree blocks, reusable
/// across solves with different estimates, parameters and fixes.
#[derive(Debug, Clone)]
pub struct WeightDp {
    graph: TaskGraph,
    chains: Vec<Vec<TreeBlock>>,
    class: StructureClass,
}

impl WeightDp {
    /// Builds the solve plan. Fails with `UnsupportedStructure` for graphs
    /// outside the tree / serial-trees / parallel-chains family.
    pub fn new(graph: &TaskGraph) -> Result<Self, DpError> {
        let class = validate_and_classify(graph);
        let root = graph.root();
        let all: Vec<usize> = (0..graph.n_tasks()).collect();
        let chains = match classify_subset(graph, &all, root) {
            Some(SubsetClass::Tree) => {
                vec![build_chain_blocks(graph, &all, &[root])]
            }
            Some(SubsetClass::SerialTrees(roots)) => {
                vec![build_chain_blocks(graph, &all, &roots)]
            }
            None => {
                let mut chains = Vec::new();
                for comp in root_removed_components(graph) {
                    let mut members = comp;
                    members.push(root);
                    members.sort_unstable();
                    let roots = match classify_subset(graph, &members, root) {
                        Some(SubsetClass::Tree) => vec![root],
                        Some(SubsetClass::SerialTrees(roots)) => roots,
                        None => return Err(DpError::UnsupportedStructure),
                    };
                    chains.push(build_chain_blocks(graph, &members, &roots));
                }
                if chains.len() < 2 {
                    return Err(DpError::UnsupportedStructure);
                }
                chains
            }
        };
        Ok(WeightDp { graph: graph.clone(), chains, class })
    }

    pub fn class(&self) -> &StructureClass {
        &self.class
    }

    pub fn graph(&self) -> &TaskGraph {
        &self.graph
    }

    /// Log weight sum over all assignments consistent with `fix`.
    pub fn log_weight_sum(
        &self,
        estimates: &CumulativeEstimates,
        alpha: f64,
        fix: &ConditionalFix,
    ) -> Result<f64, DpError> {
        Ok(log_sum_exp(&self.root_vector(estimates, alpha, fix, Fold::LogSumExp)?))
    }

    /// Best achievable score over assignments consistent with `fix`, with
    /// the (max, +) semiring: used for the offline optimum where `tables`
    /// hold plain reward sums and `alpha` is 1.
    pub fn max_plus_total(
        &self,
        tables: &CumulativeEstimates,
        fix: &ConditionalFix,
    ) -> Result<f64, DpError> {
        Ok(fold_terms(Fold::Max, &self.root_vector(tables, 1.0, fix, Fold::Max)?))
    }

    /// Log weight sums at the final root, one entry per root device.
    pub fn root_log_weights(
        &self,
        estimates: &CumulativeEstimates,
        alpha: f64,
        fix: &ConditionalFix,
    ) -> Result<Vec<f64>, DpError> {
        self.root_vector(estimates, alpha, fix, Fold::LogSumExp)
    }

    fn root_vector(
        &self,
        tables: &CumulativeEstimates,
        alpha: f64,
        fix: &ConditionalFix,
        fold: Fold,
    ) -> Result<Vec<f64>, DpError> {
        let m = tables.m_devices();
        fix.validate(self.graph.n_tasks(), m)?;
        let root = self.graph.root();
        if self.chains.len() == 1 {
            return Ok(solve_chain(&self.chains[0], tables, alpha, fix, false, fold));
        }
        // Parallel chains: each chain is solved with the shared root's own
        // factor suppressed, then everything multiplies at the root.
        let mut acc: Vec<f64> = (0..m).map(|j| node_factor(tables, alpha, fix, root, j)).collect();
        for chain in &self.chains {
            let part = solve_chain(chain, tables, alpha, fix, true, fold);
            for j in 0..m {
                acc[j] += part[j];
            }
        }
        Ok(acc)
    }

    /// `P{x_i = j}` for every device `j`, under the mixture of the
    /// weight-proportional draw and uniform exploration `gamma`.
    pub fn marginal_node(
        &self,
        estimates: &CumulativeEstimates,
        alpha: f64,
        gamma: f64,
        task: usize,
    ) -> Result<Vec<f64>, DpError> {
        let m = estimates.m_devices();
        let mut log_sums = Vec::with_capacity(m);
        for j in 0..m {
            let fix = ConditionalFix::from_pairs(&[(task, j)])?;
            log_sums.push(self.log_weight_sum(estimates, alpha, &fix)?);
        }
        Ok(mix_with_uniform(&log_sums, gamma, m as f64))
    }

    /// `P{x_m = j, x_n = k}` as a row-major `M*M` vector for the given edge.
    pub fn marginal_edge(
        &self,
        estimates: &CumulativeEstimates,
        alpha: f64,
        gamma: f64,
        from_task: usize,
        to_task: usize,
    ) -> Result<Vec<f64>, DpError> {
        if self.graph.edge_index(from_task, to_task).is_none() {
            return Err(DpError::UnknownEdge(from_task, to_task));
        }
        let m = estimates.m_devices();
        let mut log_sums = Vec::with_capacity(m * m);
        for j in 0..m {
            for k in 0..m {
                let fix = ConditionalFix::from_pairs(&[(from_task, j), (to_task, k)])?;
                log_sums.push(self.log_weight_sum(estimates, alpha, &fix)?);
            }
        }
        Ok(mix_with_uniform(&log_sums, gamma, (m * m) as f64))
    }
}

/// Normalizes conditioned log weight sums and mixes in the uniform
/// exploration mass: `(1-gamma) * softmax + gamma / cells`.
fn mix_with_uniform(log_sums: &[f64], gamma: f64, cells: f64) -> Vec<f64> {
    let total = log_sum_exp(log_sums);
    log_sums
        .iter()
        .map(|&ls| {
            let exploit = if ls == f64::NEG_INFINITY { 0.0 } else { (ls - total).exp() };
            (1.0 - gamma) * exploit + gamma / cells
        })
        .collect()
}

#[inline]
fn node_factor(
    tables: &CumulativeEstimates,
    alpha: f64,
    fix: &ConditionalFix,
    task: usize,
    device: usize,
) -> f64 {
    match fix.device_for(task) {
        Some(d) if d != device => f64::NEG_INFINITY,
        _ => alpha * tables.node(task, device),
    }
}

fn solve_chain(
    blocks: &[TreeBlock],
    tables: &CumulativeEstimates,
    alpha: f64,
    fix: &ConditionalFix,
    suppress_final_root_factor: bool,
    fold: Fold,
) -> Vec<f64> {
    let m = tables.m_devices();
    let mut prev: Option<Vec<f64>> = None;
    for (bi, block) in blocks.iter().enumerate() {
        let suppress = suppress_final_root_factor && bi == blocks.len() - 1;
        let next = match &prev {
            None => solve_block(block, tables, alpha, fix, None, suppress, fold, None),
            Some(carry) => {
                // Conditioned sub-problems: solve the block once per viable
                // device of the previous tree root, then fold the carry in.
                let mut conditioned: Vec<Option<Vec<f64>>> = vec![None; m];
                for (jp, c) in carry.iter().enumerate() {
                    if *c > f64::NEG_INFINITY {
                        conditioned[jp] = Some(solve_block(
                            block, tables, alpha, fix, Some(jp), suppress, fold, None,
                        ));
                    }
                }
                let mut combined = vec![f64::NEG_INFINITY; m];
                let mut terms = Vec::with_capacity(m);
                for j in 0..m {
                    terms.clear();
                    for (jp, cond) in conditioned.iter().enumerate() {
                        if let Some(cond) = cond {
                            terms.push(cond[j] + carry[jp]);
                        }
                    }
                    combined[j] = fold_terms(fold, &terms);
                }
                combined
            }
        };
        prev = Some(next);
    }
    prev.expect("chain has at least one block")
}

/// Bottom-up solve of one tree block. Returns the root's log values per
/// device; when `capture` is given, also stores every task's values.
#[allow(clippy::too_many_arguments)]
fn solve_block(
    block: &TreeBlock,
    tables: &CumulativeEstimates,
    alpha: f64,
    fix: &ConditionalFix,
    attach_device: Option<usize>,
    suppress_root_factor: bool,
    fold: Fold,
    mut capture: Option<&mut Vec<f64>>,
) -> Vec<f64> {
    let m = tables.m_devices();
    let n_pos = block.order.len();
    let mut omega = vec![f64::NEG_INFINITY; n_pos * m];
    let mut terms = Vec::with_capacity(m);

    for (pos, &task) in block.order.iter().enumerate() {
        let mut base: Vec<f64> = if suppress_root_factor && task == block.root {
            vec![0.0; m]
        } else {
            (0..m).map(|j| node_factor(tables, alpha, fix, task, j)).collect()
        };
        if let Some(jp) = attach_device {
            for &(tpos, eidx) in &block.attach {
                if tpos == pos {
                    for (j, b) in base.iter_mut().enumerate() {
                        *b += alpha * tables.edge(eidx, jp, j);
                    }
                }
            }
        }
        for &(cpos, eidx) in &block.kids[pos] {
            for (j, b) in base.iter_mut().enumerate() {
                terms.clear();
                for y in 0..m {
                    terms.push(alpha * tables.edge(eidx, y, j) + omega[cpos * m + y]);
                }
                *b += fold_terms(fold, &terms);
            }
        }
        omega[pos * m..(pos + 1) * m].copy_from_slice(&base);
        if let Some(capture) = capture.as_deref_mut() {
            capture[task * m..(task + 1) * m].copy_from_slice(&base);
        }
    }

    let root_pos = n_pos - 1;
    debug_assert_eq!(block.order[root_pos], block.root);
    omega[root_pos * m..(root_pos + 1) * m].to_vec()
}

/// Weakly-connected components of the graph with the root removed, in
/// ascending order of each component's smallest task.
fn root_removed_components(graph: &TaskGraph) -> Vec<Vec<usize>> {
    let n = graph.n_tasks();
    let root = graph.root();
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in graph.edges() {
        if a != root && b != root {
            adj[a].push(b);
            adj[b].push(a);
        }
    }
    let mut seen = vec![false; n];
    let mut comps = Vec::new();
    for start in 0..n {
        if start == root || seen[start] {
            continue;
        }
        let mut members = vec![start];
        seen[start] = true;
        let mut stack = vec![start];
        while let Some(u) = stack.pop() {
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    members.push(v);
                    stack.push(v);
                }
            }
        }
        comps.push(members);
    }
    comps
}

fn build_chain_blocks(graph: &TaskGraph, members: &[usize], roots: &[usize]) -> Vec<TreeBlock> {
    let tree_of = tree_membership(graph, members, roots);
    let mut blocks = Vec::with_capacity(roots.len());
    for (rank, &root) in roots.iter().enumerate() {
        let mut mask = vec![false; graph.n_tasks()];
        for &u in members {
            if tree_of[u] == rank {
                mask[u] = true;
            }
        }
        let order = bfs_reverse_order(graph, &mask, root);
        let mut pos_of = vec![usize::MAX; graph.n_tasks()];
        for (pos, &u) in order.iter().enumerate() {
            pos_of[u] = pos;
        }
        let kids: Vec<Vec<(usize, usize)>> = order
            .iter()
            .map(|&u| {
                graph
                    .children(u)
                    .iter()
                    .filter(|&&(c, _)| mask[c])
                    .map(|&(c, eidx)| (pos_of[c], eidx))
                    .collect()
            })
            .collect();
        let mut attach = Vec::new();
        if rank > 0 {
            let prev_root = roots[rank - 1];
            for (eidx, &(a, b)) in graph.edges().iter().enumerate() {
                if a == prev_root && mask[b] {
                    attach.push((pos_of[b], eidx));
                }
            }
        }
        blocks.push(TreeBlock { root, order, kids, attach });
    }
    blocks
}

/// Which tree (by rank in `roots`) each member belongs to: roots map to
/// themselves, everything else follows its unique out-edge chain within the
/// member set until it hits a root.
fn tree_membership(graph: &TaskGraph, members: &[usize], roots: &[usize]) -> Vec<usize> {
    let n = graph.n_tasks();
    let mut in_set = vec![false; n];
    for &u in members {
        in_set[u] = true;
    }
    let mut rank = vec![usize::MAX; n];
    for (r, &u) in roots.iter().enumerate() {
        rank[u] = r;
    }
    let mut single_out = vec![usize::MAX; n];
    let mut out_deg = vec![0usize; n];
    for &(a, b) in graph.edges() {
        if in_set[a] && in_set[b] {
            out_deg[a] += 1;
            single_out[a] = b;
        }
    }
    let mut tree_of = vec![usize::MAX; n];
    for &u in members {
        if tree_of[u] != usize::MAX || rank[u] != usize::MAX {
            if rank[u] != usize::MAX {
                tree_of[u] = rank[u];
            }
            continue;
        }
        let mut path = vec![u];
        let mut cur = u;
        let r = loop {
            if rank[cur] != usize::MAX {
                break rank[cur];
            }
            if tree_of[cur] != usize::MAX {
                break tree_of[cur];
            }
            debug_assert_eq!(out_deg[cur], 1, "non-root member must have one out-edge");
            cur = single_out[cur];
            path.push(cur);
        };
        for p in path {
            if rank[p] == usize::MAX {
                tree_of[p] = r;
            }
        }
    }
    for (r, &u) in roots.iter().enumerate() {
        tree_of[u] = r;
    }
    tree_of
}

// ---------------------------------------------------------------------------
// Public operations
// ---------------------------------------------------------------------------

/// Tree weight sums per Algorithm-style bottom-up recursion. Requires a
/// tree-classified graph; returns the full per-(task, device) table.
pub fn omega_tree(
    graph: &TaskGraph,
    estimates: &CumulativeEstimates,
    alpha: f64,
    fix: &ConditionalFix,
) -> Result<OmegaTable, DpError> {
    if !matches!(validate_and_classify(graph), StructureClass::Tree) {
        return Err(DpError::NotATree);
    }
    let m = estimates.m_devices();
    fix.validate(graph.n_tasks(), m)?;
    let dp = WeightDp::new(graph)?;
    let block = &dp.chains[0][0];
    let mut per_task = vec![f64::NEG_INFINITY; graph.n_tasks() * m];
    let root = solve_block(
        block,
        estimates,
        alpha,
        fix,
        None,
        false,
        Fold::LogSumExp,
        Some(&mut per_task),
    );
    Ok(OmegaTable { m_devices: m, root_log_weights: root, per_task: Some(per_task) })
}

/// Weight sums for a chain of serial trees (a plain tree degenerates to a
/// one-block chain).
pub fn omega_serial(
    graph: &TaskGraph,
    estimates: &CumulativeEstimates,
    alpha: f64,
    fix: &ConditionalFix,
) -> Result<OmegaTable, DpError> {
    match validate_and_classify(graph) {
        StructureClass::Tree | StructureClass::SerialTrees { .. } => {}
        _ => return Err(DpError::NotSerialTrees),
    }
    let dp = WeightDp::new(graph)?;
    let root = dp.root_log_weights(estimates, alpha, fix)?;
    Ok(OmegaTable { m_devices: estimates.m_devices(), root_log_weights: root, per_task: None })
}

/// Weight sums for parallel chains of trees sharing the final root. Accepts
/// any supported structure; a single chain reduces to [`omega_serial`].
pub fn omega_parallel_chains(
    graph: &TaskGraph,
    estimates: &CumulativeEstimates,
    alpha: f64,
    fix: &ConditionalFix,
) -> Result<OmegaTable, DpError> {
    let dp = WeightDp::new(graph)?;
    let root = dp.root_log_weights(estimates, alpha, fix)?;
    Ok(OmegaTable { m_devices: estimates.m_devices(), root_log_weights: root, per_task: None })
}

/// Number of assignments `M^N`, or `TooLarge` past the enumeration cap.
pub fn checked_arm_count(n_tasks: usize, m_devices: usize) -> Result<u64, DpError> {
    let mut arms: u64 = 1;
    for _ in 0..n_tasks {
        arms = arms.saturating_mul(m_devices as u64);
        if arms > MAX_ENUMERATED_ARMS {
            return Err(DpError::TooLarge);
        }
    }
    Ok(arms)
}

/// Exhaustive oracle: `log sum_y exp(alpha * (node sums + edge sums))` over
/// every assignment consistent with `fix`, by direct enumeration. Guarded by
/// [`MAX_ENUMERATED_ARMS`]; independent of the tree solver.
pub fn enumerate_weight_sum(
    graph: &TaskGraph,
    estimates: &CumulativeEstimates,
    alpha: f64,
    fix: &ConditionalFix,
) -> Result<f64, DpError> {
    let n = graph.n_tasks();
    let m = estimates.m_devices();
    fix.validate(n, m)?;
    let arms = checked_arm_count(n, m)?;
    let mut log_weights = Vec::with_capacity(arms as usize);
    let mut devices = vec![0usize; n];
    for arm in 0..arms {
        decode_arm(arm, m, &mut devices);
        if fix.iter().any(|(t, d)| devices[t] != d) {
            continue;
        }
        log_weights.push(alpha * assignment_score(graph, estimates, &devices));
    }
    Ok(log_sum_exp(&log_weights))
}

/// Raw score of a full assignment: sum of its node and edge table entries.
pub fn assignment_score(
    graph: &TaskGraph,
    tables: &CumulativeEstimates,
    devices: &[usize],
) -> f64 {
    let mut score = 0.0;
    for (task, &d) in devices.iter().enumerate() {
        score += tables.node(task, d);
    }
    for (eidx, &(a, b)) in graph.edges().iter().enumerate() {
        score += tables.edge(eidx, devices[a], devices[b]);
    }
    score
}

/// Decodes arm id into devices with task 0 most significant, so ascending
/// arm ids enumerate assignments in lexicographic order.
pub fn decode_arm(arm: u64, m_devices: usize, devices: &mut [usize]) {
    let mut rem = arm;
    for slot in devices.iter_mut().rev() {
        *slot = (rem % m_devices as u64) as usize;
        rem /= m_devices as u64;
    }
}

/// Exact node marginal `P{x_i = j}` via conditioned solves.
pub fn marginal_node(
    graph: &TaskGraph,
    estimates: &CumulativeEstimates,
    alpha: f64,
    gamma: f64,
    task: usize,
) -> Result<Vec<f64>, DpError> {
    WeightDp::new(graph)?.marginal_node(estimates, alpha, gamma, task)
}

/// Exact edge marginal `P{x_m = j, x_n = k}` via conditioned solves.
pub fn marginal_edge(
    graph: &TaskGraph,
    estimates: &CumulativeEstimates,
    alpha: f64,
    gamma: f64,
    from_task: usize,
    to_task: usize,
) -> Result<Vec<f64>, DpError> {
    WeightDp::new(graph)?.marginal_edge(estimates, alpha, gamma, from_task, to_task)
}
