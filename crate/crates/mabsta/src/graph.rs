//! Task-graph representation, validation and structure classification.
//!
//! An application is a DAG of tasks. An edge `(m, n)` means task `n` consumes
//! data produced by task `m`; everything drains into a single final task (the
//! root). The weight dynamic program only supports a family of DAG shapes
//! (trees, serial trees, and parallel chains of trees), so classification into
//! the most specific shape happens once, up front.
//!
//! Indices are 1-based in config files and CSV headers (matching the usual
//! presentation of such problems) and 0-based everywhere inside the library;
//! the conversion happens at the parsing boundary and nowhere else.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors raised while validating or classifying a task graph.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum GraphError {
    #[error("graph contains a cycle")]
    CyclicGraph,
    #[error("task {0} has no path to the root")]
    DisconnectedFromRoot(usize),
    #[error("index out of range: {0}")]
    BadIndex(String),
    #[error("duplicate edge ({0}, {1})")]
    DuplicateEdge(usize, usize),
    #[error("operation requires a tree-structured graph")]
    NotATree,
}

/// Shape of a task graph, from most to least specific.
///
/// Roots inside the variants are 0-based task indices. `SerialTrees` lists
/// the tree roots in chain order, ending with the graph root. Each entry of
/// `ParallelChainsOfTrees` is one chain's tree roots in order; all chains end
/// at the shared graph root.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StructureClass {
    Tree,
    SerialTrees { roots: Vec<usize> },
    ParallelChainsOfTrees { chains: Vec<Vec<usize>> },
    GeneralDag,
}

/// External (file) form of a task graph, with 1-based indices.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphSpec {
    pub n_tasks: usize,
    pub edges: Vec<[usize; 2]>,
    pub root: usize,
}

/// A validated task DAG. Immutable after construction; cheap to share.
#[derive(Debug, Clone)]
pub struct TaskGraph {
    n_tasks: usize,
    edges: Vec<(usize, usize)>,
    root: usize,
    /// children[i] = (child task, edge index) for every edge (child, i),
    /// sorted by child for deterministic traversals.
    children: Vec<Vec<(usize, usize)>>,
    out_degree: Vec<usize>,
}

impl TaskGraph {
    /// Builds a graph from 0-based task indices and validates its invariants.
    pub fn new(
        n_tasks: usize,
        edges: Vec<(usize, usize)>,
        root: usize,
    ) -> Result<Self, GraphError> {
        if n_tasks == 0 {
            return Err(GraphError::BadIndex("n_tasks must be positive".into()));
        }
        if root >= n_tasks {
            return Err(GraphError::BadIndex(format!("root {root} >= n_tasks {n_tasks}")));
        }
        let mut seen = std::collections::HashSet::new();
        for &(m, n) in &edges {
            if m >= n_tasks || n >= n_tasks {
                return Err(GraphError::BadIndex(format!("edge ({m}, {n})")));
            }
            if m == n {
                // A self-loop is a one-step cycle.
                return Err(GraphError::CyclicGraph);
            }
            if !seen.insert((m, n)) {
                return Err(GraphError::DuplicateEdge(m, n));
            }
        }

        let mut children = vec![Vec::new(); n_tasks];
        let mut out_degree = vec![0usize; n_tasks];
        for (idx, &(m, n)) in edges.iter().enumerate() {
            children[n].push((m, idx));
            out_degree[m] += 1;
        }
        for c in &mut children {
            c.sort_unstable();
        }

        let graph = TaskGraph { n_tasks, edges, root, children, out_degree };
        graph.check_acyclic()?;
        graph.check_reaches_root()?;
        Ok(graph)
    }

    /// Parses the external 1-based form.
    pub fn from_spec(spec: &GraphSpec) -> Result<Self, GraphError> {
        let to_internal = |v: usize, what: &str| -> Result<usize, GraphError> {
            v.checked_sub(1)
                .ok_or_else(|| GraphError::BadIndex(format!("{what} must be >= 1")))
        };
        let mut edges = Vec::with_capacity(spec.edges.len());
        for &[m, n] in &spec.edges {
            edges.push((to_internal(m, "edge endpoint")?, to_internal(n, "edge endpoint")?));
        }
        TaskGraph::new(spec.n_tasks, edges, to_internal(spec.root, "root")?)
    }

    /// External 1-based form, inverse of [`TaskGraph::from_spec`].
    pub fn to_spec(&self) -> GraphSpec {
        GraphSpec {
            n_tasks: self.n_tasks,
            edges: self.edges.iter().map(|&(m, n)| [m + 1, n + 1]).collect(),
            root: self.root + 1,
        }
    }

    pub fn n_tasks(&self) -> usize {
        self.n_tasks
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn root(&self) -> usize {
        self.root
    }

    /// Edge list in declaration order; reward tensors are indexed by this order.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// In-neighbors of `task` as (child, edge index), ascending by child.
    pub fn children(&self, task: usize) -> &[(usize, usize)] {
        &self.children[task]
    }

    pub fn out_degree(&self, task: usize) -> usize {
        self.out_degree[task]
    }

    /// Position of edge `(m, n)` in the edge list, if present.
    pub fn edge_index(&self, m: usize, n: usize) -> Option<usize> {
        self.edges.iter().position(|&e| e == (m, n))
    }

    fn check_acyclic(&self) -> Result<(), GraphError> {
        // Kahn's algorithm over in-degrees.
        let mut in_deg: Vec<usize> = (0..self.n_tasks).map(|i| self.children[i].len()).collect();
        let mut queue: Vec<usize> = (0..self.n_tasks).filter(|&i| in_deg[i] == 0).collect();
        let mut visited = 0;
        while let Some(u) = queue.pop() {
            visited += 1;
            if self.out_degree[u] > 0 {
                for &(m, n) in &self.edges {
                    if m == u {
                        in_deg[n] -= 1;
                        if in_deg[n] == 0 {
                            queue.push(n);
                        }
                    }
                }
            }
        }
        if visited == self.n_tasks {
            Ok(())
        } else {
            Err(GraphError::CyclicGraph)
        }
    }

    fn check_reaches_root(&self) -> Result<(), GraphError> {
        // Walk backwards from the root along in-edges; every task must show up.
        let mut reached = vec![false; self.n_tasks];
        reached[self.root] = true;
        let mut stack = vec![self.root];
        while let Some(u) = stack.pop() {
            for &(c, _) in &self.children[u] {
                if !reached[c] {
                    reached[c] = true;
                    stack.push(c);
                }
            }
        }
        match reached.iter().position(|&r| !r) {
            None => Ok(()),
            Some(task) => Err(GraphError::DisconnectedFromRoot(task)),
        }
    }
}

/// Returns the most specific structure class the graph satisfies.
pub fn validate_and_classify(graph: &TaskGraph) -> StructureClass {
    let all: Vec<usize> = (0..graph.n_tasks()).collect();
    match classify_subset(graph, &all, graph.root()) {
        Some(SubsetClass::Tree) => StructureClass::Tree,
        Some(SubsetClass::SerialTrees(roots)) => StructureClass::SerialTrees { roots },
        None => classify_parallel(graph)
            .map(|chains| StructureClass::ParallelChainsOfTrees { chains })
            .unwrap_or(StructureClass::GeneralDag),
    }
}

pub(crate) enum SubsetClass {
    Tree,
    SerialTrees(Vec<usize>),
}

/// Classifies the subgraph induced by `members` (which must contain `root`
/// and be closed under paths to it) as a tree or serial trees rooted at
/// `root`. Returns `None` when it is neither.
pub(crate) fn classify_subset(
    graph: &TaskGraph,
    members: &[usize],
    root: usize,
) -> Option<SubsetClass> {
    let in_set = member_mask(graph.n_tasks(), members);

    // Out-degree restricted to the subset.
    let mut out_deg = vec![0usize; graph.n_tasks()];
    for &(m, n) in graph.edges() {
        if in_set[m] && in_set[n] {
            out_deg[m] += 1;
        }
    }

    // Every non-root member needs at least one outgoing edge to reach root.
    if members.iter().any(|&u| u != root && out_deg[u] == 0) {
        return None;
    }
    let cuts: Vec<usize> = members.iter().copied().filter(|&u| out_deg[u] >= 2).collect();
    if cuts.is_empty() {
        return Some(SubsetClass::Tree);
    }

    // Candidate tree roots: the multi-output nodes in topological order
    // (ascending index as tiebreak), then the subset root.
    let mut roots = topo_order_subset(graph, &in_set, members)?;
    roots.retain(|u| cuts.contains(u));
    roots.push(root);

    // Tree membership: follow single out-edges until hitting a root.
    let mut root_rank = vec![usize::MAX; graph.n_tasks()];
    for (r, &u) in roots.iter().enumerate() {
        root_rank[u] = r;
    }
    let single_out: Vec<Option<usize>> = {
        let mut tgt = vec![None; graph.n_tasks()];
        for &(m, n) in graph.edges() {
            if in_set[m] && in_set[n] && out_deg[m] == 1 {
                tgt[m] = Some(n);
            }
        }
        tgt
    };
    let mut tree_of = vec![usize::MAX; graph.n_tasks()];
    for &u in members {
        if tree_of[u] != usize::MAX {
            continue;
        }
        let mut path = vec![u];
        let mut cur = u;
        let rank = loop {
            if root_rank[cur] != usize::MAX {
                break root_rank[cur];
            }
            if tree_of[cur] != usize::MAX {
                break tree_of[cur];
            }
            cur = single_out[cur]?;
            path.push(cur);
        };
        for p in path {
            tree_of[p] = rank;
        }
    }

    // Every out-edge of a cut root must land in the immediately next tree.
    for (r, &c) in roots.iter().enumerate().take(roots.len() - 1) {
        for &(m, n) in graph.edges() {
            if m == c && in_set[n] && tree_of[n] != r + 1 {
                return None;
            }
        }
    }
    Some(SubsetClass::SerialTrees(roots))
}

fn classify_parallel(graph: &TaskGraph) -> Option<Vec<Vec<usize>>> {
    let root = graph.root();
    let n = graph.n_tasks();
    if n == 1 {
        return None;
    }

    // Weakly-connected components of the graph with the root removed.
    let mut comp = vec![usize::MAX; n];
    let mut n_comps = 0;
    let mut adj = vec![Vec::new(); n];
    for &(m, nn) in graph.edges() {
        if m != root && nn != root {
            adj[m].push(nn);
            adj[nn].push(m);
        }
    }
    for start in 0..n {
        if start == root || comp[start] != usize::MAX {
            continue;
        }
        let id = n_comps;
        n_comps += 1;
        let mut stack = vec![start];
        comp[start] = id;
        while let Some(u) = stack.pop() {
            for &v in &adj[u] {
                if comp[v] == usize::MAX {
                    comp[v] = id;
                    stack.push(v);
                }
            }
        }
    }
    if n_comps < 2 {
        return None;
    }

    let mut chains = Vec::with_capacity(n_comps);
    for id in 0..n_comps {
        let mut members: Vec<usize> = (0..n).filter(|&u| comp[u] == id).collect();
        members.push(root);
        match classify_subset(graph, &members, root)? {
            SubsetClass::Tree => chains.push(vec![root]),
            SubsetClass::SerialTrees(roots) => chains.push(roots),
        }
    }
    Some(chains)
}

fn member_mask(n: usize, members: &[usize]) -> Vec<bool> {
    let mut mask = vec![false; n];
    for &u in members {
        mask[u] = true;
    }
    mask
}

/// Kahn topological order restricted to a subset, ascending-index tiebreak.
fn topo_order_subset(graph: &TaskGraph, in_set: &[bool], members: &[usize]) -> Option<Vec<usize>> {
    let mut in_deg = vec![0usize; graph.n_tasks()];
    for &(m, n) in graph.edges() {
        if in_set[m] && in_set[n] {
            in_deg[n] += 1;
        }
    }
    let mut ready: std::collections::BTreeSet<usize> =
        members.iter().copied().filter(|&u| in_deg[u] == 0).collect();
    let mut order = Vec::with_capacity(members.len());
    while let Some(&u) = ready.iter().next() {
        ready.remove(&u);
        order.push(u);
        for &(m, n) in graph.edges() {
            if m == u && in_set[n] {
                in_deg[n] -= 1;
                if in_deg[n] == 0 {
                    ready.insert(n);
                }
            }
        }
    }
    (order.len() == members.len()).then_some(order)
}

/// Children-first resolution order for a tree: every task appears after all
/// of its children, root last. BFS from the root (ascending-index tiebreak),
/// reversed.
pub fn child_resolution_order(graph: &TaskGraph) -> Result<Vec<usize>, GraphError> {
    if !matches!(validate_and_classify(graph), StructureClass::Tree) {
        return Err(GraphError::NotATree);
    }
    Ok(bfs_reverse_order(graph, &vec![true; graph.n_tasks()], graph.root()))
}

/// Reverse BFS order within a member mask; used for both the public tree
/// order and the per-tree blocks of composite structures.
pub(crate) fn bfs_reverse_order(graph: &TaskGraph, in_set: &[bool], root: usize) -> Vec<usize> {
    let mut order = Vec::new();
    let mut queue = std::collections::VecDeque::new();
    let mut seen = vec![false; graph.n_tasks()];
    queue.push_back(root);
    seen[root] = true;
    while let Some(u) = queue.pop_front() {
        order.push(u);
        for &(c, _) in graph.children(u) {
            if in_set[c] && !seen[c] {
                seen[c] = true;
                queue.push_back(c);
            }
        }
    }
    order.reverse();
    order
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn chain(n: usize) -> TaskGraph {
        let edges = (0..n - 1).map(|i| (i, i + 1)).collect();
        TaskGraph::new(n, edges, n - 1).unwrap()
    }

    /// The six-node example tree: leaves 1,2 feed 4; leaf 3 feeds 5; 4,5 feed
    /// the root 6 (1-based labels).
    pub(crate) fn example_tree() -> TaskGraph {
        TaskGraph::new(6, vec![(0, 3), (1, 3), (2, 4), (3, 5), (4, 5)], 5).unwrap()
    }

    /// Two three-node trees in series: tree {1,2,3} rooted at 3 whose root
    /// feeds both leaves {4,5} of the tree rooted at 6.
    pub(crate) fn serial_two_trees() -> TaskGraph {
        TaskGraph::new(
            6,
            vec![(0, 2), (1, 2), (2, 3), (2, 4), (3, 5), (4, 5)],
            5,
        )
        .unwrap()
    }

    #[test]
    fn chain_is_a_tree() {
        assert_eq!(validate_and_classify(&chain(3)), StructureClass::Tree);
    }

    #[test]
    fn example_tree_classifies_tree() {
        assert_eq!(validate_and_classify(&example_tree()), StructureClass::Tree);
    }

    #[test]
    fn serial_trees_classify_with_roots_in_order() {
        assert_eq!(
            validate_and_classify(&serial_two_trees()),
            StructureClass::SerialTrees { roots: vec![2, 5] }
        );
    }

    /// Two genuinely serial chains (each with its own multi-output node)
    /// meeting only at the shared root 8.
    pub(crate) fn two_parallel_serial_chains() -> TaskGraph {
        TaskGraph::new(
            9,
            vec![
                (0, 1),
                (1, 2),
                (1, 3),
                (2, 8),
                (3, 8),
                (4, 5),
                (5, 6),
                (5, 7),
                (6, 8),
                (7, 8),
            ],
            8,
        )
        .unwrap()
    }

    #[test]
    fn parallel_chains_classify() {
        match validate_and_classify(&two_parallel_serial_chains()) {
            StructureClass::ParallelChainsOfTrees { chains } => {
                assert_eq!(chains.len(), 2);
                assert!(chains.contains(&vec![1, 8]));
                assert!(chains.contains(&vec![5, 8]));
            }
            other => panic!("expected parallel chains, got {other:?}"),
        }
    }

    #[test]
    fn crossed_fanouts_are_general() {
        // Two multi-output nodes feeding the same pair of tasks: no single
        // cut device decouples the sum, and the root removal leaves one
        // component.
        let g = TaskGraph::new(5, vec![(0, 2), (0, 3), (1, 2), (1, 3), (2, 4), (3, 4)], 4)
            .unwrap();
        assert_eq!(validate_and_classify(&g), StructureClass::GeneralDag);
    }

    #[test]
    fn rejoining_fanout_is_still_serial() {
        // One multi-output node whose branches re-join below the root:
        // conditioning on that single node decouples everything, so this is
        // a two-tree serial chain, not a general DAG.
        let g =
            TaskGraph::new(6, vec![(0, 1), (0, 2), (1, 3), (2, 3), (3, 4), (4, 5)], 5).unwrap();
        assert_eq!(
            validate_and_classify(&g),
            StructureClass::SerialTrees { roots: vec![0, 5] }
        );
    }

    #[test]
    fn cycle_detected() {
        assert_eq!(
            TaskGraph::new(3, vec![(0, 1), (1, 0), (0, 2)], 2).unwrap_err(),
            GraphError::CyclicGraph
        );
        // Self loop counts as a cycle.
        assert_eq!(
            TaskGraph::new(2, vec![(0, 0), (0, 1)], 1).unwrap_err(),
            GraphError::CyclicGraph
        );
    }

    #[test]
    fn disconnected_detected() {
        assert_eq!(
            TaskGraph::new(3, vec![(0, 2)], 2).unwrap_err(),
            GraphError::DisconnectedFromRoot(1)
        );
    }

    #[test]
    fn bad_index_and_duplicate_edges() {
        assert!(matches!(
            TaskGraph::new(2, vec![(0, 5)], 1).unwrap_err(),
            GraphError::BadIndex(_)
        ));
        assert_eq!(
            TaskGraph::new(2, vec![(0, 1), (0, 1)], 1).unwrap_err(),
            GraphError::DuplicateEdge(0, 1)
        );
    }

    #[test]
    fn resolution_order_chain() {
        assert_eq!(child_resolution_order(&chain(3)).unwrap(), vec![0, 1, 2]);
        assert_eq!(child_resolution_order(&chain(1)).unwrap(), vec![0]);
    }

    #[test]
    fn resolution_order_example_tree_is_child_first() {
        let g = example_tree();
        let order = child_resolution_order(&g).unwrap();
        let pos = |t: usize| order.iter().position(|&u| u == t).unwrap();
        for &(m, n) in g.edges() {
            assert!(pos(m) < pos(n), "edge ({m},{n}) violated in {order:?}");
        }
        assert_eq!(*order.last().unwrap(), 5);
    }

    #[test]
    fn resolution_order_rejects_non_trees() {
        assert_eq!(
            child_resolution_order(&serial_two_trees()).unwrap_err(),
            GraphError::NotATree
        );
    }

    #[test]
    fn spec_round_trip_is_one_based() {
        let spec = GraphSpec {
            n_tasks: 3,
            edges: vec![[1, 2], [2, 3]],
            root: 3,
        };
        let g = TaskGraph::from_spec(&spec).unwrap();
        assert_eq!(g.root(), 2);
        assert_eq!(g.edges(), &[(0, 1), (1, 2)]);
        let back = g.to_spec();
        assert_eq!(back.edges, spec.edges);
        assert_eq!(back.root, 3);
    }
}
