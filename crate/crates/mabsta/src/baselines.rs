//! Comparison policies: flat exponential-weights over the whole arm space,
//! uniform random, a myopic two-state belief policy, and the offline-optimal
//! genie computed by two independent routes.

use crate::agent::{AgentError, Assignment, Policy};
use crate::dp::{
    assignment_score, checked_arm_count, decode_arm, ConditionalFix, CumulativeEstimates,
    DpError, WeightDp,
};
use crate::env::{BanditFeedback, FrameRewards};
use crate::graph::TaskGraph;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Fenwick tree over nonnegative weights for O(log K) prefix sampling.
struct Fenwick {
    tree: Vec<f64>,
}

impl Fenwick {
    fn new(weights: &[f64]) -> Self {
        let n = weights.len();
        let mut tree = vec![0.0; n + 1];
        for (i, &w) in weights.iter().enumerate() {
            let mut idx = i + 1;
            while idx <= n {
                tree[idx] += w;
                idx += idx & idx.wrapping_neg();
            }
        }
        Fenwick { tree }
    }

    fn len(&self) -> usize {
        self.tree.len() - 1
    }

    fn add(&mut self, i: usize, delta: f64) {
        let mut idx = i + 1;
        while idx < self.tree.len() {
            self.tree[idx] += delta;
            idx += idx & idx.wrapping_neg();
        }
    }

    fn total(&self) -> f64 {
        self.prefix(self.len())
    }

    fn prefix(&self, count: usize) -> f64 {
        let mut idx = count;
        let mut sum = 0.0;
        while idx > 0 {
            sum += self.tree[idx];
            idx -= idx & idx.wrapping_neg();
        }
        sum
    }

    /// Index of the weight bucket containing `target` mass; binary-lifting
    /// descent over the implicit prefix sums.
    fn sample(&self, target: f64) -> usize {
        let n = self.len();
        let mut pos = 0usize;
        let mut remaining = target;
        let mut step = n.next_power_of_two();
        while step > 0 {
            let next = pos + step;
            if next <= n && self.tree[next] <= remaining {
                remaining -= self.tree[next];
                pos = next;
            }
            step >>= 1;
        }
        pos.min(n - 1)
    }
}

/// Standard single-draw adversarial bandit over the flattened arm space
/// `[M]^N`, with horizon-tuned exploration. Arm payoff is the frame's
/// realized reward scaled by `1 / (N + |E|)` to stay within `[0, 1]`.
pub struct Exp3Flat {
    label: String,
    graph: TaskGraph,
    m_devices: usize,
    weights: Vec<f64>,
    fenwick: Fenwick,
    gamma: f64,
    eta: f64,
    scale: f64,
    rng: ChaCha8Rng,
    next_t: usize,
    pending: Option<(usize, usize)>,
}

impl Exp3Flat {
    pub fn new(
        graph: &TaskGraph,
        m_devices: usize,
        horizon: usize,
        seed: u64,
    ) -> Result<Self, AgentError> {
        let arms =
            checked_arm_count(graph.n_tasks(), m_devices).map_err(|_| AgentError::TooManyArms)?;
        let k = arms as f64;
        // Horizon-known tuning: gamma = min{1, sqrt(K ln K / ((e-1) g))}
        // with g = T, since per-frame scaled payoffs stay in [0, 1].
        let e1 = std::f64::consts::E - 1.0;
        let gamma = (k * k.ln() / (e1 * horizon as f64)).sqrt().min(1.0);
        let weights = vec![1.0; arms as usize];
        let fenwick = Fenwick::new(&weights);
        Ok(Exp3Flat {
            label: "exp3".to_string(),
            graph: graph.clone(),
            m_devices,
            weights,
            fenwick,
            gamma,
            eta: gamma / k,
            scale: 1.0 / (graph.n_tasks() + graph.n_edges()) as f64,
            rng: crate::env::seeded_stream(seed, 0),
            next_t: 1,
            pending: None,
        })
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn arm_probability_by_index(&self, arm: usize) -> f64 {
        let k = self.weights.len() as f64;
        (1.0 - self.gamma) * self.weights[arm] / self.fenwick.total() + self.gamma / k
    }

    fn decode(&self, arm: usize) -> Assignment {
        let mut devices = vec![0usize; self.graph.n_tasks()];
        decode_arm(arm as u64, self.m_devices, &mut devices);
        Assignment::new(devices)
    }

    fn renormalize_if_needed(&mut self, touched: usize) {
        if self.weights[touched] < 1e250 {
            return;
        }
        let max = self.weights.iter().copied().fold(0.0f64, f64::max);
        for w in &mut self.weights {
            *w /= max;
        }
        self.fenwick = Fenwick::new(&self.weights);
    }
}

impl Policy for Exp3Flat {
    fn name(&self) -> &str {
        &self.label
    }

    fn choose(&mut self, t: usize) -> Assignment {
        assert!(self.pending.is_none(), "choose called twice without observe");
        assert_eq!(t, self.next_t);
        let k = self.weights.len();
        let coin: f64 = self.rng.random();
        let arm = if coin < self.gamma {
            self.rng.random_range(0..k)
        } else {
            let u: f64 = self.rng.random();
            self.fenwick.sample(u * self.fenwick.total())
        };
        self.pending = Some((t, arm));
        self.decode(arm)
    }

    fn observe(&mut self, t: usize, x: &Assignment, fb: &BanditFeedback) -> Result<(), AgentError> {
        let arm = match self.pending {
            Some((pt, arm)) if pt == t && self.decode(arm) == *x => arm,
            _ => return Err(AgentError::OutOfOrderFrame { expected: self.next_t, got: t }),
        };
        let reward = fb.total() * self.scale;
        if !(0.0..=1.0 + 1e-12).contains(&reward) {
            return Err(AgentError::RewardOutOfRange(reward));
        }
        let p = self.arm_probability_by_index(arm);
        let estimate = reward / p;
        let old = self.weights[arm];
        let new = old * (self.eta * estimate).exp();
        self.weights[arm] = new;
        self.fenwick.add(arm, new - old);
        self.renormalize_if_needed(arm);
        self.pending = None;
        self.next_t = t + 1;
        Ok(())
    }
}

/// Picks every task's device uniformly at random each frame; never learns.
pub struct UniformRandom {
    label: String,
    n_tasks: usize,
    m_devices: usize,
    rng: ChaCha8Rng,
    next_t: usize,
}

impl UniformRandom {
    pub fn new(graph: &TaskGraph, m_devices: usize, seed: u64) -> Self {
        UniformRandom {
            label: "random".to_string(),
            n_tasks: graph.n_tasks(),
            m_devices,
            rng: crate::env::seeded_stream(seed, 0),
            next_t: 1,
        }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }
}

impl Policy for UniformRandom {
    fn name(&self) -> &str {
        &self.label
    }

    fn choose(&mut self, t: usize) -> Assignment {
        assert_eq!(t, self.next_t);
        self.next_t = t + 1;
        Assignment::new(
            (0..self.n_tasks).map(|_| self.rng.random_range(0..self.m_devices)).collect(),
        )
    }

    fn observe(
        &mut self,
        _t: usize,
        _x: &Assignment,
        _fb: &BanditFeedback,
    ) -> Result<(), AgentError> {
        Ok(())
    }
}

/// Myopic belief policy for the two-device, two-state scenario: tracks the
/// probability each device is in its good state using (possibly stale)
/// transition matrices, assigns every task to the argmax-belief device, and
/// treats an observed reward above 0.5 as a good-state observation.
pub struct MyopicMarkov {
    label: String,
    n_tasks: usize,
    beliefs: [f64; 2],
    transitions: [[[f64; 2]; 2]; 2],
    next_t: usize,
    pending_device: Option<(usize, usize)>,
}

impl MyopicMarkov {
    pub fn new(
        graph: &TaskGraph,
        believed_transitions: [[[f64; 2]; 2]; 2],
        initial_beliefs: [f64; 2],
    ) -> Self {
        MyopicMarkov {
            label: "myopic".to_string(),
            n_tasks: graph.n_tasks(),
            beliefs: initial_beliefs,
            transitions: believed_transitions,
            next_t: 1,
            pending_device: None,
        }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn beliefs(&self) -> [f64; 2] {
        self.beliefs
    }

    fn propagate(&self, device: usize, p_good: f64) -> f64 {
        let t = &self.transitions[device];
        p_good * t[0][0] + (1.0 - p_good) * t[1][0]
    }
}

impl Policy for MyopicMarkov {
    fn name(&self) -> &str {
        &self.label
    }

    fn choose(&mut self, t: usize) -> Assignment {
        assert_eq!(t, self.next_t);
        // Ties go to the lower device index.
        let device = if self.beliefs[0] >= self.beliefs[1] { 0 } else { 1 };
        self.pending_device = Some((t, device));
        Assignment::new(vec![device; self.n_tasks])
    }

    fn observe(&mut self, t: usize, x: &Assignment, fb: &BanditFeedback) -> Result<(), AgentError> {
        let device = match self.pending_device {
            Some((pt, device)) if pt == t => device,
            _ => return Err(AgentError::OutOfOrderFrame { expected: self.next_t, got: t }),
        };
        debug_assert!(x.devices().iter().all(|&d| d == device));
        // The observed reward reveals the chosen device's state.
        let observed_good = fb.node_rewards.first().copied().unwrap_or(0.0) > 0.5;
        self.beliefs[device] = self.propagate(device, if observed_good { 1.0 } else { 0.0 });
        let other = 1 - device;
        self.beliefs[other] = self.propagate(other, self.beliefs[other]);
        self.pending_device = None;
        self.next_t = t + 1;
        Ok(())
    }
}

/// Replays one fixed assignment forever (the genie's strategy, the
/// post-swap optimum in adaptivity runs).
pub struct FixedAssignment {
    label: String,
    x: Assignment,
    next_t: usize,
}

impl FixedAssignment {
    pub fn new(x: Assignment) -> Self {
        FixedAssignment { label: "fixed".to_string(), x, next_t: 1 }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }
}

impl Policy for FixedAssignment {
    fn name(&self) -> &str {
        &self.label
    }

    fn choose(&mut self, t: usize) -> Assignment {
        assert_eq!(t, self.next_t);
        self.next_t = t + 1;
        self.x.clone()
    }

    fn observe(
        &mut self,
        _t: usize,
        _x: &Assignment,
        _fb: &BanditFeedback,
    ) -> Result<(), AgentError> {
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Offline optimum
// ---------------------------------------------------------------------------

/// The genie's answer: the best single fixed assignment and its total.
#[derive(Debug, Clone, PartialEq)]
pub struct OfflineOptimal {
    pub assignment: Assignment,
    pub total_reward: f64,
}

/// Sums reward matrices over frames into node/edge total tables.
pub fn sum_frames(
    graph: &TaskGraph,
    m_devices: usize,
    frames: &[FrameRewards],
) -> CumulativeEstimates {
    let mut totals = CumulativeEstimates::for_graph(graph, m_devices);
    for fr in frames {
        for i in 0..graph.n_tasks() {
            for j in 0..m_devices {
                totals.add_node(i, j, fr.node(i, j));
            }
        }
        for e in 0..graph.n_edges() {
            for j in 0..m_devices {
                for k in 0..m_devices {
                    totals.add_edge(e, j, k, fr.edge(e, j, k));
                }
            }
        }
    }
    totals
}

/// Exhaustive scan over all `M^N` assignments (lexicographically first
/// winner on exact ties). Guarded by the enumeration cap.
pub fn brute_force_best(
    graph: &TaskGraph,
    m_devices: usize,
    totals: &CumulativeEstimates,
) -> Result<OfflineOptimal, DpError> {
    let arms = checked_arm_count(graph.n_tasks(), m_devices)?;
    const CHUNK: u64 = 1 << 14;
    let n_chunks = arms.div_ceil(CHUNK) as usize;
    let chunk_best = crate::exec::heavy_map_collect(n_chunks, |ci| {
        let start = ci as u64 * CHUNK;
        let end = (start + CHUNK).min(arms);
        let mut devices = vec![0usize; graph.n_tasks()];
        let mut best = (f64::NEG_INFINITY, start);
        for arm in start..end {
            decode_arm(arm, m_devices, &mut devices);
            let score = assignment_score(graph, totals, &devices);
            if score > best.0 {
                best = (score, arm);
            }
        }
        best
    });
    let (best_score, best_arm) =
        chunk_best.into_iter().fold((f64::NEG_INFINITY, 0u64), |acc, cand| {
            // Strictly-better score wins; ties prefer the smaller arm id,
            // which is the lexicographically smaller assignment.
            if cand.0 > acc.0 || (cand.0 == acc.0 && cand.1 < acc.1) {
                cand
            } else {
                acc
            }
        });
    let mut devices = vec![0usize; graph.n_tasks()];
    decode_arm(best_arm, m_devices, &mut devices);
    Ok(OfflineOptimal { assignment: Assignment::new(devices), total_reward: best_score })
}

/// Max-plus route: the best total decomposes over nodes and edges, so the
/// weight-sum recursion with (max, +) computes it; the argmax is recovered
/// by pinning tasks one at a time to the lowest device preserving the
/// conditioned maximum.
pub fn max_plus_best(
    graph: &TaskGraph,
    m_devices: usize,
    totals: &CumulativeEstimates,
) -> Result<OfflineOptimal, DpError> {
    let dp = WeightDp::new(graph)?;
    let mut fix = ConditionalFix::empty();
    let mut devices = vec![0usize; graph.n_tasks()];
    for (task, slot) in devices.iter_mut().enumerate() {
        let mut best_dev = 0;
        let mut best_val = f64::NEG_INFINITY;
        for j in 0..m_devices {
            let mut trial = fix.clone();
            trial.pin(task, j)?;
            let val = dp.max_plus_total(totals, &trial)?;
            if val > best_val {
                best_val = val;
                best_dev = j;
            }
        }
        fix.pin(task, best_dev)?;
        *slot = best_dev;
    }
    let total_reward = assignment_score(graph, totals, &devices);
    Ok(OfflineOptimal { assignment: Assignment::new(devices), total_reward })
}

/// Best fixed assignment over the given frames: the max-plus route on
/// supported structures, exhaustive scan otherwise.
pub fn offline_optimal(
    graph: &TaskGraph,
    m_devices: usize,
    frames: &[FrameRewards],
) -> Result<OfflineOptimal, DpError> {
    let totals = sum_frames(graph, m_devices, frames);
    match max_plus_best(graph, m_devices, &totals) {
        Ok(best) => Ok(best),
        Err(DpError::UnsupportedStructure) => brute_force_best(graph, m_devices, &totals),
        Err(other) => Err(other),
    }
}
