//! Reward-generating environments and bandit-feedback extraction.
//!
//! An environment produces one [`FrameRewards`] per data frame: the full
//! per-(task, device) and per-(edge, device-pair) reward matrices, every
//! entry in `[0, 1]`. Agents never see the full matrices; they get the
//! [`BanditFeedback`] selected by their own assignment.
//!
//! Included generators:
//! - [`ConstantEnv`]: a fixed template every frame (tests, closed forms).
//! - [`IidUniformEnv`]: independent `U[0,1)` entries.
//! - [`SwitchingAdversaryEnv`]: the favored device rotates on a period.
//! - [`TableTraceEnv`]: synthetic device traces: per-device iteration
//!   counts drawn uniformly from measured bounds, channel latencies
//!   log-normal around per-pair means, both normalized to rewards against a
//!   pre-sampled calibration batch.
//! - [`MarkovSwapEnv`]: two devices driven by two-state Markov chains whose
//!   transition matrices swap mid-run.
//! - [`ReplayEnv`]: frames read back from a trace CSV.
//!
//! Everything is deterministic given its seed; replicas use separate ChaCha
//! streams and may run concurrently without sharing.

use crate::agent::Assignment;
use crate::graph::TaskGraph;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("trace exhausted at frame {0}")]
    TraceExhausted(usize),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("degenerate normalization range (lo == hi == {0})")]
    DegenerateRange(f64),
    #[error("bad environment parameter: {0}")]
    BadParameter(String),
    #[error("trace io: {0}")]
    Io(#[from] std::io::Error),
    #[error("trace parse: {0}")]
    Parse(String),
}

/// Full reward matrices for one frame. Node entries are `N*M` row-major,
/// edge entries `|E|*M*M` in edge-list order.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameRewards {
    n_tasks: usize,
    n_edges: usize,
    m_devices: usize,
    node: Vec<f64>,
    edge: Vec<f64>,
}

impl FrameRewards {
    pub fn zeros(n_tasks: usize, n_edges: usize, m_devices: usize) -> Self {
        FrameRewards {
            n_tasks,
            n_edges,
            m_devices,
            node: vec![0.0; n_tasks * m_devices],
            edge: vec![0.0; n_edges * m_devices * m_devices],
        }
    }

    pub fn filled(n_tasks: usize, n_edges: usize, m_devices: usize, value: f64) -> Self {
        let mut fr = Self::zeros(n_tasks, n_edges, m_devices);
        fr.node.fill(value);
        fr.edge.fill(value);
        fr
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
        self.node[task * self.m_devices + device]
    }

    #[inline]
    pub fn edge(&self, edge: usize, from_device: usize, to_device: usize) -> f64 {
        self.edge[(edge * self.m_devices + from_device) * self.m_devices + to_device]
    }

    pub fn set_node(&mut self, task: usize, device: usize, value: f64) {
        debug_assert!((0.0..=1.0).contains(&value));
        self.node[task * self.m_devices + device] = value;
    }

    pub fn set_edge(&mut self, edge: usize, from_device: usize, to_device: usize, value: f64) {
        debug_assert!((0.0..=1.0).contains(&value));
        self.edge[(edge * self.m_devices + from_device) * self.m_devices + to_device] = value;
    }

    pub fn node_values(&self) -> &[f64] {
        &self.node
    }

    pub fn edge_values(&self) -> &[f64] {
        &self.edge
    }

    pub fn in_unit_range(&self) -> bool {
        self.node.iter().chain(&self.edge).all(|v| (0.0..=1.0).contains(v))
    }

    /// Exact bit equality, for determinism and round-trip checks.
    pub fn bits_eq(&self, other: &FrameRewards) -> bool {
        self.node.len() == other.node.len()
            && self.edge.len() == other.edge.len()
            && self.node.iter().zip(&other.node).all(|(a, b)| a.to_bits() == b.to_bits())
            && self.edge.iter().zip(&other.edge).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// The rewards revealed for one played assignment: one entry per task and
/// one per edge.
#[derive(Debug, Clone, PartialEq)]
pub struct BanditFeedback {
    pub node_rewards: Vec<f64>,
    pub edge_rewards: Vec<f64>,
}

impl BanditFeedback {
    /// Realized total reward of the frame: nodes plus edges.
    pub fn total(&self) -> f64 {
        self.node_rewards.iter().sum::<f64>() + self.edge_rewards.iter().sum::<f64>()
    }
}

/// Selects exactly the entries of `frame` named by the assignment.
pub fn feedback_for(
    frame: &FrameRewards,
    graph: &TaskGraph,
    x: &Assignment,
) -> Result<BanditFeedback, EnvError> {
    if x.len() != frame.n_tasks() || graph.n_tasks() != frame.n_tasks() {
        return Err(EnvError::DimensionMismatch(format!(
            "assignment len {} vs {} tasks",
            x.len(),
            frame.n_tasks()
        )));
    }
    if graph.n_edges() != frame.n_edges() {
        return Err(EnvError::DimensionMismatch(format!(
            "graph has {} edges, frame has {}",
            graph.n_edges(),
            frame.n_edges()
        )));
    }
    if x.devices().iter().any(|&d| d >= frame.m_devices()) {
        return Err(EnvError::DimensionMismatch("device index out of range".into()));
    }
    let node_rewards = x
        .devices()
        .iter()
        .enumerate()
        .map(|(i, &d)| frame.node(i, d))
        .collect();
    let edge_rewards = graph
        .edges()
        .iter()
        .enumerate()
        .map(|(eidx, &(a, b))| frame.edge(eidx, x.device(a), x.device(b)))
        .collect();
    Ok(BanditFeedback { node_rewards, edge_rewards })
}

/// Linear cost-to-reward normalization: `(hi - latency) / (hi - lo)` with
/// the latency clipped into `[lo, hi]`.
pub fn latency_to_reward(latency: f64, lo: f64, hi: f64) -> Result<f64, EnvError> {
    if lo >= hi {
        return Err(EnvError::DegenerateRange(lo));
    }
    let clipped = latency.clamp(lo, hi);
    Ok((hi - clipped) / (hi - lo))
}

/// A stateful source of frames. Frame indices are 1-based and must be
/// requested consecutively.
pub trait Environment {
    fn n_tasks(&self) -> usize;
    fn n_edges(&self) -> usize;
    fn m_devices(&self) -> usize;
    fn next_frame(&mut self, t: usize) -> Result<FrameRewards, EnvError>;
}

fn check_consecutive(expected: &mut usize, t: usize) {
    assert!(t >= 1, "frame indices are 1-based");
    assert_eq!(*expected, t, "frames must be requested consecutively");
    *expected += 1;
}

/// Same template every frame.
pub struct ConstantEnv {
    template: FrameRewards,
    next_t: usize,
}

impl ConstantEnv {
    pub fn new(template: FrameRewards) -> Result<Self, EnvError> {
        if !template.in_unit_range() {
            return Err(EnvError::BadParameter("template rewards outside [0,1]".into()));
        }
        Ok(ConstantEnv { template, next_t: 1 })
    }

    pub fn uniform_value(graph: &TaskGraph, m: usize, value: f64) -> Result<Self, EnvError> {
        Self::new(FrameRewards::filled(graph.n_tasks(), graph.n_edges(), m, value))
    }
}

impl Environment for ConstantEnv {
    fn n_tasks(&self) -> usize {
        self.template.n_tasks()
    }

    fn n_edges(&self) -> usize {
        self.template.n_edges()
    }

    fn m_devices(&self) -> usize {
        self.template.m_devices()
    }

    fn next_frame(&mut self, t: usize) -> Result<FrameRewards, EnvError> {
        check_consecutive(&mut self.next_t, t);
        Ok(self.template.clone())
    }
}

/// Every entry drawn independently from `U[0, 1)` each frame.
pub struct IidUniformEnv {
    n_tasks: usize,
    n_edges: usize,
    m_devices: usize,
    rng: ChaCha8Rng,
    next_t: usize,
}

impl IidUniformEnv {
    pub fn new(graph: &TaskGraph, m_devices: usize, seed: u64, stream: u64) -> Self {
        IidUniformEnv {
            n_tasks: graph.n_tasks(),
            n_edges: graph.n_edges(),
            m_devices,
            rng: seeded_stream(seed, stream),
            next_t: 1,
        }
    }
}

impl Environment for IidUniformEnv {
    fn n_tasks(&self) -> usize {
        self.n_tasks
    }

    fn n_edges(&self) -> usize {
        self.n_edges
    }

    fn m_devices(&self) -> usize {
        self.m_devices
    }

    fn next_frame(&mut self, t: usize) -> Result<FrameRewards, EnvError> {
        check_consecutive(&mut self.next_t, t);
        let mut fr = FrameRewards::zeros(self.n_tasks, self.n_edges, self.m_devices);
        for v in fr.node.iter_mut().chain(fr.edge.iter_mut()) {
            *v = self.rng.random::<f64>();
        }
        Ok(fr)
    }
}

/// Adversarial rotation: one device pays `hi` per node while the favor
/// lasts, everything else pays `lo`; edges pay `hi` only when both endpoints
/// sit on the favored device.
pub struct SwitchingAdversaryEnv {
    n_tasks: usize,
    n_edges: usize,
    m_devices: usize,
    period: usize,
    hi: f64,
    lo: f64,
    next_t: usize,
}

impl SwitchingAdversaryEnv {
    pub fn new(
        graph: &TaskGraph,
        m_devices: usize,
        period: usize,
        hi: f64,
        lo: f64,
    ) -> Result<Self, EnvError> {
        if period == 0 {
            return Err(EnvError::BadParameter("period must be positive".into()));
        }
        if !(0.0..=1.0).contains(&hi) || !(0.0..=1.0).contains(&lo) {
            return Err(EnvError::BadParameter("levels must lie in [0,1]".into()));
        }
        Ok(SwitchingAdversaryEnv {
            n_tasks: graph.n_tasks(),
            n_edges: graph.n_edges(),
            m_devices,
            period,
            hi,
            lo,
            next_t: 1,
        })
    }

    pub fn favored_device(&self, t: usize) -> usize {
        ((t - 1) / self.period) % self.m_devices
    }
}

impl Environment for SwitchingAdversaryEnv {
    fn n_tasks(&self) -> usize {
        self.n_tasks
    }

    fn n_edges(&self) -> usize {
        self.n_edges
    }

    fn m_devices(&self) -> usize {
        self.m_devices
    }

    fn next_frame(&mut self, t: usize) -> Result<FrameRewards, EnvError> {
        check_consecutive(&mut self.next_t, t);
        let fav = self.favored_device(t);
        let mut fr = FrameRewards::zeros(self.n_tasks, self.n_edges, self.m_devices);
        for i in 0..self.n_tasks {
            for j in 0..self.m_devices {
                fr.set_node(i, j, if j == fav { self.hi } else { self.lo });
            }
        }
        for e in 0..self.n_edges {
            for j in 0..self.m_devices {
                for k in 0..self.m_devices {
                    fr.set_edge(e, j, k, if j == fav && k == fav { self.hi } else { self.lo });
                }
            }
        }
        Ok(fr)
    }
}

// ---------------------------------------------------------------------------
// Synthetic device traces
// ---------------------------------------------------------------------------

/// Measured iteration-count bounds per device: uniform draws within these
/// bounds model how long a probe task runs on each device.
pub const DEVICE_ITERATION_BOUNDS: [(u32, u32); 10] = [
    (14_031, 32_989), // device 18
    (37_259, 54_186), // device 21
    (23_669, 65_500), // device 22
    (61_773, 65_500), // device 24
    (19_475, 44_902), // device 26
    (10_839, 58_526), // device 28
    (10_868, 28_770), // device 31
    (41_467, 64_191), // device 36
    (12_386, 27_992), // device 38
    (15_447, 32_423), // device 41
];

/// Device-trace model: iteration bounds for compute latency, per-pair mean
/// transfer latencies with log-normal jitter, and the normalization ranges
/// calibrated from a pre-sampled batch.
#[derive(Debug, Clone)]
pub struct TraceDeviceModel {
    pub iter_bounds: Vec<(f64, f64)>,
    pub us_per_iteration: f64,
    /// `M*M` row-major mean transfer latency in microseconds; zero diagonal.
    pub pair_mean_latency: Vec<f64>,
    pub sigma_log: f64,
    pub node_range: (f64, f64),
    pub edge_range: (f64, f64),
}

const CALIBRATION_SAMPLES: usize = 10_000;

impl TraceDeviceModel {
    /// Builds the model for the first `m` devices of the measurement table.
    /// Pair means are drawn once from the seeded stream; the reward
    /// normalization ranges come from a 10k-sample calibration batch.
    pub fn synthesize(m: usize, us_per_iteration: f64, seed: u64) -> Result<Self, EnvError> {
        if m == 0 || m > DEVICE_ITERATION_BOUNDS.len() {
            return Err(EnvError::BadParameter(format!(
                "device count must be in 1..={}",
                DEVICE_ITERATION_BOUNDS.len()
            )));
        }
        if us_per_iteration <= 0.0 {
            return Err(EnvError::BadParameter("us_per_iteration must be positive".into()));
        }
        let mut rng = seeded_stream(seed, STREAM_CALIBRATION);
        let iter_bounds: Vec<(f64, f64)> = DEVICE_ITERATION_BOUNDS[..m]
            .iter()
            .map(|&(lo, hi)| (lo as f64, hi as f64))
            .collect();

        let mut pair_mean_latency = vec![0.0; m * m];
        for j in 0..m {
            for k in 0..m {
                if j != k {
                    pair_mean_latency[j * m + k] = rng.random_range(8_000.0..60_000.0);
                }
            }
        }
        let sigma_log = 0.25;

        let mut model = TraceDeviceModel {
            iter_bounds,
            us_per_iteration,
            pair_mean_latency,
            sigma_log,
            node_range: (0.0, 1.0),
            edge_range: (0.0, 1.0),
        };

        // The calibration batch fixes the latency->reward ranges for the run.
        let mut node_lo = f64::INFINITY;
        let mut node_hi = f64::NEG_INFINITY;
        for s in 0..CALIBRATION_SAMPLES {
            let lat = model.sample_compute_latency(s % m, &mut rng);
            node_lo = node_lo.min(lat);
            node_hi = node_hi.max(lat);
        }
        let mut edge_lo: f64 = 0.0; // co-located transfers cost nothing
        let mut edge_hi = f64::NEG_INFINITY;
        let mut pairs: Vec<(usize, usize)> = Vec::new();
        for j in 0..m {
            for k in 0..m {
                if j != k {
                    pairs.push((j, k));
                }
            }
        }
        if pairs.is_empty() {
            // Single device: every transfer is co-located.
            edge_hi = 1.0;
            edge_lo = 0.0;
        } else {
            for s in 0..CALIBRATION_SAMPLES {
                let (j, k) = pairs[s % pairs.len()];
                let lat = model.sample_transfer_latency(j, k, &mut rng);
                edge_lo = edge_lo.min(lat);
                edge_hi = edge_hi.max(lat);
            }
        }
        if node_lo >= node_hi {
            return Err(EnvError::DegenerateRange(node_lo));
        }
        model.node_range = (node_lo, node_hi);
        model.edge_range = (edge_lo, edge_hi);
        Ok(model)
    }

    fn sample_compute_latency(&self, device: usize, rng: &mut ChaCha8Rng) -> f64 {
        let (lo, hi) = self.iter_bounds[device];
        rng.random_range(lo..hi) * self.us_per_iteration
    }

    fn sample_transfer_latency(&self, from: usize, to: usize, rng: &mut ChaCha8Rng) -> f64 {
        if from == to {
            return 0.0;
        }
        let m = self.iter_bounds.len();
        let mean = self.pair_mean_latency[from * m + to];
        let sigma = self.sigma_log;
        // Log-normal with the requested mean: mu = ln(mean) - sigma^2/2.
        let dist = LogNormal::new(mean.ln() - sigma * sigma / 2.0, sigma)
            .expect("valid log-normal parameters");
        dist.sample(rng)
    }
}

/// Synthetic trace environment driven by [`TraceDeviceModel`].
pub struct TableTraceEnv {
    n_tasks: usize,
    n_edges: usize,
    model: TraceDeviceModel,
    rng: ChaCha8Rng,
    next_t: usize,
}

const STREAM_CALIBRATION: u64 = 0;
const STREAM_FRAMES: u64 = 1;

impl TableTraceEnv {
    pub fn new(
        graph: &TaskGraph,
        m_devices: usize,
        us_per_iteration: f64,
        seed: u64,
        replica: u64,
    ) -> Result<Self, EnvError> {
        // The device model (pair means + calibration) is shared across
        // replicas; only the frame stream differs.
        let model = TraceDeviceModel::synthesize(m_devices, us_per_iteration, seed)?;
        Ok(TableTraceEnv {
            n_tasks: graph.n_tasks(),
            n_edges: graph.n_edges(),
            model,
            rng: seeded_stream(seed, STREAM_FRAMES + replica),
            next_t: 1,
        })
    }

    pub fn model(&self) -> &TraceDeviceModel {
        &self.model
    }
}

impl Environment for TableTraceEnv {
    fn n_tasks(&self) -> usize {
        self.n_tasks
    }

    fn n_edges(&self) -> usize {
        self.n_edges
    }

    fn m_devices(&self) -> usize {
        self.model.iter_bounds.len()
    }

    fn next_frame(&mut self, t: usize) -> Result<FrameRewards, EnvError> {
        check_consecutive(&mut self.next_t, t);
        let m = self.m_devices();
        let (nlo, nhi) = self.model.node_range;
        let (elo, ehi) = self.model.edge_range;
        let mut fr = FrameRewards::zeros(self.n_tasks, self.n_edges, m);
        for i in 0..self.n_tasks {
            for j in 0..m {
                let lat = self.model.sample_compute_latency(j, &mut self.rng);
                fr.set_node(i, j, latency_to_reward(lat, nlo, nhi)?);
            }
        }
        for e in 0..self.n_edges {
            for j in 0..m {
                for k in 0..m {
                    let lat = self.model.sample_transfer_latency(j, k, &mut self.rng);
                    fr.set_edge(e, j, k, latency_to_reward(lat, elo, ehi)?);
                }
            }
        }
        Ok(fr)
    }
}

// ---------------------------------------------------------------------------
// Two-state Markov environment with a mid-run swap
// ---------------------------------------------------------------------------

/// Two-device scenario where each device's quality follows a two-state
/// ("good"/"bad") Markov chain; at `swap_frame` the two transition matrices
/// exchange. Node rewards equal the owning device's current level; edge
/// rewards are neutral (1.0), matching a setting where channel cost is
/// negligible.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MarkovSwapConfig {
    /// Row-stochastic matrices `[[p_gg, p_gb], [p_bg, p_bb]]` per device.
    pub transitions: [[[f64; 2]; 2]; 2],
    pub good_reward: f64,
    pub bad_reward: f64,
    pub swap_frame: usize,
    /// Probability each device starts in the good state.
    pub start_good_prob: [f64; 2],
}

impl Default for MarkovSwapConfig {
    fn default() -> Self {
        MarkovSwapConfig {
            transitions: [[[0.95, 0.05], [0.05, 0.95]], [[0.5, 0.5], [0.5, 0.5]]],
            good_reward: 0.9,
            bad_reward: 0.1,
            swap_frame: 100,
            start_good_prob: [1.0, 1.0],
        }
    }
}

impl MarkovSwapConfig {
    /// A scenario with a strongly-good and a strongly-bad device whose roles
    /// exchange at the swap: the shape used by the adaptivity experiment.
    pub fn strong_contrast(swap_frame: usize) -> Self {
        MarkovSwapConfig {
            transitions: [[[0.95, 0.05], [0.90, 0.10]], [[0.10, 0.90], [0.05, 0.95]]],
            good_reward: 0.9,
            bad_reward: 0.1,
            swap_frame,
            start_good_prob: [1.0, 0.0],
        }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        for t in &self.transitions {
            for row in t {
                if (row[0] + row[1] - 1.0).abs() > 1e-9 || row[0] < 0.0 || row[1] < 0.0 {
                    return Err(EnvError::BadParameter("transition rows must sum to 1".into()));
                }
            }
        }
        for level in [self.good_reward, self.bad_reward] {
            if !(0.0..=1.0).contains(&level) {
                return Err(EnvError::BadParameter("reward levels must lie in [0,1]".into()));
            }
        }
        Ok(())
    }
}

pub struct MarkovSwapEnv {
    n_tasks: usize,
    n_edges: usize,
    config: MarkovSwapConfig,
    /// Current transition matrices; exchanged at the swap frame.
    transitions: [[[f64; 2]; 2]; 2],
    /// true = good.
    states: [bool; 2],
    swapped: bool,
    rng: ChaCha8Rng,
    next_t: usize,
}

impl MarkovSwapEnv {
    pub fn new(
        graph: &TaskGraph,
        config: MarkovSwapConfig,
        seed: u64,
        replica: u64,
    ) -> Result<Self, EnvError> {
        config.validate()?;
        let mut rng = seeded_stream(seed, replica);
        let states = [
            rng.random::<f64>() < config.start_good_prob[0],
            rng.random::<f64>() < config.start_good_prob[1],
        ];
        Ok(MarkovSwapEnv {
            n_tasks: graph.n_tasks(),
            n_edges: graph.n_edges(),
            transitions: config.transitions,
            config,
            states,
            swapped: false,
            rng,
            next_t: 1,
        })
    }

    fn step_device(&mut self, device: usize) {
        let row = if self.states[device] { 0 } else { 1 };
        let p_good = self.transitions[device][row][0];
        self.states[device] = self.rng.random::<f64>() < p_good;
    }
}

impl Environment for MarkovSwapEnv {
    fn n_tasks(&self) -> usize {
        self.n_tasks
    }

    fn n_edges(&self) -> usize {
        self.n_edges
    }

    fn m_devices(&self) -> usize {
        2
    }

    fn next_frame(&mut self, t: usize) -> Result<FrameRewards, EnvError> {
        check_consecutive(&mut self.next_t, t);
        if !self.swapped && t >= self.config.swap_frame {
            self.transitions.swap(0, 1);
            self.swapped = true;
        }
        if t > 1 {
            self.step_device(0);
            self.step_device(1);
        }
        let mut fr = FrameRewards::zeros(self.n_tasks, self.n_edges, 2);
        for j in 0..2 {
            let level = if self.states[j] { self.config.good_reward } else { self.config.bad_reward };
            for i in 0..self.n_tasks {
                fr.set_node(i, j, level);
            }
        }
        for e in 0..self.n_edges {
            for j in 0..2 {
                for k in 0..2 {
                    fr.set_edge(e, j, k, 1.0);
                }
            }
        }
        Ok(fr)
    }
}

// ---------------------------------------------------------------------------
// Trace CSV format and replay
// ---------------------------------------------------------------------------

/// Builds the trace header: `t`, node columns in (task asc, device asc)
/// order, then edge columns in (edge-list order, device asc, device asc)
/// order. Labels are 1-based.
pub fn trace_header(graph: &TaskGraph, m_devices: usize) -> String {
    let mut cols = vec!["t".to_string()];
    for i in 0..graph.n_tasks() {
        for j in 0..m_devices {
            cols.push(format!("node:{}:{}", i + 1, j + 1));
        }
    }
    for &(a, b) in graph.edges() {
        for j in 0..m_devices {
            for k in 0..m_devices {
                cols.push(format!("edge:{}-{}:{}-{}", a + 1, b + 1, j + 1, k + 1));
            }
        }
    }
    cols.join(",")
}

/// Serializes one frame into a CSV row. Values round-trip exactly through
/// Rust's shortest-representation float formatting.
pub fn trace_row(t: usize, frame: &FrameRewards) -> String {
    let mut row = String::with_capacity(16 * (frame.node.len() + frame.edge.len()));
    row.push_str(&t.to_string());
    for v in frame.node.iter().chain(&frame.edge) {
        row.push(',');
        row.push_str(&v.to_string());
    }
    row
}

pub fn write_trace<W: std::io::Write>(
    out: &mut W,
    graph: &TaskGraph,
    m_devices: usize,
    frames: &[FrameRewards],
) -> Result<(), EnvError> {
    writeln!(out, "{}", trace_header(graph, m_devices))?;
    for (idx, frame) in frames.iter().enumerate() {
        writeln!(out, "{}", trace_row(idx + 1, frame))?;
    }
    Ok(())
}

pub fn read_trace(
    path: &std::path::Path,
    graph: &TaskGraph,
    m_devices: usize,
) -> Result<Vec<FrameRewards>, EnvError> {
    let text = std::fs::read_to_string(path)?;
    parse_trace(&text, graph, m_devices)
}

pub fn parse_trace(
    text: &str,
    graph: &TaskGraph,
    m_devices: usize,
) -> Result<Vec<FrameRewards>, EnvError> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| EnvError::Parse("empty trace".into()))?;
    let expected = trace_header(graph, m_devices);
    if header != expected {
        return Err(EnvError::Parse(format!(
            "header mismatch: expected `{expected}`, found `{header}`"
        )));
    }
    let mut frames = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let t: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| EnvError::Parse(format!("bad frame index on line {}", lineno + 2)))?;
        if t != frames.len() + 1 {
            return Err(EnvError::Parse(format!("non-consecutive frame index {t}")));
        }
        let mut fr = FrameRewards::zeros(graph.n_tasks(), graph.n_edges(), m_devices);
        for slot in fr.node.iter_mut().chain(fr.edge.iter_mut()) {
            let field = parts
                .next()
                .ok_or_else(|| EnvError::Parse(format!("short row on line {}", lineno + 2)))?;
            *slot = field
                .parse::<f64>()
                .map_err(|e| EnvError::Parse(format!("line {}: {e}", lineno + 2)))?;
        }
        if parts.next().is_some() {
            return Err(EnvError::Parse(format!("long row on line {}", lineno + 2)));
        }
        if !fr.in_unit_range() {
            return Err(EnvError::Parse(format!(
                "rewards outside [0,1] on line {}",
                lineno + 2
            )));
        }
        frames.push(fr);
    }
    Ok(frames)
}

/// Replays frames loaded from a trace file.
pub struct ReplayEnv {
    frames: Vec<FrameRewards>,
    n_tasks: usize,
    n_edges: usize,
    m_devices: usize,
    next_t: usize,
}

impl ReplayEnv {
    pub fn from_frames(
        frames: Vec<FrameRewards>,
        graph: &TaskGraph,
        m_devices: usize,
    ) -> Result<Self, EnvError> {
        for fr in &frames {
            if fr.n_tasks() != graph.n_tasks()
                || fr.n_edges() != graph.n_edges()
                || fr.m_devices() != m_devices
            {
                return Err(EnvError::DimensionMismatch("frame shape vs graph".into()));
            }
        }
        Ok(ReplayEnv {
            frames,
            n_tasks: graph.n_tasks(),
            n_edges: graph.n_edges(),
            m_devices,
            next_t: 1,
        })
    }

    pub fn from_file(
        path: &std::path::Path,
        graph: &TaskGraph,
        m_devices: usize,
    ) -> Result<Self, EnvError> {
        Self::from_frames(read_trace(path, graph, m_devices)?, graph, m_devices)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

impl Environment for ReplayEnv {
    fn n_tasks(&self) -> usize {
        self.n_tasks
    }

    fn n_edges(&self) -> usize {
        self.n_edges
    }

    fn m_devices(&self) -> usize {
        self.m_devices
    }

    fn next_frame(&mut self, t: usize) -> Result<FrameRewards, EnvError> {
        check_consecutive(&mut self.next_t, t);
        self.frames.get(t - 1).cloned().ok_or(EnvError::TraceExhausted(t))
    }
}

/// One ChaCha stream per (seed, stream) pair.
pub fn seeded_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::Assignment;

    fn chain(n: usize) -> TaskGraph {
        TaskGraph::new(n, (0..n - 1).map(|i| (i, i + 1)).collect(), n - 1).unwrap()
    }

    #[test]
    fn latency_normalization_endpoints() {
        assert_eq!(latency_to_reward(10.0, 0.0, 10.0).unwrap(), 0.0);
        assert_eq!(latency_to_reward(0.0, 0.0, 10.0).unwrap(), 1.0);
        assert_eq!(latency_to_reward(5.0, 0.0, 10.0).unwrap(), 0.5);
        // Clipping.
        assert_eq!(latency_to_reward(-3.0, 0.0, 10.0).unwrap(), 1.0);
        assert_eq!(latency_to_reward(99.0, 0.0, 10.0).unwrap(), 0.0);
        assert!(matches!(
            latency_to_reward(1.0, 2.0, 2.0),
            Err(EnvError::DegenerateRange(_))
        ));
    }

    #[test]
    fn constant_env_yields_template() {
        let g = chain(2);
        let mut env = ConstantEnv::uniform_value(&g, 3, 0.5).unwrap();
        let fr = env.next_frame(1).unwrap();
        assert!(fr.node_values().iter().all(|&v| v == 0.5));
        assert!(fr.edge_values().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn feedback_selects_chosen_entries() {
        let g = chain(1);
        let mut fr = FrameRewards::zeros(1, 0, 3);
        fr.set_node(0, 1, 0.7);
        let fb = feedback_for(&fr, &g, &Assignment::new(vec![1])).unwrap();
        assert_eq!(fb.node_rewards, vec![0.7]);
        assert!(fb.edge_rewards.is_empty());

        let g = chain(2);
        let mut fr = FrameRewards::zeros(2, 1, 2);
        fr.set_node(0, 0, 0.2);
        fr.set_node(1, 0, 0.3);
        fr.set_edge(0, 0, 0, 0.9);
        let fb = feedback_for(&fr, &g, &Assignment::new(vec![0, 0])).unwrap();
        assert_eq!(fb.node_rewards, vec![0.2, 0.3]);
        assert_eq!(fb.edge_rewards, vec![0.9]);
    }

    #[test]
    fn feedback_matches_direct_indexing_on_random_draws() {
        use rand::Rng;
        let g = TaskGraph::new(4, vec![(0, 2), (1, 2), (2, 3)], 3).unwrap();
        let m = 3;
        let mut env = IidUniformEnv::new(&g, m, 99, 0);
        let mut rng = seeded_stream(123, 0);
        for t in 1..=20 {
            let fr = env.next_frame(t).unwrap();
            let x: Vec<usize> = (0..4).map(|_| rng.random_range(0..m)).collect();
            let fb = feedback_for(&fr, &g, &Assignment::new(x.clone())).unwrap();
            for (i, &d) in x.iter().enumerate() {
                assert_eq!(fb.node_rewards[i], fr.node(i, d));
            }
            for (eidx, &(a, b)) in g.edges().iter().enumerate() {
                assert_eq!(fb.edge_rewards[eidx], fr.edge(eidx, x[a], x[b]));
            }
        }
    }

    #[test]
    fn feedback_dimension_mismatch() {
        let g = chain(2);
        let fr = FrameRewards::zeros(2, 1, 2);
        assert!(feedback_for(&fr, &g, &Assignment::new(vec![0])).is_err());
        assert!(feedback_for(&fr, &g, &Assignment::new(vec![0, 5])).is_err());
    }

    #[test]
    fn same_seed_same_frames_across_env_kinds() {
        let run = |mk: &dyn Fn() -> Box<dyn Environment>| -> Vec<FrameRewards> {
            let mut env = mk();
            (1..=10).map(|t| env.next_frame(t).unwrap()).collect()
        };
        let kinds: Vec<Box<dyn Fn() -> Box<dyn Environment>>> = vec![
            Box::new(|| Box::new(IidUniformEnv::new(&chain(3), 3, 7, 0))),
            Box::new(|| Box::new(TableTraceEnv::new(&chain(3), 4, 1.0, 7, 0).unwrap())),
            Box::new(|| {
                Box::new(MarkovSwapEnv::new(&chain(3), MarkovSwapConfig::default(), 7, 0).unwrap())
            }),
        ];
        for mk in &kinds {
            let a = run(mk);
            let b = run(mk);
            for (x, y) in a.iter().zip(&b) {
                assert!(x.bits_eq(y));
            }
            for fr in &a {
                assert!(fr.in_unit_range());
            }
        }
    }

    #[test]
    fn trace_device_bounds_respected() {
        // Device 18 (index 0): iterations within the measured bounds, and
        // spanning most of the range over many samples.
        let model = TraceDeviceModel::synthesize(2, 1.0, 5).unwrap();
        let mut rng = seeded_stream(5, 9);
        let (lo, hi) = model.iter_bounds[0];
        assert_eq!((lo, hi), (14_031.0, 32_989.0));
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for _ in 0..5_000 {
            let lat = model.sample_compute_latency(0, &mut rng);
            assert!((lo..hi).contains(&lat));
            min = min.min(lat);
            max = max.max(lat);
        }
        let span = hi - lo;
        assert!(min < lo + 0.05 * span);
        assert!(max > hi - 0.05 * span);
    }

    #[test]
    fn markov_stationary_means_exchange_at_swap() {
        let g = chain(2);
        let cfg = MarkovSwapConfig::strong_contrast(5_000);
        let mut env = MarkovSwapEnv::new(&g, cfg, 11, 0).unwrap();
        let mut pre = [0.0f64; 2];
        let mut post = [0.0f64; 2];
        for t in 1..=10_000 {
            let fr = env.next_frame(t).unwrap();
            let target = if t < 5_000 { &mut pre } else { &mut post };
            for (j, slot) in target.iter_mut().enumerate() {
                *slot += fr.node(0, j);
            }
        }
        let pre = [pre[0] / 4_999.0, pre[1] / 4_999.0];
        let post = [post[0] / 5_001.0, post[1] / 5_001.0];
        // Strong device ~0.86 mean, weak ~0.14; they exchange at the swap.
        assert!((pre[0] - post[1]).abs() < 0.05, "pre {pre:?} post {post:?}");
        assert!((pre[1] - post[0]).abs() < 0.05, "pre {pre:?} post {post:?}");
        assert!(pre[0] > 0.7 && post[0] < 0.3);
    }

    #[test]
    fn trace_round_trip_is_bit_exact() {
        let g = TaskGraph::new(3, vec![(0, 2), (1, 2)], 2).unwrap();
        let m = 3;
        let mut env = IidUniformEnv::new(&g, m, 21, 0);
        let frames: Vec<FrameRewards> = (1..=5).map(|t| env.next_frame(t).unwrap()).collect();
        let mut buf = Vec::new();
        write_trace(&mut buf, &g, m, &frames).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let parsed = parse_trace(&text, &g, m).unwrap();
        assert_eq!(parsed.len(), frames.len());
        for (a, b) in frames.iter().zip(&parsed) {
            assert!(a.bits_eq(b));
        }
    }

    #[test]
    fn replay_exhaustion_reported() {
        let g = chain(2);
        let frames = vec![FrameRewards::zeros(2, 1, 2)];
        let mut env = ReplayEnv::from_frames(frames, &g, 2).unwrap();
        env.next_frame(1).unwrap();
        assert!(matches!(env.next_frame(2), Err(EnvError::TraceExhausted(2))));
    }

    #[test]
    fn header_layout_matches_convention() {
        let g = chain(2);
        assert_eq!(
            trace_header(&g, 2),
            "t,node:1:1,node:1:2,node:2:1,node:2:2,\
             edge:1-2:1-1,edge:1-2:1-2,edge:1-2:2-1,edge:1-2:2-2"
        );
    }
}
