//! The exponential-weights learners.
//!
//! Both agents play the same protocol: `choose` a full assignment for frame
//! `t`, receive bandit feedback for exactly that assignment, `observe` it,
//! repeat. Internally each keeps importance-weighted running sums (observed
//! reward divided by the probability of having observed it), so that every
//! (task, device) and (edge, device-pair) estimate is unbiased regardless of
//! what the environment does.
//!
//! [`MabstaAgent`] is the production build: it stores only the `N*M` node
//! and `|E|*M^2` edge sums and derives everything else from conditioned
//! weight-sum solves ([`crate::dp`]): the sampling distribution by chain
//! rule over per-task conditionals, and the observation probabilities from
//! node/edge marginals. [`NaiveAgent`] keeps an explicit weight per arm and
//! enumerates; it exists as the reference the efficient build must match
//! choice-for-choice under a shared seed.
//!
//! Both agents draw through the same mixture sampler (an exploration coin,
//! then either uniform device draws or per-task conditional draws), so their
//! random streams stay aligned frame by frame.

use crate::bounds::{coupled_alpha, varying_gamma, ProblemDims};
use crate::dp::{
    assignment_score, checked_arm_count, decode_arm, ConditionalFix, CumulativeEstimates,
    DpError, WeightDp,
};
use crate::env::BanditFeedback;
use crate::graph::TaskGraph;
use crate::logsumexp::{log_sum_exp, softmax};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum AgentError {
    #[error("expected frame {expected}, got {got}")]
    OutOfOrderFrame { expected: usize, got: usize },
    #[error("reward {0} outside [0, 1]")]
    RewardOutOfRange(f64),
    #[error("arm space M^N exceeds the naive agent's cap")]
    TooManyArms,
    #[error("graph shape not supported by the efficient agent")]
    UnsupportedStructure,
    #[error("bad agent parameters: {0}")]
    BadParams(String),
    #[error(transparent)]
    Dp(#[from] DpError),
}

/// One complete task-to-device assignment (0-based devices).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Assignment(Vec<usize>);

impl Assignment {
    pub fn new(devices: Vec<usize>) -> Self {
        Assignment(devices)
    }

    pub fn devices(&self) -> &[usize] {
        &self.0
    }

    pub fn device(&self, task: usize) -> usize {
        self.0[task]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// 1-based external form.
    pub fn to_external(&self) -> Vec<usize> {
        self.0.iter().map(|d| d + 1).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum GammaMode {
    Fixed,
    /// Decaying per-frame schedule; recomputes the coupled step size each
    /// frame alongside it.
    Varying,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum AlphaMode {
    /// `alpha = gamma / (M (N + |E| M))`.
    Coupled,
    Explicit(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentParams {
    pub gamma: f64,
    pub gamma_mode: GammaMode,
    pub alpha_mode: AlphaMode,
    pub seed: u64,
}

impl AgentParams {
    pub fn fixed(gamma: f64, seed: u64) -> Self {
        AgentParams { gamma, gamma_mode: GammaMode::Fixed, alpha_mode: AlphaMode::Coupled, seed }
    }

    pub fn varying(seed: u64) -> Self {
        AgentParams {
            gamma: 1.0,
            gamma_mode: GammaMode::Varying,
            alpha_mode: AlphaMode::Coupled,
            seed,
        }
    }

    fn validate(&self) -> Result<(), AgentError> {
        if matches!(self.gamma_mode, GammaMode::Fixed) && !(self.gamma > 0.0 && self.gamma <= 1.0)
        {
            return Err(AgentError::BadParams(format!(
                "gamma must lie in (0, 1], got {}",
                self.gamma
            )));
        }
        if let AlphaMode::Explicit(a) = self.alpha_mode {
            if a <= 0.0 {
                return Err(AgentError::BadParams(format!("alpha must be positive, got {a}")));
            }
        }
        Ok(())
    }
}

/// The choose/observe interface shared by learners and baselines.
pub trait Policy {
    fn name(&self) -> &str;
    fn choose(&mut self, t: usize) -> Assignment;
    fn observe(&mut self, t: usize, x: &Assignment, fb: &BanditFeedback)
        -> Result<(), AgentError>;
}

/// Marginals cached at draw time, consumed by the matching observe.
#[derive(Debug, Clone)]
struct PendingFrame {
    t: usize,
    x: Assignment,
    node_probs: Vec<f64>,
    edge_probs: Vec<f64>,
    alpha: f64,
}

/// Draws from the mixture `gamma * uniform + (1 - gamma) * conditional
/// chain`: one coin, then one draw per task in index order on either branch.
/// Both agents route through here so equal conditionals mean equal arms.
fn sample_mixture<F>(
    rng: &mut ChaCha8Rng,
    gamma: f64,
    n_tasks: usize,
    m_devices: usize,
    mut conditional: F,
) -> Vec<usize>
where
    F: FnMut(&[usize], usize) -> Vec<f64>,
{
    let coin: f64 = rng.random();
    let mut devices = Vec::with_capacity(n_tasks);
    if coin < gamma {
        for _ in 0..n_tasks {
            devices.push(rng.random_range(0..m_devices));
        }
    } else {
        for task in 0..n_tasks {
            let probs = conditional(&devices, task);
            let u: f64 = rng.random();
            devices.push(sample_cdf(&probs, u));
        }
    }
    devices
}

fn sample_cdf(probs: &[f64], u: f64) -> usize {
    let mut cum = 0.0;
    let mut last_positive = None;
    for (j, &p) in probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        last_positive = Some(j);
        cum += p;
        if u < cum {
            return j;
        }
    }
    last_positive.expect("conditional distribution has positive mass")
}

fn validate_feedback(fb: &BanditFeedback, n_tasks: usize, n_edges: usize) -> Result<(), AgentError> {
    if fb.node_rewards.len() != n_tasks || fb.edge_rewards.len() != n_edges {
        return Err(AgentError::BadParams("feedback shape mismatch".into()));
    }
    for &r in fb.node_rewards.iter().chain(&fb.edge_rewards) {
        if !(0.0..=1.0).contains(&r) {
            return Err(AgentError::RewardOutOfRange(r));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Efficient agent
// ---------------------------------------------------------------------------

/// Exponential-weights learner with polynomial state and per-frame work.
pub struct MabstaAgent {
    label: String,
    graph: TaskGraph,
    m_devices: usize,
    params: AgentParams,
    dims: ProblemDims,
    dp: WeightDp,
    estimates: CumulativeEstimates,
    rng: ChaCha8Rng,
    next_t: usize,
    pending: Option<PendingFrame>,
}

impl MabstaAgent {
    pub fn new(graph: &TaskGraph, m_devices: usize, params: AgentParams) -> Result<Self, AgentError> {
        params.validate()?;
        let dp = WeightDp::new(graph).map_err(|e| match e {
            DpError::UnsupportedStructure => AgentError::UnsupportedStructure,
            other => AgentError::Dp(other),
        })?;
        let dims = ProblemDims::new(graph.n_tasks(), graph.n_edges(), m_devices, 1)
            .map_err(|e| AgentError::BadParams(e.to_string()))?;
        Ok(MabstaAgent {
            label: "mabsta".to_string(),
            graph: graph.clone(),
            m_devices,
            params,
            dims,
            dp,
            estimates: CumulativeEstimates::for_graph(graph, m_devices),
            rng: crate::env::seeded_stream(params.seed, 0),
            next_t: 1,
            pending: None,
        })
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    /// The (gamma, alpha) pair in effect for frame `t`.
    pub fn params_for_frame(&self, t: usize) -> (f64, f64) {
        let gamma = match self.params.gamma_mode {
            GammaMode::Fixed => self.params.gamma,
            GammaMode::Varying => varying_gamma(&self.dims, t),
        };
        let alpha = match self.params.alpha_mode {
            AlphaMode::Coupled => coupled_alpha(&self.dims, gamma),
            AlphaMode::Explicit(a) => a,
        };
        (gamma, alpha)
    }

    pub fn estimates(&self) -> &CumulativeEstimates {
        &self.estimates
    }

    /// Restores the estimate tables from a snapshot (shape-checked). Only
    /// valid between frames.
    pub fn restore_estimates(&mut self, estimates: CumulativeEstimates) -> Result<(), AgentError> {
        if estimates.n_tasks() != self.graph.n_tasks()
            || estimates.n_edges() != self.graph.n_edges()
            || estimates.m_devices() != self.m_devices
        {
            return Err(AgentError::BadParams("snapshot shape mismatch".into()));
        }
        if self.pending.is_some() {
            return Err(AgentError::BadParams("cannot restore mid-frame".into()));
        }
        self.estimates = estimates;
        Ok(())
    }

    pub fn graph(&self) -> &TaskGraph {
        &self.graph
    }

    pub fn m_devices(&self) -> usize {
        self.m_devices
    }

    /// Probability that the current frame's draw produces `y`, under the
    /// full exploration-mixed distribution `(1-gamma) w_y / W + gamma / M^N`.
    pub fn arm_probability(&self, y: &Assignment) -> Result<f64, AgentError> {
        let t = self.pending.as_ref().map(|p| p.t).unwrap_or(self.next_t);
        let (gamma, alpha) = self.params_for_frame(t);
        let log_w = alpha * assignment_score(&self.graph, &self.estimates, y.devices());
        let log_total = self.dp.log_weight_sum(&self.estimates, alpha, &ConditionalFix::empty())?;
        let arms = (self.m_devices as f64).powi(self.graph.n_tasks() as i32);
        Ok((1.0 - gamma) * (log_w - log_total).exp() + gamma / arms)
    }

    /// Mixture marginals of the realized coordinates, cached for observe.
    fn observed_marginals(&self, x: &Assignment, gamma: f64, alpha: f64) -> (Vec<f64>, Vec<f64>) {
        let log_total = self
            .dp
            .log_weight_sum(&self.estimates, alpha, &ConditionalFix::empty())
            .expect("unconditioned solve");
        let m = self.m_devices as f64;
        let node_probs = crate::exec::map_collect(self.graph.n_tasks(), |i| {
            let fix = ConditionalFix::from_pairs(&[(i, x.device(i))]).unwrap();
            let s = self.dp.log_weight_sum(&self.estimates, alpha, &fix).unwrap();
            (1.0 - gamma) * (s - log_total).exp() + gamma / m
        });
        let edges = self.graph.edges().to_vec();
        let edge_probs = crate::exec::map_collect(edges.len(), |eidx| {
            let (a, b) = edges[eidx];
            let fix = ConditionalFix::from_pairs(&[(a, x.device(a)), (b, x.device(b))]).unwrap();
            let s = self.dp.log_weight_sum(&self.estimates, alpha, &fix).unwrap();
            (1.0 - gamma) * (s - log_total).exp() + gamma / (m * m)
        });
        (node_probs, edge_probs)
    }
}

impl Policy for MabstaAgent {
    fn name(&self) -> &str {
        &self.label
    }

    fn choose(&mut self, t: usize) -> Assignment {
        assert!(self.pending.is_none(), "choose called twice without observe");
        assert_eq!(t, self.next_t, "frames must alternate choose/observe in order");
        let (gamma, alpha) = self.params_for_frame(t);
        let n = self.graph.n_tasks();
        let m = self.m_devices;
        // Split the borrow: the conditional closure reads dp + estimates.
        let dp = &self.dp;
        let estimates = &self.estimates;
        let devices = sample_mixture(&mut self.rng, gamma, n, m, |prefix, task| {
            let mut log_sums = Vec::with_capacity(m);
            for j in 0..m {
                let mut fix = ConditionalFix::empty();
                for (k, &d) in prefix.iter().enumerate() {
                    fix.pin(k, d).expect("prefix is conflict-free");
                }
                fix.pin(task, j).expect("task not in prefix");
                log_sums.push(
                    dp.log_weight_sum(estimates, alpha, &fix).expect("plan accepts any fix"),
                );
            }
            softmax(&log_sums)
        });
        let x = Assignment::new(devices);
        let (node_probs, edge_probs) = self.observed_marginals(&x, gamma, alpha);
        self.pending = Some(PendingFrame { t, x: x.clone(), node_probs, edge_probs, alpha });
        x
    }

    fn observe(&mut self, t: usize, x: &Assignment, fb: &BanditFeedback) -> Result<(), AgentError> {
        if !matches!(&self.pending, Some(p) if p.t == t && &p.x == x) {
            return Err(AgentError::OutOfOrderFrame { expected: self.next_t, got: t });
        }
        validate_feedback(fb, self.graph.n_tasks(), self.graph.n_edges())?;
        let pending = self.pending.take().expect("matched above");

        let mut scaled_total = 0.0;
        for (i, &r) in fb.node_rewards.iter().enumerate() {
            let inc = r / pending.node_probs[i];
            scaled_total += inc;
            self.estimates.add_node(i, x.device(i), inc);
        }
        for (eidx, &(a, b)) in self.graph.edges().iter().enumerate() {
            let inc = fb.edge_rewards[eidx] / pending.edge_probs[eidx];
            scaled_total += inc;
            self.estimates.add_edge(eidx, x.device(a), x.device(b), inc);
        }
        // With the coupled step size, no arm's scaled estimate can pass 1;
        // the maximum over arms is attained at the played assignment.
        if matches!(self.params.alpha_mode, AlphaMode::Coupled) {
            debug_assert!(
                pending.alpha * scaled_total <= 1.0 + 1e-9,
                "scaled estimate exceeded 1: {}",
                pending.alpha * scaled_total
            );
        }
        self.next_t = t + 1;
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Naive reference agent
// ---------------------------------------------------------------------------

/// Literal per-arm implementation: one explicit (log) weight per assignment.
/// Exponential in N; guarded, and only suitable as a reference.
pub struct NaiveAgent {
    label: String,
    graph: TaskGraph,
    m_devices: usize,
    gamma: f64,
    alpha: f64,
    seed_rng: ChaCha8Rng,
    log_w: Vec<f64>,
    estimates: CumulativeEstimates,
    next_t: usize,
    pending: Option<PendingFrame>,
    scratch: Vec<usize>,
}

impl NaiveAgent {
    pub fn new(graph: &TaskGraph, m_devices: usize, params: AgentParams) -> Result<Self, AgentError> {
        params.validate()?;
        if !matches!(params.gamma_mode, GammaMode::Fixed) {
            return Err(AgentError::BadParams(
                "the per-arm reference requires a fixed exploration rate".into(),
            ));
        }
        let arms = checked_arm_count(graph.n_tasks(), m_devices)
            .map_err(|_| AgentError::TooManyArms)?;
        let dims = ProblemDims::new(graph.n_tasks(), graph.n_edges(), m_devices, 1)
            .map_err(|e| AgentError::BadParams(e.to_string()))?;
        let alpha = match params.alpha_mode {
            AlphaMode::Coupled => coupled_alpha(&dims, params.gamma),
            AlphaMode::Explicit(a) => a,
        };
        Ok(NaiveAgent {
            label: "mabsta-naive".to_string(),
            graph: graph.clone(),
            m_devices,
            gamma: params.gamma,
            alpha,
            seed_rng: crate::env::seeded_stream(params.seed, 0),
            log_w: vec![0.0; arms as usize],
            estimates: CumulativeEstimates::for_graph(graph, m_devices),
            next_t: 1,
            pending: None,
            scratch: vec![0; graph.n_tasks()],
        })
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn estimates(&self) -> &CumulativeEstimates {
        &self.estimates
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    fn arm_count(&self) -> usize {
        self.log_w.len()
    }

    /// Log weight sum over arms matching `filter`.
    fn masked_log_sum(&self, mut devices: Vec<usize>, filter: impl Fn(&[usize]) -> bool) -> f64 {
        let mut parts = Vec::new();
        for arm in 0..self.arm_count() as u64 {
            decode_arm(arm, self.m_devices, &mut devices);
            if filter(&devices) {
                parts.push(self.log_w[arm as usize]);
            }
        }
        log_sum_exp(&parts)
    }

    /// Mixture probability of drawing exactly `y`.
    pub fn arm_probability(&self, y: &Assignment) -> f64 {
        let total = log_sum_exp(&self.log_w);
        let mut devices = vec![0usize; self.graph.n_tasks()];
        let mut code = 0u64;
        for &d in y.devices() {
            code = code * self.m_devices as u64 + d as u64;
        }
        decode_arm(code, self.m_devices, &mut devices);
        debug_assert_eq!(&devices, y.devices());
        let arms = self.arm_count() as f64;
        (1.0 - self.gamma) * (self.log_w[code as usize] - total).exp() + self.gamma / arms
    }
}

impl Policy for NaiveAgent {
    fn name(&self) -> &str {
        &self.label
    }

    fn choose(&mut self, t: usize) -> Assignment {
        assert!(self.pending.is_none(), "choose called twice without observe");
        assert_eq!(t, self.next_t, "frames must alternate choose/observe in order");
        let n = self.graph.n_tasks();
        let m = self.m_devices;
        let log_w = &self.log_w;
        let arm_count = self.log_w.len() as u64;
        let mut devices_buf = vec![0usize; n];
        let conditional = |prefix: &[usize], task: usize| -> Vec<f64> {
            let mut per_device: Vec<Vec<f64>> = vec![Vec::new(); m];
            for arm in 0..arm_count {
                decode_arm(arm, m, &mut devices_buf);
                if devices_buf[..prefix.len()] == *prefix {
                    per_device[devices_buf[task]].push(log_w[arm as usize]);
                }
            }
            let log_sums: Vec<f64> = per_device.iter().map(|v| log_sum_exp(v)).collect();
            softmax(&log_sums)
        };
        let devices = sample_mixture(&mut self.seed_rng, self.gamma, n, m, conditional);
        let x = Assignment::new(devices);

        // Cache the mixture marginals of the realized coordinates.
        let total = log_sum_exp(&self.log_w);
        let m_f = m as f64;
        let node_probs: Vec<f64> = (0..n)
            .map(|i| {
                let s = self.masked_log_sum(vec![0; n], |d| d[i] == x.device(i));
                (1.0 - self.gamma) * (s - total).exp() + self.gamma / m_f
            })
            .collect();
        let edge_probs: Vec<f64> = self
            .graph
            .edges()
            .iter()
            .map(|&(a, b)| {
                let s = self
                    .masked_log_sum(vec![0; n], |d| d[a] == x.device(a) && d[b] == x.device(b));
                (1.0 - self.gamma) * (s - total).exp() + self.gamma / (m_f * m_f)
            })
            .collect();
        self.pending =
            Some(PendingFrame { t, x: x.clone(), node_probs, edge_probs, alpha: self.alpha });
        x
    }

    fn observe(&mut self, t: usize, x: &Assignment, fb: &BanditFeedback) -> Result<(), AgentError> {
        if !matches!(&self.pending, Some(p) if p.t == t && &p.x == x) {
            return Err(AgentError::OutOfOrderFrame { expected: self.next_t, got: t });
        }
        validate_feedback(fb, self.graph.n_tasks(), self.graph.n_edges())?;
        let pending = self.pending.take().expect("matched above");

        let mut node_inc = vec![0.0; self.graph.n_tasks()];
        for (i, &r) in fb.node_rewards.iter().enumerate() {
            node_inc[i] = r / pending.node_probs[i];
            self.estimates.add_node(i, x.device(i), node_inc[i]);
        }
        let mut edge_inc = vec![0.0; self.graph.n_edges()];
        for (eidx, &(a, b)) in self.graph.edges().iter().enumerate() {
            edge_inc[eidx] = fb.edge_rewards[eidx] / pending.edge_probs[eidx];
            self.estimates.add_edge(eidx, x.device(a), x.device(b), edge_inc[eidx]);
        }

        // Multiplicative weight update for every arm.
        let edges = self.graph.edges().to_vec();
        let m = self.m_devices;
        for arm in 0..self.log_w.len() as u64 {
            decode_arm(arm, m, &mut self.scratch);
            let mut scaled = 0.0;
            for (i, &inc) in node_inc.iter().enumerate() {
                if self.scratch[i] == x.device(i) {
                    scaled += inc;
                }
            }
            for (eidx, &(a, b)) in edges.iter().enumerate() {
                if self.scratch[a] == x.device(a) && self.scratch[b] == x.device(b) {
                    scaled += edge_inc[eidx];
                }
            }
            self.log_w[arm as usize] += self.alpha * scaled;
        }
        self.next_t = t + 1;
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Estimate snapshots
// ---------------------------------------------------------------------------

/// Writes the running estimate tables in the trace column convention, one
/// row stamped with the last completed frame.
pub fn write_estimates_csv<W: std::io::Write>(
    out: &mut W,
    graph: &TaskGraph,
    t: usize,
    estimates: &CumulativeEstimates,
) -> std::io::Result<()> {
    writeln!(out, "{}", crate::env::trace_header(graph, estimates.m_devices()))?;
    let mut row = t.to_string();
    for v in estimates.node_sums().iter().chain(estimates.edge_sums()) {
        row.push(',');
        row.push_str(&v.to_string());
    }
    writeln!(out, "{row}")
}

/// Reads a snapshot back; returns (frame, estimates).
pub fn read_estimates_csv(
    text: &str,
    graph: &TaskGraph,
    m_devices: usize,
) -> Result<(usize, CumulativeEstimates), AgentError> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| AgentError::BadParams("empty snapshot".into()))?;
    if header != crate::env::trace_header(graph, m_devices) {
        return Err(AgentError::BadParams("snapshot header mismatch".into()));
    }
    let row = lines
        .next()
        .ok_or_else(|| AgentError::BadParams("snapshot missing data row".into()))?;
    let mut parts = row.split(',');
    let t: usize = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| AgentError::BadParams("bad frame stamp".into()))?;
    let mut est = CumulativeEstimates::for_graph(graph, m_devices);
    let n = graph.n_tasks();
    for i in 0..n {
        for j in 0..m_devices {
            let v: f64 = parts
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| AgentError::BadParams("short snapshot row".into()))?;
            est.set_node(i, j, v);
        }
    }
    for e in 0..graph.n_edges() {
        for j in 0..m_devices {
            for k in 0..m_devices {
                let v: f64 = parts
                    .next()
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| AgentError::BadParams("short snapshot row".into()))?;
                est.set_edge(e, j, k, v);
            }
        }
    }
    Ok((t, est))
}
