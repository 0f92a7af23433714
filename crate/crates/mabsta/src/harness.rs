//! Experiment orchestration: run agents against environments, score them
//! against the offline optimum, and emit regret-curve CSVs.
//!
//! A run materializes the environment's frames up front so the genie and
//! every agent score the exact same realization; replicas differ only in
//! their seeded streams and may run in parallel (`parallel` feature) with
//! byte-identical output either way. A streaming mode exists for
//! memory-bound horizons; it regenerates frames per agent and leaves the
//! optimal column empty.

use crate::agent::{
    AgentError, AgentParams, AlphaMode, Assignment, GammaMode, MabstaAgent, NaiveAgent, Policy,
};
use crate::baselines::{
    offline_optimal, Exp3Flat, FixedAssignment, MyopicMarkov, OfflineOptimal, UniformRandom,
};
use crate::bounds::{corollary1, BoundsError, ProblemDims};
use crate::dp::DpError;
use crate::env::{
    feedback_for, ConstantEnv, EnvError, Environment, FrameRewards, IidUniformEnv,
    MarkovSwapConfig, MarkovSwapEnv, ReplayEnv, SwitchingAdversaryEnv, TableTraceEnv,
};
use crate::graph::{GraphError, GraphSpec, TaskGraph};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Dp(#[from] DpError),
    #[error(transparent)]
    Bounds(#[from] BoundsError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("config parse: {0}")]
    Json(#[from] serde_json::Error),
}

fn default_one() -> usize {
    1
}

fn default_true() -> bool {
    true
}

fn default_us_per_iteration() -> f64 {
    1.0
}

/// Environment selection and parameters; the seed is per environment, with
/// one derived stream per replica.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvSpec {
    Constant {
        value: f64,
    },
    IidUniform {
        seed: u64,
    },
    Switching {
        period: usize,
        hi: f64,
        lo: f64,
    },
    TableTrace {
        seed: u64,
        #[serde(default = "default_us_per_iteration")]
        us_per_iteration: f64,
    },
    MarkovSwap {
        seed: u64,
        #[serde(default)]
        config: MarkovSwapConfig,
    },
    Replay {
        path: PathBuf,
    },
}

impl EnvSpec {
    pub fn build(
        &self,
        graph: &TaskGraph,
        m_devices: usize,
        replica: u64,
    ) -> Result<Box<dyn Environment>, HarnessError> {
        Ok(match self {
            EnvSpec::Constant { value } => {
                Box::new(ConstantEnv::uniform_value(graph, m_devices, *value)?)
            }
            EnvSpec::IidUniform { seed } => {
                Box::new(IidUniformEnv::new(graph, m_devices, *seed, replica))
            }
            EnvSpec::Switching { period, hi, lo } => {
                Box::new(SwitchingAdversaryEnv::new(graph, m_devices, *period, *hi, *lo)?)
            }
            EnvSpec::TableTrace { seed, us_per_iteration } => {
                Box::new(TableTraceEnv::new(graph, m_devices, *us_per_iteration, *seed, replica)?)
            }
            EnvSpec::MarkovSwap { seed, config } => {
                if m_devices != 2 {
                    return Err(HarnessError::Config(
                        "the Markov swap environment is two-device".into(),
                    ));
                }
                Box::new(MarkovSwapEnv::new(graph, config.clone(), *seed, replica)?)
            }
            EnvSpec::Replay { path } => Box::new(ReplayEnv::from_file(path, graph, m_devices)?),
        })
    }

    fn markov_config(&self) -> Option<&MarkovSwapConfig> {
        match self {
            EnvSpec::MarkovSwap { config, .. } => Some(config),
            _ => None,
        }
    }
}

/// Agent selection; seeds are per agent, with one derived stream per
/// replica. `label` overrides the CSV column name.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AgentSpec {
    /// Efficient learner; omit `gamma` for the decaying schedule.
    Mabsta {
        #[serde(default)]
        gamma: Option<f64>,
        seed: u64,
        #[serde(default)]
        label: Option<String>,
    },
    /// Per-arm reference build (exponential storage; small instances only).
    MabstaNaive {
        gamma: f64,
        seed: u64,
        #[serde(default)]
        label: Option<String>,
    },
    Exp3 {
        seed: u64,
        #[serde(default)]
        label: Option<String>,
    },
    Random {
        seed: u64,
        #[serde(default)]
        label: Option<String>,
    },
    /// Belief policy for the Markov environment; keeps the pre-swap
    /// matrices forever (that is the point).
    Myopic {
        #[serde(default)]
        label: Option<String>,
    },
    /// Replays the offline-optimal assignment (zero-regret reference runs).
    OptReplay {
        #[serde(default)]
        label: Option<String>,
    },
}

impl AgentSpec {
    fn default_name(&self) -> &'static str {
        match self {
            AgentSpec::Mabsta { gamma: None, .. } => "mabsta_vary",
            AgentSpec::Mabsta { gamma: Some(_), .. } => "mabsta",
            AgentSpec::MabstaNaive { .. } => "mabsta_naive",
            AgentSpec::Exp3 { .. } => "exp3",
            AgentSpec::Random { .. } => "random",
            AgentSpec::Myopic { .. } => "myopic",
            AgentSpec::OptReplay { .. } => "opt_replay",
        }
    }

    pub fn name(&self) -> String {
        let label = match self {
            AgentSpec::Mabsta { label, .. }
            | AgentSpec::MabstaNaive { label, .. }
            | AgentSpec::Exp3 { label, .. }
            | AgentSpec::Random { label, .. }
            | AgentSpec::Myopic { label }
            | AgentSpec::OptReplay { label } => label,
        };
        label.clone().unwrap_or_else(|| self.default_name().to_string())
    }

    fn build(
        &self,
        graph: &TaskGraph,
        m_devices: usize,
        horizon: usize,
        env: &EnvSpec,
        replica: u64,
        optimal: Option<&Assignment>,
    ) -> Result<Box<dyn Policy>, HarnessError> {
        let name = self.name();
        Ok(match self {
            AgentSpec::Mabsta { gamma, seed, .. } => {
                let params = match gamma {
                    Some(g) => AgentParams {
                        gamma: *g,
                        gamma_mode: GammaMode::Fixed,
                        alpha_mode: AlphaMode::Coupled,
                        seed: derive_seed(*seed, replica),
                    },
                    None => AgentParams::varying(derive_seed(*seed, replica)),
                };
                Box::new(MabstaAgent::new(graph, m_devices, params)?.with_label(name))
            }
            AgentSpec::MabstaNaive { gamma, seed, .. } => {
                let params = AgentParams::fixed(*gamma, derive_seed(*seed, replica));
                Box::new(NaiveAgent::new(graph, m_devices, params)?.with_label(name))
            }
            AgentSpec::Exp3 { seed, .. } => Box::new(
                Exp3Flat::new(graph, m_devices, horizon, derive_seed(*seed, replica))?
                    .with_label(name),
            ),
            AgentSpec::Random { seed, .. } => {
                Box::new(UniformRandom::new(graph, m_devices, derive_seed(*seed, replica)).with_label(name))
            }
            AgentSpec::Myopic { .. } => {
                let cfg = env.markov_config().ok_or_else(|| {
                    HarnessError::Config("myopic agent requires the Markov environment".into())
                })?;
                Box::new(
                    MyopicMarkov::new(graph, cfg.transitions, [
                        cfg.start_good_prob[0],
                        cfg.start_good_prob[1],
                    ])
                    .with_label(name),
                )
            }
            AgentSpec::OptReplay { .. } => {
                let x = optimal.ok_or_else(|| {
                    HarnessError::Config(
                        "offline-optimal replay requires a materialized run".into(),
                    )
                })?;
                Box::new(FixedAssignment::new(x.clone()).with_label(name))
            }
        })
    }
}

/// Seed derivation for (base, replica) pairs: splitmix64 of the pair.
pub fn derive_seed(base: u64, salt: u64) -> u64 {
    let mut z = base ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One experiment: a graph, a device count, an environment, agents, seeds
/// and output location.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub graph: GraphSpec,
    pub devices: usize,
    pub horizon: usize,
    #[serde(default = "default_one")]
    pub replicas: usize,
    pub env: EnvSpec,
    pub agents: Vec<AgentSpec>,
    #[serde(default)]
    pub output: Option<PathBuf>,
    /// Keep one curve row every this many frames (the final frame is always
    /// kept).
    #[serde(default = "default_one")]
    pub sample_every: usize,
    /// Materialized runs share one frame realization between the genie and
    /// every agent; streaming runs regenerate frames per agent and lose the
    /// optimal column.
    #[serde(default = "default_true")]
    pub materialize: bool,
    /// Rolling-average window for adaptivity runs.
    #[serde(default)]
    pub rolling_window: Option<usize>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, HarnessError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.horizon == 0 {
            return Err(HarnessError::Config("horizon must be at least 1".into()));
        }
        if self.agents.is_empty() {
            return Err(HarnessError::Config("at least one agent is required".into()));
        }
        if self.replicas == 0 {
            return Err(HarnessError::Config("replicas must be at least 1".into()));
        }
        if self.devices == 0 {
            return Err(HarnessError::Config("devices must be at least 1".into()));
        }
        if self.sample_every == 0 {
            return Err(HarnessError::Config("sample_every must be at least 1".into()));
        }
        Ok(())
    }
}

/// One sampled row of a regret curve.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveRow {
    pub t: usize,
    /// Cumulative reward of the best fixed assignment (NaN in streaming
    /// mode).
    pub opt_cum: f64,
    /// Cumulative realized reward per agent, in `agent_names` order.
    pub agent_cums: Vec<f64>,
    /// Closed-form regret bound evaluated at this frame count.
    pub bound: f64,
}

/// Sampled cumulative-reward trajectories for one replica.
#[derive(Debug, Clone, PartialEq)]
pub struct RegretCurve {
    pub agent_names: Vec<String>,
    pub rows: Vec<CurveRow>,
    pub optimal: Option<OfflineOptimal>,
}

impl RegretCurve {
    pub fn regret(&self, row: &CurveRow, agent: usize) -> f64 {
        row.opt_cum - row.agent_cums[agent]
    }

    pub fn ratio(&self, row: &CurveRow, agent: usize) -> f64 {
        if row.opt_cum > 0.0 {
            row.agent_cums[agent] / row.opt_cum
        } else {
            1.0
        }
    }

    pub fn final_row(&self) -> &CurveRow {
        self.rows.last().expect("curve has at least one row")
    }

    pub fn agent_index(&self, name: &str) -> Option<usize> {
        self.agent_names.iter().position(|n| n == name)
    }

    pub fn final_regret(&self, name: &str) -> f64 {
        let idx = self.agent_index(name).expect("unknown agent");
        self.regret(self.final_row(), idx)
    }

    pub fn final_ratio(&self, name: &str) -> f64 {
        let idx = self.agent_index(name).expect("unknown agent");
        self.ratio(self.final_row(), idx)
    }

    /// Columns: `t, opt_cum`, then `cum, regret, ratio` per agent, then
    /// `bound`.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        out.push_str("t,opt_cum");
        for name in &self.agent_names {
            out.push_str(&format!(",{name}_cum,{name}_regret,{name}_ratio"));
        }
        out.push_str(",bound\n");
        for row in &self.rows {
            out.push_str(&format!("{},{}", row.t, row.opt_cum));
            for agent in 0..self.agent_names.len() {
                out.push_str(&format!(
                    ",{},{},{}",
                    row.agent_cums[agent],
                    self.regret(row, agent),
                    self.ratio(row, agent)
                ));
            }
            out.push_str(&format!(",{}\n", row.bound));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), HarnessError> {
        std::fs::write(path, self.to_csv_string())?;
        Ok(())
    }

    /// Pointwise mean of several curves (same shape required).
    pub fn mean_of(curves: &[RegretCurve]) -> RegretCurve {
        let first = &curves[0];
        let n = curves.len() as f64;
        let rows = (0..first.rows.len())
            .map(|ri| {
                let t = first.rows[ri].t;
                let bound = first.rows[ri].bound;
                let opt_cum = curves.iter().map(|c| c.rows[ri].opt_cum).sum::<f64>() / n;
                let agent_cums = (0..first.agent_names.len())
                    .map(|ai| curves.iter().map(|c| c.rows[ri].agent_cums[ai]).sum::<f64>() / n)
                    .collect();
                CurveRow { t, opt_cum, agent_cums, bound }
            })
            .collect();
        RegretCurve { agent_names: first.agent_names.clone(), rows, optimal: None }
    }
}

/// All replica curves plus their mean.
#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub replicas: Vec<RegretCurve>,
    pub mean: RegretCurve,
}

fn sample_points(horizon: usize, every: usize) -> Vec<usize> {
    let mut points: Vec<usize> = (1..=horizon).filter(|t| t % every == 0).collect();
    if points.last() != Some(&horizon) {
        points.push(horizon);
    }
    points
}

fn materialize_frames(
    env: &mut dyn Environment,
    horizon: usize,
) -> Result<Vec<FrameRewards>, HarnessError> {
    (1..=horizon).map(|t| Ok(env.next_frame(t)?)).collect()
}

/// Runs the configured experiment. Deterministic for fixed config and
/// seeds: replicas use disjoint derived streams, so the `parallel` feature
/// changes wall time only.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome, HarnessError> {
    run_experiment_inner(config, true)
}

/// Same experiment, replicas strictly sequential; exists so the replica
/// parallelism can be measured against a baseline.
pub fn run_experiment_seq(config: &ExperimentConfig) -> Result<ExperimentOutcome, HarnessError> {
    run_experiment_inner(config, false)
}

fn run_experiment_inner(
    config: &ExperimentConfig,
    parallel: bool,
) -> Result<ExperimentOutcome, HarnessError> {
    config.validate()?;
    let graph = TaskGraph::from_spec(&config.graph)?;
    let runner =
        |r: usize| run_replica(config, &graph, r as u64).map_err(|e| e.to_string());
    let results: Vec<Result<RegretCurve, String>> = if parallel {
        crate::exec::heavy_map_collect(config.replicas, runner)
    } else {
        crate::exec::map_collect_seq(config.replicas, runner)
    };
    let mut replicas = Vec::with_capacity(results.len());
    for r in results {
        replicas.push(r.map_err(HarnessError::Config)?);
    }
    let mean = RegretCurve::mean_of(&replicas);
    if let Some(base) = &config.output {
        for (r, curve) in replicas.iter().enumerate() {
            curve.write_csv(&replica_path(base, r))?;
        }
        mean.write_csv(base)?;
    }
    Ok(ExperimentOutcome { replicas, mean })
}

/// `out.csv` -> `out.r3.csv`.
pub fn replica_path(base: &Path, replica: usize) -> PathBuf {
    let stem = base.file_stem().and_then(|s| s.to_str()).unwrap_or("curve");
    let ext = base.extension().and_then(|s| s.to_str()).unwrap_or("csv");
    base.with_file_name(format!("{stem}.r{replica}.{ext}"))
}

fn run_replica(
    config: &ExperimentConfig,
    graph: &TaskGraph,
    replica: u64,
) -> Result<RegretCurve, HarnessError> {
    let horizon = config.horizon;
    let points = sample_points(horizon, config.sample_every);
    let dims_at = |t: usize| ProblemDims::for_graph(graph, config.devices, t);
    let bounds: Vec<f64> = points
        .iter()
        .map(|&t| dims_at(t).map(|d| corollary1(&d).closed_form_bound))
        .collect::<Result<_, _>>()?;

    let (frames, optimal) = if config.materialize {
        let mut env = config.env.build(graph, config.devices, replica)?;
        let frames = materialize_frames(env.as_mut(), horizon)?;
        let optimal = offline_optimal(graph, config.devices, &frames)?;
        (Some(frames), Some(optimal))
    } else {
        (None, None)
    };

    // Optimal cumulative trajectory at the sample points.
    let opt_cums: Vec<f64> = match (&frames, &optimal) {
        (Some(frames), Some(opt)) => {
            let mut cums = Vec::with_capacity(points.len());
            let mut cum = 0.0;
            let mut next_point = 0;
            for (idx, frame) in frames.iter().enumerate() {
                cum += feedback_for(frame, graph, &opt.assignment)?.total();
                if next_point < points.len() && points[next_point] == idx + 1 {
                    cums.push(cum);
                    next_point += 1;
                }
            }
            cums
        }
        _ => vec![f64::NAN; points.len()],
    };

    let agent_names: Vec<String> = config.agents.iter().map(|a| a.name()).collect();
    let mut agent_cums: Vec<Vec<f64>> = Vec::with_capacity(config.agents.len());
    for spec in &config.agents {
        let mut policy = spec.build(
            graph,
            config.devices,
            horizon,
            &config.env,
            replica,
            optimal.as_ref().map(|o| &o.assignment),
        )?;
        let mut stream_env = if frames.is_none() {
            Some(config.env.build(graph, config.devices, replica)?)
        } else {
            None
        };
        let mut cums = Vec::with_capacity(points.len());
        let mut cum = 0.0;
        let mut next_point = 0;
        for t in 1..=horizon {
            let frame = match (&frames, &mut stream_env) {
                (Some(frames), _) => frames[t - 1].clone(),
                (None, Some(env)) => env.next_frame(t)?,
                _ => unreachable!(),
            };
            let x = policy.choose(t);
            let fb = feedback_for(&frame, graph, &x)?;
            cum += fb.total();
            policy.observe(t, &x, &fb)?;
            if next_point < points.len() && points[next_point] == t {
                cums.push(cum);
                next_point += 1;
            }
        }
        agent_cums.push(cums);
    }

    let rows = points
        .iter()
        .enumerate()
        .map(|(ri, &t)| CurveRow {
            t,
            opt_cum: opt_cums[ri],
            agent_cums: agent_cums.iter().map(|c| c[ri]).collect(),
            bound: bounds[ri],
        })
        .collect();
    Ok(RegretCurve { agent_names, rows, optimal })
}

// ---------------------------------------------------------------------------
// Adaptivity experiment
// ---------------------------------------------------------------------------

/// Per-frame normalized rewards and rolling means for one replica. The
/// last column, `post_opt`, replays the best fixed assignment of the
/// post-swap segment.
#[derive(Debug, Clone)]
pub struct AdaptivityCurve {
    pub agent_names: Vec<String>,
    pub swap_frame: usize,
    pub window: usize,
    /// rewards[agent][t-1]: realized frame reward scaled to [0, 1].
    pub rewards: Vec<Vec<f64>>,
    /// rolling[agent][t-1]: mean of the trailing window.
    pub rolling: Vec<Vec<f64>>,
}

impl AdaptivityCurve {
    pub fn agent_index(&self, name: &str) -> Option<usize> {
        self.agent_names.iter().position(|n| n == name)
    }

    /// Mean rolling value over an inclusive 1-based frame range.
    pub fn mean_rolling(&self, agent: usize, from_t: usize, to_t: usize) -> f64 {
        let slice = &self.rolling[agent][from_t - 1..to_t];
        slice.iter().sum::<f64>() / slice.len() as f64
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("t");
        for name in &self.agent_names {
            out.push_str(&format!(",{name}_reward,{name}_rolling"));
        }
        out.push('\n');
        let horizon = self.rewards[0].len();
        for t in 1..=horizon {
            out.push_str(&t.to_string());
            for agent in 0..self.agent_names.len() {
                out.push_str(&format!(
                    ",{},{}",
                    self.rewards[agent][t - 1],
                    self.rolling[agent][t - 1]
                ));
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct AdaptivityOutcome {
    pub replicas: Vec<AdaptivityCurve>,
}

/// Runs the Markov-swap scenario: every configured agent plus the
/// post-swap-optimal fixed assignment, reporting per-frame rolling means.
pub fn adaptivity_experiment(config: &ExperimentConfig) -> Result<AdaptivityOutcome, HarnessError> {
    config.validate()?;
    let markov = config
        .env
        .markov_config()
        .ok_or_else(|| {
            HarnessError::Config("adaptivity experiments require the Markov environment".into())
        })?
        .clone();
    if !config.materialize {
        return Err(HarnessError::Config("adaptivity experiments must materialize frames".into()));
    }
    let graph = TaskGraph::from_spec(&config.graph)?;
    let window = config.rolling_window.unwrap_or(20).max(1);
    let swap_frame = markov.swap_frame;

    let results: Vec<Result<AdaptivityCurve, String>> =
        crate::exec::heavy_map_collect(config.replicas, |r| {
            run_adaptivity_replica(config, &graph, swap_frame, window, r as u64)
                .map_err(|e| e.to_string())
        });
    let mut replicas = Vec::with_capacity(results.len());
    for r in results {
        replicas.push(r.map_err(HarnessError::Config)?);
    }
    if let Some(base) = &config.output {
        for (r, curve) in replicas.iter().enumerate() {
            std::fs::write(replica_path(base, r), curve.to_csv_string())?;
        }
    }
    Ok(AdaptivityOutcome { replicas })
}

fn run_adaptivity_replica(
    config: &ExperimentConfig,
    graph: &TaskGraph,
    swap_frame: usize,
    window: usize,
    replica: u64,
) -> Result<AdaptivityCurve, HarnessError> {
    let horizon = config.horizon;
    let mut env = config.env.build(graph, config.devices, replica)?;
    let frames = materialize_frames(env.as_mut(), horizon)?;
    let optimal = offline_optimal(graph, config.devices, &frames)?;

    // The dashed-line reference: best fixed assignment for the post-swap
    // regime, replayed over the whole run.
    let post_frames = &frames[swap_frame.saturating_sub(1).min(frames.len() - 1)..];
    let post_opt = offline_optimal(graph, config.devices, post_frames)?;

    let scale = 1.0 / (graph.n_tasks() + graph.n_edges()) as f64;
    let mut agent_names: Vec<String> = config.agents.iter().map(|a| a.name()).collect();
    let mut policies: Vec<Box<dyn Policy>> = config
        .agents
        .iter()
        .map(|spec| {
            spec.build(
                graph,
                config.devices,
                horizon,
                &config.env,
                replica,
                Some(&optimal.assignment),
            )
        })
        .collect::<Result<_, _>>()?;
    agent_names.push("post_opt".to_string());
    policies.push(Box::new(FixedAssignment::new(post_opt.assignment).with_label("post_opt")));

    let mut rewards = vec![Vec::with_capacity(horizon); policies.len()];
    for (agent, policy) in policies.iter_mut().enumerate() {
        for (idx, frame) in frames.iter().enumerate() {
            let t = idx + 1;
            let x = policy.choose(t);
            let fb = feedback_for(frame, graph, &x)?;
            rewards[agent].push(fb.total() * scale);
            policy.observe(t, &x, &fb)?;
        }
    }
    let rolling = rewards.iter().map(|r| rolling_mean(r, window)).collect();
    Ok(AdaptivityCurve { agent_names, swap_frame, window, rewards, rolling })
}

fn rolling_mean(values: &[f64], window: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut sum = 0.0;
    for (i, &v) in values.iter().enumerate() {
        sum += v;
        if i >= window {
            sum -= values[i - window];
        }
        let count = (i + 1).min(window);
        out.push(sum / count as f64);
    }
    out
}

// ---------------------------------------------------------------------------
// Trace generation and the offline oracle
// ---------------------------------------------------------------------------

/// Config for writing a synthetic trace file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceGenConfig {
    pub graph: GraphSpec,
    pub devices: usize,
    pub horizon: usize,
    pub seed: u64,
    #[serde(default = "default_us_per_iteration")]
    pub us_per_iteration: f64,
    pub output: PathBuf,
}

impl TraceGenConfig {
    pub fn from_file(path: &Path) -> Result<Self, HarnessError> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Generates a synthetic device trace and writes it as CSV. Replaying the
/// file reproduces the exact frames.
pub fn gen_trace(config: &TraceGenConfig) -> Result<Vec<FrameRewards>, HarnessError> {
    let graph = TaskGraph::from_spec(&config.graph)?;
    let mut env =
        TableTraceEnv::new(&graph, config.devices, config.us_per_iteration, config.seed, 0)?;
    let frames = materialize_frames(&mut env, config.horizon)?;
    let mut buf = Vec::new();
    crate::env::write_trace(&mut buf, &graph, config.devices, &frames)?;
    std::fs::write(&config.output, &buf)?;
    Ok(frames)
}

/// Counts devices from a trace header (`node:1:<j>` columns).
pub fn sniff_trace_devices(text: &str) -> Result<usize, HarnessError> {
    let header = text
        .lines()
        .next()
        .ok_or_else(|| HarnessError::Config("empty trace".into()))?;
    let m = header.split(',').filter(|c| c.starts_with("node:1:")).count();
    if m == 0 {
        return Err(HarnessError::Config("no node:1:* columns in trace header".into()));
    }
    Ok(m)
}

/// Offline-optimal assignment and total for a recorded trace.
pub fn oracle_from_files(
    trace_path: &Path,
    graph_spec_path: &Path,
) -> Result<(OfflineOptimal, usize), HarnessError> {
    let spec: GraphSpec = serde_json::from_str(&std::fs::read_to_string(graph_spec_path)?)?;
    let graph = TaskGraph::from_spec(&spec)?;
    let text = std::fs::read_to_string(trace_path)?;
    let m = sniff_trace_devices(&text)?;
    let frames = crate::env::parse_trace(&text, &graph, m)?;
    let best = offline_optimal(&graph, m, &frames)?;
    Ok((best, frames.len()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain_spec(n: usize) -> GraphSpec {
        GraphSpec {
            n_tasks: n,
            edges: (1..n).map(|i| [i, i + 1]).collect(),
            root: n,
        }
    }

    fn base_config() -> ExperimentConfig {
        ExperimentConfig {
            graph: chain_spec(2),
            devices: 2,
            horizon: 50,
            replicas: 2,
            env: EnvSpec::IidUniform { seed: 11 },
            agents: vec![
                AgentSpec::Mabsta { gamma: Some(0.3), seed: 1, label: None },
                AgentSpec::Random { seed: 2, label: None },
            ],
            output: None,
            sample_every: 10,
            materialize: true,
            rolling_window: None,
        }
    }

    #[test]
    fn deterministic_csv_output() {
        let cfg = base_config();
        let a = run_experiment(&cfg).unwrap();
        let b = run_experiment(&cfg).unwrap();
        assert_eq!(a.mean.to_csv_string(), b.mean.to_csv_string());
        for (x, y) in a.replicas.iter().zip(&b.replicas) {
            assert_eq!(x.to_csv_string(), y.to_csv_string());
        }
        // Replicas with different streams differ from each other.
        assert_ne!(a.replicas[0].to_csv_string(), a.replicas[1].to_csv_string());
    }

    #[test]
    fn optimal_replay_has_zero_regret() {
        let mut cfg = base_config();
        cfg.agents = vec![AgentSpec::OptReplay { label: None }];
        cfg.replicas = 1;
        let out = run_experiment(&cfg).unwrap();
        let curve = &out.replicas[0];
        for row in &curve.rows {
            assert!(curve.regret(row, 0).abs() < 1e-9);
            assert!((curve.ratio(row, 0) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_regret_on_constant_env_matches_closed_form() {
        // Fixed template: arm totals are 2.4, 1.2, 1.3, 1.1; the optimum is
        // 2.4 and the uniform mean is 1.5, so expected per-frame regret is
        // 0.9.
        let mut template = FrameRewards::zeros(2, 1, 2);
        template.set_node(0, 0, 0.9);
        template.set_node(0, 1, 0.3);
        template.set_node(1, 0, 0.8);
        template.set_node(1, 1, 0.2);
        template.set_edge(0, 0, 0, 0.7);
        template.set_edge(0, 0, 1, 0.1);
        template.set_edge(0, 1, 0, 0.2);
        template.set_edge(0, 1, 1, 0.6);

        let graph = TaskGraph::from_spec(&chain_spec(2)).unwrap();
        let horizon = 2_000;
        let frames = vec![template; horizon];
        let opt = offline_optimal(&graph, 2, &frames).unwrap();
        assert_eq!(opt.assignment.devices(), &[0, 0]);

        let mut policy = UniformRandom::new(&graph, 2, 77);
        let mut cum = 0.0;
        for (idx, frame) in frames.iter().enumerate() {
            let x = policy.choose(idx + 1);
            cum += feedback_for(frame, &graph, &x).unwrap().total();
        }
        let regret = opt.total_reward - cum;
        let expected = 0.9 * horizon as f64;
        // Per-frame variance of the four arm totals is 0.275; three sigma
        // over 2000 frames is ~70.
        let sigma = (0.275f64 * horizon as f64).sqrt();
        assert!(
            (regret - expected).abs() <= 3.0 * sigma,
            "regret {regret} vs expected {expected} (3 sigma {})",
            3.0 * sigma
        );
    }

    #[test]
    fn streaming_mode_drops_optimal_column() {
        let mut cfg = base_config();
        cfg.materialize = false;
        cfg.replicas = 1;
        let out = run_experiment(&cfg).unwrap();
        let curve = &out.replicas[0];
        assert!(curve.rows.iter().all(|r| r.opt_cum.is_nan()));
        assert!(curve.optimal.is_none());
        // Agent trajectories still line up with a materialized run.
        let mut cfg2 = base_config();
        cfg2.replicas = 1;
        let out2 = run_experiment(&cfg2).unwrap();
        for (a, b) in curve.rows.iter().zip(&out2.replicas[0].rows) {
            assert_eq!(a.agent_cums, b.agent_cums);
        }
    }

    #[test]
    fn replica_frames_are_shared_across_agents() {
        // Two stateless replays of the same fixed assignment score
        // identically: they consumed identical frames.
        let mut cfg = base_config();
        cfg.replicas = 1;
        cfg.agents = vec![
            AgentSpec::OptReplay { label: Some("a".into()) },
            AgentSpec::OptReplay { label: Some("b".into()) },
        ];
        let out = run_experiment(&cfg).unwrap();
        let curve = &out.replicas[0];
        for row in &curve.rows {
            assert_eq!(row.agent_cums[0], row.agent_cums[1]);
        }
    }

    #[test]
    fn csv_files_written_per_replica_and_mean() {
        let dir = std::env::temp_dir().join(format!("mabsta_harness_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let mut cfg = base_config();
        cfg.output = Some(dir.join("curve.csv"));
        run_experiment(&cfg).unwrap();
        assert!(dir.join("curve.csv").exists());
        assert!(dir.join("curve.r0.csv").exists());
        assert!(dir.join("curve.r1.csv").exists());
        let text = std::fs::read_to_string(dir.join("curve.csv")).unwrap();
        assert!(text.starts_with("t,opt_cum,mabsta_cum,mabsta_regret,mabsta_ratio,"));
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn trace_gen_round_trips_through_replay() {
        let dir = std::env::temp_dir().join(format!("mabsta_trace_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let cfg = TraceGenConfig {
            graph: chain_spec(3),
            devices: 3,
            horizon: 8,
            seed: 5,
            us_per_iteration: 1.0,
            output: dir.join("trace.csv"),
        };
        let written = gen_trace(&cfg).unwrap();
        assert_eq!(written.len(), 8);
        let graph = TaskGraph::from_spec(&cfg.graph).unwrap();
        let mut env = ReplayEnv::from_file(&cfg.output, &graph, 3).unwrap();
        for (idx, orig) in written.iter().enumerate() {
            let replayed = env.next_frame(idx + 1).unwrap();
            assert!(orig.bits_eq(&replayed));
        }
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn empty_curve_serializes_header_only() {
        let curve = RegretCurve {
            agent_names: vec!["a".into(), "b".into()],
            rows: vec![],
            optimal: None,
        };
        assert_eq!(
            curve.to_csv_string(),
            "t,opt_cum,a_cum,a_regret,a_ratio,b_cum,b_regret,b_ratio,bound\n"
        );
    }

    #[test]
    fn no_swap_control_keeps_both_policies_near_optimal() {
        // Swap scheduled far beyond the horizon: a stationary scenario where
        // the myopic policy (correct matrices) tracks the fixed optimum
        // closely and the learner settles near it once past its learning
        // time (the 10-task, 2-device scale needs a couple thousand frames).
        let cfg = ExperimentConfig {
            graph: chain_spec(10),
            devices: 2,
            horizon: 2_000,
            replicas: 4,
            env: EnvSpec::MarkovSwap {
                seed: 909,
                config: MarkovSwapConfig::strong_contrast(100_000),
            },
            agents: vec![
                AgentSpec::Mabsta { gamma: None, seed: 91, label: Some("mabsta".into()) },
                AgentSpec::Myopic { label: Some("myopic".into()) },
            ],
            output: None,
            sample_every: 1,
            materialize: true,
            rolling_window: Some(20),
        };
        let out = adaptivity_experiment(&cfg).unwrap();
        for curve in &out.replicas {
            let opt = curve.agent_index("post_opt").unwrap();
            let mabsta = curve.agent_index("mabsta").unwrap();
            let myopic = curve.agent_index("myopic").unwrap();
            let opt_level = curve.mean_rolling(opt, 1_500, 2_000);
            assert!(
                curve.mean_rolling(myopic, 1_500, 2_000) >= 0.9 * opt_level,
                "myopic with correct matrices should track the optimum"
            );
            assert!(
                curve.mean_rolling(mabsta, 1_500, 2_000) >= 0.85 * opt_level,
                "learner should settle near the optimum in a stationary run"
            );
        }
    }

    #[test]
    fn adaptivity_produces_rolling_columns() {
        let cfg = ExperimentConfig {
            graph: chain_spec(3),
            devices: 2,
            horizon: 60,
            replicas: 1,
            env: EnvSpec::MarkovSwap {
                seed: 3,
                config: MarkovSwapConfig { swap_frame: 30, ..MarkovSwapConfig::strong_contrast(30) },
            },
            agents: vec![AgentSpec::Mabsta { gamma: Some(0.3), seed: 4, label: None }],
            output: None,
            sample_every: 1,
            materialize: true,
            rolling_window: Some(5),
        };
        let out = adaptivity_experiment(&cfg).unwrap();
        let curve = &out.replicas[0];
        assert_eq!(curve.agent_names.last().unwrap(), "post_opt");
        assert_eq!(curve.rewards[0].len(), 60);
        // Rolling means are bounded by the per-frame range.
        for series in &curve.rolling {
            assert!(series.iter().all(|v| (0.0..=1.0 + 1e-12).contains(v)));
        }
        let csv = curve.to_csv_string();
        assert!(csv.starts_with("t,mabsta_reward,mabsta_rolling,post_opt_reward"));
    }

    #[test]
    fn config_json_round_trip() {
        let json = r#"{
            "graph": {"n_tasks": 3, "edges": [[1,2],[2,3]], "root": 3},
            "devices": 2,
            "horizon": 100,
            "replicas": 2,
            "env": {"kind": "iid_uniform", "seed": 9},
            "agents": [
                {"kind": "mabsta", "seed": 1},
                {"kind": "mabsta", "gamma": 0.2, "seed": 2, "label": "fixed02"},
                {"kind": "exp3", "seed": 3},
                {"kind": "random", "seed": 4}
            ],
            "sample_every": 10
        }"#;
        let cfg = ExperimentConfig::from_json(json).unwrap();
        assert_eq!(cfg.agents.len(), 4);
        assert_eq!(cfg.agents[0].name(), "mabsta_vary");
        assert_eq!(cfg.agents[1].name(), "fixed02");
        let out = run_experiment(&cfg).unwrap();
        assert_eq!(out.replicas.len(), 2);
        assert_eq!(out.mean.rows.last().unwrap().t, 100);
    }

    #[test]
    fn bad_configs_are_rejected() {
        let mut cfg = base_config();
        cfg.horizon = 0;
        assert!(run_experiment(&cfg).is_err());
        let mut cfg = base_config();
        cfg.agents.clear();
        assert!(run_experiment(&cfg).is_err());
        // Myopic without a Markov env.
        let mut cfg = base_config();
        cfg.agents = vec![AgentSpec::Myopic { label: None }];
        assert!(run_experiment(&cfg).is_err());
    }

    #[test]
    fn sniff_devices_from_header() {
        let g = TaskGraph::from_spec(&chain_spec(2)).unwrap();
        let header = crate::env::trace_header(&g, 4);
        assert_eq!(sniff_trace_devices(&header).unwrap(), 4);
    }

    #[test]
    fn regret_never_dips_below_noise_guard() {
        // The genie holds one fixed assignment, so an agent can transiently
        // beat it, but on i.i.d. rewards never by more than sampling noise.
        let mut cfg = base_config();
        cfg.horizon = 400;
        cfg.replicas = 3;
        cfg.sample_every = 20;
        let out = run_experiment(&cfg).unwrap();
        let graph = TaskGraph::from_spec(&cfg.graph).unwrap();
        let scale = (graph.n_tasks() + graph.n_edges()) as f64;
        for curve in &out.replicas {
            for row in &curve.rows {
                let guard = -3.0 * scale * (row.t as f64).sqrt();
                for agent in 0..curve.agent_names.len() {
                    assert!(
                        curve.regret(row, agent) >= guard,
                        "regret {} below noise guard {guard} at t={}",
                        curve.regret(row, agent),
                        row.t
                    );
                }
            }
        }
    }
}
