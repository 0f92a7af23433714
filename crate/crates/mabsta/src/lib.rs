//! Adversarial combinatorial bandit for assigning DAG-structured tasks to
//! devices.
//!
//! A stream of data frames must each pass through every task of an
//! application DAG; each task runs on one of `M` devices and each edge pays a
//! transfer cost between the chosen device pair. Rewards per (task, device)
//! and per (edge, device pair) arrive frame by frame, bounded in `[0, 1]`,
//! with no stochastic assumptions: the learner only ever observes the rewards
//! of the assignment it actually played.
//!
//! The crate provides:
//!
//! - [`graph`]: task-DAG validation and shape classification (trees, serial
//!   trees, parallel chains of trees).
//! - [`dp`]: the polynomial-time engine: log-domain weight-sum dynamic
//!   programming, exact node/edge marginals, a max-plus variant for the
//!   offline optimum, and the exhaustive oracle used to verify all of it.
//! - [`agent`]: the exponential-weights learner in two builds sharing one
//!   interface: a naive per-arm reference and the efficient sampler driven
//!   by conditioned DP solves.
//! - [`baselines`]: flat Exp3 over the whole arm space, uniform random,
//!   a myopic two-state belief policy, and the offline-optimal genie.
//! - [`bounds`]: closed-form regret-bound and exploration-schedule
//!   calculators.
//! - [`env`]: reward-generating environments: synthetic device traces,
//!   a two-device Markov environment with a mid-run swap, i.i.d. and
//!   adversarial generators, and CSV trace replay.
//! - [`harness`]: experiment orchestration with per-frame regret curves
//!   against the offline optimum, CSV output, and seeded replication.
//!
//! The `parallel` feature (on by default) runs replicas and batch solves on
//! a rayon pool; disabling it yields a fully sequential build with identical
//! outputs.

pub mod agent;
pub mod baselines;
pub mod bounds;
pub mod dp;
pub mod env;
pub mod exec;
pub mod graph;
pub mod harness;
pub mod logsumexp;

pub use agent::{AgentError, AgentParams, AlphaMode, Assignment, GammaMode, MabstaAgent, NaiveAgent, Policy};
pub use baselines::{offline_optimal, Exp3Flat, MyopicMarkov, OfflineOptimal, UniformRandom};
pub use bounds::{corollary1, learning_time, theorem1_bound, varying_gamma, ProblemDims};
pub use dp::{ConditionalFix, CumulativeEstimates, DpError, OmegaTable, WeightDp};
pub use env::{BanditFeedback, EnvError, Environment, FrameRewards};
pub use graph::{GraphError, GraphSpec, StructureClass, TaskGraph};
pub use harness::{
    adaptivity_experiment, gen_trace, run_experiment, AgentSpec, EnvSpec, ExperimentConfig,
    ExperimentOutcome, HarnessError, RegretCurve, TraceGenConfig,
};
