//! Closed-form regret bounds, the tuned exploration rate, and the learning
//! time, as functions of the problem dimensions.
//!
//! For rewards in `[0, 1]` and the coupled step size
//! `alpha = gamma / (M (N + |E| M))`, the learner's expected regret against
//! the best fixed assignment is at most
//! `(e-1) gamma R_max + M (N + |E| M) ln(M^N) / gamma`. Substituting the
//! worst-case optimum `R_max <= (N + |E|) T` and minimizing over `gamma`
//! gives the tuned rate and the square-root-of-T bound; the same expression
//! evaluated at frame `t` instead of the horizon yields the decaying
//! exploration schedule.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum BoundsError {
    #[error("gamma must lie in (0, 1), got {0}")]
    BadGamma(f64),
    #[error("bad dimensions: {0}")]
    BadDims(String),
}

/// Problem dimensions entering every bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProblemDims {
    pub n_tasks: usize,
    pub n_edges: usize,
    pub m_devices: usize,
    pub horizon: usize,
}

impl ProblemDims {
    pub fn new(
        n_tasks: usize,
        n_edges: usize,
        m_devices: usize,
        horizon: usize,
    ) -> Result<Self, BoundsError> {
        if n_tasks == 0 || m_devices == 0 || horizon == 0 {
            return Err(BoundsError::BadDims("N, M and T must be positive".into()));
        }
        if n_edges > n_tasks * (n_tasks.saturating_sub(1)) / 2 {
            return Err(BoundsError::BadDims(format!(
                "|E| = {n_edges} exceeds N(N-1)/2 for N = {n_tasks}"
            )));
        }
        Ok(ProblemDims { n_tasks, n_edges, m_devices, horizon })
    }

    pub fn for_graph(graph: &crate::graph::TaskGraph, m_devices: usize, horizon: usize) -> Result<Self, BoundsError> {
        Self::new(graph.n_tasks(), graph.n_edges(), m_devices, horizon)
    }

    fn n(&self) -> f64 {
        self.n_tasks as f64
    }

    fn e(&self) -> f64 {
        self.n_edges as f64
    }

    fn m(&self) -> f64 {
        self.m_devices as f64
    }

    fn t(&self) -> f64 {
        self.horizon as f64
    }

    /// `ln(M^N) = N ln M`.
    fn ln_arms(&self) -> f64 {
        self.n() * self.m().ln()
    }

    /// Worst-case offline optimum `(N + |E|) T`.
    pub fn r_max_upper(&self) -> f64 {
        (self.n() + self.e()) * self.t()
    }
}

/// The coupled step size `alpha = gamma / (M (N + |E| M))` that keeps every
/// scaled estimate at or below one.
pub fn coupled_alpha(dims: &ProblemDims, gamma: f64) -> f64 {
    gamma / (dims.m() * (dims.n() + dims.e() * dims.m()))
}

/// Regret bound with a validity note for the small-M / few-edges regime,
/// where the second-moment inequality behind it needs `M >= 3, |E| >= 3`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Theorem1Bound {
    pub value: f64,
    pub regime_valid: bool,
}

fn regret_bound_formula(dims: &ProblemDims, gamma: f64, r_max: f64) -> f64 {
    let e1 = std::f64::consts::E - 1.0;
    e1 * gamma * r_max + dims.m() * (dims.n() + dims.e() * dims.m()) * dims.ln_arms() / gamma
}

/// `(e-1) gamma R_max + M (N + |E| M) ln(M^N) / gamma` for `gamma` in the
/// open interval `(0, 1)`.
pub fn theorem1_bound(
    dims: &ProblemDims,
    gamma: f64,
    r_max: f64,
) -> Result<Theorem1Bound, BoundsError> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(BoundsError::BadGamma(gamma));
    }
    Ok(Theorem1Bound {
        value: regret_bound_formula(dims, gamma, r_max),
        regime_valid: dims.m_devices >= 3 && dims.n_edges >= 3,
    })
}

/// Tuned exploration rate, its bound, and the rounded closed form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Corollary1 {
    pub gamma_star: f64,
    /// The bound actually achieved at `gamma_star` with
    /// `R_max = (N + |E|) T`; its constant is the exact `2 sqrt(e-1)`
    /// (~2.6217) when the rate is unclamped.
    pub bound: f64,
    /// The rounded closed form `2.63 sqrt((N+|E|)(N+|E|M) M N T ln M)`.
    pub closed_form_bound: f64,
}

/// The tuned rate `min{1, sqrt(M (N + |E| M) ln(M^N) / ((e-1)(N+|E|) T))}`
/// and both bound forms.
pub fn corollary1(dims: &ProblemDims) -> Corollary1 {
    let gamma_star = tuned_gamma(dims, dims.horizon);
    let bound = regret_bound_formula(dims, gamma_star, dims.r_max_upper());
    let closed_form_bound = 2.63
        * ((dims.n() + dims.e())
            * (dims.n() + dims.e() * dims.m())
            * dims.m()
            * dims.n()
            * dims.t()
            * dims.m().ln())
        .sqrt();
    Corollary1 { gamma_star, bound, closed_form_bound }
}

fn tuned_gamma(dims: &ProblemDims, t: usize) -> f64 {
    let e1 = std::f64::consts::E - 1.0;
    let raw = (dims.m() * (dims.n() + dims.e() * dims.m()) * dims.ln_arms()
        / (e1 * (dims.n() + dims.e()) * t as f64))
        .sqrt();
    raw.min(1.0)
}

/// Frames until the bound's slope drops below `c`:
/// `T0 = (1.73 / c^2) (N + |E|)(N + |E| M) M N ln M`.
pub fn learning_time(dims: &ProblemDims, c: f64) -> Result<f64, BoundsError> {
    if c <= 0.0 {
        return Err(BoundsError::BadDims(format!("slope constant must be positive, got {c}")));
    }
    Ok(1.73 / (c * c)
        * (dims.n() + dims.e())
        * (dims.n() + dims.e() * dims.m())
        * dims.m()
        * dims.n()
        * dims.m().ln())
}

/// Per-frame decaying exploration rate: the tuned rate with the current
/// frame index in place of the horizon. Non-increasing in `t`, in `(0, 1]`.
pub fn varying_gamma(dims: &ProblemDims, t: usize) -> f64 {
    assert!(t >= 1, "frame indices are 1-based");
    tuned_gamma(dims, t)
}
