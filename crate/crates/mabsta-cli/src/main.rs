//! CLI harness: run experiments from JSON configs, reproduce the adaptivity
//! scenario, print regret bounds, generate synthetic traces, and score a
//! recorded trace offline.

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use mabsta::bounds::{corollary1, learning_time, theorem1_bound, ProblemDims};
use mabsta::harness::{
    adaptivity_experiment, gen_trace, oracle_from_files, run_experiment, ExperimentConfig,
    TraceGenConfig,
};
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "mabsta",
    about = "Online task assignment over devices: adversarial bandit learner, baselines and experiment harness",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config and write regret-curve CSVs.
    Run {
        /// JSON experiment config.
        config: PathBuf,
    },
    /// Run the Markov-swap adaptivity scenario with rolling-mean output.
    Adaptivity {
        /// JSON experiment config with a markov_swap environment.
        config: PathBuf,
    },
    /// Print the tuned exploration rate, regret bounds and learning time.
    Bound {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        e: usize,
        #[arg(long)]
        m: usize,
        #[arg(long)]
        t: usize,
        /// Slope threshold defining the learning time.
        #[arg(long, default_value_t = 0.05)]
        c: f64,
        /// Also evaluate the bound at this fixed exploration rate.
        #[arg(long)]
        gamma: Option<f64>,
        /// Offline-optimal total for the fixed-rate bound; defaults to the
        /// worst case (N + |E|) T.
        #[arg(long)]
        rmax: Option<f64>,
    },
    /// Generate a synthetic device trace CSV.
    GenTrace {
        /// JSON trace config.
        config: PathBuf,
    },
    /// Best fixed assignment for a recorded trace.
    Oracle {
        /// Trace CSV produced by gen-trace (or the same format).
        trace: PathBuf,
        /// JSON graph spec ({"n_tasks": .., "edges": [[m,n],..], "root": ..}).
        graph: PathBuf,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run { config } => {
            let cfg = ExperimentConfig::from_file(&config)
                .with_context(|| format!("loading {}", config.display()))?;
            if cfg.output.is_none() {
                bail!("config must set \"output\" for the run command");
            }
            let out = run_experiment(&cfg)?;
            let final_row = out.mean.rows.last().expect("at least one row");
            println!(
                "ran {} replicas x {} frames; mean final cumulative rewards:",
                out.replicas.len(),
                final_row.t
            );
            if !final_row.opt_cum.is_nan() {
                println!("  {:<16} {:>14.3}", "offline_opt", final_row.opt_cum);
            }
            for (idx, name) in out.mean.agent_names.iter().enumerate() {
                println!(
                    "  {:<16} {:>14.3}  (regret {:.3}, ratio {:.4})",
                    name,
                    final_row.agent_cums[idx],
                    out.mean.regret(final_row, idx),
                    out.mean.ratio(final_row, idx)
                );
            }
            println!("wrote {}", cfg.output.as_ref().unwrap().display());
        }
        Command::Adaptivity { config } => {
            let cfg = ExperimentConfig::from_file(&config)
                .with_context(|| format!("loading {}", config.display()))?;
            if cfg.output.is_none() {
                bail!("config must set \"output\" for the adaptivity command");
            }
            let out = adaptivity_experiment(&cfg)?;
            let curve = &out.replicas[0];
            let horizon = curve.rewards[0].len();
            println!(
                "adaptivity run: {} replicas, swap at frame {}, window {}",
                out.replicas.len(),
                curve.swap_frame,
                curve.window
            );
            for (idx, name) in curve.agent_names.iter().enumerate() {
                let pre_end = curve.swap_frame.saturating_sub(1).max(1).min(horizon);
                let pre = curve.mean_rolling(idx, 1, pre_end);
                let post = curve.mean_rolling(idx, curve.swap_frame.min(horizon), horizon);
                println!("  {name:<12} pre-swap rolling mean {pre:.4}, post-swap {post:.4}");
            }
            println!("wrote per-replica CSVs next to {}", cfg.output.as_ref().unwrap().display());
        }
        Command::Bound { n, e, m, t, c, gamma, rmax } => {
            let dims = ProblemDims::new(n, e, m, t)?;
            let tuned = corollary1(&dims);
            let t0 = learning_time(&dims, c)?;
            println!("gamma*        = {:.6}", tuned.gamma_star);
            println!("bound(gamma*) = {:.3}", tuned.bound);
            println!("bound(2.63)   = {:.3}", tuned.closed_form_bound);
            println!("T0(c={c})    = {t0:.1}");
            if let Some(g) = gamma {
                let r_max = rmax.unwrap_or_else(|| dims.r_max_upper());
                let b = theorem1_bound(&dims, g, r_max)?;
                let note = if b.regime_valid { "" } else { "  (outside the M>=3, |E|>=3 regime)" };
                println!("bound(gamma={g}, Rmax={r_max}) = {:.3}{note}", b.value);
            }
        }
        Command::GenTrace { config } => {
            let cfg = TraceGenConfig::from_file(&config)
                .with_context(|| format!("loading {}", config.display()))?;
            let frames = gen_trace(&cfg)?;
            println!("wrote {} frames to {}", frames.len(), cfg.output.display());
        }
        Command::Oracle { trace, graph } => {
            let (best, frames) = oracle_from_files(&trace, &graph)?;
            println!(
                "offline optimum over {frames} frames: assignment {:?} (1-based), total reward {:.6}, per-frame {:.6}",
                best.assignment.to_external(),
                best.total_reward,
                best.total_reward / frames as f64
            );
        }
    }
    Ok(())
}
