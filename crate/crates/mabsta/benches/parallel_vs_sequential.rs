//! Rayon vs sequential on the two data-parallel surfaces: batches of
//! conditioned weight-sum solves (the per-frame marginal workload) and
//! whole-replica experiment sweeps.

use criterion::{criterion_group, criterion_main, Criterion};
use mabsta::dp::{ConditionalFix, CumulativeEstimates, WeightDp};
use mabsta::graph::{GraphSpec, TaskGraph};
use mabsta::harness::{run_experiment_seq, AgentSpec, EnvSpec, ExperimentConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn chain(n: usize) -> TaskGraph {
    TaskGraph::new(n, (0..n - 1).map(|i| (i, i + 1)).collect(), n - 1).unwrap()
}

fn random_estimates(graph: &TaskGraph, m: usize, seed: u64) -> CumulativeEstimates {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut est = CumulativeEstimates::for_graph(graph, m);
    for i in 0..graph.n_tasks() {
        for j in 0..m {
            est.set_node(i, j, rng.random_range(0.0..30.0));
        }
    }
    for e in 0..graph.n_edges() {
        for j in 0..m {
            for k in 0..m {
                est.set_edge(e, j, k, rng.random_range(0.0..30.0));
            }
        }
    }
    est
}

/// One conditioned solve per task: the shape of the observe-path marginal
/// batch, at a size where fan-out pays.
fn bench_conditioned_solves(c: &mut Criterion) {
    let n = 64;
    let m = 8;
    let graph = chain(n);
    let est = random_estimates(&graph, m, 42);
    let dp = WeightDp::new(&graph).unwrap();
    let solve_one = |i: usize| {
        let fix = ConditionalFix::from_pairs(&[(i, i % m)]).unwrap();
        dp.log_weight_sum(&est, 0.01, &fix).unwrap()
    };

    let seq = mabsta::exec::map_collect_seq(n, solve_one);
    #[cfg(feature = "parallel")]
    assert_eq!(seq, mabsta::exec::par_map_collect(n, solve_one));
    let _ = seq;

    let mut group = c.benchmark_group("conditioned_solve_batch");
    group.sample_size(20);
    group.bench_function("sequential", |b| {
        b.iter(|| mabsta::exec::map_collect_seq(n, solve_one))
    });
    #[cfg(feature = "parallel")]
    group.bench_function("rayon", |b| b.iter(|| mabsta::exec::par_map_collect(n, solve_one)));
    group.finish();
}

fn sweep_config() -> ExperimentConfig {
    ExperimentConfig {
        graph: GraphSpec { n_tasks: 5, edges: (1..5).map(|i| [i, i + 1]).collect(), root: 5 },
        devices: 4,
        horizon: 300,
        replicas: 8,
        env: EnvSpec::IidUniform { seed: 7 },
        agents: vec![AgentSpec::Mabsta { gamma: Some(0.2), seed: 1, label: None }],
        output: None,
        sample_every: 300,
        materialize: true,
        rolling_window: None,
    }
}

/// Eight independent replicas of a short learning run.
fn bench_replica_sweep(c: &mut Criterion) {
    let cfg = sweep_config();

    let seq = run_experiment_seq(&cfg).unwrap();
    let par = mabsta::harness::run_experiment(&cfg).unwrap();
    assert_eq!(seq.mean.to_csv_string(), par.mean.to_csv_string());

    let mut group = c.benchmark_group("replica_sweep");
    group.sample_size(10);
    group.bench_function("sequential", |b| b.iter(|| run_experiment_seq(&cfg).unwrap()));
    group.bench_function("default", |b| {
        b.iter(|| mabsta::harness::run_experiment(&cfg).unwrap())
    });
    group.finish();
}

criterion_group!(benches, bench_conditioned_solves, bench_replica_sweep);
criterion_main!(benches);
