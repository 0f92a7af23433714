//! End-to-end CLI checks: every subcommand through the compiled binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mabsta"))
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("binary runs");
    assert!(
        out.status.success(),
        "command failed.\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn work_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("mabsta_cli_{tag}_{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn write(path: &Path, text: &str) {
    std::fs::write(path, text).unwrap();
}

#[test]
fn bound_prints_rate_and_bounds() {
    let out = run_ok(bin().args(["bound", "--n", "5", "--e", "4", "--m", "5", "--t", "100000"]));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("gamma*"), "{stdout}");
    assert!(stdout.contains("bound(2.63)"), "{stdout}");
    assert!(stdout.contains("T0"), "{stdout}");

    // Fixed-gamma evaluation with a validity note outside the M>=3 regime.
    let out = run_ok(bin().args([
        "bound", "--n", "3", "--e", "2", "--m", "2", "--t", "1000", "--gamma", "0.2",
    ]));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("outside the M>=3"), "{stdout}");
}

#[test]
fn gen_trace_oracle_and_run_pipeline() {
    let dir = work_dir("pipeline");
    let graph_json = r#"{"n_tasks": 3, "edges": [[1, 2], [2, 3]], "root": 3}"#;
    write(&dir.join("graph.json"), graph_json);
    write(
        &dir.join("trace_cfg.json"),
        &format!(
            r#"{{
                "graph": {graph_json},
                "devices": 3,
                "horizon": 200,
                "seed": 99,
                "output": "{}"
            }}"#,
            dir.join("trace.csv").display()
        ),
    );

    let out = run_ok(bin().args(["gen-trace".as_ref(), dir.join("trace_cfg.json").as_os_str()]));
    assert!(String::from_utf8(out.stdout).unwrap().contains("wrote 200 frames"));
    let trace = std::fs::read_to_string(dir.join("trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 201);

    let out = run_ok(bin().args([
        "oracle".as_ref(),
        dir.join("trace.csv").as_os_str(),
        dir.join("graph.json").as_os_str(),
    ]));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("offline optimum over 200 frames"), "{stdout}");

    // Replay the trace through a full experiment.
    write(
        &dir.join("run_cfg.json"),
        &format!(
            r#"{{
                "graph": {graph_json},
                "devices": 3,
                "horizon": 200,
                "replicas": 1,
                "env": {{"kind": "replay", "path": "{}"}},
                "agents": [
                    {{"kind": "mabsta", "seed": 5}},
                    {{"kind": "random", "seed": 6}}
                ],
                "sample_every": 50,
                "output": "{}"
            }}"#,
            dir.join("trace.csv").display(),
            dir.join("curve.csv").display()
        ),
    );
    let out = run_ok(bin().args(["run".as_ref(), dir.join("run_cfg.json").as_os_str()]));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("mean final cumulative rewards"), "{stdout}");
    let curve = std::fs::read_to_string(dir.join("curve.csv")).unwrap();
    assert!(curve.starts_with("t,opt_cum,mabsta_vary_cum"));
    assert!(dir.join("curve.r0.csv").exists());

    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn adaptivity_subcommand_runs() {
    let dir = work_dir("adaptivity");
    write(
        &dir.join("cfg.json"),
        &format!(
            r#"{{
                "graph": {{"n_tasks": 4, "edges": [[1,2],[2,3],[3,4]], "root": 4}},
                "devices": 2,
                "horizon": 150,
                "replicas": 2,
                "env": {{"kind": "markov_swap", "seed": 12, "config": {{
                    "transitions": [[[0.95,0.05],[0.90,0.10]],[[0.10,0.90],[0.05,0.95]]],
                    "good_reward": 0.9, "bad_reward": 0.1,
                    "swap_frame": 50, "start_good_prob": [1.0, 0.0]
                }}}},
                "agents": [
                    {{"kind": "mabsta", "gamma": 0.3, "seed": 1}},
                    {{"kind": "myopic"}}
                ],
                "rolling_window": 10,
                "output": "{}"
            }}"#,
            dir.join("adapt.csv").display()
        ),
    );
    let out = run_ok(bin().args(["adaptivity".as_ref(), dir.join("cfg.json").as_os_str()]));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("swap at frame 50"), "{stdout}");
    assert!(stdout.contains("post_opt"), "{stdout}");
    let csv = std::fs::read_to_string(dir.join("adapt.r0.csv")).unwrap();
    assert!(csv.starts_with("t,mabsta_reward,mabsta_rolling"));
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn errors_exit_nonzero_with_diagnostics() {
    let out = bin().args(["run", "/nonexistent/config.json"]).output().unwrap();
    assert!(!out.status.success());
    assert!(!out.stderr.is_empty());

    // Config parse error.
    let dir = work_dir("badcfg");
    write(&dir.join("bad.json"), "{not json");
    let out = bin().args(["run".as_ref(), dir.join("bad.json").as_os_str()]).output().unwrap();
    assert!(!out.status.success());
    std::fs::remove_dir_all(&dir).unwrap();
}
