use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_warpsplit"))
}

fn base_config() -> Value {
    json!({
        "problem": {"type": "lasso", "m": 12, "d": 8, "tau_fraction": 0.3, "seed": 1},
        "solver": {
            "epsilon": 0.05,
            "lambda": {"constant": 1.5},
            "gamma": {"constant": 1.0},
            "mu": {"constant": 1.0},
            "max_iter": 20000,
            "tol": 1e-7
        },
        "schedule": {"policy": "random", "seed": 3, "T": 2, "D": 2},
        "checks": {"embed_check": true}
    })
}

fn write(dir: &Path, name: &str, value: &Value) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, serde_json::to_string_pretty(value).unwrap()).unwrap();
    p
}

fn run(args: &[&str], config: Option<&Path>) -> Output {
    let mut cmd = bin();
    cmd.args(args);
    if let Some(c) = config {
        cmd.arg("--config").arg(c);
    }
    cmd.output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn solve_writes_trace_summary_and_point() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = base_config();
    cfg["output"] = json!({
        "trace": dir.path().join("t.csv"),
        "summary": dir.path().join("s.json"),
        "final_point": dir.path().join("p.json"),
    });
    let path = write(dir.path(), "c.json", &cfg);
    let o = run(&["solve"], Some(&path));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let trace = std::fs::read_to_string(dir.path().join("t.csv")).unwrap();
    assert_eq!(
        trace.lines().next().unwrap(),
        "n,pi,tau,theta,step_norm,kkt_residual,dist_to_reference,wall_clock_ns"
    );
    let summary: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("s.json")).unwrap()).unwrap();
    assert_eq!(summary["converged"], json!(true));
    assert!(summary["final_kkt_residual"].as_f64().unwrap() <= 1e-7);
    assert_eq!(summary["iterations"].as_u64().unwrap() as usize, trace.lines().count() - 1);
    let point: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("p.json")).unwrap()).unwrap();
    assert_eq!(point["x"][0].as_array().unwrap().len(), 8);
    assert_eq!(point["v"][0].as_array().unwrap().len(), 12);
    // stdout carries the same summary
    let printed: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(printed, summary);
}

#[test]
fn relaxation_out_of_range_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = base_config();
    cfg["solver"]["lambda"] = json!({"constant": 2.5});
    let o = run(&["solve"], Some(&write(dir.path(), "c.json", &cfg)));
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("[epsilon, 2 - epsilon]"), "{}", stderr(&o));
}

#[test]
fn step_size_out_of_range_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = base_config();
    cfg["solver"]["mu"] = json!({"cycle": [1.0, 100.0]});
    let o = run(&["solve"], Some(&write(dir.path(), "c.json", &cfg)));
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("[epsilon, 1/epsilon]"), "{}", stderr(&o));
}

#[test]
fn unknown_field_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = base_config();
    cfg["solver"]["lamda"] = json!(1.0);
    let o = run(&["solve"], Some(&write(dir.path(), "c.json", &cfg)));
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("lamda"), "{}", stderr(&o));
}

#[test]
fn budget_exhaustion_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(dir.path(), "c.json", &base_config());
    let o = run(&["--quiet", "solve", "--max-iter", "5", "--tol", "1e-14"], Some(&path));
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn missing_config_file_exits_one() {
    let o = run(&["solve", "--config", "/nonexistent/config.json"], None);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(run(&["solve"], None).status.code(), Some(1));
    assert_eq!(run(&["frobnicate"], None).status.code(), Some(1));
    assert_eq!(run(&["--help"], None).status.code(), Some(0));
}

#[test]
fn verify_passes_for_synchronous_and_asynchronous_runs() {
    let dir = tempfile::tempdir().unwrap();
    for (policy, t, d) in [("synchronous", 0, 0), ("random", 3, 3), ("round_robin", 2, 1)] {
        let mut cfg = base_config();
        cfg["schedule"] = json!({"policy": policy, "seed": 4, "T": t, "D": d});
        cfg["solver"]["error_model"] = json!({"mode": {"type": "random_shrink", "seed": 4, "initial_scale": 0.5}});
        let path = write(dir.path(), "c.json", &cfg);
        let o = run(&["verify", "--max-iter", "150", "--tol", "0"], Some(&path));
        assert_eq!(o.status.code(), Some(0), "{policy}: {}", stderr(&o));
        let rep: Value = serde_json::from_slice(&o.stdout).unwrap();
        assert_eq!(rep["passed"], json!(true));
        assert_eq!(rep["iterations"], json!(150));
        assert!(rep["max_divergence"].as_f64().unwrap() <= 1e-10);
    }
}

#[test]
fn verify_reports_the_corrupted_iteration() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(dir.path(), "c.json", &base_config());
    let o = run(
        &["verify", "--max-iter", "50", "--tol", "0", "--corrupt-kernel-at", "10"],
        Some(&path),
    );
    assert_ne!(o.status.code(), Some(0));
    let err = stderr(&o);
    assert!(err.contains("divergence: iteration 10"), "{err}");
}

#[test]
fn verify_requires_the_embed_check() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = base_config();
    cfg["checks"] = json!({"embed_check": false});
    let o = run(&["verify"], Some(&write(dir.path(), "c.json", &cfg)));
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("checks.embed_check"));
}

#[test]
fn generated_schedules_validate() {
    let o = run(
        &["validate-schedule", "--policy", "random", "-T", "3", "-D", "3", "--primal", "3", "--dual", "2", "--length", "5000"],
        None,
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rep: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(rep["ok"], json!(true));
    assert!(rep["max_staleness"].as_u64().unwrap() <= 6);
}

fn schedule_file(dir: &Path, records: Value, t: usize, d: usize) -> PathBuf {
    write(dir, "s.json", &json!({"T": t, "D": d, "records": records}))
}

#[test]
fn schedule_files_are_checked_rule_by_rule() {
    let dir = tempfile::tempdir().unwrap();
    let rec = |p: Value, q: Value, c: Value, d: Value| json!({"active_primal": p, "active_dual": q, "c": c, "d": d});

    let good = schedule_file(
        dir.path(),
        json!([
            rec(json!([0, 1]), json!([0]), json!([0, 0]), json!([0])),
            rec(json!([1]), json!([0]), json!([1, 0]), json!([1])),
            rec(json!([0]), json!([0]), json!([1, 2]), json!([2])),
        ]),
        1,
        1,
    );
    let o = run(&["validate-schedule", "--schedule", good.to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    // block 1 missing from the first activation set
    let not_initial = schedule_file(
        dir.path(),
        json!([rec(json!([0]), json!([0]), json!([0, 0]), json!([0]))]),
        1,
        1,
    );
    let o = run(&["validate-schedule", "--schedule", not_initial.to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("not active at start"), "{}", stderr(&o));

    // reads two iterations back with D = 1
    let too_stale = schedule_file(
        dir.path(),
        json!([
            rec(json!([0, 1]), json!([0]), json!([0, 0]), json!([0])),
            rec(json!([0, 1]), json!([0]), json!([1, 1]), json!([1])),
            rec(json!([0, 1]), json!([0]), json!([0, 2]), json!([2])),
        ]),
        1,
        1,
    );
    let o = run(&["validate-schedule", "--schedule", too_stale.to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(1));
    let rep: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(rep["violation"]["iteration"], json!(2));
    assert!(stderr(&o).contains("outside delay bound"));

    // block 1 idle for longer than T = 1
    let uncovered = schedule_file(
        dir.path(),
        json!([
            rec(json!([0, 1]), json!([0]), json!([0, 0]), json!([0])),
            rec(json!([0]), json!([0]), json!([1, 1]), json!([1])),
            rec(json!([0]), json!([0]), json!([2, 2]), json!([2])),
        ]),
        1,
        0,
    );
    let o = run(&["validate-schedule", "--schedule", uncovered.to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("coverage window"), "{}", stderr(&o));
}

#[test]
fn list_problems_names_every_family() {
    let o = run(&["list-problems"], None);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8(o.stdout).unwrap();
    for name in ["lasso", "feasibility", "multiblock_quadratic", "inline"] {
        assert!(text.contains(name), "{name} missing");
    }
}

#[test]
fn parallel_jobs_write_one_trace_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("trace.csv");
    let path = write(dir.path(), "c.json", &base_config());
    let o = run(
        &["--quiet", "solve", "--jobs", "2", "--seed", "10", "--trace", trace.to_str().unwrap()],
        Some(&path),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let a = std::fs::read_to_string(dir.path().join("trace.seed10.csv")).unwrap();
    let b = std::fs::read_to_string(dir.path().join("trace.seed11.csv")).unwrap();
    assert!(a.lines().count() > 1 && b.lines().count() > 1);
    // different seeds, different schedules
    assert_ne!(
        warpsplit_cli::trace::strip_wall_clock(&a),
        warpsplit_cli::trace::strip_wall_clock(&b)
    );
}

#[test]
fn jsonl_traces_have_one_object_per_iteration() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = base_config();
    cfg["output"] = json!({"trace": dir.path().join("t.jsonl"), "trace_format": "jsonl"});
    cfg["checks"] = json!({"reference_check": true});
    let o = run(&["--quiet", "solve"], Some(&write(dir.path(), "c.json", &cfg)));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = std::fs::read_to_string(dir.path().join("t.jsonl")).unwrap();
    for (n, line) in text.lines().enumerate() {
        let r: Value = serde_json::from_str(line).unwrap();
        assert_eq!(r["n"], json!(n));
        assert!(r["dist_to_reference"].is_f64());
    }
}

#[test]
fn seed_override_changes_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(dir.path(), "c.json", &base_config());
    let trace = |seed: &str| {
        let t = dir.path().join(format!("{seed}.csv"));
        let o = run(&["--quiet", "solve", "--seed", seed, "--trace", t.to_str().unwrap()], Some(&path));
        assert_eq!(o.status.code(), Some(0));
        warpsplit_cli::trace::strip_wall_clock(&std::fs::read_to_string(t).unwrap())
    };
    assert_eq!(trace("5"), trace("5"));
    assert_ne!(trace("5"), trace("6"));
}
