use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_flexcomm");

fn flexcomm(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env_remove("FLEXCOMM_SEED").output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

const SMALL: &str = r#"
[cluster]
n = 3

[model]
kind = "softmax_regression"
features = 6
classes = 3

[data]
samples_per_worker = 30

[train]
eta = 0.1
batch = 5
epochs = 3
seed = 1

[compression]
method = "exact"
c = "adaptive"
mode = "var"

[controller]
probe_iters = 2

[network]
segments = [[0, 1.0, 25.0], [2, 50.0, 1.0]]
"#;

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("run.toml");
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn plan_prints_selection_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("plan.csv");
    let out = flexcomm(&[
        "plan", "--alpha-ms", "1", "--bandwidth-gbps", "10", "--model-bytes", "45.5e6", "--workers", "8", "--cr", "0.1",
        "--csv", csv.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("ART_RING"));
    let text = fs::read_to_string(csv).unwrap();
    assert!(text.starts_with("quantity,value\n"));
}

#[test]
fn bad_input_exits_with_two() {
    let plan = |workers: &str, cr: &str| {
        flexcomm(&["plan", "--alpha-ms", "1", "--bandwidth-gbps", "10", "--model-bytes", "1e6", "--workers", workers, "--cr", cr])
    };
    assert_eq!(code(&plan("1", "0.1")), 2);
    assert_eq!(code(&plan("8", "0")), 2);
    assert_eq!(code(&plan("8", "1.5")), 2);
    assert_eq!(code(&flexcomm(&["simulate", "--config", "/nonexistent.toml", "--out", "/tmp/x"])), 2);
    assert_eq!(code(&flexcomm(&["sweep", "--table", "nope", "--out", "/tmp/x.csv"])), 2);
    assert_eq!(code(&flexcomm(&["trace-gen", "--preset", "c1", "--epochs", "0", "--out", "/tmp/x.csv"])), 2);

    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &SMALL.replace("probe_iters = 2", "probe_iters = 2\nbogus = 1"));
    let out = flexcomm(&["simulate", "--config", &cfg, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus"));
}

#[test]
fn runtime_failure_exits_with_one() {
    let out = flexcomm(&["sweep", "--table", "ring-ar-validation", "--out", "/nonexistent/dir/out.csv"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn simulate_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out_dir = dir.path().join("out");
    let out = flexcomm(&["simulate", "--config", &cfg, "--out", out_dir.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    let metrics = fs::read_to_string(out_dir.join("metrics.csv")).unwrap();
    // 30 samples per worker, batch 5, 3 epochs
    assert_eq!(metrics.lines().count(), 1 + 18);
    assert!(metrics.starts_with("step,loss,"));
    let selection = fs::read_to_string(out_dir.join("selection.csv")).unwrap();
    // AG steps have no source rank
    let art_steps = metrics.lines().skip(1).filter(|l| !l.split(',').nth(9).unwrap().starts_with("AG")).count();
    assert!(selection.starts_with("step,rank\n"));
    assert_eq!(selection.lines().count(), 1 + art_steps);
    let events = fs::read_to_string(out_dir.join("controller.csv")).unwrap();
    assert!(events.starts_with("step,trigger,chosen_c,chosen_collective,front_size\n"));
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["steps"], 18);
    assert!(summary["simulated_seconds"]["exploration"].as_f64().unwrap() > 0.0);
}

#[test]
fn seed_override_changes_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let run = |name: &str, seed: Option<&str>| {
        let out_dir = dir.path().join(name);
        let mut cmd = Command::new(BIN);
        cmd.args(["simulate", "--config", &cfg, "--out", out_dir.to_str().unwrap()]).env_remove("FLEXCOMM_SEED");
        if let Some(s) = seed {
            cmd.env("FLEXCOMM_SEED", s);
        }
        let out = cmd.output().unwrap();
        (code(&out), fs::read_to_string(out_dir.join("metrics.csv")).unwrap_or_default())
    };
    let (c0, base) = run("a", None);
    let (c1, same) = run("b", Some("1"));
    let (c2, other) = run("c", Some("2"));
    assert_eq!((c0, c1, c2), (0, 0, 0));
    assert_eq!(base, same);
    assert_ne!(base, other);
    assert_eq!(run("d", Some("x")).0, 2);
}

#[test]
fn sweep_and_trace_gen() {
    let dir = tempfile::tempdir().unwrap();
    let grid = dir.path().join("grid.csv");
    let out = flexcomm(&["sweep", "--table", "collective-grid", "--out", grid.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    assert_eq!(fs::read_to_string(&grid).unwrap().lines().count(), 1 + 36);

    let trace = dir.path().join("c1.csv");
    let out = flexcomm(&["trace-gen", "--preset", "c1", "--epochs", "50", "--out", trace.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    let starts: Vec<String> = fs::read_to_string(&trace)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split(',').next().unwrap().to_string())
        .collect();
    assert_eq!(starts, ["0", "13", "25", "37"]);
}
