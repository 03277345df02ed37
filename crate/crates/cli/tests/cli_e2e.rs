//! End-to-end exercises of the `sbridge` binary: a tiny training run and the
//! full file-format round trip through sample/translate/eval/oracle/plot,
//! plus the exit-code contract.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sbridge"))
}

fn fresh_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join("sbridge-e2e").join(name);
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn write_tiny_config(dir: &Path) -> PathBuf {
    let path = dir.join("tiny.toml");
    fs::write(
        &path,
        r#"
name = "tiny"
seed = 11

[task]
kind = "unconditional"
[task.data]
kind = "eight_gaussians"

[bridge]
timesteps = 4
horizon = 0.4

[training]
ipf_stages = 2
iters_backward = 40
iters_forward = 20
batch_size = 32
cache_trajectories = 64
cache_refresh_every = 20

[net]
hidden = [16]
time_embed_dim = 8

[eval]
n_samples = 256
n_projections = 16
"#,
    )
    .unwrap();
    path
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("spawn sbridge");
    assert!(
        out.status.success(),
        "command failed ({:?}):\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

#[test]
fn pipeline_train_sample_translate_eval_plot() {
    let dir = fresh_dir("pipeline");
    let config = write_tiny_config(&dir);
    let runs = dir.join("runs");

    run_ok(bin().args(["train"]).arg(&config).args([
        "--run-dir",
        runs.to_str().unwrap(),
        "--quiet",
    ]));

    let run = runs.join("tiny");
    assert_eq!(
        fs::read(&config).unwrap(),
        fs::read(run.join("config.toml")).unwrap(),
        "config copy must be verbatim"
    );
    let metrics = fs::read_to_string(run.join("metrics.csv")).unwrap();
    let mut lines = metrics.lines();
    assert_eq!(
        lines.next().unwrap(),
        "stage,direction,iteration,loss,sliced_w,mode_coverage"
    );
    assert!(metrics.lines().any(|l| l.starts_with("1,backward,0,")));
    // Per-half-stage evaluation rows have an empty loss column and a metric.
    assert!(
        metrics.lines().any(|l| l.starts_with("2,forward,20,,")),
        "expected an eval row for the final forward half-stage:\n{metrics}"
    );
    let ckpt = run.join("stage_2.ckpt.json");
    assert!(run.join("stage_1.ckpt.json").is_file());
    assert!(ckpt.is_file());

    // Sampling is deterministic in (checkpoint, seed) and lands near the
    // data scale (ring radius 8 for this config).
    let s1 = dir.join("s1.csv");
    let s2 = dir.join("s2.csv");
    for out in [&s1, &s2] {
        run_ok(bin().args(["sample"]).arg(&ckpt).args([
            "--n",
            "64",
            "--seed",
            "3",
            "--quiet",
            "--out",
            out.to_str().unwrap(),
        ]));
    }
    assert_eq!(fs::read(&s1).unwrap(), fs::read(&s2).unwrap());
    let text = fs::read_to_string(&s1).unwrap();
    assert_eq!(text.lines().count(), 65, "header plus one row per sample");
    assert_eq!(text.lines().next().unwrap(), "x,y");

    // A different seed gives different draws.
    let s3 = dir.join("s3.csv");
    run_ok(bin().args(["sample"]).arg(&ckpt).args([
        "--n",
        "64",
        "--seed",
        "4",
        "--quiet",
        "--out",
        s3.to_str().unwrap(),
    ]));
    assert_ne!(fs::read(&s1).unwrap(), fs::read(&s3).unwrap());

    // Checkpoint load/save round trip preserves sampling bit for bit.
    let resaved = dir.join("resaved.ckpt.json");
    sbridge_cli::checkpoint::Checkpoint::load(&ckpt)
        .unwrap()
        .save(&resaved)
        .unwrap();
    let s4 = dir.join("s4.csv");
    run_ok(bin().args(["sample"]).arg(&resaved).args([
        "--n",
        "64",
        "--seed",
        "3",
        "--quiet",
        "--out",
        s4.to_str().unwrap(),
    ]));
    assert_eq!(fs::read(&s1).unwrap(), fs::read(&s4).unwrap());

    // n = 0 writes a header-only file and succeeds.
    let s0 = dir.join("s0.csv");
    run_ok(bin().args(["sample"]).arg(&ckpt).args([
        "--n",
        "0",
        "--quiet",
        "--out",
        s0.to_str().unwrap(),
    ]));
    assert_eq!(fs::read_to_string(&s0).unwrap(), "x,y\n");

    // Translate preserves row count (including zero rows).
    let input = dir.join("input.csv");
    fs::write(&input, "x,y\n8,0\n0,8\n-8,0\n").unwrap();
    let translated = dir.join("translated.csv");
    run_ok(bin().args(["translate"]).arg(&ckpt).args([
        "--input",
        input.to_str().unwrap(),
        "--out",
        translated.to_str().unwrap(),
        "--quiet",
    ]));
    let out_text = fs::read_to_string(&translated).unwrap();
    assert_eq!(out_text.lines().count(), 4);

    let empty_in = dir.join("empty_in.csv");
    fs::write(&empty_in, "x,y\n").unwrap();
    let empty_out = dir.join("empty_out.csv");
    run_ok(bin().args(["translate"]).arg(&ckpt).args([
        "--input",
        empty_in.to_str().unwrap(),
        "--out",
        empty_out.to_str().unwrap(),
        "--quiet",
    ]));
    assert_eq!(fs::read_to_string(&empty_out).unwrap(), "x,y\n");

    // Eval prints a JSON report with the expected fields.
    let out = run_ok(bin().args(["eval"]).arg(&ckpt).args(["--n", "512"]));
    let report: serde_json::Value =
        serde_json::from_slice(&out.stdout).expect("eval emits JSON on stdout");
    assert!(report["sliced_w2"].as_f64().unwrap().is_finite());
    assert_eq!(report["n_samples"].as_u64(), Some(512));
    assert_eq!(report["per_mode_counts"].as_array().unwrap().len(), 8);

    // Trajectory CSV renders one panel per slice (T = 4 -> 5 panels).
    let traj = dir.join("traj.csv");
    run_ok(bin().args(["sample"]).arg(&ckpt).args([
        "--n",
        "16",
        "--quiet",
        "--out",
        dir.join("traj_points.csv").to_str().unwrap(),
        "--trajectories",
        traj.to_str().unwrap(),
    ]));
    let svg_path = dir.join("traj.svg");
    run_ok(
        bin()
            .args(["plot"])
            .arg(&traj)
            .arg(&svg_path)
            .args(["--quiet"]),
    );
    let svg = fs::read_to_string(&svg_path).unwrap();
    assert_eq!(svg.matches("class=\"panel\"").count(), 5);
    assert_eq!(svg.matches("<circle").count(), 5 * 16);
}

#[test]
fn training_reruns_are_bit_identical() {
    let dir = fresh_dir("determinism");
    let config = write_tiny_config(&dir);
    let runs_a = dir.join("a");
    let runs_b = dir.join("b");
    for runs in [&runs_a, &runs_b] {
        run_ok(bin().args(["train"]).arg(&config).args([
            "--run-dir",
            runs.to_str().unwrap(),
            "--quiet",
        ]));
    }
    for stage in 1..=2 {
        let a = fs::read(runs_a.join(format!("tiny/stage_{stage}.ckpt.json"))).unwrap();
        let b = fs::read(runs_b.join(format!("tiny/stage_{stage}.ckpt.json"))).unwrap();
        assert_eq!(a, b, "stage {stage} checkpoints differ between reruns");
    }
    assert_eq!(
        fs::read(runs_a.join("tiny/metrics.csv")).unwrap(),
        fs::read(runs_b.join("tiny/metrics.csv")).unwrap()
    );
}

#[test]
fn missing_timesteps_exits_2_and_names_the_field() {
    let dir = fresh_dir("missing-timesteps");
    let config = dir.join("bad.toml");
    fs::write(
        &config,
        r#"
[task]
kind = "unconditional"
[task.data]
kind = "eight_gaussians"

[bridge]
horizon = 0.5
"#,
    )
    .unwrap();
    let out = bin()
        .args(["train"])
        .arg(&config)
        .args(["--run-dir", dir.join("runs").to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("timesteps"), "stderr was: {stderr}");
}

#[test]
fn usage_errors_exit_2() {
    let out = bin().args(["no-such-subcommand"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_checkpoint_exits_4() {
    let dir = fresh_dir("missing-ckpt");
    let out = bin()
        .args(["sample"])
        .arg(dir.join("absent.ckpt.json"))
        .args(["--n", "4"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn oracle_end_to_end() {
    let dir = fresh_dir("oracle");
    let mu = dir.join("mu.csv");
    let nu = dir.join("nu.csv");
    fs::write(&mu, "x,y,weight\n0,0,0.5\n1,0,0.5\n").unwrap();
    fs::write(&nu, "x,y\n0,1\n1,1\n1,2\n").unwrap();
    let plan = dir.join("plan.csv");
    let summary = dir.join("summary.json");
    run_ok(bin().args(["oracle"]).args([
        "--mu",
        mu.to_str().unwrap(),
        "--nu",
        nu.to_str().unwrap(),
        "--eps",
        "0.5",
        "--plan-out",
        plan.to_str().unwrap(),
        "--summary-out",
        summary.to_str().unwrap(),
        "--quiet",
    ]));

    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&summary).unwrap()).unwrap();
    assert_eq!(summary["converged"].as_bool(), Some(true));
    assert!(summary["violation"].as_f64().unwrap() <= 1e-9);
    assert!(summary["transport_cost"].as_f64().unwrap() > 0.0);

    let plan_text = fs::read_to_string(&plan).unwrap();
    let mut lines = plan_text.lines();
    assert_eq!(lines.next().unwrap(), "i,j,mass");
    let mut total = 0.0;
    let mut rows = 0;
    for line in lines {
        let mass: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
        total += mass;
        rows += 1;
    }
    assert_eq!(rows, 6, "dense 2x3 plan");
    assert!((total - 1.0).abs() < 1e-9, "plan mass sums to 1, got {total}");

    // Duplicate support points are a configuration error.
    let dup = dir.join("dup.csv");
    fs::write(&dup, "x,y\n0,0\n0,0\n").unwrap();
    let out = bin()
        .args(["oracle"])
        .args([
            "--mu",
            dup.to_str().unwrap(),
            "--nu",
            nu.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn plot_handles_empty_and_single_point_files() {
    let dir = fresh_dir("plot-edges");
    let empty = dir.join("empty.csv");
    fs::write(&empty, "x,y\n").unwrap();
    let svg_path = dir.join("empty.svg");
    run_ok(
        bin()
            .args(["plot"])
            .arg(&empty)
            .arg(&svg_path)
            .args(["--quiet"]),
    );
    let svg = fs::read_to_string(&svg_path).unwrap();
    assert!(svg.starts_with("<svg"));
    assert!(svg.trim_end().ends_with("</svg>"));
    assert_eq!(svg.matches("<circle").count(), 0);

    let single = dir.join("single.csv");
    fs::write(&single, "x,y\n0.25,-0.75\n").unwrap();
    let svg_path = dir.join("single.svg");
    run_ok(
        bin()
            .args(["plot"])
            .arg(&single)
            .arg(&svg_path)
            .args(["--quiet"]),
    );
    let svg = fs::read_to_string(&svg_path).unwrap();
    assert_eq!(svg.matches("<circle").count(), 1);
}
