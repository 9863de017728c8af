//! End-to-end checks of the command-line surface: determinism of artifacts,
//! validation errors with nonzero exit codes, and the stats banner.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_mvflow")
}

fn tmpdir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("mvflow-cli-{tag}"));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn run(args: &[&str], cwd: &Path) -> Output {
    Command::new(bin()).args(args).current_dir(cwd).output().expect("spawn mvflow")
}

fn write_tiny_config(dir: &Path) -> PathBuf {
    let cfg = "\
seed = 11
model.dim = 16
model.heads = 2
model.layers = 2
model.dual_layers = 2
model.text_len = 8
model.stride = 4
data.frames = 5
data.height = 16
data.width = 16
data.count = 8
train.phase1_steps = 3
train.phase2_steps = 4
train.checkpoint_every = 2
sample.steps = 3
paths.dataset = tiny.hmvd
paths.checkpoint_dir = ckpt
paths.metrics_dir = metrics
";
    let path = dir.join("tiny.cfg");
    fs::write(&path, cfg).unwrap();
    path
}

fn gen_tiny_data(dir: &Path) {
    let out = run(
        &["gen-data", "--out", "tiny.hmvd", "--count", "8", "--frames", "5", "--size", "16x16", "--seed", "11"],
        dir,
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn gen_data_is_deterministic_and_reports_token_arithmetic() {
    let dir = tmpdir("gendata");
    let args = ["gen-data", "--out", "a.hmvd", "--count", "10", "--frames", "9", "--size", "16x16", "--seed", "7"];
    let out1 = run(&args, &dir);
    assert!(out1.status.success());
    let mut args2 = args;
    args2[2] = "b.hmvd";
    let out2 = run(&args2, &dir);
    assert!(out2.status.success());
    assert_eq!(fs::read(dir.join("a.hmvd")).unwrap(), fs::read(dir.join("b.hmvd")).unwrap());

    let stdout = String::from_utf8_lossy(&out1.stdout);
    assert!(stdout.contains("motion tokens/clip = 459"), "9 frames x 51: {stdout}");
}

#[test]
fn gen_data_rejects_bad_frame_count() {
    let dir = tmpdir("gendata-bad");
    let out = run(
        &["gen-data", "--out", "x.hmvd", "--count", "2", "--frames", "8", "--size", "16x16", "--seed", "1"],
        &dir,
    );
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.starts_with("error:"), "{err}");
}

#[test]
fn train_is_deterministic_modulo_timing() {
    let dir = tmpdir("train-det");
    let cfg = write_tiny_config(&dir);
    gen_tiny_data(&dir);
    let run_once = |tag: &str| {
        let out = run(
            &["train", "--config", cfg.to_str().unwrap(), "--phase", "all", "--tag", tag],
            &dir,
        );
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let metrics = fs::read_to_string(dir.join(format!("metrics/phase2_{tag}.csv"))).unwrap();
        // Strip the wall_ms column.
        metrics
            .lines()
            .map(|l| l.rsplit_once(',').map(|(head, _)| head.to_string()).unwrap_or_default())
            .collect::<Vec<_>>()
    };
    assert_eq!(run_once("r1"), run_once("r2"));
}

#[test]
fn phase2_without_phase1_checkpoint_fails_without_ablation_flag() {
    let dir = tmpdir("train-gate");
    let cfg = write_tiny_config(&dir);
    gen_tiny_data(&dir);
    let out = run(&["train", "--config", cfg.to_str().unwrap(), "--phase", "2"], &dir);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("skip-phase1"));

    // The ablation flag unlocks the one-stage run and tags its artifacts.
    let out = run(
        &["train", "--config", cfg.to_str().unwrap(), "--phase", "2", "--skip-phase1", "--tag", "ab"],
        &dir,
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.join("metrics/phase2_ab_skip.csv").exists());
    assert!(dir.join("ckpt/phase2_ab_skip.emck").exists());
}

#[test]
fn sample_artifacts_are_deterministic_and_modes_validated() {
    let dir = tmpdir("sample");
    let cfg = write_tiny_config(&dir);
    gen_tiny_data(&dir);
    let out = run(&["train", "--config", cfg.to_str().unwrap(), "--phase", "all", "--tag", "t"], &dir);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let ckpt = "ckpt/phase2_t.emck";

    // m2v without --cond is a categorized error.
    let out = run(&["sample", "--ckpt", ckpt, "--mode", "m2v", "--out", "oops"], &dir);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--cond"));

    // Identical invocations produce identical bytes and report call counts.
    let args = [
        "sample", "--ckpt", ckpt, "--mode", "joint", "--prompt-tokens", "1,5,2,21", "--seed", "9",
        "--out", "s1",
    ];
    let out1 = run(&args, &dir);
    assert!(out1.status.success(), "{}", String::from_utf8_lossy(&out1.stderr));
    assert!(String::from_utf8_lossy(&out1.stdout).contains("model evaluations per step: 2"));
    let mut args2 = args;
    args2[args.len() - 1] = "s2";
    assert!(run(&args2, &dir).status.success());
    for f in ["video.rgb", "video.ppm", "motion.f32", "sample.hmvd"] {
        assert_eq!(
            fs::read(dir.join("s1").join(f)).unwrap(),
            fs::read(dir.join("s2").join(f)).unwrap(),
            "{f} differs between identical runs"
        );
    }

    // v2m against a condition clip; 2 evaluations per step.
    let out = run(
        &["sample", "--ckpt", ckpt, "--mode", "v2m", "--cond", "tiny.hmvd", "--cond-index", "1", "--out", "s3"],
        &dir,
    );
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("model evaluations per step: 2"));

    // m2v has 3 evaluations per step.
    let out = run(
        &["sample", "--ckpt", ckpt, "--mode", "m2v", "--cond", "tiny.hmvd", "--out", "s4"],
        &dir,
    );
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("model evaluations per step: 3"));
}

#[test]
fn sampling_gate_requires_phase2() {
    let dir = tmpdir("gate2");
    let cfg = write_tiny_config(&dir);
    gen_tiny_data(&dir);
    let out = run(&["train", "--config", cfg.to_str().unwrap(), "--phase", "1", "--tag", "p1"], &dir);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = run(
        &["sample", "--ckpt", "ckpt/phase1_p1.emck", "--mode", "joint", "--out", "nope"],
        &dir,
    );
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("phase"));
    // The override flag allows it (used for untrained baselines).
    let out = run(
        &[
            "sample", "--ckpt", "ckpt/phase1_p1.emck", "--mode", "joint", "--out", "forced",
            "--allow-untrained",
        ],
        &dir,
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn resume_matches_uninterrupted_run() {
    let dir = tmpdir("resume");
    let cfg = write_tiny_config(&dir);
    gen_tiny_data(&dir);
    // Reference: phases 1+2 in one go.
    assert!(run(&["train", "--config", cfg.to_str().unwrap(), "--phase", "all", "--tag", "ref"], &dir)
        .status
        .success());
    // Interrupted: phase 1 only, then resume into phase 2.
    assert!(run(&["train", "--config", cfg.to_str().unwrap(), "--phase", "1", "--tag", "cut"], &dir)
        .status
        .success());
    let out = run(
        &[
            "train", "--config", cfg.to_str().unwrap(), "--phase", "2", "--resume",
            "ckpt/phase1_cut.emck", "--tag", "cut",
        ],
        &dir,
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let strip = |name: &str| {
        fs::read_to_string(dir.join(name))
            .unwrap()
            .lines()
            .map(|l| l.rsplit_once(',').map(|(h, _)| h.to_string()).unwrap_or_default())
            .collect::<Vec<_>>()
    };
    assert_eq!(strip("metrics/phase2_ref.csv"), strip("metrics/phase2_cut.csv"));
}

#[test]
fn eval_writes_report_rows() {
    let dir = tmpdir("eval");
    let cfg = write_tiny_config(&dir);
    gen_tiny_data(&dir);
    assert!(run(&["train", "--config", cfg.to_str().unwrap(), "--phase", "all", "--tag", "e"], &dir)
        .status
        .success());
    let out = run(
        &[
            "eval", "--ckpt", "ckpt/phase2_e.emck", "--dataset", "tiny.hmvd", "--report",
            "report.csv", "--clips", "2",
        ],
        &dir,
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("mean_pa_mpjpe_mm="), "{stdout}");
    let report = fs::read_to_string(dir.join("report.csv")).unwrap();
    let mut lines = report.lines();
    assert!(lines.next().unwrap().starts_with("clip,kind,seed,mpjpe_mm,pa_mpjpe_mm"));
    let mut rows = 0;
    for line in lines {
        let cols: Vec<&str> = line.split(',').collect();
        let mpjpe: f64 = cols[3].parse().unwrap();
        let pa: f64 = cols[4].parse().unwrap();
        assert!(pa <= mpjpe + 1e-9, "pa must not exceed mpjpe: {line}");
        rows += 1;
    }
    assert_eq!(rows, 2);
}

#[test]
fn inspect_attn_dumps_full_matrix() {
    let dir = tmpdir("attn");
    let cfg = write_tiny_config(&dir);
    gen_tiny_data(&dir);
    assert!(run(&["train", "--config", cfg.to_str().unwrap(), "--phase", "all", "--tag", "a"], &dir)
        .status
        .success());
    let out = run(
        &[
            "inspect-attn", "--ckpt", "ckpt/phase2_a.emck", "--dataset", "tiny.hmvd", "--clip",
            "0", "--out", "attn.csv",
        ],
        &dir,
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("mean_temporal_offset="));
    let csv = fs::read_to_string(dir.join("attn.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    // 5-frame 16x16 stride-4: 2*4*4 = 32 video tokens; 5*51 = 255 motion.
    assert_eq!(rows.len(), 32);
    assert_eq!(rows[0].split(',').count(), 255);
}
