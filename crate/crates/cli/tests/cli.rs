//! End-to-end tests that drive the compiled `m2l` binary the way a user
//! would: real argv, real files, real exit codes. Model quality is not under
//! test here (the core crate owns that); these check that the pipeline holds
//! together, that artifacts land where the help text says, and that failure
//! classes stay distinguishable by exit code.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use motion2lang::model::Model;
use motion2lang::training::load_checkpoint;
use tempfile::TempDir;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_m2l")
}

fn smoke_data() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/smoke.jsonl")
}

fn run(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .output()
        .expect("binary spawns")
}

#[track_caller]
fn run_ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "`m2l {}` failed\nstdout: {}\nstderr: {}",
        args.join(" "),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

#[track_caller]
fn assert_exit(args: &[&str], expected: i32) {
    let out = run(args);
    assert_eq!(
        out.status.code(),
        Some(expected),
        "`m2l {}` should exit {expected}\nstderr: {}",
        args.join(" "),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn path_str(p: &Path) -> String {
    p.to_str().expect("utf-8 temp path").to_string()
}

#[test]
fn synth_runs_are_byte_reproducible() {
    let dir = TempDir::new().unwrap();
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    let c = dir.path().join("c.jsonl");
    for (path, seed) in [(&a, "7"), (&b, "7"), (&c, "8")] {
        run_ok(&[
            "synth",
            "--samples",
            "8",
            "--seed",
            seed,
            "--out",
            &path_str(path),
        ]);
    }
    let bytes_a = std::fs::read(&a).unwrap();
    assert_eq!(bytes_a, std::fs::read(&b).unwrap(), "same seed, same bytes");
    assert_ne!(bytes_a, std::fs::read(&c).unwrap(), "different seed, different data");
    assert!(a.with_file_name("a.jsonl.manifest.json").exists());
}

#[test]
fn zero_learning_rate_checkpoint_equals_initialization() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("data.jsonl");
    run_ok(&["synth", "--samples", "6", "--seed", "11", "--out", &path_str(&data)]);
    let out = dir.path().join("run");
    run_ok(&[
        "train",
        "--data",
        &path_str(&data),
        "--embed",
        "8",
        "--hidden",
        "8",
        "--epochs",
        "2",
        "--batch",
        "2",
        "--lr",
        "0",
        "--seed",
        "5",
        "--out",
        &path_str(&out),
    ]);
    let (trained, _, tcfg) = load_checkpoint(&out.join("checkpoint.json")).unwrap();
    assert_eq!(tcfg.unwrap().seed, 5);
    let fresh = Model::init(trained.config.clone(), 5).unwrap();
    assert_eq!(trained.params.len(), fresh.params.len());
    for ((name, got), (_, want)) in trained.params.iter().zip(fresh.params.iter()) {
        assert_eq!(
            got.data(),
            want.data(),
            "parameter {name} drifted despite lr 0"
        );
    }
}

#[test]
fn training_is_reproducible_through_the_cli() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("data.jsonl");
    run_ok(&["synth", "--samples", "6", "--seed", "3", "--out", &path_str(&data)]);
    let first = dir.path().join("first");
    let second = dir.path().join("second");
    for out in [&first, &second] {
        run_ok(&[
            "train",
            "--data",
            &path_str(&data),
            "--embed",
            "8",
            "--hidden",
            "8",
            "--epochs",
            "2",
            "--batch",
            "2",
            "--seed",
            "9",
            "--out",
            &path_str(out),
        ]);
    }
    for name in ["checkpoint.json", "loss.csv"] {
        assert_eq!(
            std::fs::read(first.join(name)).unwrap(),
            std::fs::read(second.join(name)).unwrap(),
            "{name} differs between identically seeded runs"
        );
    }
    let loss = std::fs::read_to_string(first.join("loss.csv")).unwrap();
    assert!(loss.starts_with("epoch,loss\n"));
    assert_eq!(loss.lines().count(), 3, "header plus one line per epoch");
}

/// The whole advertised workflow on the bundled dataset: train, caption,
/// segment, score both ways, export attention tables. The budget is generous
/// (the run takes a few seconds); the point is that it cannot quietly become
/// a ten-minute job.
#[test]
fn smoke_pipeline_produces_every_artifact() {
    let started = Instant::now();
    let dir = TempDir::new().unwrap();
    let data = path_str(&smoke_data());
    let run_dir = dir.path().join("run");
    run_ok(&[
        "train",
        "--data",
        &data,
        "--encoder",
        "mlp",
        "--attention",
        "local-recurrent",
        "--mask",
        "--overlap-alpha",
        "0.9",
        "--embed",
        "12",
        "--hidden",
        "24",
        "--width",
        "24",
        "--epochs",
        "60",
        "--batch",
        "4",
        "--lr",
        "3e-3",
        "--seed",
        "3",
        "--out",
        &path_str(&run_dir),
    ]);
    let checkpoint = path_str(&run_dir.join("checkpoint.json"));
    for name in ["checkpoint.json", "loss.csv", "run.json"] {
        assert!(run_dir.join(name).exists(), "train should write {name}");
    }

    let caps_a = dir.path().join("caps-a.jsonl");
    let caps_b = dir.path().join("caps-b.jsonl");
    for caps in [&caps_a, &caps_b] {
        let out = run_ok(&[
            "generate",
            "--checkpoint",
            &checkpoint,
            "--data",
            &data,
            "--out",
            &path_str(caps),
        ]);
        assert_eq!(
            String::from_utf8_lossy(&out.stdout).lines().count(),
            50,
            "one caption line per sample"
        );
    }
    assert_eq!(
        std::fs::read(&caps_a).unwrap(),
        std::fs::read(&caps_b).unwrap(),
        "captioning the same data twice is deterministic"
    );

    let seg_dir = dir.path().join("segments");
    run_ok(&["segment", "--checkpoint", &checkpoint, "--data", &data, "--out", &path_str(&seg_dir)]);
    let segments = std::fs::read_to_string(seg_dir.join("segments.jsonl")).unwrap();
    assert_eq!(segments.lines().count(), 50, "every sample gets a line");
    assert!(
        segments.lines().any(|l| l.contains("\"motion_segments\"")),
        "at least one sample segments"
    );

    let report = dir.path().join("seg-report.json");
    run_ok(&["score-seg", "--checkpoint", &checkpoint, "--data", &data, "--out", &path_str(&report)]);
    let report_body: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert!(report_body.get("iou_thresholded").is_some());

    let text = dir.path().join("text-report.json");
    let out = run_ok(&[
        "score-text",
        "--checkpoint",
        &checkpoint,
        "--data",
        &data,
        "--smoothing",
        "add-one",
        "--out",
        &path_str(&text),
    ]);
    let text_body: serde_json::Value =
        serde_json::from_str(&String::from_utf8_lossy(&out.stdout)).unwrap();
    let bleu = text_body["bleu4"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&bleu), "bleu4 in range, got {bleu}");
    assert!(text.exists());

    let attn_dir = dir.path().join("attn");
    run_ok(&[
        "export-attn",
        "--checkpoint",
        &checkpoint,
        "--data",
        &data,
        "--index",
        "0",
        "--out",
        &path_str(&attn_dir),
    ]);
    for name in ["attention.csv", "trace.csv", "transparency.csv"] {
        let p = attn_dir.join(name);
        let body = std::fs::read_to_string(&p)
            .unwrap_or_else(|_| panic!("export should write {name}"));
        assert!(body.lines().count() > 1, "{name} has rows");
    }

    assert!(
        started.elapsed().as_secs() < 120,
        "smoke pipeline took {:?}, budget is two minutes",
        started.elapsed()
    );
}

#[test]
fn grid_sweeps_and_reports() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("data.jsonl");
    run_ok(&["synth", "--samples", "10", "--seed", "21", "--out", &path_str(&data)]);
    let out = dir.path().join("grid");
    run_ok(&[
        "grid",
        "--data",
        &path_str(&data),
        "--depths",
        "2",
        "--widths",
        "8",
        "--embed",
        "8",
        "--hidden",
        "8",
        "--epochs",
        "1",
        "--batch",
        "4",
        "--train-frac",
        "0.8",
        "--out",
        &path_str(&out),
    ]);
    let grid = std::fs::read_to_string(out.join("grid.csv")).unwrap();
    let mut lines = grid.lines();
    assert_eq!(lines.next(), Some("depth,width,final_loss,eval_bleu4"));
    assert_eq!(lines.count(), 1, "one row per swept combination");
    assert!(out.join("depth2-width8").join("checkpoint.json").exists());
}

#[test]
fn exit_codes_distinguish_failure_classes() {
    let dir = TempDir::new().unwrap();
    let missing = path_str(&dir.path().join("nope.jsonl"));
    let out_dir = path_str(&dir.path().join("out"));

    // Missing input file: I/O.
    assert_exit(&["train", "--data", &missing, "--out", &out_dir], 3);

    // A file with no valid record: parse.
    let garbage = dir.path().join("garbage.jsonl");
    std::fs::write(&garbage, "this is not json\n{\"also\": \"not a sample\"}\n").unwrap();
    assert_exit(&["train", "--data", &path_str(&garbage), "--out", &out_dir], 4);

    // Unknown flags and values clap can't parse: usage.
    assert_exit(&["train", "--data", &missing, "--out", &out_dir, "--no-such-flag"], 2);
    assert_exit(
        &["train", "--data", &missing, "--out", &out_dir, "--encoder", "quantum"],
        2,
    );

    // Build one real checkpoint to corrupt and to misuse.
    let data = dir.path().join("data.jsonl");
    run_ok(&["synth", "--samples", "6", "--seed", "2", "--out", &path_str(&data)]);
    let run_dir = dir.path().join("run");
    run_ok(&[
        "train",
        "--data",
        &path_str(&data),
        "--embed",
        "8",
        "--hidden",
        "8",
        "--epochs",
        "1",
        "--batch",
        "4",
        "--seed",
        "1",
        "--out",
        &path_str(&run_dir),
    ]);
    let checkpoint = run_dir.join("checkpoint.json");

    // A checkpoint from a different era: version error, not a parse error.
    let body = std::fs::read_to_string(&checkpoint).unwrap();
    let bumped = dir.path().join("future.json");
    std::fs::write(&bumped, body.replace("\"format_version\":1", "\"format_version\":9")).unwrap();
    assert_exit(
        &["generate", "--checkpoint", &path_str(&bumped), "--data", &path_str(&data)],
        5,
    );

    // Segmenting with soft attention (the default above): no positions to
    // segment with, refused as an unsupported mode.
    assert_exit(
        &[
            "segment",
            "--checkpoint",
            &path_str(&checkpoint),
            "--data",
            &path_str(&data),
            "--out",
            &out_dir,
        ],
        2,
    );
}
