use std::path::Path;
use std::process::{Command, Output};

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fusion-policy"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = bin(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

const SMALL: [&str; 6] = [
    "--set",
    "synth.train_dialogues=30",
    "--set",
    "synth.dev_dialogues=10",
    "--set",
    "synth.test_dialogues=10",
];

fn synth(dir: &Path) -> String {
    let out = dir.join("data");
    let mut args = vec!["synth", "--out", out.to_str().unwrap()];
    args.extend(SMALL);
    ok(&args);
    out.to_str().unwrap().to_string()
}

fn train(data: &str, arch: &str, seed: &str, out: &Path) -> String {
    ok(&[
        "train",
        "--arch",
        arch,
        "--seed",
        seed,
        "--data",
        data,
        "--out",
        out.to_str().unwrap(),
        "--set",
        "train.epochs=3",
        "--set",
        "train.learning_rate=0.003",
    ])
}

#[test]
fn gradcheck_small_passes() {
    let stdout = ok(&["gradcheck", "--dims", "small"]);
    assert_eq!(stdout.lines().count(), 4);
    for line in stdout.lines() {
        let err: f64 = line.split_whitespace().nth(4).unwrap().parse().unwrap();
        assert!(err < 1e-3, "{line}");
        assert!(line.ends_with("ok"));
    }
}

#[test]
fn synth_is_byte_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (da, db) = (synth(a.path()), synth(b.path()));
    for f in ["corpus.jsonl", "manifest.jsonl", "policy.json", "windows.jsonl"] {
        let read = |d: &str| std::fs::read(Path::new(d).join(f)).unwrap();
        assert_eq!(read(&da), read(&db), "{f}");
    }
}

#[test]
fn training_twice_gives_identical_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    let (r1, r2) = (dir.path().join("r1"), dir.path().join("r2"));
    let first = train(&data, "a4", "1", &r1);
    let second = train(&data, "a4", "1", &r2);
    assert_eq!(first, second);
    assert!(first.contains(r#""split":"test""#));
    for f in ["metrics.jsonl", "checkpoint.fpck", "run.json"] {
        assert_eq!(
            std::fs::read(r1.join(f)).unwrap(),
            std::fs::read(r2.join(f)).unwrap(),
            "{f}"
        );
    }

    let inspect = ok(&["inspect", "--checkpoint", r1.join("checkpoint.fpck").to_str().unwrap()]);
    assert!(inspect.contains("text layer weights:"));
    assert!(inspect.contains("speech layer weights:"));

    let eval = ok(&[
        "eval",
        "--data",
        &data,
        "--checkpoint",
        r1.join("checkpoint.fpck").to_str().unwrap(),
    ]);
    assert!(eval.starts_with("test: 40 samples"));
}

#[test]
fn summarize_reports_mean_and_std_per_architecture() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    for seed in ["1", "2", "3"] {
        train(&data, "a1", seed, &dir.path().join("runs").join(format!("a1-{seed}")));
    }
    train(&data, "a3", "1", &dir.path().join("runs").join("a3-1"));
    let out = dir.path().join("summary");
    let table = ok(&[
        "summarize",
        dir.path().join("runs").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[0].starts_with("Architecture"));
    let a1 = lines.iter().find(|l| l.starts_with("a1 ")).unwrap();
    assert!(a1.contains(" ± ") && a1.trim_end().ends_with('3'), "{a1}");
    assert!(lines.iter().any(|l| l.starts_with("a3 ") && l.contains("± 0.000")));
    assert_eq!(std::fs::read_to_string(out.join("summary.md")).unwrap(), table);
}

#[test]
fn usage_and_input_errors_exit_nonzero() {
    assert!(!bin(&["train", "--arch", "a4", "--bogus"]).status.success());
    assert!(!bin(&["train", "--arch", "a9", "--data", "x", "--out", "y"])
        .status
        .success());
    assert!(!bin(&[]).status.success());
    let missing = bin(&["eval", "--data", "/nonexistent", "--checkpoint", "/nonexistent/c.fpck"]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).starts_with("error:"));
    assert!(!bin(&["summarize", "/nonexistent"]).status.success());
    assert!(!bin(&["synth", "--out", "/tmp/never", "--set", "synth.dim=18"])
        .status
        .success());
}
