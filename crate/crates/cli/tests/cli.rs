use std::path::Path;
use std::process::{Command, Output};

use lossscope::experiment::Manifest;

const TINY: &str = r#"
[model]
num_layers = 3
model_dim = 8
num_heads = 2
ffn_dim = 16
vocab_size = 16
max_seq_len = 8

[synth]
vocab_size = 16
seq_len = 8

[corpus]
size = 48

[pretrain]
epochs = 1
batch_size = 8
learning_rate = 3e-3
objective = "masked_lm"

[finetune]
epochs = 2
batch_size = 8
learning_rate = 3e-3

[scratch]
epochs = 2
batch_size = 8
learning_rate = 3e-3

[tasks.main]
kind = "regime"
train = 24
dev = 16

[tasks.other]
kind = "motif"
train = 24
dev = 16

[grid]
samples_per_axis = 5
"#;

fn lossscope(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lossscope"))
        .current_dir(dir)
        .env_remove("LOSSSCOPE_WORKERS")
        .args(args)
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let cfg = format!("{TINY}\n[run]\noutput_dir = \"out\"\n");
    std::fs::write(dir.path().join("tiny.toml"), cfg).unwrap();
    dir
}

fn ok(dir: &Path, args: &[&str]) {
    let mut full = vec!["--config", "tiny.toml"];
    full.extend_from_slice(args);
    let out = lossscope(dir, &full);
    assert_eq!(
        code(&out),
        0,
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(out.stdout.is_empty(), "stdout must stay empty");
}

#[test]
fn help_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = lossscope(dir.path(), &["surface", "--help"]);
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stdout).contains("Usage"));
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = lossscope(d, &["frobnicate"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    let missing = [
        "rollback",
        "--start",
        "nope.ckpt",
        "--end",
        "nope.ckpt",
        "--task",
        "t.jsonl",
        "--out",
        "r.csv",
    ];
    assert_eq!(code(&lossscope(d, &missing)), 1);
    assert_eq!(code(&lossscope(d, &["rollback"])), 1);
    assert_eq!(code(&lossscope(d, &["repro", "fig9"])), 1);
    assert!(!d.join("r.csv").exists());
    std::fs::write(d.join("bad.toml"), "[grid]\nbogus = 1\n").unwrap();
    assert_eq!(
        code(&lossscope(d, &["--config", "bad.toml", "repro", "fig2"])),
        1
    );
    let out = Command::new(env!("CARGO_BIN_EXE_lossscope"))
        .current_dir(d)
        .env("LOSSSCOPE_WORKERS", "zero")
        .args(["repro", "fig2"])
        .output()
        .unwrap();
    assert_eq!(code(&out), 1);
}

#[test]
fn malformed_input_exits_two_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("empty.grid"), "").unwrap();
    let out = lossscope(
        d,
        &[
            "render",
            "--input",
            "empty.grid",
            "--kind",
            "contour",
            "--out",
            "x.svg",
        ],
    );
    assert_eq!(code(&out), 2);
    assert!(!d.join("x.svg").exists());
}

#[test]
fn pipeline_writes_rereadable_files() {
    let dir = setup();
    let d = dir.path();
    ok(d, &["gen-data", "--out-dir", "data"]);
    let corpus_bytes = std::fs::read(d.join("data/corpus.jsonl")).unwrap();
    ok(
        d,
        &["pretrain", "--corpus", "data/corpus.jsonl", "--out", "pre"],
    );
    assert_eq!(
        std::fs::read(d.join("data/corpus.jsonl")).unwrap(),
        corpus_bytes
    );
    let ft = |task: &str, out: &str| {
        ok(
            d,
            &[
                "train",
                "--mode",
                "finetune",
                "--task",
                task,
                "--from",
                "pre/epoch_0001.ckpt",
                "--out",
                out,
            ],
        )
    };
    ft("data/regime.jsonl", "ft");
    ft("data/motif.jsonl", "ft_other");
    ok(
        d,
        &[
            "train",
            "--mode",
            "scratch",
            "--task",
            "data/regime.jsonl",
            "--out",
            "sc",
        ],
    );
    let pair = [
        "--start",
        "ft/epoch_0000.ckpt",
        "--end",
        "ft/epoch_0002.ckpt",
        "--task",
        "data/regime.jsonl",
    ];
    let with = |cmd: &str, extra: &[&str]| {
        let mut args = vec![cmd];
        args.extend_from_slice(&pair);
        args.extend_from_slice(extra);
        ok(d, &args);
    };
    with("curve", &["--out", "curve.csv"]);
    with(
        "surface",
        &["--other", "ft_other/epoch_0002.ckpt", "--out", "s.grid"],
    );
    with(
        "error-surface",
        &[
            "--other",
            "ft_other/epoch_0002.ckpt",
            "--subsample",
            "8",
            "--out",
            "e.grid",
        ],
    );
    with(
        "layer-surface",
        &[
            "--other",
            "ft_other/epoch_0002.ckpt",
            "--group",
            "high",
            "--out",
            "l.grid",
        ],
    );
    with("rollback", &["--out", "rollback.csv"]);
    ok(d, &["trajectory", "--run", "ft", "--out", "traj.csv"]);
    ok(
        d,
        &[
            "render",
            "--input",
            "s.grid",
            "--kind",
            "trajectory_overlay",
            "--trajectory",
            "traj.csv",
            "--out",
            "s.svg",
        ],
    );
    ok(
        d,
        &[
            "render", "--input", "e.grid", "--kind", "heatmap", "--out", "e.svg",
        ],
    );
    ok(
        d,
        &[
            "render",
            "--input",
            "curve.csv",
            "--kind",
            "curve",
            "--out",
            "c.svg",
        ],
    );

    let grid =
        lossscope::landscape::read_surface(std::fs::File::open(d.join("e.grid")).unwrap()).unwrap();
    assert_eq!(grid.axes.subsample, Some(8));
    let traj =
        lossscope::landscape::read_trajectory_csv(std::fs::File::open(d.join("traj.csv")).unwrap())
            .unwrap();
    let last = traj.points.last().unwrap();
    assert!((last.d_alpha - 1.0).abs() < 1e-9 && last.d_beta.abs() < 1e-9);
    let table = std::fs::read_to_string(d.join("rollback.csv")).unwrap();
    assert_eq!(table.lines().count(), 5);

    // Rendering is byte-deterministic.
    ok(
        d,
        &[
            "render", "--input", "e.grid", "--kind", "heatmap", "--out", "e2.svg",
        ],
    );
    assert_eq!(
        std::fs::read(d.join("e.svg")).unwrap(),
        std::fs::read(d.join("e2.svg")).unwrap()
    );
}

#[test]
fn repro_fig7_and_stable_hashes() {
    let dir = setup();
    let d = dir.path();
    ok(d, &["--workers", "1", "repro", "fig7"]);
    let read = || {
        Manifest::from_json(&std::fs::read_to_string(d.join("out/fig7/manifest.json")).unwrap())
            .unwrap()
    };
    let first = read();
    let names: Vec<&str> = first.files.iter().map(|f| f.path.as_str()).collect();
    for g in ["low", "middle", "high"] {
        assert!(names.contains(&format!("layer_{g}.grid").as_str()));
        assert!(names.contains(&format!("layer_{g}.svg").as_str()));
    }
    // Cached runs are reused and a different worker count changes nothing.
    ok(d, &["--workers", "3", "repro", "fig7"]);
    assert_eq!(read(), first);
    std::fs::remove_dir_all(d.join("out")).unwrap();
    ok(d, &["repro", "fig7"]);
    assert_eq!(read(), first);

    ok(d, &["repro", "table1"]);
    let table = std::fs::read_to_string(d.join("out/table1/rollback.csv")).unwrap();
    assert_eq!(table.lines().count(), 1 + 2 * 4);
}
