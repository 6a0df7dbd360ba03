use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use tcmn::cli::main_with_args;
use tcmn::ensemble::{EnsembleWeights, ScoreDump};
use tcmn::matching::ScoreMatrix;
use tcmn::training::Split;
use tcmn::video::enumerate_segments;

struct Run {
    code: i32,
    stdout: String,
    stderr: String,
}

fn tcmn(args: &[&str]) -> Run {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let code = main_with_args(std::iter::once("tcmn").chain(args.iter().copied()), &mut out, &mut err);
    Run {
        code,
        stdout: String::from_utf8(out).unwrap(),
        stderr: String::from_utf8(err).unwrap(),
    }
}

fn ok(args: &[&str]) -> String {
    let r = tcmn(args);
    assert_eq!(r.code, 0, "tcmn {args:?} failed: {}", r.stderr);
    r.stdout
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A 20-query synthetic dataset under `dir`.
fn small_dataset(dir: &Path) -> PathBuf {
    let spec = dir.join("spec.json");
    fs::write(&spec, r#"{"queries": {"train": 2, "val": 1, "test": 1}, "seed": 4}"#).unwrap();
    ok(&["generate-synth", "--spec", s(&spec), "--out", s(&dir.join("data"))]);
    dir.join("data/manifest.json")
}

fn train(manifest: &Path, stream: &str, out: &Path, epochs: &str) {
    ok(&[
        "train",
        "--manifest",
        s(manifest),
        "--stream",
        stream,
        "--epochs",
        epochs,
        "--log-every",
        "0",
        "--out",
        s(out),
    ]);
}

#[test]
fn training_is_reproducible_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_dataset(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    train(&manifest, "rgb,flow", &a, "5");
    train(&manifest, "rgb,flow", &b, "5");
    for f in ["checkpoint.tcmn", "model.json", "labels.vocab", "loss.csv"] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f} differs"
        );
    }
    let csv = fs::read_to_string(a.join("loss.csv")).unwrap();
    assert!(csv.starts_with("epoch,mean_loss,mean_Lm,mean_Lc\n"));
    assert_eq!(csv.lines().count(), 6);

    // Scores from the two checkpoints agree too.
    for (ckpt, out) in [(&a, "a.bin"), (&b, "b.bin")] {
        ok(&[
            "score",
            "--manifest",
            s(&manifest),
            "--checkpoint",
            s(ckpt),
            "--split",
            "val",
            "--out",
            s(&dir.path().join(out)),
        ]);
    }
    assert_eq!(
        fs::read(dir.path().join("a.bin")).unwrap(),
        fs::read(dir.path().join("b.bin")).unwrap()
    );

    // A different seed gives a different model.
    let c = dir.path().join("c");
    ok(&[
        "train",
        "--manifest",
        s(&manifest),
        "--stream",
        "rgb,flow",
        "--epochs",
        "5",
        "--seed",
        "1",
        "--log-every",
        "0",
        "--out",
        s(&c),
    ]);
    assert_ne!(
        fs::read(a.join("checkpoint.tcmn")).unwrap(),
        fs::read(c.join("checkpoint.tcmn")).unwrap()
    );
}

/// Writes a dump whose matrices rank each query's truth row first (`good`)
/// or push it far below every other row.
fn write_dump(manifest: &Path, split: Split, good: bool, out: &Path) {
    let data = tcmn::data::load_dataset(manifest).unwrap();
    let segs = enumerate_segments(6).unwrap();
    let entries = data
        .examples_in(split)
        .map(|ex| {
            let t = segs.index_of(ex.main).unwrap();
            let mut d = vec![0.0f32; segs.len() * segs.len()];
            d[t * segs.len()] = if good { 1.0 } else { -10.0 };
            (ex.id, ScoreMatrix::new(segs.len(), d).unwrap())
        })
        .collect();
    let mut f = fs::File::create(out).unwrap();
    ScoreDump::new(entries).unwrap().write_to(&mut f).unwrap();
}

#[test]
fn perfect_scores_evaluate_to_a_table_of_100s() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_dataset(dir.path());
    let dump = dir.path().join("perfect.bin");
    write_dump(&manifest, Split::Test, true, &dump);
    let table = ok(&[
        "eval",
        "--scores",
        s(&dump),
        "--manifest",
        s(&manifest),
        "--per-category",
    ]);
    let lines: Vec<&str> = table.lines().collect();
    assert!(lines[0].starts_with("Method") && lines[0].contains("Average"));
    let cells: Vec<&str> = lines[2].split_whitespace().filter(|c| *c != "|").collect();
    assert_eq!(cells[0], "TCMN");
    assert!(cells[1..].iter().all(|c| *c == "100.00"), "{table}");
    // The per-category block follows: header, 5 categories, average.
    assert!(lines.iter().any(|l| l.starts_with("Category")));
    assert_eq!(
        lines.iter().filter(|l| l.contains("100.00   100.00   100.00")).count(),
        6
    );

    let json = ok(&["eval", "--scores", s(&dump), "--manifest", s(&manifest), "--json"]);
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(v["average"]["r_at_1"], 100.0);
    assert_eq!(v["rows"].as_array().unwrap().len(), 5);
}

#[test]
fn one_dominant_stream_fuses_to_one_hot_weights() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_dataset(dir.path());
    let paths: Vec<PathBuf> = (0..4).map(|k| dir.path().join(format!("s{k}.bin"))).collect();
    for (k, p) in paths.iter().enumerate() {
        write_dump(&manifest, Split::Val, k == 1, p);
    }
    let weights = dir.path().join("w.json");
    let out = ok(&[
        "fuse",
        "--scores",
        s(&paths[0]),
        s(&paths[1]),
        s(&paths[2]),
        s(&paths[3]),
        "--val-manifest",
        s(&manifest),
        "--step",
        "0.5",
        "--out",
        s(&weights),
    ]);
    assert!(out.contains("10 grid points"), "{out}");
    let w = EnsembleWeights::from_json(&fs::read_to_string(&weights).unwrap()).unwrap();
    assert_eq!(w, EnsembleWeights::one_hot(1));

    // Evaluating the four validation dumps with those weights is perfect.
    let table = ok(&[
        "eval",
        "--scores",
        s(&paths[0]),
        s(&paths[1]),
        s(&paths[2]),
        s(&paths[3]),
        "--weights",
        s(&weights),
        "--manifest",
        s(&manifest),
    ]);
    assert!(
        table.lines().nth(2).unwrap().ends_with("100.00  100.00  100.00"),
        "{table}"
    );
}

#[test]
fn predict_and_inspect_attention() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_dataset(dir.path());
    let run = dir.path().join("run");
    train(&manifest, "flow,rgb", &run, "3");

    let out = ok(&[
        "predict",
        "--query-tree",
        "(S (NP (DT the) (NN dog)) (VP (VBZ barks)))",
        "--video",
        "v0000",
        "--checkpoint",
        s(&run.join("checkpoint.tcmn")),
        "--manifest",
        s(&manifest),
    ]);
    let rows: Vec<&str> = out.lines().skip(1).collect();
    assert_eq!(rows.len(), 5);
    let scores: Vec<f64> = rows
        .iter()
        .map(|r| r.split_whitespace().last().unwrap().parse().unwrap())
        .collect();
    assert!(scores.windows(2).all(|w| w[0] >= w[1]));

    let attn = dir.path().join("attn.json");
    ok(&[
        "inspect-attention",
        "--query-id",
        "7",
        "--checkpoint",
        s(&run),
        "--manifest",
        s(&manifest),
        "--out",
        s(&attn),
    ]);
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&attn).unwrap()).unwrap();
    assert_eq!(v["query_id"], 7);
    for key in ["main", "context", "signal"] {
        let total: f64 = v["nodes"]
            .as_array()
            .unwrap()
            .iter()
            .map(|n| n[key].as_f64().unwrap())
            .sum();
        assert!((total - 1.0).abs() < 1e-6);
    }
    assert_eq!(v["segments"].as_array().unwrap().len(), 21);
    assert_eq!(v["top_pairs"].as_array().unwrap().len(), 5);
    let p = &v["top_pairs"][0];
    let sum = p["localization"].as_f64().unwrap() + p["relationship"].as_f64().unwrap();
    assert!((sum - p["combined"].as_f64().unwrap()).abs() < 1e-5);
}

#[test]
fn grad_check_reports_and_fails_loudly() {
    let out = ok(&["grad-check", "--seed", "7"]);
    let last = out.lines().last().unwrap();
    let err: f64 = last.split_whitespace().nth(3).unwrap().parse().unwrap();
    assert!(err < 1e-4, "{last}");
    // An impossible tolerance is a numeric failure.
    assert_eq!(tcmn(&["grad-check", "--tolerance", "0"]).code, 3);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(tcmn(&[]).code, 1);
    assert_eq!(tcmn(&["train", "--stream", "rgb,flow"]).code, 1);
    assert_eq!(
        tcmn(&["fuse", "--scores", "a", "b", "--val-manifest", "m", "--out", "w"]).code,
        1
    );
    let missing = dir.path().join("nope.json");
    let r = tcmn(&["score", "--manifest", s(&missing), "--checkpoint", "x", "--out", "y"]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("nope.json"));

    let manifest = small_dataset(dir.path());
    let r = tcmn(&[
        "predict",
        "--query-tree",
        "(S (NP dog)",
        "--video",
        "v0000",
        "--checkpoint",
        "x",
        "--manifest",
        s(&manifest),
    ]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("parse error at byte 0"), "{}", r.stderr);
    let r = tcmn(&[
        "inspect-attention",
        "--query-id",
        "999",
        "--checkpoint",
        "x",
        "--manifest",
        s(&manifest),
        "--out",
        "y",
    ]);
    assert_ne!(r.code, 0);
}

#[test]
fn help_documents_every_flag() {
    let cases: [(&str, &[&str]); 8] = [
        ("generate-synth", &["--spec", "--seed", "--out"]),
        (
            "train",
            &[
                "--manifest",
                "--stream",
                "--epochs",
                "--hidden",
                "--label-dim",
                "--lr",
                "--weight-decay",
                "--main-margin",
                "--context-margin",
                "--lambda",
                "--seed",
                "--log-every",
                "--out",
            ],
        ),
        ("score", &["--manifest", "--checkpoint", "--split", "--out"]),
        ("fuse", &["--scores", "--val-manifest", "--step", "--out"]),
        (
            "eval",
            &[
                "--scores",
                "--weights",
                "--manifest",
                "--per-category",
                "--json",
                "--prior",
                "--method",
            ],
        ),
        (
            "predict",
            &["--query-tree", "--video", "--checkpoint", "--manifest", "--top"],
        ),
        (
            "inspect-attention",
            &["--query-id", "--checkpoint", "--manifest", "--out"],
        ),
        ("grad-check", &["--seed", "--tolerance"]),
    ];
    for (cmd, flags) in cases {
        let help = ok(&[cmd, "--help"]);
        for f in flags {
            assert!(help.contains(f), "{cmd} --help lacks {f}");
        }
    }
}

#[test]
fn binary_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_tcmn");
    let status = Command::new(bin).arg("--version").output().unwrap();
    assert!(status.status.success());
    let bad = Command::new(bin).args(["eval", "--bogus"]).output().unwrap();
    assert_eq!(bad.status.code(), Some(1));
    let missing = Command::new(bin)
        .args([
            "eval",
            "--scores",
            "/nonexistent/x.bin",
            "--manifest",
            "/nonexistent/m.json",
        ])
        .output()
        .unwrap();
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).starts_with("error: "));
}
