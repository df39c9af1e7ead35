mod common;

use std::path::Path;
use std::process::Command;

fn sdvpt(args: &[&str], dir: &Path) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_sdvpt"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap();
    let text = format!(
        "{}{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    (out.status.code().unwrap(), text)
}

fn ok(args: &[&str], dir: &Path) -> String {
    let (code, text) = sdvpt(args, dir);
    assert_eq!(code, 0, "{args:?}: {text}");
    text
}

#[test]
fn full_pipeline_through_the_binary() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::write(
        d.join("tiny.json"),
        serde_json::to_string(&common::tiny()).unwrap(),
    )
    .unwrap();
    let c = ["--config", "tiny.json", "--seed", "3"];
    let with = |cmd: &str, rest: &[&str]| -> Vec<String> {
        let mut v = vec![cmd.to_string()];
        v.extend(c.iter().map(|s| s.to_string()));
        v.extend(rest.iter().map(|s| s.to_string()));
        v
    };
    let run = |cmd: &str, rest: &[&str]| {
        let v = with(cmd, rest);
        ok(&v.iter().map(String::as_str).collect::<Vec<_>>(), d)
    };

    run("gen-data", &["--out", "data"]);
    assert!(d.join("data/manifest.json").exists());
    run("pretrain", &["--data", "data", "--out", "pre"]);
    run(
        "train",
        &["--data", "data", "--from", "pre", "--out", "run"],
    );
    run(
        "train-baseline",
        &["--data", "data", "--backbone", "pre", "--out", "base"],
    );
    run(
        "eval",
        &[
            "--data",
            "data",
            "--checkpoint",
            "run/final",
            "--k",
            "2",
            "--out",
            "eval.json",
        ],
    );
    assert!(d.join("eval.json").exists());
    run(
        "eval",
        &[
            "--data",
            "data",
            "--checkpoint",
            "base/final",
            "--mode",
            "shared_vpt",
            "--out",
            "base.json",
        ],
    );
    run(
        "sweep-topk",
        &[
            "--data",
            "data",
            "--checkpoint",
            "run/final",
            "--ks",
            "1,2,3",
            "--out",
            "sweep.csv",
        ],
    );
    assert_eq!(
        std::fs::read_to_string(d.join("sweep.csv"))
            .unwrap()
            .lines()
            .count(),
        4
    );
    let rows = run(
        "export-embeddings",
        &[
            "--data",
            "data",
            "--checkpoint",
            "run/final",
            "--out",
            "emb.csv",
        ],
    );
    assert!(rows.contains("rows"));
    run(
        "bench",
        &[
            "--data",
            "data",
            "--checkpoint",
            "run/final",
            "--n-images",
            "3",
            "--out",
            "bench.json",
        ],
    );

    // same inputs from a fresh generation give the same eval report
    run(
        "eval",
        &[
            "--checkpoint",
            "run/final",
            "--k",
            "2",
            "--out",
            "eval2.json",
        ],
    );
    assert_eq!(
        std::fs::read(d.join("eval.json")).unwrap(),
        std::fs::read(d.join("eval2.json")).unwrap()
    );

    // contract: CSPI-only mode on a refined checkpoint
    let v = with(
        "eval",
        &[
            "--data",
            "data",
            "--checkpoint",
            "run/final",
            "--mode",
            "cspi_only",
        ],
    );
    assert_eq!(
        sdvpt(&v.iter().map(String::as_str).collect::<Vec<_>>(), d).0,
        2
    );
    // parameter: K beyond the seen categories
    let v = with(
        "sweep-topk",
        &[
            "--data",
            "data",
            "--checkpoint",
            "run/final",
            "--ks",
            "1,99",
            "--out",
            "x.csv",
        ],
    );
    assert_eq!(
        sdvpt(&v.iter().map(String::as_str).collect::<Vec<_>>(), d).0,
        2
    );
    // I/O: missing checkpoint
    let v = with("eval", &["--data", "data", "--checkpoint", "nowhere"]);
    assert_eq!(
        sdvpt(&v.iter().map(String::as_str).collect::<Vec<_>>(), d).0,
        1
    );
}

#[test]
fn config_errors_map_to_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    assert_eq!(
        sdvpt(&["gen-data", "--config", "absent.json", "--out", "x"], d).0,
        1
    );

    std::fs::write(d.join("broken.json"), "{ not json").unwrap();
    assert_eq!(
        sdvpt(&["gen-data", "--config", "broken.json", "--out", "x"], d).0,
        2
    );

    std::fs::write(d.join("bad.json"), r#"{"train": {"e1": 5, "e2": 5}}"#).unwrap();
    assert_eq!(
        sdvpt(&["gen-data", "--config", "bad.json", "--out", "x"], d).0,
        2
    );

    std::fs::write(d.join("typo.json"), r#"{"train": {"learning_rate": -1.0}}"#).unwrap();
    assert_eq!(
        sdvpt(&["pretrain", "--config", "typo.json", "--out", "x"], d).0,
        2
    );
}
