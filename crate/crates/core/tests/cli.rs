//! Command-line behaviour: exit codes, output schemas and frozen goldens.
//!
//! Set `UPDATE_GOLDEN=1` to rewrite the files under `tests/golden/`.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_procpredict"))
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("spawn procpredict")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn golden(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

fn check_golden(dir: &Path, name: &str) {
    let got = std::fs::read_to_string(dir.join(name)).unwrap();
    let path = golden(name);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, &got).unwrap();
        return;
    }
    let want = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert_eq!(got, want, "{name} differs from its golden");
}

/// Small TPC-C-like trace and catalog in `dir`.
fn small_trace(dir: &Path) {
    ok(
        dir,
        &[
            "generate",
            "--benchmark",
            "tpcc",
            "--partitions",
            "2",
            "--txns",
            "300",
            "--payment",
            "0.3",
            "--items",
            "1:0.5,3:0.5",
            "--remote",
            "0.2",
            "--seed",
            "4",
            "--out",
            "t.jsonl",
            "--catalog",
            "c.json",
        ],
    );
}

const IN: [&str; 4] = ["--catalog", "c.json", "--trace", "t.jsonl"];

fn with<'a>(cmd: &'a str, extra: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec![cmd];
    v.extend(IN);
    v.extend(extra);
    v
}

#[test]
fn full_pipeline_matches_goldens() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    small_trace(d);
    ok(d, &with("infer-mappings", &["--out", "mappings.csv"]));
    ok(d, &with("build-models", &["--out", "b.json"]));
    ok(
        d,
        &with(
            "partition-models",
            &[
                "--bundle",
                "b.json",
                "--seed",
                "4",
                "--out",
                "b.json",
                "--rounds",
                "rounds.csv",
            ],
        ),
    );
    ok(d, &with("estimate", &["--bundle", "b.json", "--out", "estimates.csv"]));
    ok(d, &with("evaluate", &["--bundle", "b.json", "--out", "evaluation.csv"]));
    ok(
        d,
        &with(
            "simulate",
            &[
                "--bundle",
                "b.json",
                "--duration",
                "5000",
                "--seed",
                "4",
                "--out",
                "simulation.csv",
            ],
        ),
    );
    ok(
        d,
        &with(
            "sweep",
            &[
                "--bundle",
                "b.json",
                "--duration",
                "5000",
                "--threshold",
                "0,0.5,1",
                "--out",
                "sweep.csv",
            ],
        ),
    );
    for name in [
        "mappings.csv",
        "rounds.csv",
        "estimates.csv",
        "evaluation.csv",
        "simulation.csv",
        "sweep.csv",
    ] {
        check_golden(d, name);
    }
}

#[test]
fn schemas_are_versioned() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    small_trace(d);
    let first_line = |args: Vec<&str>| {
        let out = ok(d, &args);
        String::from_utf8(out.stdout)
            .unwrap()
            .lines()
            .next()
            .unwrap_or_default()
            .to_string()
    };
    assert_eq!(first_line(with("infer-mappings", &[])), "#schema=mappings.v1");
    assert_eq!(first_line(with("evaluate", &[])), "#schema=evaluation.v1");
    assert_eq!(
        first_line(with("simulate", &["--strategies", "oracle", "--duration", "2000"])),
        "#schema=simulation.v1"
    );
}

#[test]
fn evaluate_without_bundle_splits_the_trace() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    small_trace(d);
    let out = String::from_utf8(ok(d, &with("evaluate", &[])).stdout).unwrap();
    let total = out
        .lines()
        .find(|l| l.starts_with("global,*total*"))
        .expect("total row");
    assert_eq!(total.split(',').nth(2), Some("150"));
}

#[test]
fn simulate_over_partition_counts_in_flag_order() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    small_trace(d);
    let out = ok(
        d,
        &with(
            "simulate",
            &[
                "--strategies",
                "assume_distributed,oracle",
                "--partitions",
                "4,2",
                "--duration",
                "2000",
            ],
        ),
    );
    let rows: Vec<(String, String)> = String::from_utf8(out.stdout)
        .unwrap()
        .lines()
        .skip(2)
        .map(|l| {
            let mut f = l.split(',');
            (f.next().unwrap().to_string(), f.next().unwrap().to_string())
        })
        .collect();
    let want = [
        ("assume_distributed", "4"),
        ("oracle", "4"),
        ("assume_distributed", "2"),
        ("oracle", "2"),
    ];
    assert_eq!(rows, want.map(|(a, b)| (a.to_string(), b.to_string())));
}

#[test]
fn events_log_is_json_lines() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    small_trace(d);
    ok(
        d,
        &with(
            "simulate",
            &[
                "--strategies",
                "db2_redirect",
                "--duration",
                "2000",
                "--events",
                "ev.jsonl",
                "--out",
                "s.csv",
            ],
        ),
    );
    let text = std::fs::read_to_string(d.join("ev.jsonl")).unwrap();
    assert!(text.lines().count() > 10);
    for l in text.lines() {
        let v: serde_json::Value = serde_json::from_str(l).unwrap();
        assert!(v.get("kind").is_some() && v.get("time").is_some());
    }
    let two = run(
        d,
        &with(
            "simulate",
            &["--strategies", "oracle,db2_redirect", "--events", "ev.jsonl"],
        ),
    );
    assert_eq!(two.status.code(), Some(1));
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    small_trace(d);
    assert_eq!(run(d, &["--help"]).status.code(), Some(0));
    assert_eq!(run(d, &["--version"]).status.code(), Some(0));
    assert_eq!(run(d, &["frobnicate"]).status.code(), Some(1));
    assert_eq!(
        run(d, &with("evaluate", &["--threshold", "1.5"])).status.code(),
        Some(1)
    );
    assert_eq!(
        run(d, &with("simulate", &["--strategies", "psychic"])).status.code(),
        Some(1)
    );
    assert_eq!(run(d, &with("sweep", &["--strategy", "oracle"])).status.code(), Some(1));
    assert_eq!(
        run(d, &["evaluate", "--catalog", "missing.json", "--trace", "t.jsonl"])
            .status
            .code(),
        Some(2)
    );
    std::fs::write(d.join("bad.jsonl"), "{not json\n").unwrap();
    assert_eq!(
        run(d, &["evaluate", "--catalog", "c.json", "--trace", "bad.jsonl"])
            .status
            .code(),
        Some(2)
    );

    // A bundle for another partition count is a data error for commands
    // that cannot rebuild it.
    ok(d, &with("build-models", &["--out", "b2.json"]));
    ok(
        d,
        &[
            "generate",
            "--benchmark",
            "tpcc",
            "--partitions",
            "4",
            "--txns",
            "50",
            "--out",
            "t4.jsonl",
            "--catalog",
            "c4.json",
        ],
    );
    let mismatch = run(
        d,
        &[
            "estimate",
            "--catalog",
            "c4.json",
            "--trace",
            "t4.jsonl",
            "--bundle",
            "b2.json",
        ],
    );
    assert_eq!(mismatch.status.code(), Some(2));
}

#[test]
fn unsafe_undo_elision_exits_three() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(
        d,
        &[
            "generate",
            "--benchmark",
            "branchy",
            "--partitions",
            "2",
            "--txns",
            "500",
            "--abort",
            "0.2",
            "--seed",
            "5",
            "--out",
            "t.jsonl",
            "--catalog",
            "c.json",
        ],
    );
    let args = [
        "--strategies",
        "houdini_global",
        "--duration",
        "20000",
        "--out",
        "s.csv",
    ];
    ok(d, &with("simulate", &args));
    let mut bad = args.to_vec();
    bad.push("--no-abort-cutoff");
    let out = run(d, &with("simulate", &bad));
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(d.join("s.csv")).unwrap();
    assert!(csv.lines().nth(2).unwrap().ends_with(",true"));
}

#[test]
fn empty_test_split_gives_empty_report() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(
        d,
        &[
            "generate",
            "--benchmark",
            "tatp",
            "--partitions",
            "2",
            "--txns",
            "0",
            "--out",
            "t.jsonl",
            "--catalog",
            "c.json",
        ],
    );
    let out = ok(d, &with("evaluate", &[]));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 2, "{text}");
}
