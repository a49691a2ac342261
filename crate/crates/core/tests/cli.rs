//! End-to-end runs of the `hyperhash` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hyperhash"))
}

fn sample() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data/sample500.csv")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn hyperhash")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "hyperhash {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn records(path: &Path) -> Vec<csv::StringRecord> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records().map(|x| x.unwrap()).collect()
}

fn same_files(a: &Path, b: &Path) {
    let mut names: Vec<_> = fs::read_dir(a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(!names.is_empty());
    for n in names {
        assert_eq!(fs::read(a.join(&n)).unwrap(), fs::read(b.join(&n)).unwrap(), "{n:?} differs");
    }
}

#[test]
fn gen_writes_dataset_summary_and_manifest() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("gen");
    let cfg = write(tmp.path(), "gen.toml", "n = 100\nd = 4\nclasses = 2\n");
    let stdout = ok(&["gen", "--config", &cfg, "--seed", "3", "--out", out.to_str().unwrap()]);
    assert!(stdout.lines().last().unwrap().ends_with("manifest.toml"));
    for f in ["dataset.bin", "summary.csv", "manifest.toml"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let manifest = fs::read_to_string(out.join("manifest.toml")).unwrap();
    assert!(manifest.contains("seed = 3"));
    assert!(manifest.contains("command = \"gen\""));
}

#[test]
fn replay_reproduces_outputs_byte_for_byte() {
    let tmp = TempDir::new().unwrap();
    let first = tmp.path().join("a");
    let second = tmp.path().join("b");
    let cfg = write(tmp.path(), "gen.toml", "kind = \"unit_sphere\"\nn = 64\nd = 5\nformat = \"csv\"\n");
    ok(&["gen", "--config", &cfg, "--seed", "11", "--out", first.to_str().unwrap()]);
    let manifest = first.join("manifest.toml");
    ok(&["replay", "--config", manifest.to_str().unwrap(), "--out", second.to_str().unwrap()]);
    same_files(&first, &second);
}

#[test]
fn replay_rejects_a_different_seed() {
    let tmp = TempDir::new().unwrap();
    let first = tmp.path().join("a");
    ok(&["rho-curve", "--seed", "5", "--out", first.to_str().unwrap()]);
    let manifest = first.join("manifest.toml");
    let out = run(&[
        "replay",
        "--config",
        manifest.to_str().unwrap(),
        "--seed",
        "6",
        "--out",
        tmp.path().join("b").to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("recorded seed 5"));
}

#[test]
fn ingest_reports_the_offending_row() {
    let tmp = TempDir::new().unwrap();
    let data = write(tmp.path(), "bad.csv", "x0,x1\n1.0,2.0\n3.0,oops\n");
    let cfg = write(tmp.path(), "ingest.toml", &format!("[data]\npath = {data:?}\n"));
    let out = run(&["ingest", "--config", &cfg, "--out", tmp.path().join("o").to_str().unwrap()]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("row 1"), "{err}");
    assert!(!tmp.path().join("o/manifest.toml").exists());
}

#[test]
fn ingest_rejects_mismatched_widths() {
    let tmp = TempDir::new().unwrap();
    let data = write(tmp.path(), "ragged.csv", "x0,x1\n1.0,2.0\n3.0\n");
    let cfg = write(tmp.path(), "ingest.toml", &format!("[data]\npath = {data:?}\n"));
    let out = run(&["ingest", "--config", &cfg, "--out", tmp.path().join("o").to_str().unwrap()]);
    assert!(!out.status.success());
}

#[test]
fn unknown_config_keys_are_rejected() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "gen.toml", "n = 10\nbogus = 1\n");
    let out = run(&["gen", "--config", &cfg, "--out", tmp.path().join("o").to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus"));
}

#[test]
fn full_radius_query_matches_brute_force() {
    let tmp = TempDir::new().unwrap();
    let data = sample();
    let data = data.to_str().unwrap();
    let index_dir = tmp.path().join("index");
    let cfg = write(
        tmp.path(),
        "index.toml",
        &format!("scheme = \"BH\"\nbits = 10\n[data]\npath = {data:?}\naugment = true\n"),
    );
    ok(&["build-index", "--config", &cfg, "--seed", "2", "--out", index_dir.to_str().unwrap()]);
    let index = index_dir.join("index.json");
    let query_dir = tmp.path().join("query");
    let cfg = write(
        tmp.path(),
        "query.toml",
        &format!(
            "index = {:?}\nradius = 10\nnum_queries = 12\nsvm_per_class = 4\n[data]\npath = {data:?}\naugment = true\n",
            index.to_str().unwrap()
        ),
    );
    ok(&["query", "--config", &cfg, "--seed", "2", "--out", query_dir.to_str().unwrap()]);
    let rows = records(&query_dir.join("results.csv"));
    assert_eq!(rows.len(), 12);
    for r in &rows {
        let best: f64 = r[2].parse().unwrap();
        let oracle: f64 = r[5].parse().unwrap();
        assert_eq!(best, oracle, "query {} missed the exact nearest point", &r[0]);
        assert_eq!(&r[6], "500");
    }
}

#[test]
fn svm_queries_require_augmented_points() {
    let tmp = TempDir::new().unwrap();
    let data = sample();
    let data = data.to_str().unwrap();
    let index_dir = tmp.path().join("index");
    let cfg = write(tmp.path(), "index.toml", &format!("bits = 8\n[data]\npath = {data:?}\n"));
    ok(&["build-index", "--config", &cfg, "--out", index_dir.to_str().unwrap()]);
    let cfg = write(
        tmp.path(),
        "query.toml",
        &format!(
            "index = {:?}\n[data]\npath = {data:?}\n",
            index_dir.join("index.json").to_str().unwrap()
        ),
    );
    let out = run(&["query", "--config", &cfg, "--out", tmp.path().join("q").to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("augment"));
}

#[test]
fn run_al_is_reproducible_across_invocations() {
    let tmp = TempDir::new().unwrap();
    let data = sample();
    let cfg = write(
        tmp.path(),
        "al.toml",
        &format!(
            "runs = 1\n[data]\npath = {:?}\nnormalize = true\n[al]\niterations = 10\n[al.selector]\nkind = \"BH\"\nbits = 8\n",
            data.to_str().unwrap()
        ),
    );
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    ok(&["run-al", "--config", &cfg, "--seed", "9", "--out", a.to_str().unwrap()]);
    ok(&["run-al", "--config", &cfg, "--seed", "9", "--out", b.to_str().unwrap()]);
    same_files(&a, &b);
    let history = records(&a.join("history.csv"));
    // Three classes, one arm each, ten iterations.
    assert_eq!(history.len(), 30);
}
