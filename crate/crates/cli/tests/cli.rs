//! Runs the `clrm` binary on small inputs.

use std::path::Path;
use std::process::{Command, Output};

fn clrm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_clrm"))
        .args(args)
        .env("RUST_LOG", "warn")
        .env("RUST_BACKTRACE", "0")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn generate_then_cluster_from_config() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("gen");
    let text = stdout(&clrm(&[
        "--desk-scale",
        "--seed",
        "3",
        "--out",
        path(&out),
        "generate",
        "--count",
        "3",
    ]));
    assert!(text.contains("A: 3 realizations"), "{text}");
    assert!(text.contains("C: 3 realizations"), "{text}");
    let asset = out.join("seed_3/realizations/A/asset.json");
    assert!(out.join("seed_3/realizations/C/realizations.bin").exists());

    let cfg = tmp.path().join("small.toml");
    std::fs::write(
        &cfg,
        format!(
            "asset_files = [{:?}]\nmode = \"individual\"\nrealizations = 4\nclusters = 2\n\
             reference_days = 1000.0\nreference_reports = 5\nseeds = [5]\n",
            path(&asset)
        ),
    )
    .unwrap();
    let out = tmp.path().join("cl");
    let text = stdout(&clrm(&[
        "--config",
        path(&cfg),
        "--out",
        path(&out),
        "cluster",
    ]));
    assert!(text.starts_with("A: 2 clusters"), "{text}");
    assert!(out.join("seed_5/clusters_A.csv").exists());
}

#[test]
fn report_needs_an_existing_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let text = stdout(&clrm(&["report", path(tmp.path())]));
    assert!(text.starts_with("0 plots rendered"), "{text}");

    let o = clrm(&["report", path(&tmp.path().join("missing"))]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("is not a directory"));
}

#[test]
fn bad_config_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    std::fs::write(&cfg, "realizations = \"many\"\n").unwrap();
    let o = clrm(&["--config", path(&cfg), "cluster"]);
    assert!(!o.status.success());
}
