use std::fs;
use std::process::Command;

fn specnet() -> Command {
    Command::new(env!("CARGO_BIN_EXE_specnet"))
}

#[test]
fn ingest_then_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let prefix = dir.path().join("toy");
    fs::write(prefix.with_extension("content"), "a 1 0 x\nb 0 1 y\nc 1 1 x\nd 0 0 y\n").unwrap();
    fs::write(prefix.with_extension("cites"), "a b\nb c\nc a\nd a\n").unwrap();
    let out = dir.path().join("ingested");
    let status = specnet()
        .args(["ingest", "--linqs"])
        .arg(&prefix)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let edges = fs::read_to_string(out.join("edges.txt")).unwrap();
    assert_eq!(edges.lines().filter(|l| !l.starts_with('#')).count(), 4);

    let report = specnet()
        .args(["metrics", "--edges"])
        .arg(out.join("edges.txt"))
        .output()
        .unwrap();
    assert!(report.status.success());
    let text = String::from_utf8(report.stdout).unwrap();
    let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(&row[..2], ["4", "4"]);
}

#[test]
fn malformed_input_fails_with_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let prefix = dir.path().join("bad");
    fs::write(prefix.with_extension("content"), "a 1 x\nb 0 1 y\n").unwrap();
    fs::write(prefix.with_extension("cites"), "").unwrap();
    let out = specnet()
        .args(["ingest", "--linqs"])
        .arg(&prefix)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
}

#[test]
fn baseline_writes_the_budget() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("rus.txt");
    let status = specnet()
        .args(["baseline", "--sbm", "--method", "rus", "--budget", "20", "--out"])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let text = fs::read_to_string(out).unwrap();
    assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 20);
}

#[test]
fn bench_on_sbm_writes_tables() {
    let dir = tempfile::tempdir().unwrap();
    let status = specnet()
        .args([
            "bench", "--sbm", "--k", "2", "--seeds", "1", "--epochs", "3", "--rows", "8", "--width", "8", "--out",
        ])
        .arg(dir.path())
        .status()
        .unwrap();
    assert!(status.success());
    for f in [
        "raw.csv",
        "metrics_sweep.csv",
        "mass_comparison.csv",
        "rows.json",
        "manifest.json",
    ] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let raw = fs::read_to_string(dir.path().join("raw.csv")).unwrap();
    assert_eq!(raw.lines().count(), 1 + 7);
}
