//! End-to-end checks of the `otafl` binary.

use std::path::Path;
use std::process::{Command, Output};

fn otafl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_otafl")).args(args).output().expect("spawn otafl")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn header(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap().lines().next().unwrap().to_string()
}

const SMALL: [&str; 12] = [
    "--data", "synthetic", "--synthetic", "3:6:40:3", "--set", "n_reflect=2", "--set", "m_transmit=2", "--set",
    "rounds=5", "--sca.imax", "3",
];

#[test]
fn defaults_prints_overridden_config() {
    let o = otafl(&["defaults", "--set", "q_elements=12", "--sca.restarts", "3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = String::from_utf8(o.stdout).unwrap();
    assert!(out.lines().any(|l| l.replace(' ', "") == "q_elements=12"), "{out}");
    assert!(out.lines().any(|l| l.replace(' ', "") == "sca.restarts=3"), "{out}");
}

#[test]
fn bad_arguments_fail_cleanly() {
    let cases: [(&[&str], &str); 4] = [
        (&["defaults", "--set", "q_elements"], "KEY=VALUE"),
        (&["defaults", "--set", "no_such_key=1"], "no_such_key"),
        (&["run", "--baseline", "bogus", "--out", "/nonexistent"], "unknown baseline"),
        (&["run", "--sweep-q", "10", "--sweep-lambda", "5", "--out", "/nonexistent"], "mutually exclusive"),
    ];
    for (args, needle) in cases {
        let o = otafl(args);
        assert!(!o.status.success(), "{args:?} should fail");
        assert!(stderr(&o).contains(needle), "{args:?}: {}", stderr(&o));
    }
}

#[test]
fn dump_channel_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("ch.csv");
    let o = otafl(&["dump-channel", "--set", "n_reflect=2", "--set", "m_transmit=1", "--out", p.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(header(&p), "block,user,row,col,re,im");
    assert!(std::fs::read_to_string(&p).unwrap().lines().count() > 10);
}

#[test]
fn outputs_share_schema_across_baselines() {
    let dir = tempfile::tempdir().unwrap();
    let mut headers = Vec::new();
    for b in ["noise-free", "astars", "pstars", "dual-ris", "no-ris"] {
        let out = dir.path().join(b);
        let mut args = vec!["run", "--baseline", b, "--trials", "2", "--sweep-lambda", "5,10", "--bounds"];
        args.extend(SMALL);
        args.extend(["--out", out.to_str().unwrap()]);
        let o = otafl(&args);
        assert!(o.status.success(), "{b}: {}", stderr(&o));
        let stdout = String::from_utf8(o.stdout).unwrap();
        assert_eq!(stdout.lines().count(), 2, "{stdout}");
        let files = ["history.csv", "summary.csv", "bounds.csv"];
        headers.push(files.map(|f| header(&out.join(f))));
        let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
        assert_eq!(summary.lines().count(), 3, "{summary}");
        assert!(summary.lines().skip(1).all(|l| l.starts_with(&format!("{b},lambda,"))));
        let manifest = std::fs::read_to_string(out.join("manifest.txt")).unwrap();
        assert!(manifest.contains("[run]") && manifest.contains("[provenance]") && manifest.contains("[config]"));
    }
    assert!(headers.windows(2).all(|w| w[0] == w[1]));
    assert!(headers[0][0].starts_with("baseline,sweep,value,trial,round,loss,test_acc"));
}

#[test]
fn noise_free_history_has_zero_aggregation_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["run", "--baseline", "noise-free", "--trials", "1"];
    args.extend(SMALL);
    args.extend(["--out", dir.path().to_str().unwrap()]);
    assert!(otafl(&args).status.success());
    let mut rdr = csv::Reader::from_path(dir.path().join("history.csv")).unwrap();
    let col = rdr.headers().unwrap().iter().position(|h| h == "e2_norm2").unwrap();
    for rec in rdr.records() {
        assert_eq!(rec.unwrap()[col].parse::<f64>().unwrap(), 0.0);
    }
}
