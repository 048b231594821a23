use std::path::Path;
use std::process::{Command, Output};

fn oedp(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_oedp")).current_dir(dir).args(args).output().expect("spawn oedp")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn generate_is_byte_stable_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["generate", "--dist", "powerlaw", "--theta", "2.5", "--n", "100000", "--seed", "7"];
    for out in ["a.bin", "b.bin"] {
        let o = oedp(dir.path(), &[&args[..], &["-o", out]].concat());
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let a = std::fs::read(dir.path().join("a.bin")).unwrap();
    let b = std::fs::read(dir.path().join("b.bin")).unwrap();
    assert_eq!(a.len(), 100_000 * 8);
    assert_eq!(a, b);

    let o = oedp(dir.path(), &["generate", "--dist", "powerlaw", "--theta", "2.5", "--n", "100000", "--seed", "8", "-o", "c.bin"]);
    assert!(o.status.success());
    assert_ne!(std::fs::read(dir.path().join("c.bin")).unwrap(), a);
}

#[test]
fn planted_stream_has_one_line_per_item() {
    let dir = tempfile::tempdir().unwrap();
    let o = oedp(dir.path(), &["generate", "--planted", "a:3,b:1", "--n", "4"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 4);
    let mut distinct = lines.clone();
    distinct.sort();
    distinct.dedup();
    assert_eq!(distinct.len(), 2);
}

#[test]
fn infeasible_spec_fails_with_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["generate", "--dist", "powerlaw", "--theta", "0.5", "--n", "10"][..],
        &["generate", "--planted", "a:5", "--n", "3"],
        &["generate", "--dist", "uniform", "--n", "abc"],
    ] {
        let o = oedp(dir.path(), args);
        assert!(!o.status.success(), "{args:?} succeeded");
        assert!(!stderr(&o).trim().is_empty());
    }
}

#[test]
fn precondition_gate_prints_the_inequality() {
    let dir = tempfile::tempdir().unwrap();
    let o = oedp(dir.path(), &["run", "--mode", "online", "--m", "4", "--t", "2", "--n", "1e6"]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("(phi - 1/M) * N >= 1"), "{err}");
}

#[test]
fn online_run_verifies_against_truth() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(oedp(d, &["generate", "--dist", "uniform", "--u", "500", "--n", "20000", "--seed", "3", "-o", "s.bin"]).status.success());
    // N/M = 78.1 so T = 100 clears the gate
    let o = oedp(d, &["run", "--mode", "online", "--m", "256", "--b", "64", "--t", "100", "--out", "run", "--verify", "s.bin"]);
    assert!(o.status.success(), "{}{}", stdout(&o), stderr(&o));
    assert!(stdout(&o).contains("verdict: PASS"));

    assert!(oedp(d, &["truth", "s.bin", "--t", "100", "-o", "truth.csv"]).status.success());
    let o = oedp(d, &["verify", "run/events.csv", "truth.csv"]);
    assert!(o.status.success(), "{}", stdout(&o));

    let events = std::fs::read_to_string(d.join("run/events.csv")).unwrap();
    assert!(events.starts_with("key,trigger_time,report_time,count\n"));
    for line in events.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        assert_eq!(f[1], f[2], "report_time differs from trigger_time: {line}");
    }
}

#[test]
fn verify_flags_missing_and_duplicate_reports() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(
        d.join("truth.csv"),
        "key,first_seen,trigger_time,flow,deadline\n1,1,5,4,5\n2,2,7,5,7\n",
    )
    .unwrap();
    std::fs::write(d.join("missing.csv"), "key,trigger_time,report_time,count\n1,5,5,2\n").unwrap();
    std::fs::write(d.join("dup.csv"), "key,trigger_time,report_time,count\n1,5,5,2\n2,7,7,2\n2,7,7,2\n").unwrap();
    std::fs::write(d.join("good.csv"), "key,trigger_time,report_time,count\n1,5,5,2\n2,7,7,2\n").unwrap();

    let o = oedp(d, &["verify", "missing.csv", "truth.csv"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("FALSE_NEGATIVE key=2"));

    let o = oedp(d, &["verify", "dup.csv", "truth.csv"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("DUPLICATE key=2"));

    assert_eq!(oedp(d, &["verify", "good.csv", "truth.csv"]).status.code(), Some(0));
    assert_eq!(oedp(d, &["verify", "nope.csv", "truth.csv"]).status.code(), Some(2));
}

#[test]
fn time_stretch_run_meets_deadlines() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(oedp(d, &["generate", "--dist", "powerlaw", "--theta", "2.5", "--n", "30000", "--seed", "1", "-o", "s.bin"]).status.success());
    let o = oedp(d, &["run", "--mode", "time-stretch", "--q", "2", "--m", "64", "--t", "24", "--out", "ts", "--verify", "s.bin"]);
    assert!(o.status.success(), "{}{}", stdout(&o), stderr(&o));

    assert!(oedp(d, &["truth", "s.bin", "--t", "24", "--q", "2", "-o", "truth.csv"]).status.success());
    let o = oedp(d, &["verify", "ts/events.csv", "truth.csv", "--mode", "time-stretch", "--n", "30000"]);
    assert!(o.status.success(), "{}", stdout(&o));
}

#[test]
fn replay_reproduces_a_file_backed_run() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(oedp(d, &["generate", "--dist", "powerlaw", "--theta", "2.5", "--n", "20000", "--seed", "5", "-o", "s.txt"]).status.success());
    let o = oedp(d, &[
        "run", "--mode", "power-law", "--theta", "2.5", "--m", "64", "--t", "700", "--dynamic",
        "--storage-dir", "levels", "--out", "pl", "s.txt",
    ]);
    assert!(o.status.success(), "{}{}", stdout(&o), stderr(&o));
    assert!(d.join("levels").read_dir().unwrap().next().is_some());

    let o = oedp(d, &["replay", "pl/manifest.json"]);
    assert!(o.status.success(), "{}", stdout(&o));
    assert!(stdout(&o).contains("events: identical"));

    // a changed stream is refused
    std::fs::write(d.join("s.txt"), "1\n2\n").unwrap();
    assert_eq!(oedp(d, &["replay", "pl/manifest.json"]).status.code(), Some(2));
}

#[test]
fn bench_emits_one_row_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let o = oedp(dir.path(), &["bench", "--mode", "online", "--t", "200", "--n", "8192", "--dist", "uniform", "--u", "100"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert_eq!(text.lines().count(), 2);
    assert!(text.starts_with("mode,n,m,b,r,param,blocks_per_item,queries,sweeps\n"));

    let o = oedp(dir.path(), &["bench", "--mode", "online", "--t", "200", "--n", "8192", "--b-grid", "32,64,128", "--dist", "uniform", "--u", "100"]);
    assert_eq!(stdout(&o).lines().count(), 4);
}
