use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_plane-sweep");
const SMALL: &str = "1 12 22 550 53 0\n2 8 30 600 55 10\n";

fn run(args: &[&str], dir: &Path) -> Output {
    Command::new(BIN).args(args).current_dir(dir).env_remove("PLANE_SWEEP_THREADS").output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("small.txt"), SMALL).unwrap();
    dir
}

#[test]
fn inspect_prints_the_reference_leg() {
    let dir = setup();
    let o = run(&["inspect", "--plane", "1-1", "--trace", "leg.tsv"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.contains("d_a_km 209.944"), "{text}");
    assert!(text.contains("dt_stay_days 1.457"), "{text}");
    assert!(text.contains("flybys passed 22/22"), "{text}");
    let trace = std::fs::read_to_string(dir.path().join("leg.tsv")).unwrap();
    assert_eq!(plane_sweep::verify::parse_trace(&trace).unwrap().iter().filter(|r| r.pass == Some(true)).count(), 22);
}

#[test]
fn exit_codes() {
    let dir = setup();
    assert_eq!(run(&["inspect", "--k-omega", "1.5"], dir.path()).status.code(), Some(1));
    assert_eq!(run(&["inspect", "--plane", "7"], dir.path()).status.code(), Some(1));
    assert_eq!(run(&["search", "--bogus"], dir.path()).status.code(), Some(1));
    assert_eq!(run(&["verify", "--input", "missing.txt"], dir.path()).status.code(), Some(1));
    assert_eq!(run(&["--threads", "0", "inspect"], dir.path()).status.code(), Some(1));

    std::fs::write(dir.path().join("two.txt"), "1 4 2 550 53 0\n").unwrap();
    let o = run(&["inspect", "--scenario", "two.txt", "--plane", "1-1"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("infeasible") && err.contains("flyby speed"), "{err}");
}

#[test]
fn search_is_reproducible_and_thread_independent() {
    let dir = setup();
    let args = |out: &'static str, threads: &'static str| {
        ["--threads", threads, "search", "--scenario", "small.txt", "--gens", "30", "--pop", "16", "--out", out]
    };
    for (out, threads) in [("a.txt", "1"), ("b.txt", "1"), ("c.txt", "3")] {
        let o = run(&args(out, threads), dir.path());
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        assert!(stdout(&o).contains("seed 42"));
    }
    let read = |f: &str| std::fs::read(dir.path().join(f)).unwrap();
    assert_eq!(read("a.txt"), read("b.txt"));
    assert_eq!(read("a.txt"), read("c.txt"));
    assert!(String::from_utf8(read("a.txt")).unwrap().starts_with("# plane-sweep search seed 42\n"));
}

#[test]
fn search_refine_verify_pipeline() {
    let dir = setup();
    let d = dir.path();
    let o = run(&["search", "--scenario", "small.txt", "--gens", "40", "--pop", "20", "--out", "s.txt"], d);
    assert_eq!(o.status.code(), Some(0));
    let o = run(&["refine", "--scenario", "small.txt", "--input", "s.txt", "--gens", "30", "--out", "r.txt"], d);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(d.join("r.txt.schedules").exists());
    let o = run(&["verify", "--scenario", "small.txt", "--input", "r.txt", "--out", "report.txt"], d);
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), String::from_utf8_lossy(&o.stderr));
    let report = std::fs::read_to_string(d.join("report.txt")).unwrap();
    assert!(report.contains("\nreport\n") && !report.contains("violation"), "{report}");

    // A schedule that skips its burns misses the arrival.
    let sched = std::fs::read_to_string(d.join("r.txt.schedules")).unwrap();
    let stripped: String = sched
        .lines()
        .filter(|l| l.starts_with('#') || l.starts_with("transfer"))
        .map(|l| match l.strip_prefix("transfer ") {
            Some(rest) => format!("transfer {} 0\n", rest.split(' ').next().unwrap()),
            None => format!("{l}\n"),
        })
        .collect();
    std::fs::write(d.join("bad.schedules"), stripped).unwrap();
    let o = run(&["verify", "--scenario", "small.txt", "--input", "r.txt", "--schedules", "bad.schedules"], d);
    assert_eq!(o.status.code(), Some(3), "{}", stdout(&o));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error: violation"));
}

#[test]
fn multi_assigns_disjoint_planes() {
    let dir = setup();
    let o = run(
        &["multi", "--scenario", "small.txt", "--gens", "10", "--pop", "10", "--craft", "3", "--pairs", "1-2", "--out", "m.txt"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(dir.path().join("m.txt")).unwrap();
    assert_eq!(text.matches("\ncraft ").count(), 3);
    let rows: Vec<(String, String)> = text
        .lines()
        .filter(|l| l.contains(" | ") && !l.starts_with('#'))
        .map(|l| {
            let f: Vec<&str> = l.split_whitespace().collect();
            (f[0].to_string(), f[1].to_string())
        })
        .collect();
    let unique: std::collections::HashSet<_> = rows.iter().collect();
    assert_eq!(unique.len(), rows.len());
    assert_eq!(run(&["multi", "--pairs", "2-1"], dir.path()).status.code(), Some(1));
}

#[test]
fn threads_env_fallback_is_validated() {
    let dir = setup();
    let o = Command::new(BIN)
        .args(["inspect"])
        .current_dir(dir.path())
        .env("PLANE_SWEEP_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
}
