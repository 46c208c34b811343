use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_flash-vpr"));
    c.env_remove("FLASH_VPR_THREADS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(dir: &Path, name: &str, duration: &str, seed: &str) -> String {
    let path = dir.join(name);
    ok(&["synth", "--duration", duration, "--seed", seed, "--noise-seed", "5", "-o", p(&path)]);
    p(&path).to_string()
}

#[test]
fn build_db_frame_counts() {
    let dir = tempfile::tempdir().unwrap();
    let events = synth(dir.path(), "a.txt", "1s", "1");
    let db = dir.path().join("a.db");
    let out = ok(&["build-db", "--events", &events, "--window", "125us", "-o", p(&db)]);
    assert!(out.contains("frames: 8000"), "{out}");
    let out = ok(&["build-db", "--events", &events, "--window", "1s", "-o", p(&db)]);
    assert!(out.contains("frames: 1\n"), "{out}");
}

#[test]
fn missing_input_is_a_usage_error() {
    let out = run(&["build-db", "--events", "/no/such/file.txt", "--window", "1ms", "-o", "/tmp/x.db"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/no/such/file.txt"));
}

#[test]
fn query_self_match_and_capabilities() {
    let dir = tempfile::tempdir().unwrap();
    let events = synth(dir.path(), "a.txt", "50ms", "2");
    let db = dir.path().join("a.db");
    ok(&["build-db", "--events", &events, "--window", "250us", "-o", p(&db)]);
    let csv = ok(&["query", "--db", p(&db), "--events", &events, "--format", "csv", "--no-timing"]);
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 200);
    for row in rows {
        let f: Vec<&str> = row.split(',').collect();
        assert_eq!(f[0], f[2], "{row}");
    }
    let timed = ok(&["query", "--db", p(&db), "--events", &events, "--format", "csv"]);
    assert!(timed.starts_with("query_index,rank,reference_index,score,degenerate,elapsed_us\n"));

    let out = run(&["query", "--db", p(&db), "--events", &events, "-k", "1000", "--format", "csv", "--no-timing"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("exceeds"));
    assert_eq!(String::from_utf8_lossy(&out.stdout).lines().count(), 1 + 200 * 200);

    let out = run(&["query", "--db", p(&db), "--events", &events, "--matcher", "zoom"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("count frames"));

    let counts = dir.path().join("c.db");
    ok(&["build-db", "--events", &events, "--window", "250us", "--counts", "-o", p(&counts)]);
    let zoom = ok(&["query", "--db", p(&counts), "--events", &events, "--matcher", "zoom", "--format", "csv", "--no-timing"]);
    assert_eq!(zoom.lines().count(), 201);
}

#[test]
fn query_output_is_thread_invariant() {
    let dir = tempfile::tempdir().unwrap();
    let events = synth(dir.path(), "a.txt", "40ms", "3");
    let db = dir.path().join("a.db");
    ok(&["build-db", "--events", &events, "--window", "500us", "--counts", "-o", p(&db)]);
    for matcher in ["flash", "sparse-event-vpr"] {
        let args = ["query", "--db", p(&db), "--events", &events, "--matcher", matcher, "-k", "5", "--format", "csv", "--no-timing"];
        let one = ok(&[&["--threads", "1"][..], &args[..]].concat());
        let four = ok(&[&["--threads", "4"][..], &args[..]].concat());
        assert_eq!(one, four, "{matcher}");
    }
}

#[test]
fn stats_rows_follow_input_order() {
    let dir = tempfile::tempdir().unwrap();
    let events = synth(dir.path(), "a.txt", "100ms", "4");
    let out = ok(&["stats", "--events", &events, "--windows", "1ms,15.625,125us"]);
    let rows: Vec<&str> = out.lines().collect();
    assert_eq!(rows[0], "window_us,windows,mean_events,mean_active_pixels");
    assert_eq!(rows.len(), 4);
    assert!(rows[1].starts_with("1000,"));
    assert!(rows[2].starts_with("15.625,"));
    assert!(rows[3].starts_with("125,"));
    let out = run(&["stats", "--events", &events, "--windows", "0"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn subsample_sizes_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let events = synth(dir.path(), "a.txt", "10ms", "5");
    let db = dir.path().join("a.db");
    let out = ok(&["build-db", "--events", &events, "--window", "1ms", "-o", p(&db)]);
    assert!(out.contains("frames: 10"));
    let half = dir.path().join("h.db");
    let out = ok(&["subsample", "--db", p(&db), "--factor", "2", "-o", p(&half)]);
    assert!(out.contains("frames: 10 -> 5"), "{out}");
    let out = ok(&["subsample", "--db", p(&half), "--factor", "4", "-o", p(&half)]);
    assert!(out.contains("frames: 5 -> 2"), "{out}");
    assert!(out.contains("subsample_factor: 8"), "{out}");
    let out = run(&["subsample", "--db", p(&db), "--factor", "3", "-o", p(&half)]);
    assert_eq!(out.status.code(), Some(2));
}

fn write_config(dir: &Path, matchers: &str) -> String {
    let text = format!(
        r#"
seed = 3
window_sizes_us = [250, 1000]
matchers = [{matchers}]
subsample_factors = [1, 2]
tolerance = 1

[reference.synthetic]
geometry = "86x45"
pattern = "random-texture-pan"
speed_px_per_s = 2000.0
duration_us = 60000
event_rate_hz = 240000.0
seed = 9
noise_seed = 1

[query]
path = "query.txt"
"#
    );
    let path = dir.join("exp.toml");
    std::fs::write(&path, text).unwrap();
    p(&path).to_string()
}

#[test]
fn eval_grid_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["synth", "--duration", "60ms", "--seed", "9", "--noise-seed", "2", "-o", p(&dir.path().join("query.txt"))]);
    let config = write_config(dir.path(), r#""flash", "rand-pix-sad""#);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let out = ok(&["--threads", "1", "eval", "--config", &config, "-o", p(&a)]);
    assert!(out.contains("8 grid cells, 0 failed"), "{out}");
    ok(&["--threads", "3", "eval", "--config", &config, "-o", p(&b)]);
    for f in ["summary.json", "recall_vs_window.csv", "tcm_cdf.csv", "subsample_sweep.csv", "event_stats.csv"] {
        let x = std::fs::read(a.join(f)).unwrap();
        let y = std::fs::read(b.join(f)).unwrap();
        assert_eq!(x, y, "{f}");
    }
    let recall = std::fs::read_to_string(a.join("recall_vs_window.csv")).unwrap();
    assert_eq!(recall.lines().count(), 1 + 4);
}

#[test]
fn eval_reports_capability_failures_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["synth", "--duration", "20ms", "--seed", "9", "-o", p(&dir.path().join("query.txt"))]);
    let config = write_config(dir.path(), r#""flash""#);
    let text = std::fs::read_to_string(&config).unwrap().replace("[1, 2]", "[1, 2048]");
    std::fs::write(&config, text).unwrap();
    let out = run(&["eval", "--config", &config, "-o", p(&dir.path().join("r"))]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn eval_rejects_unknown_matcher_before_work() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), r#""flash", "nearest-neighbour""#);
    let out = run(&["eval", "--config", &config, "-o", p(&dir.path().join("r"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("r").exists());
    assert!(String::from_utf8_lossy(&out.stderr).contains("nearest-neighbour"));
}
