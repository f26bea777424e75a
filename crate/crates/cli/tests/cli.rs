use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use gridzero::scenario::{desk14, generate_suite, write_suite, ScenarioConfig};

struct Suite {
    dir: tempfile::TempDir,
    grid: PathBuf,
    chronics: PathBuf,
}

fn suite() -> Suite {
    suite_of(96)
}

fn suite_of(horizon: usize) -> Suite {
    let dir = tempfile::tempdir().unwrap();
    let spec = desk14();
    let cfg = ScenarioConfig { horizon, ..Default::default() };
    let (grid, chronics) = write_suite(dir.path(), &spec, &generate_suite(&spec, &cfg, 2, 7)).unwrap();
    Suite { dir, grid, chronics }
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gridzero"))
}

fn run(s: &Suite, sub: &str, extra: &[&str]) -> Output {
    bin().arg(sub).arg("--grid").arg(&s.grid).arg("--chronics").arg(&s.chronics).args(extra).output().unwrap()
}

fn category(o: &Output) -> String {
    let err = String::from_utf8_lossy(&o.stderr);
    let line = err.lines().last().unwrap_or_default();
    let v: serde_json::Value = serde_json::from_str(line).unwrap_or_else(|_| panic!("stderr is not JSON: {err}"));
    v["error"]["category"].as_str().unwrap().to_string()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Drop the wall-clock columns of a report CSV.
fn strip_wall(csv: &str, col: usize) -> Vec<String> {
    csv.lines().map(|l| l.split(',').enumerate().filter(|(i, _)| *i != col).map(|(_, f)| f).collect::<Vec<_>>().join(",")).collect()
}

#[test]
fn evaluate_writes_a_reproducible_report() {
    let s = suite();
    let out_a = s.dir.path().join("a");
    let out_b = s.dir.path().join("b");
    for out in [&out_a, &out_b] {
        let o = run(&s, "evaluate", &["--agents", "noop,redispatch", "--seeds", "0,1", "--out", path(out)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let table = String::from_utf8_lossy(&o.stdout);
        assert!(table.contains("noop") && table.contains("redispatch"));
    }
    let read = |d: &Path, f: &str| std::fs::read_to_string(d.join(f)).unwrap();
    assert_eq!(strip_wall(&read(&out_a, "report.csv"), 3), strip_wall(&read(&out_b, "report.csv"), 3));
    assert_eq!(strip_wall(&read(&out_a, "episodes.csv"), 11), strip_wall(&read(&out_b, "episodes.csv"), 11));
    assert_eq!(read(&out_a, "episodes.csv").lines().count(), 1 + 2 * 2 * 2);
}

#[test]
fn failures_exit_with_a_category() {
    let s = suite();
    let out = s.dir.path().join("x");
    let o = run(&s, "evaluate", &["--agents", "topo_top5", "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(4));
    assert_eq!(category(&o), "missing_artifact");
    assert!(!out.join("report.csv").exists());

    let o = run(&s, "evaluate", &["--agents", "psychic", "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(category(&o), "config");

    let cfg = s.dir.path().join("bad.toml");
    std::fs::write(&cfg, "seeds = \"many\"").unwrap();
    let o = run(&s, "evaluate", &["--config", path(&cfg), "--out", path(&out)]);
    assert_eq!(category(&o), "config");

    let o = bin().args(["evaluate", "--grid", "nowhere.json", "--chronics", "none", "--out", path(&out)]).output().unwrap();
    assert_eq!(category(&o), "missing_artifact");

    let o = bin().args(["evaluate", "--bogus"]).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(category(&o), "usage");
}

#[test]
fn reduce_train_and_evaluate_chain() {
    // a full day reaches the evening peak
    let s = suite_of(288);
    let reduced = s.dir.path().join("reduced.txt");
    let o = run(&s, "reduce-actions", &["--k", "10", "--seeds", "0", "--out", path(&reduced)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let first = std::fs::read_to_string(&reduced).unwrap();
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("kept "));
    assert!(!String::from_utf8_lossy(&o.stdout).starts_with("kept 0 "), "{first}");
    let o = run(&s, "reduce-actions", &["--k", "10", "--seeds", "0", "--out", path(&reduced)]);
    assert!(o.status.success());
    assert_eq!(std::fs::read_to_string(&reduced).unwrap(), first);

    let cfg = s.dir.path().join("train.toml");
    std::fs::write(&cfg, "[train]\nepochs = 1\nepisodes_per_epoch = 2\nhidden = [8]\nmax_steps = 48\n\n[train.search]\nn_simulations_max = 10\n").unwrap();
    let ckpt = s.dir.path().join("ckpt");
    let o = run(&s, "train", &["--config", path(&cfg), "--reduced-set", path(&reduced), "--seed", "3", "--out", path(&ckpt)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mut policies: Vec<PathBuf> =
        std::fs::read_dir(&ckpt).unwrap().map(|e| e.unwrap().path()).filter(|p| p.extension().is_some_and(|x| x == "json")).collect();
    policies.sort();
    let policy = policies.last().expect("a checkpoint").clone();

    let out = s.dir.path().join("eval");
    let o = run(
        &s,
        "evaluate",
        &["--agents", "topo_argmax,topo_top5_redispatch", "--reduced-set", path(&reduced), "--policy", path(&policy), "--seeds", "0", "--out", path(&out)],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    // a tampered checkpoint refuses to serve
    let text = std::fs::read_to_string(&policy).unwrap();
    let bad = s.dir.path().join("bad_policy.json");
    std::fs::write(&bad, text.replacen("\"feature_hash\":\"", "\"feature_hash\":\"00", 1)).unwrap();
    let o = run(&s, "serve", &["--reduced-set", path(&reduced), "--policy", path(&bad), "--addr", "127.0.0.1:0"]);
    assert_eq!(o.status.code(), Some(5));
    assert_eq!(category(&o), "artifact_mismatch");

    let o = run(&s, "train", &["--out", path(&ckpt)]);
    assert_eq!(category(&o), "missing_artifact");
}

#[test]
fn serve_answers_and_names_a_busy_port() {
    let s = suite();
    let mut child = bin()
        .arg("serve")
        .arg("--grid")
        .arg(&s.grid)
        .arg("--chronics")
        .arg(&s.chronics)
        .args(["--addr", "127.0.0.1:0", "--out"])
        .arg(s.dir.path().join("logs"))
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let addr = line.trim().strip_prefix("listening on http://").unwrap_or_else(|| panic!("unexpected: {line}")).to_string();

    let mut conn = TcpStream::connect(&addr).unwrap();
    write!(conn, "GET /health HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\n\r\n").unwrap();
    let mut resp = String::new();
    conn.read_to_string(&mut resp).unwrap();
    assert!(resp.starts_with("HTTP/1.1 200"), "{resp}");
    assert!(resp.contains("\"status\":\"ok\""));

    let o = run(&s, "serve", &["--addr", &addr]);
    assert_eq!(o.status.code(), Some(11));
    assert_eq!(category(&o), "port_busy");
    child.kill().unwrap();
    child.wait().unwrap();
}
