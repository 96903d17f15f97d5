use std::path::Path;
use std::process::{Command, Output};

use ntl_core::ranking::CANDIDATE_HEADER;
use serde_json::Value;

fn ntl(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ntl"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}, stderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

/// One-line JSON on stderr with an `error` field and a nonzero exit.
fn failed(out: &Output) -> Value {
    assert!(!out.status.success());
    let stderr = String::from_utf8(out.stderr.clone()).unwrap();
    assert_eq!(stderr.trim_end().lines().count(), 1, "{stderr}");
    let v: Value = serde_json::from_str(stderr.trim()).unwrap();
    assert!(v["error"].is_string());
    v
}

fn synth(dir: &Path) {
    ok(&ntl(
        &[
            "synth", "--seed", "3", "--out", "data", "--days", "10", "--feeders", "3",
            "--buses-per-feeder", "12", "--meter-fraction", "0.6", "--frauds", "1",
        ],
        dir,
    ));
}

#[test]
fn synth_validate_run_and_query() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth(dir);
    for f in ["network.json", "energy.csv", "voltage.csv", "scenario.json", "pipeline.json"] {
        assert!(dir.join("data").join(f).is_file(), "{f}");
    }
    let report: Value = serde_json::from_str(&ok(&ntl(&["validate-grid", "data/network.json"], dir))).unwrap();
    assert!(report["checks"].as_array().unwrap().iter().all(|c| c["passed"] == true));

    let first: Value = serde_json::from_str(&ok(&ntl(&["run", "--config", "data/pipeline.json"], dir))).unwrap();
    let run_dir = Path::new(first["dir"].as_str().unwrap()).to_path_buf();
    let run_dir = if run_dir.is_absolute() { run_dir } else { dir.join(run_dir) };
    let matrix = std::fs::read(run_dir.join("matrix_dv_min.csv")).unwrap();
    let second: Value = serde_json::from_str(&ok(&ntl(&["run", "--config", "data/pipeline.json"], dir))).unwrap();
    assert_eq!(first["run_id"], second["run_id"]);
    assert_eq!(std::fs::read(run_dir.join("matrix_dv_min.csv")).unwrap(), matrix);

    let csv = ok(&ntl(&["candidates", "--config", "data/pipeline.json", "--top", "15"], dir));
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), CANDIDATE_HEADER.join(","));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 15);
    for (i, row) in rows.iter().enumerate() {
        assert!(row.starts_with(&format!("{},", i + 1)));
    }

    let run_arg = run_dir.to_str().unwrap();
    let excluded = ok(&ntl(
        &["candidates", "--run", run_arg, "--top", "15", "--exclude", "2021-01-01..2021-01-04"],
        dir,
    ));
    assert_eq!(excluded.lines().count(), 16);

    let hm: Value = serde_json::from_str(&ok(&ntl(
        &["heatmap", "--run", run_arg, "--indicator", "dv_min", "--top", "15"],
        dir,
    )))
    .unwrap();
    let meters: Vec<String> = serde_json::from_value(hm["meters"].clone()).unwrap();
    let ranked: Vec<String> = rows.iter().map(|r| r.split(',').nth(1).unwrap().to_string()).collect();
    assert_eq!(meters, ranked);
    assert_eq!(hm["days"].as_array().unwrap().len(), 10);

    ok(&ntl(&["heatmap", "--run", run_arg, "--format", "svg", "--out", "h.svg"], dir));
    assert!(std::fs::read_to_string(dir.join("h.svg")).unwrap().starts_with("<svg"));
}

#[test]
fn explicit_inputs_and_sequential_match_config_run() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth(dir);
    let a: Value = serde_json::from_str(&ok(&ntl(&["run", "--config", "data/pipeline.json", "--out", "a"], dir))).unwrap();
    let b: Value = serde_json::from_str(&ok(&ntl(
        &[
            "--sequential", "run", "--network", "data/network.json", "--energy", "data/energy.csv",
            "--voltage", "data/voltage.csv", "--out", "b",
        ],
        dir,
    )))
    .unwrap();
    assert_eq!(a["run_id"], b["run_id"]);
    let id = a["run_id"].as_str().unwrap();
    for f in ["matrix_dv_min.csv", "matrix_dv_mean.csv", "matrix_dv_max.csv"] {
        assert_eq!(
            std::fs::read(dir.join("a").join(id).join(f)).unwrap(),
            std::fs::read(dir.join("b").join(id).join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn errors_are_one_json_line() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth(dir);

    std::fs::write(
        dir.join("missing.json"),
        r#"{"network": "data/network.json", "energy": "data/energy.csv", "voltage": "nope.csv"}"#,
    )
    .unwrap();
    let e = failed(&ntl(&["run", "--config", "missing.json"], dir));
    assert!(e["error"].as_str().unwrap().contains("nope.csv"));
    assert!(!dir.join("runs").exists(), "nothing computed or persisted");

    std::fs::write(dir.join("broken.csv"), "not,a,voltage,file\n").unwrap();
    let e = failed(&ntl(
        &["run", "--network", "data/network.json", "--energy", "data/energy.csv", "--voltage", "broken.csv"],
        dir,
    ));
    assert_eq!(e["stage"], "ingest");

    std::fs::write(dir.join("bad.json"), r#"{"buses": []}"#).unwrap();
    failed(&ntl(&["validate-grid", "bad.json"], dir));
    failed(&ntl(&["validate-grid", "absent.json"], dir));

    ok(&ntl(&["run", "--config", "data/pipeline.json"], dir));
    failed(&ntl(&["heatmap", "--config", "data/pipeline.json", "--indicator", "dv_median"], dir));
    failed(&ntl(&["candidates", "--config", "data/pipeline.json", "--top", "0"], dir));
}

#[test]
fn usage_errors_print_synopsis() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ntl(&["candidates", "--exclude", "2021-02-01..2021-01-01", "--run", "x"], tmp.path());
    assert!(!out.status.success());
    let out = ntl(&["frobnicate"], tmp.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn serve_answers_over_tcp() {
    use std::io::{BufRead, BufReader, Read, Write};

    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth(dir);
    let run: Value = serde_json::from_str(&ok(&ntl(&["run", "--config", "data/pipeline.json"], dir))).unwrap();

    let mut child = Command::new(env!("CARGO_BIN_EXE_ntl"))
        .args(["serve", "--out", "data/runs"])
        .env("NTL_BIND", "127.0.0.1:0")
        .current_dir(dir)
        .stderr(std::process::Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stderr.take().unwrap()).read_line(&mut line).unwrap();
    let addr = serde_json::from_str::<Value>(&line).unwrap()["listening"].as_str().unwrap().to_string();

    let mut stream = std::net::TcpStream::connect(&addr).unwrap();
    write!(stream, "GET /runs HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\n\r\n").unwrap();
    let mut response = String::new();
    stream.read_to_string(&mut response).unwrap();
    child.kill().unwrap();
    child.wait().unwrap();

    assert!(response.starts_with("HTTP/1.1 200"), "{response}");
    assert!(response.contains(run["run_id"].as_str().unwrap()));
}

#[test]
fn serve_rejects_bad_bind_address() {
    let tmp = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_ntl"))
        .args(["serve", "--out", "runs"])
        .env("NTL_BIND", "not-an-address")
        .current_dir(tmp.path())
        .output()
        .unwrap();
    assert!(failed(&out)["error"].as_str().unwrap().contains("NTL_BIND"));
}
