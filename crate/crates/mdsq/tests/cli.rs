use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use mdsq::{Row, Status};

fn mdsq(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mdsq"))
        .args(args)
        .env("MDSQ_THREADS", "2")
        .output()
        .unwrap()
}

fn write_spec(dir: &Path, text: &str) -> String {
    let path = dir.join("spec.txt");
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn rows(csv_text: &[u8]) -> Vec<Row> {
    csv::Reader::from_reader(csv_text)
        .deserialize()
        .collect::<Result<_, _>>()
        .unwrap()
}

#[test]
fn invalid_spec_exits_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    for text in [
        "lambda = 1.0, 0.5\n",
        "n = 2\nk = 3\n",
        "policies = mds\n",
        "wat = 1\n",
        "lambda = abc\n",
    ] {
        let spec = write_spec(tmp.path(), text);
        let out = mdsq(&["solve", "--config", &spec]);
        assert_eq!(out.status.code(), Some(2), "{text}");
        assert!(String::from_utf8_lossy(&out.stderr).contains("invalid spec"));
    }
    assert_eq!(mdsq(&["solve", "--preset", "fig99"]).status.code(), Some(2));
    assert_eq!(mdsq(&["solve", "--format", "xml"]).status.code(), Some(2));
}

#[test]
fn unstable_points_are_marked() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = write_spec(
        tmp.path(),
        "n = 4\nk = 2\nlambda = 1.0, 1.95\npolicies = resv(1)\nx_max = 5\n",
    );
    let out_dir = tmp.path().join("out");
    let out = mdsq(&["solve", "--config", &spec, "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success());
    let latency = rows(&fs::read(out_dir.join("latency.csv")).unwrap());
    assert_eq!(latency.len(), 2);
    assert_eq!(latency[0].status, Status::Ok);
    assert_eq!(latency[1].status, Status::Unstable);
    assert_eq!(latency[1].value, None);
    let ccdf = rows(&fs::read(out_dir.join("ccdf.csv")).unwrap());
    assert_eq!(ccdf.len(), 7);
    assert!(out_dir.join("waiting.csv").exists());
}

#[test]
fn json_mirrors_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = write_spec(tmp.path(), "n = 4\nk = 2\nlambda = 1.2\npolicies = mkmn(1)\n");
    let csv_dir = tmp.path().join("csv");
    let json_dir = tmp.path().join("json");
    for (dir, format) in [(&csv_dir, "csv"), (&json_dir, "json")] {
        let out = mdsq(&[
            "solve",
            "--config",
            &spec,
            "--format",
            format,
            "--out",
            dir.to_str().unwrap(),
        ]);
        assert!(out.status.success());
    }
    let from_csv = rows(&fs::read(csv_dir.join("waiting.csv")).unwrap());
    let from_json: Vec<Row> =
        serde_json::from_slice(&fs::read(json_dir.join("waiting.json")).unwrap()).unwrap();
    assert_eq!(from_csv, from_json);
    assert_eq!(from_csv[0].series, "mkmn(1)");
}

#[test]
fn provenance_columns_are_consistent() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = write_spec(
        tmp.path(),
        "n = 4\nk = 2\nlambda = 1.0\npolicies = resv(1), mds\nreplications = 2\n\
         warmup = 500\nhorizon = 5000\nseed = 9\n",
    );
    let out = mdsq(&["sweep", "--config", &spec]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let latency = rows(text.split("\n\n").next().unwrap().as_bytes());
    assert_eq!(latency.len(), 2);
    for r in &latency {
        match r.policy.as_str() {
            "mds" => {
                assert_eq!(r.method, mdsq::Method::Simulated);
                assert_eq!(r.seed, Some(9));
                assert_eq!(r.replications, Some(2));
                assert!(r.ci_halfwidth.is_some());
            }
            _ => {
                assert_eq!(r.method, mdsq::Method::Analytic);
                assert_eq!(r.t, Some(1));
                assert_eq!(r.seed, None);
            }
        }
        assert_eq!((r.n, r.k, r.lambda, r.mu), (4, 2, Some(1.0), 1.0));
    }
}

#[test]
fn throughput_preset() {
    let out = mdsq(&["throughput", "--preset", "fig5"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let throughput = rows(text.split("\n\n").next().unwrap().as_bytes());
    assert_eq!(throughput.len(), 2 * 18);
    let n4 = throughput
        .iter()
        .find(|r| r.n == 4 && r.t == Some(1))
        .unwrap();
    assert!((n4.value.unwrap() - 1.92).abs() < 1e-6);
}

#[test]
fn block_dump() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = write_spec(tmp.path(), "n = 4\nk = 2\nlambda = 1\npolicies = resv(0)\n");
    let dump = tmp.path().join("blocks");
    let out = mdsq(&["solve", "--config", &spec, "--dump-blocks", dump.to_str().unwrap()]);
    assert!(out.status.success());
    let b0 = fs::read_to_string(dump.join("resv(0)_lambda1").join("B0.txt")).unwrap();
    assert_eq!(b0, "3 2\n0 0 3\n0 0 0\n");
    let a1 = fs::read_to_string(dump.join("resv(0)_lambda1").join("A1.txt")).unwrap();
    assert_eq!(a1, "3 2\n-4 0\n4 -5\n");
}

#[test]
fn degraded_reads_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = write_spec(
        tmp.path(),
        "n = 6\nk = 2\nd = 3\nlambda = 0.5, 3.0\nwarmup = 500\nhorizon = 5000\n",
    );
    let out = mdsq(&["degraded-reads", "--config", &spec]);
    assert!(out.status.success());
    let r = rows(&out.stdout);
    assert_eq!(r.len(), 4);
    assert_eq!((r[1].series.as_str(), r[1].n, r[1].k, r[1].mu), ("repair", 5, 3, 2.0));
    assert_eq!(r[2].status, Status::Unstable);
    assert_eq!(r[3].status, Status::Ok);
}
