use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};
use std::time::{SystemTime, UNIX_EPOCH};

use serde_json::Value;

const TOKEN: &str = "cli-test-token";

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_contactpsi"));
    for (k, _) in std::env::vars_os() {
        if k.to_string_lossy().starts_with("CONTACTPSI_") {
            cmd.env_remove(k);
        }
    }
    cmd
}

struct ServerProcess {
    child: Child,
    url: String,
}

impl Drop for ServerProcess {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

fn serve(extra: &[&str]) -> ServerProcess {
    let mut child = bin()
        .args(["serve", "--bind", "127.0.0.1:0", "--upload-token", TOKEN])
        .args(extra)
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap())
        .read_line(&mut line)
        .unwrap();
    let v: Value = serde_json::from_str(&line).unwrap_or_else(|e| panic!("{e}: {line:?}"));
    ServerProcess {
        child,
        url: format!("http://{}", v["listening"].as_str().unwrap()),
    }
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).unwrap().as_secs()
}

/// A short walk ending an hour ago, one sample per five minutes.
fn write_trace(dir: &Path, name: &str, samples: u64) -> PathBuf {
    let start = (now() - 3600 - samples * 300) / 300 * 300;
    let mut text = String::from("user_id,lat,lon,epoch_seconds\n");
    for i in 0..samples {
        text += &format!(
            "u,{:.7},{:.7},{}\n",
            42.35 + i as f64 * 0.0007,
            -71.06 + i as f64 * 0.0003,
            start + i * 300
        );
    }
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "{e}: stdout {:?} stderr {:?}",
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        )
    })
}

fn error_code(out: &Output) -> String {
    assert_eq!(out.status.code(), Some(1), "{out:?}");
    let v: Value = serde_json::from_slice(&out.stderr).unwrap_or_else(|e| panic!("{e}: {out:?}"));
    v["error"]["code"].as_str().unwrap().to_string()
}

#[test]
fn check_against_empty_server() {
    let dir = tempfile::tempdir().unwrap();
    let trace = write_trace(dir.path(), "t.csv", 4);
    let server = serve(&[]);
    let out = bin()
        .args(["--server", &server.url, "check", "--trace"])
        .arg(&trace)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    assert_eq!(
        String::from_utf8(out.stdout).unwrap(),
        "{\"match_count\":0,\"level\":\"none\"}\n"
    );
}

#[test]
fn upload_then_check_detects_full_overlap() {
    let dir = tempfile::tempdir().unwrap();
    let trace = write_trace(dir.path(), "t.csv", 4);
    let store = dir.path().join("store.jsonl");
    let server = serve(&["--store", store.to_str().unwrap()]);

    let out = bin()
        .args(["--server", &server.url, "upload", "--token", TOKEN, "--trace"])
        .arg(&trace)
        .output()
        .unwrap();
    assert!(out.status.success(), "{out:?}");
    assert_eq!(json(&out)["accepted"], 4);

    let out = bin()
        .args(["--server", &server.url, "check", "--trace"])
        .arg(&trace)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "{out:?}");
    let report = json(&out);
    assert_eq!(report["match_count"], 4);
    assert_eq!(report["level"], "medium");
    assert_eq!(report["points_of_contact"].as_array().unwrap().len(), 4);

    let out = bin()
        .args([
            "--server",
            &server.url,
            "check",
            "--mode",
            "shuffled",
            "--client-id",
            "second",
            "--trace",
        ])
        .arg(&trace)
        .output()
        .unwrap();
    let report = json(&out);
    assert!(report["match_count"].as_u64().unwrap() >= 4);
    assert!(report.get("points_of_contact").is_none());

    let stored = std::fs::read_to_string(&store).unwrap();
    assert!(!stored.contains("42.35"), "raw coordinates persisted");
}

#[test]
fn upload_with_wrong_token_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let trace = write_trace(dir.path(), "t.csv", 2);
    let server = serve(&[]);
    let out = bin()
        .args(["--server", &server.url, "upload", "--token", "wrong", "--trace"])
        .arg(&trace)
        .output()
        .unwrap();
    assert_eq!(error_code(&out), "unauthorized");
}

#[test]
fn flags_override_env_override_file() {
    let dir = tempfile::tempdir().unwrap();
    let trace = write_trace(dir.path(), "t.csv", 2);
    let server = serve(&["--region", "nyc"]);
    let config = dir.path().join("c.toml");
    std::fs::write(&config, format!("server_url = \"{}\"\nregion = \"nyc\"\n", server.url)).unwrap();

    let from_file = bin()
        .arg("--config")
        .arg(&config)
        .args(["check", "--trace"])
        .arg(&trace)
        .output()
        .unwrap();
    assert_eq!(from_file.status.code(), Some(0), "{from_file:?}");

    let env_wins = bin()
        .env("CONTACTPSI_CONFIG", &config)
        .env("CONTACTPSI_REGION", "bos")
        .args(["check", "--trace"])
        .arg(&trace)
        .output()
        .unwrap();
    assert_eq!(error_code(&env_wins), "unknown_region");

    let flag_wins = bin()
        .env("CONTACTPSI_CONFIG", &config)
        .env("CONTACTPSI_REGION", "bos")
        .args(["--region", "nyc", "check", "--trace"])
        .arg(&trace)
        .output()
        .unwrap();
    assert_eq!(flag_wins.status.code(), Some(0), "{flag_wins:?}");
}

#[test]
fn operational_errors_are_json_on_stderr() {
    let missing = bin()
        .args(["check", "--trace", "/nonexistent/trace.csv"])
        .output()
        .unwrap();
    assert_eq!(error_code(&missing), "io_error");

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "u,91.0,0.0,5\n").unwrap();
    let out = bin()
        .args(["redact", "infer-home", "--trace"])
        .arg(&bad)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 1"), "{out:?}");

    let unreachable = write_trace(dir.path(), "t.csv", 1);
    let out = bin()
        .args(["--server", "http://127.0.0.1:9", "check", "--trace"])
        .arg(&unreachable)
        .output()
        .unwrap();
    assert_eq!(error_code(&out), "transport");
}

#[test]
fn heatmap_and_flatfile_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let trace = write_trace(dir.path(), "t.csv", 6);
    let server = serve(&["--k-suppress", "1"]);
    let up = bin()
        .args(["--server", &server.url, "upload", "--token", TOKEN, "--trace"])
        .arg(&trace)
        .output()
        .unwrap();
    assert!(up.status.success(), "{up:?}");

    let out = bin()
        .args(["--server", &server.url, "heatmap", "--csv"])
        .output()
        .unwrap();
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("coarse_x,coarse_y,day_idx,count"));
    let total: u64 = lines
        .map(|l| l.rsplit(',').next().unwrap().parse::<u64>().unwrap())
        .sum();
    assert_eq!(total, 6);

    let out = bin()
        .args(["--server", &server.url, "heatmap", "--from", "0", "--to", "1"])
        .output()
        .unwrap();
    assert_eq!(json(&out), serde_json::json!([]));

    let ff = dir.path().join("flat.txt");
    let out = bin()
        .args(["--server", &server.url, "flatfile", "export", "--out"])
        .arg(&ff)
        .output()
        .unwrap();
    assert!(out.status.success(), "{out:?}");
    assert_eq!(std::fs::read_to_string(&ff).unwrap().lines().count(), 6);

    let out = bin()
        .args(["flatfile", "check", "--file"])
        .arg(&ff)
        .arg("--trace")
        .arg(&trace)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(json(&out)["match_count"], 6);

    let from = (now() - 4 * 3600).to_string();
    let to = now().to_string();
    let out = bin()
        .args([
            "flatfile",
            "attack",
            "--bbox",
            "42.349,42.355,-71.061,-71.058",
            "--from",
            &from,
            "--to",
            &to,
            "--file",
        ])
        .arg(&ff)
        .output()
        .unwrap();
    assert!(out.status.success(), "{out:?}");
    let report = json(&out);
    assert_eq!(report["recovered"], 6);
    assert_eq!(report["recovery_fraction"], 1.0);

    let out = bin()
        .args([
            "flatfile",
            "attack",
            "--bbox",
            "42.0,43.0,-72.0,-71.0",
            "--from",
            "0",
            "--to",
            &to,
            "--file",
        ])
        .arg(&ff)
        .output()
        .unwrap();
    assert_eq!(error_code(&out), "budget_exceeded");
}

#[test]
fn sim_outputs_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "--users",
        "12",
        "--carriers",
        "2",
        "--contacts",
        "4",
        "--days",
        "0.2",
        "--seed",
        "5",
    ];
    let gen = |name: &str| {
        let out = dir.path().join(name);
        let ledger = dir.path().join(format!("{name}.json"));
        let o = bin()
            .args(["sim", "generate"])
            .args(args)
            .arg("--out")
            .arg(&out)
            .arg("--ledger")
            .arg(&ledger)
            .output()
            .unwrap();
        assert!(o.status.success(), "{o:?}");
        (std::fs::read(out).unwrap(), std::fs::read(ledger).unwrap())
    };
    let (a, la) = gen("a.csv");
    let (b, lb) = gen("b.csv");
    assert_eq!(a, b);
    assert_eq!(la, lb);
    assert!(a.starts_with(b"user_id,lat,lon,t\n"));

    let run = || {
        bin()
            .args(["sim", "run", "--group", "toy64"])
            .args(args)
            .output()
            .unwrap()
    };
    let (r1, r2) = (run(), run());
    assert!(r1.status.success(), "{r1:?}");
    assert_eq!(r1.stdout, r2.stdout);
    let report = json(&r1);
    assert_eq!(report["all_match"], true);
    assert_eq!(report["seeded_contacts_detected"], 4);
    let timing: Value = serde_json::from_slice(&r1.stderr).unwrap();
    assert!(timing["timing_ms"]["total"].is_u64());
}

#[test]
fn redact_infer_home_prints_zone() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("night.csv");
    let day0 = 1_790_000_000 / 86_400 * 86_400;
    let mut text = String::new();
    for i in 0..12u64 {
        text += &format!("u,42.3600000,-71.0500000,{}\n", day0 + i * 1200);
    }
    text += &format!("u,42.3000000,-71.1000000,{}\n", day0 + 12 * 3600);
    std::fs::write(&path, text).unwrap();
    let out = bin()
        .args(["--pretty", "redact", "infer-home", "--trace"])
        .arg(&path)
        .output()
        .unwrap();
    assert!(out.status.success(), "{out:?}");
    let zone = json(&out);
    assert!((zone["lat"].as_f64().unwrap() - 42.36).abs() < 1e-9);
    assert_eq!(zone["radius_m"], 200.0);
    assert!(String::from_utf8_lossy(&out.stdout).contains("\n  "));
}
