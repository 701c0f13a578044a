mod common;

use std::path::Path;
use std::process::{Command, Output};
use std::time::Duration;

use axum::http::StatusCode;
use discourse_core::store::Store;
use serde_json::{json, Value};

use common::*;

struct Workspace {
    _dir: tempfile::TempDir,
    config: std::path::PathBuf,
    root: std::path::PathBuf,
}

fn workspace() -> Workspace {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let config = root.join("discourse.toml");
    std::fs::write(&config, config_toml(&root.join("db"))).unwrap();
    Workspace { _dir: dir, config, root }
}

fn discourse(ws: &Workspace, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_discourse"))
        .arg("--config")
        .arg(&ws.config)
        .args(args)
        .env_remove("RUST_LOG")
        .output()
        .unwrap()
}

fn ok(ws: &Workspace, args: &[&str]) -> String {
    let out = discourse(ws, args);
    assert!(
        out.status.success(),
        "{args:?} exited {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn six_calls_reproduce_accuracy_oracle() {
    let ws = workspace();
    let report = ws.root.join("accuracy.csv");
    let speeches = fixtures().join("speeches");
    let decisions = fixtures().join("decisions.jsonl");
    ok(&ws, &["ingest", path(&speeches)]);
    ok(&ws, &["translate", "all", "--provider", "identity"]);
    ok(&ws, &["annotate", "all", "--tasks", "all", "--provider", "stub"]);
    ok(&ws, &["review", "apply", path(&decisions)]);
    ok(&ws, &["finalize", "all"]);
    ok(&ws, &["report", "accuracy", "--selector", "all", "--out", path(&report)]);
    let want = std::fs::read_to_string(fixtures().join("oracle/accuracy.csv")).unwrap();
    assert_eq!(std::fs::read_to_string(&report).unwrap(), want);

    // The report also streams to stdout, and as JSON.
    assert_eq!(ok(&ws, &["report", "accuracy"]), want);
    let json: Value = serde_json::from_str(&ok(&ws, &["report", "accuracy", "--format", "json"])).unwrap();
    assert_eq!(json["rows"].as_array().unwrap().len(), 5);

    // viz output satisfies the published schema.
    let chart_path = ws.root.join("speedometer.json");
    ok(&ws, &["viz", "speedometer", "--selector", "all", "--out", path(&chart_path)]);
    let chart = read_json(&chart_path);
    validate_chart("speedometer", &chart);
    let oracle = read_json(&fixtures().join("oracle/summaries.json"));
    let want = oracle["groups"]["all"]["mean_sentiment"].as_f64().unwrap();
    assert!((chart["payload"]["value"].as_f64().unwrap() - want).abs() < 1e-12);

    // Regenerating is byte-identical.
    let again = ws.root.join("speedometer2.json");
    ok(&ws, &["viz", "speedometer", "--selector", "all", "--out", path(&again)]);
    assert_eq!(std::fs::read(&chart_path).unwrap(), std::fs::read(&again).unwrap());

    let status: Value = serde_json::from_str(&ok(&ws, &["review", "status", "s001"])).unwrap();
    assert_eq!(status["latest_version"], 1);
}

#[test]
fn unknown_speech_exits_2_with_envelope() {
    let ws = workspace();
    ok(&ws, &["ingest", path(&fixtures().join("speeches"))]);
    for args in [&["finalize", "s999"][..], &["annotate", "s999", "--tasks", "stance"], &["translate", "s999"]] {
        let out = discourse(&ws, args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert!(out.stdout.is_empty());
        let env: Value = serde_json::from_slice(&out.stderr).unwrap();
        assert_eq!(env["code"], "not_found");
        assert_eq!(env["details"], json!({ "kind": "speech", "id": "s999" }));
        assert!(env["message"].as_str().unwrap().contains("s999"));
    }
}

#[test]
fn other_failures_have_distinct_exit_codes() {
    let ws = workspace();
    let speeches = fixtures().join("speeches");
    ok(&ws, &["ingest", path(&speeches)]);

    let out = discourse(&ws, &["ingest", path(&speeches)]);
    assert_eq!(out.status.code(), Some(4));
    let env: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(env["code"], "conflict");

    let out = discourse(&ws, &["report", "accuracy", "--selector", "everything"]);
    assert_eq!(out.status.code(), Some(3));

    // A job that fails reports its own envelope.
    let out = discourse(&ws, &["annotate", "s001", "--tasks", "stance,topic"]);
    assert_eq!(out.status.code(), Some(3));
    let env: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert!(env["message"].as_str().unwrap().contains("no translation"), "{env}");
    let stdout: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(stdout["jobs"][0]["status"], "failed");

    ok(&ws, &["translate", "s001"]);
    ok(&ws, &["annotate", "s001", "--tasks", "stance,topic"]);
    let out = discourse(&ws, &["finalize", "s001"]);
    assert_eq!(out.status.code(), Some(5));
    let env: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(env["code"], "finalization_incomplete");
    assert!(!env["details"]["pending"].as_array().unwrap().is_empty());

    let bad = ws.root.join("bad.toml");
    std::fs::write(&bad, "[store]\nroot = 'x'\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_discourse")).arg("--config").arg(&bad).args(["list"]).output().unwrap();
    assert_eq!(out.status.code(), Some(3));
}

/// Drives the HTTP API with the same inputs as a CLI run and compares the
/// stored records for one speech.
#[tokio::test(flavor = "multi_thread")]
async fn cli_and_api_store_identical_state() {
    let ws = workspace();
    let speeches = fixtures().join("speeches");
    let decisions: Vec<Value> = std::fs::read_to_string(fixtures().join("decisions.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str::<Value>(l).unwrap())
        .filter(|d| d["speech_id"] == "s003")
        .collect();
    let subset = ws.root.join("s003.jsonl");
    std::fs::write(&subset, decisions.iter().map(|d| format!("{d}\n")).collect::<String>()).unwrap();

    let subset_arg = subset.clone();
    let ws = tokio::task::spawn_blocking(move || {
        ok(&ws, &["ingest", path(&speeches)]);
        ok(&ws, &["translate", "s003"]);
        ok(&ws, &["annotate", "s003", "--tasks", "all"]);
        ok(&ws, &["review", "apply", path(&subset_arg)]);
        ok(&ws, &["finalize", "s003"]);
        ws
    })
    .await
    .unwrap();
    let cli = Store::open(ws.root.join("db")).unwrap();

    let api_dir = tempfile::tempdir().unwrap();
    let p = pipeline_on(Store::open(api_dir.path()).unwrap());
    let app = app(p.clone());
    for l in read_json(&fixtures().join("speeches/leaders.json")).as_array().unwrap() {
        assert_eq!(post(&app, "/v1/leaders", l.clone()).await.status, StatusCode::CREATED);
    }
    for r in read_json(&fixtures().join("speeches/reviewers.json")).as_array().unwrap() {
        assert_eq!(post(&app, "/v1/reviewers", r.clone()).await.status, StatusCode::CREATED);
    }
    for m in read_json(&fixtures().join("speeches/manifest.json")).as_array().unwrap() {
        let mut body = m.clone();
        let id = m["id"].as_str().unwrap();
        body["text"] = json!(std::fs::read_to_string(fixtures().join(format!("speeches/{id}.txt"))).unwrap());
        let resp = post(&app, "/v1/speeches", body).await;
        assert_eq!(resp.status, StatusCode::CREATED, "{}", resp.text);
    }
    for (uri, body) in [
        ("/v1/speeches/s003/translate", json!({})),
        ("/v1/speeches/s003/annotate", json!({ "tasks": ["stance", "topic", "sentiment", "polarization", "populism", "ner"] })),
    ] {
        let job = post(&app, uri, body).await.json();
        let id = job["job_id"].as_str().unwrap().to_string();
        loop {
            let j = get(&app, &format!("/v1/jobs/{id}")).await.json();
            if j["status"] == "complete" {
                break;
            }
            assert!(["pending", "running"].contains(&j["status"].as_str().unwrap()), "{j}");
            tokio::time::sleep(Duration::from_millis(10)).await;
        }
    }
    for d in &decisions {
        let resp = post(&app, "/v1/reviews", d.clone()).await;
        assert_eq!(resp.status, StatusCode::CREATED, "{}", resp.text);
    }
    assert_eq!(post(&app, "/v1/speeches/s003/finalize", json!({})).await.status, StatusCode::CREATED);

    let api = p.store();
    assert_eq!(api.leaders(), cli.leaders());
    assert_eq!(api.reviewers(), cli.reviewers());
    assert_eq!(api.get_speech("s003").unwrap(), cli.get_speech("s003").unwrap());
    assert_eq!(api.annotations("s003", None), cli.annotations("s003", None));
    assert_eq!(api.queue("s003"), cli.queue("s003"));
    assert_eq!(api.decisions("s003"), cli.decisions("s003"));
    assert_eq!(api.latest_validated("s003"), cli.latest_validated("s003"));
}

fn http_get(port: u16, path: &str, token: Option<&str>) -> Option<String> {
    use std::io::{Read, Write};
    let mut stream = std::net::TcpStream::connect(("127.0.0.1", port)).ok()?;
    let auth = token.map(|t| format!("Authorization: Bearer {t}\r\n")).unwrap_or_default();
    write!(stream, "GET {path} HTTP/1.1\r\nHost: localhost\r\n{auth}Connection: close\r\n\r\n").ok()?;
    let mut out = String::new();
    stream.read_to_string(&mut out).ok()?;
    Some(out)
}

#[test]
fn serve_requires_token_and_answers_requests() {
    let ws = workspace();
    let out = Command::new(env!("CARGO_BIN_EXE_discourse"))
        .arg("--config")
        .arg(&ws.config)
        .arg("serve")
        .env_remove("DISCOURSE_API_TOKEN")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
    let env: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert!(env["message"].as_str().unwrap().contains("DISCOURSE_API_TOKEN"));

    // A job left running by a killed process is failed on startup.
    ok(&ws, &["ingest", path(&fixtures().join("speeches"))]);
    {
        let store = Store::open(ws.root.join("db")).unwrap();
        let now = NOW.parse().unwrap();
        let job = discourse_core::jobs::JobDescriptor::new(
            String::new(),
            discourse_core::jobs::JobKind::Annotate,
            "s001".into(),
            Default::default(),
            now,
        );
        store.create_job(job, true).unwrap();
    }

    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let mut child = Command::new(env!("CARGO_BIN_EXE_discourse"))
        .arg("--config")
        .arg(&ws.config)
        .args(["serve", "--bind", &format!("127.0.0.1:{port}")])
        .env("DISCOURSE_API_TOKEN", "secret")
        .env("RUST_LOG", "off")
        .spawn()
        .unwrap();
    let mut health = None;
    for _ in 0..200 {
        health = http_get(port, "/v1/health", None);
        if health.is_some() {
            break;
        }
        std::thread::sleep(Duration::from_millis(25));
    }
    let unauthorized = http_get(port, "/v1/jobs", None);
    let jobs = http_get(port, "/v1/jobs", Some("secret"));
    child.kill().unwrap();
    child.wait().unwrap();

    assert!(health.expect("server came up").starts_with("HTTP/1.1 200"));
    assert!(unauthorized.unwrap().starts_with("HTTP/1.1 401"));
    let jobs = jobs.unwrap();
    assert!(jobs.starts_with("HTTP/1.1 200"), "{jobs}");
    let body: Value = serde_json::from_str(jobs.split("\r\n\r\n").nth(1).unwrap()).unwrap();
    assert_eq!(body[0]["status"], "failed");
    assert!(body[0]["error"]["message"].as_str().unwrap().contains("interrupted"));
}
