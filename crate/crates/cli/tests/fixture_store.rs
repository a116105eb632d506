//! The shipped store is reproducible: recording the scripted responses,
//! directly or over HTTP, yields the same files byte for byte.
//!
//! `HYPERTYPE_REGEN=1 cargo test -p hypertype-cli --test fixture_store`
//! rewrites the shipped store after the script changes.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;
use std::thread;

use hypertype::alignment::EmbeddingTable;
use hypertype::backend::{BackendRequest, RequestKind, Script, ScriptedTransport, Transport};

use common::*;

/// Flag sets whose requests the shipped store must cover.
const VARIANTS: [&[&str]; 4] = [&[], &["--no-headword"], &["--no-ensemble"], &["--no-ensemble", "--no-headword"]];

const GOVERNOR: &str = "Governor Arnold Schwarzenegger gives a speech at Mission Serve's service project on Veterans Day 2010.";

fn record_args(dir: &Path, source: &[&str], extra: &[&str]) -> Vec<String> {
    let mut args = vec!["record".to_string()];
    let mut cfg = config_args();
    let last = cfg.len() - 1;
    cfg[last] = dir.display().to_string();
    args.extend(cfg);
    args.extend(source.iter().map(|s| s.to_string()));
    args.extend(extra.iter().map(|s| s.to_string()));
    args.push(example_file("dataset.jsonl"));
    args
}

fn script_source() -> Vec<String> {
    vec![
        "--source".into(),
        "script".into(),
        "--script".into(),
        example_file("script.json"),
        "--embeddings".into(),
        example_file("embeddings.txt"),
    ]
}

fn record_all(dir: &Path, source: &[String]) {
    let source: Vec<&str> = source.iter().map(String::as_str).collect();
    for extra in VARIANTS {
        let o = cli(&record_args(dir, &source, extra));
        assert_eq!(o.code, 0, "record {extra:?}: {}", o.stderr);
    }
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().into_string().unwrap(), fs::read(e.path()).unwrap())
        })
        .collect()
}

fn type_with_store(dir: &Path) -> Outcome {
    let mut args = vec!["type".to_string()];
    let mut cfg = config_args();
    let last = cfg.len() - 1;
    cfg[last] = dir.display().to_string();
    args.extend(cfg);
    args.push(example_file("dataset.jsonl"));
    cli(&args)
}

#[test]
fn shipped_store_matches_a_fresh_recording() {
    let shipped = worked_example().join("store");
    if std::env::var_os("HYPERTYPE_REGEN").is_some() {
        if shipped.exists() {
            fs::remove_dir_all(&shipped).unwrap();
        }
        record_all(&shipped, &script_source());
    }
    let dir = tempfile::tempdir().unwrap();
    record_all(dir.path(), &script_source());
    let fresh = snapshot(dir.path());
    let expected = snapshot(&shipped);
    assert_eq!(
        fresh.keys().collect::<Vec<_>>(),
        expected.keys().collect::<Vec<_>>(),
        "fixture names differ; rerun with HYPERTYPE_REGEN=1"
    );
    assert!(fresh == expected, "fixture contents differ; rerun with HYPERTYPE_REGEN=1");
}

#[test]
fn recording_is_idempotent_and_replays() {
    let dir = tempfile::tempdir().unwrap();
    record_all(dir.path(), &script_source());
    let once = snapshot(dir.path());
    record_all(dir.path(), &script_source());
    assert_eq!(once, snapshot(dir.path()));
    assert!(once.keys().all(|k| k.len() == 64 + 5 && k.ends_with(".json")));

    let replay = type_with_store(dir.path());
    assert_eq!(replay.code, 0, "{}", replay.stderr);
    assert_eq!(replay.stdout, type_example(&[]).stdout);
}

#[test]
fn deleting_one_fixture_fails_only_that_mention() {
    let dir = tempfile::tempdir().unwrap();
    for (name, bytes) in snapshot(&worked_example().join("store")) {
        fs::write(dir.path().join(name), bytes).unwrap();
    }
    let victim = BackendRequest::Entail {
        premise: GOVERNOR.into(),
        hypothesis: "In this sentence, Governor Arnold Schwarzenegger is a political figure.".into(),
    };
    fs::remove_file(dir.path().join(format!("{}.json", victim.fixture_key()))).unwrap();

    let o = type_with_store(dir.path());
    assert_eq!(o.code, 3);
    assert_eq!(decision_paths(&o.stdout), ["/location/building/stadium", "/person/athlete"]);
    let diagnostics: Vec<&str> = o.stderr.lines().filter(|l| l.contains("mention [0, 30)")).collect();
    assert_eq!(diagnostics.len(), 1, "{}", o.stderr);
    assert!(diagnostics[0].contains(&victim.fixture_key()));
}

/// Serves a transport over the wire protocol until the process exits.
fn serve(transport: Arc<dyn Transport>) -> String {
    let server = tiny_http::Server::http("127.0.0.1:0").unwrap();
    let url = format!("http://{}", server.server_addr().to_ip().unwrap());
    thread::spawn(move || {
        for mut request in server.incoming_requests() {
            let kind = match request.url() {
                "/fill_mask" => Some(RequestKind::FillMask),
                "/entail" => Some(RequestKind::Entail),
                "/embed" => Some(RequestKind::Embed),
                "/head_word" => Some(RequestKind::HeadWord),
                _ => None,
            };
            let mut body = String::new();
            request.as_reader().read_to_string(&mut body).unwrap();
            let parsed = kind.and_then(|k| {
                let payload = serde_json::from_str(&body).ok()?;
                BackendRequest::from_payload(k, payload).ok()
            });
            let response = match parsed.map(|r| transport.call(&r)) {
                Some(Ok(bytes)) => tiny_http::Response::from_data(bytes),
                Some(Err(e)) => tiny_http::Response::from_string(e.to_string()).with_status_code(500),
                None => tiny_http::Response::from_string("bad request").with_status_code(400),
            };
            let _ = request.respond(response);
        }
    });
    url
}

#[test]
fn recording_over_http_matches_the_shipped_store() {
    let script: Script = serde_json::from_str(&fs::read_to_string(example_file("script.json")).unwrap()).unwrap();
    let table = EmbeddingTable::parse(&fs::read_to_string(example_file("embeddings.txt")).unwrap()).unwrap();
    let url = serve(Arc::new(ScriptedTransport::new(script, Some(table))));

    let dir = tempfile::tempdir().unwrap();
    record_all(dir.path(), &["--backend-url".to_string(), url.clone()]);
    assert_eq!(snapshot(dir.path()), snapshot(&worked_example().join("store")));

    let mut args = vec!["type".to_string()];
    args.extend(config_args()[..6].iter().cloned());
    args.extend(["--backend".into(), "remote".into(), "--backend-url".into(), url]);
    args.push(example_file("dataset.jsonl"));
    let live = cli(&args);
    assert_eq!(live.code, 0, "{}", live.stderr);
    assert_eq!(live.stdout, type_example(&[]).stdout);
}
