use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::{Arc, Mutex};

use cyberlog::claimdb::{ClaimDb, ClaimStore, StoreError};
use cyberlog::claimlog::{leaf_hash, verify_inclusion, LOG_OPERATOR};
use cyberlog::harness::{MonitorDriver, Scenario};
use cyberlog::identity::{generate_identity, TrustStore};
use cyberlog::lang::parse_rulesheet;
use cyberlog::monitor::{EventEnvelope, Monitor, MonitorConfig};
use cyberlog::revision::Replica;
use cyberlog::Digest;
use cyberlog_cli::client::{HttpClaimStore, HttpMonitor};
use cyberlog_cli::commands::{cmd_query, cmd_verify_log, run_scenario, HttpDeployment, Mode, StoreArgs};
use cyberlog_cli::server::{db_router, monitor_router, spawn};

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cyberlog")).args(args).output().unwrap()
}

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn workflow() -> String {
    root().join("crates/core/tests/fixtures/workflow.cyberlog").to_string_lossy().into()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into()
}

#[test]
fn check_and_parse_accept_the_workflow() {
    let out = bin(&["check", &workflow()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let out = bin(&["parse", &workflow(), "--self", "DOM"]);
    assert_eq!(out.status.code(), Some(0));
    let ast: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(ast["self_id"], "DOM");
}

#[test]
fn unsafe_and_malformed_rulesheets_fail() {
    let dir = tempfile::tempdir().unwrap();
    let unsafe_rule = write(dir.path(), "u.cyberlog", "p(X, Y) :- q(X).\n");
    assert_eq!(bin(&["check", &unsafe_rule, "--self", "A"]).status.code(), Some(1));
    let broken = write(dir.path(), "b.cyberlog", "p(X :- q(X).\n");
    assert_eq!(bin(&["parse", &broken, "--self", "A"]).status.code(), Some(1));
    assert_eq!(bin(&["check", "/nonexistent.cyberlog"]).status.code(), Some(2));
}

#[test]
fn fmt_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let once = bin(&["fmt", &workflow()]).stdout;
    let copy = write(dir.path(), "dom.cyberlog", &String::from_utf8(once.clone()).unwrap());
    assert_eq!(bin(&["fmt", &copy, "--write"]).status.code(), Some(0));
    assert_eq!(std::fs::read(&copy).unwrap(), once);
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(bin(&["audit", "--db", "/tmp/x.log", "SB"]).status.code(), Some(2));
    assert_eq!(bin(&["run-scenario", "/nonexistent.jsonl"]).status.code(), Some(2));
    assert_eq!(bin(&["bogus"]).status.code(), Some(2));
}

#[test]
fn http_mode_meets_expectations_and_matches_local() {
    let path = root().join("scenarios/delayed_rtf.jsonl");
    let (http, head_http, _) = run_scenario(&path, Mode::Http, None).unwrap();
    assert!(http.ok(), "{}", http.render());
    let (_, head_local, _) = run_scenario(&path, Mode::Local, None).unwrap();
    assert_eq!(head_http.root_hash, head_local.root_hash);
    assert_eq!(head_http.tree_size, head_local.tree_size);
}

#[test]
fn binary_runs_scenario_then_audits_and_verifies() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_string_lossy().to_string();
    let scenario = root().join("scenarios/rtaphm_booking.jsonl");
    let run = bin(&["run-scenario", scenario.to_str().unwrap(), "--mode", "http", "--out-dir", &out]);
    assert_eq!(run.status.code(), Some(0), "{}", String::from_utf8_lossy(&run.stdout));
    for f in ["claims.log", "trust.json", "operator.key", "heads.json", "report.json", "keys/DOM.key"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let log = dir.path().join("claims.log").to_string_lossy().to_string();
    let audit = bin(&["audit", "--db", &log, "DOM", "good_rtf_exists(7, 3)"]);
    let text = String::from_utf8_lossy(&audit.stdout);
    assert_eq!(audit.status.code(), Some(0), "{text}");
    assert!(text.contains("direct_assertion") && text.contains("log_inclusion"), "{text}");
    let missing = bin(&["audit", "--db", &log, "DOM", "good_rtf_exists(8, 3)"]);
    assert_eq!(missing.status.code(), Some(1));
    let heads = dir.path().join("heads.json").to_string_lossy().to_string();
    assert_eq!(bin(&["verify-log", "--db", &log, "--heads", &heads]).status.code(), Some(0));
}

#[test]
fn verify_log_appends_the_grown_head() {
    let dir = tempfile::tempdir().unwrap();
    run_scenario(&root().join("scenarios/rtaphm_booking.jsonl"), Mode::Local, Some(dir.path())).unwrap();
    let heads = dir.path().join("heads.json");
    let args = StoreArgs {
        db: dir.path().join("claims.log").to_string_lossy().into(),
        trust: None,
        operator_key: None,
    };
    let trust = args.trust().unwrap();
    {
        let scn = Scenario::load(root().join("scenarios/rtaphm_booking.jsonl")).unwrap();
        let db = ClaimDb::open(dir.path().join("claims.log"), scn.operator(), trust.clone()).unwrap();
        let sb = scn.identities().unwrap().into_iter().find(|i| i.name == "SB").unwrap();
        let mut r = Replica::new(sb, scn.rulesheet("SB").unwrap(), trust.clone(), Arc::new(db)).unwrap();
        r.commit(99_000).unwrap();
    }
    let mut out = Vec::new();
    assert_eq!(cmd_verify_log(&args, &heads, &mut out).unwrap(), 0, "{}", String::from_utf8_lossy(&out));
    let cached: Vec<serde_json::Value> = serde_json::from_str(&std::fs::read_to_string(&heads).unwrap()).unwrap();
    assert_eq!(cached.len(), 2);
    assert!(cached[1]["tree_size"].as_u64() > cached[0]["tree_size"].as_u64());
    std::fs::write(&heads, "[]").unwrap();
    assert!(cmd_verify_log(&args, &heads, &mut Vec::new()).is_err());
}

fn served_db() -> (cyberlog_cli::server::Background, TrustStore, Vec<cyberlog::identity::Identity>) {
    let ids = vec![
        generate_identity("A", "", "", Some([1; 32])),
        generate_identity("B", "", "", Some([2; 32])),
    ];
    let op = generate_identity(LOG_OPERATOR, "", "", Some([9; 32]));
    let trust = TrustStore::from_identities(ids.iter().chain([&op]));
    let db = ClaimDb::in_memory(op, trust.clone());
    (spawn(db_router(Arc::new(db), true), "127.0.0.1:0").unwrap(), trust, ids)
}

const PRODUCER: &str = "fact(X) :- postRequest('/in', T, D), get_param_int(D, 'x', X).\n";

#[test]
fn claim_store_round_trips_over_http() {
    let (srv, trust, ids) = served_db();
    let store = Arc::new(HttpClaimStore::new(&srv.url()));
    assert!(store.health());
    assert!(matches!(store.get_head("A"), Err(StoreError::NotFound(_))));
    store.set_time(1234).unwrap();

    let rs = parse_rulesheet(PRODUCER, "A").unwrap();
    let hash = rs.source_hash;
    let mut m = Monitor::new(ids[0].clone(), rs, trust.clone(), store.clone(), MonitorConfig::default()).unwrap();
    m.ingest_event(&EventEnvelope::post("/in", "{\"x\":4}", 10)).unwrap();
    let rev = m.commit(1000).unwrap();

    let head = store.get_head("A").unwrap();
    assert_eq!(head.revision_id, rev.id);
    let fetched = store.get_revision(&rev.id).unwrap();
    assert_eq!(fetched.record, rev);
    let root = store.log_root().unwrap();
    assert_eq!(root.timestamp, 1234);
    let proof = store.inclusion(fetched.leaf_index, root.tree_size).unwrap();
    let leaf = leaf_hash(&store.entry(fetched.leaf_index).unwrap());
    assert!(verify_inclusion(&root.root_hash, &leaf, &proof));
    assert_eq!(store.get_rulesheet("A", &hash).unwrap().text, cyberlog::lang::format_rulesheet(&parse_rulesheet(PRODUCER, "A").unwrap()));
    assert!(matches!(store.get_rulesheet("B", &hash), Err(StoreError::NotFound(_))));
    assert!(matches!(store.get_revision(&Digest::of(b"x")), Err(StoreError::NotFound(_))));

    let mut again = Replica::new(ids[0].clone(), parse_rulesheet(PRODUCER, "A").unwrap(), trust, store.clone()).unwrap();
    let mut stale = again.staging().clone();
    stale.base = None;
    let err = store
        .submit_revision(&cyberlog::revision::RevisionRecord::sign(
            cyberlog::revision::RevisionBody {
                owner: "A".into(),
                supersedes: stale.base,
                includes: vec![],
                rulesheet_hash: hash,
                commit_time: 2000,
                claims: vec![],
            },
            &ids[0],
        )
        .unwrap())
        .unwrap_err();
    assert_eq!(err.status(), 409, "{err}");
    again.commit(3000).unwrap();

    let resp = ureq::get(&format!("{}/revisions/nothex", srv.url())).call();
    assert!(matches!(resp, Err(ureq::Error::StatusCode(400))));
}

#[test]
fn monitor_service_ingests_queries_and_reports_metrics() {
    let (srv, trust, ids) = served_db();
    let store = Arc::new(HttpClaimStore::new(&srv.url()));
    let m = Monitor::new(ids[0].clone(), parse_rulesheet(PRODUCER, "A").unwrap(), trust, store, MonitorConfig::default()).unwrap();
    let msrv = spawn(monitor_router(Arc::new(Mutex::new(m))), "127.0.0.1:0").unwrap();
    let mut client = HttpMonitor::new("A", &msrv.url());
    client.ingest(&EventEnvelope::post("/in", "{\"x\":4}", 10)).unwrap();
    client.ingest(&EventEnvelope::post("/in", "{\"x\":5}", 11)).unwrap();
    assert_eq!(client.count("fact(X)").unwrap(), 2);
    assert_eq!(client.count("fact(5)").unwrap(), 1);
    assert!(client.count("get_param_int(D, 'x', X)").is_err());
    assert!(client.ingest(&EventEnvelope::post("nopath", "{}", 12)).is_err());
    let mut out = Vec::new();
    assert_eq!(cmd_query(&msrv.url(), "fact(X)", &mut out).unwrap(), 0);
    let text = String::from_utf8_lossy(&out);
    assert!(text.contains("{X = 4}") && text.contains("2 answers"), "{text}");
    client.commit(1000).unwrap();
    client.poll().unwrap();
    assert_eq!(client.count("fact(X)").unwrap(), 0);
    let metrics = client.metrics().unwrap();
    assert_eq!(metrics.events, 2);
    assert_eq!(metrics.commits, 1);
    assert_eq!(metrics.head_claims, 4);
}

#[test]
fn http_deployment_exposes_the_store() {
    let scn = Scenario::load(root().join("scenarios/rtaphm_booking.jsonl")).unwrap();
    let mut dep = HttpDeployment::new(&scn, None).unwrap();
    dep.runner.run_until(2500);
    let head = dep.store().get_head("DOM").unwrap();
    assert!(head.chain_length >= 2);
    assert_eq!(dep.runner.driver_mut("DOM").unwrap().count("good_rtf_exists(7, 3)").unwrap(), 1);
}
