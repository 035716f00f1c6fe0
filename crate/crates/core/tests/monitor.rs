use std::collections::BTreeSet;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use cyberlog::claimdb::{ClaimDb, ClaimStore, HeadInfo, RevisionFetch, StoreError, SubmitReceipt};
use cyberlog::claimlog::{ConsistencyProof, InclusionProof, SignedTreeHead, LOG_OPERATOR};
use cyberlog::engine::{GroundAtom, Value};
use cyberlog::identity::{generate_identity, Identity, TrustStore};
use cyberlog::lang::{parse_atom, parse_rulesheet};
use cyberlog::monitor::{EventEnvelope, Method, Monitor, MonitorConfig};
use cyberlog::revision::{RevisionRecord, RulesheetEntry};
use cyberlog::Digest;

const WORKFLOW: &str = include_str!("fixtures/workflow.cyberlog");

/// Claim database that can be switched off.
struct Flaky {
    db: ClaimDb,
    down: AtomicBool,
}

impl Flaky {
    fn check(&self) -> Result<(), StoreError> {
        if self.down.load(Ordering::SeqCst) {
            Err(StoreError::Unavailable("switched off".into()))
        } else {
            Ok(())
        }
    }
}

impl ClaimStore for Flaky {
    fn submit_revision(&self, r: &RevisionRecord) -> Result<SubmitReceipt, StoreError> {
        self.check()?;
        self.db.submit_revision(r)
    }
    fn get_revision(&self, id: &Digest) -> Result<RevisionFetch, StoreError> {
        self.check()?;
        self.db.get_revision(id)
    }
    fn get_head(&self, owner: &str) -> Result<HeadInfo, StoreError> {
        self.check()?;
        self.db.get_head(owner)
    }
    fn log_root(&self) -> Result<SignedTreeHead, StoreError> {
        self.check()?;
        self.db.log_root()
    }
    fn consistency(&self, a: u64, b: u64) -> Result<ConsistencyProof, StoreError> {
        self.check()?;
        self.db.consistency(a, b)
    }
    fn inclusion(&self, i: u64, n: u64) -> Result<InclusionProof, StoreError> {
        self.check()?;
        self.db.inclusion(i, n)
    }
    fn entry(&self, i: u64) -> Result<Vec<u8>, StoreError> {
        self.check()?;
        self.db.entry(i)
    }
    fn submit_rulesheet(&self, e: &RulesheetEntry) -> Result<u64, StoreError> {
        self.check()?;
        self.db.submit_rulesheet(e)
    }
    fn get_rulesheet(&self, o: &str, h: &Digest) -> Result<RulesheetEntry, StoreError> {
        self.check()?;
        self.db.get_rulesheet(o, h)
    }
}

fn setup(names: &[&str]) -> (Arc<Flaky>, TrustStore, Vec<Identity>) {
    let ids: Vec<Identity> = names
        .iter()
        .enumerate()
        .map(|(i, n)| generate_identity(n, "", "", Some([i as u8 + 10; 32])))
        .collect();
    let op = generate_identity(LOG_OPERATOR, "", "", Some([1; 32]));
    let trust = TrustStore::from_identities(ids.iter().chain([&op]));
    let store = Arc::new(Flaky {
        db: ClaimDb::in_memory(op, trust.clone()),
        down: AtomicBool::new(false),
    });
    (store, trust, ids)
}

fn monitor(store: &Arc<Flaky>, trust: &TrustStore, id: &Identity, rules: &str, config: MonitorConfig) -> Monitor {
    let rs = parse_rulesheet(rules, &id.name).unwrap();
    Monitor::new(id.clone(), rs, trust.clone(), store.clone(), config).unwrap()
}

#[test]
fn post_event_derives_request() {
    let (store, trust, ids) = setup(&["SB"]);
    let mut sb = monitor(&store, &trust, &ids[0], WORKFLOW, MonitorConfig::default());
    let d = sb.ingest_event(&EventEnvelope::post("/servicerequest", r#"{"request_id":7}"#, 5)).unwrap();
    assert!(d.allow);
    assert_eq!(d.facts_added, 2);
    assert_eq!(d.asserted, r#"'SB' attests postRequest('/servicerequest', 5, '{"request_id":7}')"#);
    let expected = GroundAtom::new("SB", "request", vec![Value::Int(7), Value::Str(r#"{"request_id":7}"#.into()), Value::Int(5)]);
    assert!(sb.replica().kb().contains(&expected));
    let answers = sb.handle_query("request(R, D, T)").unwrap();
    assert_eq!(answers.len(), 1);
    assert!(answers[0].evidence_complete);
    assert_eq!(answers[0].bindings["R"], Value::Int(7));
}

#[test]
fn get_event_without_rule_adds_only_the_raw_fact() {
    let (store, trust, ids) = setup(&["SB"]);
    let mut sb = monitor(&store, &trust, &ids[0], WORKFLOW, MonitorConfig::default());
    let ev = EventEnvelope {
        method: Method::Get,
        path: "/servicerequest".into(),
        body: r#"{"request_id":7}"#.into(),
        timestamp: 9,
    };
    assert_eq!(sb.ingest_event(&ev).unwrap().facts_added, 1);
    assert_eq!(sb.replica().kb().len(), 1);
    assert_eq!(sb.handle_query("getRequest(P, T, B)").unwrap().len(), 1);
}

#[test]
fn malformed_envelopes_are_rejected() {
    let (store, trust, ids) = setup(&["SB"]);
    let mut sb = monitor(&store, &trust, &ids[0], WORKFLOW, MonitorConfig::default());
    assert!(sb.ingest_event(&EventEnvelope::post("/x", "", -1)).is_err());
    assert!(sb.ingest_event(&EventEnvelope::post("x", "", 1)).is_err());
    assert!(sb.replica().kb().is_empty());
    let parsed: EventEnvelope = serde_json::from_str(r#"{"method":"PUT","path":"/a","timestamp":3}"#).unwrap();
    assert_eq!(parsed.method, Method::Put);
    assert!(serde_json::from_str::<EventEnvelope>(r#"{"method":"PATCH","path":"/a","timestamp":3}"#).is_err());
}

#[test]
fn metrics_kb_count_matches_query_side_count() {
    let (store, trust, ids) = setup(&["SB"]);
    let mut sb = monitor(&store, &trust, &ids[0], WORKFLOW, MonitorConfig::default());
    for i in 0..5 {
        sb.ingest_event(&EventEnvelope::post("/servicerequest", &format!("{{\"request_id\":{i}}}"), i)).unwrap();
    }
    sb.ingest_event(&EventEnvelope::post("/other", "{}", 9)).unwrap();
    let preds: BTreeSet<(String, String, usize)> = sb
        .replica()
        .kb()
        .claims()
        .map(|c| (c.atom.principal.clone(), c.atom.predicate.clone(), c.atom.args.len()))
        .collect();
    let counted: usize = preds
        .iter()
        .map(|(p, pred, n)| {
            let vars: Vec<String> = (0..*n).map(|i| format!("X{i}")).collect();
            let pattern = format!("'{p}' attests {pred}({})", vars.join(", "));
            sb.query(&parse_atom(&pattern, "SB").unwrap()).unwrap().len()
        })
        .sum();
    let m = sb.metrics();
    assert_eq!(m.kb_facts, counted);
    assert_eq!(m.kb_facts, 11);
    assert_eq!(m.events, 6);
    assert!(m.delay_min_ms <= m.delay_avg_ms && m.delay_avg_ms <= m.delay_max_ms);
    assert_eq!(m.facts_added_max, 2);
}

#[test]
fn unreachable_store_skips_the_poll_cycle() {
    let (store, trust, ids) = setup(&["A", "D"]);
    let rules = "fact(X) :- postRequest('/in', T, D), get_param_int(D, 'x', X).\n";
    let mut a = monitor(&store, &trust, &ids[0], rules, MonitorConfig::default());
    let config = MonitorConfig {
        watched_owners: vec!["A".into(), "B".into()],
        ..MonitorConfig::default()
    };
    let mut d = monitor(&store, &trust, &ids[1], "seen(X) :- 'A' attests fact(X).\n", config);
    a.ingest_event(&EventEnvelope::post("/in", r#"{"x":1}"#, 1)).unwrap();
    a.commit(1000).unwrap();

    store.down.store(true, Ordering::SeqCst);
    let res = d.poll_and_include();
    assert_eq!(res.len(), 1);
    assert!(res[0].1.is_err());
    assert!(d.replica().kb().is_empty());
    assert!(a.commit(2000).is_err());
    assert_eq!(a.replica().commits(), 1);

    store.down.store(false, Ordering::SeqCst);
    d.poll_and_include();
    assert_eq!(d.handle_query("seen(X)").unwrap().len(), 1);
    let m = d.metrics();
    assert_eq!((m.polls, m.poll_errors), (2, 1));
}

#[test]
fn authorization_predicate_gates_events() {
    let (store, trust, ids) = setup(&["G"]);
    let rules = "allowed(T) :- postRequest('/open', T, D).\n";
    let config = MonitorConfig {
        authorize_predicate: Some("allowed".into()),
        ..MonitorConfig::default()
    };
    let mut g = monitor(&store, &trust, &ids[0], rules, config);
    assert!(!g.ingest_event(&EventEnvelope::post("/closed", "", 1)).unwrap().allow);
    assert!(g.ingest_event(&EventEnvelope::post("/open", "", 2)).unwrap().allow);
}

#[test]
fn builtin_query_is_refused() {
    let (store, trust, ids) = setup(&["SB"]);
    let sb = monitor(&store, &trust, &ids[0], WORKFLOW, MonitorConfig::default());
    assert!(sb.handle_query("get_param_int(D, 'k', X)").is_err());
    assert!(sb.handle_query("request(R, D").is_err());
}
