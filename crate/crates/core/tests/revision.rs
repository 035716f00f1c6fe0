use std::collections::BTreeSet;
use std::sync::Arc;

use cyberlog::claimdb::{ClaimDb, ClaimStore, HeadInfo, RevisionFetch, StoreError, SubmitReceipt};
use cyberlog::claimlog::{ConsistencyProof, InclusionProof, SignedTreeHead, LOG_OPERATOR};
use cyberlog::engine::{Claim, GroundAtom, Value};
use cyberlog::identity::{generate_identity, Identity, TrustStore};
use cyberlog::lang::parse_rulesheet;
use cyberlog::monitor::{EventEnvelope, Monitor, MonitorConfig};
use cyberlog::revision::{Replica, RevisionBody, RevisionError, RevisionRecord, RulesheetEntry, SyncOutcome};
use cyberlog::Digest;

struct World {
    db: Arc<ClaimDb>,
    trust: TrustStore,
    ids: Vec<Identity>,
}

impl World {
    fn new(names: &[&str]) -> Self {
        let ids: Vec<Identity> = names
            .iter()
            .enumerate()
            .map(|(i, n)| generate_identity(n, "", "", Some([i as u8 + 1; 32])))
            .collect();
        let op = generate_identity(LOG_OPERATOR, "", "", Some([99; 32]));
        let trust = TrustStore::from_identities(ids.iter().chain([&op]));
        let db = Arc::new(ClaimDb::in_memory(op, trust.clone()));
        World { db, trust, ids }
    }

    fn id(&self, name: &str) -> Identity {
        self.ids.iter().find(|i| i.name == name).unwrap().clone()
    }

    fn replica(&self, name: &str, rules: &str) -> Replica {
        let rs = parse_rulesheet(rules, name).unwrap();
        Replica::new(self.id(name), rs, self.trust.clone(), self.db.clone()).unwrap()
    }

    fn monitor(&self, name: &str, rules: &str, watch: &[&str]) -> Monitor {
        let rs = parse_rulesheet(rules, name).unwrap();
        let config = MonitorConfig {
            watched_owners: watch.iter().map(|s| s.to_string()).collect(),
            ..MonitorConfig::default()
        };
        Monitor::new(self.id(name), rs, self.trust.clone(), self.db.clone(), config).unwrap()
    }
}

fn atom(p: &str, pred: &str, args: Vec<Value>) -> GroundAtom {
    GroundAtom::new(p, pred, args)
}

fn atoms(r: &RevisionRecord) -> BTreeSet<String> {
    r.body.claims.iter().map(|c| c.atom.to_string()).collect()
}

const COUNTER: &str = "next counter(N1) :- counter(N), N1 == N + 1.\n";

#[test]
fn dedalus_counter_reaches_k_after_k_commits() {
    let w = World::new(&["C"]);
    let mut r = w.replica("C", COUNTER);
    r.assert_claim(Claim::asserted(&w.id("C"), atom("C", "counter", vec![0.into()])).unwrap()).unwrap();
    let r0 = r.commit(0).unwrap();
    assert_eq!(atoms(&r0), BTreeSet::from(["'C' attests counter(0)".to_string()]));
    for k in 1..=12i64 {
        let rk = r.commit(k * 1000).unwrap();
        let expected = atom("C", "counter", vec![k.into()]);
        assert_eq!(rk.body.claims.len(), 1);
        assert_eq!(rk.body.claims[0].atom, expected);
        assert_eq!(rk.body.claims[0].evidence.kind_name(), "carried_by_next_rule");
    }
}

#[test]
fn commits_form_a_chain_matching_the_head() {
    let w = World::new(&["C"]);
    let mut r = w.replica("C", COUNTER);
    r.assert_claim(Claim::asserted(&w.id("C"), atom("C", "counter", vec![0.into()])).unwrap()).unwrap();
    let ids: Vec<Digest> = (0..6).map(|t| r.commit(t).unwrap().id).collect();
    let head = w.db.get_head("C").unwrap();
    assert_eq!(head.revision_id, *ids.last().unwrap());
    assert_eq!(head.chain_length, 6);

    let mut walked = Vec::new();
    let mut cursor = Some(head.revision_id);
    while let Some(id) = cursor {
        let fetch = w.db.get_revision(&id).unwrap();
        walked.push(id);
        cursor = fetch.record.body.supersedes;
    }
    walked.reverse();
    assert_eq!(walked, ids);
}

#[test]
fn replica_resumes_from_existing_head() {
    let w = World::new(&["C"]);
    let mut r = w.replica("C", COUNTER);
    r.assert_claim(Claim::asserted(&w.id("C"), atom("C", "counter", vec![0.into()])).unwrap()).unwrap();
    let last = r.commit(0).unwrap();
    let mut again = w.replica("C", COUNTER);
    assert_eq!(again.staging().base, Some(last.id));
    let next = again.commit(1).unwrap();
    assert_eq!(next.body.supersedes, Some(last.id));
}

const PRODUCER: &str = "fact(X) :- postRequest('/in', T, D), get_param_int(D, 'x', X).\n";
const CONSUMER: &str = "both(X) :- 'A' attests fact(X), 'B' attests fact(X).\n";

fn post(m: &mut Monitor, x: i64, t: i64) {
    m.ingest_event(&EventEnvelope::post("/in", &format!("{{\"x\":{x}}}"), t)).unwrap();
}

fn kb_atoms(r: &Replica) -> BTreeSet<String> {
    r.kb().claims().map(|c| c.atom.canonical()).collect()
}

#[test]
fn supersession_retracts_consequences_and_matches_fresh_replica() {
    let w = World::new(&["A", "B", "D"]);
    let mut a = w.monitor("A", PRODUCER, &[]);
    let mut b = w.monitor("B", PRODUCER, &[]);
    let mut d = w.monitor("D", CONSUMER, &["A", "B"]);
    post(&mut a, 1, 1);
    post(&mut a, 2, 2);
    post(&mut b, 1, 3);
    post(&mut b, 2, 4);
    a.commit(1000).unwrap();
    b.commit(1000).unwrap();
    d.poll_and_include();
    let both = |x: i64| atom("D", "both", vec![x.into()]);
    assert!(d.replica().kb().contains(&both(1)) && d.replica().kb().contains(&both(2)));

    post(&mut a, 2, 1500);
    let old = w.db.get_head("A").unwrap().revision_id;
    let new = a.commit(2000).unwrap();
    assert_eq!(new.body.supersedes, Some(old));
    let res = d.poll_and_include();
    assert!(res.iter().any(|(o, r)| o == "A" && matches!(r, Ok(SyncOutcome::Superseded { .. }))));
    assert!(!d.replica().kb().contains(&both(1)));
    assert!(d.replica().kb().contains(&both(2)));

    let mut fresh = w.replica("D", CONSUMER);
    fresh.sync_owner("A").unwrap();
    fresh.sync_owner("B").unwrap();
    assert_eq!(kb_atoms(d.replica()), kb_atoms(&fresh));
}

fn body(owner: &Identity, supersedes: Option<Digest>, rs_hash: Digest, t: i64) -> RevisionBody {
    RevisionBody {
        owner: owner.name.clone(),
        supersedes,
        includes: vec![],
        rulesheet_hash: rs_hash,
        commit_time: t,
        claims: vec![],
    }
}

#[test]
fn non_owner_cannot_supersede() {
    let w = World::new(&["A", "B"]);
    let mut a = w.replica("A", PRODUCER);
    let b = w.replica("B", PRODUCER);
    let target = a.commit(0).unwrap();
    let forged = RevisionRecord::sign(body(&w.id("B"), Some(target.id), b.rulesheet().source_hash, 1), &w.id("B")).unwrap();
    let err = w.db.submit_revision(&forged).unwrap_err();
    assert!(matches!(err, StoreError::Unauthorized(_)), "{err}");
    assert_eq!(err.status(), 401);

    let mut impersonated = body(&w.id("A"), Some(target.id), a.rulesheet().source_hash, 2);
    impersonated.commit_time = 2;
    let signed_by_b = RevisionRecord::sign(impersonated, &w.id("B")).unwrap();
    assert_eq!(w.db.submit_revision(&signed_by_b).unwrap_err().status(), 401);
    assert_eq!(w.db.get_head("A").unwrap().revision_id, target.id);
}

#[test]
fn second_supersede_of_same_target_conflicts() {
    let w = World::new(&["A"]);
    let mut a = w.replica("A", PRODUCER);
    let target = a.commit(0).unwrap();
    let h = a.rulesheet().source_hash;
    let first = RevisionRecord::sign(body(&w.id("A"), Some(target.id), h, 1), &w.id("A")).unwrap();
    let second = RevisionRecord::sign(body(&w.id("A"), Some(target.id), h, 2), &w.id("A")).unwrap();
    w.db.submit_revision(&first).unwrap();
    let err = w.db.submit_revision(&second).unwrap_err();
    assert_eq!(err.status(), 409, "{err}");
    let fresh_chain = RevisionRecord::sign(body(&w.id("A"), None, h, 3), &w.id("A")).unwrap();
    assert_eq!(w.db.submit_revision(&fresh_chain).unwrap_err().status(), 409);
}

#[test]
fn malformed_submissions_are_rejected() {
    let w = World::new(&["A", "B"]);
    let a = w.replica("A", PRODUCER);
    let h = a.rulesheet().source_hash;
    let mut rec = RevisionRecord::sign(body(&w.id("A"), None, h, 0), &w.id("A")).unwrap();
    rec.body.commit_time = 5;
    assert!(w.db.submit_revision(&rec).is_err());

    let foreign = Claim::asserted(&w.id("B"), atom("B", "fact", vec![1.into()])).unwrap();
    let mut b = body(&w.id("A"), None, h, 0);
    b.claims.push(foreign);
    assert!(w.db.submit_revision(&RevisionRecord::sign(b, &w.id("A")).unwrap()).is_err());

    let unknown_rs = RevisionRecord::sign(body(&w.id("A"), None, Digest::of(b"nope"), 0), &w.id("A")).unwrap();
    assert!(w.db.submit_revision(&unknown_rs).is_err());

    let mut dangling = body(&w.id("A"), None, h, 0);
    dangling.includes.push(Digest::of(b"missing"));
    assert!(w.db.submit_revision(&RevisionRecord::sign(dangling, &w.id("A")).unwrap()).is_err());
    assert_eq!(w.db.size(), 1);
}

#[test]
fn stale_include_warns_and_self_include_is_refused() {
    let w = World::new(&["A", "D"]);
    let mut a = w.monitor("A", PRODUCER, &[]);
    post(&mut a, 1, 1);
    let first = a.commit(1000).unwrap();
    a.commit(2000).unwrap();
    let mut d = w.replica("D", CONSUMER);
    let warning = d.include_revision(&first.id).unwrap();
    assert!(warning.unwrap().contains("superseded"));
    assert!(d.kb().contains(&atom("A", "fact", vec![1.into()])));
    assert!(matches!(
        a.replica_mut().include_revision(&first.id),
        Err(RevisionError::Unauthorized(_))
    ));
}

#[test]
fn inclusion_evidence_survives_log_growth() {
    let w = World::new(&["A", "B", "D"]);
    let mut a = w.monitor("A", PRODUCER, &[]);
    post(&mut a, 4, 1);
    let rec = a.commit(1000).unwrap();
    let mut b = w.monitor("B", PRODUCER, &[]);
    for t in 0..40 {
        post(&mut b, t, t);
        b.commit(2000 + t).unwrap();
    }
    let mut d = w.replica("D", CONSUMER);
    d.include_revision(&rec.id).unwrap();
    let claim = d.kb().get(&atom("A", "fact", vec![4.into()])).unwrap().clone();
    assert!(d.kb().check_evidence(&claim, &w.trust).is_ok());
    assert!(w.db.size() > 40);
}

/// Serves revisions with a body altered after signing.
struct Tamper(Arc<ClaimDb>);

impl ClaimStore for Tamper {
    fn submit_revision(&self, r: &RevisionRecord) -> Result<SubmitReceipt, StoreError> {
        self.0.submit_revision(r)
    }
    fn get_revision(&self, id: &Digest) -> Result<RevisionFetch, StoreError> {
        let mut f = self.0.get_revision(id)?;
        if let Some(c) = f.record.body.claims.first_mut() {
            *c = Claim::new(atom(&c.atom.principal, &c.atom.predicate, vec![666.into()]), c.evidence.clone());
        }
        Ok(f)
    }
    fn get_head(&self, owner: &str) -> Result<HeadInfo, StoreError> {
        self.0.get_head(owner)
    }
    fn log_root(&self) -> Result<SignedTreeHead, StoreError> {
        self.0.log_root()
    }
    fn consistency(&self, a: u64, b: u64) -> Result<ConsistencyProof, StoreError> {
        self.0.consistency(a, b)
    }
    fn inclusion(&self, i: u64, n: u64) -> Result<InclusionProof, StoreError> {
        self.0.inclusion(i, n)
    }
    fn entry(&self, i: u64) -> Result<Vec<u8>, StoreError> {
        self.0.entry(i)
    }
    fn submit_rulesheet(&self, e: &RulesheetEntry) -> Result<u64, StoreError> {
        self.0.submit_rulesheet(e)
    }
    fn get_rulesheet(&self, o: &str, h: &Digest) -> Result<RulesheetEntry, StoreError> {
        self.0.get_rulesheet(o, h)
    }
}

#[test]
fn tampered_revision_admits_nothing() {
    let w = World::new(&["A", "D"]);
    let mut a = w.monitor("A", PRODUCER, &[]);
    post(&mut a, 1, 1);
    post(&mut a, 2, 2);
    let rec = a.commit(1000).unwrap();
    let rs = parse_rulesheet(CONSUMER, "D").unwrap();
    let mut d = Replica::new(w.id("D"), rs, w.trust.clone(), Arc::new(Tamper(w.db.clone()))).unwrap();
    assert!(d.include_revision(&rec.id).is_err());
    assert!(d.sync_owner("A").is_err());
    assert!(d.kb().is_empty());
    assert_eq!(d.included_from("A"), None);
}

#[test]
fn foreign_assertions_are_usable_but_not_committed() {
    let w = World::new(&["A", "D"]);
    let mut d = w.replica("D", "seen(X) :- 'A' attests fact(X).\n");
    d.assert_claim(Claim::asserted(&w.id("A"), atom("A", "fact", vec![3.into()])).unwrap()).unwrap();
    d.saturate().unwrap();
    let rec = d.commit(0).unwrap();
    assert_eq!(atoms(&rec), BTreeSet::from(["'D' attests seen(3)".to_string()]));
}
