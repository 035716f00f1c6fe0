use std::sync::Arc;
use std::thread;

use cyberlog::claimdb::{ClaimDb, ClaimStore, StoreError};
use cyberlog::claimlog::{verify_consistency, verify_inclusion, LOG_OPERATOR};
use cyberlog::identity::{generate_identity, Identity, TrustStore};
use cyberlog::lang::parse_rulesheet;
use cyberlog::revision::{revision_leaf, LogEntry, RevisionBody, RevisionRecord, RulesheetEntry};
use cyberlog::Digest;

fn ids(n: usize) -> (Vec<Identity>, Identity, TrustStore) {
    let ids: Vec<Identity> = (0..n)
        .map(|i| generate_identity(&format!("P{i}"), "", "", Some([i as u8 + 1; 32])))
        .collect();
    let op = generate_identity(LOG_OPERATOR, "", "", Some([200; 32]));
    let trust = TrustStore::from_identities(ids.iter().chain([&op]));
    (ids, op, trust)
}

fn rulesheet(db: &dyn ClaimStore, id: &Identity) -> Digest {
    let rs = parse_rulesheet("p(X) :- q(X).\n", &id.name).unwrap();
    db.submit_rulesheet(&RulesheetEntry::new(&rs, id).unwrap()).unwrap();
    rs.source_hash
}

fn record(id: &Identity, prev: Option<Digest>, rs: Digest, t: i64) -> RevisionRecord {
    let body = RevisionBody {
        owner: id.name.clone(),
        supersedes: prev,
        includes: vec![],
        rulesheet_hash: rs,
        commit_time: t,
        claims: vec![],
    };
    RevisionRecord::sign(body, id).unwrap()
}

#[test]
fn submit_fetch_round_trip_with_proofs() {
    let (ids, op, trust) = ids(1);
    let db = ClaimDb::in_memory(op, trust.clone());
    let rs = rulesheet(&db, &ids[0]);
    assert_eq!(db.submit_rulesheet(&RulesheetEntry::new(&parse_rulesheet("p(X) :- q(X).\n", "P0").unwrap(), &ids[0]).unwrap()).unwrap(), 0);
    let rec = record(&ids[0], None, rs, 1);
    db.set_time(77);
    let receipt = db.submit_revision(&rec).unwrap();
    assert_eq!(receipt.leaf_index, 1);
    assert_eq!(receipt.tree_head.timestamp, 77);
    assert!(verify_inclusion(&receipt.tree_head.root_hash, &revision_leaf(&rec), &receipt.proof));
    let fetch = db.get_revision(&rec.id).unwrap();
    assert_eq!(fetch.record, rec);
    let entry = LogEntry::from_bytes(&db.entry(1).unwrap()).unwrap();
    assert!(matches!(entry, LogEntry::Revision(r) if r == rec));
    assert!(matches!(db.get_revision(&Digest::of(b"x")), Err(StoreError::NotFound(_))));
    assert!(matches!(db.get_head("nobody"), Err(StoreError::NotFound(_))));
    assert_eq!(db.submit_revision(&rec).unwrap_err().status(), 409);
}

#[test]
fn concurrent_appends_are_serialized() {
    let (ids, op, trust) = ids(8);
    let db = Arc::new(ClaimDb::in_memory(op, trust));
    let hashes: Vec<Digest> = ids.iter().map(|i| rulesheet(db.as_ref(), i)).collect();
    let first = db.log_root().unwrap();
    let handles: Vec<_> = ids
        .into_iter()
        .zip(hashes)
        .map(|(id, h)| {
            let db = db.clone();
            thread::spawn(move || {
                let mut prev = None;
                for t in 0..10 {
                    let rec = record(&id, prev, h, t);
                    db.submit_revision(&rec).unwrap();
                    prev = Some(rec.id);
                }
                prev.unwrap()
            })
        })
        .collect();
    let heads: Vec<Digest> = handles.into_iter().map(|h| h.join().unwrap()).collect();
    assert_eq!(db.size(), 8 + 80);
    for (i, head) in heads.iter().enumerate() {
        let info = db.get_head(&format!("P{i}")).unwrap();
        assert_eq!(info.revision_id, *head);
        assert_eq!(info.chain_length, 10);
    }
    let now = db.log_root().unwrap();
    let proof = db.consistency(first.tree_size, now.tree_size).unwrap();
    assert!(verify_consistency(&first.root_hash, &now.root_hash, &proof));
}

#[test]
fn double_supersede_race_has_one_winner() {
    let (ids, op, trust) = ids(1);
    let db = Arc::new(ClaimDb::in_memory(op, trust));
    let rs = rulesheet(db.as_ref(), &ids[0]);
    let base = record(&ids[0], None, rs, 0);
    db.submit_revision(&base).unwrap();
    let results: Vec<Result<_, StoreError>> = (1..=2)
        .map(|t| {
            let (db, id) = (db.clone(), ids[0].clone());
            thread::spawn(move || db.submit_revision(&record(&id, Some(base.id), rs, t)))
        })
        .map(|h| h.join().unwrap())
        .collect();
    assert_eq!(results.iter().filter(|r| r.is_ok()).count(), 1);
    assert!(results.iter().any(|r| matches!(r, Err(StoreError::Conflict(_)))));
}

#[test]
fn reopen_rebuilds_identical_state() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("db.log");
    let (ids, op, trust) = ids(2);
    let (root, heads) = {
        let db = ClaimDb::open(&path, op.clone(), trust.clone()).unwrap();
        for id in &ids {
            let rs = rulesheet(&db, id);
            let mut prev = None;
            for t in 0..3 {
                let rec = record(id, prev, rs, t);
                db.submit_revision(&rec).unwrap();
                prev = Some(rec.id);
            }
        }
        (db.log_root().unwrap().root_hash, db.heads())
    };
    let db = ClaimDb::open(&path, op, trust).unwrap();
    assert_eq!(db.log_root().unwrap().root_hash, root);
    assert_eq!(db.heads(), heads);
}

#[test]
fn errors_round_trip_as_json() {
    let e = StoreError::Conflict("already superseded".into());
    let json = serde_json::to_string(&e).unwrap();
    assert_eq!(json, r#"{"error":"conflict","message":"already superseded"}"#);
    assert_eq!(serde_json::from_str::<StoreError>(&json).unwrap(), e);
}
