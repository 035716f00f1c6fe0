//! Claim revisions: signed, logged claim snapshots that form one linear
//! supersedes chain per owner, plus the staging/commit cycle that moves a
//! knowledge base from one revision to the next.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::claimdb::{ClaimStore, RevisionFetch, StoreError};
use crate::claimlog::{leaf_hash, verify_consistency, verify_inclusion, SignedTreeHead, LOG_OPERATOR};
use crate::digest::hex_bytes;
use crate::engine::{Claim, EngineError, Evidence, KnowledgeBase, Substitution};
use crate::identity::{Identity, TrustStore};
use crate::lang::{format_rulesheet, Rule, RuleKind, Rulesheet};
use crate::Digest;

#[derive(Debug, thiserror::Error)]
pub enum RevisionError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("verification failed for revision {id}: {reason}")]
    Verification { id: String, reason: String },
    #[error("supersession rejected: {0}")]
    Unauthorized(String),
    #[error("signing: {0}")]
    Signing(String),
}

fn verification(id: &Digest, reason: impl Into<String>) -> RevisionError {
    RevisionError::Verification {
        id: id.short(),
        reason: reason.into(),
    }
}

/// Everything in a revision except its id and signature.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RevisionBody {
    pub owner: String,
    pub supersedes: Option<Digest>,
    pub includes: Vec<Digest>,
    pub rulesheet_hash: Digest,
    pub commit_time: i64,
    pub claims: Vec<Claim>,
}

impl RevisionBody {
    pub fn canonical_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("revision bodies serialize")
    }

    pub fn id(&self) -> Digest {
        Digest::of(&self.canonical_bytes())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RevisionRecord {
    pub id: Digest,
    pub body: RevisionBody,
    /// Owner's signature over the id bytes.
    #[serde(with = "hex_bytes")]
    pub signature: Vec<u8>,
}

impl RevisionRecord {
    pub fn sign(body: RevisionBody, owner: &Identity) -> Result<Self, RevisionError> {
        let id = body.id();
        let signature = owner.sign(id.as_bytes()).map_err(|e| RevisionError::Signing(e.to_string()))?;
        Ok(RevisionRecord { id, body, signature })
    }

    /// Checks the id against the body and the owner's signature.
    pub fn verify(&self, trust: &TrustStore) -> Result<(), RevisionError> {
        if self.body.id() != self.id {
            return Err(verification(&self.id, "body does not hash to id"));
        }
        if !trust.verify(&self.body.owner, self.id.as_bytes(), &self.signature) {
            return Err(verification(&self.id, format!("bad signature by owner '{}'", self.body.owner)));
        }
        if let Some(c) = self.body.claims.iter().find(|c| c.atom.principal != self.body.owner) {
            return Err(verification(&self.id, format!("claim {} is not attested by the owner", c.atom)));
        }
        Ok(())
    }

    pub fn owner(&self) -> &str {
        &self.body.owner
    }

    pub fn find(&self, atom: &crate::engine::GroundAtom) -> Option<&Claim> {
        self.body.claims.iter().find(|c| c.atom == *atom)
    }
}

/// A rulesheet as stored in the log, signed by its owner.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RulesheetEntry {
    pub owner: String,
    pub hash: Digest,
    pub text: String,
    #[serde(with = "hex_bytes")]
    pub signature: Vec<u8>,
}

impl RulesheetEntry {
    pub fn new(rs: &Rulesheet, owner: &Identity) -> Result<Self, RevisionError> {
        let text = format_rulesheet(rs);
        let signature = owner.sign(text.as_bytes()).map_err(|e| RevisionError::Signing(e.to_string()))?;
        Ok(RulesheetEntry {
            owner: owner.name.clone(),
            hash: Digest::of(text.as_bytes()),
            text,
            signature,
        })
    }

    pub fn verify(&self, trust: &TrustStore) -> Result<(), String> {
        if Digest::of(self.text.as_bytes()) != self.hash {
            return Err(format!("rulesheet {} does not hash to its id", self.hash.short()));
        }
        if !trust.verify(&self.owner, self.text.as_bytes(), &self.signature) {
            return Err(format!("bad signature on rulesheet {} by '{}'", self.hash.short(), self.owner));
        }
        Ok(())
    }

    pub fn parse(&self) -> Result<Rulesheet, String> {
        crate::lang::parse_rulesheet(&self.text, &self.owner).map_err(|e| e.to_string())
    }
}

/// One leaf of the claim log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogEntry {
    Revision(RevisionRecord),
    Rulesheet(RulesheetEntry),
}

impl LogEntry {
    pub fn to_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("log entries serialize")
    }

    /// Parses a leaf payload, insisting that it is in canonical form so that
    /// every accepted payload has exactly one byte encoding.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, String> {
        let entry: LogEntry = serde_json::from_slice(bytes).map_err(|e| format!("unparseable entry: {e}"))?;
        if entry.to_bytes() != bytes {
            return Err("entry is not in canonical form".into());
        }
        Ok(entry)
    }

    pub fn verify(&self, trust: &TrustStore) -> Result<(), String> {
        match self {
            LogEntry::Revision(r) => r.verify(trust).map_err(|e| e.to_string()),
            LogEntry::Rulesheet(r) => r.verify(trust),
        }
    }
}

/// Leaf hash of a revision's log entry.
pub fn revision_leaf(record: &RevisionRecord) -> Digest {
    leaf_hash(&LogEntry::Revision(record.clone()).to_bytes())
}

/// Verifies a fetched revision: record integrity, the operator's tree head,
/// and the inclusion proof of its log entry.
pub fn verify_fetch(fetch: &RevisionFetch, trust: &TrustStore) -> Result<Digest, RevisionError> {
    let rec = &fetch.record;
    rec.verify(trust)?;
    let key = trust
        .key(LOG_OPERATOR)
        .ok_or_else(|| verification(&rec.id, "no log operator key in trust store"))?;
    if !fetch.tree_head.verify(&key) {
        return Err(verification(&rec.id, "tree head signature does not verify"));
    }
    if fetch.proof.tree_size != fetch.tree_head.tree_size || fetch.proof.leaf_index != fetch.leaf_index {
        return Err(verification(&rec.id, "proof does not match tree head"));
    }
    let leaf = revision_leaf(rec);
    if !verify_inclusion(&fetch.tree_head.root_hash, &leaf, &fetch.proof) {
        return Err(verification(&rec.id, "inclusion proof does not verify"));
    }
    Ok(leaf)
}

/// Next-rule outputs over `snapshot`, once per distinct head atom, each
/// carried with evidence pointing at `source`.
pub fn apply_next_rules(snapshot: &KnowledgeBase, rs: &Rulesheet, source: Digest) -> Result<Vec<Claim>, EngineError> {
    let mut out: Vec<Claim> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for rule in rs.next_rules() {
        for (head, substitution) in snapshot.instances(rule)? {
            if seen.insert(head.clone()) {
                out.push(Claim::new(
                    head,
                    Evidence::CarriedByNextRule {
                        rule: rule.clone(),
                        substitution,
                        source_revision: source,
                    },
                ));
            }
        }
    }
    Ok(out)
}

/// The revision currently included from one foreign owner.
#[derive(Debug, Clone)]
struct Included {
    id: Digest,
    claims: Vec<Claim>,
}

/// The transient revision being built between commits.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StagingRevision {
    pub owner: String,
    /// Revision this staging will supersede when committed.
    pub base: Option<Digest>,
    pub includes: Vec<Digest>,
}

/// Outcome of [`Replica::sync_owner`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SyncOutcome {
    Unchanged,
    Included(Digest),
    Superseded { old: Digest, new: Digest },
}

/// A principal's view of the claim database: its knowledge base, staging
/// revision and the revisions it currently includes.
pub struct Replica {
    identity: Identity,
    rulesheet: Rulesheet,
    trust: TrustStore,
    store: Arc<dyn ClaimStore>,
    kb: KnowledgeBase,
    staging: StagingRevision,
    included: BTreeMap<String, Included>,
    last_head: Option<SignedTreeHead>,
    commits: u64,
}

impl Replica {
    /// Logs the rulesheet (once per hash) and starts with an empty staging.
    pub fn new(identity: Identity, rulesheet: Rulesheet, trust: TrustStore, store: Arc<dyn ClaimStore>) -> Result<Self, RevisionError> {
        if identity.name != rulesheet.self_id {
            return Err(RevisionError::Unauthorized(format!(
                "identity '{}' cannot run the rulesheet of '{}'",
                identity.name, rulesheet.self_id
            )));
        }
        store.submit_rulesheet(&RulesheetEntry::new(&rulesheet, &identity)?)?;
        let base = match store.get_head(&identity.name) {
            Ok(h) => Some(h.revision_id),
            Err(StoreError::NotFound(_)) => None,
            Err(e) => return Err(e.into()),
        };
        Ok(Replica {
            staging: StagingRevision {
                owner: identity.name.clone(),
                base,
                includes: Vec::new(),
            },
            identity,
            rulesheet,
            trust,
            store,
            kb: KnowledgeBase::new(),
            included: BTreeMap::new(),
            last_head: None,
            commits: 0,
        })
    }

    pub fn name(&self) -> &str {
        &self.identity.name
    }

    pub fn identity(&self) -> &Identity {
        &self.identity
    }

    pub fn rulesheet(&self) -> &Rulesheet {
        &self.rulesheet
    }

    pub fn trust(&self) -> &TrustStore {
        &self.trust
    }

    pub fn store(&self) -> &Arc<dyn ClaimStore> {
        &self.store
    }

    pub fn kb(&self) -> &KnowledgeBase {
        &self.kb
    }

    pub fn staging(&self) -> &StagingRevision {
        &self.staging
    }

    pub fn commits(&self) -> u64 {
        self.commits
    }

    /// Id of the revision currently included from `owner`.
    pub fn included_from(&self, owner: &str) -> Option<Digest> {
        self.included.get(owner).map(|i| i.id)
    }

    /// Adds a claim after checking its evidence; returns whether it was new.
    pub fn assert_claim(&mut self, claim: Claim) -> Result<bool, RevisionError> {
        Ok(self.kb.assert_claim(claim, &self.trust)?)
    }

    pub fn saturate(&mut self) -> Result<usize, RevisionError> {
        Ok(self.kb.saturate(&self.rulesheet)?.derived)
    }

    /// Claims that go into the next revision: attested by the owner and not
    /// borrowed from an included revision.
    fn committable(&self) -> Vec<Claim> {
        self.kb
            .claims()
            .filter(|c| c.atom.principal == self.identity.name && !matches!(c.evidence, Evidence::LogInclusion { .. }))
            .cloned()
            .collect()
    }

    fn included_claims(&self) -> impl Iterator<Item = &Claim> {
        self.included.values().flat_map(|i| i.claims.iter())
    }

    /// Commits staging as a new revision and starts a fresh staging seeded by
    /// the next-rules. On failure the staging is left untouched.
    pub fn commit(&mut self, commit_time: i64) -> Result<RevisionRecord, RevisionError> {
        self.saturate()?;
        let body = RevisionBody {
            owner: self.identity.name.clone(),
            supersedes: self.staging.base,
            includes: self.included.values().map(|i| i.id).collect(),
            rulesheet_hash: self.rulesheet.source_hash,
            commit_time,
            claims: self.committable(),
        };
        let record = RevisionRecord::sign(body, &self.identity)?;
        let receipt = self.store.submit_revision(&record)?;
        self.observe_head(&receipt.tree_head)?;

        let snapshot = KnowledgeBase::from_claims(record.body.claims.iter().cloned().chain(self.included_claims().cloned()));
        let carried = apply_next_rules(&snapshot, &self.rulesheet, record.id)?;
        let mut kb = KnowledgeBase::from_claims(self.included_claims().cloned());
        for c in carried {
            kb.insert_trusted(c);
        }
        self.kb = kb;
        self.staging.base = Some(record.id);
        self.staging.includes = record.body.includes.clone();
        self.commits += 1;
        self.saturate()?;
        Ok(record)
    }

    /// Records a tree head after checking it extends every head seen before.
    fn observe_head(&mut self, head: &SignedTreeHead) -> Result<(), RevisionError> {
        let key = self
            .trust
            .key(LOG_OPERATOR)
            .ok_or_else(|| RevisionError::Verification {
                id: "log".into(),
                reason: "no log operator key".into(),
            })?;
        let bad = |reason: &str| RevisionError::Verification {
            id: format!("log@{}", head.tree_size),
            reason: reason.to_string(),
        };
        if !head.verify(&key) {
            return Err(bad("tree head signature does not verify"));
        }
        if let Some(prev) = &self.last_head {
            if head.tree_size < prev.tree_size {
                return Err(bad("log shrank"));
            }
            if prev.tree_size > 0 {
                let proof = self.store.consistency(prev.tree_size, head.tree_size)?;
                if !verify_consistency(&prev.root_hash, &head.root_hash, &proof) {
                    return Err(bad("log is not an extension of a previously seen head (split view or tampering)"));
                }
            }
            if head.tree_size == prev.tree_size {
                return Ok(());
            }
        }
        self.last_head = Some(head.clone());
        Ok(())
    }

    fn fetch_verified(&mut self, id: &Digest) -> Result<(RevisionFetch, Digest), RevisionError> {
        let fetch = self.store.get_revision(id)?;
        if fetch.record.id != *id {
            return Err(verification(id, "store returned a different revision"));
        }
        let leaf = verify_fetch(&fetch, &self.trust)?;
        self.observe_head(&fetch.tree_head)?;
        Ok((fetch, leaf))
    }

    /// Includes revision `id`, wrapping each claim in log-inclusion evidence.
    /// Any verification failure admits nothing. Returns a warning if the
    /// revision is no longer its owner's head.
    pub fn include_revision(&mut self, id: &Digest) -> Result<Option<String>, RevisionError> {
        let (fetch, leaf) = self.fetch_verified(id)?;
        let owner = fetch.record.owner().to_string();
        if owner == self.identity.name {
            return Err(RevisionError::Unauthorized("a principal does not include its own revisions".into()));
        }
        let warning = match self.store.get_head(&owner) {
            Ok(h) if h.revision_id != *id => {
                let w = format!("revision {} of '{owner}' is superseded by {}", id.short(), h.revision_id.short());
                log::warn!("{w}");
                Some(w)
            }
            _ => None,
        };
        if let Some(old) = self.included.get(&owner).map(|i| i.id) {
            self.drop_included(&old);
        }
        self.admit(fetch, leaf);
        self.saturate()?;
        Ok(warning)
    }

    fn admit(&mut self, fetch: RevisionFetch, leaf: Digest) {
        let claims: Vec<Claim> = fetch
            .record
            .body
            .claims
            .iter()
            .map(|c| {
                Claim::new(
                    c.atom.clone(),
                    Evidence::LogInclusion {
                        revision_id: fetch.record.id,
                        leaf_hash: leaf,
                        proof: fetch.proof.clone(),
                        tree_head: fetch.tree_head.clone(),
                    },
                )
            })
            .collect();
        for c in &claims {
            self.kb.insert_trusted(c.clone());
        }
        self.included.insert(
            fetch.record.owner().to_string(),
            Included {
                id: fetch.record.id,
                claims,
            },
        );
        self.staging.includes = self.included.values().map(|i| i.id).collect();
    }

    fn drop_included(&mut self, id: &Digest) {
        self.kb.remove_with_dependents(
            |c| matches!(&c.evidence, Evidence::LogInclusion { revision_id, .. } if revision_id == id),
        );
        self.included.retain(|_, i| i.id != *id);
        self.staging.includes = self.included.values().map(|i| i.id).collect();
    }

    /// Replaces included revision `old` by `new`, which must extend `old`'s
    /// supersedes chain. Claims rooted in `old` and their consequences are
    /// dropped, `new`'s claims admitted, and the KB re-saturated.
    pub fn on_superseded(&mut self, old: &Digest, new: &Digest) -> Result<(), RevisionError> {
        let (fetch, leaf) = self.fetch_verified(new)?;
        let owner = fetch.record.owner().to_string();
        if self.included.get(&owner).map(|i| i.id) != Some(*old) {
            return Err(RevisionError::Unauthorized(format!(
                "revision {} is not the revision included from '{owner}'",
                old.short()
            )));
        }
        let mut cursor = fetch.record.body.supersedes;
        loop {
            match cursor {
                Some(id) if id == *old => break,
                Some(id) => {
                    let (step, _) = self.fetch_verified(&id)?;
                    if step.record.owner() != owner {
                        return Err(RevisionError::Unauthorized(format!(
                            "revision {} of '{}' sits in the chain of '{owner}'",
                            id.short(),
                            step.record.owner()
                        )));
                    }
                    cursor = step.record.body.supersedes;
                }
                None => {
                    return Err(RevisionError::Unauthorized(format!(
                        "{} does not supersede {}",
                        new.short(),
                        old.short()
                    )))
                }
            }
        }
        self.drop_included(old);
        self.admit(fetch, leaf);
        self.saturate()?;
        Ok(())
    }

    /// Brings the included revision of `owner` up to its current head.
    pub fn sync_owner(&mut self, owner: &str) -> Result<SyncOutcome, RevisionError> {
        if owner == self.identity.name {
            return Ok(SyncOutcome::Unchanged);
        }
        let head = match self.store.get_head(owner) {
            Ok(h) => h,
            Err(StoreError::NotFound(_)) => return Ok(SyncOutcome::Unchanged),
            Err(e) => return Err(e.into()),
        };
        match self.included_from(owner) {
            Some(cur) if cur == head.revision_id => Ok(SyncOutcome::Unchanged),
            Some(cur) => {
                self.on_superseded(&cur, &head.revision_id)?;
                Ok(SyncOutcome::Superseded {
                    old: cur,
                    new: head.revision_id,
                })
            }
            None => {
                self.include_revision(&head.revision_id)?;
                Ok(SyncOutcome::Included(head.revision_id))
            }
        }
    }
}

/// Re-checks a carried claim against the revision it was carried from.
pub fn check_carried(rule: &Rule, substitution: &Substitution, claim: &Claim, source_facts: &KnowledgeBase) -> Result<(), String> {
    if rule.kind != RuleKind::Next {
        return Err("carried claim names a standard rule".into());
    }
    let hits = source_facts.instances(rule).map_err(|e| e.to_string())?;
    if hits.iter().any(|(h, s)| *h == claim.atom && s == substitution) {
        Ok(())
    } else {
        Err(format!("{} is not produced by the next-rule over its source revision", claim.atom))
    }
}
