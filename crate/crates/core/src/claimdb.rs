//! The claim database: a Merkle log of revisions and rulesheets with
//! per-owner head tracking, and the [`ClaimStore`] interface clients use to
//! reach it in-process or over the network.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::claimlog::{ConsistencyProof, InclusionProof, LogError, MerkleLog, SignedTreeHead};
use crate::identity::{Identity, TrustStore};
use crate::revision::{LogEntry, RevisionRecord, RulesheetEntry};
use crate::Digest;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error, Serialize, Deserialize)]
#[serde(tag = "error", content = "message", rename_all = "snake_case")]
pub enum StoreError {
    #[error("not found: {0}")]
    NotFound(String),
    #[error("unauthorized: {0}")]
    Unauthorized(String),
    #[error("conflict: {0}")]
    Conflict(String),
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("claim database unavailable: {0}")]
    Unavailable(String),
}

impl StoreError {
    pub fn status(&self) -> u16 {
        match self {
            StoreError::NotFound(_) => 404,
            StoreError::Unauthorized(_) => 401,
            StoreError::Conflict(_) => 409,
            StoreError::BadRequest(_) => 400,
            StoreError::Unavailable(_) => 503,
        }
    }
}

impl From<LogError> for StoreError {
    fn from(e: LogError) -> Self {
        match e {
            LogError::OutOfRange(m) => StoreError::BadRequest(m),
            other => StoreError::Unavailable(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubmitReceipt {
    pub leaf_index: u64,
    pub revision_id: Digest,
    pub tree_head: SignedTreeHead,
    pub proof: InclusionProof,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RevisionFetch {
    pub record: RevisionRecord,
    pub leaf_index: u64,
    pub proof: InclusionProof,
    pub tree_head: SignedTreeHead,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadInfo {
    pub owner: String,
    pub revision_id: Digest,
    /// Number of revisions in the owner's supersedes chain.
    pub chain_length: u64,
    pub leaf_index: u64,
}

/// Operations of the claim database. Implemented in-process by [`ClaimDb`]
/// and over HTTP by the command-line client.
pub trait ClaimStore: Send + Sync {
    fn submit_revision(&self, record: &RevisionRecord) -> Result<SubmitReceipt, StoreError>;
    fn get_revision(&self, id: &Digest) -> Result<RevisionFetch, StoreError>;
    fn get_head(&self, owner: &str) -> Result<HeadInfo, StoreError>;
    fn log_root(&self) -> Result<SignedTreeHead, StoreError>;
    fn consistency(&self, old_size: u64, new_size: u64) -> Result<ConsistencyProof, StoreError>;
    fn inclusion(&self, index: u64, size: u64) -> Result<InclusionProof, StoreError>;
    /// Raw payload of log entry `index`.
    fn entry(&self, index: u64) -> Result<Vec<u8>, StoreError>;
    /// Logs a rulesheet unless the owner already logged one with the same
    /// hash; returns its leaf index.
    fn submit_rulesheet(&self, entry: &RulesheetEntry) -> Result<u64, StoreError>;
    fn get_rulesheet(&self, owner: &str, hash: &Digest) -> Result<RulesheetEntry, StoreError>;
}

#[derive(Default)]
struct DbState {
    log: MerkleLog,
    revisions: HashMap<Digest, u64>,
    rulesheets: HashMap<(String, Digest), u64>,
    heads: BTreeMap<String, HeadInfo>,
    superseded_by: HashMap<Digest, Digest>,
}

impl DbState {
    fn index(&mut self, leaf_index: u64, entry: &LogEntry) {
        match entry {
            LogEntry::Rulesheet(r) => {
                self.rulesheets.entry((r.owner.clone(), r.hash)).or_insert(leaf_index);
            }
            LogEntry::Revision(r) => {
                self.revisions.insert(r.id, leaf_index);
                let chain_length = match r.body.supersedes {
                    Some(prev) => {
                        self.superseded_by.insert(prev, r.id);
                        self.heads.get(r.owner()).map_or(1, |h| h.chain_length + 1)
                    }
                    None => 1,
                };
                self.heads.insert(
                    r.owner().to_string(),
                    HeadInfo {
                        owner: r.owner().to_string(),
                        revision_id: r.id,
                        chain_length,
                        leaf_index,
                    },
                );
            }
        }
    }

    fn record(&self, leaf_index: u64) -> Result<RevisionRecord, StoreError> {
        let payload = self
            .log
            .payload(leaf_index)
            .ok_or_else(|| StoreError::NotFound(format!("leaf {leaf_index}")))?;
        match serde_json::from_slice::<LogEntry>(payload) {
            Ok(LogEntry::Revision(r)) => Ok(r),
            _ => Err(StoreError::Unavailable(format!("leaf {leaf_index} is not a readable revision"))),
        }
    }
}

/// Claim database over a single Merkle log.
pub struct ClaimDb {
    operator: Identity,
    trust: TrustStore,
    state: Mutex<DbState>,
    /// Tree-head timestamp; `None` means wall clock.
    clock: Option<AtomicI64>,
}

impl ClaimDb {
    /// In-memory database with a virtual clock starting at 0.
    pub fn in_memory(operator: Identity, trust: TrustStore) -> Self {
        ClaimDb {
            operator,
            trust,
            state: Mutex::new(DbState::default()),
            clock: Some(AtomicI64::new(0)),
        }
    }

    /// Opens a file-backed database, replaying existing entries.
    pub fn open(path: impl AsRef<Path>, operator: Identity, trust: TrustStore) -> Result<Self, LogError> {
        let log = MerkleLog::open(path)?;
        let mut state = DbState {
            log,
            ..DbState::default()
        };
        for i in 0..state.log.size() {
            let payload = state.log.payload(i).expect("index below size");
            match serde_json::from_slice::<LogEntry>(payload) {
                Ok(entry) => state.index(i, &entry),
                Err(e) => log::warn!("log entry {i} is unreadable: {e}"),
            }
        }
        Ok(ClaimDb {
            operator,
            trust,
            state: Mutex::new(state),
            clock: Some(AtomicI64::new(0)),
        })
    }

    /// Stamps tree heads with wall-clock milliseconds instead of virtual time.
    pub fn with_wall_clock(mut self) -> Self {
        self.clock = None;
        self
    }

    pub fn set_time(&self, ms: i64) {
        if let Some(c) = &self.clock {
            c.store(ms, Ordering::SeqCst);
        }
    }

    fn now(&self) -> i64 {
        match &self.clock {
            Some(c) => c.load(Ordering::SeqCst),
            None => std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map_or(0, |d| d.as_millis() as i64),
        }
    }

    pub fn operator(&self) -> &Identity {
        &self.operator
    }

    pub fn trust(&self) -> &TrustStore {
        &self.trust
    }

    pub fn size(&self) -> u64 {
        self.lock().log.size()
    }

    pub fn heads(&self) -> Vec<HeadInfo> {
        self.lock().heads.values().cloned().collect()
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, DbState> {
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn head_at(&self, st: &DbState) -> Result<SignedTreeHead, StoreError> {
        st.log
            .signed_tree_head(&self.operator, self.now())
            .map_err(StoreError::from)
    }

    fn check_submission(&self, st: &DbState, r: &RevisionRecord) -> Result<(), StoreError> {
        if r.body.id() != r.id {
            return Err(StoreError::BadRequest(format!("revision {} does not hash to its id", r.id.short())));
        }
        if self.trust.key(r.owner()).is_none() {
            return Err(StoreError::Unauthorized(format!("unknown owner '{}'", r.owner())));
        }
        if !self.trust.verify(r.owner(), r.id.as_bytes(), &r.signature) {
            return Err(StoreError::Unauthorized(format!("bad signature on revision {}", r.id.short())));
        }
        if let Some(c) = r.body.claims.iter().find(|c| c.atom.principal != r.owner()) {
            return Err(StoreError::BadRequest(format!("claim {} is not attested by '{}'", c.atom, r.owner())));
        }
        if st.revisions.contains_key(&r.id) {
            return Err(StoreError::Conflict(format!("revision {} already logged", r.id.short())));
        }
        if !st.rulesheets.contains_key(&(r.owner().to_string(), r.body.rulesheet_hash)) {
            return Err(StoreError::BadRequest(format!("rulesheet {} is not logged", r.body.rulesheet_hash.short())));
        }
        for inc in &r.body.includes {
            if !st.revisions.contains_key(inc) {
                return Err(StoreError::BadRequest(format!("included revision {} is unknown", inc.short())));
            }
        }
        match (r.body.supersedes, st.heads.get(r.owner())) {
            (Some(prev), _) => {
                let leaf = *st
                    .revisions
                    .get(&prev)
                    .ok_or_else(|| StoreError::BadRequest(format!("superseded revision {} is unknown", prev.short())))?;
                let target = st.record(leaf)?;
                if target.owner() != r.owner() {
                    return Err(StoreError::Unauthorized(format!(
                        "'{}' may not supersede revision {} owned by '{}'",
                        r.owner(),
                        prev.short(),
                        target.owner()
                    )));
                }
                if let Some(next) = st.superseded_by.get(&prev) {
                    return Err(StoreError::Conflict(format!(
                        "revision {} is already superseded by {}",
                        prev.short(),
                        next.short()
                    )));
                }
            }
            (None, Some(h)) => {
                return Err(StoreError::Conflict(format!(
                    "'{}' already has head {}; a new revision must supersede it",
                    r.owner(),
                    h.revision_id.short()
                )))
            }
            (None, None) => {}
        }
        Ok(())
    }
}

impl ClaimStore for ClaimDb {
    fn submit_revision(&self, record: &RevisionRecord) -> Result<SubmitReceipt, StoreError> {
        let mut st = self.lock();
        self.check_submission(&st, record)?;
        let entry = LogEntry::Revision(record.clone());
        let leaf_index = st.log.append(&entry.to_bytes())?;
        st.index(leaf_index, &entry);
        let tree_head = self.head_at(&st)?;
        let proof = st.log.prove_inclusion(leaf_index, tree_head.tree_size)?;
        Ok(SubmitReceipt {
            leaf_index,
            revision_id: record.id,
            tree_head,
            proof,
        })
    }

    fn get_revision(&self, id: &Digest) -> Result<RevisionFetch, StoreError> {
        let st = self.lock();
        let leaf_index = *st
            .revisions
            .get(id)
            .ok_or_else(|| StoreError::NotFound(format!("revision {id}")))?;
        let record = st.record(leaf_index)?;
        let tree_head = self.head_at(&st)?;
        let proof = st.log.prove_inclusion(leaf_index, tree_head.tree_size)?;
        Ok(RevisionFetch {
            record,
            leaf_index,
            proof,
            tree_head,
        })
    }

    fn get_head(&self, owner: &str) -> Result<HeadInfo, StoreError> {
        self.lock()
            .heads
            .get(owner)
            .cloned()
            .ok_or_else(|| StoreError::NotFound(format!("no revisions by '{owner}'")))
    }

    fn log_root(&self) -> Result<SignedTreeHead, StoreError> {
        let st = self.lock();
        self.head_at(&st)
    }

    fn consistency(&self, old_size: u64, new_size: u64) -> Result<ConsistencyProof, StoreError> {
        Ok(self.lock().log.prove_consistency(old_size, new_size)?)
    }

    fn inclusion(&self, index: u64, size: u64) -> Result<InclusionProof, StoreError> {
        Ok(self.lock().log.prove_inclusion(index, size)?)
    }

    fn entry(&self, index: u64) -> Result<Vec<u8>, StoreError> {
        self.lock()
            .log
            .payload(index)
            .map(<[u8]>::to_vec)
            .ok_or_else(|| StoreError::NotFound(format!("leaf {index}")))
    }

    fn submit_rulesheet(&self, entry: &RulesheetEntry) -> Result<u64, StoreError> {
        let mut st = self.lock();
        if let Some(&i) = st.rulesheets.get(&(entry.owner.clone(), entry.hash)) {
            return Ok(i);
        }
        entry.verify(&self.trust).map_err(StoreError::Unauthorized)?;
        entry.parse().map_err(StoreError::BadRequest)?;
        let e = LogEntry::Rulesheet(entry.clone());
        let i = st.log.append(&e.to_bytes())?;
        st.index(i, &e);
        Ok(i)
    }

    fn get_rulesheet(&self, owner: &str, hash: &Digest) -> Result<RulesheetEntry, StoreError> {
        let st = self.lock();
        let i = *st
            .rulesheets
            .get(&(owner.to_string(), *hash))
            .ok_or_else(|| StoreError::NotFound(format!("rulesheet {hash} of '{owner}'")))?;
        match serde_json::from_slice::<LogEntry>(st.log.payload(i).expect("indexed leaf")) {
            Ok(LogEntry::Rulesheet(r)) => Ok(r),
            _ => Err(StoreError::Unavailable(format!("leaf {i} is not a readable rulesheet"))),
        }
    }
}
