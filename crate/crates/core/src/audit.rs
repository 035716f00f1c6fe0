//! Independent verification of the claim database: full-log integrity,
//! recursive evidence checks for logged claims, and append-only checks
//! against previously seen tree heads.

use std::collections::HashMap;

use serde::Serialize;

use crate::claimdb::{ClaimStore, StoreError};
use crate::claimlog::{leaf_hash, verify_consistency, verify_inclusion, MerkleTree, SignedTreeHead, LOG_OPERATOR};
use crate::engine::{check_rule_instance, instantiate_pattern, Claim, Evidence, GroundAtom, KnowledgeBase};
use crate::identity::TrustStore;
use crate::lang::Rulesheet;
use crate::revision::{check_carried, verify_fetch, LogEntry, RevisionRecord};
use crate::Digest;

#[derive(Debug, thiserror::Error)]
pub enum AuditError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("{atom} is not in the head revision {revision} of '{owner}'")]
    NotInHead { atom: String, owner: String, revision: String },
}

#[derive(Debug, Clone, Serialize)]
pub struct AuditNode {
    pub atom: String,
    pub evidence: &'static str,
    pub revision: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<AuditNode>,
}

impl AuditNode {
    pub fn ok(&self) -> bool {
        self.failure.is_none() && self.children.iter().all(AuditNode::ok)
    }

    pub fn failures(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.collect_failures(&mut out);
        out
    }

    fn collect_failures(&self, out: &mut Vec<String>) {
        if let Some(f) = &self.failure {
            out.push(format!("{} [{}]: {f}", self.atom, self.evidence));
        }
        self.children.iter().for_each(|c| c.collect_failures(out));
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        self.render_into(0, &mut out);
        out
    }

    fn render_into(&self, depth: usize, out: &mut String) {
        let status = match &self.failure {
            None => "ok".to_string(),
            Some(f) => format!("FAILED: {f}"),
        };
        out.push_str(&format!(
            "{}{}  <{} @ {}>  {status}\n",
            "  ".repeat(depth),
            self.atom,
            self.evidence,
            self.revision
        ));
        for c in &self.children {
            c.render_into(depth + 1, out);
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AuditReport {
    pub log_size: u64,
    pub log_failures: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tree: Option<AuditNode>,
}

impl AuditReport {
    pub fn ok(&self) -> bool {
        self.log_failures.is_empty() && self.tree.as_ref().is_none_or(AuditNode::ok)
    }

    pub fn failures(&self) -> Vec<String> {
        let mut out = self.log_failures.clone();
        if let Some(t) = &self.tree {
            out.extend(t.failures());
        }
        out
    }
}

/// Verifies every log entry and that the served tree matches the entries.
pub fn scan_log(store: &dyn ClaimStore, trust: &TrustStore) -> Result<(SignedTreeHead, Vec<String>), StoreError> {
    let head = store.log_root()?;
    let mut failures = Vec::new();
    match trust.key(LOG_OPERATOR) {
        Some(k) if head.verify(&k) => {}
        Some(_) => failures.push("current tree head signature does not verify".into()),
        None => failures.push(format!("no key for log operator '{LOG_OPERATOR}'")),
    }
    let mut tree = MerkleTree::new();
    for i in 0..head.tree_size {
        let payload = store.entry(i)?;
        tree.push(leaf_hash(&payload));
        match LogEntry::from_bytes(&payload) {
            Ok(entry) => {
                if let Err(e) = entry.verify(trust) {
                    failures.push(format!("leaf {i}: {e}"));
                }
            }
            Err(e) => failures.push(format!("leaf {i}: {e}")),
        }
    }
    if tree.root(head.tree_size) != Some(head.root_hash) {
        failures.push("entries do not hash to the signed root".into());
    }
    Ok((head, failures))
}

/// Caches fetched revisions and rulesheets while walking evidence.
pub struct Auditor<'a> {
    store: &'a dyn ClaimStore,
    trust: &'a TrustStore,
    head: SignedTreeHead,
    revisions: HashMap<Digest, Result<RevisionRecord, String>>,
    rulesheets: HashMap<(String, Digest), Result<Rulesheet, String>>,
    memo: HashMap<(Digest, Digest), AuditNode>,
}

impl<'a> Auditor<'a> {
    pub fn new(store: &'a dyn ClaimStore, trust: &'a TrustStore) -> Result<Self, StoreError> {
        Ok(Auditor {
            head: store.log_root()?,
            store,
            trust,
            revisions: HashMap::new(),
            rulesheets: HashMap::new(),
            memo: HashMap::new(),
        })
    }

    /// Fetches a revision and checks its record and inclusion proof.
    pub fn revision(&mut self, id: &Digest) -> Result<RevisionRecord, String> {
        if let Some(r) = self.revisions.get(id) {
            return r.clone();
        }
        let res = self.fetch_revision(id);
        self.revisions.insert(*id, res.clone());
        res
    }

    fn fetch_revision(&self, id: &Digest) -> Result<RevisionRecord, String> {
        let fetch = self.store.get_revision(id).map_err(|e| e.to_string())?;
        if fetch.record.id != *id {
            return Err(format!("store returned a different revision for {}", id.short()));
        }
        verify_fetch(&fetch, self.trust).map_err(|e| e.to_string())?;
        self.check_extends(&fetch.tree_head)?;
        Ok(fetch.record)
    }

    /// `older` must be a prefix of the log as it is now.
    fn check_extends(&self, older: &SignedTreeHead) -> Result<(), String> {
        let (old, new) = if older.tree_size <= self.head.tree_size {
            (older, &self.head)
        } else {
            (&self.head, older)
        };
        if old.tree_size == 0 {
            return Ok(());
        }
        let proof = self.store.consistency(old.tree_size, new.tree_size).map_err(|e| e.to_string())?;
        if verify_consistency(&old.root_hash, &new.root_hash, &proof) {
            Ok(())
        } else {
            Err(format!(
                "log at size {} is not consistent with size {}",
                old.tree_size, new.tree_size
            ))
        }
    }

    fn rulesheet(&mut self, owner: &str, hash: &Digest) -> Result<Rulesheet, String> {
        let key = (owner.to_string(), *hash);
        if let Some(r) = self.rulesheets.get(&key) {
            return r.clone();
        }
        let res = self
            .store
            .get_rulesheet(owner, hash)
            .map_err(|e| e.to_string())
            .and_then(|e| {
                e.verify(self.trust)?;
                if e.owner != owner {
                    return Err(format!("rulesheet {} belongs to '{}'", hash.short(), e.owner));
                }
                let rs = e.parse()?;
                if rs.source_hash != *hash {
                    return Err(format!("rulesheet {} reparses to a different hash", hash.short()));
                }
                Ok(rs)
            });
        self.rulesheets.insert(key, res.clone());
        res
    }

    /// Claims of `rev` plus those of the revisions it includes.
    fn facts_of(&mut self, rev: &RevisionRecord) -> Result<KnowledgeBase, String> {
        let mut claims = rev.body.claims.clone();
        for inc in &rev.body.includes {
            claims.extend(self.revision(inc)?.body.claims);
        }
        Ok(KnowledgeBase::from_claims(claims))
    }

    /// Audits `atom` inside revision `rev_id`.
    pub fn audit_in(&mut self, rev_id: &Digest, atom: &GroundAtom) -> Result<AuditNode, String> {
        let rev = self.revision(rev_id)?;
        let claim = rev
            .find(atom)
            .cloned()
            .ok_or_else(|| format!("{atom} is not in revision {}", rev_id.short()))?;
        Ok(self.node(&rev, &claim))
    }

    fn node(&mut self, rev: &RevisionRecord, claim: &Claim) -> AuditNode {
        let key = (rev.id, claim.claim_id());
        if let Some(n) = self.memo.get(&key) {
            return n.clone();
        }
        let mut children = Vec::new();
        let failure = self.check(rev, claim, &mut children).err();
        let node = AuditNode {
            atom: claim.atom.to_string(),
            evidence: claim.evidence.kind_name(),
            revision: rev.id.short(),
            failure,
            children,
        };
        self.memo.insert(key, node.clone());
        node
    }

    /// Node for the first claim matching `pick` in `rev`, or in one of its
    /// includes wrapped in a log-inclusion node.
    fn premise(&mut self, rev: &RevisionRecord, pick: impl Fn(&Claim) -> bool) -> Result<Option<(AuditNode, GroundAtom)>, String> {
        if let Some(p) = rev.body.claims.iter().find(|c| pick(c)).cloned() {
            return Ok(Some((self.node(rev, &p), p.atom)));
        }
        for inc in &rev.body.includes {
            let inc_rev = self.revision(inc)?;
            if let Some(p) = inc_rev.body.claims.iter().find(|c| pick(c)).cloned() {
                let origin = self.node(&inc_rev, &p);
                let node = AuditNode {
                    atom: p.atom.to_string(),
                    evidence: "log_inclusion",
                    revision: inc_rev.id.short(),
                    failure: None,
                    children: vec![origin],
                };
                return Ok(Some((node, p.atom)));
            }
        }
        Ok(None)
    }

    fn rule_in_rulesheet(&mut self, rev: &RevisionRecord, rule: &crate::lang::Rule) -> Result<(), String> {
        let rs = self.rulesheet(&rev.body.owner, &rev.body.rulesheet_hash)?;
        if rs.rules.contains(rule) {
            Ok(())
        } else {
            Err(format!("rule `{rule}` is not in the owner's rulesheet"))
        }
    }

    fn check(&mut self, rev: &RevisionRecord, claim: &Claim, children: &mut Vec<AuditNode>) -> Result<(), String> {
        match &claim.evidence {
            Evidence::DirectAssertion { signer, signature } => {
                if *signer != claim.atom.principal {
                    return Err(format!("asserted by '{signer}' on behalf of '{}'", claim.atom.principal));
                }
                if !self.trust.verify(signer, claim.atom.canonical().as_bytes(), signature) {
                    return Err(format!("signature by '{signer}' does not verify"));
                }
                Ok(())
            }
            Evidence::DerivedByRule { rule, substitution, premises } => {
                self.rule_in_rulesheet(rev, rule)?;
                let mut atoms = Vec::new();
                for id in premises {
                    let (node, atom) = self
                        .premise(rev, |c| c.claim_id() == *id)?
                        .ok_or_else(|| format!("premise {} not found in revision or its includes", id.short()))?;
                    children.push(node);
                    atoms.push(atom);
                }
                let refs: Vec<&GroundAtom> = atoms.iter().collect();
                check_rule_instance(rule, substitution, &claim.atom, &refs)
            }
            Evidence::CarriedByNextRule { rule, substitution, source_revision } => {
                self.rule_in_rulesheet(rev, rule)?;
                if rev.body.supersedes != Some(*source_revision) {
                    return Err(format!("carried from {} which this revision does not supersede", source_revision.short()));
                }
                let source = self.revision(source_revision)?;
                let facts = self.facts_of(&source)?;
                check_carried(rule, substitution, claim, &facts)?;
                for body in rule.relational_body() {
                    let Some(atom) = instantiate_pattern(body, substitution) else {
                        continue;
                    };
                    if let Some((node, _)) = self.premise(&source, |c| c.atom == atom)? {
                        children.push(node);
                    }
                }
                Ok(())
            }
            Evidence::LogInclusion { leaf_hash, proof, tree_head, .. } => {
                let key = self.trust.key(LOG_OPERATOR).ok_or("no log operator key")?;
                if !tree_head.verify(&key) {
                    return Err("tree head signature does not verify".into());
                }
                if proof.tree_size != tree_head.tree_size || !verify_inclusion(&tree_head.root_hash, leaf_hash, proof) {
                    return Err("inclusion proof does not verify".into());
                }
                self.check_extends(tree_head)
            }
        }
    }
}

/// Audits `atom` in the head revision of `owner`, after a full log scan.
pub fn audit_atom(store: &dyn ClaimStore, trust: &TrustStore, owner: &str, atom: &GroundAtom) -> Result<AuditReport, AuditError> {
    let (head, log_failures) = scan_log(store, trust)?;
    let owner_head = store.get_head(owner)?;
    let mut auditor = Auditor::new(store, trust)?;
    let tree = match auditor.audit_in(&owner_head.revision_id, atom) {
        Ok(t) => t,
        Err(e) if e.contains("is not in revision") => {
            return Err(AuditError::NotInHead {
                atom: atom.to_string(),
                owner: owner.to_string(),
                revision: owner_head.revision_id.short(),
            })
        }
        Err(e) => AuditNode {
            atom: atom.to_string(),
            evidence: "revision",
            revision: owner_head.revision_id.short(),
            failure: Some(e),
            children: Vec::new(),
        },
    };
    Ok(AuditReport {
        log_size: head.tree_size,
        log_failures,
        tree: Some(tree),
    })
}

/// Audits every claim of every owner's head revision.
pub fn audit_heads(store: &dyn ClaimStore, trust: &TrustStore, owners: &[String]) -> Result<(usize, Vec<String>), StoreError> {
    let (_, mut failures) = scan_log(store, trust)?;
    let mut auditor = Auditor::new(store, trust)?;
    let mut checked = 0;
    for owner in owners {
        let head = match store.get_head(owner) {
            Ok(h) => h,
            Err(StoreError::NotFound(_)) => continue,
            Err(e) => return Err(e),
        };
        let rev = match auditor.revision(&head.revision_id) {
            Ok(r) => r,
            Err(e) => {
                failures.push(format!("head of '{owner}': {e}"));
                continue;
            }
        };
        for c in &rev.body.claims {
            checked += 1;
            let node = auditor.node(&rev, c);
            failures.extend(node.failures());
        }
    }
    Ok((checked, failures))
}

#[derive(Debug, Clone, Serialize)]
pub struct LogVerdict {
    pub ok: bool,
    pub current: SignedTreeHead,
    pub messages: Vec<String>,
}

/// Checks that every cached tree head is a prefix of each later one and of
/// the current log.
pub fn verify_log(store: &dyn ClaimStore, trust: &TrustStore, cached: &[SignedTreeHead]) -> Result<LogVerdict, StoreError> {
    let current = store.log_root()?;
    let mut messages = Vec::new();
    let key = trust.key(LOG_OPERATOR);
    let mut heads: Vec<&SignedTreeHead> = cached.iter().collect();
    heads.sort_by_key(|h| h.tree_size);
    heads.push(&current);
    for h in &heads {
        if !key.is_some_and(|k| h.verify(&k)) {
            messages.push(format!("tree head at size {} has an invalid signature", h.tree_size));
        }
    }
    for pair in heads.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        if a.tree_size > b.tree_size {
            messages.push(format!("log shrank from {} to {}", a.tree_size, b.tree_size));
            continue;
        }
        if a.tree_size == 0 {
            continue;
        }
        let ok = store
            .consistency(a.tree_size, b.tree_size)
            .map(|p| verify_consistency(&a.root_hash, &b.root_hash, &p))
            .unwrap_or(false);
        if !ok {
            messages.push(format!(
                "split-view/tamper suspected: size {} ({}) is not a prefix of size {} ({})",
                a.tree_size,
                a.root_hash.short(),
                b.tree_size,
                b.root_hash.short()
            ));
        }
    }
    Ok(LogVerdict {
        ok: messages.is_empty(),
        current,
        messages,
    })
}
