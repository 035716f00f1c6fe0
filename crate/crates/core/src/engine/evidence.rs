use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{EngineError, GroundAtom, Value};
use crate::claimlog::{InclusionProof, SignedTreeHead};
use crate::digest::hex_bytes;
use crate::identity::Identity;
use crate::lang::Rule;
use crate::Digest;

/// Variable bindings of one rule instance.
pub type Substitution = BTreeMap<String, Value>;

/// Why a claim is believed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Evidence {
    /// Rule instance; `premises` are the claim ids of the instantiated
    /// relational body atoms, in body order.
    DerivedByRule {
        rule: Rule,
        substitution: Substitution,
        premises: Vec<Digest>,
    },
    /// Signature by `signer` over the canonical atom.
    DirectAssertion {
        signer: String,
        #[serde(with = "hex_bytes")]
        signature: Vec<u8>,
    },
    /// The claim is part of a logged revision; `leaf_hash` is the hash of the
    /// revision's log entry and `proof` places it under `tree_head`.
    LogInclusion {
        revision_id: Digest,
        leaf_hash: Digest,
        proof: InclusionProof,
        tree_head: SignedTreeHead,
    },
    /// Carried into a fresh staging revision by a next-rule evaluated over
    /// `source_revision`.
    CarriedByNextRule {
        rule: Rule,
        substitution: Substitution,
        source_revision: Digest,
    },
}

impl Evidence {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Evidence::DerivedByRule { .. } => "derived_by_rule",
            Evidence::DirectAssertion { .. } => "direct_assertion",
            Evidence::LogInclusion { .. } => "log_inclusion",
            Evidence::CarriedByNextRule { .. } => "carried_by_next_rule",
        }
    }
}

#[derive(Serialize, Deserialize)]
struct ClaimRecord {
    atom: GroundAtom,
    evidence: Evidence,
}

/// A ground atom paired with its evidence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "ClaimRecord", into = "ClaimRecord")]
pub struct Claim {
    pub atom: GroundAtom,
    pub evidence: Evidence,
    claim_id: Digest,
}

impl From<ClaimRecord> for Claim {
    fn from(r: ClaimRecord) -> Self {
        Claim::new(r.atom, r.evidence)
    }
}

impl From<Claim> for ClaimRecord {
    fn from(c: Claim) -> Self {
        ClaimRecord {
            atom: c.atom,
            evidence: c.evidence,
        }
    }
}

impl Claim {
    pub fn new(atom: GroundAtom, evidence: Evidence) -> Self {
        let claim_id = atom.claim_id();
        Claim {
            atom,
            evidence,
            claim_id,
        }
    }

    /// Signs `atom` as a direct assertion of `id`.
    pub fn asserted(id: &Identity, atom: GroundAtom) -> Result<Self, EngineError> {
        let signature = id
            .sign(atom.canonical().as_bytes())
            .map_err(|e| EngineError::InvalidEvidence(e.to_string()))?;
        Ok(Claim::new(
            atom,
            Evidence::DirectAssertion {
                signer: id.name.clone(),
                signature,
            },
        ))
    }

    pub fn claim_id(&self) -> Digest {
        self.claim_id
    }
}

/// Line-delimited export: one `{"atom": ..., "evidence": ...}` object per line.
pub fn export_claims<'a>(claims: impl IntoIterator<Item = &'a Claim>) -> String {
    let mut out = String::new();
    for c in claims {
        out.push_str(&serde_json::to_string(c).expect("claims serialize"));
        out.push('\n');
    }
    out
}

pub fn import_claims(text: &str) -> Result<Vec<Claim>, EngineError> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| EngineError::Parse(format!("line {}: {e}", i + 1))))
        .collect()
}
