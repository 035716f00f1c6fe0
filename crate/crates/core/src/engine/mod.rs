//! Evidence-carrying knowledge base and bottom-up evaluation of Cyberlog
//! rules.
//!
//! Every stored [`Claim`] carries exactly one [`Evidence`] record; when an
//! atom is derivable in several ways the first derivation is kept.

mod eval;
mod evidence;
mod kb;
mod value;


pub use eval::{eval_builtin, format_substitution, instantiate as instantiate_pattern};
pub use evidence::{export_claims, import_claims, Claim, Evidence, Substitution};
pub use kb::{check_rule_instance, EvidenceTree, KnowledgeBase, SaturateStats};
pub use value::{GroundAtom, Value};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EngineError {
    #[error("invalid evidence: {0}")]
    InvalidEvidence(String),
    #[error("arithmetic overflow in rule `{rule}` under {substitution}")]
    Overflow { rule: String, substitution: String },
    #[error("query patterns must be relational atoms")]
    BuiltinQuery,
    #[error("unknown builtin `{0}`")]
    UnknownBuiltin(String),
    #[error("no claim for {0}")]
    Absent(String),
    #[error("{0}")]
    Parse(String),
}
