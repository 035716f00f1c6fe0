//! Cyberlog: auditable runtime monitoring.
//!
//! A rulesheet ([`lang`]) is evaluated bottom-up by an evidence-carrying
//! knowledge base ([`engine`]). Monitors ([`monitor`]) ingest events, commit
//! their knowledge as signed revisions ([`revision`]) into a claim database
//! ([`claimdb`]) backed by an RFC 6962 Merkle log ([`claimlog`]), and include
//! revisions of other principals guarded by inclusion proofs.

pub mod audit;
pub mod claimdb;
pub mod claimlog;
pub mod digest;
pub mod engine;
pub mod harness;
pub mod identity;
pub mod lang;
pub mod monitor;
pub mod revision;

pub use digest::Digest;
