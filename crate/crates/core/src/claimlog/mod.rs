//! Append-only Merkle log backing the claim database.
//!
//! Leaves and interior nodes follow RFC 6962. Entries can be persisted to a
//! file of `u32` little-endian length-prefixed records; the hash cache is
//! rebuilt from that file on open.

mod merkle;

use std::fs::{File, OpenOptions};
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use merkle::{
    empty_root, leaf_hash, node_hash, verify_consistency, verify_inclusion, ConsistencyProof,
    InclusionProof, MerkleTree,
};

use crate::digest::hex_bytes;
use crate::identity::{verify_signature, Identity, IdentityError};
use crate::Digest;

/// Trust-store name under which the log operator's tree-head key is kept.
pub const LOG_OPERATOR: &str = "LOG";

#[derive(Debug, thiserror::Error)]
pub enum LogError {
    #[error("log storage: {0}")]
    Io(#[from] io::Error),
    #[error("corrupt log file at byte {offset}: {reason}")]
    Corrupt { offset: u64, reason: String },
    #[error("out of range: {0}")]
    OutOfRange(String),
    #[error("signing tree head: {0}")]
    Signing(#[from] IdentityError),
}

/// The log operator's signed statement of (size, root, time).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignedTreeHead {
    pub tree_size: u64,
    pub root_hash: Digest,
    pub timestamp: i64,
    #[serde(with = "hex_bytes")]
    pub signature: Vec<u8>,
}

impl SignedTreeHead {
    fn message(tree_size: u64, root_hash: &Digest, timestamp: i64) -> Vec<u8> {
        let mut m = Vec::with_capacity(48);
        m.extend_from_slice(&tree_size.to_be_bytes());
        m.extend_from_slice(root_hash.as_bytes());
        m.extend_from_slice(&timestamp.to_be_bytes());
        m
    }

    pub fn sign(tree_size: u64, root_hash: Digest, timestamp: i64, operator: &Identity) -> Result<Self, IdentityError> {
        let signature = operator.sign(&Self::message(tree_size, &root_hash, timestamp))?;
        Ok(SignedTreeHead {
            tree_size,
            root_hash,
            timestamp,
            signature,
        })
    }

    pub fn verify(&self, operator_key: &[u8; 32]) -> bool {
        verify_signature(
            operator_key,
            &Self::message(self.tree_size, &self.root_hash, self.timestamp),
            &self.signature,
        )
    }
}

pub struct MerkleLog {
    tree: MerkleTree,
    payloads: Vec<Vec<u8>>,
    file: Option<File>,
    path: Option<PathBuf>,
}

impl Default for MerkleLog {
    fn default() -> Self {
        Self::in_memory()
    }
}

impl MerkleLog {
    pub fn in_memory() -> Self {
        MerkleLog {
            tree: MerkleTree::new(),
            payloads: Vec::new(),
            file: None,
            path: None,
        }
    }

    /// Opens (or creates) a file-backed log and rebuilds the hash cache.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, LogError> {
        let path = path.as_ref().to_path_buf();
        let mut file = OpenOptions::new().read(true).append(true).create(true).open(&path)?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes)?;
        let mut log = MerkleLog {
            file: None,
            path: Some(path),
            ..Self::in_memory()
        };
        for payload in decode_records(&bytes)? {
            log.tree.push(leaf_hash(&payload));
            log.payloads.push(payload);
        }
        log.file = Some(file);
        Ok(log)
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn size(&self) -> u64 {
        self.tree.size()
    }

    pub fn append(&mut self, payload: &[u8]) -> Result<u64, LogError> {
        if let Some(f) = self.file.as_mut() {
            let len = u32::try_from(payload.len())
                .map_err(|_| LogError::OutOfRange(format!("payload of {} bytes", payload.len())))?;
            let mut rec = Vec::with_capacity(payload.len() + 4);
            rec.extend_from_slice(&len.to_le_bytes());
            rec.extend_from_slice(payload);
            f.write_all(&rec)?;
            f.sync_data()?;
        }
        let index = self.size();
        self.tree.push(leaf_hash(payload));
        self.payloads.push(payload.to_vec());
        Ok(index)
    }

    pub fn payload(&self, index: u64) -> Option<&[u8]> {
        self.payloads.get(index as usize).map(Vec::as_slice)
    }

    pub fn leaf_hash(&self, index: u64) -> Option<Digest> {
        self.tree.leaf(index)
    }

    pub fn root(&self, size: u64) -> Result<Digest, LogError> {
        self.tree
            .root(size)
            .ok_or_else(|| LogError::OutOfRange(format!("size {size} > {}", self.size())))
    }

    pub fn current_root(&self) -> Digest {
        self.tree.root(self.size()).expect("current size is in range")
    }

    pub fn prove_inclusion(&self, leaf_index: u64, tree_size: u64) -> Result<InclusionProof, LogError> {
        let path = self.tree.inclusion_path(leaf_index, tree_size).ok_or_else(|| {
            LogError::OutOfRange(format!("leaf {leaf_index} in tree of size {tree_size} (log size {})", self.size()))
        })?;
        Ok(InclusionProof {
            leaf_index,
            tree_size,
            path,
        })
    }

    pub fn prove_consistency(&self, old_size: u64, new_size: u64) -> Result<ConsistencyProof, LogError> {
        let path = self.tree.consistency_path(old_size, new_size).ok_or_else(|| {
            LogError::OutOfRange(format!("consistency {old_size} -> {new_size} (log size {})", self.size()))
        })?;
        Ok(ConsistencyProof {
            old_size,
            new_size,
            path,
        })
    }

    pub fn signed_tree_head(&self, operator: &Identity, timestamp: i64) -> Result<SignedTreeHead, LogError> {
        Ok(SignedTreeHead::sign(self.size(), self.current_root(), timestamp, operator)?)
    }
}

fn decode_records(bytes: &[u8]) -> Result<Vec<Vec<u8>>, LogError> {
    let mut out = Vec::new();
    let mut pos = 0usize;
    while pos < bytes.len() {
        let corrupt = |reason: &str| LogError::Corrupt {
            offset: pos as u64,
            reason: reason.to_string(),
        };
        let header: [u8; 4] = bytes
            .get(pos..pos + 4)
            .ok_or_else(|| corrupt("truncated length prefix"))?
            .try_into()
            .expect("4 bytes");
        let len = u32::from_le_bytes(header) as usize;
        let payload = bytes
            .get(pos + 4..pos + 4 + len)
            .ok_or_else(|| corrupt("record runs past end of file"))?;
        out.push(payload.to_vec());
        pos += 4 + len;
    }
    Ok(out)
}
