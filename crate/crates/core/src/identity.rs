//! Principal identities: Ed25519 keys plus certificate-style subject and
//! issuer strings, and a trust store mapping principal names to public keys.

use std::fmt;
use std::path::Path;

use ed25519_dalek::{Signature, Signer, SigningKey, Verifier, VerifyingKey};
use serde::{Deserialize, Serialize};

use crate::digest::hex_bytes;
use crate::engine::GroundAtom;

#[derive(Debug, thiserror::Error)]
pub enum IdentityError {
    #[error("identity '{0}' has no private key")]
    MissingPrivateKey(String),
    #[error("unknown principal '{0}'")]
    UnknownPrincipal(String),
    #[error("trust store: {0}")]
    TrustStore(String),
}

#[derive(Clone)]
pub struct Identity {
    pub name: String,
    pub subject: String,
    pub issuer: String,
    verifying: VerifyingKey,
    signing: Option<SigningKey>,
}

impl fmt::Debug for Identity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Identity")
            .field("name", &self.name)
            .field("public_key", &hex::encode(self.public_key()))
            .field("has_private_key", &self.signing.is_some())
            .finish()
    }
}

/// Creates a keypair. A seed makes the key deterministic.
pub fn generate_identity(name: &str, subject: &str, issuer: &str, seed: Option<[u8; 32]>) -> Identity {
    let seed = seed.unwrap_or_else(rand::random);
    let signing = SigningKey::from_bytes(&seed);
    Identity {
        name: name.to_string(),
        subject: subject.to_string(),
        issuer: issuer.to_string(),
        verifying: signing.verifying_key(),
        signing: Some(signing),
    }
}

pub fn verify_signature(public_key: &[u8; 32], message: &[u8], signature: &[u8]) -> bool {
    let Ok(key) = VerifyingKey::from_bytes(public_key) else {
        return false;
    };
    let Ok(sig) = Signature::from_slice(signature) else {
        return false;
    };
    key.verify(message, &sig).is_ok()
}

impl Identity {
    pub fn from_public_key(name: &str, subject: &str, issuer: &str, public_key: &[u8; 32]) -> Result<Self, IdentityError> {
        let verifying = VerifyingKey::from_bytes(public_key)
            .map_err(|e| IdentityError::TrustStore(format!("bad public key for '{name}': {e}")))?;
        Ok(Identity {
            name: name.to_string(),
            subject: subject.to_string(),
            issuer: issuer.to_string(),
            verifying,
            signing: None,
        })
    }

    pub fn public_key(&self) -> [u8; 32] {
        self.verifying.to_bytes()
    }

    pub fn has_private_key(&self) -> bool {
        self.signing.is_some()
    }

    pub fn sign(&self, message: &[u8]) -> Result<Vec<u8>, IdentityError> {
        let key = self
            .signing
            .as_ref()
            .ok_or_else(|| IdentityError::MissingPrivateKey(self.name.clone()))?;
        Ok(key.sign(message).to_bytes().to_vec())
    }

    pub fn verify(&self, message: &[u8], signature: &[u8]) -> bool {
        verify_signature(&self.public_key(), message, signature)
    }

    pub fn trust_entry(&self) -> TrustEntry {
        TrustEntry {
            name: self.name.clone(),
            subject: self.subject.clone(),
            issuer: self.issuer.clone(),
            public_key: self.public_key().to_vec(),
        }
    }
}

/// An atom signed by the principal attesting it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignedClaim {
    pub atom: GroundAtom,
    pub signer: String,
    #[serde(with = "hex_bytes")]
    pub signature: Vec<u8>,
}

pub fn sign_claim(id: &Identity, atom: &GroundAtom) -> Result<SignedClaim, IdentityError> {
    Ok(SignedClaim {
        atom: atom.clone(),
        signer: id.name.clone(),
        signature: id.sign(atom.canonical().as_bytes())?,
    })
}

pub fn verify_claim(id: &Identity, sc: &SignedClaim) -> bool {
    sc.signer == id.name && id.verify(sc.atom.canonical().as_bytes(), &sc.signature)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrustEntry {
    pub name: String,
    pub subject: String,
    pub issuer: String,
    #[serde(with = "hex_bytes")]
    pub public_key: Vec<u8>,
}

/// Static principal → public key mapping shared by monitors, the claim
/// database and auditors.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrustStore {
    pub principals: Vec<TrustEntry>,
}

impl TrustStore {
    pub fn from_identities<'a>(ids: impl IntoIterator<Item = &'a Identity>) -> Self {
        TrustStore {
            principals: ids.into_iter().map(Identity::trust_entry).collect(),
        }
    }

    pub fn add(&mut self, entry: TrustEntry) {
        self.principals.retain(|e| e.name != entry.name);
        self.principals.push(entry);
    }

    pub fn key(&self, name: &str) -> Option<[u8; 32]> {
        self.principals
            .iter()
            .find(|e| e.name == name)
            .and_then(|e| e.public_key.as_slice().try_into().ok())
    }

    pub fn identity(&self, name: &str) -> Result<Identity, IdentityError> {
        let e = self
            .principals
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| IdentityError::UnknownPrincipal(name.to_string()))?;
        let key: [u8; 32] = e
            .public_key
            .as_slice()
            .try_into()
            .map_err(|_| IdentityError::TrustStore(format!("key for '{name}' is not 32 bytes")))?;
        Identity::from_public_key(&e.name, &e.subject, &e.issuer, &key)
    }

    pub fn verify(&self, name: &str, message: &[u8], signature: &[u8]) -> bool {
        self.key(name)
            .is_some_and(|k| verify_signature(&k, message, signature))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, IdentityError> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| IdentityError::TrustStore(format!("{}: {e}", path.as_ref().display())))?;
        serde_json::from_str(&text).map_err(|e| IdentityError::TrustStore(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), IdentityError> {
        let text = serde_json::to_string_pretty(self).map_err(|e| IdentityError::TrustStore(e.to_string()))?;
        std::fs::write(path.as_ref(), text)
            .map_err(|e| IdentityError::TrustStore(format!("{}: {e}", path.as_ref().display())))
    }
}
