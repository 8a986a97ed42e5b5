//! Signing backends: ECDSA over P-256, and a keyed SHA-256 tag used where
//! only the round-trip properties matter.

use std::collections::HashMap;

use p256::ecdsa::signature::{Signer, Verifier};
use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::types::{Address, Digest, SignatureBytes, StationId};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum KeyError {
    #[error("no key registered for station {0}")]
    Unknown(StationId),
    #[error("malformed key material")]
    Malformed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SignerBackend {
    Ecdsa,
    #[default]
    Null,
}

impl SignerBackend {
    fn tag(self) -> u8 {
        match self {
            SignerBackend::Ecdsa => 1,
            SignerBackend::Null => 2,
        }
    }
}

#[derive(Clone)]
pub enum SigningKey {
    Ecdsa(p256::ecdsa::SigningKey),
    Null([u8; 32]),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum VerifyingKey {
    Ecdsa(p256::ecdsa::VerifyingKey),
    /// The tag backend is symmetric: verifying means recomputing.
    Null([u8; 32]),
}

impl std::fmt::Debug for SigningKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SigningKey::Ecdsa(_) => f.write_str("SigningKey::Ecdsa(..)"),
            SigningKey::Null(_) => f.write_str("SigningKey::Null(..)"),
        }
    }
}

fn null_tag(secret: &[u8; 32], payload: &[u8]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(secret);
    h.update(payload);
    h.finalize().into()
}

impl SigningKey {
    /// Deterministic key derivation from an arbitrary seed.
    pub fn from_seed(backend: SignerBackend, seed: &[u8]) -> Self {
        let mut material: [u8; 32] = Sha256::digest(seed).into();
        match backend {
            SignerBackend::Null => SigningKey::Null(material),
            SignerBackend::Ecdsa => loop {
                // out-of-range scalars are astronomically rare; rehash if hit
                match p256::ecdsa::SigningKey::from_bytes(&material.into()) {
                    Ok(k) => return SigningKey::Ecdsa(k),
                    Err(_) => material = Sha256::digest(material).into(),
                }
            },
        }
    }

    /// Convenience: key for a station under a given backend and domain label.
    pub fn for_station(backend: SignerBackend, domain: &str, id: StationId) -> Self {
        let mut seed = domain.as_bytes().to_vec();
        seed.extend_from_slice(&id.0.to_be_bytes());
        SigningKey::from_seed(backend, &seed)
    }

    pub fn backend(&self) -> SignerBackend {
        match self {
            SigningKey::Ecdsa(_) => SignerBackend::Ecdsa,
            SigningKey::Null(_) => SignerBackend::Null,
        }
    }

    pub fn sign(&self, payload: &[u8]) -> SignatureBytes {
        match self {
            SigningKey::Ecdsa(k) => {
                let sig: p256::ecdsa::Signature = k.sign(payload);
                SignatureBytes(sig.to_bytes().to_vec())
            }
            SigningKey::Null(secret) => SignatureBytes(null_tag(secret, payload).to_vec()),
        }
    }

    pub fn verifying_key(&self) -> VerifyingKey {
        match self {
            SigningKey::Ecdsa(k) => VerifyingKey::Ecdsa(*k.verifying_key()),
            SigningKey::Null(secret) => VerifyingKey::Null(*secret),
        }
    }
}

impl VerifyingKey {
    pub fn verify(&self, payload: &[u8], sig: &SignatureBytes) -> bool {
        match self {
            VerifyingKey::Ecdsa(k) => match p256::ecdsa::Signature::from_slice(&sig.0) {
                Ok(s) => k.verify(payload, &s).is_ok(),
                Err(_) => false,
            },
            VerifyingKey::Null(secret) => sig.0 == null_tag(secret, payload),
        }
    }

    pub fn backend(&self) -> SignerBackend {
        match self {
            VerifyingKey::Ecdsa(_) => SignerBackend::Ecdsa,
            VerifyingKey::Null(_) => SignerBackend::Null,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        match self {
            VerifyingKey::Ecdsa(k) => k.to_encoded_point(true).as_bytes().to_vec(),
            VerifyingKey::Null(secret) => secret.to_vec(),
        }
    }

    pub fn from_bytes(backend: SignerBackend, bytes: &[u8]) -> Result<Self, KeyError> {
        match backend {
            SignerBackend::Ecdsa => p256::ecdsa::VerifyingKey::from_sec1_bytes(bytes)
                .map(VerifyingKey::Ecdsa)
                .map_err(|_| KeyError::Malformed),
            SignerBackend::Null => bytes
                .try_into()
                .map(VerifyingKey::Null)
                .map_err(|_| KeyError::Malformed),
        }
    }

    /// Token address bound to this key.
    pub fn address(&self) -> Address {
        Address(Digest(Sha256::digest(self.to_bytes()).into()))
    }

    /// Minimal certificate: backend tag, key length, key bytes, then zero
    /// filler up to `size` bytes to model a real certificate's footprint.
    pub fn certificate(&self, size: usize) -> Vec<u8> {
        let key = self.to_bytes();
        let mut out = Vec::with_capacity(size.max(key.len() + 2));
        out.push(self.backend().tag());
        out.push(key.len() as u8);
        out.extend_from_slice(&key);
        if out.len() < size {
            out.resize(size, 0);
        }
        out
    }

    pub fn from_certificate(cert: &[u8]) -> Result<Self, KeyError> {
        let (&tag, rest) = cert.split_first().ok_or(KeyError::Malformed)?;
        let backend = match tag {
            1 => SignerBackend::Ecdsa,
            2 => SignerBackend::Null,
            _ => return Err(KeyError::Malformed),
        };
        let (&len, rest) = rest.split_first().ok_or(KeyError::Malformed)?;
        let key = rest.get(..len as usize).ok_or(KeyError::Malformed)?;
        VerifyingKey::from_bytes(backend, key)
    }
}

/// Station identities and their message-signing keys.
#[derive(Debug, Clone, Default)]
pub struct KeyRegistry {
    keys: HashMap<StationId, SigningKey>,
}

impl KeyRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, id: StationId, key: SigningKey) {
        self.keys.insert(id, key);
    }

    /// Registers deterministic keys for every id under one backend.
    pub fn with_stations(backend: SignerBackend, ids: impl IntoIterator<Item = StationId>) -> Self {
        let mut r = KeyRegistry::new();
        for id in ids {
            r.register(id, SigningKey::for_station(backend, "its-station", id));
        }
        r
    }

    pub fn signing_key(&self, id: StationId) -> Result<&SigningKey, KeyError> {
        self.keys.get(&id).ok_or(KeyError::Unknown(id))
    }

    pub fn sign(&self, id: StationId, payload: &[u8]) -> Result<SignatureBytes, KeyError> {
        Ok(self.signing_key(id)?.sign(payload))
    }

    pub fn verify(&self, id: StationId, payload: &[u8], sig: &SignatureBytes) -> Result<bool, KeyError> {
        Ok(self.signing_key(id)?.verifying_key().verify(payload, sig))
    }

    pub fn contains(&self, id: StationId) -> bool {
        self.keys.contains_key(&id)
    }
}
