//! Digest and signature primitives.
//!
//! Both are selected by an identifier carried in [`Params`](crate::Params) so
//! that the byte layouts stay independent of any one algorithm. Only 256-bit
//! digests are accepted because every hash in the protocol is a [`Hash256`].

use std::fmt;
use std::str::FromStr;

use ed25519_dalek::{Signer, SigningKey, VerifyingKey};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256, Sha512_256};

use crate::error::{Error, Result};
use crate::types::{Hash256, PublicKey};

/// Length of a key seed accepted by [`keygen`].
pub const SEED_LEN: usize = 32;

/// Length of an Ed25519 signature.
pub const SIGNATURE_LEN: usize = 64;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum HashAlgo {
    #[default]
    Sha256,
    Sha512_256,
}

impl HashAlgo {
    pub fn id(self) -> &'static str {
        match self {
            HashAlgo::Sha256 => "sha256",
            HashAlgo::Sha512_256 => "sha512-256",
        }
    }

    pub(crate) fn wire_tag(self) -> u8 {
        match self {
            HashAlgo::Sha256 => 1,
            HashAlgo::Sha512_256 => 2,
        }
    }

    pub(crate) fn from_wire_tag(tag: u8) -> Result<Self> {
        match tag {
            1 => Ok(HashAlgo::Sha256),
            2 => Ok(HashAlgo::Sha512_256),
            other => Err(Error::UnsupportedHash(format!("wire tag {other}"))),
        }
    }
}

impl FromStr for HashAlgo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sha256" | "sha-256" => Ok(HashAlgo::Sha256),
            "sha512-256" | "sha512/256" | "sha-512/256" => Ok(HashAlgo::Sha512_256),
            _ => Err(Error::UnsupportedHash(s.to_string())),
        }
    }
}

impl TryFrom<String> for HashAlgo {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<HashAlgo> for String {
    fn from(a: HashAlgo) -> String {
        a.id().to_string()
    }
}

impl fmt::Display for HashAlgo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum SigAlgo {
    #[default]
    Ed25519,
}

impl SigAlgo {
    pub fn id(self) -> &'static str {
        match self {
            SigAlgo::Ed25519 => "ed25519",
        }
    }

    pub(crate) fn wire_tag(self) -> u8 {
        1
    }

    pub(crate) fn from_wire_tag(tag: u8) -> Result<Self> {
        match tag {
            1 => Ok(SigAlgo::Ed25519),
            other => Err(Error::UnsupportedSignature(format!("wire tag {other}"))),
        }
    }
}

impl FromStr for SigAlgo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ed25519" => Ok(SigAlgo::Ed25519),
            _ => Err(Error::UnsupportedSignature(s.to_string())),
        }
    }
}

impl TryFrom<String> for SigAlgo {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<SigAlgo> for String {
    fn from(a: SigAlgo) -> String {
        a.id().to_string()
    }
}

impl fmt::Display for SigAlgo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

/// Digest of `data` under `algo`.
pub fn hash_bytes(data: &[u8], algo: HashAlgo) -> Hash256 {
    hash_parts(&[data], algo)
}

/// Like [`hash_bytes`], selecting the algorithm by its identifier string.
pub fn hash_bytes_with_id(data: &[u8], algo_id: &str) -> Result<Hash256> {
    Ok(hash_bytes(data, algo_id.parse()?))
}

/// Digest of the concatenation of `parts`, without materializing it.
pub fn hash_parts(parts: &[&[u8]], algo: HashAlgo) -> Hash256 {
    fn run<D: Digest>(parts: &[&[u8]]) -> Hash256 {
        let mut h = D::new();
        for p in parts {
            h.update(p);
        }
        let out = h.finalize();
        let mut digest = [0u8; 32];
        digest.copy_from_slice(&out);
        Hash256(digest)
    }
    match algo {
        HashAlgo::Sha256 => run::<Sha256>(parts),
        HashAlgo::Sha512_256 => run::<Sha512_256>(parts),
    }
}

/// Per-ticket signing key. One keypair is generated for every ticket search.
#[derive(Clone)]
pub struct Keypair {
    signing: SigningKey,
}

impl Keypair {
    pub fn from_seed(seed: &[u8]) -> Result<Self> {
        let seed: [u8; SEED_LEN] = seed.try_into().map_err(|_| Error::SeedLength {
            expected: SEED_LEN,
            found: seed.len(),
        })?;
        Ok(Self {
            signing: SigningKey::from_bytes(&seed),
        })
    }

    pub fn pubkey(&self) -> PublicKey {
        PublicKey(self.signing.verifying_key().to_bytes())
    }

    pub fn secret_bytes(&self) -> [u8; SEED_LEN] {
        self.signing.to_bytes()
    }

    pub fn sign(&self, message: &[u8]) -> Vec<u8> {
        self.signing.sign(message).to_bytes().to_vec()
    }
}

impl fmt::Debug for Keypair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Keypair")
            .field("pubkey", &self.pubkey())
            .finish_non_exhaustive()
    }
}

/// Deterministic keypair from a 32-byte seed.
pub fn keygen(seed: &[u8]) -> Result<Keypair> {
    Keypair::from_seed(seed)
}

pub fn sign(message: &[u8], key: &Keypair) -> Vec<u8> {
    key.sign(message)
}

/// Signs with a raw secret key. Fails if the key is not [`SEED_LEN`] bytes.
pub fn sign_with_secret(message: &[u8], secret: &[u8]) -> Result<Vec<u8>> {
    Ok(Keypair::from_seed(secret)?.sign(message))
}

/// True iff `sig` is a valid signature of `message` under `pubkey`.
/// Malformed keys or signatures yield `false`.
pub fn verify(message: &[u8], sig: &[u8], pubkey: &PublicKey) -> bool {
    let Ok(sig) = ed25519_dalek::Signature::from_slice(sig) else {
        return false;
    };
    let Ok(vk) = VerifyingKey::from_bytes(&pubkey.0) else {
        return false;
    };
    vk.verify_strict(message, &sig).is_ok()
}
