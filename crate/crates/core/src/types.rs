//! Domain types and their canonical byte layouts.
//!
//! All fixed-width integers are big-endian.
//!
//! ```text
//! ticket = tip_hashes[0] .. tip_hashes[n-1] (32 bytes each) | pubkey (32) | nonce (u64)
//! block  = chain_index (u32) | prev_hash (32) | payload_len (u32) | payload
//!        | ticket (32n + 40) | signature_len (u16) | signature
//! ```
//!
//! The block id is the hash of `chain_index | prev_hash | H(payload) | H(ticket)`
//! and therefore never covers the signature.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::crypto::{self, HashAlgo, SigAlgo};
use crate::error::{Error, Result};

pub const HASH_LEN: usize = 32;
pub const PUBKEY_LEN: usize = 32;

/// Largest supported strand exponent. A ticket embeds one hash per strand, so
/// `p = 20` already means 32 MiB tickets.
pub const MAX_STRAND_EXPONENT: u32 = 20;

/// A 256-bit digest.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Hash256(pub [u8; HASH_LEN]);

impl Hash256 {
    pub const ZERO: Hash256 = Hash256([0u8; HASH_LEN]);

    pub fn as_bytes(&self) -> &[u8; HASH_LEN] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self> {
        let mut out = [0u8; HASH_LEN];
        hex::decode_to_slice(s, &mut out)
            .map_err(|e| Error::Decode(format!("bad hash hex `{s}`: {e}")))?;
        Ok(Hash256(out))
    }
}

impl fmt::Debug for Hash256 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Hash256({})", self.to_hex())
    }
}

impl fmt::Display for Hash256 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl FromStr for Hash256 {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Hash256::from_hex(s)
    }
}

impl Serialize for Hash256 {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Hash256 {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Hash256::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

/// Ticket public key (Ed25519 verification key bytes).
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct PublicKey(pub [u8; PUBKEY_LEN]);

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PublicKey({})", hex::encode(self.0))
    }
}

/// Strand identifier, `0 <= index < n`.
#[derive(
    Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct ChainIndex(pub u32);

impl ChainIndex {
    pub fn new(index: u32, params: &Params) -> Result<Self> {
        if (index as usize) < params.strand_count() {
            Ok(ChainIndex(index))
        } else {
            Err(Error::IndexOutOfRange {
                index: index as u64,
                count: params.strand_count() as u64,
            })
        }
    }

    pub fn get(self) -> u32 {
        self.0
    }

    pub fn as_usize(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for ChainIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Protocol constants.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawParams", into = "RawParams")]
pub struct Params {
    strand_exponent: u32,
    difficulty_bits: u32,
    hash_algo: HashAlgo,
    sig_algo: SigAlgo,
}

impl Params {
    /// Params with the default algorithms (SHA-256, Ed25519).
    pub fn new(strand_exponent: u32, difficulty_bits: u32) -> Result<Self> {
        Self::with_algorithms(
            strand_exponent,
            difficulty_bits,
            HashAlgo::default(),
            SigAlgo::default(),
        )
    }

    pub fn with_algorithms(
        strand_exponent: u32,
        difficulty_bits: u32,
        hash_algo: HashAlgo,
        sig_algo: SigAlgo,
    ) -> Result<Self> {
        if strand_exponent > MAX_STRAND_EXPONENT {
            return Err(Error::InvalidParams(format!(
                "strand exponent {strand_exponent} exceeds {MAX_STRAND_EXPONENT}"
            )));
        }
        if difficulty_bits as u64 + strand_exponent as u64 > 256 {
            return Err(Error::InvalidParams(format!(
                "difficulty bits {difficulty_bits} plus strand exponent {strand_exponent} exceed 256"
            )));
        }
        Ok(Self {
            strand_exponent,
            difficulty_bits,
            hash_algo,
            sig_algo,
        })
    }

    pub fn strand_exponent(&self) -> u32 {
        self.strand_exponent
    }

    pub fn strand_count(&self) -> usize {
        1usize << self.strand_exponent
    }

    pub fn difficulty_bits(&self) -> u32 {
        self.difficulty_bits
    }

    pub fn hash_algo(&self) -> HashAlgo {
        self.hash_algo
    }

    pub fn sig_algo(&self) -> SigAlgo {
        self.sig_algo
    }

    /// Same params with a different difficulty.
    pub fn with_difficulty(&self, difficulty_bits: u32) -> Result<Self> {
        Self::with_algorithms(
            self.strand_exponent,
            difficulty_bits,
            self.hash_algo,
            self.sig_algo,
        )
    }

    /// Length of a serialized ticket: `32n + 40`.
    pub fn ticket_len(&self) -> usize {
        HASH_LEN * self.strand_count() + PUBKEY_LEN + 8
    }

    pub fn hash(&self, data: &[u8]) -> Hash256 {
        crypto::hash_bytes(data, self.hash_algo)
    }
}

/// Config-file form of [`Params`]. `strand_count_n` is optional on input and
/// checked against `2^strand_exponent_p` when present.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawParams {
    strand_exponent_p: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    strand_count_n: Option<u64>,
    difficulty_bits: u32,
    #[serde(default)]
    hash_algo_id: HashAlgo,
    #[serde(default)]
    sig_algo_id: SigAlgo,
}

impl TryFrom<RawParams> for Params {
    type Error = Error;

    fn try_from(raw: RawParams) -> Result<Self> {
        let params = Params::with_algorithms(
            raw.strand_exponent_p,
            raw.difficulty_bits,
            raw.hash_algo_id,
            raw.sig_algo_id,
        )?;
        if let Some(n) = raw.strand_count_n {
            if n != params.strand_count() as u64 {
                return Err(Error::InvalidParams(format!(
                    "strand_count_n = {n} but 2^{} = {}",
                    raw.strand_exponent_p,
                    params.strand_count()
                )));
            }
        }
        Ok(params)
    }
}

impl From<Params> for RawParams {
    fn from(p: Params) -> Self {
        RawParams {
            strand_exponent_p: p.strand_exponent,
            strand_count_n: Some(p.strand_count() as u64),
            difficulty_bits: p.difficulty_bits,
            hash_algo_id: p.hash_algo,
            sig_algo_id: p.sig_algo,
        }
    }
}

/// The mining lottery object.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Ticket {
    /// Position `i` is the last block the miner knew of on strand `i`.
    pub tip_hashes: Vec<Hash256>,
    pub pubkey: PublicKey,
    pub nonce: u64,
}

impl Ticket {
    fn check_len(&self, n: usize) -> Result<()> {
        if self.tip_hashes.len() != n {
            return Err(Error::TipCount {
                expected: n,
                found: self.tip_hashes.len(),
            });
        }
        Ok(())
    }

    /// Appends the canonical bytes. Fails if the ticket does not carry exactly
    /// `n` tip hashes.
    pub fn encode_into(&self, n: usize, out: &mut Vec<u8>) -> Result<()> {
        self.check_len(n)?;
        out.reserve(HASH_LEN * n + PUBKEY_LEN + 8);
        for tip in &self.tip_hashes {
            out.extend_from_slice(&tip.0);
        }
        out.extend_from_slice(&self.pubkey.0);
        out.extend_from_slice(&self.nonce.to_be_bytes());
        Ok(())
    }
}

pub fn serialize_ticket(ticket: &Ticket, n: usize) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(HASH_LEN * n + PUBKEY_LEN + 8);
    ticket.encode_into(n, &mut out)?;
    Ok(out)
}

pub fn deserialize_ticket(bytes: &[u8], n: usize) -> Result<Ticket> {
    let mut r = Reader::new(bytes);
    let t = r.ticket(n)?;
    r.finish()?;
    Ok(t)
}

/// One entry of a strand.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Block {
    pub chain_index: ChainIndex,
    pub prev_hash: Hash256,
    /// Opaque transaction data.
    pub payload: Vec<u8>,
    pub ticket: Ticket,
    /// Signature over the block id by the ticket key. Empty until signed.
    pub signature: Vec<u8>,
}

impl Block {
    /// Canonical wire encoding.
    pub fn to_bytes(&self, params: &Params) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        self.encode_into(params, &mut out)?;
        Ok(out)
    }

    pub fn encode_into(&self, params: &Params, out: &mut Vec<u8>) -> Result<()> {
        let payload_len = u32::try_from(self.payload.len())
            .map_err(|_| Error::Decode("payload longer than u32::MAX".into()))?;
        let sig_len = u16::try_from(self.signature.len())
            .map_err(|_| Error::Decode("signature longer than u16::MAX".into()))?;
        out.extend_from_slice(&self.chain_index.0.to_be_bytes());
        out.extend_from_slice(&self.prev_hash.0);
        out.extend_from_slice(&payload_len.to_be_bytes());
        out.extend_from_slice(&self.payload);
        self.ticket.encode_into(params.strand_count(), out)?;
        out.extend_from_slice(&sig_len.to_be_bytes());
        out.extend_from_slice(&self.signature);
        Ok(())
    }

    /// Decodes exactly one block occupying all of `bytes`.
    pub fn from_bytes(bytes: &[u8], params: &Params) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let b = r.block(params)?;
        r.finish()?;
        Ok(b)
    }
}

/// Id of a block: hash of its header, excluding the signature.
pub fn block_id(block: &Block, params: &Params) -> Result<Hash256> {
    let ticket_hash = crate::pow::ticket_hash(&block.ticket, params)?;
    Ok(block_id_with_ticket_hash(block, &ticket_hash, params))
}

pub(crate) fn block_id_with_ticket_hash(
    block: &Block,
    ticket_hash: &Hash256,
    params: &Params,
) -> Hash256 {
    let payload_hash = params.hash(&block.payload);
    crypto::hash_parts(
        &[
            &block.chain_index.0.to_be_bytes(),
            &block.prev_hash.0,
            &payload_hash.0,
            &ticket_hash.0,
        ],
        params.hash_algo(),
    )
}

/// Cursor over canonical bytes.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub(crate) fn is_empty(&self) -> bool {
        self.pos == self.buf.len()
    }

    pub(crate) fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < len {
            return Err(Error::Decode(format!(
                "truncated input: wanted {len} bytes at offset {}, {} left",
                self.pos,
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + len];
        self.pos += len;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut out = [0u8; N];
        out.copy_from_slice(self.take(N)?);
        Ok(out)
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.array::<1>()?[0])
    }

    pub(crate) fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_be_bytes(self.array()?))
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_be_bytes(self.array()?))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_be_bytes(self.array()?))
    }

    pub(crate) fn hash(&mut self) -> Result<Hash256> {
        Ok(Hash256(self.array()?))
    }

    pub(crate) fn ticket(&mut self, n: usize) -> Result<Ticket> {
        let mut tip_hashes = Vec::with_capacity(n);
        for _ in 0..n {
            tip_hashes.push(self.hash()?);
        }
        let pubkey = PublicKey(self.array()?);
        let nonce = self.u64()?;
        Ok(Ticket {
            tip_hashes,
            pubkey,
            nonce,
        })
    }

    pub(crate) fn block(&mut self, params: &Params) -> Result<Block> {
        let chain_index = ChainIndex(self.u32()?);
        let prev_hash = self.hash()?;
        let payload_len = self.u32()? as usize;
        let payload = self.take(payload_len)?.to_vec();
        let ticket = self.ticket(params.strand_count())?;
        let sig_len = self.u16()? as usize;
        let signature = self.take(sig_len)?.to_vec();
        Ok(Block {
            chain_index,
            prev_hash,
            payload,
            ticket,
            signature,
        })
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.is_empty() {
            Ok(())
        } else {
            Err(Error::Decode(format!(
                "{} trailing bytes",
                self.buf.len() - self.pos
            )))
        }
    }
}
