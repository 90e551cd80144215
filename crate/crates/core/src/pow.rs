//! Ticket hashing and the nonce scan.
//!
//! A ticket is valid when its hash starts with `difficulty_bits` zero bits.
//! The strand it unlocks is the hash read as a big-endian integer modulo
//! `2^p`, i.e. its last `p` bits. Since `difficulty_bits + p <= 256` the two
//! bit ranges never overlap.

use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;

use crate::error::Result;
use crate::types::{ChainIndex, Hash256, Params, PublicKey, Ticket, HASH_LEN};

/// Outcome of checking a ticket hash against both conditions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TicketJudgement {
    pub ticket_hash: Hash256,
    pub zero_bits: u32,
    pub chain_index: ChainIndex,
    pub meets_difficulty: bool,
}

pub fn ticket_hash(ticket: &Ticket, params: &Params) -> Result<Hash256> {
    let bytes = crate::types::serialize_ticket(ticket, params.strand_count())?;
    Ok(params.hash(&bytes))
}

/// Consecutive zero bits counted from the most significant bit of byte 0.
pub fn leading_zero_bits(h: &Hash256) -> u32 {
    let mut bits = 0;
    for &byte in &h.0 {
        if byte == 0 {
            bits += 8;
        } else {
            return bits + byte.leading_zeros();
        }
    }
    bits
}

/// Last `p` bits of the digest.
///
/// # Panics
///
/// If `p > 32`; chain indices are 32-bit on the wire.
pub fn chain_index_of(h: &Hash256, p: u32) -> ChainIndex {
    assert!(
        p <= 32,
        "strand exponent {p} does not fit a 32-bit chain index"
    );
    if p == 0 {
        return ChainIndex(0);
    }
    let tail = u32::from_be_bytes(h.0[HASH_LEN - 4..].try_into().unwrap());
    let mask = if p == 32 { u32::MAX } else { (1u32 << p) - 1 };
    ChainIndex(tail & mask)
}

pub fn judge_hash(h: Hash256, params: &Params) -> TicketJudgement {
    let zero_bits = leading_zero_bits(&h);
    TicketJudgement {
        ticket_hash: h,
        zero_bits,
        chain_index: chain_index_of(&h, params.strand_exponent()),
        meets_difficulty: zero_bits >= params.difficulty_bits(),
    }
}

pub fn judge_ticket(ticket: &Ticket, params: &Params) -> Result<TicketJudgement> {
    Ok(judge_hash(ticket_hash(ticket, params)?, params))
}

/// Cooperative cancellation flag shared between a caller and mining workers.
#[derive(Clone, Debug, Default)]
pub struct CancelToken(Arc<AtomicBool>);

impl CancelToken {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn cancel(&self) {
        self.0.store(true, Ordering::Relaxed);
    }

    pub fn is_cancelled(&self) -> bool {
        self.0.load(Ordering::Relaxed)
    }
}

const CANCEL_CHECK_INTERVAL: u64 = 1024;

/// Ticket bytes with a writable nonce slot, so the scan hashes without
/// re-serializing.
struct TicketTemplate {
    bytes: Vec<u8>,
}

impl TicketTemplate {
    fn new(tips: &[Hash256], pubkey: &PublicKey) -> Self {
        let mut bytes = Vec::with_capacity(tips.len() * HASH_LEN + 40);
        for t in tips {
            bytes.extend_from_slice(&t.0);
        }
        bytes.extend_from_slice(&pubkey.0);
        bytes.extend_from_slice(&[0u8; 8]);
        Self { bytes }
    }

    fn hash_with_nonce(&mut self, nonce: u64, params: &Params) -> Hash256 {
        let at = self.bytes.len() - 8;
        self.bytes[at..].copy_from_slice(&nonce.to_be_bytes());
        params.hash(&self.bytes)
    }
}

/// Scans nonces `nonce_start, nonce_start + 1, ...` for a ticket meeting the
/// difficulty. At most `max_attempts` hashes are computed. The chain index is
/// part of the result; the caller cannot pick it.
///
/// Returns `None` when the budget is spent, the nonce space is exhausted or
/// `cancel` fires.
///
/// # Panics
///
/// If `tips.len()` differs from the strand count.
pub fn mine_ticket(
    tips: &[Hash256],
    pubkey: &PublicKey,
    params: &Params,
    nonce_start: u64,
    max_attempts: u64,
    cancel: &CancelToken,
) -> Option<(Ticket, TicketJudgement)> {
    assert_eq!(
        tips.len(),
        params.strand_count(),
        "ticket needs one tip hash per strand"
    );
    let mut template = TicketTemplate::new(tips, pubkey);
    let found = scan(
        &mut template,
        params,
        nonce_start,
        max_attempts,
        cancel,
        None,
    )?;
    Some(finish(tips, pubkey, found))
}

fn finish(
    tips: &[Hash256],
    pubkey: &PublicKey,
    (nonce, judgement): (u64, TicketJudgement),
) -> (Ticket, TicketJudgement) {
    (
        Ticket {
            tip_hashes: tips.to_vec(),
            pubkey: *pubkey,
            nonce,
        },
        judgement,
    )
}

/// Sequential scan over `[start, start + attempts)`. `ceiling`, when set,
/// holds the smallest nonce found so far by any worker; scanning stops once
/// the cursor passes it.
fn scan(
    template: &mut TicketTemplate,
    params: &Params,
    start: u64,
    attempts: u64,
    cancel: &CancelToken,
    ceiling: Option<&AtomicU64>,
) -> Option<(u64, TicketJudgement)> {
    for i in 0..attempts {
        let nonce = start.checked_add(i)?;
        if i % CANCEL_CHECK_INTERVAL == 0 {
            if cancel.is_cancelled() {
                return None;
            }
            if let Some(c) = ceiling {
                if nonce > c.load(Ordering::Relaxed) {
                    return None;
                }
            }
        }
        let h = template.hash_with_nonce(nonce, params);
        if leading_zero_bits(&h) >= params.difficulty_bits() {
            return Some((nonce, judge_hash(h, params)));
        }
    }
    None
}

/// Multi-worker variant of [`mine_ticket`]. Workers split the nonce range
/// into interleaved chunks and the smallest successful nonce wins, so the
/// result is identical to the single-worker scan.
pub fn mine_ticket_parallel(
    tips: &[Hash256],
    pubkey: &PublicKey,
    params: &Params,
    nonce_start: u64,
    max_attempts: u64,
    cancel: &CancelToken,
    workers: usize,
) -> Option<(Ticket, TicketJudgement)> {
    const CHUNK: u64 = 1 << 14;
    let workers = workers.max(1) as u64;
    if workers == 1 || max_attempts <= CHUNK {
        return mine_ticket(tips, pubkey, params, nonce_start, max_attempts, cancel);
    }
    assert_eq!(
        tips.len(),
        params.strand_count(),
        "ticket needs one tip hash per strand"
    );

    let best = AtomicU64::new(u64::MAX);
    let best_judgement = std::sync::Mutex::new(None::<(u64, TicketJudgement)>);
    let end = nonce_start.saturating_add(max_attempts);

    std::thread::scope(|s| {
        for w in 0..workers {
            let (best, best_judgement) = (&best, &best_judgement);
            s.spawn(move || {
                let mut template = TicketTemplate::new(tips, pubkey);
                let mut chunk_start = nonce_start.saturating_add(w * CHUNK);
                while chunk_start < end && chunk_start <= best.load(Ordering::Relaxed) {
                    let len = CHUNK.min(end - chunk_start);
                    if let Some((nonce, j)) =
                        scan(&mut template, params, chunk_start, len, cancel, Some(best))
                    {
                        let mut slot = best_judgement.lock().unwrap();
                        if nonce < best.load(Ordering::Relaxed) {
                            best.store(nonce, Ordering::Relaxed);
                            *slot = Some((nonce, j));
                        }
                        return;
                    }
                    if cancel.is_cancelled() {
                        return;
                    }
                    chunk_start = match chunk_start.checked_add(workers * CHUNK) {
                        Some(next) => next,
                        None => return,
                    };
                }
            });
        }
    });

    if cancel.is_cancelled() {
        return None;
    }
    let found = best_judgement.into_inner().unwrap()?;
    Some(finish(tips, pubkey, found))
}
