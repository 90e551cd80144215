//! Mining policies.
//!
//! Every policy runs the same ticket search ([`TicketSearch`]); they differ
//! only in what they do with a found ticket:
//!
//! * honest: build one block on the strand the ticket selected;
//! * targeted: keep only tickets for one strand, discard the rest;
//! * equivocator: sign several different blocks with one ticket;
//! * hoarder: keep tickets for a while before building blocks from them;
//! * private forker: grow a hidden branch of one strand and publish it once
//!   it is strictly longer than the public one.

use std::collections::VecDeque;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::crypto::{self, Keypair, SEED_LEN};
use crate::error::{Error, Result};
use crate::ledger::LedgerView;
use crate::pow::{self, CancelToken, TicketJudgement};
use crate::types::{self, Block, ChainIndex, Hash256, Params, Ticket};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Policy {
    Honest,
    Targeted { target: u32 },
    Hoarder { hold_duration: u64 },
    Equivocator { copies: u32 },
    PrivateForker { target: u32, withhold_depth: u32 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MinerConfig {
    pub miner_id: u32,
    /// Hashes per time unit in analytic mode; hashes per step in real-hash mode.
    pub hash_rate: f64,
    pub policy: Policy,
}

impl MinerConfig {
    pub fn honest(miner_id: u32, hash_rate: f64) -> Self {
        Self {
            miner_id,
            hash_rate,
            policy: Policy::Honest,
        }
    }

    pub fn validate(&self, params: &Params) -> Result<()> {
        if !(self.hash_rate.is_finite() && self.hash_rate > 0.0) {
            return Err(Error::Config(format!(
                "miner {}: hash_rate must be positive, got {}",
                self.miner_id, self.hash_rate
            )));
        }
        let n = params.strand_count() as u32;
        match self.policy {
            Policy::Targeted { target } | Policy::PrivateForker { target, .. } if target >= n => {
                Err(Error::Config(format!(
                    "miner {}: target strand {target} out of range for {n} strands",
                    self.miner_id
                )))
            }
            Policy::Equivocator { copies } if copies < 2 => Err(Error::Config(format!(
                "miner {}: equivocator needs at least 2 copies",
                self.miner_id
            ))),
            _ => Ok(()),
        }
    }
}

/// Supplies block payloads. The strand and height are known when this is
/// called, so a real wallet could pick transactions for that strand.
pub trait PayloadSource {
    fn payload(&mut self, miner_id: u32, strand: ChainIndex, height: u64, variant: u32) -> Vec<u8>;
}

/// Pseudo-random payload bytes keyed by `(seed, miner, strand, height, variant)`.
#[derive(Clone, Debug)]
pub struct SeededPayloads {
    seed: u64,
    len: usize,
}

impl SeededPayloads {
    pub fn new(seed: u64, len: usize) -> Self {
        Self { seed, len }
    }
}

impl PayloadSource for SeededPayloads {
    fn payload(&mut self, miner_id: u32, strand: ChainIndex, height: u64, variant: u32) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.len);
        let mut counter = 0u32;
        while out.len() < self.len {
            let block = crypto::hash_parts(
                &[
                    b"payload",
                    &self.seed.to_be_bytes(),
                    &miner_id.to_be_bytes(),
                    &strand.0.to_be_bytes(),
                    &height.to_be_bytes(),
                    &variant.to_be_bytes(),
                    &counter.to_be_bytes(),
                ],
                crypto::HashAlgo::Sha256,
            );
            let take = (self.len - out.len()).min(32);
            out.extend_from_slice(&block.0[..take]);
            counter += 1;
        }
        out
    }
}

/// A ticket that met the difficulty, with the key that may sign its block.
#[derive(Clone, Debug)]
pub struct FoundTicket {
    pub ticket: Ticket,
    pub judgement: TicketJudgement,
    pub keypair: Keypair,
}

impl FoundTicket {
    pub fn chain_index(&self) -> ChainIndex {
        self.judgement.chain_index
    }

    /// The tip this ticket committed to for its own strand.
    pub fn own_tip(&self) -> Hash256 {
        self.ticket.tip_hashes[self.chain_index().as_usize()]
    }

    /// Builds and signs a block for this ticket's strand.
    pub fn assemble(&self, prev_hash: Hash256, payload: Vec<u8>, params: &Params) -> Block {
        let mut block = Block {
            chain_index: self.chain_index(),
            prev_hash,
            payload,
            ticket: self.ticket.clone(),
            signature: Vec::new(),
        };
        let id = types::block_id_with_ticket_hash(&block, &self.judgement.ticket_hash, params);
        block.signature = self.keypair.sign(&id.0);
        block
    }
}

#[derive(Debug)]
pub struct SearchStep {
    pub attempts: u64,
    pub found: Option<FoundTicket>,
}

/// Nonce-scan state of one miner. The keypair lives until a ticket is found
/// and is then replaced, so no two tickets share a key.
#[derive(Debug)]
pub struct TicketSearch {
    rng: ChaCha8Rng,
    keypair: Keypair,
    next_nonce: u64,
}

impl TicketSearch {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let keypair = fresh_keypair(&mut rng);
        Self {
            rng,
            keypair,
            next_nonce: 0,
        }
    }

    pub fn pubkey(&self) -> crate::types::PublicKey {
        self.keypair.pubkey()
    }

    fn rotate(&mut self) -> Keypair {
        self.next_nonce = 0;
        std::mem::replace(&mut self.keypair, fresh_keypair(&mut self.rng))
    }

    /// Spends up to `max_attempts` hashes looking for a ticket over `tips`.
    pub fn search(
        &mut self,
        tips: &[Hash256],
        params: &Params,
        max_attempts: u64,
        cancel: &CancelToken,
    ) -> SearchStep {
        let start = self.next_nonce;
        match pow::mine_ticket(
            tips,
            &self.keypair.pubkey(),
            params,
            start,
            max_attempts,
            cancel,
        ) {
            Some((ticket, judgement)) => {
                let attempts = ticket.nonce - start + 1;
                let keypair = self.rotate();
                SearchStep {
                    attempts,
                    found: Some(FoundTicket {
                        ticket,
                        judgement,
                        keypair,
                    }),
                }
            }
            None => {
                match start.checked_add(max_attempts) {
                    Some(next) => self.next_nonce = next,
                    None => {
                        self.rotate();
                    }
                }
                SearchStep {
                    attempts: max_attempts,
                    found: None,
                }
            }
        }
    }

    /// Ticket for analytic simulation, where the strand was already drawn at
    /// random. Scans for a nonce whose hash selects `index`; the difficulty
    /// condition is ignored because the arrival time stands in for the work.
    pub fn analytic_ticket(
        &mut self,
        tips: &[Hash256],
        params: &Params,
        index: ChainIndex,
    ) -> FoundTicket {
        let easy = params
            .with_difficulty(0)
            .expect("zero difficulty is always valid");
        let pubkey = self.keypair.pubkey();
        let mut nonce = self.next_nonce;
        loop {
            let (ticket, judgement) =
                pow::mine_ticket(tips, &pubkey, &easy, nonce, 1, &CancelToken::new())
                    .expect("zero difficulty accepts the first nonce");
            if judgement.chain_index == index {
                let keypair = self.rotate();
                return FoundTicket {
                    ticket,
                    judgement,
                    keypair,
                };
            }
            nonce = nonce.wrapping_add(1);
        }
    }
}

fn fresh_keypair(rng: &mut ChaCha8Rng) -> Keypair {
    let mut seed = [0u8; SEED_LEN];
    rng.fill_bytes(&mut seed);
    Keypair::from_seed(&seed).expect("seed has the right length")
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MinedProduct {
    pub blocks: Vec<Block>,
    pub discarded_tickets: u64,
}

#[derive(Debug, Default)]
pub struct StepOutcome {
    pub attempts: u64,
    pub product: Option<MinedProduct>,
}

/// Honest reaction to a ticket: one block on the selected strand, extending
/// the tip the ticket was mined against.
pub fn honest_block(
    found: &FoundTicket,
    view: &LedgerView,
    params: &Params,
    payloads: &mut dyn PayloadSource,
    miner_id: u32,
) -> Block {
    let strand = found.chain_index();
    let height = view.heights[strand.as_usize()] + 1;
    let payload = payloads.payload(miner_id, strand, height, 0);
    found.assemble(found.own_tip(), payload, params)
}

/// `copies` blocks signed with one ticket, differing only in payload.
pub fn equivocating_blocks(
    found: &FoundTicket,
    view: &LedgerView,
    params: &Params,
    payloads: &mut dyn PayloadSource,
    miner_id: u32,
    copies: u32,
) -> Vec<Block> {
    let strand = found.chain_index();
    let height = view.heights[strand.as_usize()] + 1;
    (0..copies)
        .map(|variant| {
            let payload = payloads.payload(miner_id, strand, height, variant);
            found.assemble(found.own_tip(), payload, params)
        })
        .collect()
}

pub fn honest_step(
    view: &LedgerView,
    params: &Params,
    search: &mut TicketSearch,
    payloads: &mut dyn PayloadSource,
    miner_id: u32,
    max_attempts: u64,
) -> StepOutcome {
    let step = search.search(&view.tips, params, max_attempts, &CancelToken::new());
    StepOutcome {
        attempts: step.attempts,
        product: step.found.map(|found| MinedProduct {
            blocks: vec![honest_block(&found, view, params, payloads, miner_id)],
            discarded_tickets: 0,
        }),
    }
}

/// Like [`honest_step`], but any ticket for a strand other than `target` is
/// thrown away. A discarded ticket yields a product with no blocks.
pub fn targeted_step(
    view: &LedgerView,
    params: &Params,
    search: &mut TicketSearch,
    payloads: &mut dyn PayloadSource,
    miner_id: u32,
    max_attempts: u64,
    target: ChainIndex,
) -> StepOutcome {
    let step = search.search(&view.tips, params, max_attempts, &CancelToken::new());
    StepOutcome {
        attempts: step.attempts,
        product: step.found.map(|found| {
            if found.chain_index() == target {
                MinedProduct {
                    blocks: vec![honest_block(&found, view, params, payloads, miner_id)],
                    discarded_tickets: 0,
                }
            } else {
                MinedProduct {
                    blocks: Vec::new(),
                    discarded_tickets: 1,
                }
            }
        }),
    }
}

pub fn equivocate_step(
    view: &LedgerView,
    params: &Params,
    search: &mut TicketSearch,
    payloads: &mut dyn PayloadSource,
    miner_id: u32,
    max_attempts: u64,
    copies: u32,
) -> StepOutcome {
    assert!(copies >= 2, "equivocation needs at least two copies");
    let step = search.search(&view.tips, params, max_attempts, &CancelToken::new());
    StepOutcome {
        attempts: step.attempts,
        product: step.found.map(|found| MinedProduct {
            blocks: equivocating_blocks(&found, view, params, payloads, miner_id, copies),
            discarded_tickets: 0,
        }),
    }
}

/// Ticket hoarder. Found tickets are held for `hold` time units and then
/// turned into blocks on whatever the strand's tip is at release time.
#[derive(Debug)]
pub struct Hoarder {
    hold: u64,
    stash: VecDeque<(u64, FoundTicket)>,
}

impl Hoarder {
    pub fn new(hold: u64) -> Self {
        Self {
            hold,
            stash: VecDeque::new(),
        }
    }

    pub fn hold(&self) -> u64 {
        self.hold
    }

    pub fn stashed(&self) -> usize {
        self.stash.len()
    }

    pub fn store(&mut self, now: u64, found: FoundTicket) {
        self.stash.push_back((now.saturating_add(self.hold), found));
    }

    pub fn next_release(&self) -> Option<u64> {
        self.stash.front().map(|(t, _)| *t)
    }

    /// Builds blocks for every ticket whose hold has expired. Each block
    /// extends the current best tip of its strand, which is only valid if
    /// that tip is still the one the ticket committed to.
    pub fn release_due(
        &mut self,
        now: u64,
        view: &LedgerView,
        params: &Params,
        payloads: &mut dyn PayloadSource,
        miner_id: u32,
    ) -> Vec<Block> {
        let mut out = Vec::new();
        while self.stash.front().is_some_and(|(t, _)| *t <= now) {
            let (_, found) = self.stash.pop_front().unwrap();
            let strand = found.chain_index().as_usize();
            let height = view.heights[strand] + 1;
            let payload = payloads.payload(miner_id, found.chain_index(), height, 0);
            out.push(found.assemble(view.tips[strand], payload, params));
        }
        out
    }
}

/// Mines one ticket into the stash, then releases everything due at
/// `release_time` against `release_view`.
#[allow(clippy::too_many_arguments)]
pub fn hoard_then_spend(
    hoarder: &mut Hoarder,
    now: u64,
    mining_view: &LedgerView,
    params: &Params,
    search: &mut TicketSearch,
    max_attempts: u64,
    release_time: u64,
    release_view: &LedgerView,
    payloads: &mut dyn PayloadSource,
    miner_id: u32,
) -> StepOutcome {
    let step = search.search(&mining_view.tips, params, max_attempts, &CancelToken::new());
    if let Some(found) = step.found {
        hoarder.store(now, found);
    }
    let blocks = hoarder.release_due(release_time, release_view, params, payloads, miner_id);
    StepOutcome {
        attempts: step.attempts,
        product: (!blocks.is_empty()).then_some(MinedProduct {
            blocks,
            discarded_tickets: 0,
        }),
    }
}

/// Hidden branch on one strand.
#[derive(Clone, Debug)]
pub struct PrivateFork {
    target: ChainIndex,
    withhold_depth: u32,
    /// Public block the hidden branch starts from. `None` while the branch
    /// is empty and the attacker simply follows the public tip.
    anchor: Option<(Hash256, u64)>,
    chain: Vec<(Block, Hash256)>,
}

#[derive(Debug, Default)]
pub struct ForkReaction {
    pub discarded: bool,
    pub extended: bool,
    pub publish: Vec<Block>,
}

impl PrivateFork {
    pub fn new(target: ChainIndex, withhold_depth: u32) -> Self {
        Self {
            target,
            withhold_depth,
            anchor: None,
            chain: Vec::new(),
        }
    }

    /// Branch pinned to `base`, which sits at `base_height` on the target strand.
    pub fn anchored(
        target: ChainIndex,
        withhold_depth: u32,
        base: Hash256,
        base_height: u64,
    ) -> Self {
        Self {
            anchor: Some((base, base_height)),
            ..Self::new(target, withhold_depth)
        }
    }

    pub fn target(&self) -> ChainIndex {
        self.target
    }

    pub fn hidden_len(&self) -> usize {
        self.chain.len()
    }

    pub fn private_tip(&self, public: &LedgerView) -> (Hash256, u64) {
        if let Some((_, id)) = self.chain.last() {
            let (_, base_height) = self.anchor.expect("non-empty branch is anchored");
            return (*id, base_height + self.chain.len() as u64);
        }
        self.anchor.unwrap_or((
            public.tips[self.target.as_usize()],
            public.heights[self.target.as_usize()],
        ))
    }

    /// Tips to embed in the next ticket: public tips, except the target
    /// strand which points at the private tip.
    pub fn search_tips(&self, public: &LedgerView) -> Vec<Hash256> {
        let mut tips = public.tips.clone();
        tips[self.target.as_usize()] = self.private_tip(public).0;
        tips
    }

    /// Handles a ticket mined over [`search_tips`](Self::search_tips).
    pub fn on_ticket(
        &mut self,
        found: &FoundTicket,
        public: &LedgerView,
        params: &Params,
        payloads: &mut dyn PayloadSource,
        miner_id: u32,
    ) -> ForkReaction {
        if found.chain_index() != self.target {
            return ForkReaction {
                discarded: true,
                ..Default::default()
            };
        }
        let (tip, height) = self.private_tip(public);
        debug_assert_eq!(
            found.own_tip(),
            tip,
            "ticket was not mined on the private tip"
        );
        if self.anchor.is_none() {
            self.anchor = Some((tip, height));
        }
        let payload = payloads.payload(miner_id, self.target, height + 1, 0);
        let block = found.assemble(tip, payload, params);
        let id = types::block_id_with_ticket_hash(&block, &found.judgement.ticket_hash, params);
        self.chain.push((block, id));
        ForkReaction {
            discarded: false,
            extended: true,
            publish: self.take_publication(public),
        }
    }

    /// Releases the hidden branch if it is strictly longer than the public
    /// strand and at least `withhold_depth` blocks deep.
    pub fn take_publication(&mut self, public: &LedgerView) -> Vec<Block> {
        let (_, private_height) = self.private_tip(public);
        let public_height = public.heights[self.target.as_usize()];
        if self.chain.is_empty()
            || private_height <= public_height
            || (self.chain.len() as u64) < self.withhold_depth as u64
        {
            return Vec::new();
        }
        self.anchor = None;
        self.chain.drain(..).map(|(b, _)| b).collect()
    }
}

/// One mining call of a private forker. Returns the blocks to publish, if
/// the hidden branch just overtook the public strand.
pub fn private_fork_step(
    state: &mut PrivateFork,
    public: &LedgerView,
    params: &Params,
    search: &mut TicketSearch,
    payloads: &mut dyn PayloadSource,
    miner_id: u32,
    max_attempts: u64,
) -> (StepOutcome, Option<Vec<Block>>) {
    let tips = state.search_tips(public);
    let step = search.search(&tips, params, max_attempts, &CancelToken::new());
    let Some(found) = step.found else {
        return (
            StepOutcome {
                attempts: step.attempts,
                product: None,
            },
            None,
        );
    };
    let reaction = state.on_ticket(&found, public, params, payloads, miner_id);
    let product = MinedProduct {
        blocks: Vec::new(),
        discarded_tickets: reaction.discarded as u64,
    };
    let published = (!reaction.publish.is_empty()).then_some(reaction.publish);
    (
        StepOutcome {
            attempts: step.attempts,
            product: Some(product),
        },
        published,
    )
}
