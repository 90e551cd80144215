//! Deterministic discrete-event network simulator.
//!
//! Every miner holds a full ledger replica. Simulated time is an integer
//! tick count. Work at one tick is processed in a fixed order: mining
//! (ticket finds and the resulting publications), then hoarded-ticket
//! releases, then block arrivals, each class ordered by miner id and then
//! by publication order. Blocks found in the same tick are concurrent:
//! every miner mines on the state it held at the start of the tick, and a
//! publisher's own block also lands on its replica in the arrival phase
//! (with no delay and no trace event). Under zero latency every replica
//! therefore applies the same blocks in the same order and all replicas
//! agree at the end of every tick.
//!
//! A miner makes one mining call per tick and the call ends at the first
//! ticket, so a miner finds at most one ticket per tick and never competes
//! with itself. In analytic mode tick `k` covers the continuous interval
//! `[k, k + 1)` and the exponential clock restarts at the next tick after
//! a find.
//!
//! An observer ledger sees every publication immediately; its final state
//! is what the trace summary reports and what [`replay`] reproduces.

mod config;
mod trace;

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap, VecDeque};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::crypto::{hash_parts, HashAlgo};
use crate::error::{Error, Result};
use crate::ledger::{ApplyOutcome, CheckedBlock, Ledger, LedgerView, RejectReason};
use crate::miner::{
    equivocating_blocks, honest_block, FoundTicket, Hoarder, Policy, PrivateFork, SeededPayloads,
    TicketSearch,
};
use crate::pow::CancelToken;
use crate::types::{ChainIndex, Hash256, Params};

pub use config::{LatencyModel, Mode, SimConfig};

/// Payload bytes per simulated block.
pub const PAYLOAD_LEN: usize = 32;

#[derive(Clone, Debug)]
pub struct SimEvent {
    pub time: u64,
    pub kind: EventKind,
}

#[derive(Clone, Debug)]
pub enum EventKind {
    /// `kept` is false when the policy threw the ticket away.
    TicketFound {
        miner: u32,
        strand: ChainIndex,
        ticket_hash: Hash256,
        kept: bool,
    },
    BlockPublished {
        miner: u32,
        block: Arc<CheckedBlock>,
    },
    BlockArrival {
        recipient: u32,
        strand: ChainIndex,
        block_id: Hash256,
    },
    /// The observer switched the strand's best tip to another branch,
    /// abandoning `depth` blocks.
    ForkResolved {
        strand: ChainIndex,
        depth: u64,
        block_id: Hash256,
    },
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::TicketFound { .. } => "ticket_found",
            EventKind::BlockPublished { .. } => "block_published",
            EventKind::BlockArrival { .. } => "block_arrival",
            EventKind::ForkResolved { .. } => "fork_resolved",
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MinerStats {
    pub miner_id: u32,
    pub tickets_found: u64,
    pub tickets_discarded: u64,
    pub blocks_published: u64,
    /// Published blocks the observer refused.
    pub blocks_rejected: u64,
    pub blocks_on_best_path: u64,
    /// Accepted blocks that ended up off every best path.
    pub blocks_orphaned: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub final_heights: Vec<u64>,
    pub final_tips: Vec<Hash256>,
    /// Accepted blocks per strand, genesis excluded.
    pub stored_blocks: Vec<u64>,
    pub miners: Vec<MinerStats>,
}

impl TraceSummary {
    fn of_ledger(ledger: &Ledger, miners: Vec<MinerStats>) -> Self {
        Self {
            final_heights: ledger.heights(),
            final_tips: ledger.tips(),
            stored_blocks: ledger.strands().iter().map(|s| s.len() as u64).collect(),
            miners,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SimTrace {
    pub config: SimConfig,
    pub events: Vec<SimEvent>,
    pub summary: TraceSummary,
}

impl SimTrace {
    /// A trace with no events: every strand still at genesis.
    pub fn empty(config: SimConfig) -> Self {
        let ledger = Ledger::genesis(config.ledger_params());
        let miners = config
            .miners
            .iter()
            .map(|m| MinerStats {
                miner_id: m.miner_id,
                ..Default::default()
            })
            .collect();
        let summary = TraceSummary::of_ledger(&ledger, miners);
        Self {
            config,
            events: Vec::new(),
            summary,
        }
    }

    pub fn published(&self) -> impl Iterator<Item = (u64, u32, &Arc<CheckedBlock>)> + '_ {
        self.events.iter().filter_map(|e| match &e.kind {
            EventKind::BlockPublished { miner, block } => Some((e.time, *miner, block)),
            _ => None,
        })
    }

    /// `(time, miner, strand, kept)` for every ticket found.
    pub fn tickets(&self) -> impl Iterator<Item = (u64, u32, ChainIndex, bool)> + '_ {
        self.events.iter().filter_map(|e| match &e.kind {
            EventKind::TicketFound {
                miner,
                strand,
                kept,
                ..
            } => Some((e.time, *miner, *strand, *kept)),
            _ => None,
        })
    }
}

/// Runs a whole simulation.
pub fn run(config: &SimConfig) -> Result<SimTrace> {
    Simulation::new(config.clone())?.finish()
}

/// Re-applies every published block, in trace order, to a fresh ledger and
/// checks the result against the trace summary.
pub fn replay(trace: &SimTrace) -> Result<Ledger> {
    let mut ledger = Ledger::genesis(trace.config.ledger_params());
    for (_, _, block) in trace.published() {
        ledger.apply_checked(block.clone());
    }
    let got = TraceSummary::of_ledger(&ledger, Vec::new());
    let want = &trace.summary;
    if got.final_heights != want.final_heights {
        return Err(Error::Integrity(format!(
            "replayed heights {:?} differ from recorded {:?}",
            got.final_heights, want.final_heights
        )));
    }
    if got.final_tips != want.final_tips {
        return Err(Error::Integrity(
            "replayed tips differ from recorded tips".into(),
        ));
    }
    if got.stored_blocks != want.stored_blocks {
        return Err(Error::Integrity(format!(
            "replayed block counts {:?} differ from recorded {:?}",
            got.stored_blocks, want.stored_blocks
        )));
    }
    Ok(ledger)
}

/// Derives an independent 64-bit seed for one consumer of randomness.
pub fn derive_seed(master: u64, domain: &str, index: u64) -> u64 {
    let h = hash_parts(
        &[
            b"strandchain-seed",
            domain.as_bytes(),
            &master.to_be_bytes(),
            &index.to_be_bytes(),
        ],
        HashAlgo::Sha256,
    );
    u64::from_be_bytes(h.0[..8].try_into().unwrap())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Class {
    Mine,
    Release,
    Arrival,
}

enum Action {
    Mine,
    Release,
    /// `own` marks the publisher's copy, which is not traced.
    Arrival {
        block: Arc<CheckedBlock>,
        own: bool,
    },
}

struct Scheduled {
    time: u64,
    class: Class,
    miner_id: u32,
    seq: u64,
    node: usize,
    action: Action,
}

impl Scheduled {
    fn key(&self) -> (u64, Class, u32, u64) {
        (self.time, self.class, self.miner_id, self.seq)
    }
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}

impl Eq for Scheduled {}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

// Reversed so the max-heap pops the earliest key.
impl Ord for Scheduled {
    fn cmp(&self, other: &Self) -> Ordering {
        other.key().cmp(&self.key())
    }
}

enum PolicyState {
    Honest,
    Targeted(ChainIndex),
    Hoarder(Hoarder),
    Equivocator(u32),
    PrivateForker(PrivateFork),
}

struct Node {
    id: u32,
    ledger: Ledger,
    orphans: HashMap<Hash256, Vec<Arc<CheckedBlock>>>,
    search: TicketSearch,
    rng: ChaCha8Rng,
    payloads: SeededPayloads,
    policy: PolicyState,
    /// Ticket rate per tick (analytic mode).
    ticket_rate: f64,
    /// Hashes per tick (real-hash mode).
    attempts_per_step: u64,
    clock: f64,
}

impl Node {
    fn view(&self) -> LedgerView {
        self.ledger.view()
    }

    fn search_tips(&self) -> Vec<Hash256> {
        let view = self.view();
        match &self.policy {
            PolicyState::PrivateForker(fork) => fork.search_tips(&view),
            _ => view.tips,
        }
    }

    /// Applies a block, parking it while its parent is missing and
    /// retrying parked children once it lands.
    fn receive(&mut self, block: Arc<CheckedBlock>) {
        let mut pending = VecDeque::from([block]);
        while let Some(b) = pending.pop_front() {
            match self.ledger.apply_checked(b.clone()) {
                ApplyOutcome::Rejected(RejectReason::UnknownParent(parent)) => {
                    self.orphans.entry(parent).or_default().push(b);
                }
                outcome if outcome.is_accepted() => {
                    if let Some(children) = self.orphans.remove(&b.id()) {
                        pending.extend(children);
                    }
                }
                _ => {}
            }
        }
    }
}

/// A simulation in progress. [`run`] drives one to completion; tests can
/// also step it event by event.
pub struct Simulation {
    config: SimConfig,
    params: Params,
    nodes: Vec<Node>,
    observer: Ledger,
    queue: BinaryHeap<Scheduled>,
    seq: u64,
    net_rng: ChaCha8Rng,
    events: Vec<SimEvent>,
    stats: Vec<MinerStats>,
    now: u64,
}

impl Simulation {
    pub fn new(config: SimConfig) -> Result<Self> {
        config.validate()?;
        let params = config.ledger_params();
        let difficulty = config.params.difficulty_bits() as i32;
        let nodes = config
            .miners
            .iter()
            .map(|m| {
                let id = m.miner_id as u64;
                let policy = match m.policy {
                    Policy::Honest => PolicyState::Honest,
                    Policy::Targeted { target } => PolicyState::Targeted(ChainIndex(target)),
                    Policy::Hoarder { hold_duration } => {
                        PolicyState::Hoarder(Hoarder::new(hold_duration))
                    }
                    Policy::Equivocator { copies } => PolicyState::Equivocator(copies),
                    Policy::PrivateForker {
                        target,
                        withhold_depth,
                    } => PolicyState::PrivateForker(PrivateFork::new(
                        ChainIndex(target),
                        withhold_depth,
                    )),
                };
                Node {
                    id: m.miner_id,
                    ledger: Ledger::genesis(params),
                    orphans: HashMap::new(),
                    search: TicketSearch::new(derive_seed(config.seed, "search", id)),
                    rng: ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "arrivals", id)),
                    payloads: SeededPayloads::new(
                        derive_seed(config.seed, "payload", id),
                        PAYLOAD_LEN,
                    ),
                    policy,
                    ticket_rate: m.hash_rate * 2f64.powi(-difficulty),
                    attempts_per_step: m.hash_rate as u64,
                    clock: 0.0,
                }
            })
            .collect();
        let stats = config
            .miners
            .iter()
            .map(|m| MinerStats {
                miner_id: m.miner_id,
                ..Default::default()
            })
            .collect();
        let mut sim = Self {
            params,
            nodes,
            observer: Ledger::genesis(params),
            queue: BinaryHeap::new(),
            seq: 0,
            net_rng: ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "network", 0)),
            events: Vec::new(),
            stats,
            now: 0,
            config,
        };
        for k in 0..sim.nodes.len() {
            match sim.config.mode {
                Mode::RealHash => sim.schedule(0, Class::Mine, k, Action::Mine),
                Mode::Analytic => sim.schedule_next_ticket(k),
            }
        }
        Ok(sim)
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    /// Time of the last processed event.
    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn observer(&self) -> &Ledger {
        &self.observer
    }

    /// Ledger replicas, in config order.
    pub fn replicas(&self) -> impl Iterator<Item = &Ledger> + '_ {
        self.nodes.iter().map(|n| &n.ledger)
    }

    pub fn events(&self) -> &[SimEvent] {
        &self.events
    }

    /// Time of the next pending event, if any.
    pub fn next_time(&self) -> Option<u64> {
        self.queue.peek().map(|s| s.time)
    }

    /// Processes one scheduled action. Returns false once the queue is empty.
    pub fn step(&mut self) -> Result<bool> {
        let Some(s) = self.queue.pop() else {
            return Ok(false);
        };
        self.now = s.time;
        match s.action {
            Action::Mine => self.mine(s.node)?,
            Action::Release => self.release(s.node)?,
            Action::Arrival { block, own } => {
                let node = &mut self.nodes[s.node];
                if !own {
                    self.events.push(SimEvent {
                        time: s.time,
                        kind: EventKind::BlockArrival {
                            recipient: node.id,
                            strand: block.block().chain_index,
                            block_id: block.id(),
                        },
                    });
                }
                node.receive(block);
            }
        }
        Ok(true)
    }

    pub fn finish(mut self) -> Result<SimTrace> {
        while self.step()? {}
        let best = self.observer.best_path_ids();
        let index: HashMap<u32, usize> = self
            .stats
            .iter()
            .enumerate()
            .map(|(i, s)| (s.miner_id, i))
            .collect();
        for e in &self.events {
            if let EventKind::BlockPublished { miner, block } = &e.kind {
                let stats = &mut self.stats[index[miner]];
                if best.contains(&block.id()) {
                    stats.blocks_on_best_path += 1;
                } else if self.observer.contains(&block.id()) {
                    stats.blocks_orphaned += 1;
                }
            }
        }
        let summary = TraceSummary::of_ledger(&self.observer, self.stats);
        Ok(SimTrace {
            config: self.config,
            events: self.events,
            summary,
        })
    }

    fn schedule(&mut self, time: u64, class: Class, node: usize, action: Action) {
        if time >= self.config.duration {
            return;
        }
        self.seq += 1;
        self.queue.push(Scheduled {
            time,
            class,
            miner_id: self.nodes[node].id,
            seq: self.seq,
            node,
            action,
        });
    }

    fn schedule_next_ticket(&mut self, k: usize) {
        let node = &mut self.nodes[k];
        let gap: f64 = node.rng.sample(Exp1);
        node.clock += gap / node.ticket_rate;
        let at = node.clock.floor();
        if at < self.config.duration as f64 {
            self.schedule(at as u64, Class::Mine, k, Action::Mine);
        }
    }

    fn mine(&mut self, k: usize) -> Result<()> {
        let t = self.now;
        match self.config.mode {
            Mode::RealHash => {
                let node = &mut self.nodes[k];
                let tips = node.search_tips();
                let budget = node.attempts_per_step;
                let step = node
                    .search
                    .search(&tips, &self.params, budget, &CancelToken::new());
                if let Some(found) = step.found {
                    self.on_ticket(k, found)?;
                }
                self.schedule(t + 1, Class::Mine, k, Action::Mine);
            }
            Mode::Analytic => {
                let n = self.params.strand_count() as u32;
                let node = &mut self.nodes[k];
                let strand = ChainIndex(node.rng.gen_range(0..n));
                let tips = node.search_tips();
                let found = node.search.analytic_ticket(&tips, &self.params, strand);
                self.on_ticket(k, found)?;
                self.nodes[k].clock = (t + 1) as f64;
                self.schedule_next_ticket(k);
            }
        }
        Ok(())
    }

    fn on_ticket(&mut self, k: usize, found: FoundTicket) -> Result<()> {
        let t = self.now;
        let strand = found.chain_index();
        let ticket_hash = found.judgement.ticket_hash;
        let params = self.params;
        let node = &mut self.nodes[k];
        let view = node.view();
        let miner_id = node.id;
        let payloads = &mut node.payloads;
        let mut release_at = None;
        let (kept, blocks) = match &mut node.policy {
            PolicyState::Honest => (
                true,
                vec![honest_block(&found, &view, &params, payloads, miner_id)],
            ),
            PolicyState::Targeted(target) => {
                if strand == *target {
                    (
                        true,
                        vec![honest_block(&found, &view, &params, payloads, miner_id)],
                    )
                } else {
                    (false, Vec::new())
                }
            }
            PolicyState::Equivocator(copies) => (
                true,
                equivocating_blocks(&found, &view, &params, payloads, miner_id, *copies),
            ),
            PolicyState::Hoarder(hoarder) => {
                if hoarder.hold() == 0 {
                    (
                        true,
                        vec![honest_block(&found, &view, &params, payloads, miner_id)],
                    )
                } else {
                    release_at = Some(t.saturating_add(hoarder.hold()));
                    hoarder.store(t, found);
                    (true, Vec::new())
                }
            }
            PolicyState::PrivateForker(fork) => {
                let reaction = fork.on_ticket(&found, &view, &params, payloads, miner_id);
                (!reaction.discarded, reaction.publish)
            }
        };
        self.events.push(SimEvent {
            time: t,
            kind: EventKind::TicketFound {
                miner: miner_id,
                strand,
                ticket_hash,
                kept,
            },
        });
        self.stats[k].tickets_found += 1;
        if !kept {
            self.stats[k].tickets_discarded += 1;
        }
        if let Some(at) = release_at {
            self.schedule(at, Class::Release, k, Action::Release);
        }
        for block in blocks {
            self.publish(k, block)?;
        }
        Ok(())
    }

    fn release(&mut self, k: usize) -> Result<()> {
        let params = self.params;
        let node = &mut self.nodes[k];
        let view = node.view();
        let blocks = match &mut node.policy {
            PolicyState::Hoarder(h) => {
                h.release_due(self.now, &view, &params, &mut node.payloads, node.id)
            }
            _ => Vec::new(),
        };
        for block in blocks {
            self.publish(k, block)?;
        }
        Ok(())
    }

    fn publish(&mut self, k: usize, block: crate::types::Block) -> Result<()> {
        let t = self.now;
        let checked = Arc::new(CheckedBlock::new(block, &self.params)?);
        let miner = self.nodes[k].id;
        self.events.push(SimEvent {
            time: t,
            kind: EventKind::BlockPublished {
                miner,
                block: checked.clone(),
            },
        });
        self.stats[k].blocks_published += 1;
        self.schedule(
            t,
            Class::Arrival,
            k,
            Action::Arrival {
                block: checked.clone(),
                own: true,
            },
        );
        match self.observer.apply_checked(checked.clone()) {
            ApplyOutcome::Rejected(_) => self.stats[k].blocks_rejected += 1,
            ApplyOutcome::CausedReorg { depth, .. } => self.events.push(SimEvent {
                time: t,
                kind: EventKind::ForkResolved {
                    strand: checked.block().chain_index,
                    depth,
                    block_id: checked.id(),
                },
            }),
            _ => {}
        }
        self.deliver(k, checked);
        Ok(())
    }

    /// Schedules one arrival per other miner at publish time plus a sampled
    /// delay. Returns `(recipient, arrival time)` pairs, including arrivals
    /// past the end of the run, which are dropped.
    pub(crate) fn deliver(&mut self, from: usize, block: Arc<CheckedBlock>) -> Vec<(u32, u64)> {
        let mut arrivals = Vec::with_capacity(self.nodes.len().saturating_sub(1));
        for j in 0..self.nodes.len() {
            if j == from {
                continue;
            }
            let at = self
                .now
                .saturating_add(self.config.latency_model.sample(&mut self.net_rng));
            arrivals.push((self.nodes[j].id, at));
            self.schedule(
                at,
                Class::Arrival,
                j,
                Action::Arrival {
                    block: block.clone(),
                    own: false,
                },
            );
        }
        arrivals
    }
}

pub use trace::{read_trace, trace_to_jsonl, write_trace};
