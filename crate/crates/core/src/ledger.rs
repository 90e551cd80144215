//! The n-strand ledger.
//!
//! Each strand is a tree of blocks rooted at a deterministic genesis id. A
//! block is accepted iff it passes, in order:
//!
//! * **V1** the low `p` bits of its ticket hash equal its declared chain index;
//! * **V2** the ticket's tip hash for that strand equals `prev_hash`, and the
//!   parent is stored in that strand;
//! * **V3** the ticket hash has at least `difficulty_bits` leading zero bits;
//! * **V4** the signature over the block id verifies under the ticket pubkey.
//!
//! Tip hashes for the other strands are not checked. Fork choice is longest
//! chain per strand with first-seen tie-breaking.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::Arc;

use crate::crypto;
use crate::error::{Error, Result};
use crate::pow::{self, TicketJudgement};
use crate::types::{self, Block, ChainIndex, Hash256, Params, Reader};

const GENESIS_TAG: &[u8] = b"MULTISTRAND-GENESIS";
const EXPORT_MAGIC: &[u8; 4] = b"MSLX";
const EXPORT_VERSION: u8 = 1;

/// Identifier of one step of the validation checklist.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Check {
    V1,
    V2,
    V3,
    V4,
}

impl Check {
    pub const ALL: [Check; 4] = [Check::V1, Check::V2, Check::V3, Check::V4];

    pub fn description(self) -> &'static str {
        match self {
            Check::V1 => "chain index matches last p bits of ticket hash",
            Check::V2 => "ticket tip for own strand is the block's known parent",
            Check::V3 => "ticket hash has the required leading zero bits",
            Check::V4 => "block signature verifies under ticket pubkey",
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Check::V1 => "V1",
            Check::V2 => "V2",
            Check::V3 => "V3",
            Check::V4 => "V4",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RejectReason {
    /// The ticket cannot be hashed under the ledger params (wrong tip count).
    Malformed(String),
    IndexMismatch {
        declared: ChainIndex,
        derived: ChainIndex,
    },
    /// The ticket was mined against a different tip than the block extends.
    StaleTicket {
        ticket_tip: Hash256,
        prev_hash: Hash256,
    },
    UnknownParent(Hash256),
    InsufficientWork {
        zero_bits: u32,
        required: u32,
    },
    BadSignature,
    Duplicate(Hash256),
}

impl RejectReason {
    /// Checklist step that failed. `Duplicate` is not a validity failure.
    pub fn check(&self) -> Option<Check> {
        match self {
            RejectReason::Malformed(_) | RejectReason::IndexMismatch { .. } => Some(Check::V1),
            RejectReason::StaleTicket { .. } | RejectReason::UnknownParent(_) => Some(Check::V2),
            RejectReason::InsufficientWork { .. } => Some(Check::V3),
            RejectReason::BadSignature => Some(Check::V4),
            RejectReason::Duplicate(_) => None,
        }
    }
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RejectReason::Malformed(m) => write!(f, "malformed block: {m}"),
            RejectReason::IndexMismatch { declared, derived } => {
                write!(
                    f,
                    "declared chain index {declared}, ticket hash gives {derived}"
                )
            }
            RejectReason::StaleTicket {
                ticket_tip,
                prev_hash,
            } => {
                write!(
                    f,
                    "ticket tip {ticket_tip} does not match prev_hash {prev_hash}"
                )
            }
            RejectReason::UnknownParent(h) => write!(f, "unknown parent {h}"),
            RejectReason::InsufficientWork {
                zero_bits,
                required,
            } => {
                write!(
                    f,
                    "ticket hash has {zero_bits} leading zero bits, {required} required"
                )
            }
            RejectReason::BadSignature => {
                f.write_str("signature does not verify under ticket pubkey")
            }
            RejectReason::Duplicate(h) => write!(f, "duplicate block {h}"),
        }
    }
}

/// A block with its context-free facts computed once: id, ticket judgement
/// and signature validity. Simulator replicas share these behind an `Arc`.
#[derive(Clone, Debug)]
pub struct CheckedBlock {
    block: Block,
    id: Hash256,
    judgement: TicketJudgement,
    signature_valid: bool,
}

impl CheckedBlock {
    pub fn new(block: Block, params: &Params) -> Result<Self> {
        let judgement = pow::judge_ticket(&block.ticket, params)?;
        let id = types::block_id_with_ticket_hash(&block, &judgement.ticket_hash, params);
        let signature_valid = crypto::verify(&id.0, &block.signature, &block.ticket.pubkey);
        Ok(Self {
            block,
            id,
            judgement,
            signature_valid,
        })
    }

    pub fn block(&self) -> &Block {
        &self.block
    }

    pub fn id(&self) -> Hash256 {
        self.id
    }

    pub fn judgement(&self) -> &TicketJudgement {
        &self.judgement
    }

    pub fn into_block(self) -> Block {
        self.block
    }

    fn v1(&self) -> std::result::Result<(), RejectReason> {
        if self.judgement.chain_index == self.block.chain_index {
            Ok(())
        } else {
            Err(RejectReason::IndexMismatch {
                declared: self.block.chain_index,
                derived: self.judgement.chain_index,
            })
        }
    }

    fn v3(&self, params: &Params) -> std::result::Result<(), RejectReason> {
        if self.judgement.meets_difficulty {
            Ok(())
        } else {
            Err(RejectReason::InsufficientWork {
                zero_bits: self.judgement.zero_bits,
                required: params.difficulty_bits(),
            })
        }
    }

    fn v4(&self) -> std::result::Result<(), RejectReason> {
        if self.signature_valid {
            Ok(())
        } else {
            Err(RejectReason::BadSignature)
        }
    }
}

/// Every check evaluated independently.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ValidationReport {
    pub v1: std::result::Result<(), RejectReason>,
    pub v2: std::result::Result<(), RejectReason>,
    pub v3: std::result::Result<(), RejectReason>,
    pub v4: std::result::Result<(), RejectReason>,
}

impl ValidationReport {
    pub fn get(&self, check: Check) -> &std::result::Result<(), RejectReason> {
        match check {
            Check::V1 => &self.v1,
            Check::V2 => &self.v2,
            Check::V3 => &self.v3,
            Check::V4 => &self.v4,
        }
    }

    pub fn first_failure(&self) -> Option<&RejectReason> {
        Check::ALL.iter().find_map(|c| self.get(*c).as_ref().err())
    }

    pub fn all_pass(&self) -> bool {
        self.first_failure().is_none()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ApplyOutcome {
    ExtendedBestTip {
        height: u64,
    },
    StoredSideBranch {
        height: u64,
    },
    /// The new block became best tip on a branch that abandons `depth` blocks.
    CausedReorg {
        depth: u64,
        height: u64,
    },
    Rejected(RejectReason),
}

impl ApplyOutcome {
    pub fn is_accepted(&self) -> bool {
        !matches!(self, ApplyOutcome::Rejected(_))
    }
}

#[derive(Clone, Debug)]
struct Node {
    block: Option<Arc<CheckedBlock>>,
    parent: Option<Hash256>,
    height: u64,
}

/// All blocks of one strand.
#[derive(Clone, Debug)]
pub struct BlockTree {
    nodes: HashMap<Hash256, Node>,
    /// Non-genesis ids in arrival order, which is also a topological order.
    arrival: Vec<Hash256>,
    genesis_id: Hash256,
    best: Hash256,
}

impl BlockTree {
    fn new(genesis_id: Hash256) -> Self {
        let mut nodes = HashMap::new();
        nodes.insert(
            genesis_id,
            Node {
                block: None,
                parent: None,
                height: 0,
            },
        );
        Self {
            nodes,
            arrival: Vec::new(),
            genesis_id,
            best: genesis_id,
        }
    }

    pub fn genesis_id(&self) -> Hash256 {
        self.genesis_id
    }

    pub fn best_tip(&self) -> Hash256 {
        self.best
    }

    pub fn best_height(&self) -> u64 {
        self.nodes[&self.best].height
    }

    pub fn contains(&self, id: &Hash256) -> bool {
        self.nodes.contains_key(id)
    }

    pub fn height_of(&self, id: &Hash256) -> Option<u64> {
        self.nodes.get(id).map(|n| n.height)
    }

    pub fn parent_of(&self, id: &Hash256) -> Option<Hash256> {
        self.nodes.get(id).and_then(|n| n.parent)
    }

    pub fn get(&self, id: &Hash256) -> Option<&Arc<CheckedBlock>> {
        self.nodes.get(id).and_then(|n| n.block.as_ref())
    }

    /// Stored blocks, genesis excluded.
    pub fn len(&self) -> usize {
        self.arrival.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arrival.is_empty()
    }

    /// Stored blocks in arrival order.
    pub fn blocks(&self) -> impl Iterator<Item = &Arc<CheckedBlock>> + '_ {
        self.arrival
            .iter()
            .map(|id| self.nodes[id].block.as_ref().unwrap())
    }

    /// Ids on the best chain from height 1 up to the tip.
    pub fn best_path(&self) -> Vec<Hash256> {
        let mut path = Vec::with_capacity(self.best_height() as usize);
        let mut cur = self.best;
        while let Some(parent) = self.nodes[&cur].parent {
            path.push(cur);
            cur = parent;
        }
        path.reverse();
        path
    }

    pub fn is_on_best_path(&self, id: &Hash256) -> bool {
        let Some(target) = self.nodes.get(id) else {
            return false;
        };
        let mut cur = self.best;
        let mut height = self.best_height();
        while height > target.height {
            cur = self.nodes[&cur].parent.unwrap();
            height -= 1;
        }
        cur == *id
    }

    /// Number of blocks on `from`'s chain above the common ancestor with `to`.
    fn abandoned_depth(&self, from: Hash256, to: Hash256) -> u64 {
        let (mut a, mut b) = (from, to);
        let (mut ha, mut hb) = (self.nodes[&a].height, self.nodes[&b].height);
        let start = ha;
        while hb > ha {
            b = self.nodes[&b].parent.unwrap();
            hb -= 1;
        }
        while ha > hb {
            a = self.nodes[&a].parent.unwrap();
            ha -= 1;
        }
        while a != b {
            a = self.nodes[&a].parent.unwrap();
            b = self.nodes[&b].parent.unwrap();
            ha -= 1;
        }
        start - ha
    }
}

/// Genesis id of strand `index`.
pub fn genesis_id(params: &Params, index: ChainIndex) -> Hash256 {
    crypto::hash_parts(
        &[
            GENESIS_TAG,
            &index.0.to_be_bytes(),
            &[params.strand_exponent() as u8],
            &(params.difficulty_bits() as u16).to_be_bytes(),
        ],
        params.hash_algo(),
    )
}

/// Tips and heights a miner works from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LedgerView {
    pub tips: Vec<Hash256>,
    pub heights: Vec<u64>,
}

#[derive(Clone, Debug)]
pub struct Ledger {
    params: Params,
    strands: Vec<BlockTree>,
}

impl Ledger {
    pub fn genesis(params: Params) -> Self {
        let strands = (0..params.strand_count() as u32)
            .map(|i| BlockTree::new(genesis_id(&params, ChainIndex(i))))
            .collect();
        Self { params, strands }
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn strand(&self, index: ChainIndex) -> Result<&BlockTree> {
        self.strands
            .get(index.as_usize())
            .ok_or(Error::IndexOutOfRange {
                index: index.0 as u64,
                count: self.strands.len() as u64,
            })
    }

    pub fn strands(&self) -> &[BlockTree] {
        &self.strands
    }

    /// Current best tip of every strand, in strand order.
    pub fn tips(&self) -> Vec<Hash256> {
        self.strands.iter().map(|s| s.best).collect()
    }

    pub fn strand_height(&self, index: ChainIndex) -> Result<u64> {
        Ok(self.strand(index)?.best_height())
    }

    pub fn heights(&self) -> Vec<u64> {
        self.strands.iter().map(BlockTree::best_height).collect()
    }

    pub fn view(&self) -> LedgerView {
        LedgerView {
            tips: self.tips(),
            heights: self.heights(),
        }
    }

    pub fn contains(&self, id: &Hash256) -> bool {
        self.strands.iter().any(|s| s.contains(id))
    }

    pub fn get(&self, id: &Hash256) -> Option<&Arc<CheckedBlock>> {
        self.strands.iter().find_map(|s| s.get(id))
    }

    pub fn is_on_best_path(&self, id: &Hash256) -> bool {
        self.strands.iter().any(|s| s.is_on_best_path(id))
    }

    /// Total stored blocks, genesis excluded.
    pub fn block_count(&self) -> usize {
        self.strands.iter().map(BlockTree::len).sum()
    }

    fn check_v2(&self, block: &Block) -> std::result::Result<(), RejectReason> {
        let idx = block.chain_index.as_usize();
        let ticket_tip = block.ticket.tip_hashes.get(idx);
        let Some(tree) = self.strands.get(idx) else {
            return Err(RejectReason::UnknownParent(block.prev_hash));
        };
        match ticket_tip {
            Some(tip) if *tip == block.prev_hash => {}
            Some(tip) => {
                return Err(RejectReason::StaleTicket {
                    ticket_tip: *tip,
                    prev_hash: block.prev_hash,
                })
            }
            None => return Err(RejectReason::Malformed("missing tip hash".into())),
        }
        if tree.contains(&block.prev_hash) {
            Ok(())
        } else {
            Err(RejectReason::UnknownParent(block.prev_hash))
        }
    }

    /// Runs all four checks without short-circuiting.
    pub fn check_block(&self, checked: &CheckedBlock) -> ValidationReport {
        ValidationReport {
            v1: checked.v1(),
            v2: self.check_v2(&checked.block),
            v3: checked.v3(&self.params),
            v4: checked.v4(),
        }
    }

    /// First failed check, if any.
    pub fn validate_block(&self, block: &Block) -> std::result::Result<(), RejectReason> {
        let checked = CheckedBlock::new(block.clone(), &self.params)
            .map_err(|e| RejectReason::Malformed(e.to_string()))?;
        self.validate_checked(&checked)
    }

    pub fn validate_checked(
        &self,
        checked: &CheckedBlock,
    ) -> std::result::Result<(), RejectReason> {
        checked.v1()?;
        self.check_v2(&checked.block)?;
        checked.v3(&self.params)?;
        checked.v4()
    }

    pub fn apply_block(&mut self, block: Block) -> ApplyOutcome {
        match CheckedBlock::new(block, &self.params) {
            Ok(c) => self.apply_checked(Arc::new(c)),
            Err(e) => ApplyOutcome::Rejected(RejectReason::Malformed(e.to_string())),
        }
    }

    pub fn apply_checked(&mut self, checked: Arc<CheckedBlock>) -> ApplyOutcome {
        let id = checked.id;
        if let Some(tree) = self.strands.get(checked.block.chain_index.as_usize()) {
            if tree.contains(&id) {
                return ApplyOutcome::Rejected(RejectReason::Duplicate(id));
            }
        }
        if let Err(reason) = self.validate_checked(&checked) {
            return ApplyOutcome::Rejected(reason);
        }

        let tree = &mut self.strands[checked.block.chain_index.as_usize()];
        let parent = checked.block.prev_hash;
        let height = tree.nodes[&parent].height + 1;
        tree.nodes.insert(
            id,
            Node {
                block: Some(checked),
                parent: Some(parent),
                height,
            },
        );
        tree.arrival.push(id);

        let old_best = tree.best;
        if height <= tree.best_height() {
            return ApplyOutcome::StoredSideBranch { height };
        }
        tree.best = id;
        if parent == old_best {
            ApplyOutcome::ExtendedBestTip { height }
        } else {
            let depth = tree.abandoned_depth(old_best, id);
            ApplyOutcome::CausedReorg { depth, height }
        }
    }

    /// Flat export: a small params header followed by every stored block,
    /// strand by strand in arrival order.
    pub fn export(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(EXPORT_MAGIC);
        out.push(EXPORT_VERSION);
        out.push(self.params.strand_exponent() as u8);
        out.extend_from_slice(&(self.params.difficulty_bits() as u16).to_be_bytes());
        out.push(self.params.hash_algo().wire_tag());
        out.push(self.params.sig_algo().wire_tag());
        out.extend_from_slice(&(self.block_count() as u64).to_be_bytes());
        for tree in &self.strands {
            for b in tree.blocks() {
                b.block.encode_into(&self.params, &mut out)?;
            }
        }
        Ok(out)
    }

    /// Rebuilds a ledger from [`Ledger::export`] bytes by re-applying every
    /// block. Any rejected block is a decode error.
    pub fn import(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.take(4)? != EXPORT_MAGIC {
            return Err(Error::Decode("not a ledger export (bad magic)".into()));
        }
        let version = r.u8()?;
        if version != EXPORT_VERSION {
            return Err(Error::Decode(format!(
                "unsupported export version {version}"
            )));
        }
        let p = r.u8()? as u32;
        let difficulty = r.u16()? as u32;
        let hash = crypto::HashAlgo::from_wire_tag(r.u8()?)?;
        let sig = crypto::SigAlgo::from_wire_tag(r.u8()?)?;
        let params = Params::with_algorithms(p, difficulty, hash, sig)?;
        let count = r.u64()?;
        let mut ledger = Ledger::genesis(params);
        for i in 0..count {
            let block = r.block(&params)?;
            if let ApplyOutcome::Rejected(reason) = ledger.apply_block(block) {
                return Err(Error::Decode(format!(
                    "exported block {i} rejected: {reason}"
                )));
            }
        }
        r.finish()?;
        Ok(ledger)
    }

    /// Ids of every block on some strand's best path.
    pub fn best_path_ids(&self) -> HashSet<Hash256> {
        self.strands.iter().flat_map(BlockTree::best_path).collect()
    }
}
