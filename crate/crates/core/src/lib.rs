//! Ticket-based multi-strand proof-of-work.
//!
//! The ledger is made of `n = 2^p` strands. A miner first scans for a
//! *ticket* (the tip hash of every strand, a fresh public key and a nonce)
//! whose hash starts with enough zero bits; the low `p` bits of that hash
//! decide which strand the miner may extend. The block is then signed with
//! the ticket's key so nobody else can reuse the ticket.
//!
//! Module map:
//!
//! * [`types`] and [`crypto`]: domain types, canonical byte layouts, hashing and signatures.
//! * [`pow`]: ticket hashing, the two validity conditions and the nonce scan.
//! * [`ledger`]: per-strand block trees, block validation and longest-chain fork choice.
//! * [`miner`]: honest and adversarial mining policies.
//! * [`netsim`]: deterministic discrete-event network simulator and trace format.
//! * [`analysis`]: throughput, uniformity, orphan and catch-up statistics.

pub mod analysis;
pub mod crypto;
pub mod error;
pub mod ledger;
pub mod miner;
pub mod netsim;
pub mod pow;
pub mod types;

pub use error::{Error, Result};
pub use types::{Block, ChainIndex, Hash256, Params, PublicKey, Ticket};
