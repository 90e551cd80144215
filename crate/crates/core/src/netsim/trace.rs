//! Line-delimited JSON trace format.
//!
//! The first line echoes the config, then one line per event, then a
//! summary footer. Every line is an object with a `kind` field.

use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{EventKind, MinerStats, SimConfig, SimEvent, SimTrace, TraceSummary};
use crate::error::{Error, Result};
use crate::ledger::CheckedBlock;
use crate::types::{Block, ChainIndex, Hash256};

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum Record {
    Config {
        config: SimConfig,
    },
    TicketFound {
        time: u64,
        miner: u32,
        strand: ChainIndex,
        ticket_hash: Hash256,
        kept: bool,
    },
    BlockPublished {
        time: u64,
        miner: u32,
        strand: ChainIndex,
        block_id: Hash256,
        /// Canonical block bytes, hex encoded.
        block: String,
    },
    BlockArrival {
        time: u64,
        miner: u32,
        strand: ChainIndex,
        block_id: Hash256,
    },
    ForkResolved {
        time: u64,
        strand: ChainIndex,
        block_id: Hash256,
        depth: u64,
    },
    Summary {
        final_heights: Vec<u64>,
        final_tips: Vec<Hash256>,
        stored_blocks: Vec<u64>,
        miners: Vec<MinerStats>,
    },
}

fn io_err(e: impl std::fmt::Display) -> std::io::Error {
    std::io::Error::new(std::io::ErrorKind::InvalidData, e.to_string())
}

fn write_record<W: Write>(out: &mut W, record: &Record) -> std::io::Result<()> {
    serde_json::to_writer(&mut *out, record).map_err(io_err)?;
    out.write_all(b"\n")
}

pub fn write_trace<W: Write>(trace: &SimTrace, mut out: W) -> std::io::Result<()> {
    let params = trace.config.ledger_params();
    write_record(
        &mut out,
        &Record::Config {
            config: trace.config.clone(),
        },
    )?;
    let mut buf = Vec::new();
    for e in &trace.events {
        let time = e.time;
        let record = match &e.kind {
            EventKind::TicketFound {
                miner,
                strand,
                ticket_hash,
                kept,
            } => Record::TicketFound {
                time,
                miner: *miner,
                strand: *strand,
                ticket_hash: *ticket_hash,
                kept: *kept,
            },
            EventKind::BlockPublished { miner, block } => {
                buf.clear();
                block
                    .block()
                    .encode_into(&params, &mut buf)
                    .map_err(io_err)?;
                Record::BlockPublished {
                    time,
                    miner: *miner,
                    strand: block.block().chain_index,
                    block_id: block.id(),
                    block: hex::encode(&buf),
                }
            }
            EventKind::BlockArrival {
                recipient,
                strand,
                block_id,
            } => Record::BlockArrival {
                time,
                miner: *recipient,
                strand: *strand,
                block_id: *block_id,
            },
            EventKind::ForkResolved {
                strand,
                depth,
                block_id,
            } => Record::ForkResolved {
                time,
                strand: *strand,
                block_id: *block_id,
                depth: *depth,
            },
        };
        write_record(&mut out, &record)?;
    }
    let s = &trace.summary;
    write_record(
        &mut out,
        &Record::Summary {
            final_heights: s.final_heights.clone(),
            final_tips: s.final_tips.clone(),
            stored_blocks: s.stored_blocks.clone(),
            miners: s.miners.clone(),
        },
    )?;
    out.flush()
}

pub fn trace_to_jsonl(trace: &SimTrace) -> Result<String> {
    let mut out = Vec::new();
    write_trace(trace, &mut out).map_err(|e| Error::Trace(e.to_string()))?;
    String::from_utf8(out).map_err(|e| Error::Trace(e.to_string()))
}

/// Parses a trace. Published blocks are decoded and their ids checked
/// against the recorded ones.
pub fn read_trace(text: &str) -> Result<SimTrace> {
    let mut config: Option<SimConfig> = None;
    let mut events = Vec::new();
    let mut summary = None;
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |msg: String| Error::Trace(format!("line {lineno}: {msg}"));
        if summary.is_some() {
            return Err(bad("content after the summary record".into()));
        }
        let record: Record = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
        if let Record::Config { config: c } = record {
            if config.is_some() {
                return Err(bad("second config record".into()));
            }
            c.validate().map_err(|e| bad(e.to_string()))?;
            config = Some(c);
            continue;
        }
        let Some(cfg) = &config else {
            return Err(bad("trace must start with a config record".into()));
        };
        let kind = match record {
            Record::Config { .. } => unreachable!(),
            Record::TicketFound {
                time,
                miner,
                strand,
                ticket_hash,
                kept,
            } => (
                time,
                EventKind::TicketFound {
                    miner,
                    strand,
                    ticket_hash,
                    kept,
                },
            ),
            Record::BlockPublished {
                time,
                miner,
                strand,
                block_id,
                block,
            } => {
                let params = cfg.ledger_params();
                let bytes = hex::decode(&block).map_err(|e| bad(e.to_string()))?;
                let block = Block::from_bytes(&bytes, &params).map_err(|e| bad(e.to_string()))?;
                let checked = CheckedBlock::new(block, &params).map_err(|e| bad(e.to_string()))?;
                if checked.id() != block_id || checked.block().chain_index != strand {
                    return Err(bad("block does not match its recorded id or strand".into()));
                }
                (
                    time,
                    EventKind::BlockPublished {
                        miner,
                        block: Arc::new(checked),
                    },
                )
            }
            Record::BlockArrival {
                time,
                miner,
                strand,
                block_id,
            } => (
                time,
                EventKind::BlockArrival {
                    recipient: miner,
                    strand,
                    block_id,
                },
            ),
            Record::ForkResolved {
                time,
                strand,
                block_id,
                depth,
            } => (
                time,
                EventKind::ForkResolved {
                    strand,
                    depth,
                    block_id,
                },
            ),
            Record::Summary {
                final_heights,
                final_tips,
                stored_blocks,
                miners,
            } => {
                summary = Some(TraceSummary {
                    final_heights,
                    final_tips,
                    stored_blocks,
                    miners,
                });
                continue;
            }
        };
        if events.last().is_some_and(|e: &SimEvent| e.time > kind.0) {
            return Err(bad("events out of time order".into()));
        }
        events.push(SimEvent {
            time: kind.0,
            kind: kind.1,
        });
    }
    let config = config.ok_or_else(|| Error::Trace("empty trace".into()))?;
    let summary = summary.ok_or_else(|| Error::Trace("missing summary record".into()))?;
    let n = config.params.strand_count();
    if summary.final_heights.len() != n
        || summary.final_tips.len() != n
        || summary.stored_blocks.len() != n
    {
        return Err(Error::Trace(format!("summary does not cover {n} strands")));
    }
    Ok(SimTrace {
        config,
        events,
        summary,
    })
}
