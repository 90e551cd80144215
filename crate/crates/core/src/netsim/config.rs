use std::collections::HashSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::miner::{MinerConfig, Policy};
use crate::types::Params;

/// Block propagation delay, in simulated time units.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LatencyModel {
    #[default]
    Zero,
    Fixed {
        delay: u64,
    },
    /// Uniform over the inclusive range `[lo, hi]`.
    Uniform {
        lo: u64,
        hi: u64,
    },
}

impl LatencyModel {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        match *self {
            LatencyModel::Zero => 0,
            LatencyModel::Fixed { delay } => delay,
            LatencyModel::Uniform { lo, hi } => rng.gen_range(lo..=hi),
        }
    }

    /// Largest delay the model can produce.
    pub fn max_delay(&self) -> u64 {
        match *self {
            LatencyModel::Zero => 0,
            LatencyModel::Fixed { delay } => delay,
            LatencyModel::Uniform { hi, .. } => hi,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Tickets are actually mined; `hash_rate` is hashes per time step.
    RealHash,
    /// Ticket arrivals are exponential with rate `hash_rate * 2^-difficulty`
    /// and the strand is drawn uniformly.
    Analytic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub params: Params,
    pub miners: Vec<MinerConfig>,
    #[serde(default)]
    pub latency_model: LatencyModel,
    pub mode: Mode,
    pub duration: u64,
    pub seed: u64,
}

/// Config-file miner entry. `count` expands into that many miners with
/// consecutive ids starting at `miner_id`.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MinerEntry {
    miner_id: u32,
    hash_rate: f64,
    #[serde(default = "honest")]
    policy: Policy,
    #[serde(default)]
    count: Option<u32>,
}

fn honest() -> Policy {
    Policy::Honest
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    params: Params,
    miners: Vec<MinerEntry>,
    #[serde(default)]
    latency_model: LatencyModel,
    mode: Mode,
    duration: u64,
    seed: u64,
}

impl SimConfig {
    /// Parses the TOML config format and validates the result.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: ConfigFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut miners = Vec::new();
        for entry in file.miners {
            let count = entry.count.unwrap_or(1);
            if count == 0 {
                return Err(Error::Config(format!(
                    "miner {}: count must be positive",
                    entry.miner_id
                )));
            }
            for k in 0..count {
                let miner_id = entry.miner_id.checked_add(k).ok_or_else(|| {
                    Error::Config(format!("miner ids starting at {} overflow", entry.miner_id))
                })?;
                miners.push(MinerConfig {
                    miner_id,
                    hash_rate: entry.hash_rate,
                    policy: entry.policy.clone(),
                });
            }
        }
        let config = SimConfig {
            params: file.params,
            miners,
            latency_model: file.latency_model,
            mode: file.mode,
            duration: file.duration,
            seed: file.seed,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.miners.is_empty() {
            return Err(Error::Config("at least one miner is required".into()));
        }
        if self.duration == 0 {
            return Err(Error::Config("duration must be positive".into()));
        }
        if let LatencyModel::Uniform { lo, hi } = self.latency_model {
            if lo > hi {
                return Err(Error::Config(format!(
                    "uniform latency has lo {lo} > hi {hi}"
                )));
            }
        }
        let mut ids = HashSet::new();
        for m in &self.miners {
            if !ids.insert(m.miner_id) {
                return Err(Error::Config(format!("duplicate miner id {}", m.miner_id)));
            }
            m.validate(&self.params)?;
            if self.mode == Mode::RealHash && (m.hash_rate < 1.0 || m.hash_rate.fract() != 0.0) {
                return Err(Error::Config(format!(
                    "miner {}: real-hash mode needs a whole number of hashes per step, got {}",
                    m.miner_id, m.hash_rate
                )));
            }
        }
        Ok(())
    }

    /// Sum of all miners' hash rates.
    pub fn aggregate_hash_rate(&self) -> f64 {
        self.miners.iter().map(|m| m.hash_rate).sum()
    }

    /// Params the replicas validate with. Analytic runs model the work by
    /// arrival times, so their tickets are checked at zero difficulty.
    pub fn ledger_params(&self) -> Params {
        match self.mode {
            Mode::RealHash => self.params,
            Mode::Analytic => self
                .params
                .with_difficulty(0)
                .expect("zero difficulty is always valid"),
        }
    }
}
