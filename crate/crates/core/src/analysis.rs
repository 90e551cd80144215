//! Statistics over simulation traces.

use std::collections::HashSet;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::ledger::{genesis_id, Ledger};
use crate::miner::{honest_block, PrivateFork, SeededPayloads, TicketSearch};
use crate::netsim::{derive_seed, replay, SimTrace, PAYLOAD_LEN};
use crate::types::{ChainIndex, Hash256, Params};

/// Significance level of the statistical gates.
pub const DEFAULT_SIGNIFICANCE: f64 = 0.001;

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn to_json_line<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string(v).expect("report types serialize");
    s.push('\n');
    s
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThroughputReport {
    pub duration: u64,
    /// Best-path blocks per strand.
    pub best_path_blocks: Vec<u64>,
    pub per_strand_rate: Vec<f64>,
    pub total_rate: f64,
    pub baseline_rate: Option<f64>,
    pub scaling_factor: Option<f64>,
}

impl ThroughputReport {
    pub fn to_jsonl(&self) -> String {
        to_json_line(self)
    }

    /// One row per strand plus a `total` row. The baseline columns are
    /// present only when a baseline was given and are filled on the total row.
    pub fn to_csv(&self) -> String {
        let with_baseline = self.baseline_rate.is_some();
        let mut out = String::from("scope,best_path_blocks,duration,rate");
        if with_baseline {
            out.push_str(",baseline_rate,scaling_factor");
        }
        out.push('\n');
        for (i, (blocks, rate)) in self
            .best_path_blocks
            .iter()
            .zip(&self.per_strand_rate)
            .enumerate()
        {
            let _ = write!(out, "{i},{blocks},{},{rate}", self.duration);
            if with_baseline {
                out.push_str(",,");
            }
            out.push('\n');
        }
        let total: u64 = self.best_path_blocks.iter().sum();
        let _ = write!(out, "total,{total},{},{}", self.duration, self.total_rate);
        if with_baseline {
            let _ = write!(
                out,
                ",{},{}",
                fmt_opt(self.baseline_rate),
                fmt_opt(self.scaling_factor)
            );
        }
        out.push('\n');
        out
    }
}

/// Best-path block rates. A baseline must be a single-strand run with the
/// same aggregate hash rate and difficulty.
pub fn throughput(trace: &SimTrace, baseline: Option<&SimTrace>) -> Result<ThroughputReport> {
    let duration = trace.config.duration;
    if duration == 0 {
        return Err(Error::Analysis("trace has zero duration".into()));
    }
    let best_path_blocks = trace.summary.final_heights.clone();
    let per_strand_rate: Vec<f64> = best_path_blocks
        .iter()
        .map(|&h| h as f64 / duration as f64)
        .collect();
    let total_rate = per_strand_rate.iter().sum();
    let (baseline_rate, scaling_factor) = match baseline {
        None => (None, None),
        Some(base) => {
            check_baseline(trace, base)?;
            let rate = base.summary.final_heights[0] as f64 / base.config.duration as f64;
            (Some(rate), Some(total_rate / rate))
        }
    };
    Ok(ThroughputReport {
        duration,
        best_path_blocks,
        per_strand_rate,
        total_rate,
        baseline_rate,
        scaling_factor,
    })
}

fn check_baseline(trace: &SimTrace, base: &SimTrace) -> Result<()> {
    let (a, b) = (&trace.config, &base.config);
    if b.params.strand_exponent() != 0 {
        return Err(Error::Analysis(
            "baseline must be a single-strand run".into(),
        ));
    }
    if b.params.difficulty_bits() != a.params.difficulty_bits() {
        return Err(Error::Analysis(format!(
            "baseline difficulty {} differs from {}",
            b.params.difficulty_bits(),
            a.params.difficulty_bits()
        )));
    }
    let (ra, rb) = (a.aggregate_hash_rate(), b.aggregate_hash_rate());
    if (ra - rb).abs() > 1e-9 * ra.max(rb) {
        return Err(Error::Analysis(format!(
            "baseline hash rate {rb} differs from {ra}"
        )));
    }
    if b.duration == 0 {
        return Err(Error::Analysis("baseline has zero duration".into()));
    }
    if base.summary.final_heights[0] == 0 {
        return Err(Error::Analysis("baseline produced no blocks".into()));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UniformityReport {
    pub counts: Vec<u64>,
    pub samples: u64,
    pub statistic: f64,
    pub degrees_of_freedom: u64,
    pub significance: f64,
    pub critical_value: f64,
    pub pass: bool,
}

impl UniformityReport {
    pub fn to_jsonl(&self) -> String {
        to_json_line(self)
    }

    pub fn to_csv(&self) -> String {
        let expected = self.samples as f64 / self.counts.len() as f64;
        let mut out = String::from("strand,count,expected\n");
        for (i, c) in self.counts.iter().enumerate() {
            let _ = writeln!(out, "{i},{c},{expected}");
        }
        out
    }
}

/// Upper critical value of the chi-square distribution.
pub fn chi_square_critical(degrees_of_freedom: u64, significance: f64) -> Result<f64> {
    if !(significance > 0.0 && significance < 1.0) {
        return Err(Error::Analysis(format!(
            "significance {significance} not in (0, 1)"
        )));
    }
    let dist =
        ChiSquared::new(degrees_of_freedom as f64).map_err(|e| Error::Analysis(e.to_string()))?;
    Ok(dist.inverse_cdf(1.0 - significance))
}

/// Pearson chi-square test of the counts against the uniform distribution.
pub fn uniformity_of_counts(counts: &[u64], significance: f64) -> Result<UniformityReport> {
    let bins = counts.len() as u64;
    if bins < 2 {
        return Err(Error::Analysis("uniformity needs at least two bins".into()));
    }
    let samples: u64 = counts.iter().sum();
    if samples < 50 * bins {
        return Err(Error::Analysis(format!(
            "{samples} samples is fewer than the {} needed for {bins} bins",
            50 * bins
        )));
    }
    let expected = samples as f64 / bins as f64;
    let statistic = counts
        .iter()
        .map(|&c| {
            let d = c as f64 - expected;
            d * d / expected
        })
        .sum();
    let degrees_of_freedom = bins - 1;
    let critical_value = chi_square_critical(degrees_of_freedom, significance)?;
    Ok(UniformityReport {
        counts: counts.to_vec(),
        samples,
        statistic,
        degrees_of_freedom,
        significance,
        critical_value,
        pass: statistic < critical_value,
    })
}

pub fn uniformity_of_indices(
    indices: impl IntoIterator<Item = ChainIndex>,
    strand_count: usize,
    significance: f64,
) -> Result<UniformityReport> {
    let mut counts = vec![0u64; strand_count];
    for idx in indices {
        let slot = counts
            .get_mut(idx.as_usize())
            .ok_or(Error::IndexOutOfRange {
                index: idx.get() as u64,
                count: strand_count as u64,
            })?;
        *slot += 1;
    }
    uniformity_of_counts(&counts, significance)
}

/// Chain-index histogram of every ticket found in the trace.
pub fn uniformity(trace: &SimTrace, significance: f64) -> Result<UniformityReport> {
    uniformity_of_indices(
        trace.tickets().map(|(_, _, strand, _)| strand),
        trace.config.params.strand_count(),
        significance,
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrphanReport {
    /// Blocks the observer accepted, genesis excluded.
    pub accepted: u64,
    pub best_path: u64,
    pub orphaned: u64,
    pub orphan_rate: f64,
}

impl OrphanReport {
    pub fn to_jsonl(&self) -> String {
        to_json_line(self)
    }

    pub fn to_csv(&self) -> String {
        format!(
            "accepted,best_path,orphaned,orphan_rate\n{},{},{},{}\n",
            self.accepted, self.best_path, self.orphaned, self.orphan_rate
        )
    }
}

pub fn orphan_report(trace: &SimTrace) -> OrphanReport {
    let accepted: u64 = trace.summary.stored_blocks.iter().sum();
    let best_path: u64 = trace.summary.final_heights.iter().sum();
    let orphaned = accepted.saturating_sub(best_path);
    let orphan_rate = if accepted == 0 {
        0.0
    } else {
        orphaned as f64 / accepted as f64
    };
    OrphanReport {
        accepted,
        best_path,
        orphaned,
        orphan_rate,
    }
}

/// Fraction of accepted blocks that are not on the final best path of
/// their strand.
pub fn orphan_rate(trace: &SimTrace) -> f64 {
    orphan_report(trace).orphan_rate
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateComparison {
    pub count_a: u64,
    pub count_b: u64,
    pub rate_a: f64,
    pub rate_b: f64,
    pub z: f64,
    pub p_value: f64,
    pub pass: bool,
}

/// Two-sample test that two Poisson counts over the given exposures share
/// one rate. Conditional on the total, `count_a` is binomial with success
/// probability `exposure_a / (exposure_a + exposure_b)`; the test uses the
/// normal approximation and passes when the two-sided p-value is at least
/// `significance`.
pub fn compare_rates(
    count_a: u64,
    exposure_a: f64,
    count_b: u64,
    exposure_b: f64,
    significance: f64,
) -> Result<RateComparison> {
    if !(exposure_a > 0.0 && exposure_b > 0.0) {
        return Err(Error::Analysis("exposures must be positive".into()));
    }
    let total = (count_a + count_b) as f64;
    if total == 0.0 {
        return Err(Error::Analysis("no events to compare".into()));
    }
    let pi = exposure_a / (exposure_a + exposure_b);
    let z = (count_a as f64 - total * pi) / (total * pi * (1.0 - pi)).sqrt();
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let p_value = 2.0 * (1.0 - normal.cdf(z.abs()));
    Ok(RateComparison {
        count_a,
        count_b,
        rate_a: count_a as f64 / exposure_a,
        rate_b: count_b as f64 / exposure_b,
        z,
        p_value,
        pass: p_value >= significance,
    })
}

/// Per-strand comparison of best-path block rates between two runs.
pub fn compare_strand_rates(
    a: &SimTrace,
    b: &SimTrace,
    significance: f64,
) -> Result<Vec<RateComparison>> {
    let (ha, hb) = (&a.summary.final_heights, &b.summary.final_heights);
    if ha.len() != hb.len() {
        return Err(Error::Analysis("runs have different strand counts".into()));
    }
    ha.iter()
        .zip(hb)
        .map(|(&x, &y)| {
            compare_rates(
                x,
                a.config.duration as f64,
                y,
                b.config.duration as f64,
                significance,
            )
        })
        .collect()
}

/// Ids of the blocks on the final best paths, recovered by replay.
pub fn best_path_ids(trace: &SimTrace) -> Result<HashSet<Hash256>> {
    Ok(replay(trace)?.best_path_ids())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParallelPair {
    pub first: Hash256,
    pub second: Hash256,
    pub first_time: u64,
    pub second_time: u64,
}

/// Pairs of blocks on different strands, published at most `window` ticks
/// apart, that both ended up on final best paths.
pub fn parallel_acceptances(trace: &SimTrace, window: u64) -> Result<Vec<ParallelPair>> {
    let best = best_path_ids(trace)?;
    let kept: Vec<(u64, ChainIndex, Hash256)> = trace
        .published()
        .filter(|(_, _, b)| best.contains(&b.id()))
        .map(|(t, _, b)| (t, b.block().chain_index, b.id()))
        .collect();
    let mut pairs = Vec::new();
    for (i, &(t1, s1, id1)) in kept.iter().enumerate() {
        for &(t2, s2, id2) in &kept[i + 1..] {
            if t2 - t1 > window {
                break;
            }
            if s1 != s2 {
                pairs.push(ParallelPair {
                    first: id1,
                    second: id2,
                    first_time: t1,
                    second_time: t2,
                });
            }
        }
    }
    Ok(pairs)
}

/// Probability that an attacker holding fraction `q` of the hash rate ever
/// gets strictly ahead of the honest chain when starting `z` blocks behind:
/// the gambler's-ruin result `(q / (1 - q))^(z + 1)`, or 1 when `q >= 1/2`.
pub fn race_probability(q: f64, z: u64) -> f64 {
    if q >= 0.5 {
        return 1.0;
    }
    (q / (1.0 - q)).powf(z as f64 + 1.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CatchupPoint {
    pub z: u64,
    pub trials: u64,
    pub successes: u64,
    pub success_rate: f64,
    /// Binomial standard error of `success_rate` under the oracle value.
    pub std_error: f64,
    pub oracle: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CatchupCurve {
    pub q: f64,
    pub points: Vec<CatchupPoint>,
}

impl CatchupCurve {
    pub fn to_jsonl(&self) -> String {
        self.points
            .iter()
            .map(|p| {
                to_json_line(&serde_json::json!({
                    "q": self.q, "z": p.z, "trials": p.trials, "successes": p.successes,
                    "success_rate": p.success_rate, "std_error": p.std_error, "oracle": p.oracle,
                }))
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("q,z,trials,successes,success_rate,std_error,oracle\n");
        for p in &self.points {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                self.q, p.z, p.trials, p.successes, p.success_rate, p.std_error, p.oracle
            );
        }
        out
    }

    /// True if no later point exceeds an earlier one by more than
    /// `sigmas` combined standard errors.
    pub fn is_non_increasing(&self, sigmas: f64) -> bool {
        self.points.iter().enumerate().all(|(i, a)| {
            self.points[i + 1..].iter().all(|b| {
                let se = (sample_variance(a) + sample_variance(b)).sqrt();
                b.success_rate <= a.success_rate + sigmas * se
            })
        })
    }
}

fn sample_variance(p: &CatchupPoint) -> f64 {
    p.success_rate * (1.0 - p.success_rate) / p.trials as f64
}

/// Race setup for [`catchup`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RaceSetup {
    /// Ledger parameters. Tickets are drawn analytically, so the difficulty
    /// only affects the genesis ids.
    pub params: Params,
    pub target: ChainIndex,
    pub seed: u64,
    /// A race is lost once the attacker trails by this many blocks.
    pub abandon_deficit: u64,
    /// Hard cap on tickets per race.
    pub max_tickets: u64,
}

impl RaceSetup {
    pub fn new(params: Params, seed: u64) -> Self {
        Self {
            params,
            target: ChainIndex(0),
            seed,
            abandon_deficit: 24,
            max_tickets: 100_000,
        }
    }
}

/// Runs `trials` private-fork races per starting deficit and reports the
/// success frequencies next to [`race_probability`].
///
/// Each race starts with `z` honest blocks on the target strand and an
/// empty private branch anchored at genesis. Every ticket goes to the
/// attacker with probability `q` (competing exponential clocks) and lands
/// on a uniformly drawn strand. The attacker keeps target-strand tickets
/// and publishes once its branch is strictly longer; honest tickets become
/// blocks on the public tip. A race is won when the published branch takes
/// over the public strand.
pub fn catchup(setup: &RaceSetup, q: f64, z_values: &[u64], trials: u64) -> Result<CatchupCurve> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::Analysis(format!(
            "attacker fraction {q} not in (0, 1)"
        )));
    }
    if trials == 0 {
        return Err(Error::Analysis("trials must be positive".into()));
    }
    if setup.target.as_usize() >= setup.params.strand_count() {
        return Err(Error::IndexOutOfRange {
            index: setup.target.get() as u64,
            count: setup.params.strand_count() as u64,
        });
    }
    let mut points = Vec::with_capacity(z_values.len());
    for &z in z_values {
        if z >= setup.abandon_deficit {
            return Err(Error::Analysis(format!(
                "deficit {z} must be below the abandon deficit {}",
                setup.abandon_deficit
            )));
        }
        let mut successes = 0;
        for trial in 0..trials {
            let seed = derive_seed(derive_seed(setup.seed, "catchup", z), "trial", trial);
            if race(setup, q, z, seed) {
                successes += 1;
            }
        }
        let oracle = race_probability(q, z);
        points.push(CatchupPoint {
            z,
            trials,
            successes,
            success_rate: successes as f64 / trials as f64,
            std_error: (oracle * (1.0 - oracle) / trials as f64).sqrt(),
            oracle,
        });
    }
    Ok(CatchupCurve { q, points })
}

fn race(setup: &RaceSetup, q: f64, z: u64, seed: u64) -> bool {
    let params = setup.params;
    let n = params.strand_count() as u32;
    let target = setup.target;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "race", 0));
    let mut honest = TicketSearch::new(derive_seed(seed, "honest", 0));
    let mut attacker = TicketSearch::new(derive_seed(seed, "attacker", 0));
    let mut honest_payloads =
        SeededPayloads::new(derive_seed(seed, "honest-payload", 0), PAYLOAD_LEN);
    let mut attacker_payloads =
        SeededPayloads::new(derive_seed(seed, "attacker-payload", 0), PAYLOAD_LEN);
    let mut public = Ledger::genesis(params);

    let mut honest_ticket = |public: &mut Ledger, strand: ChainIndex| {
        let view = public.view();
        let found = honest.analytic_ticket(&view.tips, &params, strand);
        let block = honest_block(&found, &view, &params, &mut honest_payloads, 0);
        let outcome = public.apply_block(block);
        debug_assert!(outcome.is_accepted());
    };
    for _ in 0..z {
        honest_ticket(&mut public, target);
    }
    let mut fork = PrivateFork::anchored(target, 1, genesis_id(&params, target), 0);

    for _ in 0..setup.max_tickets {
        let strand = ChainIndex(rng.gen_range(0..n));
        if rng.gen_bool(q) {
            let view = public.view();
            let found = attacker.analytic_ticket(&fork.search_tips(&view), &params, strand);
            let reaction = fork.on_ticket(&found, &view, &params, &mut attacker_payloads, 1);
            if !reaction.publish.is_empty() {
                let last = reaction.publish.len() - 1;
                let mut last_id = None;
                for (i, block) in reaction.publish.into_iter().enumerate() {
                    if i == last {
                        last_id = crate::types::block_id(&block, &params).ok();
                    }
                    public.apply_block(block);
                }
                return last_id == Some(public.tips()[target.as_usize()]);
            }
        } else {
            honest_ticket(&mut public, strand);
        }
        let public_height = public.heights()[target.as_usize()];
        let (_, private_height) = fork.private_tip(&public.view());
        if public_height >= private_height + setup.abandon_deficit {
            return false;
        }
    }
    false
}
