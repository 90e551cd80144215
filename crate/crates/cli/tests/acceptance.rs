//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line for
//! each and exits non-zero if any failed. Pass a criterion number to run
//! just that one: `cargo test --test acceptance -- 8`.

use std::collections::HashMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::Command;
use std::time::{Duration, Instant};

use ed25519_dalek::{Signature, VerifyingKey};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use strandchain::analysis::{
    best_path_ids, catchup, compare_strand_rates, parallel_acceptances, throughput,
    uniformity_of_indices, RaceSetup, DEFAULT_SIGNIFICANCE,
};
use strandchain::crypto::Keypair;
use strandchain::ledger::{Check, Ledger};
use strandchain::miner::{
    honest_block, FoundTicket, Hoarder, MinerConfig, Policy, SeededPayloads, TicketSearch,
};
use strandchain::netsim::{read_trace, replay, run, LatencyModel, Mode, SimConfig};
use strandchain::pow::CancelToken;
use strandchain::types::block_id;
use strandchain::{Block, ChainIndex, Hash256, Params};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn within_time(o: Outcome, elapsed: Duration, limit: Option<Duration>) -> Outcome {
    match limit {
        Some(l) if elapsed >= l => outcome(
            false,
            format!("{}; runtime {elapsed:.1?} over the {l:?} limit", o.detail),
        ),
        _ => o,
    }
}

type Criterion = (u32, &'static str, Option<u64>, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 11] = [
        (1, "throughput scaling", Some(60), throughput_scaling),
        (2, "parallel acceptance", Some(60), parallel_acceptance),
        (
            3,
            "chain-index uniformity",
            Some(120),
            chain_index_uniformity,
        ),
        (4, "targeting cost", None, targeting_cost),
        (5, "freshness / anti-hoarding", None, anti_hoarding),
        (6, "hijack prevention", None, hijack_prevention),
        (
            7,
            "equivocation containment",
            None,
            equivocation_containment,
        ),
        (8, "catch-up decay", Some(300), catchup_decay),
        (9, "validation completeness", None, validation_completeness),
        (10, "determinism", None, determinism),
        (11, "mode agreement", None, mode_agreement),
    ];
    let only: Vec<u32> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut failed = 0;
    for (number, name, limit, f) in criteria {
        if !only.is_empty() && !only.contains(&number) {
            continue;
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        let result = within_time(result, elapsed, limit.map(Duration::from_secs));
        if !result.pass {
            failed += 1;
        }
        println!(
            "criterion {number:>2} {name}: {} [{:.1}s] {}",
            if result.pass { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            result.detail
        );
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}

fn honest_miners(count: u32, rate: f64) -> Vec<MinerConfig> {
    (0..count).map(|i| MinerConfig::honest(i, rate)).collect()
}

fn find_ticket(search: &mut TicketSearch, tips: &[Hash256], params: &Params) -> FoundTicket {
    loop {
        if let Some(f) = search
            .search(tips, params, 1 << 20, &CancelToken::new())
            .found
        {
            return f;
        }
    }
}

/// Mines one block on the ledger's current tips and applies it.
fn mine_and_apply(
    ledger: &mut Ledger,
    search: &mut TicketSearch,
    payloads: &mut SeededPayloads,
) -> (Block, ChainIndex) {
    let params = *ledger.params();
    let view = ledger.view();
    let found = find_ticket(search, &view.tips, &params);
    let block = honest_block(&found, &view, &params, payloads, 0);
    assert!(ledger.apply_block(block.clone()).is_accepted());
    (block, found.chain_index())
}

// 1. 32 miners, 8 strands against one, same per-ticket difficulty and
// aggregate hash rate. Each miner finds at most one ticket per tick
// (probability pi = 1 - e^-mu at mu expected tickets), and blocks found in
// one tick compete, so a strand gains one best-path block per tick iff some
// miner drew it. The expected factor is
// 8 (1 - (1 - pi/8)^32) / (1 - (1 - pi)^32).
fn throughput_scaling() -> Outcome {
    let mu: f64 = 5.0;
    let miners = honest_miners(32, mu * 256.0);
    let pi = 1.0 - (-mu).exp();
    let multi = SimConfig {
        params: Params::new(3, 8).unwrap(),
        miners,
        latency_model: LatencyModel::Zero,
        mode: Mode::Analytic,
        duration: 1400,
        seed: 1,
    };
    let single = SimConfig {
        params: Params::new(0, 8).unwrap(),
        ..multi.clone()
    };
    let t_multi = run(&multi).unwrap();
    let t_single = run(&single).unwrap();
    let report = throughput(&t_multi, Some(&t_single)).unwrap();
    let blocks: u64 = report.best_path_blocks.iter().sum();
    let factor = report.scaling_factor.unwrap();
    let model = 8.0 * (1.0 - (1.0 - pi / 8.0).powi(32)) / (1.0 - (1.0 - pi).powi(32));
    outcome(
        blocks >= 10_000 && (factor - 8.0).abs() <= 0.4,
        format!("factor {factor:.3} (target 8 +/- 0.4, model {model:.3}) over {blocks} best-path blocks"),
    )
}

// 2. 100 real-hash miners, two strands, 2-tick propagation delay.
fn parallel_acceptance() -> Outcome {
    let config = SimConfig {
        params: Params::new(1, 8).unwrap(),
        miners: honest_miners(100, 1.0),
        latency_model: LatencyModel::Fixed { delay: 2 },
        mode: Mode::RealHash,
        duration: 3000,
        seed: 2,
    };
    let trace = run(&config).unwrap();
    let mut counts = [0u64; 2];
    for (_, _, strand, _) in trace.tickets() {
        counts[strand.as_usize()] += 1;
    }
    let n = (counts[0] + counts[1]) as f64;
    let sigma = (n * 0.25).sqrt();
    let deviation = (counts[0] as f64 - n / 2.0).abs();
    let pairs = parallel_acceptances(&trace, 2).unwrap();
    outcome(
        deviation <= 3.0 * sigma && !pairs.is_empty(),
        format!(
            "tickets {counts:?}, |dev| {deviation:.1} <= 3 sigma {:.1}; {} parallel best-path pairs within 2 ticks",
            3.0 * sigma,
            pairs.len()
        ),
    )
}

// 3. 20,000 real tickets at difficulty 8 over 16 strands.
fn chain_index_uniformity() -> Outcome {
    let params = Params::new(4, 8).unwrap();
    let tips = Ledger::genesis(params).tips();
    let mut search = TicketSearch::new(3);
    let mut indices = Vec::with_capacity(20_000);
    while indices.len() < 20_000 {
        let found = find_ticket(&mut search, &tips, &params);
        assert!(found.judgement.zero_bits >= 8);
        indices.push(found.chain_index());
    }
    let r = uniformity_of_indices(indices, 16, DEFAULT_SIGNIFICANCE).unwrap();
    outcome(
        r.pass,
        format!(
            "chi-square {:.2} < critical {:.2} (df {}, alpha 0.001) over {} tickets",
            r.statistic, r.critical_value, r.degrees_of_freedom, r.samples
        ),
    )
}

// 4. A targeted and an honest miner with equal hash rates on 16 strands.
fn targeting_cost() -> Outcome {
    let hash_rate = 16.0;
    let duration = 40_000;
    let config = SimConfig {
        params: Params::new(4, 4).unwrap(),
        miners: vec![
            MinerConfig {
                miner_id: 0,
                hash_rate,
                policy: Policy::Targeted { target: 5 },
            },
            MinerConfig::honest(1, hash_rate),
        ],
        latency_model: LatencyModel::Zero,
        mode: Mode::RealHash,
        duration,
        seed: 4,
    };
    let trace = run(&config).unwrap();
    let (t, h) = (&trace.summary.miners[0], &trace.summary.miners[1]);
    let discard = t.tickets_discarded as f64 / t.tickets_found as f64;
    let hashes = hash_rate * duration as f64;
    let per_hash = |s: &strandchain::netsim::MinerStats| {
        (s.blocks_published - s.blocks_rejected) as f64 / hashes
    };
    let ratio = per_hash(t) / per_hash(h);
    let expected = 1.0 / 16.0;
    outcome(
        t.tickets_found >= 20_000 && (discard - 15.0 / 16.0).abs() <= 0.02 && (ratio - expected).abs() <= 0.1 * expected,
        format!(
            "discarded {discard:.4} of {} tickets (target 0.9375 +/- 0.02); accepted per hash {ratio:.4} of honest (target 0.0625 +/- 10%)",
            t.tickets_found
        ),
    )
}

// 5. Hoard a ticket, let other blocks land during the hold, then spend it.
fn anti_hoarding() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut advanced, mut untouched, mut wrong) = (0u32, 0u32, Vec::new());
    for case in 0..1000u64 {
        let params = Params::new(rng.gen_range(0..=3), 4).unwrap();
        let mut ledger = Ledger::genesis(params);
        let mut other = TicketSearch::new(rng.gen());
        let mut payloads = SeededPayloads::new(case, 16);
        for _ in 0..rng.gen_range(0..3) {
            mine_and_apply(&mut ledger, &mut other, &mut payloads);
        }
        let hold = rng.gen_range(1..50);
        let mut hoarder = Hoarder::new(hold);
        let mut search = TicketSearch::new(rng.gen());
        let found = find_ticket(&mut search, &ledger.tips(), &params);
        let strand = found.chain_index();
        let before = ledger.strand_height(strand).unwrap();
        hoarder.store(0, found);
        for _ in 0..rng.gen_range(0..4) {
            mine_and_apply(&mut ledger, &mut other, &mut payloads);
        }
        let moved = ledger.strand_height(strand).unwrap() != before;
        let blocks = hoarder.release_due(hold, &ledger.view(), &params, &mut payloads, 9);
        assert_eq!(blocks.len(), 1);
        let verdict = ledger.validate_block(&blocks[0]);
        let ok = if moved {
            advanced += 1;
            matches!(&verdict, Err(r) if r.check() == Some(Check::V2))
        } else {
            untouched += 1;
            verdict.is_ok()
        };
        if !ok {
            wrong.push(case);
        }
    }
    outcome(
        wrong.is_empty() && advanced >= 100 && untouched >= 100,
        format!(
            "{advanced} advanced-strand spends rejected at V2, {untouched} untouched-strand spends accepted, {} wrong",
            wrong.len()
        ),
    )
}

// 6. Replace the signature of honest blocks with another key's signature
// over the same block id.
fn hijack_prevention() -> Outcome {
    let params = Params::new(2, 4).unwrap();
    let mut ledger = Ledger::genesis(params);
    let mut search = TicketSearch::new(6);
    let mut payloads = SeededPayloads::new(6, 24);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut rejected_at_v4 = 0;
    for _ in 0..1000 {
        let view = ledger.view();
        let found = find_ticket(&mut search, &view.tips, &params);
        let block = honest_block(&found, &view, &params, &mut payloads, 0);
        let thief = Keypair::from_seed(&rng.gen::<[u8; 32]>()).unwrap();
        let mut stolen = block.clone();
        stolen.signature = thief.sign(&block_id(&block, &params).unwrap().0);
        if matches!(ledger.validate_block(&stolen), Err(r) if r.check() == Some(Check::V4)) {
            rejected_at_v4 += 1;
        }
        assert!(ledger.apply_block(block).is_accepted());
    }
    outcome(
        rejected_at_v4 == 1000,
        format!("{rejected_at_v4}/1000 re-signed blocks rejected at V4"),
    )
}

// 7. An equivocator publishing three blocks per ticket among honest miners.
fn equivocation_containment() -> Outcome {
    let mut miners = honest_miners(4, 0.05);
    miners.push(MinerConfig {
        miner_id: 4,
        hash_rate: 0.05,
        policy: Policy::Equivocator { copies: 3 },
    });
    let config = SimConfig {
        params: Params::new(1, 0).unwrap(),
        miners,
        latency_model: LatencyModel::Uniform { lo: 0, hi: 3 },
        mode: Mode::Analytic,
        duration: 4000,
        seed: 7,
    };
    let trace = run(&config).unwrap();
    let best = best_path_ids(&trace).unwrap();
    let mut by_ticket: HashMap<Hash256, (u32, u32)> = HashMap::new();
    for (_, miner, block) in trace.published() {
        if miner == 4 {
            let entry = by_ticket.entry(block.judgement().ticket_hash).or_default();
            entry.0 += 1;
            entry.1 += best.contains(&block.id()) as u32;
        }
    }
    let tickets = by_ticket.len();
    let well_formed = by_ticket.values().all(|&(copies, _)| copies == 3);
    let max_on_path = by_ticket.values().map(|&(_, on)| on).max().unwrap_or(0);
    let survivors = by_ticket.values().filter(|&&(_, on)| on == 1).count();
    outcome(
        tickets >= 100 && well_formed && max_on_path <= 1,
        format!("{tickets} tickets x 3 copies; at most {max_on_path} copy per ticket on a best path ({survivors} tickets kept one)"),
    )
}

/// Probability of ever reaching a lead of one from a deficit of `z` when
/// each step moves toward the goal with probability `q`, computed by
/// forward recurrence from the winning boundary with an absorbing barrier
/// far away.
fn race_oracle(q: f64, z: u64) -> f64 {
    const BARRIER: usize = 400;
    // P(-1) = 1; P(d) = q P(d-1) + (1-q) P(d+1). Write P(d) = a_d + b_d x
    // with x = P(0) and solve P(BARRIER) = 0.
    let (mut a_prev, mut b_prev) = (1.0f64, 0.0f64);
    let (mut a, mut b) = (0.0f64, 1.0f64);
    let mut coeffs = vec![(a, b)];
    for _ in 0..BARRIER {
        let next = ((a - q * a_prev) / (1.0 - q), (b - q * b_prev) / (1.0 - q));
        (a_prev, b_prev) = (a, b);
        (a, b) = next;
        coeffs.push((a, b));
    }
    let x = -a / b;
    let (az, bz) = coeffs[z as usize];
    az + bz * x
}

// 8. Private-fork races at q = 0.3.
fn catchup_decay() -> Outcome {
    let q = 0.3;
    let setup = RaceSetup::new(Params::new(0, 0).unwrap(), 8);
    let curve = catchup(&setup, q, &[1, 2, 4, 6], 1000).unwrap();
    let mut detail = Vec::new();
    let mut within = true;
    for p in &curve.points {
        let oracle = race_oracle(q, p.z);
        let sigma = (oracle * (1.0 - oracle) / p.trials as f64).sqrt();
        within &= (p.success_rate - oracle).abs() <= 3.0 * sigma;
        detail.push(format!("z={} {:.4} vs {:.4}", p.z, p.success_rate, oracle));
    }
    let monotone = curve.is_non_increasing(2.0);
    outcome(
        monotone && within,
        format!(
            "{} (1000 trials each; monotone {monotone}, all within 3 sigma {within})",
            detail.join(", ")
        ),
    )
}

/// Independent re-implementation of the four checks. Returns the first
/// failing check, in checklist order.
fn oracle_verdict(block: &Block, params: &Params, parent_known: bool) -> Option<Check> {
    let n = params.strand_count();
    let p = params.strand_exponent();
    let mut ticket = Vec::with_capacity(32 * n + 40);
    for tip in &block.ticket.tip_hashes {
        ticket.extend_from_slice(&tip.0);
    }
    ticket.extend_from_slice(&block.ticket.pubkey.0);
    ticket.extend_from_slice(&block.ticket.nonce.to_be_bytes());
    let th: [u8; 32] = Sha256::digest(&ticket).into();
    let tail = u32::from_be_bytes(th[28..32].try_into().unwrap()) as u64;
    let derived = tail & ((1u64 << p) - 1);
    if derived != block.chain_index.get() as u64 {
        return Some(Check::V1);
    }
    let own_tip = block.ticket.tip_hashes[block.chain_index.as_usize()];
    if own_tip != block.prev_hash || !parent_known {
        return Some(Check::V2);
    }
    let mut zeros = 0;
    for byte in th {
        if byte == 0 {
            zeros += 8;
        } else {
            zeros += byte.leading_zeros();
            break;
        }
    }
    if zeros < params.difficulty_bits() {
        return Some(Check::V3);
    }
    let mut header = Vec::new();
    header.extend_from_slice(&block.chain_index.get().to_be_bytes());
    header.extend_from_slice(&block.prev_hash.0);
    header.extend_from_slice(&Sha256::digest(&block.payload));
    header.extend_from_slice(&th);
    let id = Sha256::digest(&header);
    let key = VerifyingKey::from_bytes(&block.ticket.pubkey.0);
    let sig = Signature::from_slice(&block.signature);
    match (key, sig) {
        (Ok(k), Ok(s)) if k.verify_strict(&id, &s).is_ok() => None,
        _ => Some(Check::V4),
    }
}

// 9. Mutate each field of honest blocks.
fn validation_completeness() -> Outcome {
    let params = Params::new(2, 4).unwrap();
    let n = params.strand_count() as u32;
    let mut ledger = Ledger::genesis(params);
    let mut search = TicketSearch::new(9);
    let mut payloads = SeededPayloads::new(9, 24);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut total = 0;
    let mut failures = Vec::new();
    for round in 0..200 {
        let view = ledger.view();
        let found = find_ticket(&mut search, &view.tips, &params);
        let block = honest_block(&found, &view, &params, &mut payloads, 0);
        assert_eq!(oracle_verdict(&block, &params, true), None);
        assert!(ledger.validate_block(&block).is_ok());
        let own = block.chain_index.as_usize();
        let bit = |rng: &mut ChaCha8Rng| 1u8 << rng.gen_range(0..8);
        let mut mutants: Vec<(&str, Check, Block)> = Vec::new();
        let mut m = block.clone();
        m.chain_index = ChainIndex((m.chain_index.get() + rng.gen_range(1..n)) % n);
        mutants.push(("chain_index", Check::V1, m));
        let mut m = block.clone();
        m.prev_hash.0[rng.gen_range(0..32)] ^= bit(&mut rng);
        mutants.push(("prev_hash", Check::V2, m));
        let mut m = block.clone();
        let i = rng.gen_range(0..m.payload.len());
        m.payload[i] ^= bit(&mut rng);
        mutants.push(("payload", Check::V4, m));
        let mut m = block.clone();
        m.ticket.nonce ^= 1 << rng.gen_range(0..64);
        mutants.push(("ticket.nonce", Check::V1, m));
        let mut m = block.clone();
        m.ticket.tip_hashes[own].0[rng.gen_range(0..32)] ^= bit(&mut rng);
        mutants.push(("ticket.tip_hashes[own]", Check::V2, m));
        let mut m = block.clone();
        let i = rng.gen_range(0..m.signature.len());
        m.signature[i] ^= bit(&mut rng);
        mutants.push(("signature", Check::V4, m));
        for (field, _, mutant) in &mutants {
            total += 1;
            let parent_known = ledger
                .strand(mutant.chain_index)
                .map(|s| s.contains(&mutant.prev_hash))
                .unwrap_or(false);
            let expected = oracle_verdict(mutant, &params, parent_known);
            let got = ledger.validate_block(mutant).err().and_then(|r| r.check());
            if expected.is_none() || got != expected {
                failures.push(format!(
                    "round {round} {field}: expected {expected:?}, got {got:?}"
                ));
            }
        }
        // Mutations that leave the ticket hash alone fail exactly the
        // check guarding the mutated field.
        for (field, check, mutant) in mutants
            .iter()
            .filter(|(f, _, _)| matches!(*f, "chain_index" | "prev_hash" | "payload" | "signature"))
        {
            let got = ledger.validate_block(mutant).err().and_then(|r| r.check());
            if got != Some(*check) {
                failures.push(format!(
                    "round {round} {field}: expected {check}, got {got:?}"
                ));
            }
        }
        assert!(ledger.apply_block(block).is_accepted());
    }
    let detail = match failures.first() {
        None => format!("{total} mutants, each rejected at the independently predicted check"),
        Some(f) => format!(
            "{} of {total} mutants misjudged, first: {f}",
            failures.len()
        ),
    };
    outcome(failures.is_empty(), detail)
}

const DETERMINISM_CONFIG: &str = r#"
seed = 10
duration = 600
mode = "real_hash"

[params]
strand_exponent_p = 2
difficulty_bits = 6

[latency_model]
kind = "uniform"
lo = 0
hi = 5

[[miners]]
miner_id = 0
hash_rate = 4.0
count = 6

[[miners]]
miner_id = 6
hash_rate = 4.0
policy = { kind = "equivocator", copies = 2 }
"#;

// 10. Two CLI simulations with the same config and seed, then replay.
fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("sim.toml");
    std::fs::write(&config, DETERMINISM_CONFIG).unwrap();
    let bin = env!("CARGO_BIN_EXE_strandchain");
    let simulate = |out: &str| {
        let path = dir.path().join(out);
        let status = Command::new(bin)
            .args(["simulate", "--seed", "4242", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(&path)
            .status()
            .unwrap();
        assert!(status.success());
        std::fs::read(path).unwrap()
    };
    let a = simulate("a.jsonl");
    let b = simulate("b.jsonl");
    let replayed = Command::new(bin)
        .arg("replay")
        .arg("--trace")
        .arg(dir.path().join("a.jsonl"))
        .output()
        .unwrap()
        .status;
    let trace = read_trace(std::str::from_utf8(&a).unwrap()).unwrap();
    let ledger = replay(&trace).unwrap();
    let heights_match = ledger.heights() == trace.summary.final_heights;
    outcome(
        a == b && replayed.success() && heights_match,
        format!(
            "{} trace bytes identical: {}; replay exit ok: {}; heights {:?} reproduced: {heights_match}",
            a.len(),
            a == b,
            replayed.success(),
            trace.summary.final_heights
        ),
    )
}

// 11. The same network in real-hash mode at difficulty 8 and in analytic mode.
fn mode_agreement() -> Outcome {
    let real = SimConfig {
        params: Params::new(2, 8).unwrap(),
        miners: honest_miners(10, 4.0),
        latency_model: LatencyModel::Zero,
        mode: Mode::RealHash,
        duration: 37_000,
        seed: 11,
    };
    let analytic = SimConfig {
        mode: Mode::Analytic,
        ..real.clone()
    };
    let a = run(&real).unwrap();
    let b = run(&analytic).unwrap();
    let blocks_a: u64 = a.summary.final_heights.iter().sum();
    let blocks_b: u64 = b.summary.final_heights.iter().sum();
    let cmp = compare_strand_rates(&a, &b, DEFAULT_SIGNIFICANCE).unwrap();
    let min_p = cmp.iter().map(|c| c.p_value).fold(1.0, f64::min);
    outcome(
        blocks_a >= 5000 && blocks_b >= 5000 && cmp.iter().all(|c| c.pass),
        format!(
            "best-path blocks {blocks_a} (real) vs {blocks_b} (analytic), per strand {:?} vs {:?}; min p-value {min_p:.4}",
            a.summary.final_heights, b.summary.final_heights
        ),
    )
}
