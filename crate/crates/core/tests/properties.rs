use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use strandchain::analysis::race_probability;
use strandchain::ledger::{Check, Ledger, LedgerView};
use strandchain::miner::{honest_block, FoundTicket, SeededPayloads, TicketSearch};
use strandchain::pow::CancelToken;
use strandchain::{Block, ChainIndex, Hash256, Params};

fn find(search: &mut TicketSearch, tips: &[Hash256], params: &Params) -> FoundTicket {
    loop {
        if let Some(f) = search
            .search(tips, params, 1 << 16, &CancelToken::new())
            .found
        {
            return f;
        }
    }
}

/// Ledger grown by `blocks` honest blocks.
fn grown(params: Params, blocks: usize, seed: u64) -> (Ledger, TicketSearch, SeededPayloads) {
    let mut ledger = Ledger::genesis(params);
    let mut search = TicketSearch::new(seed);
    let mut payloads = SeededPayloads::new(seed, 16);
    for _ in 0..blocks {
        let view = ledger.view();
        let f = find(&mut search, &view.tips, &params);
        assert!(ledger
            .apply_block(honest_block(&f, &view, &params, &mut payloads, 0))
            .is_accepted());
    }
    (ledger, search, payloads)
}

fn mutate(block: &Block, field: u8, pos: usize, bit: u8, n: u32) -> Block {
    let mut m = block.clone();
    let flip = 1u8 << (bit % 8);
    match field {
        0 => {
            let i = m.chain_index.get();
            m.chain_index = ChainIndex(if n == 1 {
                1
            } else {
                (i + 1 + pos as u32 % (n - 1)) % n
            });
        }
        1 => m.prev_hash.0[pos % 32] ^= flip,
        2 => {
            let len = m.payload.len();
            m.payload[pos % len] ^= flip;
        }
        3 => m.ticket.nonce ^= 1u64 << (pos % 64),
        4 => {
            let own = m.chain_index.as_usize();
            m.ticket.tip_hashes[own].0[pos % 32] ^= flip;
        }
        5 => m.ticket.pubkey.0[pos % 32] ^= flip,
        _ => {
            let len = m.signature.len();
            m.signature[pos % len] ^= flip;
        }
    }
    m
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn every_single_field_mutation_is_rejected(
        seed in any::<u64>(),
        p in 0u32..=2,
        depth in 0usize..4,
        field in 0u8..7,
        pos in any::<usize>(),
        bit in any::<u8>(),
    ) {
        let params = Params::new(p, 2).unwrap();
        let (ledger, mut search, mut payloads) = grown(params, depth, seed);
        let view = ledger.view();
        let f = find(&mut search, &view.tips, &params);
        let block = honest_block(&f, &view, &params, &mut payloads, 0);
        prop_assert!(ledger.validate_block(&block).is_ok());
        let m = mutate(&block, field, pos, bit, params.strand_count() as u32);
        prop_assert!(ledger.validate_block(&m).is_err());
    }

    #[test]
    fn advancing_a_strand_invalidates_old_tickets_on_the_new_tip(
        seed in any::<u64>(),
        p in 0u32..=2,
    ) {
        let params = Params::new(p, 2).unwrap();
        let (mut ledger, mut search, mut payloads) = grown(params, 2, seed);
        let view = ledger.view();
        let old = find(&mut search, &view.tips, &params);
        let strand = old.chain_index();
        let old_tip = view.tips[strand.as_usize()];
        // Competitors keep mining until the ticket's strand moves on.
        let mut rival = TicketSearch::new(seed ^ 0x5a5a);
        while ledger.tips()[strand.as_usize()] == old_tip {
            let v = ledger.view();
            let f = find(&mut rival, &v.tips, &params);
            prop_assert!(ledger.apply_block(honest_block(&f, &v, &params, &mut payloads, 1)).is_accepted());
        }
        let new_tip = ledger.tips()[strand.as_usize()];
        let stale = old.assemble(new_tip, vec![7; 16], &params);
        let verdict = ledger.validate_block(&stale).unwrap_err();
        prop_assert_eq!(verdict.check(), Some(Check::V2));
        // Spending it on the tip it was mined against is still a valid fork.
        let fork = old.assemble(old_tip, vec![7; 16], &params);
        prop_assert!(ledger.validate_block(&fork).is_ok());
    }

    #[test]
    fn a_block_touches_only_its_own_strand(seed in any::<u64>(), p in 1u32..=3, depth in 0usize..6) {
        let params = Params::new(p, 1).unwrap();
        let (mut ledger, mut search, mut payloads) = grown(params, depth, seed);
        let before = ledger.view();
        let f = find(&mut search, &before.tips, &params);
        let s = f.chain_index().as_usize();
        prop_assert!(ledger.apply_block(honest_block(&f, &before, &params, &mut payloads, 0)).is_accepted());
        let after = ledger.view();
        for i in 0..params.strand_count() {
            if i == s {
                prop_assert_eq!(after.heights[i], before.heights[i] + 1);
                prop_assert_ne!(after.tips[i], before.tips[i]);
            } else {
                prop_assert_eq!(after.heights[i], before.heights[i]);
                prop_assert_eq!(after.tips[i], before.tips[i]);
            }
        }
    }

    #[test]
    fn fork_choice_is_longest_then_first_seen(seed in any::<u64>(), size in 1usize..25) {
        let params = Params::new(0, 0).unwrap();
        let genesis = Ledger::genesis(params).tips()[0];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut search = TicketSearch::new(seed);
        let mut payloads = SeededPayloads::new(seed, 8);
        // Random tree, listed parents first.
        let mut nodes: Vec<(Hash256, u64)> = vec![(genesis, 0)];
        let mut blocks = Vec::new();
        for _ in 0..size {
            let (parent, h) = nodes[rng.gen_range(0..nodes.len())];
            let view = LedgerView { tips: vec![parent], heights: vec![h] };
            let f = find(&mut search, &view.tips, &params);
            let b = honest_block(&f, &view, &params, &mut payloads, 0);
            let id = strandchain::types::block_id(&b, &params).unwrap();
            nodes.push((id, h + 1));
            blocks.push((b, id, h + 1));
        }
        let mut a = Ledger::genesis(params);
        let mut b = Ledger::genesis(params);
        for (blk, _, _) in &blocks {
            prop_assert!(a.apply_block(blk.clone()).is_accepted());
            prop_assert!(b.apply_block(blk.clone()).is_accepted());
        }
        let max = blocks.iter().map(|x| x.2).max().unwrap();
        let expected = blocks.iter().find(|x| x.2 == max).unwrap().1;
        prop_assert_eq!(a.tips()[0], expected);
        prop_assert_eq!(a.tips(), b.tips());
        prop_assert_eq!(a.heights(), vec![max]);
    }

    #[test]
    fn catch_up_protection_grows_with_depth_and_shrinks_with_power(
        q in 0.01f64..0.49,
        dq in 0.0f64..0.2,
        z in 0u64..30,
    ) {
        prop_assert!(race_probability(q, z + 1) <= race_probability(q, z));
        prop_assert!(race_probability((q + dq).min(0.49), z) >= race_probability(q, z));
        let r = race_probability(q, z);
        prop_assert!((0.0..=1.0).contains(&r));
    }
}

#[test]
fn consecutive_tickets_use_fresh_keys() {
    let params = Params::new(1, 2).unwrap();
    let tips = Ledger::genesis(params).tips();
    let mut search = TicketSearch::new(11);
    let mut seen = std::collections::HashSet::new();
    for _ in 0..200 {
        assert!(seen.insert(find(&mut search, &tips, &params).ticket.pubkey));
    }
}
