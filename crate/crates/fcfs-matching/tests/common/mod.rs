//! Shared helpers for the integration tests: bundled model paths, seeded
//! random model generation, random matchable instances, and the Kelly
//! balance checker reused by several suites.

#![allow(dead_code)]

use fcfs_matching::analytic::StationaryEvaluator;
use fcfs_matching::chains::{
    enumerate_states, reverse_role_flip, successors, transition_probability, ChainKind, ChainState,
};
use fcfs_matching::fcfs::{decompose_perfect_blocks, fcfs_match_finite, ItemSequence};
use fcfs_matching::model::{check_crp, validate_model, MatchingModel, RawModel, RawType};
use fcfs_matching::sim::FrozenLines;
use rand::Rng;
use rand_chacha::ChaCha12Rng;

pub fn model_path(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../models").join(name)
}

pub fn nn() -> MatchingModel {
    MatchingModel::from_path(model_path("nn.json")).expect("bundled model parses")
}

pub fn nn_unstable() -> MatchingModel {
    MatchingModel::from_path(model_path("nn-unstable.json")).expect("bundled model parses")
}

/// Draws a random connected bipartite model with up to four types per side
/// and integer-grid probabilities, retrying until complete resource pooling
/// holds. Deterministic per RNG state.
pub fn random_crp_model(rng: &mut ChaCha12Rng) -> MatchingModel {
    loop {
        if let Some(model) = try_random_model(rng, true) {
            return model;
        }
    }
}

/// Same sampler without the pooling requirement; used where transient
/// instances are acceptable.
pub fn random_model(rng: &mut ChaCha12Rng) -> MatchingModel {
    loop {
        if let Some(model) = try_random_model(rng, false) {
            return model;
        }
    }
}

/// Pooled models suitable for simulation: near-critical draws make the
/// regeneration cycles astronomically long, so require a healthy pooling
/// margin and a regeneration probability that keeps cycles short.
pub fn random_simulable_model(rng: &mut ChaCha12Rng) -> MatchingModel {
    loop {
        let model = random_crp_model(rng);
        if check_crp(&model).tightest_margin < 0.05 {
            continue;
        }
        if let Ok((b, _)) = fcfs_matching::analytic::normalizing_constant(&model) {
            if b >= 0.05 {
                return model;
            }
        }
    }
}

fn try_random_model(rng: &mut ChaCha12Rng, require_crp: bool) -> Option<MatchingModel> {
    let n_c = rng.gen_range(1..=4);
    let n_s = rng.gen_range(1..=4);
    let side = |rng: &mut ChaCha12Rng, n: usize, prefix: &str| -> Vec<RawType> {
        let weights: Vec<u32> = (0..n).map(|_| rng.gen_range(1..=12)).collect();
        let total: u32 = weights.iter().sum();
        weights
            .iter()
            .enumerate()
            .map(|(k, &w)| RawType {
                name: format!("{prefix}{}", k + 1),
                prob: w as f64 / total as f64,
            })
            .collect()
    };
    let customers = side(rng, n_c, "c");
    let servers = side(rng, n_s, "s");
    let mut edges = Vec::new();
    for i in 0..n_c {
        for j in 0..n_s {
            if rng.gen_bool(0.6) {
                edges.push((format!("c{}", i + 1), format!("s{}", j + 1)));
            }
        }
    }
    let raw = RawModel { customers, servers, edges };
    let model = validate_model(&raw).ok()?;
    if require_crp && !check_crp(&model).holds {
        return None;
    }
    Some(model)
}

/// Random item sequence of the given lengths with types drawn from α and β.
pub fn random_instance(
    model: &MatchingModel,
    rng: &mut ChaCha12Rng,
    n_customers: usize,
    n_servers: usize,
) -> ItemSequence {
    let draw = |rng: &mut ChaCha12Rng, probs: &[f64]| -> usize {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (t, &p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return t;
            }
        }
        probs.len() - 1
    };
    ItemSequence {
        customer_word: (0..n_customers).map(|_| draw(rng, model.alphas())).collect(),
        server_word: (0..n_servers).map(|_| draw(rng, model.betas())).collect(),
        base_index: 0,
    }
}

/// Streams perfectly matched blocks of a seeded run to the callback until
/// `count` blocks were delivered. Blocks are maximal: they end at successive
/// perfect-prefix boundaries of the running matching.
pub fn for_each_perfect_block<F: FnMut(ItemSequence)>(
    model: &MatchingModel,
    seed: u64,
    count: usize,
    mut f: F,
) {
    let lines = FrozenLines::new(model, seed);
    let mut chunk: i64 = 4096;
    let mut delivered = 0usize;
    let mut start = 0i64;
    while delivered < count {
        let seq = lines.slice(start, start + chunk);
        let matching = fcfs_match_finite(model, &seq);
        let boundaries = decompose_perfect_blocks(&seq, &matching);
        if boundaries.is_empty() {
            // No regeneration in this horizon; look further ahead.
            chunk *= 2;
            assert!(chunk < (1 << 22), "no perfect block within {chunk} steps");
            continue;
        }
        let mut block_start = start;
        for &end in &boundaries {
            f(lines.slice(block_start, end));
            block_start = end;
            delivered += 1;
            if delivered >= count {
                return;
            }
        }
        // Resume at the last boundary so every block stays maximal.
        start = block_start;
    }
}

/// Kelly balance over every valid state of the kind with words up to
/// `max_len`: π(x)·P(x→y) must equal π(ỹ)·P(ỹ→x̃) with ~ the role-flipped
/// reversal into the dual chain. Returns (transitions checked, worst
/// residual).
pub fn kelly_balance(model: &MatchingModel, kind: ChainKind, max_len: usize) -> (usize, f64) {
    let eval = StationaryEvaluator::new(model).expect("pooling holds");
    let reversed = |state: &ChainState| -> ChainState {
        match state {
            ChainState::Zs(w) => ChainState::Zc(reverse_role_flip(w)),
            ChainState::Zc(w) => ChainState::Zs(reverse_role_flip(w)),
            ChainState::D { z, y } => {
                ChainState::E { y: reverse_role_flip(y), z: reverse_role_flip(z) }
            }
            ChainState::E { y, z } => {
                ChainState::D { z: reverse_role_flip(z), y: reverse_role_flip(y) }
            }
            _ => panic!("no detailed reversal for natural chains"),
        }
    };
    let mut checked = 0usize;
    let mut worst = 0.0f64;
    for state in enumerate_states(model, kind, max_len).expect("cap respected") {
        let pi_from = eval.pi_detailed(&state).expect("valid state");
        let rev_to = reversed(&state);
        for (next, p) in successors(model, &state, max_len + 2).expect("valid state").transitions {
            let pi_to = eval.pi_detailed(&next).expect("valid successor");
            let rev_from = reversed(&next);
            let p_rev = transition_probability(model, &rev_from, &rev_to, max_len + 2)
                .expect("valid reversal");
            let residual = (pi_from * p - pi_to * p_rev).abs();
            worst = worst.max(residual);
            checked += 1;
        }
    }
    (checked, worst)
}
