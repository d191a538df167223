//! Cross-validation of the simulator against the analytic layer: empty-state
//! occupancies against B, exact Loynes windows, regenerative estimates
//! against closed forms, transience of a pooling-violating model, and the
//! reversal statistics.

mod common;

use common::{nn, nn_unstable, random_simulable_model};
use fcfs_matching::analytic::normalizing_constant;
use fcfs_matching::chains::{ChainKind, ChainState};
use fcfs_matching::cli::compare_report;
use fcfs_matching::fcfs::{decompose_perfect_blocks, fcfs_match_finite, unmatched_positions, ItemSequence};
use fcfs_matching::sim::{
    loynes_window, regeneration_estimates, reversibility_suite, simulate_chain, transience_probe,
    FrozenLines, SimError,
};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Every chain started from ∅ spends a fraction b of its steps there.
#[test]
fn empty_occupancy_matches_b() {
    let model = nn();
    let (b, _) = normalizing_constant(&model).unwrap();
    for (kind, steps, tol) in [
        (ChainKind::Qs, 1_000_000u64, 0.01),
        (ChainKind::Qc, 400_000, 0.015),
        (ChainKind::O, 400_000, 0.015),
        (ChainKind::Zs, 400_000, 0.015),
        (ChainKind::Zc, 400_000, 0.015),
    ] {
        let summary = simulate_chain(&model, kind, steps, 5).unwrap();
        let frac = summary.occupancy_fraction(&ChainState::empty(kind));
        assert!(
            (frac - b).abs() < tol,
            "{kind:?}: empty occupancy {frac} vs b {b}"
        );
        assert!(summary.crp_holds);
    }
}

/// A Loynes window spanning exactly one perfect block returns precisely that
/// block's internal matching.
#[test]
fn loynes_window_reproduces_a_block() {
    let model = nn();
    let seed = 33;
    let lines = FrozenLines::new(&model, seed);
    let seq = lines.slice(0, 4096);
    let matching = fcfs_match_finite(&model, &seq);
    let boundaries = decompose_perfect_blocks(&seq, &matching);
    assert!(boundaries.len() >= 3, "expected several regenerations in 4096 steps");
    let (p, q) = (boundaries[1], boundaries[2]);
    let window = loynes_window(&model, p, (q - p) as u64, seed, 8).unwrap();
    let block = lines.slice(p, q);
    let block_matching = fcfs_match_finite(&model, &block);
    assert_eq!(window.links, block_matching);
    assert!(window.regeneration_time <= p);
}

/// The certificate means what it says: the returned links equal those of
/// the matching started empty at the certified regeneration time, whatever
/// start depth produced it.
#[test]
fn loynes_certificate_is_honored() {
    let model = nn();
    let lines = FrozenLines::new(&model, 1);
    for k0 in [1, 16, 1024] {
        let wm = loynes_window(&model, 0, 100, 1, k0).unwrap();
        let (w_start, w_end) = wm.window;
        let t = wm.regeneration_time;
        assert!(t <= w_start, "k0 {k0}: regeneration {t} after window start");
        let mut slack = 256;
        let fresh = loop {
            let seq = lines.slice(t, w_end + slack);
            let matching = fcfs_match_finite(&model, &seq);
            let boundaries = decompose_perfect_blocks(&seq, &matching);
            let frontier = boundaries.iter().copied().max().unwrap_or(t);
            if frontier >= w_end {
                let links: Vec<(i64, i64)> = matching
                    .links()
                    .iter()
                    .copied()
                    .filter(|&(m, n)| m < frontier && n < frontier)
                    .filter(|&(m, n)| {
                        (w_start..w_end).contains(&m) || (w_start..w_end).contains(&n)
                    })
                    .collect();
                break links;
            }
            slack *= 2;
        };
        assert_eq!(wm.links.links(), fresh, "k0 {k0}");
    }
}

/// Past the convergence depth, farther starts keep returning the same links.
#[test]
fn loynes_window_is_start_invariant_when_deep() {
    let model = nn();
    let first = loynes_window(&model, 0, 100, 1, 64).unwrap();
    for k0 in [128, 1024] {
        let again = loynes_window(&model, 0, 100, 1, k0).unwrap();
        assert_eq!(again.links, first.links, "k0 {k0}");
        assert_eq!(again.window, first.window);
    }
}

/// Regenerative estimation at a fresh seed reproduces the analytic values
/// within the comparison gates, on the bundled model and on random ones.
#[test]
fn regenerative_estimates_match_analytic() {
    let report = compare_report(&nn(), 30_000, 11).unwrap();
    assert!(report.pass, "bundled model comparison failed");

    let mut rng = ChaCha12Rng::seed_from_u64(77);
    for round in 0..3 {
        let model = random_simulable_model(&mut rng);
        let report = compare_report(&model, 10_000, 100 + round).unwrap();
        assert!(report.pass, "random model round {round} failed");
    }
}

#[test]
fn kac_product_near_one() {
    let (_, report) = regeneration_estimates(&nn(), 20_000, 9).unwrap();
    let z = (report.kac_product.value - 1.0) / report.kac_product.std_error;
    assert!(z.abs() <= 4.0, "kac product {} (z {z})", report.kac_product.value);
}

/// The pooling-violating witness never stabilizes: the chains drift and the
/// regenerative machinery refuses to run.
#[test]
fn unstable_model_is_transient() {
    let model = nn_unstable();
    let probe = transience_probe(&model, 1_000_000, 4).unwrap();
    assert!(!probe.crp_holds);
    let last = probe.last_empty_step().unwrap_or(0);
    assert!(last <= probe.steps / 10, "returned to the empty state at step {last}");
    let (bc, bs) = probe.final_backlog;
    assert!(bc > 10_000, "backlog ({bc}, {bs}) did not grow");

    // The full chain sees the same early history; short runs stay cheap.
    let summary = simulate_chain(&model, ChainKind::O, 20_000, 4).unwrap();
    assert!(!summary.crp_holds);
    let shared = summary.empty_visits() as usize;
    assert_eq!(summary.empty_visit_steps, &probe.empty_visit_steps[..shared]);

    assert!(matches!(regeneration_estimates(&model, 100, 1), Err(SimError::CrpRequired)));
    assert!(matches!(loynes_window(&model, 0, 10, 1, 8), Err(SimError::CrpRequired)));
    assert!(matches!(reversibility_suite(&model, 10, 1), Err(SimError::CrpRequired)));
}

#[test]
fn reversibility_statistics_pass() {
    let report = reversibility_suite(&nn(), 2_000, 3).unwrap();
    assert_eq!(report.link_mismatches, 0);
    assert!(report.all_pass(), "reversibility report failed: {report:?}");
}

/// The unmatched-count lemmas hold along the frozen driving lines.
#[test]
fn lemmas_on_frozen_lines() {
    let model = nn();
    let lines = FrozenLines::new(&model, 21);
    let seq = lines.slice(0, 300);
    let counts = |cw: &[usize], sw: &[usize]| -> (usize, usize) {
        let part = ItemSequence {
            customer_word: cw.to_vec(),
            server_word: sw.to_vec(),
            base_index: 0,
        };
        let m = fcfs_match_finite(&model, &part);
        let (c, s) = unmatched_positions(&part, &m);
        (c.len(), s.len())
    };

    let (k, l) = counts(&seq.customer_word, &seq.server_word);
    let mut longer = vec![lines.customer_at(-1)];
    longer.extend_from_slice(&seq.customer_word);
    let (k2, l2) = counts(&longer, &seq.server_word);
    assert!(
        (k2 == k + 1 && l2 == l) || (k2 == k && l2 + 1 == l),
        "monotonicity: ({k}, {l}) -> ({k2}, {l2})"
    );

    let (k1, l1) = counts(&seq.customer_word[..150], &seq.server_word[..170]);
    let (k2, l2) = counts(&seq.customer_word[150..], &seq.server_word[170..]);
    assert!(k <= k1 + k2, "subadditivity (customers): {k} > {k1} + {k2}");
    assert!(l <= l1 + l2, "subadditivity (servers): {l} > {l1} + {l2}");
}
