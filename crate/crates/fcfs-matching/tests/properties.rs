//! Property-based invariants on randomly drawn models and instances: the
//! matching construction orders, the monotonicity and subadditivity of
//! unmatched counts, the exchange transformation, perfect-prefix boundaries,
//! chain steps, and successor enumerations.

mod common;

use common::{random_crp_model, random_instance, random_model};
use fcfs_matching::chains::{
    enumerate_states, is_valid_state, step, successors, ChainKind, ChainState,
};
use fcfs_matching::fcfs::{
    decompose_perfect_blocks, exchange_transform, fcfs_match_customer_by_customer,
    fcfs_match_finite, fcfs_match_pair_by_pair, unmatched_positions, verify_fcfs, ItemSequence,
};
use fcfs_matching::model::check_crp;
use fcfs_matching::sim::SeededStream;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    /// All three construction orders produce the same matching on random
    /// instances, matchable or not, and the result passes the FCFS oracle.
    #[test]
    fn construction_orders_agree(seed: u64, m in 1usize..28, n in 1usize..28) {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let model = random_model(&mut rng);
        let seq = random_instance(&model, &mut rng, m, n);
        let a = fcfs_match_finite(&model, &seq);
        let b = fcfs_match_pair_by_pair(&model, &seq);
        let c = fcfs_match_customer_by_customer(&model, &seq);
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(&a, &c);
        prop_assert!(verify_fcfs(&model, &seq, &a).unwrap());
    }

    /// Prepending one customer either strands it (one more unmatched
    /// customer) or consumes one previously unmatched server; nothing else
    /// can happen to the unmatched counts.
    #[test]
    fn monotonicity_of_unmatched_counts(seed: u64, m in 0usize..24, n in 1usize..24) {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let model = random_model(&mut rng);
        let seq = random_instance(&model, &mut rng, m, n);
        let matching = fcfs_match_finite(&model, &seq);
        let (k, l) = {
            let (c, s) = unmatched_positions(&seq, &matching);
            (c.len(), s.len())
        };

        let extra = random_instance(&model, &mut rng, 1, 0).customer_word[0];
        let mut customer_word = vec![extra];
        customer_word.extend_from_slice(&seq.customer_word);
        let longer = ItemSequence {
            customer_word,
            server_word: seq.server_word.clone(),
            base_index: 0,
        };
        let matching2 = fcfs_match_finite(&model, &longer);
        let (k2, l2) = {
            let (c, s) = unmatched_positions(&longer, &matching2);
            (c.len(), s.len())
        };
        prop_assert!(
            (k2 == k + 1 && l2 == l) || (k2 == k && l2 + 1 == l),
            "unmatched counts moved ({k}, {l}) -> ({k2}, {l2})"
        );
    }

    /// Unmatched counts are subadditive over a split of both lines.
    #[test]
    fn subadditivity_of_unmatched_counts(
        seed: u64,
        m in 2usize..30,
        n in 2usize..30,
        split_c in 0.0f64..1.0,
        split_s in 0.0f64..1.0,
    ) {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let model = random_model(&mut rng);
        let seq = random_instance(&model, &mut rng, m, n);
        let mc = (split_c * m as f64) as usize;
        let ns = (split_s * n as f64) as usize;

        let counts = |cw: &[usize], sw: &[usize]| -> (usize, usize) {
            let part = ItemSequence {
                customer_word: cw.to_vec(),
                server_word: sw.to_vec(),
                base_index: 0,
            };
            let matching = fcfs_match_finite(&model, &part);
            let (c, s) = unmatched_positions(&part, &matching);
            (c.len(), s.len())
        };
        let (k, l) = counts(&seq.customer_word, &seq.server_word);
        let (k1, l1) = counts(&seq.customer_word[..mc], &seq.server_word[..ns]);
        let (k2, l2) = counts(&seq.customer_word[mc..], &seq.server_word[ns..]);
        prop_assert!(k <= k1 + k2, "customers: {k} > {k1} + {k2}");
        prop_assert!(l <= l1 + l2, "servers: {l} > {l1} + {l2}");
    }

    /// The exchange transformation is involutive on any matching.
    #[test]
    fn exchange_transform_inverts(seed: u64, m in 1usize..24, n in 1usize..24) {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let model = random_model(&mut rng);
        let seq = random_instance(&model, &mut rng, m, n);
        let matching = fcfs_match_finite(&model, &seq);
        let exchanged = exchange_transform(&seq, &matching);
        let (back_seq, back_matching) = exchanged.invert();
        prop_assert_eq!(back_seq.customer_word, seq.customer_word);
        prop_assert_eq!(back_seq.server_word, seq.server_word);
        prop_assert_eq!(back_matching, matching);
    }

    /// Every reported perfect-prefix boundary really is one: all items
    /// before it are matched to partners before it.
    #[test]
    fn boundaries_are_perfect_prefixes(seed: u64, len in 2usize..40) {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let model = random_model(&mut rng);
        let seq = random_instance(&model, &mut rng, len, len);
        let matching = fcfs_match_finite(&model, &seq);
        for p in decompose_perfect_blocks(&seq, &matching) {
            for m in 0..p {
                let partner = matching.server_of(m);
                prop_assert!(matches!(partner, Some(n) if n < p), "customer {m} vs boundary {p}");
            }
            for n in 0..p {
                let partner = matching.customer_of(n);
                prop_assert!(matches!(partner, Some(m) if m < p), "server {n} vs boundary {p}");
            }
        }
    }

    /// Chain steps keep states valid for every chain kind.
    #[test]
    fn steps_preserve_validity(seed: u64) {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let model = random_crp_model(&mut rng);
        for kind in [
            ChainKind::Qs,
            ChainKind::Qc,
            ChainKind::O,
            ChainKind::Zs,
            ChainKind::Zc,
            ChainKind::D,
            ChainKind::E,
        ] {
            let mut stream = SeededStream::replica(&model, seed, 3);
            let mut state = ChainState::empty(kind);
            for _ in 0..120 {
                state = step(&model, &state, &mut stream).unwrap().state;
                prop_assert!(is_valid_state(&model, &state), "invalid {state:?}");
            }
        }
    }

    /// Enumerated successor probabilities account for all the mass.
    #[test]
    fn successor_mass_is_complete(seed: u64) {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let model = random_crp_model(&mut rng);
        for kind in [ChainKind::Zs, ChainKind::D] {
            for state in enumerate_states(&model, kind, 2).unwrap() {
                let set = successors(&model, &state, 8).unwrap();
                let total: f64 = set.transitions.iter().map(|(_, p)| p).sum::<f64>() + set.tail_mass;
                prop_assert!((total - 1.0).abs() <= 1e-9, "mass {total} from {state:?}");
                for (next, p) in &set.transitions {
                    prop_assert!(*p > 0.0);
                    prop_assert!(is_valid_state(&model, next));
                }
            }
        }
    }
}

/// Pooling is invariant under mirroring, and the check agrees with a direct
/// sweep over customer subsets.
#[test]
fn crp_is_mirror_symmetric() {
    for seed in 0..200u64 {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let model = random_model(&mut rng);
        let direct = check_crp(&model).holds;
        let mirrored = check_crp(&model.mirrored()).holds;
        assert_eq!(direct, mirrored, "seed {seed}");
    }
}
