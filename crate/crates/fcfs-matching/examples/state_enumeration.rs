//! Enumerates the state spaces of the matching chains up to a word-length
//! cap, evaluates the stationary law on each state, and spot-checks the
//! reversibility relation that makes the product forms work: the detailed
//! chain in reversed time is the mirrored detailed chain.

use fcfs_matching::analytic::StationaryEvaluator;
use fcfs_matching::chains::{
    enumerate_states, format_state, reverse_role_flip, transition_probability, ChainKind,
    ChainState,
};
use fcfs_matching::model::MatchingModel;

fn main() {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../models/nn.json");
    let model = MatchingModel::from_path(path).expect("bundled model parses");
    let eval = StationaryEvaluator::new(&model).expect("pooling holds");

    for kind in [ChainKind::Qs, ChainKind::O, ChainKind::Zs, ChainKind::D] {
        let states = enumerate_states(&model, kind, 3).unwrap();
        println!("{kind:?}: {} states with words of length <= 3", states.len());
    }

    // The stationary masses of the truncated detailed space approach one as
    // the cap grows; the remainder is the mass of longer words.
    let mut mass = 0.0;
    for state in enumerate_states(&model, ChainKind::Zs, 6).unwrap() {
        mass += eval.pi_detailed(&state).unwrap();
    }
    println!("Zs mass on words of length <= 6: {mass:.6}");

    // Kelly's criterion, spot-checked: pi(x) P(x -> y) equals pi(y~) P(y~ -> x~)
    // where ~ reverses the word and swaps roles, landing in the mirrored
    // customer-by-customer detailed chain.
    let x = ChainState::Zs(vec![]);
    let x_rev = ChainState::Zc(vec![]);
    let states = enumerate_states(&model, ChainKind::Zs, 2).unwrap();
    for y in states.iter().filter(|s| !s.is_empty()).take(4) {
        let forward = transition_probability(&model, &x, y, 4).unwrap();
        if forward == 0.0 {
            continue;
        }
        let ChainState::Zs(w) = y else { unreachable!() };
        let y_rev = ChainState::Zc(reverse_role_flip(w));
        let backward = transition_probability(&model, &y_rev, &x_rev, 4).unwrap();
        let lhs = eval.pi_detailed(&x).unwrap() * forward;
        let rhs = eval.pi_detailed(&y_rev).unwrap() * backward;
        println!(
            "balance at {} -> {}: {lhs:.10} vs {rhs:.10}",
            format_state(&model, &x),
            format_state(&model, y)
        );
        assert!((lhs - rhs).abs() <= 1e-12);
    }
}
