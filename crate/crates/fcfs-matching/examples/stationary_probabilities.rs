//! Evaluates stationary probabilities of the matching chains two ways: the
//! closed product form, and summation of the detailed laws over all states
//! that project onto the same natural state. The two routes must agree.

use fcfs_matching::analytic::StationaryEvaluator;
use fcfs_matching::chains::{ChainState, Symbol};
use fcfs_matching::model::MatchingModel;

fn main() {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../models/nn.json");
    let model = MatchingModel::from_path(path).expect("bundled model parses");
    let eval = StationaryEvaluator::new(&model).expect("pooling holds");

    println!("B = {}", eval.b());

    // Natural customer-queue law: four c1 arrivals waiting.
    let qs = ChainState::Qs(vec![0, 0, 0, 0]);
    println!("pi_Qs(c1 c1 c1 c1) = {}", eval.pi_natural(&qs).unwrap());

    // Natural server-queue law on the mirrored side.
    let qc = ChainState::Qc(vec![2, 2, 2, 1, 2, 1]);
    println!("pi_Qc(s3 s3 s3 s2 s3 s2) = {}", eval.pi_natural(&qc).unwrap());

    // Pair-by-pair chain: both unmatched words at once.
    let o = ChainState::O { customers: vec![2, 2, 1, 2, 1, 2], servers: vec![2; 6] };
    println!("pi_O(...) = {}", eval.pi_natural(&o).unwrap());

    // Detailed server-by-server law: an unmatched c1 followed by the
    // exchanged server that overtook it.
    let zs = ChainState::Zs(vec![Symbol::C(0), Symbol::ExS(0)]);
    println!("pi_Zs(c1 s^1) = {}", eval.pi_detailed(&zs).unwrap());

    // Cross-route check: every natural probability is also the sum of the
    // detailed law over compatible interleavings of exchanged items. The
    // geometric tails are summed until they fall below the tolerance.
    for state in [qs, qc, o] {
        let direct = eval.pi_natural(&state).unwrap();
        let summed = eval.pi_natural_via_detailed(&state, 1e-12).unwrap();
        let diff = (direct - summed).abs();
        println!("dual route agreement: |{direct} - {summed}| = {diff:e}");
        assert!(diff <= 1e-9);
    }
}
