//! FCFS matching of finite windows: the three construction orders (server by
//! server, customer by customer, pair by pair) produce the same links on a
//! matchable instance, and the exchange transformation plus reversal maps a
//! perfectly matched block onto its own FCFS matching in reversed time.

use fcfs_matching::fcfs::{
    decompose_perfect_blocks, exchange_transform, fcfs_match_customer_by_customer,
    fcfs_match_finite, fcfs_match_pair_by_pair, reversed_rematch_check, verify_fcfs, ItemSequence,
};
use fcfs_matching::model::MatchingModel;
use fcfs_matching::sim::FrozenLines;

fn main() {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../models/nn.json");
    let model = MatchingModel::from_path(path).expect("bundled model parses");

    // A short handwritten window: customers c2 c1 c3 c1, servers s1 s2 s1 s3.
    let seq = ItemSequence {
        customer_word: vec![1, 0, 2, 0],
        server_word: vec![0, 1, 0, 2],
        base_index: 0,
    };
    let matching = fcfs_match_finite(&model, &seq);
    println!("links (m, n): {:?}", matching.links());
    assert!(verify_fcfs(&model, &seq, &matching).unwrap(), "the construction is FCFS");

    let by_customer = fcfs_match_customer_by_customer(&model, &seq);
    let by_pair = fcfs_match_pair_by_pair(&model, &seq);
    assert_eq!(matching, by_customer);
    assert_eq!(matching, by_pair);
    println!("all three construction orders agree");

    // Perfect blocks: prefixes after which no link dangles. Within a block,
    // exchanging matched items across the two lines and reversing time gives
    // exactly the retained links back as a reverse FCFS matching.
    let lines = FrozenLines::new(&model, 17);
    let window = lines.slice(0, 64);
    let wm = fcfs_match_finite(&model, &window);
    let boundaries = decompose_perfect_blocks(&window, &wm);
    println!("perfect prefix boundaries in [0, 64): {boundaries:?}");

    let mut start = 0i64;
    for &end in boundaries.iter().take(4) {
        let block = lines.slice(start, end);
        let bm = fcfs_match_finite(&model, &block);
        let exchanged = exchange_transform(&block, &bm);
        let (inverted, _) = exchanged.invert();
        assert_eq!(inverted.customer_word, block.customer_word, "the exchange is involutive");
        assert!(
            reversed_rematch_check(&model, &block, &bm).unwrap(),
            "reversal reproduces the links"
        );
        println!("block [{start}, {end}) passes the exchange + reversal check");
        start = end;
    }
}
