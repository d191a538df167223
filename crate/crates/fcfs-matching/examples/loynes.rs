//! Certified window matching: starts the FCFS matching empty ever further in
//! the past on frozen driving sequences, doubling the start offset until the
//! links in the window stop changing and a regeneration (empty state) is
//! found before the window. The certificate makes the links exact from the
//! regeneration time on: they are the links of the matching started empty
//! there, free of horizon artifacts. Here the construction has also
//! converged, so even a much earlier start reproduces the same links.

use fcfs_matching::model::MatchingModel;
use fcfs_matching::sim::loynes_window;

fn main() {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../models/nn.json");
    let model = MatchingModel::from_path(path).expect("bundled model parses");

    let w = loynes_window(&model, 0, 100, 1, 64).expect("pooling holds, so the scheme stabilizes");
    println!(
        "window [{}, {}): stabilized at start -{}, regeneration at {}",
        w.window.0, w.window.1, w.k_used, w.regeneration_time
    );
    println!("{} links touch the window:", w.links.len());
    for &(m, n) in w.links.links().iter().take(12) {
        println!("  customer at {m} <-> server at {n} (length {})", m - n);
    }
    if w.links.len() > 12 {
        println!("  ...");
    }

    // Past the convergence depth, a far earlier start changes nothing.
    let far = loynes_window(&model, 0, 100, 1, 64 * 8).expect("same driving sequences");
    assert_eq!(w.links, far.links);
    println!("links unchanged from a start eight times earlier");
}
