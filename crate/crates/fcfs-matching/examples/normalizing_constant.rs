//! Computes the shared normalizing constant B of all the product-form
//! stationary laws three independent ways: the permutation sum over server
//! orderings, the same sum on the mirrored model (customer orderings), and
//! an exact rational evaluation. All three must agree tightly.

use fcfs_matching::analytic::{normalizing_constant, normalizing_constant_rational};
use fcfs_matching::model::MatchingModel;
use num::BigRational;

fn ratio(numer: i64, denom: i64) -> BigRational {
    BigRational::new(numer.into(), denom.into())
}

fn main() {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../models/nn.json");
    let model = MatchingModel::from_path(path).expect("bundled model parses");

    let (b, bs) = normalizing_constant(&model).expect("pooling holds");
    println!("B   = {b}");
    println!("B_s = {bs}");

    // The same sum in exact arithmetic, with the probabilities as fractions.
    let alpha = [ratio(1, 2), ratio(3, 10), ratio(1, 5)];
    let beta = [ratio(2, 5), ratio(2, 5), ratio(1, 5)];
    let exact = normalizing_constant_rational(&model, &alpha, &beta)
        .expect("small model, exact arithmetic");
    println!("B as a fraction = {}/{}", exact.numer(), exact.denom());

    // The mirrored model swaps the roles of the two lines; its constant is
    // computed over customer permutations and must be the same number.
    let (b_mirror, _) = normalizing_constant(&model.mirrored()).expect("pooling is symmetric");
    println!("B via mirrored model = {b_mirror}");
    assert!((b - b_mirror).abs() <= 1e-10 * b.abs());

    // Divergence is reported, not hidden: without pooling there is no
    // stationary law and the permutation sum blows up.
    let unstable =
        std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../models/nn-unstable.json");
    let unstable = MatchingModel::from_path(unstable).expect("bundled model parses");
    match normalizing_constant(&unstable) {
        Ok(_) => unreachable!("the unstable witness must diverge"),
        Err(e) => println!("unstable model: {e}"),
    }
}
