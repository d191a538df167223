//! Computes the long-run matching rates: the fraction of matches pairing
//! each compatible customer and server type. Row sums recover the customer
//! frequencies and column sums the server frequencies.

use fcfs_matching::analytic::StationaryEvaluator;
use fcfs_matching::model::MatchingModel;

fn main() {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../models/nn.json");
    let model = MatchingModel::from_path(path).expect("bundled model parses");
    let eval = StationaryEvaluator::new(&model).expect("pooling holds");
    let rates = eval.matching_rates().expect("pooling holds");

    print!("{:>8}", "");
    for j in 0..model.n_servers() {
        print!("{:>12}", model.server_label(j));
    }
    println!();
    for i in 0..model.n_customers() {
        print!("{:>8}", model.customer_label(i));
        for j in 0..model.n_servers() {
            print!("{:>12.8}", rates.rates[i][j]);
        }
        println!();
    }

    println!();
    for (i, sum) in rates.row_sums().iter().enumerate() {
        println!(
            "row {} sums to {sum:.12} (alpha = {})",
            model.customer_label(i),
            model.alpha(i)
        );
        assert!((sum - model.alpha(i)).abs() <= 1e-10);
    }
    for (j, sum) in rates.col_sums().iter().enumerate() {
        println!("col {} sums to {sum:.12} (beta = {})", model.server_label(j), model.beta(j));
        assert!((sum - model.beta(j)).abs() <= 1e-10);
    }
    println!("total = {:.12}", rates.total());
}
