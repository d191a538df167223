//! Full cross-validation: every analytic quantity against its regenerative
//! simulation estimate, with standard errors and z-scores. The analytic
//! column depends only on the model; the verdict gates every row at |z| <= 4
//! plus a set of exact consistency checks.

use fcfs_matching::cli::compare_report;
use fcfs_matching::model::MatchingModel;

fn main() {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../models/nn.json");
    let model = MatchingModel::from_path(path).expect("bundled model parses");

    let report = compare_report(&model, 20_000, 7).expect("pooling holds");
    println!("{:<22} {:>12} {:>12} {:>11} {:>8}", "quantity", "analytic", "empirical", "std error", "z");
    for row in &report.rows {
        println!(
            "{:<22} {:>12.6} {:>12.6} {:>11.6} {:>8.2}",
            row.quantity, row.analytic, row.empirical, row.std_error, row.z
        );
    }
    for check in &report.exact_checks {
        println!("exact: {:<32} {}", check.name, if check.pass { "pass" } else { "FAIL" });
    }
    println!("verdict: {}", if report.pass { "pass" } else { "FAIL" });
    assert!(report.pass);
}
