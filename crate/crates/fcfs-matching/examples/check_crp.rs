//! Loads the two bundled models and reports complete resource pooling for
//! each: the strict capacity inequalities over every proper server subset
//! that are equivalent to ergodicity of all the matching chains.

use fcfs_matching::model::{check_crp, MatchingModel};

fn model_path(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../models").join(name)
}

fn report(name: &str) {
    let model = MatchingModel::from_path(model_path(name)).expect("bundled model parses");
    let crp = check_crp(&model);
    println!("{name}:");
    println!(
        "  {} customers, {} servers, {} edges",
        model.n_customers(),
        model.n_servers(),
        model.edges().len()
    );
    if crp.holds {
        println!(
            "  pooling holds; tightest margin {:.6} at {{{}}}",
            crp.tightest_margin,
            model.subset_labels(&crp.tightest_subset).join(" ")
        );
    } else {
        println!("  pooling fails:");
        for v in &crp.violations {
            println!(
                "    beta{{{}}} = {} <= alpha{{{}}} = {}",
                model.subset_labels(&v.subset).join(" "),
                v.lhs,
                model.subset_labels(&model.uniquely_served(&v.subset)).join(" "),
                v.rhs
            );
        }
    }
}

fn main() {
    report("nn.json");
    report("nn-unstable.json");
}
