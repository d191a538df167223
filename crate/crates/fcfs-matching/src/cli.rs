//! Command-line front end: model ingestion and pooling checks, exact solves,
//! seeded simulation runs, and analytic-versus-empirical comparison reports.
//!
//! Exit codes follow one convention everywhere: 0 on success, 1 on a pooling
//! or analytic or statistical failure, 2 on unreadable or invalid input.
//! Every command is deterministic given the model file, the flags, and the
//! seed; randomized outputs carry the seed and generator in a leading comment
//! line. CSV output uses '.' decimals, ',' separators, and LF line endings.

use std::fmt::Write as _;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand, ValueEnum};

use crate::analytic::{AnalyticError, StationaryEvaluator};
use crate::chains::{self, ChainKind, ChainState};
use crate::model::{check_crp, CrpReport, MatchingModel, ModelError};
use crate::sim::{self, SimError, GENERATOR_ID};

/// Exit code for pooling, analytic, or statistical failures.
pub const EXIT_FAILURE: i32 = 1;
/// Exit code for unreadable or invalid inputs.
pub const EXIT_INPUT: i32 = 2;

/// Comparison verdict threshold on the standardized difference.
pub const Z_GATE: f64 = 4.0;

#[derive(Debug, Parser)]
#[command(
    name = "fcfs-matching",
    version,
    about = "Exact and simulated FCFS infinite bipartite matching",
    disable_help_subcommand = true
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate a model file and report complete resource pooling.
    Check {
        /// Path to the model JSON file.
        model: PathBuf,
    },
    /// Exact analytic solves: normalizing constant, stationary tables,
    /// matching rates, link-length distributions.
    Solve {
        /// Path to the model JSON file.
        model: PathBuf,
        /// Quantity to solve for.
        #[arg(long, value_enum)]
        what: SolveWhat,
        /// Server type label (linklen only).
        #[arg(long)]
        server: Option<String>,
        /// Customer type label for the pair-conditional law (linklen only).
        #[arg(long)]
        customer: Option<String>,
        /// Maximum word length for stationary tables (pi only).
        #[arg(long)]
        max_len: Option<usize>,
        /// Output file (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Output format.
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
    /// Simulate regeneration cycles; emit a match log (csv) or a full
    /// estimate report (json).
    Simulate {
        /// Path to the model JSON file.
        model: PathBuf,
        /// Number of regeneration cycles.
        #[arg(long, default_value_t = 10_000)]
        cycles: u64,
        /// Random seed.
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Output file (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Output format.
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
    /// Solve and simulate, then report analytic vs empirical values with
    /// standard errors and z-scores.
    Compare {
        /// Path to the model JSON file.
        model: PathBuf,
        /// Number of regeneration cycles.
        #[arg(long, default_value_t = 10_000)]
        cycles: u64,
        /// Random seed.
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Output file (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Output format.
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SolveWhat {
    /// Normalizing constants B and Bˢ.
    #[value(name = "B", alias = "b")]
    B,
    /// Stationary probabilities of the server-by-server detailed chain.
    Pi,
    /// Matching-rate matrix.
    Rates,
    /// Link-length probability mass function.
    Linklen,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

/// A command failure: message for stderr plus the process exit code.
#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn input(message: impl Into<String>) -> Failure {
        Failure { code: EXIT_INPUT, message: message.into() }
    }

    fn failure(message: impl Into<String>) -> Failure {
        Failure { code: EXIT_FAILURE, message: message.into() }
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Failure {
        Failure::input(e.to_string())
    }
}

impl From<AnalyticError> for Failure {
    fn from(e: AnalyticError) -> Failure {
        let code = match e {
            AnalyticError::Invalid(_) | AnalyticError::NotAnEdge { .. } => EXIT_INPUT,
            _ => EXIT_FAILURE,
        };
        Failure { code, message: e.to_string() }
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Failure {
        let code = match e {
            SimError::Invalid(_) => EXIT_INPUT,
            _ => EXIT_FAILURE,
        };
        Failure { code, message: e.to_string() }
    }
}

/// What a successful dispatch wants done: text to the chosen destination, an
/// optional stderr note, and the exit status.
#[derive(Debug)]
struct CmdOutput {
    text: String,
    out: Option<PathBuf>,
    note: Option<String>,
    code: i32,
}

impl CmdOutput {
    fn stdout(text: String) -> CmdOutput {
        CmdOutput { text, out: None, note: None, code: 0 }
    }
}

/// Parses `std::env::args`, runs the command, and returns the exit code.
pub fn main_entry() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => EXIT_INPUT,
            };
            let _ = e.print();
            return code;
        }
    };
    run(cli)
}

fn run(cli: Cli) -> i32 {
    if let Some(threads) = cli.threads {
        // Ignores the error when a global pool already exists (tests).
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    match execute(cli.command) {
        Ok(output) => {
            let written = match &output.out {
                Some(path) => std::fs::write(path, output.text.as_bytes())
                    .map_err(|e| format!("cannot write {}: {e}", path.display())),
                None => {
                    print!("{}", output.text);
                    Ok(())
                }
            };
            if let Err(message) = written {
                eprintln!("error: {message}");
                return EXIT_INPUT;
            }
            if let Some(note) = &output.note {
                eprintln!("{note}");
            }
            output.code
        }
        Err(failure) => {
            eprintln!("error: {}", failure.message);
            failure.code
        }
    }
}

fn execute(command: Command) -> Result<CmdOutput, Failure> {
    match command {
        Command::Check { model } => cmd_check(&model),
        Command::Solve { model, what, server, customer, max_len, out, format } => {
            let model = load_model(&model)?;
            let text = cmd_solve(&model, what, server.as_deref(), customer.as_deref(), max_len, format)?;
            Ok(CmdOutput { text, out, note: None, code: 0 })
        }
        Command::Simulate { model, cycles, seed, out, format } => {
            let model = load_model(&model)?;
            let text = cmd_simulate(&model, cycles, seed, format)?;
            Ok(CmdOutput { text, out, note: None, code: 0 })
        }
        Command::Compare { model, cycles, seed, out, format } => {
            let model = load_model(&model)?;
            let (text, note, code) = cmd_compare(&model, cycles, seed, format)?;
            Ok(CmdOutput { text, out, note, code })
        }
    }
}

fn load_model(path: &std::path::Path) -> Result<MatchingModel, Failure> {
    Ok(MatchingModel::from_path(path)?)
}

/// Renders a server or customer subset as `{s2 s3}` using model labels.
fn braces(model: &MatchingModel, subset: &crate::model::TypeSubset) -> String {
    format!("{{{}}}", model.subset_labels(subset).join(" "))
}

fn cmd_check(path: &std::path::Path) -> Result<CmdOutput, Failure> {
    let model = load_model(path)?;
    let report: CrpReport = check_crp(&model);
    let mut text = String::new();
    let _ = writeln!(
        text,
        "model: {} customer types, {} server types, {} edges",
        model.n_customers(),
        model.n_servers(),
        model.edges().len()
    );
    if report.holds {
        let _ = writeln!(text, "crp: holds");
        let _ = writeln!(
            text,
            "tightest margin: {} at {}",
            report.tightest_margin,
            braces(&model, &report.tightest_subset)
        );
        Ok(CmdOutput::stdout(text))
    } else {
        let _ = writeln!(text, "crp: violated");
        for v in &report.violations {
            let u = model.uniquely_served(&v.subset);
            let _ = writeln!(
                text,
                "  beta{} = {} <= alpha{} = {}",
                braces(&model, &v.subset),
                v.lhs,
                braces(&model, &u),
                v.rhs
            );
        }
        Ok(CmdOutput { text, out: None, note: None, code: EXIT_FAILURE })
    }
}

fn cmd_solve(
    model: &MatchingModel,
    what: SolveWhat,
    server: Option<&str>,
    customer: Option<&str>,
    max_len: Option<usize>,
    format: Format,
) -> Result<String, Failure> {
    if what != SolveWhat::Linklen && (server.is_some() || customer.is_some()) {
        return Err(Failure::input("--server and --customer apply only to --what linklen"));
    }
    if what != SolveWhat::Pi && max_len.is_some() {
        return Err(Failure::input("--max-len applies only to --what pi"));
    }
    let eval = StationaryEvaluator::new(model)?;
    match what {
        SolveWhat::B => Ok(render_b(&eval, format)),
        SolveWhat::Pi => render_pi(model, &eval, max_len.unwrap_or(4), format),
        SolveWhat::Rates => render_rates(model, &eval, format),
        SolveWhat::Linklen => render_linklen(model, &eval, server, customer, format),
    }
}

fn render_b(eval: &StationaryEvaluator, format: Format) -> String {
    match format {
        Format::Csv => format!("quantity,value\nB,{}\nB_s,{}\n", eval.b(), eval.bs()),
        Format::Json => {
            let value = serde_json::json!({ "B": eval.b(), "B_s": eval.bs() });
            pretty_json(&value)
        }
    }
}

fn render_pi(
    model: &MatchingModel,
    eval: &StationaryEvaluator,
    max_len: usize,
    format: Format,
) -> Result<String, Failure> {
    let mut states = chains::enumerate_states(model, ChainKind::Zs, max_len)
        .map_err(|e| Failure::input(e.to_string()))?;
    states.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    let mut rows: Vec<(String, f64)> = Vec::with_capacity(states.len());
    for state in &states {
        rows.push((chains::format_state(model, state), eval.pi_detailed(state)?));
    }
    match format {
        Format::Csv => {
            let mut text = String::from("state,probability\n");
            for (state, p) in &rows {
                let _ = writeln!(text, "{state},{p}");
            }
            Ok(text)
        }
        Format::Json => {
            let value: Vec<serde_json::Value> = rows
                .iter()
                .map(|(state, p)| serde_json::json!({ "state": state, "probability": p }))
                .collect();
            Ok(pretty_json(&serde_json::Value::Array(value)))
        }
    }
}

fn render_rates(
    model: &MatchingModel,
    eval: &StationaryEvaluator,
    format: Format,
) -> Result<String, Failure> {
    let rates = eval.matching_rates()?;
    match format {
        Format::Csv => {
            let mut text = String::from("customer");
            for j in 0..model.n_servers() {
                let _ = write!(text, ",{}", model.server_label(j));
            }
            text.push('\n');
            for i in 0..model.n_customers() {
                let _ = write!(text, "{}", model.customer_label(i));
                for j in 0..model.n_servers() {
                    let _ = write!(text, ",{}", rates.rates[i][j]);
                }
                text.push('\n');
            }
            Ok(text)
        }
        Format::Json => {
            let customers: Vec<&str> =
                (0..model.n_customers()).map(|i| model.customer_label(i)).collect();
            let servers: Vec<&str> =
                (0..model.n_servers()).map(|j| model.server_label(j)).collect();
            let value = serde_json::json!({
                "customers": customers,
                "servers": servers,
                "rates": rates.rates,
            });
            Ok(pretty_json(&value))
        }
    }
}

fn render_linklen(
    model: &MatchingModel,
    eval: &StationaryEvaluator,
    server: Option<&str>,
    customer: Option<&str>,
    format: Format,
) -> Result<String, Failure> {
    let server = server.ok_or_else(|| Failure::input("--what linklen requires --server"))?;
    let j = model
        .server_index(server)
        .ok_or_else(|| Failure::input(format!("unknown server type {server:?}")))?;
    let i = match customer {
        Some(label) => Some(
            model
                .customer_index(label)
                .ok_or_else(|| Failure::input(format!("unknown customer type {label:?}")))?,
        ),
        None => None,
    };
    let mixture = eval.link_length_distribution(j, i)?;
    // The per-server law already has mass one; the pair-conditional law has
    // mass r_ij / β_j and is normalized here so the output is a pmf.
    let mixture = if i.is_some() { mixture.normalized() } else { mixture };
    let (lo, hi) = mixture.support_hint();
    let full = mixture.pmf_range(lo, hi);
    // Trim the noise-level edge bins; the dropped mass stays far inside the
    // 1e-9 unit-mass budget.
    let mut start = 0;
    while start < full.len() && full[start] < 1e-12 {
        start += 1;
    }
    let mut end = full.len();
    while end > start && full[end - 1] < 1e-12 {
        end -= 1;
    }
    let lo = lo + start as i64;
    let pmf = &full[start..end];
    match format {
        Format::Csv => {
            let mut text = String::from("k,pmf\n");
            for (offset, p) in pmf.iter().enumerate() {
                let _ = writeln!(text, "{},{}", lo + offset as i64, p);
            }
            Ok(text)
        }
        Format::Json => {
            let rows: Vec<serde_json::Value> = pmf
                .iter()
                .enumerate()
                .map(|(offset, p)| serde_json::json!({ "k": lo + offset as i64, "pmf": p }))
                .collect();
            let value = serde_json::json!({
                "server": model.server_label(j),
                "customer": i.map(|i| model.customer_label(i)),
                "pmf": rows,
            });
            Ok(pretty_json(&value))
        }
    }
}

fn cmd_simulate(
    model: &MatchingModel,
    cycles: u64,
    seed: u64,
    format: Format,
) -> Result<String, Failure> {
    match format {
        Format::Csv => {
            let records = sim::collect_match_log(model, cycles, seed)?;
            let mut bytes = Vec::new();
            sim::write_match_log_csv(&mut bytes, model, &records, seed)
                .map_err(|e| Failure::failure(e.to_string()))?;
            String::from_utf8(bytes).map_err(|e| Failure::failure(e.to_string()))
        }
        Format::Json => {
            let (_, report) = sim::regeneration_estimates(model, cycles, seed)?;
            Ok(pretty_json(
                &serde_json::to_value(&report).map_err(|e| Failure::failure(e.to_string()))?,
            ))
        }
    }
}

/// One comparison line: an analytic value against its simulation estimate.
#[derive(Debug, Clone, serde::Serialize)]
pub struct CompareRow {
    pub quantity: String,
    pub analytic: f64,
    pub empirical: f64,
    pub std_error: f64,
    pub z: f64,
}

/// One exact (non-statistical) consistency check in the comparison.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ExactCheck {
    pub name: String,
    pub pass: bool,
}

/// Full comparison outcome, reusable from tests and examples.
#[derive(Debug, serde::Serialize)]
pub struct CompareReport {
    pub seed: u64,
    pub generator: String,
    pub cycles: u64,
    pub rows: Vec<CompareRow>,
    pub exact_checks: Vec<ExactCheck>,
    pub pass: bool,
}

fn z_score(analytic: f64, empirical: f64, std_error: f64) -> f64 {
    if std_error > 0.0 {
        (empirical - analytic) / std_error
    } else if (empirical - analytic).abs() <= 1e-9 {
        // Degenerate rows: some quantities are constant over cycles (the
        // signed link lengths of a perfect block always sum to zero), so the
        // batch variance vanishes and only near-exact agreement passes.
        0.0
    } else {
        f64::INFINITY
    }
}

/// Builds the analytic-versus-empirical comparison for a model. The analytic
/// column depends only on the model; the empirical column on (model, cycles,
/// seed). Statistical rows pass when |z| ≤ [`Z_GATE`].
pub fn compare_report(
    model: &MatchingModel,
    cycles: u64,
    seed: u64,
) -> Result<CompareReport, AnalyticError> {
    let eval = StationaryEvaluator::new(model)?;
    let (_, report) = match sim::regeneration_estimates(model, cycles, seed) {
        Ok(pair) => pair,
        Err(SimError::Chain(e)) => return Err(AnalyticError::Invalid(e.to_string())),
        Err(e) => return Err(AnalyticError::Invalid(e.to_string())),
    };

    let mut rows = Vec::new();
    let mut push = |quantity: String, analytic: f64, empirical: f64, std_error: f64| {
        rows.push(CompareRow {
            quantity,
            analytic,
            empirical,
            std_error,
            z: z_score(analytic, empirical, std_error),
        });
    };

    let empty_o = chains::format_state(model, &ChainState::empty(ChainKind::O));
    if let Some(row) = report.o_occupancy.iter().find(|r| r.state == empty_o) {
        push("pi_O(empty)".to_string(), eval.b(), row.value, row.std_error);
    }
    // Detailed server-by-server states of length ≤ 2, kept when the analytic
    // expectation clears 100 visits so the row set is seed-independent.
    let expected_steps = cycles as f64 / eval.b();
    let mut zs_states = chains::enumerate_states(model, ChainKind::Zs, 2)
        .map_err(|e| AnalyticError::Invalid(e.to_string()))?;
    zs_states.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    for state in &zs_states {
        if state.is_empty() {
            continue;
        }
        let p = eval.pi_detailed(state)?;
        if p * expected_steps < 100.0 {
            continue;
        }
        let label = chains::format_state(model, state);
        let (empirical, std_error) = report
            .zs_occupancy
            .iter()
            .find(|r| r.state == label)
            .map(|r| (r.value, r.std_error))
            .unwrap_or((0.0, 0.0));
        push(format!("pi_Zs({label})"), p, empirical, std_error);
    }
    push(
        "mean_cycle_length".to_string(),
        1.0 / eval.b(),
        report.mean_cycle_length.value,
        report.mean_cycle_length.std_error,
    );

    let rates = eval.matching_rates()?;
    for row in &report.rates {
        let i = model.customer_index(&row.customer).expect("report uses model labels");
        let j = model.server_index(&row.server).expect("report uses model labels");
        push(
            format!("rate[{}][{}]", row.customer, row.server),
            rates.rates[i][j],
            row.value,
            row.std_error,
        );
    }

    // Mean link length: mix the per-server means with weights β_j.
    let mut mixtures = Vec::with_capacity(model.n_servers());
    for j in 0..model.n_servers() {
        mixtures.push(eval.link_length_distribution(j, None)?);
    }
    let analytic_mean: f64 =
        (0..model.n_servers()).map(|j| model.beta(j) * mixtures[j].mean()).sum();
    push(
        "mean_link_length".to_string(),
        analytic_mean,
        report.mean_link_length.value,
        report.mean_link_length.std_error,
    );

    // Per-server link-length bins with at least 100 expected counts; the
    // expectation uses the analytic pmf and the analytic mean step count so
    // the row set is seed-independent. Every pair step yields one match in
    // the long run, so the expected match count equals the step count.
    let matches_total = expected_steps;
    for (j, mixture) in mixtures.iter().enumerate() {
        let label = model.server_label(j);
        let (lo, hi) = mixture.support_hint();
        let pmf = mixture.pmf_range(lo, hi);
        for (offset, &p) in pmf.iter().enumerate() {
            let k = lo + offset as i64;
            if matches_total * model.beta(j) * p < 100.0 {
                continue;
            }
            let empirical = report
                .server_link_pmf
                .iter()
                .find(|r| r.server == label && r.k == k)
                .map(|r| (r.value, r.std_error))
                .unwrap_or((0.0, 0.0));
            push(format!("link_pmf[{label}][{k}]"), p, empirical.0, empirical.1);
        }
    }

    let mut exact_checks = Vec::new();
    let mut check = |name: String, pass: bool| exact_checks.push(ExactCheck { name, pass });
    let row_sums = rates.row_sums();
    let col_sums = rates.col_sums();
    check(
        "rate rows sum to alpha".to_string(),
        (0..model.n_customers()).all(|i| (row_sums[i] - model.alpha(i)).abs() <= 1e-10),
    );
    check(
        "rate columns sum to beta".to_string(),
        (0..model.n_servers()).all(|j| (col_sums[j] - model.beta(j)).abs() <= 1e-10),
    );
    check(
        "rates vanish off edges".to_string(),
        (0..model.n_customers()).all(|i| {
            (0..model.n_servers()).all(|j| model.is_edge(i, j) || rates.rates[i][j] == 0.0)
        }),
    );
    check(
        "link mixtures have unit mass".to_string(),
        mixtures.iter().all(|m| (m.total_mass() - 1.0).abs() <= 1e-9),
    );
    let empirical_rate_sum: f64 = report.rates.iter().map(|r| r.value).sum();
    check("empirical rates sum to one".to_string(), (empirical_rate_sum - 1.0).abs() <= 1e-12);

    let pass = exact_checks.iter().all(|c| c.pass)
        && rows.iter().all(|r| r.z.is_finite() && r.z.abs() <= Z_GATE);
    Ok(CompareReport {
        seed,
        generator: GENERATOR_ID.to_string(),
        cycles,
        rows,
        exact_checks,
        pass,
    })
}

fn cmd_compare(
    model: &MatchingModel,
    cycles: u64,
    seed: u64,
    format: Format,
) -> Result<(String, Option<String>, i32), Failure> {
    let report = compare_report(model, cycles, seed)?;
    let text = match format {
        Format::Csv => {
            let mut text =
                format!("# seed={} generator={} cycles={}\n", report.seed, report.generator, report.cycles);
            text.push_str("quantity,analytic,empirical,std_error,z\n");
            for row in &report.rows {
                let _ = writeln!(
                    text,
                    "{},{},{},{},{}",
                    row.quantity, row.analytic, row.empirical, row.std_error, row.z
                );
            }
            for c in &report.exact_checks {
                let _ = writeln!(text, "# exact: {} = {}", c.name, if c.pass { "pass" } else { "fail" });
            }
            let _ = writeln!(text, "# verdict: {}", if report.pass { "pass" } else { "fail" });
            text
        }
        Format::Json => pretty_json(
            &serde_json::to_value(&report).map_err(|e| Failure::failure(e.to_string()))?,
        ),
    };
    if report.pass {
        Ok((text, None, 0))
    } else {
        let note = report
            .rows
            .iter()
            .find(|r| !(r.z.is_finite() && r.z.abs() <= Z_GATE))
            .map(|r| {
                format!(
                    "first failing row: {} analytic={} empirical={} z={}",
                    r.quantity, r.analytic, r.empirical, r.z
                )
            })
            .or_else(|| {
                report
                    .exact_checks
                    .iter()
                    .find(|c| !c.pass)
                    .map(|c| format!("failed exact check: {}", c.name))
            });
        Ok((text, note, EXIT_FAILURE))
    }
}

fn pretty_json(value: &serde_json::Value) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("serializable value");
    text.push('\n');
    text
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tests::nn_raw;
    use std::io::Write as _;

    fn nn_file() -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        let raw = nn_raw();
        write!(f, "{}", serde_json::to_string(&raw).unwrap()).unwrap();
        f
    }

    fn parse(args: &[&str]) -> Command {
        let mut full = vec!["fcfs-matching"];
        full.extend_from_slice(args);
        Cli::try_parse_from(full).unwrap().command
    }

    #[test]
    fn check_reports_pooling_and_margin() {
        let f = nn_file();
        let out = execute(parse(&["check", f.path().to_str().unwrap()])).unwrap();
        assert_eq!(out.code, 0);
        assert!(out.text.contains("crp: holds"));
        assert!(out.text.contains("0.1"));
        assert!(out.text.contains("{s2 s3}"));
    }

    #[test]
    fn check_missing_file_is_input_error() {
        let err = execute(parse(&["check", "/no/such/model.json"])).unwrap_err();
        assert_eq!(err.code, EXIT_INPUT);
    }

    #[test]
    fn solve_b_prints_quarter() {
        let f = nn_file();
        let text = cmd_solve(
            &MatchingModel::from_path(f.path()).unwrap(),
            SolveWhat::B,
            None,
            None,
            None,
            Format::Csv,
        )
        .unwrap();
        assert!(text.contains("B,0.25"), "{text}");
        assert!(text.ends_with('\n'));
    }

    #[test]
    fn solve_rates_has_server_header_and_zero_non_edge() {
        let f = nn_file();
        let model = MatchingModel::from_path(f.path()).unwrap();
        let text = cmd_solve(&model, SolveWhat::Rates, None, None, None, Format::Csv).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "customer,s1,s2,s3");
        let c1 = lines.next().unwrap();
        assert!(c1.starts_with("c1,0,"), "{c1}");
    }

    #[test]
    fn solve_linklen_requires_server() {
        let f = nn_file();
        let model = MatchingModel::from_path(f.path()).unwrap();
        let err =
            cmd_solve(&model, SolveWhat::Linklen, None, None, None, Format::Csv).unwrap_err();
        assert_eq!(err.code, EXIT_INPUT);
        let text =
            cmd_solve(&model, SolveWhat::Linklen, Some("s1"), None, None, Format::Csv).unwrap();
        let mass: f64 = text
            .lines()
            .skip(1)
            .map(|l| l.split(',').nth(1).unwrap().parse::<f64>().unwrap())
            .sum();
        assert!((mass - 1.0).abs() <= 1e-9, "mass {mass}");
    }

    #[test]
    fn solve_pi_is_deterministic_and_starts_empty() {
        let f = nn_file();
        let model = MatchingModel::from_path(f.path()).unwrap();
        let a = cmd_solve(&model, SolveWhat::Pi, None, None, Some(3), Format::Csv).unwrap();
        let b = cmd_solve(&model, SolveWhat::Pi, None, None, Some(3), Format::Csv).unwrap();
        assert_eq!(a, b);
        let mut lines = a.lines();
        assert_eq!(lines.next().unwrap(), "state,probability");
        let first = lines.next().unwrap();
        let (state, prob) = first.split_once(',').unwrap();
        assert_eq!(state, "∅");
        assert!((prob.parse::<f64>().unwrap() - 0.25).abs() <= 1e-10, "{first}");
    }

    #[test]
    fn simulate_log_embeds_seed_and_generator() {
        let f = nn_file();
        let model = MatchingModel::from_path(f.path()).unwrap();
        let text = cmd_simulate(&model, 50, 9, Format::Csv).unwrap();
        assert!(text.starts_with("# seed=9 generator=chacha12\n"), "{text}");
    }

    #[test]
    fn compare_passes_on_nn_and_is_seedless_in_analytic_column() {
        let f = nn_file();
        let model = MatchingModel::from_path(f.path()).unwrap();
        let a = compare_report(&model, 4000, 5).unwrap();
        let b = compare_report(&model, 4000, 6).unwrap();
        assert!(a.pass, "{a:?}");
        assert!(b.pass);
        for (ra, rb) in a.rows.iter().zip(&b.rows) {
            assert_eq!(ra.quantity, rb.quantity);
            assert_eq!(ra.analytic, rb.analytic);
        }
    }

    #[test]
    fn unknown_flag_is_rejected() {
        let r = Cli::try_parse_from(["fcfs-matching", "check", "--frobnicate", "x.json"]);
        assert!(r.is_err());
    }
}
