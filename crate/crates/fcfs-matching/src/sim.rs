//! Seeded Monte Carlo simulation of the matching chains, regenerative
//! estimation of every analytic quantity, a certified window scheme for the
//! bi-infinite matching, and the exchange-reversibility test suite.

use crate::chains::{self, ChainKind, ChainState, InnovationStream};
use crate::fcfs::{
    decompose_perfect_blocks, exchange_transform, fcfs_match_finite, ItemSequence, LineItem,
    Matching,
};
use crate::model::{check_crp, MatchingModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use std::collections::HashMap;
use std::io::Write;
use thiserror::Error;

/// Identifier of the driving generator, embedded in randomized outputs.
pub const GENERATOR_ID: &str = "chacha12";

/// Fixed number of parallel replicas; results depend on the seed and this
/// constant but never on the thread pool size.
pub const REPLICAS: u64 = 8;

/// Longest state recorded individually in occupancy tables.
pub const OCCUPANCY_LEN_CAP: usize = 4;

/// Steps allowed within one regeneration cycle before the run is declared
/// non-regenerative.
pub const CYCLE_STEP_BUDGET: u64 = 1_000_000;

/// Significance level of the reversibility chi-square tests.
pub const CHI_SQUARE_SIGNIFICANCE: f64 = 0.001;

const MAX_DOUBLINGS: u32 = 24;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation request: {0}")]
    Invalid(String),
    #[error("complete resource pooling fails; regenerative estimation requires it")]
    CrpRequired,
    #[error("no regeneration within {0} steps; the chain did not return to the empty state")]
    NoRegeneration(u64),
    #[error("window failed to stabilize after {doublings} doublings (k = {last_k})")]
    WindowUnstable {
        doublings: u32,
        last_k: u64,
        previous: Matching,
        last: Matching,
    },
    #[error("reversed rematch differs from the retained links in the block starting at {block_start}")]
    ReversalMismatch {
        block_start: i64,
        customers: Vec<String>,
        servers: Vec<String>,
    },
    #[error("chain error: {0}")]
    Chain(#[from] chains::ChainError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

// ---------------------------------------------------------------------------
// Driving sequences
// ---------------------------------------------------------------------------

fn cumulative(p: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    p.iter()
        .map(|&x| {
            acc += x;
            acc
        })
        .collect()
}

fn sample_type(cum: &[f64], u: f64) -> usize {
    cum.partition_point(|&c| c <= u).min(cum.len() - 1)
}

/// The two independent i.i.d. driving sequences (customers ~ α, servers ~ β)
/// behind one replica. Identical seeds give identical draws; replicas use
/// disjoint generator streams, so parallel runs never overlap.
pub struct SeededStream {
    seed: u64,
    replica: u64,
    customer_rng: ChaCha12Rng,
    server_rng: ChaCha12Rng,
    alpha_cum: Vec<f64>,
    beta_cum: Vec<f64>,
    customer_draws: u64,
    server_draws: u64,
}

impl SeededStream {
    pub fn new(model: &MatchingModel, seed: u64) -> Self {
        Self::replica(model, seed, 0)
    }

    /// Replica r draws customers from generator stream 2r and servers from
    /// stream 2r + 1.
    pub fn replica(model: &MatchingModel, seed: u64, replica: u64) -> Self {
        let mut customer_rng = ChaCha12Rng::seed_from_u64(seed);
        customer_rng.set_stream(2 * replica);
        let mut server_rng = ChaCha12Rng::seed_from_u64(seed);
        server_rng.set_stream(2 * replica + 1);
        SeededStream {
            seed,
            replica,
            customer_rng,
            server_rng,
            alpha_cum: cumulative(model.alphas()),
            beta_cum: cumulative(model.betas()),
            customer_draws: 0,
            server_draws: 0,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn replica_index(&self) -> u64 {
        self.replica
    }

    /// Number of (customer, server) draws consumed so far.
    pub fn draws(&self) -> (u64, u64) {
        (self.customer_draws, self.server_draws)
    }
}

impl InnovationStream for SeededStream {
    fn next_customer(&mut self) -> usize {
        self.customer_draws += 1;
        let u: f64 = self.customer_rng.gen();
        sample_type(&self.alpha_cum, u)
    }

    fn next_server(&mut self) -> usize {
        self.server_draws += 1;
        let u: f64 = self.server_rng.gen();
        sample_type(&self.beta_cum, u)
    }
}

/// Random-access view of one frozen pair of bi-infinite driving sequences.
/// Positions are integers (negative allowed); the item at a position never
/// changes, which is what the doubling scheme needs.
pub struct FrozenLines {
    seed: u64,
    customer_rng: ChaCha12Rng,
    server_rng: ChaCha12Rng,
    alpha_cum: Vec<f64>,
    beta_cum: Vec<f64>,
}

/// Each draw consumes one 64-bit value, two generator words; position 0 is
/// centered at word 2^63 so that negative positions stay inside the counter
/// range.
fn word_offset(position: i64) -> u128 {
    (2 * (position as i128 + (1i128 << 62))) as u128
}

impl FrozenLines {
    pub fn new(model: &MatchingModel, seed: u64) -> Self {
        let mut customer_rng = ChaCha12Rng::seed_from_u64(seed);
        customer_rng.set_stream(0);
        let mut server_rng = ChaCha12Rng::seed_from_u64(seed);
        server_rng.set_stream(1);
        FrozenLines {
            seed,
            customer_rng,
            server_rng,
            alpha_cum: cumulative(model.alphas()),
            beta_cum: cumulative(model.betas()),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn customer_at(&self, position: i64) -> usize {
        let mut rng = self.customer_rng.clone();
        rng.set_word_pos(word_offset(position));
        let u: f64 = rng.gen();
        sample_type(&self.alpha_cum, u)
    }

    pub fn server_at(&self, position: i64) -> usize {
        let mut rng = self.server_rng.clone();
        rng.set_word_pos(word_offset(position));
        let u: f64 = rng.gen();
        sample_type(&self.beta_cum, u)
    }

    /// Materializes positions from..to (half-open) as a finite sequence pair.
    pub fn slice(&self, from: i64, to: i64) -> ItemSequence {
        let customers = (from..to).map(|n| self.customer_at(n)).collect();
        let servers = (from..to).map(|n| self.server_at(n)).collect();
        ItemSequence::new(customers, servers, from)
    }
}

// ---------------------------------------------------------------------------
// Chain trajectories
// ---------------------------------------------------------------------------

/// Summary of one simulated trajectory started from the empty state.
#[derive(Debug)]
pub struct TrajectorySummary {
    pub kind: ChainKind,
    pub steps: u64,
    pub seed: u64,
    /// Whether complete resource pooling holds; a violating model is still
    /// simulated (it witnesses transience) but flagged here.
    pub crp_holds: bool,
    /// Post-step state counts for states of length ≤ [`OCCUPANCY_LEN_CAP`].
    pub occupancy: HashMap<ChainState, u64>,
    /// Steps spent in states longer than the occupancy cap.
    pub deep_steps: u64,
    /// (step, customer type, server type) for every match in order.
    pub match_log: Vec<(u64, usize, usize)>,
    pub final_state: ChainState,
    /// Steps after which the chain was back in the empty state.
    pub empty_visit_steps: Vec<u64>,
}

impl TrajectorySummary {
    pub fn empty_visits(&self) -> u64 {
        self.empty_visit_steps.len() as u64
    }

    pub fn last_empty_step(&self) -> Option<u64> {
        self.empty_visit_steps.last().copied()
    }

    /// Fraction of steps spent in the given state.
    pub fn occupancy_fraction(&self, state: &ChainState) -> f64 {
        *self.occupancy.get(state).unwrap_or(&0) as f64 / self.steps as f64
    }
}

/// Runs the chosen chain for `steps` transitions from ∅, deterministically in
/// the seed. Works on non-ergodic models too (flagged via `crp_holds`).
pub fn simulate_chain(
    model: &MatchingModel,
    kind: ChainKind,
    steps: u64,
    seed: u64,
) -> Result<TrajectorySummary, SimError> {
    if steps == 0 {
        return Err(SimError::Invalid("steps must be at least 1".into()));
    }
    let crp_holds = check_crp(model).holds;
    let mut stream = SeededStream::new(model, seed);
    let mut state = ChainState::empty(kind);
    let mut occupancy: HashMap<ChainState, u64> = HashMap::new();
    let mut deep_steps = 0u64;
    let mut match_log = Vec::new();
    let mut empty_visit_steps = Vec::new();
    for step in 1..=steps {
        let out = chains::step(model, &state, &mut stream)?;
        state = out.state;
        for &(c, s) in &out.matches {
            match_log.push((step, c, s));
        }
        if state.is_empty() {
            empty_visit_steps.push(step);
        }
        if state.len() <= OCCUPANCY_LEN_CAP {
            *occupancy.entry(state.clone()).or_insert(0) += 1;
        } else {
            deep_steps += 1;
        }
    }
    Ok(TrajectorySummary {
        kind,
        steps,
        seed,
        crp_holds,
        occupancy,
        deep_steps,
        match_log,
        final_state: state,
        empty_visit_steps,
    })
}

/// Outcome of a long pair-chain run tracked with per-type FIFO queues.
#[derive(Debug, Clone)]
pub struct TransienceReport {
    pub seed: u64,
    pub steps: u64,
    pub crp_holds: bool,
    /// Steps after which every arrived item was matched.
    pub empty_visit_steps: Vec<u64>,
    /// Unmatched (customers, servers) left at the end of the run.
    pub final_backlog: (u64, u64),
}

impl TransienceReport {
    pub fn last_empty_step(&self) -> Option<u64> {
        self.empty_visit_steps.last().copied()
    }
}

fn oldest_front<F: Fn(usize) -> bool>(
    queues: &[std::collections::VecDeque<u64>],
    compatible: F,
) -> Option<usize> {
    let mut best: Option<(u64, usize)> = None;
    for (t, q) in queues.iter().enumerate() {
        if !compatible(t) {
            continue;
        }
        if let Some(&front) = q.front() {
            if best.map_or(true, |(b, _)| front < b) {
                best = Some((front, t));
            }
        }
    }
    best.map(|(_, t)| t)
}

/// Runs the pair-by-pair dynamics for `steps` arrivals per line, recording
/// the steps after which the backlog was empty. Positions live in per-type
/// FIFO queues, so each step costs O(types) no matter how large the backlog
/// grows; this is the scalable route for transient models, where the full
/// chain state would make every step cost as much as the backlog itself.
/// Empty visits coincide with [`simulate_chain`]'s for the pair chain.
pub fn transience_probe(
    model: &MatchingModel,
    steps: u64,
    seed: u64,
) -> Result<TransienceReport, SimError> {
    use std::collections::VecDeque;
    if steps == 0 {
        return Err(SimError::Invalid("steps must be at least 1".into()));
    }
    let crp_holds = check_crp(model).holds;
    let mut stream = SeededStream::new(model, seed);
    let mut c_queues: Vec<VecDeque<u64>> = vec![VecDeque::new(); model.n_customers()];
    let mut s_queues: Vec<VecDeque<u64>> = vec![VecDeque::new(); model.n_servers()];
    let mut empty_visit_steps = Vec::new();
    for step in 1..=steps {
        let i = stream.next_customer();
        let j = stream.next_server();
        // Stand-ins arriving together scan the backlog, not each other.
        let rs = oldest_front(&s_queues, |t| model.is_edge(i, t));
        let rc = oldest_front(&c_queues, |t| model.is_edge(t, j));
        match (rs, rc) {
            (Some(js), Some(ic)) => {
                s_queues[js].pop_front();
                c_queues[ic].pop_front();
            }
            (Some(js), None) => {
                s_queues[js].pop_front();
                s_queues[j].push_back(step);
            }
            (None, Some(ic)) => {
                c_queues[ic].pop_front();
                c_queues[i].push_back(step);
            }
            (None, None) => {
                if !model.is_edge(i, j) {
                    c_queues[i].push_back(step);
                    s_queues[j].push_back(step);
                }
            }
        }
        if c_queues.iter().all(|q| q.is_empty()) && s_queues.iter().all(|q| q.is_empty()) {
            empty_visit_steps.push(step);
        }
    }
    let backlog = |queues: &[VecDeque<u64>]| queues.iter().map(|q| q.len() as u64).sum();
    Ok(TransienceReport {
        seed,
        steps,
        crp_holds,
        empty_visit_steps,
        final_backlog: (backlog(&c_queues), backlog(&s_queues)),
    })
}

// ---------------------------------------------------------------------------
// Regenerative estimation
// ---------------------------------------------------------------------------

/// One matched pair with absolute positions; the link length is m − n.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MatchRecord {
    pub m: i64,
    pub n: i64,
    pub customer: usize,
    pub server: usize,
}

impl MatchRecord {
    pub fn link_length(&self) -> i64 {
        self.m - self.n
    }
}

/// Point estimate with its standard error.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
}

/// Aggregate regeneration data: cycles are delimited by returns of the
/// pair-by-pair chain to the empty state.
#[derive(Debug)]
pub struct CycleStats {
    pub cycles: u64,
    pub pair_steps: u64,
    pub cycle_lengths: Vec<u32>,
    /// Total matches by (customer type, server type).
    pub matches_by_pair: Vec<Vec<u64>>,
    /// Total link-length counts over all matches.
    pub link_length_counts: std::collections::BTreeMap<i64, u64>,
}

impl CycleStats {
    pub fn mean_cycle_length(&self) -> f64 {
        self.pair_steps as f64 / self.cycles as f64
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RateEstimateRow {
    pub customer: String,
    pub server: String,
    pub value: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct LinkBinRow {
    pub server: String,
    /// Customer label for pair-conditional bins, empty for per-server bins.
    pub customer: String,
    pub k: i64,
    pub value: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct OccupancyRow {
    pub state: String,
    pub value: f64,
    pub std_error: f64,
}

/// Renewal-reward estimates with batch-means standard errors for every
/// analytic quantity, serializable as the JSON report.
#[derive(Debug, Serialize)]
pub struct EmpiricalReport {
    pub seed: u64,
    pub generator: String,
    pub cycles: u64,
    pub pair_steps: u64,
    pub mean_cycle_length: Estimate,
    /// Mean O-cycle length times the Zˢ-chain empty-state occupancy; by
    /// Kac's formula both factors are reciprocal in stationarity, so this
    /// should sit near 1.
    pub kac_product: Estimate,
    pub mean_link_length: Estimate,
    /// Matching-rate estimates, edges only, in model edge order.
    pub rates: Vec<RateEstimateRow>,
    /// Link-length pmf conditional on the match involving the given server.
    pub server_link_pmf: Vec<LinkBinRow>,
    /// Link-length pmf conditional on the match pairing (customer, server).
    pub pair_link_pmf: Vec<LinkBinRow>,
    /// Pair-by-pair chain occupancies for states of length ≤ the cap.
    pub o_occupancy: Vec<OccupancyRow>,
    /// Server-by-server detailed chain occupancies (states rendered as words).
    pub zs_occupancy: Vec<OccupancyRow>,
}

/// Per-batch accumulator of one replica's O-pass.
#[derive(Debug, Default, Clone)]
struct OBatch {
    steps: u64,
    cycles: u64,
    matches: Vec<u64>,
    links: HashMap<(usize, usize, i64), u64>,
    states: HashMap<ChainState, u64>,
    link_len_sum: i64,
}

/// Per-batch accumulator of one replica's Zs-pass.
#[derive(Debug, Default, Clone)]
struct ZsBatch {
    steps: u64,
    cycles: u64,
    states: HashMap<ChainState, u64>,
}

/// Records every consumed draw so the regeneration blocks can be rebuilt and
/// rematched exactly.
struct Recording<'a, S> {
    inner: &'a mut S,
    customers: Vec<usize>,
    servers: Vec<usize>,
}

impl<S: InnovationStream> InnovationStream for Recording<'_, S> {
    fn next_customer(&mut self) -> usize {
        let t = self.inner.next_customer();
        self.customers.push(t);
        t
    }

    fn next_server(&mut self) -> usize {
        let t = self.inner.next_server();
        self.servers.push(t);
        t
    }
}

fn replica_share(total: u64, replica: u64) -> u64 {
    total / REPLICAS + u64::from(replica < total % REPLICAS)
}

/// Runs one replica's O-pass for the given number of cycles, invoking
/// `on_cycle` with each completed block and its exact FCFS matching.
fn run_o_cycles<F>(
    model: &MatchingModel,
    seed: u64,
    replica: u64,
    cycles: u64,
    mut on_cycle: F,
) -> Result<(), SimError>
where
    F: FnMut(&ItemSequence, &Matching, &[ChainState]),
{
    let mut stream = SeededStream::replica(model, seed, replica);
    let mut state = ChainState::empty(ChainKind::O);
    let mut position = 0i64;
    let mut states = Vec::new();
    for _ in 0..cycles {
        let mut rec = Recording { inner: &mut stream, customers: Vec::new(), servers: Vec::new() };
        states.clear();
        let base = position;
        loop {
            let out = chains::step(model, &state, &mut rec)?;
            state = out.state;
            position += 1;
            states.push(state.clone());
            if state.is_empty() {
                break;
            }
            if (position - base) as u64 >= CYCLE_STEP_BUDGET {
                return Err(SimError::NoRegeneration(CYCLE_STEP_BUDGET));
            }
        }
        let seq = ItemSequence::new(rec.customers, rec.servers, base);
        let links = fcfs_match_finite(model, &seq);
        debug_assert_eq!(links.len(), seq.n_customers(), "regeneration block must be perfect");
        on_cycle(&seq, &links, &states);
    }
    Ok(())
}

fn run_o_replica(
    model: &MatchingModel,
    seed: u64,
    replica: u64,
    cycles: u64,
    batch_size: u64,
) -> Result<(Vec<OBatch>, Vec<u32>), SimError> {
    let (i_n, j_n) = (model.n_customers(), model.n_servers());
    let mut batches = Vec::new();
    let mut cur = OBatch { matches: vec![0; i_n * j_n], ..OBatch::default() };
    let mut cycle_lengths = Vec::new();
    let mut in_batch = 0u64;
    run_o_cycles(model, seed, replica, cycles, |seq, links, states| {
        let len = seq.n_customers();
        cycle_lengths.push(len as u32);
        cur.steps += len as u64;
        cur.cycles += 1;
        for &(m, n) in links.links() {
            let i = seq.customer_word[(m - seq.base_index) as usize];
            let j = seq.server_word[(n - seq.base_index) as usize];
            cur.matches[i * j_n + j] += 1;
            *cur.links.entry((i, j, m - n)).or_insert(0) += 1;
            cur.link_len_sum += m - n;
        }
        for st in states {
            if st.len() <= OCCUPANCY_LEN_CAP {
                *cur.states.entry(st.clone()).or_insert(0) += 1;
            }
        }
        in_batch += 1;
        if in_batch == batch_size {
            batches.push(std::mem::replace(
                &mut cur,
                OBatch { matches: vec![0; i_n * j_n], ..OBatch::default() },
            ));
            in_batch = 0;
        }
    })?;
    if in_batch > 0 {
        batches.push(cur);
    }
    Ok((batches, cycle_lengths))
}

fn run_zs_replica(
    model: &MatchingModel,
    seed: u64,
    replica: u64,
    cycles: u64,
    batch_size: u64,
) -> Result<Vec<ZsBatch>, SimError> {
    let mut stream = SeededStream::replica(model, seed, replica);
    let mut state = ChainState::empty(ChainKind::Zs);
    let mut batches = Vec::new();
    let mut cur = ZsBatch::default();
    let mut in_batch = 0u64;
    let mut cycle_steps = 0u64;
    let mut done = 0u64;
    while done < cycles {
        let out = chains::step(model, &state, &mut stream)?;
        state = out.state;
        cur.steps += 1;
        cycle_steps += 1;
        if state.len() <= OCCUPANCY_LEN_CAP {
            *cur.states.entry(state.clone()).or_insert(0) += 1;
        }
        if state.is_empty() {
            cur.cycles += 1;
            done += 1;
            cycle_steps = 0;
            in_batch += 1;
            if in_batch == batch_size {
                batches.push(std::mem::take(&mut cur));
                in_batch = 0;
            }
        } else if cycle_steps >= CYCLE_STEP_BUDGET {
            return Err(SimError::NoRegeneration(CYCLE_STEP_BUDGET));
        }
    }
    if in_batch > 0 {
        batches.push(cur);
    }
    Ok(batches)
}

/// Ratio estimate Σreward/Σlength with a batch-means standard error.
fn ratio_estimate(batches: &[(f64, f64)]) -> Estimate {
    let total_r: f64 = batches.iter().map(|b| b.0).sum();
    let total_l: f64 = batches.iter().map(|b| b.1).sum();
    let value = if total_l > 0.0 { total_r / total_l } else { 0.0 };
    let vals: Vec<f64> = batches
        .iter()
        .filter(|b| b.1 > 0.0)
        .map(|b| b.0 / b.1)
        .collect();
    let m = vals.len();
    if m < 2 {
        return Estimate { value, std_error: f64::INFINITY };
    }
    let ss: f64 = vals.iter().map(|v| (v - value).powi(2)).sum();
    Estimate { value, std_error: (ss / ((m * (m - 1)) as f64)).sqrt() }
}

/// Simulates the pair-by-pair chain for the requested number of regeneration
/// cycles and assembles renewal-reward estimates for rates, link lengths, and
/// state occupancies. Replicas run in parallel on disjoint streams.
pub fn regeneration_estimates(
    model: &MatchingModel,
    cycles: u64,
    seed: u64,
) -> Result<(CycleStats, EmpiricalReport), SimError> {
    if cycles == 0 {
        return Err(SimError::Invalid("cycles must be at least 1".into()));
    }
    if !check_crp(model).holds {
        return Err(SimError::CrpRequired);
    }
    let (i_n, j_n) = (model.n_customers(), model.n_servers());

    let replica_ids: Vec<u64> = (0..REPLICAS).filter(|&r| replica_share(cycles, r) > 0).collect();
    let results: Vec<Result<((Vec<OBatch>, Vec<u32>), Vec<ZsBatch>), SimError>> = {
        use rayon::prelude::*;
        replica_ids
            .par_iter()
            .map(|&r| {
                let share = replica_share(cycles, r);
                let batch_size = (share / 12).max(1);
                let o = run_o_replica(model, seed, r, share, batch_size)?;
                let zs = run_zs_replica(model, seed, r, share, batch_size)?;
                Ok((o, zs))
            })
            .collect()
    };

    let mut o_batches: Vec<OBatch> = Vec::new();
    let mut zs_batches: Vec<ZsBatch> = Vec::new();
    let mut cycle_lengths: Vec<u32> = Vec::new();
    for r in results {
        let ((ob, lens), zb) = r?;
        o_batches.extend(ob);
        zs_batches.extend(zb);
        cycle_lengths.extend(lens);
    }

    // Totals for CycleStats.
    let pair_steps: u64 = o_batches.iter().map(|b| b.steps).sum();
    let mut matches_by_pair = vec![vec![0u64; j_n]; i_n];
    let mut link_length_counts = std::collections::BTreeMap::new();
    for b in &o_batches {
        for i in 0..i_n {
            for j in 0..j_n {
                matches_by_pair[i][j] += b.matches[i * j_n + j];
            }
        }
        for (&(_, _, k), &c) in &b.links {
            *link_length_counts.entry(k).or_insert(0) += c;
        }
    }
    let stats = CycleStats {
        cycles,
        pair_steps,
        cycle_lengths,
        matches_by_pair,
        link_length_counts,
    };

    // Rates: matches per pair step.
    let mut rates = Vec::new();
    for &(i, j) in model.edges() {
        let per: Vec<(f64, f64)> = o_batches
            .iter()
            .map(|b| (b.matches[i * j_n + j] as f64, b.steps as f64))
            .collect();
        let e = ratio_estimate(&per);
        rates.push(RateEstimateRow {
            customer: model.customer_label(i).to_string(),
            server: model.server_label(j).to_string(),
            value: e.value,
            std_error: e.std_error,
        });
    }

    // Link-length pmfs conditional on the server (and on the pair).
    let mut server_link_pmf = Vec::new();
    let mut pair_link_pmf = Vec::new();
    let mut observed_k: Vec<i64> = o_batches
        .iter()
        .flat_map(|b| b.links.keys().map(|&(_, _, k)| k))
        .collect();
    observed_k.sort_unstable();
    observed_k.dedup();
    for j in 0..j_n {
        for &k in &observed_k {
            let per: Vec<(f64, f64)> = o_batches
                .iter()
                .map(|b| {
                    let num: u64 = (0..i_n)
                        .map(|i| b.links.get(&(i, j, k)).copied().unwrap_or(0))
                        .sum();
                    let den: u64 = (0..i_n).map(|i| b.matches[i * j_n + j]).sum();
                    (num as f64, den as f64)
                })
                .collect();
            if per.iter().all(|p| p.0 == 0.0) {
                continue;
            }
            let e = ratio_estimate(&per);
            server_link_pmf.push(LinkBinRow {
                server: model.server_label(j).to_string(),
                customer: String::new(),
                k,
                value: e.value,
                std_error: e.std_error,
            });
        }
    }
    for &(i, j) in model.edges() {
        for &k in &observed_k {
            let per: Vec<(f64, f64)> = o_batches
                .iter()
                .map(|b| {
                    (
                        b.links.get(&(i, j, k)).copied().unwrap_or(0) as f64,
                        b.matches[i * j_n + j] as f64,
                    )
                })
                .collect();
            if per.iter().all(|p| p.0 == 0.0) {
                continue;
            }
            let e = ratio_estimate(&per);
            pair_link_pmf.push(LinkBinRow {
                server: model.server_label(j).to_string(),
                customer: model.customer_label(i).to_string(),
                k,
                value: e.value,
                std_error: e.std_error,
            });
        }
    }

    // Occupancies, rendered deterministically in state order.
    let occupancy_rows = |key: fn(&ChainState) -> bool,
                          steps_of: &dyn Fn(&OBatch) -> f64,
                          batches: &[OBatch]|
     -> Vec<OccupancyRow> {
        let mut states: Vec<ChainState> = batches
            .iter()
            .flat_map(|b| b.states.keys().cloned())
            .filter(key)
            .collect();
        states.sort();
        states.dedup();
        states
            .into_iter()
            .map(|st| {
                let per: Vec<(f64, f64)> = batches
                    .iter()
                    .map(|b| (*b.states.get(&st).unwrap_or(&0) as f64, steps_of(b)))
                    .collect();
                let e = ratio_estimate(&per);
                OccupancyRow {
                    state: chains::format_state(model, &st),
                    value: e.value,
                    std_error: e.std_error,
                }
            })
            .collect()
    };
    let o_occupancy = occupancy_rows(|_| true, &|b| b.steps as f64, &o_batches);

    let mut zs_states: Vec<ChainState> =
        zs_batches.iter().flat_map(|b| b.states.keys().cloned()).collect();
    zs_states.sort();
    zs_states.dedup();
    let zs_occupancy: Vec<OccupancyRow> = zs_states
        .into_iter()
        .map(|st| {
            let per: Vec<(f64, f64)> = zs_batches
                .iter()
                .map(|b| (*b.states.get(&st).unwrap_or(&0) as f64, b.steps as f64))
                .collect();
            let e = ratio_estimate(&per);
            OccupancyRow {
                state: chains::format_state(model, &st),
                value: e.value,
                std_error: e.std_error,
            }
        })
        .collect();

    let mean_cycle_length = ratio_estimate(
        &o_batches.iter().map(|b| (b.steps as f64, b.cycles as f64)).collect::<Vec<_>>(),
    );
    let mean_link_length = ratio_estimate(
        &o_batches
            .iter()
            .map(|b| (b.link_len_sum as f64, b.steps as f64))
            .collect::<Vec<_>>(),
    );
    let zs_empty = ratio_estimate(
        &zs_batches.iter().map(|b| (b.cycles as f64, b.steps as f64)).collect::<Vec<_>>(),
    );
    let kac_value = mean_cycle_length.value * zs_empty.value;
    // The two passes share driving sequences, so this combined error bar is
    // approximate; it is a sanity diagnostic, not an estimator.
    let kac_se = kac_value
        * ((mean_cycle_length.std_error / mean_cycle_length.value).powi(2)
            + (zs_empty.std_error / zs_empty.value).powi(2))
        .sqrt();
    let report = EmpiricalReport {
        seed,
        generator: GENERATOR_ID.to_string(),
        cycles,
        pair_steps,
        mean_cycle_length,
        kac_product: Estimate { value: kac_value, std_error: kac_se },
        mean_link_length,
        rates,
        server_link_pmf,
        pair_link_pmf,
        o_occupancy,
        zs_occupancy,
    };
    Ok((stats, report))
}

/// Collects the exact match records of the first `cycles` regeneration
/// cycles of replica 0, suitable for CSV streaming.
pub fn collect_match_log(
    model: &MatchingModel,
    cycles: u64,
    seed: u64,
) -> Result<Vec<MatchRecord>, SimError> {
    if !check_crp(model).holds {
        return Err(SimError::CrpRequired);
    }
    let mut records = Vec::new();
    run_o_cycles(model, seed, 0, cycles, |seq, links, _| {
        for &(m, n) in links.links() {
            records.push(MatchRecord {
                m,
                n,
                customer: seq.customer_word[(m - seq.base_index) as usize],
                server: seq.server_word[(n - seq.base_index) as usize],
            });
        }
    })?;
    records.sort_by_key(|r| (r.m, r.n));
    Ok(records)
}

/// Streams a match log as CSV: a header comment with the seed and generator,
/// then one `m,n,customer,server,link length` row per match.
pub fn write_match_log_csv<W: Write>(
    mut out: W,
    model: &MatchingModel,
    records: &[MatchRecord],
    seed: u64,
) -> std::io::Result<()> {
    writeln!(out, "# seed={seed} generator={GENERATOR_ID}")?;
    writeln!(out, "m,n,customer,server,link_length")?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.m,
            r.n,
            model.customer_label(r.customer),
            model.server_label(r.server),
            r.link_length()
        )?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Certified window matching
// ---------------------------------------------------------------------------

/// FCFS matching restricted to a window, certified exact: restarting from a
/// regeneration point before the window cannot change any link printed here.
#[derive(Debug, Clone)]
pub struct WindowMatching {
    /// Links (m, n) with at least one endpoint inside the window.
    pub links: Matching,
    /// Half-open window [start, end).
    pub window: (i64, i64),
    /// The start offset k at which the doubling scheme stabilized.
    pub k_used: u64,
    /// First position after the latest regeneration at or before the window
    /// start; the matching is exact from this position on.
    pub regeneration_time: i64,
    pub seed: u64,
}

/// Matches the slice [−k, end + slack), extending the slack until a perfect
/// prefix boundary falls at or beyond the window end. Only links inside
/// completed blocks are kept; those are stable under any longer horizon,
/// unlike matches formed against the truncated tail.
fn window_links(
    model: &MatchingModel,
    lines: &FrozenLines,
    k: i64,
    w_start: i64,
    w_end: i64,
) -> Result<(Vec<(i64, i64)>, Option<i64>), SimError> {
    let mut slack = (w_end - w_start).max(64);
    loop {
        let seq = lines.slice(-k, w_end + slack);
        let matching = fcfs_match_finite(model, &seq);
        let boundaries = decompose_perfect_blocks(&seq, &matching);
        let frontier = boundaries.iter().copied().max().unwrap_or(-k);
        if frontier >= w_end {
            let in_window = |p: i64| (w_start..w_end).contains(&p);
            let mut links: Vec<(i64, i64)> = matching
                .links()
                .iter()
                .copied()
                .filter(|&(m, n)| m < frontier && n < frontier)
                .filter(|&(m, n)| in_window(m) || in_window(n))
                .collect();
            links.sort_unstable();
            // Latest perfect-prefix boundary at or before the window start.
            let regen = boundaries.iter().copied().filter(|&p| p <= w_start).max();
            return Ok((links, regen));
        }
        if slack as u64 >= CYCLE_STEP_BUDGET {
            return Err(SimError::NoRegeneration(CYCLE_STEP_BUDGET));
        }
        slack *= 2;
    }
}

/// Computes the FCFS matching over the window by starting empty ever further
/// in the past (k₀, 2k₀, 4k₀, …) on frozen driving sequences, stopping when
/// two successive starts agree on the window and a regeneration happened
/// between the start and the window. The certificate guarantees exactness on
/// [t, ∞) for the returned regeneration time t: the links are exactly those
/// of the matching started empty at t, free of horizon artifacts. Blocks
/// between regenerations are i.i.d., so the window links are a stationary
/// sample; deeper starts can only move the regeneration point further back.
pub fn loynes_window(
    model: &MatchingModel,
    window_start: i64,
    window_len: u64,
    seed: u64,
    k0: u64,
) -> Result<WindowMatching, SimError> {
    if window_len == 0 || k0 == 0 {
        return Err(SimError::Invalid("window length and k0 must be positive".into()));
    }
    if !check_crp(model).holds {
        return Err(SimError::CrpRequired);
    }
    let lines = FrozenLines::new(model, seed);
    let w_end = window_start + window_len as i64;
    let mut k = k0;
    let (mut prev_links, mut prev_regen) =
        window_links(model, &lines, k as i64, window_start, w_end)?;
    for doubling in 1..=MAX_DOUBLINGS {
        let k2 = k * 2;
        let (links, regen) = window_links(model, &lines, k2 as i64, window_start, w_end)?;
        if links == prev_links {
            if let Some(t) = regen {
                return Ok(WindowMatching {
                    links: Matching::from_links(links),
                    window: (window_start, w_end),
                    k_used: k2,
                    regeneration_time: t,
                    seed,
                });
            }
        }
        if doubling == MAX_DOUBLINGS {
            return Err(SimError::WindowUnstable {
                doublings: MAX_DOUBLINGS,
                last_k: k2,
                previous: Matching::from_links(prev_links),
                last: Matching::from_links(links),
            });
        }
        prev_links = links;
        prev_regen = regen;
        k = k2;
    }
    let _ = prev_regen;
    unreachable!("loop returns or errors at the doubling cap")
}

// ---------------------------------------------------------------------------
// Reversibility suite
// ---------------------------------------------------------------------------

/// One chi-square test outcome at the suite significance level.
#[derive(Debug, Clone, Serialize)]
pub struct ChiSquareTest {
    pub statistic: f64,
    pub threshold: f64,
    pub degrees: usize,
    pub pass: bool,
}

fn chi_square(observed: &[u64], expected: &[f64]) -> (f64, usize) {
    let mut stat = 0.0;
    let mut df = 0usize;
    for (&o, &e) in observed.iter().zip(expected) {
        if e > 0.0 {
            stat += (o as f64 - e).powi(2) / e;
            df += 1;
        }
    }
    (stat, df.saturating_sub(1))
}

fn chi_square_test(stat: f64, df: usize) -> ChiSquareTest {
    let threshold = if df == 0 {
        0.0
    } else {
        ChiSquared::new(df as f64).unwrap().inverse_cdf(1.0 - CHI_SQUARE_SIGNIFICANCE)
    };
    ChiSquareTest { statistic: stat, threshold, degrees: df, pass: stat <= threshold || df == 0 }
}

/// Exchange-reversibility report: exact per-block rematch agreement plus
/// chi-square statistics on the exchanged sequences.
#[derive(Debug, Serialize)]
pub struct ReversibilityReport {
    pub seed: u64,
    pub generator: String,
    pub blocks: u64,
    /// Always 0 on success; any mismatch is a hard error instead.
    pub link_mismatches: u64,
    /// Exchanged customers on the server line against α.
    pub customer_marginal: ChiSquareTest,
    /// Exchanged servers on the customer line against β.
    pub server_marginal: ChiSquareTest,
    pub customer_lag1: ChiSquareTest,
    pub server_lag1: ChiSquareTest,
}

impl ReversibilityReport {
    pub fn all_pass(&self) -> bool {
        self.link_mismatches == 0
            && self.customer_marginal.pass
            && self.server_marginal.pass
            && self.customer_lag1.pass
            && self.server_lag1.pass
    }
}

#[derive(Default, Clone)]
struct ExchangeTallies {
    customer_counts: Vec<u64>,
    server_counts: Vec<u64>,
    customer_pairs: Vec<u64>,
    server_pairs: Vec<u64>,
}

/// Over regeneration blocks: exchange and reverse each block, recompute the
/// FCFS matching of the reversed words, and require it to reproduce the
/// retained links exactly; then chi-square the exchanged types for marginals
/// α, β and lag-1 independence at the 0.001 level.
pub fn reversibility_suite(
    model: &MatchingModel,
    blocks: u64,
    seed: u64,
) -> Result<ReversibilityReport, SimError> {
    if blocks == 0 {
        return Err(SimError::Invalid("blocks must be at least 1".into()));
    }
    if !check_crp(model).holds {
        return Err(SimError::CrpRequired);
    }
    let (i_n, j_n) = (model.n_customers(), model.n_servers());
    let replica_ids: Vec<u64> = (0..REPLICAS).filter(|&r| replica_share(blocks, r) > 0).collect();
    let results: Vec<Result<ExchangeTallies, SimError>> = {
        use rayon::prelude::*;
        replica_ids
            .par_iter()
            .map(|&r| {
                let mut t = ExchangeTallies {
                    customer_counts: vec![0; i_n],
                    server_counts: vec![0; j_n],
                    customer_pairs: vec![0; i_n * i_n],
                    server_pairs: vec![0; j_n * j_n],
                };
                let mut failure: Option<SimError> = None;
                let mut prev_c: Option<usize> = None;
                let mut prev_s: Option<usize> = None;
                run_o_cycles(model, seed, r, replica_share(blocks, r), |seq, links, _| {
                    if failure.is_some() {
                        return;
                    }
                    match crate::fcfs::reversed_rematch_check(model, seq, links) {
                        Ok(true) => {}
                        _ => {
                            failure = Some(SimError::ReversalMismatch {
                                block_start: seq.base_index,
                                customers: seq
                                    .customer_word
                                    .iter()
                                    .map(|&t| model.customer_label(t).to_string())
                                    .collect(),
                                servers: seq
                                    .server_word
                                    .iter()
                                    .map(|&t| model.server_label(t).to_string())
                                    .collect(),
                            });
                            return;
                        }
                    }
                    let ex = exchange_transform(seq, links);
                    for item in &ex.server_line {
                        let LineItem::Exchanged(c) = *item else { unreachable!("perfect block") };
                        t.customer_counts[c] += 1;
                        if let Some(p) = prev_c {
                            t.customer_pairs[p * i_n + c] += 1;
                        }
                        prev_c = Some(c);
                    }
                    for item in &ex.customer_line {
                        let LineItem::Exchanged(s) = *item else { unreachable!("perfect block") };
                        t.server_counts[s] += 1;
                        if let Some(p) = prev_s {
                            t.server_pairs[p * j_n + s] += 1;
                        }
                        prev_s = Some(s);
                    }
                })?;
                match failure {
                    Some(e) => Err(e),
                    None => Ok(t),
                }
            })
            .collect()
    };

    let mut tally = ExchangeTallies {
        customer_counts: vec![0; i_n],
        server_counts: vec![0; j_n],
        customer_pairs: vec![0; i_n * i_n],
        server_pairs: vec![0; j_n * j_n],
    };
    for r in results {
        let t = r?;
        for (a, b) in tally.customer_counts.iter_mut().zip(&t.customer_counts) {
            *a += b;
        }
        for (a, b) in tally.server_counts.iter_mut().zip(&t.server_counts) {
            *a += b;
        }
        for (a, b) in tally.customer_pairs.iter_mut().zip(&t.customer_pairs) {
            *a += b;
        }
        for (a, b) in tally.server_pairs.iter_mut().zip(&t.server_pairs) {
            *a += b;
        }
    }

    let n_c: u64 = tally.customer_counts.iter().sum();
    let n_s: u64 = tally.server_counts.iter().sum();
    let exp_c: Vec<f64> = (0..i_n).map(|i| n_c as f64 * model.alpha(i)).collect();
    let exp_s: Vec<f64> = (0..j_n).map(|j| n_s as f64 * model.beta(j)).collect();
    let (stat_c, df_c) = chi_square(&tally.customer_counts, &exp_c);
    let (stat_s, df_s) = chi_square(&tally.server_counts, &exp_s);

    let lag_test = |pairs: &[u64], n: usize| -> ChiSquareTest {
        let total: u64 = pairs.iter().sum();
        if total == 0 {
            return chi_square_test(0.0, 0);
        }
        let rows: Vec<u64> = (0..n).map(|a| (0..n).map(|b| pairs[a * n + b]).sum()).collect();
        let cols: Vec<u64> = (0..n).map(|b| (0..n).map(|a| pairs[a * n + b]).sum()).collect();
        let mut stat = 0.0;
        for a in 0..n {
            for b in 0..n {
                let e = rows[a] as f64 * cols[b] as f64 / total as f64;
                if e > 0.0 {
                    stat += (pairs[a * n + b] as f64 - e).powi(2) / e;
                }
            }
        }
        let live_rows = rows.iter().filter(|&&x| x > 0).count();
        let live_cols = cols.iter().filter(|&&x| x > 0).count();
        let df = live_rows.saturating_sub(1) * live_cols.saturating_sub(1);
        chi_square_test(stat, df)
    };

    Ok(ReversibilityReport {
        seed,
        generator: GENERATOR_ID.to_string(),
        blocks,
        link_mismatches: 0,
        customer_marginal: chi_square_test(stat_c, df_c),
        server_marginal: chi_square_test(stat_s, df_s),
        customer_lag1: lag_test(&tally.customer_pairs, i_n),
        server_lag1: lag_test(&tally.server_pairs, j_n),
    })
}
