//! State spaces and transition kernels for the chains attached to FCFS
//! matching: the natural chains (O, Qs, Qc), the detailed chains
//! (Zs, Zc, D, E), the augmented rewriting and the marginal projections.

use crate::model::{MatchingModel, Side, TypeSubset};
use std::collections::HashMap;
use std::fmt;
use thiserror::Error;

/// Cap for exhaustive state enumeration.
pub const MAX_ENUM_LEN: usize = 8;

/// Default run-length truncation for successor enumeration.
pub const DEFAULT_MAX_APPENDED: usize = 32;

/// One slot of a state word. Type indices refer to the model's declaration
/// order on the symbol's own side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Symbol {
    /// Unmatched customer.
    C(usize),
    /// Matched and exchanged server (sits on the customer line).
    ExS(usize),
    /// Unmatched server.
    S(usize),
    /// Matched and exchanged customer (sits on the server line).
    ExC(usize),
}

impl Symbol {
    pub fn type_index(self) -> usize {
        match self {
            Symbol::C(t) | Symbol::ExS(t) | Symbol::S(t) | Symbol::ExC(t) => t,
        }
    }

    /// Side of the type label carried by the symbol.
    pub fn side(self) -> Side {
        match self {
            Symbol::C(_) | Symbol::ExC(_) => Side::Customer,
            Symbol::S(_) | Symbol::ExS(_) => Side::Server,
        }
    }

    pub fn is_exchanged(self) -> bool {
        matches!(self, Symbol::ExS(_) | Symbol::ExC(_))
    }

    /// Toggles matched/unmatched while keeping side and type: c ↔ ĉ, s ↔ ŝ.
    pub fn flip(self) -> Symbol {
        match self {
            Symbol::C(t) => Symbol::ExC(t),
            Symbol::ExC(t) => Symbol::C(t),
            Symbol::S(t) => Symbol::ExS(t),
            Symbol::ExS(t) => Symbol::S(t),
        }
    }
}

pub type Word = Vec<Symbol>;

/// Reverses a word and flips every symbol's matched/unmatched role. This is
/// the correspondence between a chain state and its time-reversed mirror.
pub fn reverse_role_flip(word: &[Symbol]) -> Word {
    word.iter().rev().map(|s| s.flip()).collect()
}

/// The chain mechanisms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ChainKind {
    /// Natural pair by pair (lists of unmatched items).
    O,
    /// Natural server by server (skipped customers).
    Qs,
    /// Natural customer by customer (skipped servers).
    Qc,
    /// Detailed server by server.
    Zs,
    /// Detailed customer by customer.
    Zc,
    /// Detailed pair by pair backward.
    D,
    /// Detailed pair by pair forward.
    E,
}

impl fmt::Display for ChainKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            ChainKind::O => "O",
            ChainKind::Qs => "Qs",
            ChainKind::Qc => "Qc",
            ChainKind::Zs => "Zs",
            ChainKind::Zc => "Zc",
            ChainKind::D => "D",
            ChainKind::E => "E",
        };
        write!(f, "{name}")
    }
}

/// A chain state; the variant determines the kind.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ChainState {
    O { customers: Vec<usize>, servers: Vec<usize> },
    Qs(Vec<usize>),
    Qc(Vec<usize>),
    Zs(Word),
    Zc(Word),
    D { z: Word, y: Word },
    E { y: Word, z: Word },
}

impl ChainState {
    pub fn empty(kind: ChainKind) -> ChainState {
        match kind {
            ChainKind::O => ChainState::O { customers: vec![], servers: vec![] },
            ChainKind::Qs => ChainState::Qs(vec![]),
            ChainKind::Qc => ChainState::Qc(vec![]),
            ChainKind::Zs => ChainState::Zs(vec![]),
            ChainKind::Zc => ChainState::Zc(vec![]),
            ChainKind::D => ChainState::D { z: vec![], y: vec![] },
            ChainKind::E => ChainState::E { y: vec![], z: vec![] },
        }
    }

    pub fn kind(&self) -> ChainKind {
        match self {
            ChainState::O { .. } => ChainKind::O,
            ChainState::Qs(_) => ChainKind::Qs,
            ChainState::Qc(_) => ChainKind::Qc,
            ChainState::Zs(_) => ChainKind::Zs,
            ChainState::Zc(_) => ChainKind::Zc,
            ChainState::D { .. } => ChainKind::D,
            ChainState::E { .. } => ChainKind::E,
        }
    }

    pub fn is_empty(&self) -> bool {
        match self {
            ChainState::O { customers, servers } => customers.is_empty() && servers.is_empty(),
            ChainState::Qs(w) | ChainState::Qc(w) => w.is_empty(),
            ChainState::Zs(w) | ChainState::Zc(w) => w.is_empty(),
            ChainState::D { z, y } | ChainState::E { y, z } => z.is_empty() && y.is_empty(),
        }
    }

    /// Total number of stored symbols.
    pub fn len(&self) -> usize {
        match self {
            ChainState::O { customers, servers } => customers.len() + servers.len(),
            ChainState::Qs(w) | ChainState::Qc(w) => w.len(),
            ChainState::Zs(w) | ChainState::Zc(w) => w.len(),
            ChainState::D { z, y } | ChainState::E { y, z } => z.len() + y.len(),
        }
    }
}

#[derive(Debug, Error)]
pub enum ChainError {
    #[error("state is not valid for its chain kind")]
    InvalidState,
    #[error("state has the wrong kind for this operation")]
    WrongKind,
    #[error("enumeration length {0} exceeds the cap {MAX_ENUM_LEN}")]
    CapExceeded(usize),
    #[error("word is not in augmented form: {0}")]
    NotAugmented(String),
    #[error("cannot parse state token `{0}`")]
    Parse(String),
}

/// Deterministic source of i.i.d. type draws, split per line so that every
/// mechanism consumes the same underlying sequences.
pub trait InnovationStream {
    fn next_customer(&mut self) -> usize;
    fn next_server(&mut self) -> usize;
}

/// Result of one chain step: the new state and the matches completed during
/// the step as (customer type, server type) pairs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepOutcome {
    pub state: ChainState,
    pub matches: Vec<(usize, usize)>,
}

/// Exact successor enumeration, truncated at `max_appended` run items.
#[derive(Debug, Clone)]
pub struct SuccessorSet {
    pub transitions: Vec<(ChainState, f64)>,
    /// Probability mass of transitions whose skip runs exceed the cap.
    pub tail_mass: f64,
}

// ---------------------------------------------------------------------------
// Formatting and parsing
// ---------------------------------------------------------------------------

/// Renders one symbol using the model's labels. Exchanged items carry the
/// hatted letter: label "s1" renders as "ŝ1", "c2" as "ĉ2"; labels that do
/// not start with the conventional letter keep the full label after the hat.
pub fn format_symbol(model: &MatchingModel, sym: Symbol) -> String {
    let label = match sym.side() {
        Side::Customer => model.customer_label(sym.type_index()),
        Side::Server => model.server_label(sym.type_index()),
    };
    match sym {
        Symbol::C(_) | Symbol::S(_) => label.to_string(),
        Symbol::ExS(_) => match label.strip_prefix('s') {
            Some(rest) => format!("ŝ{rest}"),
            None => format!("ŝ{label}"),
        },
        Symbol::ExC(_) => match label.strip_prefix('c') {
            Some(rest) => format!("ĉ{rest}"),
            None => format!("ĉ{label}"),
        },
    }
}

/// Renders a word as space-separated symbols; the empty word renders as "∅".
pub fn format_word(model: &MatchingModel, word: &[Symbol]) -> String {
    if word.is_empty() {
        return "∅".to_string();
    }
    word.iter().map(|&s| format_symbol(model, s)).collect::<Vec<_>>().join(" ")
}

/// Parses a word in the [`format_word`] syntax. Exchanged tokens are matched
/// against both "hat + remainder" and "hat + full label" renderings.
pub fn parse_word(model: &MatchingModel, text: &str) -> Result<Word, ChainError> {
    let text = text.trim();
    if text.is_empty() || text == "∅" {
        return Ok(vec![]);
    }
    let mut word = Vec::new();
    for token in text.split_whitespace() {
        word.push(parse_symbol(model, token)?);
    }
    Ok(word)
}

fn parse_symbol(model: &MatchingModel, token: &str) -> Result<Symbol, ChainError> {
    if let Some(rest) = token.strip_prefix('ŝ') {
        let idx = model
            .server_index(&format!("s{rest}"))
            .or_else(|| model.server_index(rest))
            .ok_or_else(|| ChainError::Parse(token.to_string()))?;
        return Ok(Symbol::ExS(idx));
    }
    if let Some(rest) = token.strip_prefix('ĉ') {
        let idx = model
            .customer_index(&format!("c{rest}"))
            .or_else(|| model.customer_index(rest))
            .ok_or_else(|| ChainError::Parse(token.to_string()))?;
        return Ok(Symbol::ExC(idx));
    }
    if let Some(i) = model.customer_index(token) {
        return Ok(Symbol::C(i));
    }
    if let Some(j) = model.server_index(token) {
        return Ok(Symbol::S(j));
    }
    Err(ChainError::Parse(token.to_string()))
}

/// Renders a state for logs: single-word chains print the word, two-word
/// chains print "first | second", O prints "customers | servers".
pub fn format_state(model: &MatchingModel, state: &ChainState) -> String {
    let type_word = |side: Side, types: &[usize]| -> String {
        if types.is_empty() {
            return "∅".to_string();
        }
        types
            .iter()
            .map(|&t| match side {
                Side::Customer => model.customer_label(t).to_string(),
                Side::Server => model.server_label(t).to_string(),
            })
            .collect::<Vec<_>>()
            .join(" ")
    };
    match state {
        ChainState::Qs(w) => type_word(Side::Customer, w),
        ChainState::Qc(w) => type_word(Side::Server, w),
        ChainState::Zs(w) | ChainState::Zc(w) => format_word(model, w),
        ChainState::O { customers, servers } => format!(
            "{} | {}",
            type_word(Side::Customer, customers),
            type_word(Side::Server, servers)
        ),
        ChainState::D { z, y } => format!("{} | {}", format_word(model, z), format_word(model, y)),
        ChainState::E { y, z } => format!("{} | {}", format_word(model, y), format_word(model, z)),
    }
}

// ---------------------------------------------------------------------------
// Validity
// ---------------------------------------------------------------------------

/// Word over {c, ŝ}: every unmatched customer is incompatible with every
/// later exchanged server.
fn zs_pairs_ok(model: &MatchingModel, word: &[Symbol]) -> bool {
    let mut seen = TypeSubset::empty(Side::Customer);
    for &sym in word {
        match sym {
            Symbol::C(i) => seen.insert(i),
            Symbol::ExS(j) => {
                if !model.customers_of_type(j).intersect(&seen).is_empty() {
                    return false;
                }
            }
            _ => return false,
        }
    }
    true
}

/// Word over {s, ĉ}: every unmatched server is incompatible with every later
/// exchanged customer.
fn zc_pairs_ok(model: &MatchingModel, word: &[Symbol]) -> bool {
    let mut seen = TypeSubset::empty(Side::Server);
    for &sym in word {
        match sym {
            Symbol::S(j) => seen.insert(j),
            Symbol::ExC(i) => {
                if !model.servers_of_type(i).intersect(&seen).is_empty() {
                    return false;
                }
            }
            _ => return false,
        }
    }
    true
}

fn count_kind(word: &[Symbol], pick: fn(Symbol) -> bool) -> usize {
    word.iter().filter(|&&s| pick(s)).count()
}

fn unmatched_customer_set(word: &[Symbol]) -> TypeSubset {
    let mut set = TypeSubset::empty(Side::Customer);
    for &s in word {
        if let Symbol::C(i) = s {
            set.insert(i);
        }
    }
    set
}

fn unmatched_server_set(word: &[Symbol]) -> TypeSubset {
    let mut set = TypeSubset::empty(Side::Server);
    for &s in word {
        if let Symbol::S(j) = s {
            set.insert(j);
        }
    }
    set
}

/// Checks the kind's structural invariants.
pub fn is_valid_state(model: &MatchingModel, state: &ChainState) -> bool {
    match state {
        ChainState::Qs(w) => w.iter().all(|&i| i < model.n_customers()),
        ChainState::Qc(w) => w.iter().all(|&j| j < model.n_servers()),
        ChainState::O { customers, servers } => {
            if customers.len() != servers.len()
                || customers.iter().any(|&i| i >= model.n_customers())
                || servers.iter().any(|&j| j >= model.n_servers())
            {
                return false;
            }
            // Cross-incompatibility depends only on the type sets present,
            // so check it on bitsets; long transient states stay cheap.
            let mut c_types = TypeSubset::empty(Side::Customer);
            for &i in customers {
                c_types.insert(i);
            }
            let mut s_types = TypeSubset::empty(Side::Server);
            for &j in servers {
                s_types.insert(j);
            }
            model.servers_of(&c_types).intersect(&s_types).is_empty()
        }
        ChainState::Zs(w) => {
            w.is_empty()
                || (matches!(w[0], Symbol::C(_))
                    && matches!(w[w.len() - 1], Symbol::ExS(_))
                    && zs_pairs_ok(model, w))
        }
        ChainState::Zc(w) => {
            w.is_empty()
                || (matches!(w[0], Symbol::S(_))
                    && matches!(w[w.len() - 1], Symbol::ExC(_))
                    && zc_pairs_ok(model, w))
        }
        ChainState::D { z, y } => {
            if z.is_empty() || y.is_empty() {
                return z.is_empty() && y.is_empty();
            }
            matches!(z[0], Symbol::C(_))
                && matches!(y[0], Symbol::S(_))
                && zs_pairs_ok(model, z)
                && zc_pairs_ok(model, y)
                && count_kind(z, |s| matches!(s, Symbol::C(_)))
                    == count_kind(y, |s| matches!(s, Symbol::S(_)))
                && model
                    .servers_of(&unmatched_customer_set(z))
                    .intersect(&unmatched_server_set(y))
                    .is_empty()
        }
        ChainState::E { y, z } => {
            if z.is_empty() || y.is_empty() {
                return z.is_empty() && y.is_empty();
            }
            // The forward state is the role-flipped reversal of a backward
            // state; its invariants are exactly the flipped ones: the words
            // end with exchanged items, counts of exchanged items agree, and
            // the exchanged items across the two lines are cross-incompatible.
            let dz = reverse_role_flip(z);
            let dy = reverse_role_flip(y);
            is_valid_state(model, &ChainState::D { z: dz, y: dy })
        }
    }
}

// ---------------------------------------------------------------------------
// Shared scan helpers for the one-line mechanisms (Zs/Zc/Qs/Qc)
// ---------------------------------------------------------------------------

// `server_arrives` selects the orientation: true for Zs/Qs (servers arrive
// and scan customers), false for Zc/Qc.

fn arriving_count(model: &MatchingModel, server_arrives: bool) -> usize {
    if server_arrives {
        model.n_servers()
    } else {
        model.n_customers()
    }
}

fn arriving_prob(model: &MatchingModel, server_arrives: bool, t: usize) -> f64 {
    if server_arrives {
        model.beta(t)
    } else {
        model.alpha(t)
    }
}

fn scanned_count(model: &MatchingModel, server_arrives: bool) -> usize {
    if server_arrives {
        model.n_customers()
    } else {
        model.n_servers()
    }
}

fn scanned_prob(model: &MatchingModel, server_arrives: bool, t: usize) -> f64 {
    if server_arrives {
        model.alpha(t)
    } else {
        model.beta(t)
    }
}

fn scan_edge(model: &MatchingModel, server_arrives: bool, scanned_t: usize, arr_t: usize) -> bool {
    if server_arrives {
        model.is_edge(scanned_t, arr_t)
    } else {
        model.is_edge(arr_t, scanned_t)
    }
}

/// Probability that a fresh item on the scanned line matches the arrival:
/// α_{𝒞(s_j)} when a server arrives, β_{𝒮(c_i)} when a customer arrives.
fn fresh_match_mass(model: &MatchingModel, server_arrives: bool, arr_t: usize) -> f64 {
    if server_arrives {
        model.alpha_mass(&model.customers_of_type(arr_t))
    } else {
        model.beta_mass(&model.servers_of_type(arr_t))
    }
}

fn unmatched_symbol(server_arrives: bool, t: usize) -> Symbol {
    if server_arrives {
        Symbol::C(t)
    } else {
        Symbol::S(t)
    }
}

fn exchanged_symbol(server_arrives: bool, t: usize) -> Symbol {
    if server_arrives {
        Symbol::ExS(t)
    } else {
        Symbol::ExC(t)
    }
}

fn is_unmatched(server_arrives: bool, sym: Symbol) -> bool {
    if server_arrives {
        matches!(sym, Symbol::C(_))
    } else {
        matches!(sym, Symbol::S(_))
    }
}

/// First position holding an unmatched item compatible with the arrival.
fn first_compatible(
    model: &MatchingModel,
    server_arrives: bool,
    word: &[Symbol],
    arr_t: usize,
) -> Option<usize> {
    word.iter().position(|&sym| {
        is_unmatched(server_arrives, sym) && scan_edge(model, server_arrives, sym.type_index(), arr_t)
    })
}

fn trim_leading_exchanged(word: &mut Word, server_arrives: bool) {
    let keep = word.iter().position(|&s| is_unmatched(server_arrives, s));
    match keep {
        Some(k) => {
            word.drain(..k);
        }
        None => word.clear(),
    }
}

// ---------------------------------------------------------------------------
// step
// ---------------------------------------------------------------------------

/// Advances the chain by one step, consuming exactly the innovations the
/// mechanism requires. Returns the new state and the completed matches.
pub fn step<R: InnovationStream + ?Sized>(
    model: &MatchingModel,
    state: &ChainState,
    stream: &mut R,
) -> Result<StepOutcome, ChainError> {
    if !is_valid_state(model, state) {
        return Err(ChainError::InvalidState);
    }
    Ok(match state {
        ChainState::Zs(w) => detail_line_step(model, true, w, stream),
        ChainState::Zc(w) => detail_line_step(model, false, w, stream),
        ChainState::Qs(w) => natural_line_step(model, true, w, stream),
        ChainState::Qc(w) => natural_line_step(model, false, w, stream),
        ChainState::O { customers, servers } => {
            let i = stream.next_customer();
            let j = stream.next_server();
            o_apply(model, customers, servers, i, j)
        }
        ChainState::D { z, y } => {
            let i = stream.next_customer();
            let j = stream.next_server();
            d_apply(model, z, y, i, j)
        }
        ChainState::E { y, z } => e_step(model, y, z, stream),
    })
}

fn detail_line_step<R: InnovationStream + ?Sized>(
    model: &MatchingModel,
    server_arrives: bool,
    word: &[Symbol],
    stream: &mut R,
) -> StepOutcome {
    let arr = if server_arrives { stream.next_server() } else { stream.next_customer() };
    let mut w = word.to_vec();
    let mut matches = Vec::new();
    match first_compatible(model, server_arrives, &w, arr) {
        Some(0) => {
            matches.push(pair_of(server_arrives, w[0].type_index(), arr));
            w.remove(0);
            trim_leading_exchanged(&mut w, server_arrives);
        }
        Some(r) => {
            matches.push(pair_of(server_arrives, w[r].type_index(), arr));
            w[r] = exchanged_symbol(server_arrives, arr);
        }
        None => loop {
            let t = if server_arrives { stream.next_customer() } else { stream.next_server() };
            if scan_edge(model, server_arrives, t, arr) {
                matches.push(pair_of(server_arrives, t, arr));
                w.push(exchanged_symbol(server_arrives, arr));
                trim_leading_exchanged(&mut w, server_arrives);
                break;
            }
            w.push(unmatched_symbol(server_arrives, t));
        },
    }
    let state = if server_arrives { ChainState::Zs(w) } else { ChainState::Zc(w) };
    StepOutcome { state, matches }
}

fn natural_line_step<R: InnovationStream + ?Sized>(
    model: &MatchingModel,
    server_arrives: bool,
    word: &[usize],
    stream: &mut R,
) -> StepOutcome {
    let arr = if server_arrives { stream.next_server() } else { stream.next_customer() };
    let mut w = word.to_vec();
    let mut matches = Vec::new();
    let found = w.iter().position(|&t| scan_edge(model, server_arrives, t, arr));
    match found {
        Some(r) => {
            matches.push(pair_of(server_arrives, w[r], arr));
            w.remove(r);
        }
        None => loop {
            let t = if server_arrives { stream.next_customer() } else { stream.next_server() };
            if scan_edge(model, server_arrives, t, arr) {
                matches.push(pair_of(server_arrives, t, arr));
                break;
            }
            w.push(t);
        },
    }
    let state = if server_arrives { ChainState::Qs(w) } else { ChainState::Qc(w) };
    StepOutcome { state, matches }
}

/// Orders a matched pair as (customer type, server type).
fn pair_of(server_arrives: bool, scanned_t: usize, arr_t: usize) -> (usize, usize) {
    if server_arrives {
        (scanned_t, arr_t)
    } else {
        (arr_t, scanned_t)
    }
}

/// One O step for a drawn pair: both newcomers scan the old lists, then
/// match each other if both failed and are compatible.
fn o_apply(
    model: &MatchingModel,
    customers: &[usize],
    servers: &[usize],
    i: usize,
    j: usize,
) -> StepOutcome {
    let mut cs = customers.to_vec();
    let mut ss = servers.to_vec();
    let mut matches = Vec::new();
    let s_found = cs.iter().position(|&c| model.is_edge(c, j));
    let c_found = ss.iter().position(|&s| model.is_edge(i, s));
    match (c_found, s_found) {
        (Some(rs), Some(rc)) => {
            matches.push((i, ss[rs]));
            matches.push((cs[rc], j));
            ss.remove(rs);
            cs.remove(rc);
        }
        (Some(rs), None) => {
            matches.push((i, ss[rs]));
            ss.remove(rs);
            ss.push(j);
        }
        (None, Some(rc)) => {
            matches.push((cs[rc], j));
            cs.remove(rc);
            cs.push(i);
        }
        (None, None) => {
            if model.is_edge(i, j) {
                matches.push((i, j));
            } else {
                cs.push(i);
                ss.push(j);
            }
        }
    }
    StepOutcome { state: ChainState::O { customers: cs, servers: ss }, matches }
}

/// One D step for a drawn pair. The new server scans the old z word, the new
/// customer scans the old y word; newcomers match each other only if both
/// scans fail and they are compatible. Matched positions are exchanged, the
/// newcomers are appended, and the leading exchanged items are trimmed.
fn d_apply(
    model: &MatchingModel,
    z: &[Symbol],
    y: &[Symbol],
    i: usize,
    j: usize,
) -> StepOutcome {
    let mut zw = z.to_vec();
    let mut yw = y.to_vec();
    let mut matches = Vec::new();
    let s_target = first_compatible(model, true, &zw, j);
    let c_target = first_compatible(model, false, &yw, i);
    match (s_target, c_target) {
        (Some(rz), Some(ry)) => {
            let c_old = zw[rz].type_index();
            let s_old = yw[ry].type_index();
            matches.push((c_old, j));
            matches.push((i, s_old));
            zw[rz] = Symbol::ExS(j);
            yw[ry] = Symbol::ExC(i);
            zw.push(Symbol::ExS(s_old));
            yw.push(Symbol::ExC(c_old));
        }
        (Some(rz), None) => {
            let c_old = zw[rz].type_index();
            matches.push((c_old, j));
            zw[rz] = Symbol::ExS(j);
            zw.push(Symbol::C(i));
            yw.push(Symbol::ExC(c_old));
        }
        (None, Some(ry)) => {
            let s_old = yw[ry].type_index();
            matches.push((i, s_old));
            yw[ry] = Symbol::ExC(i);
            yw.push(Symbol::S(j));
            zw.push(Symbol::ExS(s_old));
        }
        (None, None) => {
            if model.is_edge(i, j) {
                matches.push((i, j));
                zw.push(Symbol::ExS(j));
                yw.push(Symbol::ExC(i));
            } else {
                zw.push(Symbol::C(i));
                yw.push(Symbol::S(j));
            }
        }
    }
    trim_leading_exchanged(&mut zw, true);
    trim_leading_exchanged(&mut yw, false);
    debug_assert_eq!(zw.is_empty(), yw.is_empty());
    StepOutcome { state: ChainState::D { z: zw, y: yw }, matches }
}

fn e_step<R: InnovationStream + ?Sized>(
    model: &MatchingModel,
    y: &[Symbol],
    z: &[Symbol],
    stream: &mut R,
) -> StepOutcome {
    let mut matches = Vec::new();
    if y.is_empty() {
        let i = stream.next_customer();
        let j = stream.next_server();
        if model.is_edge(i, j) {
            matches.push((i, j));
            return StepOutcome { state: ChainState::E { y: vec![], z: vec![] }, matches };
        }
        let (yw, z_match) = fresh_seek_customers(model, j, stream);
        let (zw, y_match) = fresh_seek_servers(model, i, stream);
        matches.push((i, y_match));
        matches.push((z_match, j));
        return StepOutcome { state: ChainState::E { y: yw, z: zw }, matches };
    }

    let mut yw = y.to_vec();
    let mut zw = z.to_vec();
    let y_head = yw[0];
    let z_head = zw[0];

    // Both heads unmatched and compatible: they take each other (the head
    // positions are the earliest unmatched slots on both lines).
    if let (Symbol::C(i), Symbol::S(j)) = (y_head, z_head) {
        if model.is_edge(i, j) {
            matches.push((i, j));
            yw.remove(0);
            zw.remove(0);
            debug_assert_eq!(yw.is_empty(), zw.is_empty());
            return StepOutcome { state: ChainState::E { y: yw, z: zw }, matches };
        }
    }

    // Unmatched customer head seeks a server: first compatible unmatched
    // server later in z, otherwise a fresh run is appended to z.
    if let Symbol::C(i) = y_head {
        match zw[1..].iter().position(|&s| {
            matches!(s, Symbol::S(_)) && model.is_edge(i, s.type_index())
        }) {
            Some(r0) => {
                let r = r0 + 1;
                matches.push((i, zw[r].type_index()));
                zw[r] = Symbol::ExC(i);
            }
            None => {
                let (run, s_match) = fresh_seek_servers(model, i, stream);
                matches.push((i, s_match));
                zw.extend(run);
            }
        }
    }
    // Unmatched server head seeks a customer symmetrically.
    if let Symbol::S(j) = z_head {
        match yw[1..].iter().position(|&s| {
            matches!(s, Symbol::C(_)) && model.is_edge(s.type_index(), j)
        }) {
            Some(r0) => {
                let r = r0 + 1;
                matches.push((yw[r].type_index(), j));
                yw[r] = Symbol::ExS(j);
            }
            None => {
                let (run, c_match) = fresh_seek_customers(model, j, stream);
                matches.push((c_match, j));
                yw.extend(run);
            }
        }
    }
    yw.remove(0);
    zw.remove(0);
    debug_assert_eq!(yw.is_empty(), zw.is_empty());
    StepOutcome { state: ChainState::E { y: yw, z: zw }, matches }
}

/// Draws customers until one compatible with server j appears; returns the
/// run of skipped customers terminated by ŝ_j, plus the matched type.
fn fresh_seek_customers<R: InnovationStream + ?Sized>(
    model: &MatchingModel,
    j: usize,
    stream: &mut R,
) -> (Word, usize) {
    let mut run = Vec::new();
    loop {
        let t = stream.next_customer();
        if model.is_edge(t, j) {
            run.push(Symbol::ExS(j));
            return (run, t);
        }
        run.push(Symbol::C(t));
    }
}

/// Draws servers until one compatible with customer i appears; returns the
/// run of skipped servers terminated by ĉ_i, plus the matched type.
fn fresh_seek_servers<R: InnovationStream + ?Sized>(
    model: &MatchingModel,
    i: usize,
    stream: &mut R,
) -> (Word, usize) {
    let mut run = Vec::new();
    loop {
        let t = stream.next_server();
        if model.is_edge(i, t) {
            run.push(Symbol::ExC(i));
            return (run, t);
        }
        run.push(Symbol::S(t));
    }
}

// ---------------------------------------------------------------------------
// successors
// ---------------------------------------------------------------------------

/// Enumerates all successors whose skip runs append at most `max_appended`
/// items (run items only; structural terminator symbols are not counted) with
/// exact probabilities, plus the closed-form mass of the truncated runs.
pub fn successors(
    model: &MatchingModel,
    state: &ChainState,
    max_appended: usize,
) -> Result<SuccessorSet, ChainError> {
    if !is_valid_state(model, state) {
        return Err(ChainError::InvalidState);
    }
    let mut acc: HashMap<ChainState, f64> = HashMap::new();
    let mut tail = 0.0;
    match state {
        ChainState::Zs(w) => {
            detail_line_successors(model, true, w, max_appended, &mut acc, &mut tail)
        }
        ChainState::Zc(w) => {
            detail_line_successors(model, false, w, max_appended, &mut acc, &mut tail)
        }
        ChainState::Qs(w) => {
            natural_line_successors(model, true, w, max_appended, &mut acc, &mut tail)
        }
        ChainState::Qc(w) => {
            natural_line_successors(model, false, w, max_appended, &mut acc, &mut tail)
        }
        ChainState::O { customers, servers } => {
            for i in 0..model.n_customers() {
                for j in 0..model.n_servers() {
                    let out = o_apply(model, customers, servers, i, j);
                    *acc.entry(out.state).or_insert(0.0) += model.alpha(i) * model.beta(j);
                }
            }
        }
        ChainState::D { z, y } => {
            for i in 0..model.n_customers() {
                for j in 0..model.n_servers() {
                    let out = d_apply(model, z, y, i, j);
                    *acc.entry(out.state).or_insert(0.0) += model.alpha(i) * model.beta(j);
                }
            }
        }
        ChainState::E { y, z } => e_successors(model, y, z, max_appended, &mut acc, &mut tail),
    }
    let mut transitions: Vec<(ChainState, f64)> = acc.into_iter().collect();
    transitions.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(SuccessorSet { transitions, tail_mass: tail })
}

/// Iterates type runs over the scanned side that avoid the arrival's
/// neighborhood, calling `emit(run, run probability)` for each length ≤ cap.
fn for_each_skip_run<F: FnMut(&[usize], f64)>(
    model: &MatchingModel,
    server_arrives: bool,
    arr_t: usize,
    cap: usize,
    mut emit: F,
) {
    let incompat: Vec<usize> = (0..scanned_count(model, server_arrives))
        .filter(|&t| !scan_edge(model, server_arrives, t, arr_t))
        .collect();
    let mut run: Vec<usize> = Vec::new();
    // Depth-first over runs of length 0..=cap.
    fn rec<F: FnMut(&[usize], f64)>(
        model: &MatchingModel,
        server_arrives: bool,
        incompat: &[usize],
        cap: usize,
        run: &mut Vec<usize>,
        p: f64,
        emit: &mut F,
    ) {
        emit(run, p);
        if run.len() == cap {
            return;
        }
        for &t in incompat {
            run.push(t);
            let pt = p * scanned_prob(model, server_arrives, t);
            rec(model, server_arrives, incompat, cap, run, pt, emit);
            run.pop();
        }
    }
    rec(model, server_arrives, &incompat, cap, &mut run, 1.0, &mut emit);
}

fn detail_line_successors(
    model: &MatchingModel,
    server_arrives: bool,
    word: &[Symbol],
    max_appended: usize,
    acc: &mut HashMap<ChainState, f64>,
    tail: &mut f64,
) {
    let wrap = |w: Word| if server_arrives { ChainState::Zs(w) } else { ChainState::Zc(w) };
    for arr in 0..arriving_count(model, server_arrives) {
        let p_arr = arriving_prob(model, server_arrives, arr);
        match first_compatible(model, server_arrives, word, arr) {
            Some(0) => {
                let mut w = word.to_vec();
                w.remove(0);
                trim_leading_exchanged(&mut w, server_arrives);
                *acc.entry(wrap(w)).or_insert(0.0) += p_arr;
            }
            Some(r) => {
                let mut w = word.to_vec();
                w[r] = exchanged_symbol(server_arrives, arr);
                *acc.entry(wrap(w)).or_insert(0.0) += p_arr;
            }
            None => {
                let match_mass = fresh_match_mass(model, server_arrives, arr);
                for_each_skip_run(model, server_arrives, arr, max_appended, |run, p_run| {
                    let mut w = word.to_vec();
                    w.extend(run.iter().map(|&t| unmatched_symbol(server_arrives, t)));
                    w.push(exchanged_symbol(server_arrives, arr));
                    trim_leading_exchanged(&mut w, server_arrives);
                    *acc.entry(wrap(w)).or_insert(0.0) += p_arr * p_run * match_mass;
                });
                let skip_mass = 1.0 - match_mass;
                *tail += p_arr * skip_mass.powi(max_appended as i32 + 1);
            }
        }
    }
}

fn natural_line_successors(
    model: &MatchingModel,
    server_arrives: bool,
    word: &[usize],
    max_appended: usize,
    acc: &mut HashMap<ChainState, f64>,
    tail: &mut f64,
) {
    let wrap = |w: Vec<usize>| if server_arrives { ChainState::Qs(w) } else { ChainState::Qc(w) };
    for arr in 0..arriving_count(model, server_arrives) {
        let p_arr = arriving_prob(model, server_arrives, arr);
        match word.iter().position(|&t| scan_edge(model, server_arrives, t, arr)) {
            Some(r) => {
                let mut w = word.to_vec();
                w.remove(r);
                *acc.entry(wrap(w)).or_insert(0.0) += p_arr;
            }
            None => {
                let match_mass = fresh_match_mass(model, server_arrives, arr);
                for_each_skip_run(model, server_arrives, arr, max_appended, |run, p_run| {
                    let mut w = word.to_vec();
                    w.extend_from_slice(run);
                    *acc.entry(wrap(w)).or_insert(0.0) += p_arr * p_run * match_mass;
                });
                let skip_mass = 1.0 - match_mass;
                *tail += p_arr * skip_mass.powi(max_appended as i32 + 1);
            }
        }
    }
}

fn e_successors(
    model: &MatchingModel,
    y: &[Symbol],
    z: &[Symbol],
    max_appended: usize,
    acc: &mut HashMap<ChainState, f64>,
    tail: &mut f64,
) {
    if y.is_empty() {
        let edge_mass: f64 = model
            .edges()
            .iter()
            .map(|&(i, j)| model.alpha(i) * model.beta(j))
            .sum();
        *acc.entry(ChainState::E { y: vec![], z: vec![] }).or_insert(0.0) += edge_mass;
        for i in 0..model.n_customers() {
            for j in 0..model.n_servers() {
                if model.is_edge(i, j) {
                    continue;
                }
                let p_pair = model.alpha(i) * model.beta(j);
                // Two independent fresh runs (customers skipped by s_j on the
                // customer line, servers skipped by c_i on the server line),
                // truncated jointly at max_appended items.
                let a_mass = fresh_match_mass(model, true, j);
                let b_mass = fresh_match_mass(model, false, i);
                for_each_skip_run(model, true, j, max_appended, |c_run, p_c| {
                    let budget = max_appended - c_run.len();
                    let mut yw: Word = c_run.iter().map(|&t| Symbol::C(t)).collect();
                    yw.push(Symbol::ExS(j));
                    for_each_skip_run(model, false, i, budget, |s_run, p_s| {
                        let mut zw: Word = s_run.iter().map(|&t| Symbol::S(t)).collect();
                        zw.push(Symbol::ExC(i));
                        let p = p_pair * p_c * a_mass * p_s * b_mass;
                        *acc.entry(ChainState::E { y: yw.clone(), z: zw }).or_insert(0.0) += p;
                    });
                });
                *tail += p_pair * joint_run_tail(1.0 - a_mass, 1.0 - b_mass, max_appended);
            }
        }
        return;
    }

    let y_head = y[0];
    let z_head = z[0];
    let strip =
        |yw: &mut Word, zw: &mut Word| {
            yw.remove(0);
            zw.remove(0);
        };

    if let (Symbol::C(i), Symbol::S(j)) = (y_head, z_head) {
        if model.is_edge(i, j) {
            let mut yw = y.to_vec();
            let mut zw = z.to_vec();
            strip(&mut yw, &mut zw);
            *acc.entry(ChainState::E { y: yw, z: zw }).or_insert(0.0) += 1.0;
            return;
        }
    }

    // Each unmatched head resolves independently: a deterministic in-window
    // exchange, or a fresh run family on its counterpart line.
    enum Branch {
        None,
        InWindow(usize),
        Fresh,
    }
    let c_branch = match y_head {
        Symbol::C(i) => match z[1..]
            .iter()
            .position(|&s| matches!(s, Symbol::S(_)) && model.is_edge(i, s.type_index()))
        {
            Some(r0) => Branch::InWindow(r0 + 1),
            None => Branch::Fresh,
        },
        _ => Branch::None,
    };
    let s_branch = match z_head {
        Symbol::S(j) => match y[1..]
            .iter()
            .position(|&s| matches!(s, Symbol::C(_)) && model.is_edge(s.type_index(), j))
        {
            Some(r0) => Branch::InWindow(r0 + 1),
            None => Branch::Fresh,
        },
        _ => Branch::None,
    };

    // Build the run families per branch as (appended word, probability) lists.
    let c_runs: Vec<(Word, f64)> = match c_branch {
        Branch::Fresh => {
            let Symbol::C(i) = y_head else { unreachable!() };
            let mass = fresh_match_mass(model, false, i);
            let mut runs = Vec::new();
            for_each_skip_run(model, false, i, max_appended, |run, p| {
                let mut w: Word = run.iter().map(|&t| Symbol::S(t)).collect();
                w.push(Symbol::ExC(i));
                runs.push((w, p * mass));
            });
            runs
        }
        _ => vec![(vec![], 1.0)],
    };
    let s_runs: Vec<(Word, f64)> = match s_branch {
        Branch::Fresh => {
            let Symbol::S(j) = z_head else { unreachable!() };
            let mass = fresh_match_mass(model, true, j);
            let mut runs = Vec::new();
            for_each_skip_run(model, true, j, max_appended, |run, p| {
                let mut w: Word = run.iter().map(|&t| Symbol::C(t)).collect();
                w.push(Symbol::ExS(j));
                runs.push((w, p * mass));
            });
            runs
        }
        _ => vec![(vec![], 1.0)],
    };

    for (z_app, pc) in &c_runs {
        for (y_app, ps) in &s_runs {
            // Joint truncation: total appended run items within the cap.
            let run_items = z_app.len().saturating_sub(1) + y_app.len().saturating_sub(1);
            if (matches!(c_branch, Branch::Fresh) || matches!(s_branch, Branch::Fresh))
                && run_items > max_appended
            {
                continue;
            }
            let mut yw = y.to_vec();
            let mut zw = z.to_vec();
            if let Branch::InWindow(r) = c_branch {
                let Symbol::C(i) = y_head else { unreachable!() };
                zw[r] = Symbol::ExC(i);
            }
            if let Branch::InWindow(r) = s_branch {
                let Symbol::S(j) = z_head else { unreachable!() };
                yw[r] = Symbol::ExS(j);
            }
            zw.extend(z_app.iter().copied());
            yw.extend(y_app.iter().copied());
            strip(&mut yw, &mut zw);
            *acc.entry(ChainState::E { y: yw, z: zw }).or_insert(0.0) += pc * ps;
        }
    }

    match (&c_branch, &s_branch) {
        (Branch::Fresh, Branch::Fresh) => {
            let Symbol::C(i) = y_head else { unreachable!() };
            let Symbol::S(j) = z_head else { unreachable!() };
            let a = 1.0 - fresh_match_mass(model, false, i);
            let b = 1.0 - fresh_match_mass(model, true, j);
            *tail += joint_run_tail(a, b, max_appended);
        }
        (Branch::Fresh, _) => {
            let Symbol::C(i) = y_head else { unreachable!() };
            let a = 1.0 - fresh_match_mass(model, false, i);
            *tail += a.powi(max_appended as i32 + 1);
        }
        (_, Branch::Fresh) => {
            let Symbol::S(j) = z_head else { unreachable!() };
            let b = 1.0 - fresh_match_mass(model, true, j);
            *tail += b.powi(max_appended as i32 + 1);
        }
        _ => {}
    }
}

/// Mass of two independent geometric skip runs whose total length exceeds
/// the cap: 1 − Σ_{r1+r2 ≤ cap} a^r1 (1−a) b^r2 (1−b).
fn joint_run_tail(a: f64, b: f64, cap: usize) -> f64 {
    let mut covered = 0.0;
    for r1 in 0..=cap {
        let p1 = a.powi(r1 as i32) * (1.0 - a);
        let within = 1.0 - b.powi((cap - r1) as i32 + 1);
        covered += p1 * within;
    }
    1.0 - covered
}

/// Probability of the transition `from → to`, summed over all enumerated
/// successors equal to `to`. Runs longer than `max_appended` are not seen.
pub fn transition_probability(
    model: &MatchingModel,
    from: &ChainState,
    to: &ChainState,
    max_appended: usize,
) -> Result<f64, ChainError> {
    // Skip-run items survive verbatim in the successor, so any path reaching
    // `to` has at most to.len() + 2 appended items; clamping the enumeration
    // budget to that keeps the lookup exact while avoiding a deep DFS.
    let cap = max_appended.min(to.len() + 2);
    let succ = successors(model, from, cap)?;
    Ok(succ
        .transitions
        .iter()
        .find(|(s, _)| s == to)
        .map(|&(_, p)| p)
        .unwrap_or(0.0))
}

// ---------------------------------------------------------------------------
// Bijection between Zs and D states
// ---------------------------------------------------------------------------

/// Splits a Zs word into the corresponding D state. The split point L is the
/// unique index at which the number of unmatched customers in the prefix
/// equals the number of exchanged servers in the suffix (the counting rule);
/// the suffix is reversed and role-flipped onto the server line.
pub fn zs_d_bijection(model: &MatchingModel, state: &ChainState) -> Result<ChainState, ChainError> {
    let ChainState::Zs(w) = state else {
        return Err(ChainError::WrongKind);
    };
    if !is_valid_state(model, state) {
        return Err(ChainError::InvalidState);
    }
    if w.is_empty() {
        return Ok(ChainState::D { z: vec![], y: vec![] });
    }
    // f(l) = #customers in w[..l] − #servers in w[l..] increases by exactly 1
    // per position, f(0) < 0 and f(len) > 0, so it has a unique zero.
    let total_servers = count_kind(w, |s| matches!(s, Symbol::ExS(_))) as i64;
    let mut f = -total_servers;
    let mut split = None;
    for (idx, &sym) in w.iter().enumerate() {
        if f == 0 {
            split = Some(idx);
            break;
        }
        f += 1;
        debug_assert!(matches!(sym, Symbol::C(_) | Symbol::ExS(_)));
    }
    if f == 0 && split.is_none() {
        split = Some(w.len());
    }
    let l = split.ok_or(ChainError::InvalidState)?;
    let z = w[..l].to_vec();
    let y = reverse_role_flip(&w[l..]);
    let d = ChainState::D { z, y };
    debug_assert!(is_valid_state(model, &d));
    Ok(d)
}

/// Inverse of [`zs_d_bijection`]: concatenates z with the role-flipped
/// reversal of y.
pub fn d_zs_bijection(model: &MatchingModel, state: &ChainState) -> Result<ChainState, ChainError> {
    let ChainState::D { z, y } = state else {
        return Err(ChainError::WrongKind);
    };
    if !is_valid_state(model, state) {
        return Err(ChainError::InvalidState);
    }
    let mut w = z.clone();
    w.extend(reverse_role_flip(y));
    let zs = ChainState::Zs(w);
    debug_assert!(is_valid_state(model, &zs));
    Ok(zs)
}

// ---------------------------------------------------------------------------
// Augmented state and marginal projections
// ---------------------------------------------------------------------------

/// The augmented rewriting of an extended server-by-server word: the
/// permutation of server types by last occurrence, the between-landmark
/// words, and the optional trailing customer run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AugmentedState {
    /// S₁..S_J: server types ordered by last occurrence in the word.
    pub permutation: Vec<usize>,
    /// w₁..w_{J−1}: symbols strictly between consecutive landmarks.
    pub words: Vec<Word>,
    /// Customers after the last landmark (nonempty only for the o-form).
    pub tail: Vec<usize>,
}

impl AugmentedState {
    /// Reassembles the underlying word.
    pub fn to_word(&self) -> Word {
        let mut w = Vec::new();
        for (l, &s) in self.permutation.iter().enumerate() {
            w.push(Symbol::ExS(s));
            if l + 1 < self.permutation.len() {
                w.extend(self.words[l].iter().copied());
            }
        }
        w.extend(self.tail.iter().map(|&t| Symbol::C(t)));
        w
    }

    /// (n_ℓ, m_ℓ): unmatched customers and exchanged servers per word.
    pub fn counts(&self) -> Vec<(usize, usize)> {
        self.words
            .iter()
            .map(|w| {
                let n = count_kind(w, |s| matches!(s, Symbol::C(_)));
                let m = count_kind(w, |s| matches!(s, Symbol::ExS(_)));
                (n, m)
            })
            .collect()
    }
}

/// Rewrites an extended word (a Zs word prefixed with enough exchanged
/// servers that every server type occurs, optionally carrying trailing
/// customers) into the augmented form. Errors when a server type is missing,
/// when the word does not begin at the first landmark, or when a customer
/// sits outside its admissible set.
pub fn to_augmented(model: &MatchingModel, word: &[Symbol]) -> Result<AugmentedState, ChainError> {
    let n_servers = model.n_servers();
    let last_server = word
        .iter()
        .rposition(|s| matches!(s, Symbol::ExS(_)))
        .ok_or_else(|| ChainError::NotAugmented("no exchanged server present".into()))?;
    let mut tail = Vec::with_capacity(word.len() - last_server - 1);
    for &sym in &word[last_server + 1..] {
        match sym {
            Symbol::C(i) => tail.push(i),
            _ => return Err(ChainError::NotAugmented("trailing segment must be customers".into())),
        }
    }
    let core = &word[..=last_server];

    // Last occurrence of each server type, scanned right to left.
    let mut landmark_pos = vec![None; n_servers];
    let mut order_rev = Vec::new();
    for (idx, &sym) in core.iter().enumerate().rev() {
        if let Symbol::ExS(j) = sym {
            if landmark_pos[j].is_none() {
                landmark_pos[j] = Some(idx);
                order_rev.push(j);
            }
        }
    }
    if order_rev.len() != n_servers {
        return Err(ChainError::NotAugmented("some server type never occurs".into()));
    }
    let permutation: Vec<usize> = order_rev.into_iter().rev().collect();
    let positions: Vec<usize> =
        permutation.iter().map(|&j| landmark_pos[j].unwrap()).collect();
    if positions[0] != 0 {
        return Err(ChainError::NotAugmented(
            "word must begin at the first landmark".into(),
        ));
    }

    let mut words = Vec::with_capacity(n_servers.saturating_sub(1));
    let mut allowed = TypeSubset::empty(Side::Server);
    for l in 0..n_servers.saturating_sub(1) {
        allowed.insert(permutation[l]);
        let seg = &core[positions[l] + 1..positions[l + 1]];
        let admissible = model.uniquely_served(&allowed);
        for &sym in seg {
            match sym {
                Symbol::C(i) => {
                    if !admissible.contains(i) {
                        return Err(ChainError::NotAugmented(format!(
                            "customer {} outside its admissible set",
                            model.customer_label(i)
                        )));
                    }
                }
                Symbol::ExS(_) => {}
                _ => return Err(ChainError::NotAugmented("mixed-side symbol".into())),
            }
        }
        words.push(seg.to_vec());
    }
    Ok(AugmentedState { permutation, words, tail })
}

/// The marginal processes derived from the augmented state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MarginalKind {
    W,
    X,
    Y,
    U,
    V,
    R,
}

/// A value of one marginal process.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum MarginalValue {
    /// 0/1 words: false for a customer, true for an exchanged server.
    W { permutation: Vec<usize>, words: Vec<Vec<bool>> },
    /// n_ℓ: customers between landmarks.
    X { permutation: Vec<usize>, counts: Vec<usize> },
    /// m_ℓ: exchanged servers between landmarks.
    Y { permutation: Vec<usize>, counts: Vec<usize> },
    /// (n_ℓ, m_ℓ) jointly.
    U { permutation: Vec<usize>, counts: Vec<(usize, usize)> },
    /// r_ℓ = n_ℓ + m_ℓ.
    V { permutation: Vec<usize>, counts: Vec<usize> },
    /// The permutation alone.
    R { permutation: Vec<usize> },
}

/// Projects an augmented state onto one marginal process.
pub fn project(kind: MarginalKind, aug: &AugmentedState) -> MarginalValue {
    let permutation = aug.permutation.clone();
    let counts = aug.counts();
    match kind {
        MarginalKind::W => MarginalValue::W {
            permutation,
            words: aug
                .words
                .iter()
                .map(|w| w.iter().map(|s| matches!(s, Symbol::ExS(_))).collect())
                .collect(),
        },
        MarginalKind::X => {
            MarginalValue::X { permutation, counts: counts.iter().map(|&(n, _)| n).collect() }
        }
        MarginalKind::Y => {
            MarginalValue::Y { permutation, counts: counts.iter().map(|&(_, m)| m).collect() }
        }
        MarginalKind::U => MarginalValue::U { permutation, counts },
        MarginalKind::V => {
            MarginalValue::V { permutation, counts: counts.iter().map(|&(n, m)| n + m).collect() }
        }
        MarginalKind::R => MarginalValue::R { permutation },
    }
}

// ---------------------------------------------------------------------------
// Enumeration
// ---------------------------------------------------------------------------

/// Enumerates all valid states of the kind with word length ≤ `max_len`
/// (each stored word separately for the two-line kinds), without duplicates.
pub fn enumerate_states(
    model: &MatchingModel,
    kind: ChainKind,
    max_len: usize,
) -> Result<Vec<ChainState>, ChainError> {
    if max_len > MAX_ENUM_LEN {
        return Err(ChainError::CapExceeded(max_len));
    }
    let states = match kind {
        ChainKind::Qs => all_type_words(model.n_customers(), max_len)
            .into_iter()
            .map(ChainState::Qs)
            .collect(),
        ChainKind::Qc => all_type_words(model.n_servers(), max_len)
            .into_iter()
            .map(ChainState::Qc)
            .collect(),
        ChainKind::O => enumerate_o(model, max_len),
        ChainKind::Zs => enumerate_zs_words(model, max_len, true)
            .into_iter()
            .map(ChainState::Zs)
            .collect(),
        ChainKind::Zc => enumerate_zc_words(model, max_len, true)
            .into_iter()
            .map(ChainState::Zc)
            .collect(),
        ChainKind::D => enumerate_d(model, max_len),
        ChainKind::E => enumerate_d(model, max_len)
            .into_iter()
            .map(|s| {
                let ChainState::D { z, y } = s else { unreachable!() };
                ChainState::E { y: reverse_role_flip(&y), z: reverse_role_flip(&z) }
            })
            .collect(),
    };
    Ok(states)
}

fn all_type_words(n_types: usize, max_len: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    let mut frontier: Vec<Vec<usize>> = vec![vec![]];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for w in &frontier {
            for t in 0..n_types {
                let mut w2 = w.clone();
                w2.push(t);
                next.push(w2);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

fn enumerate_o(model: &MatchingModel, max_len: usize) -> Vec<ChainState> {
    let mut out = Vec::new();
    for len in 0..=max_len {
        let c_words: Vec<Vec<usize>> = words_of_length(model.n_customers(), len);
        let s_words: Vec<Vec<usize>> = words_of_length(model.n_servers(), len);
        for cw in &c_words {
            let smask = cw
                .iter()
                .fold(TypeSubset::empty(Side::Server), |acc, &i| {
                    acc.union(&model.servers_of_type(i))
                });
            for sw in &s_words {
                if sw.iter().all(|&j| !smask.contains(j)) {
                    out.push(ChainState::O { customers: cw.clone(), servers: sw.clone() });
                }
            }
        }
    }
    out
}

fn words_of_length(n_types: usize, len: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = vec![vec![]];
    for _ in 0..len {
        let mut next = Vec::new();
        for w in &out {
            for t in 0..n_types {
                let mut w2 = w.clone();
                w2.push(t);
                next.push(w2);
            }
        }
        out = next;
    }
    out
}

/// Valid Zs-format words of length ≤ max_len. With `complete` the words must
/// end with an exchanged server (chain states); without it any tail is
/// allowed (D-state customer lines).
fn enumerate_zs_words(model: &MatchingModel, max_len: usize, complete: bool) -> Vec<Word> {
    let mut out = vec![vec![]];
    let mut stack: Vec<(Word, TypeSubset)> = vec![(vec![], TypeSubset::empty(Side::Customer))];
    while let Some((word, cmask)) = stack.pop() {
        if word.len() == max_len {
            continue;
        }
        for i in 0..model.n_customers() {
            let mut w = word.clone();
            w.push(Symbol::C(i));
            let mut m = cmask;
            m.insert(i);
            if !complete {
                out.push(w.clone());
            }
            stack.push((w, m));
        }
        if !word.is_empty() {
            for j in 0..model.n_servers() {
                if model.customers_of_type(j).intersect(&cmask).is_empty() {
                    let mut w = word.clone();
                    w.push(Symbol::ExS(j));
                    out.push(w.clone());
                    stack.push((w, cmask));
                }
            }
        }
    }
    if !complete {
        // Words pushed on both branches: dedupe while keeping order stable.
        out.sort();
        out.dedup();
    }
    out
}

/// Valid Zc-format words, the mirror of [`enumerate_zs_words`].
fn enumerate_zc_words(model: &MatchingModel, max_len: usize, complete: bool) -> Vec<Word> {
    let mut out = vec![vec![]];
    let mut stack: Vec<(Word, TypeSubset)> = vec![(vec![], TypeSubset::empty(Side::Server))];
    while let Some((word, smask)) = stack.pop() {
        if word.len() == max_len {
            continue;
        }
        for j in 0..model.n_servers() {
            let mut w = word.clone();
            w.push(Symbol::S(j));
            let mut m = smask;
            m.insert(j);
            if !complete {
                out.push(w.clone());
            }
            stack.push((w, m));
        }
        if !word.is_empty() {
            for i in 0..model.n_customers() {
                if model.servers_of_type(i).intersect(&smask).is_empty() {
                    let mut w = word.clone();
                    w.push(Symbol::ExC(i));
                    out.push(w.clone());
                    stack.push((w, smask));
                }
            }
        }
    }
    if !complete {
        out.sort();
        out.dedup();
    }
    out
}

fn enumerate_d(model: &MatchingModel, max_len: usize) -> Vec<ChainState> {
    let z_words: Vec<Word> = enumerate_zs_words(model, max_len, false)
        .into_iter()
        .filter(|w| !w.is_empty() && matches!(w[0], Symbol::C(_)))
        .collect();
    let y_words: Vec<Word> = enumerate_zc_words(model, max_len, false)
        .into_iter()
        .filter(|w| !w.is_empty() && matches!(w[0], Symbol::S(_)))
        .collect();
    let mut out = vec![ChainState::D { z: vec![], y: vec![] }];
    for z in &z_words {
        let n_c = count_kind(z, |s| matches!(s, Symbol::C(_)));
        let forbidden = model.servers_of(&unmatched_customer_set(z));
        for y in &y_words {
            if count_kind(y, |s| matches!(s, Symbol::S(_))) != n_c {
                continue;
            }
            if unmatched_server_set(y).intersect(&forbidden).is_empty() {
                out.push(ChainState::D { z: z.clone(), y: y.clone() });
            }
        }
    }
    out
}
