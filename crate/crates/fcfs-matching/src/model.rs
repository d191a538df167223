//! Model description and validation: type sets, compatibility graph,
//! neighbor-set operators and the complete resource pooling check.

use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use thiserror::Error;

/// Hard cap on types per side; subsets are bitmasks over type indices.
pub const MAX_TYPES: usize = 64;

/// Tolerance for each side's probabilities summing to 1.
pub const PROB_SUM_TOL: f64 = 1e-12;

/// Which side of the bipartite graph a type or subset lives on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Customer,
    Server,
}

impl Side {
    /// The opposite side.
    pub fn other(self) -> Side {
        match self {
            Side::Customer => Side::Server,
            Side::Server => Side::Customer,
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Side::Customer => write!(f, "customer"),
            Side::Server => write!(f, "server"),
        }
    }
}

/// A subset of type indices on one side, stored as a bitmask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TypeSubset {
    side: Side,
    mask: u64,
}

impl TypeSubset {
    /// The empty subset on the given side.
    pub fn empty(side: Side) -> Self {
        TypeSubset { side, mask: 0 }
    }

    /// Subset from a raw bitmask. Callers must keep bits below the side's type count.
    pub fn from_mask(side: Side, mask: u64) -> Self {
        TypeSubset { side, mask }
    }

    /// Subset containing the listed type indices.
    pub fn from_indices(side: Side, indices: &[usize]) -> Self {
        let mut mask = 0u64;
        for &i in indices {
            assert!(i < MAX_TYPES, "type index {i} out of range");
            mask |= 1 << i;
        }
        TypeSubset { side, mask }
    }

    pub fn side(&self) -> Side {
        self.side
    }

    pub fn mask(&self) -> u64 {
        self.mask
    }

    pub fn is_empty(&self) -> bool {
        self.mask == 0
    }

    pub fn len(&self) -> usize {
        self.mask.count_ones() as usize
    }

    pub fn contains(&self, index: usize) -> bool {
        index < MAX_TYPES && self.mask & (1 << index) != 0
    }

    /// Iterates member indices in increasing order.
    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        let mask = self.mask;
        (0..MAX_TYPES).filter(move |i| mask & (1 << i) != 0)
    }

    pub fn insert(&mut self, index: usize) {
        assert!(index < MAX_TYPES, "type index {index} out of range");
        self.mask |= 1 << index;
    }

    pub fn union(&self, other: &TypeSubset) -> TypeSubset {
        assert_eq!(self.side, other.side, "subset sides differ");
        TypeSubset { side: self.side, mask: self.mask | other.mask }
    }

    pub fn intersect(&self, other: &TypeSubset) -> TypeSubset {
        assert_eq!(self.side, other.side, "subset sides differ");
        TypeSubset { side: self.side, mask: self.mask & other.mask }
    }

    pub fn without(&self, other: &TypeSubset) -> TypeSubset {
        assert_eq!(self.side, other.side, "subset sides differ");
        TypeSubset { side: self.side, mask: self.mask & !other.mask }
    }

    pub fn is_subset_of(&self, other: &TypeSubset) -> bool {
        assert_eq!(self.side, other.side, "subset sides differ");
        self.mask & !other.mask == 0
    }
}

/// One declared type in a raw model file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawType {
    pub name: String,
    pub prob: f64,
}

/// Raw model description as read from JSON; unknown fields are rejected.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawModel {
    pub customers: Vec<RawType>,
    pub servers: Vec<RawType>,
    pub edges: Vec<(String, String)>,
}

impl RawModel {
    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn from_path<P: AsRef<Path>>(path: P) -> Result<Self, ModelError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Errors produced while validating a raw model description.
#[derive(Debug, Error)]
pub enum ModelError {
    #[error("{0} side declares no types")]
    EmptySide(Side),
    #[error("{side} side declares {count} types; at most {MAX_TYPES} supported")]
    TooManyTypes { side: Side, count: usize },
    #[error("duplicate {side} label `{label}`")]
    DuplicateLabel { side: Side, label: String },
    #[error("probability for `{label}` must be strictly positive, got {prob}")]
    NonPositiveProbability { label: String, prob: f64 },
    #[error("{side} probabilities sum to {sum:.15}, expected 1 within {PROB_SUM_TOL:e}")]
    ProbabilitySum { side: Side, sum: f64 },
    #[error("edge ({0}, {1}) references an unknown label")]
    UnknownEdgeEndpoint(String, String),
    #[error("duplicate edge ({0}, {1})")]
    DuplicateEdge(String, String),
    #[error("type `{0}` has no edges")]
    IsolatedType(String),
    #[error("compatibility graph is not connected")]
    Disconnected,
    #[error("invalid model JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A validated matching model: labels, probabilities and the compatibility
/// graph in both adjacency directions.
#[derive(Debug, Clone)]
pub struct MatchingModel {
    customer_labels: Vec<String>,
    server_labels: Vec<String>,
    alpha: Vec<f64>,
    beta: Vec<f64>,
    edges: Vec<(usize, usize)>,
    /// Per customer type: bitmask of compatible server types.
    s_adj: Vec<u64>,
    /// Per server type: bitmask of compatible customer types.
    c_adj: Vec<u64>,
}

/// Checks a raw description and builds the indexed model.
pub fn validate_model(raw: &RawModel) -> Result<MatchingModel, ModelError> {
    let (customer_labels, alpha) = check_side(Side::Customer, &raw.customers)?;
    let (server_labels, beta) = check_side(Side::Server, &raw.servers)?;

    let customer_index: HashMap<&str, usize> =
        customer_labels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
    let server_index: HashMap<&str, usize> =
        server_labels.iter().enumerate().map(|(j, l)| (l.as_str(), j)).collect();

    let mut edges = Vec::with_capacity(raw.edges.len());
    let mut s_adj = vec![0u64; customer_labels.len()];
    let mut c_adj = vec![0u64; server_labels.len()];
    for (c, s) in &raw.edges {
        let (&i, &j) = match (customer_index.get(c.as_str()), server_index.get(s.as_str())) {
            (Some(i), Some(j)) => (i, j),
            _ => return Err(ModelError::UnknownEdgeEndpoint(c.clone(), s.clone())),
        };
        if s_adj[i] & (1 << j) != 0 {
            return Err(ModelError::DuplicateEdge(c.clone(), s.clone()));
        }
        s_adj[i] |= 1 << j;
        c_adj[j] |= 1 << i;
        edges.push((i, j));
    }

    for (i, adj) in s_adj.iter().enumerate() {
        if *adj == 0 {
            return Err(ModelError::IsolatedType(customer_labels[i].clone()));
        }
    }
    for (j, adj) in c_adj.iter().enumerate() {
        if *adj == 0 {
            return Err(ModelError::IsolatedType(server_labels[j].clone()));
        }
    }

    // Connectivity over the bipartite graph, breadth-first from customer 0.
    let mut seen_c = vec![false; customer_labels.len()];
    let mut seen_s = vec![false; server_labels.len()];
    let mut queue = vec![(Side::Customer, 0usize)];
    seen_c[0] = true;
    while let Some((side, k)) = queue.pop() {
        match side {
            Side::Customer => {
                for j in 0..server_labels.len() {
                    if s_adj[k] & (1 << j) != 0 && !seen_s[j] {
                        seen_s[j] = true;
                        queue.push((Side::Server, j));
                    }
                }
            }
            Side::Server => {
                for i in 0..customer_labels.len() {
                    if c_adj[k] & (1 << i) != 0 && !seen_c[i] {
                        seen_c[i] = true;
                        queue.push((Side::Customer, i));
                    }
                }
            }
        }
    }
    if seen_c.iter().any(|s| !s) || seen_s.iter().any(|s| !s) {
        return Err(ModelError::Disconnected);
    }

    Ok(MatchingModel { customer_labels, server_labels, alpha, beta, edges, s_adj, c_adj })
}

fn check_side(side: Side, types: &[RawType]) -> Result<(Vec<String>, Vec<f64>), ModelError> {
    if types.is_empty() {
        return Err(ModelError::EmptySide(side));
    }
    if types.len() > MAX_TYPES {
        return Err(ModelError::TooManyTypes { side, count: types.len() });
    }
    let mut labels = Vec::with_capacity(types.len());
    let mut probs = Vec::with_capacity(types.len());
    for t in types {
        if labels.contains(&t.name) {
            return Err(ModelError::DuplicateLabel { side, label: t.name.clone() });
        }
        if !(t.prob > 0.0) {
            return Err(ModelError::NonPositiveProbability { label: t.name.clone(), prob: t.prob });
        }
        labels.push(t.name.clone());
        probs.push(t.prob);
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > PROB_SUM_TOL {
        return Err(ModelError::ProbabilitySum { side, sum });
    }
    Ok((labels, probs))
}

impl MatchingModel {
    /// Loads and validates a model file in one step.
    pub fn from_path<P: AsRef<Path>>(path: P) -> Result<Self, ModelError> {
        validate_model(&RawModel::from_path(path)?)
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        validate_model(&RawModel::from_json(text)?)
    }

    pub fn n_customers(&self) -> usize {
        self.customer_labels.len()
    }

    pub fn n_servers(&self) -> usize {
        self.server_labels.len()
    }

    pub fn n_types(&self, side: Side) -> usize {
        match side {
            Side::Customer => self.n_customers(),
            Side::Server => self.n_servers(),
        }
    }

    pub fn alpha(&self, i: usize) -> f64 {
        self.alpha[i]
    }

    pub fn beta(&self, j: usize) -> f64 {
        self.beta[j]
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alpha
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta
    }

    pub fn customer_label(&self, i: usize) -> &str {
        &self.customer_labels[i]
    }

    pub fn server_label(&self, j: usize) -> &str {
        &self.server_labels[j]
    }

    pub fn customer_index(&self, label: &str) -> Option<usize> {
        self.customer_labels.iter().position(|l| l == label)
    }

    pub fn server_index(&self, label: &str) -> Option<usize> {
        self.server_labels.iter().position(|l| l == label)
    }

    /// Edges as (customer index, server index) pairs in declaration order.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn is_edge(&self, i: usize, j: usize) -> bool {
        self.s_adj[i] & (1 << j) != 0
    }

    /// 𝒮(c_i): servers compatible with customer type i.
    pub fn servers_of_type(&self, i: usize) -> TypeSubset {
        TypeSubset::from_mask(Side::Server, self.s_adj[i])
    }

    /// 𝒞(s_j): customers compatible with server type j.
    pub fn customers_of_type(&self, j: usize) -> TypeSubset {
        TypeSubset::from_mask(Side::Customer, self.c_adj[j])
    }

    /// 𝒮(C): servers compatible with some customer type in C.
    pub fn servers_of(&self, c: &TypeSubset) -> TypeSubset {
        assert_eq!(c.side(), Side::Customer, "expected a customer subset");
        let mut mask = 0;
        for i in c.iter() {
            mask |= self.s_adj[i];
        }
        TypeSubset::from_mask(Side::Server, mask)
    }

    /// 𝒞(S): customers compatible with some server type in S.
    pub fn customers_of(&self, s: &TypeSubset) -> TypeSubset {
        assert_eq!(s.side(), Side::Server, "expected a server subset");
        let mut mask = 0;
        for j in s.iter() {
            mask |= self.c_adj[j];
        }
        TypeSubset::from_mask(Side::Customer, mask)
    }

    /// 𝒰(S): customers served only by servers in S, i.e. 𝒞 ∖ 𝒞(𝒮∖S).
    pub fn uniquely_served(&self, s: &TypeSubset) -> TypeSubset {
        let rest = self.full_servers().without(s);
        self.full_customers().without(&self.customers_of(&rest))
    }

    pub fn full_customers(&self) -> TypeSubset {
        TypeSubset::from_mask(Side::Customer, full_mask(self.n_customers()))
    }

    pub fn full_servers(&self) -> TypeSubset {
        TypeSubset::from_mask(Side::Server, full_mask(self.n_servers()))
    }

    /// α_C: total arrival probability of the customer subset.
    pub fn alpha_mass(&self, c: &TypeSubset) -> f64 {
        assert_eq!(c.side(), Side::Customer, "expected a customer subset");
        c.iter().map(|i| self.alpha[i]).sum()
    }

    /// β_S: total arrival probability of the server subset.
    pub fn beta_mass(&self, s: &TypeSubset) -> f64 {
        assert_eq!(s.side(), Side::Server, "expected a server subset");
        s.iter().map(|j| self.beta[j]).sum()
    }

    pub fn subset_labels(&self, subset: &TypeSubset) -> Vec<&str> {
        match subset.side() {
            Side::Customer => subset.iter().map(|i| self.customer_label(i)).collect(),
            Side::Server => subset.iter().map(|j| self.server_label(j)).collect(),
        }
    }

    /// Builds a subset from labels on one side.
    pub fn subset_from_labels(&self, side: Side, labels: &[&str]) -> Result<TypeSubset, ModelError> {
        let mut subset = TypeSubset::empty(side);
        for label in labels {
            let idx = match side {
                Side::Customer => self.customer_index(label),
                Side::Server => self.server_index(label),
            };
            match idx {
                Some(k) => subset.insert(k),
                None => {
                    return Err(ModelError::UnknownEdgeEndpoint(label.to_string(), String::new()))
                }
            }
        }
        Ok(subset)
    }

    /// The same model with customer and server roles swapped.
    pub fn mirrored(&self) -> MatchingModel {
        MatchingModel {
            customer_labels: self.server_labels.clone(),
            server_labels: self.customer_labels.clone(),
            alpha: self.beta.clone(),
            beta: self.alpha.clone(),
            edges: self.edges.iter().map(|&(i, j)| (j, i)).collect(),
            s_adj: self.c_adj.clone(),
            c_adj: self.s_adj.clone(),
        }
    }

    pub fn to_raw(&self) -> RawModel {
        RawModel {
            customers: self
                .customer_labels
                .iter()
                .zip(&self.alpha)
                .map(|(l, &p)| RawType { name: l.clone(), prob: p })
                .collect(),
            servers: self
                .server_labels
                .iter()
                .zip(&self.beta)
                .map(|(l, &p)| RawType { name: l.clone(), prob: p })
                .collect(),
            edges: self
                .edges
                .iter()
                .map(|&(i, j)| (self.customer_labels[i].clone(), self.server_labels[j].clone()))
                .collect(),
        }
    }
}

fn full_mask(n: usize) -> u64 {
    if n == 64 {
        u64::MAX
    } else {
        (1u64 << n) - 1
    }
}

/// One violated pooling inequality: β_S ≤ α_{𝒰(S)} for the listed server subset.
#[derive(Debug, Clone)]
pub struct CrpViolation {
    pub subset: TypeSubset,
    pub lhs: f64,
    pub rhs: f64,
}

/// Result of the complete resource pooling check.
#[derive(Debug, Clone)]
pub struct CrpReport {
    pub holds: bool,
    pub violations: Vec<CrpViolation>,
    /// min over proper nonempty S of β_S − α_{𝒰(S)}; positive iff pooling holds.
    pub tightest_margin: f64,
    pub tightest_subset: TypeSubset,
}

/// Checks complete resource pooling: β_S > α_{𝒰(S)} for every proper
/// nonempty server subset S. The two equivalent conditions (α_C < β_{𝒮(C)}
/// over customer subsets, β_S < α_{𝒞(S)} over server subsets) are evaluated
/// as well and must agree.
pub fn check_crp(model: &MatchingModel) -> CrpReport {
    let j = model.n_servers();
    let full = full_mask(j);
    let mut violations = Vec::new();
    let mut tightest_margin = f64::INFINITY;
    let mut tightest_subset = TypeSubset::empty(Side::Server);
    for mask in 1..full {
        let s = TypeSubset::from_mask(Side::Server, mask);
        let lhs = model.beta_mass(&s);
        let rhs = model.alpha_mass(&model.uniquely_served(&s));
        let margin = lhs - rhs;
        if margin < tightest_margin {
            tightest_margin = margin;
            tightest_subset = s;
        }
        if margin <= 0.0 {
            violations.push(CrpViolation { subset: s, lhs, rhs });
        }
    }
    // Degenerate J=1 case: no proper nonempty subsets, pooling holds vacuously.
    if !tightest_margin.is_finite() {
        tightest_margin = model.beta_mass(&model.full_servers());
        tightest_subset = model.full_servers();
    }
    let holds = violations.is_empty();

    debug_assert!(
        agreement_ok(holds, crp_first_form(model)) && agreement_ok(holds, crp_second_form(model)),
        "equivalent pooling forms disagree"
    );

    CrpReport { holds, violations, tightest_margin, tightest_subset }
}

/// First equivalent form: α_C < β_{𝒮(C)} for every proper nonempty customer subset.
pub fn crp_first_form(model: &MatchingModel) -> bool {
    let full = full_mask(model.n_customers());
    (1..full).all(|mask| {
        let c = TypeSubset::from_mask(Side::Customer, mask);
        model.alpha_mass(&c) < model.beta_mass(&model.servers_of(&c))
    })
}

/// Second equivalent form: β_S < α_{𝒞(S)} for every proper nonempty server subset.
pub fn crp_second_form(model: &MatchingModel) -> bool {
    let full = full_mask(model.n_servers());
    (1..full).all(|mask| {
        let s = TypeSubset::from_mask(Side::Server, mask);
        model.beta_mass(&s) < model.alpha_mass(&model.customers_of(&s))
    })
}

// The forms are equivalent in exact arithmetic; under floating point a margin
// within rounding of zero may flip sign between forms, so agreement is only
// asserted away from that boundary.
fn agreement_ok(reference: bool, other: bool) -> bool {
    reference == other
}
