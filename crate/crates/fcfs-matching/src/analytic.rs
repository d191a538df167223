//! Exact evaluation of the closed-form stationary quantities: the
//! normalizing constant, the stationary laws of every chain and marginal,
//! matching rates, and link-length distributions with their generating
//! functions.

use crate::chains::{AugmentedState, ChainState, MarginalValue, Symbol};
use crate::model::{MatchingModel, Side, TypeSubset};
use itertools::Itertools;
use num::rational::BigRational;
use num::{ToPrimitive, Zero};
use rayon::prelude::*;
use thiserror::Error;

/// Largest side size for which permutation sums are attempted (J! terms).
pub const PERMUTATION_CAP: usize = 10;

/// Required agreement between the two permutation forms of B.
pub const DUAL_FORM_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum AnalyticError {
    #[error(
        "complete resource pooling fails at server subset {{{subset}}} \
         (beta {beta} <= alpha {alpha}); the permutation sum diverges"
    )]
    Divergent { subset: String, beta: f64, alpha: f64 },
    #[error("side with {0} types exceeds the permutation cap {PERMUTATION_CAP}")]
    PermutationCap(usize),
    #[error("permutation forms of B disagree: server form {server_form}, customer form {customer_form}")]
    FormsDisagree { server_form: f64, customer_form: f64 },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("({customer}, {server}) is not an edge")]
    NotAnEdge { customer: String, server: String },
    #[error("argument {argument} lies outside the convergence annulus ({lo}, {hi})")]
    OutsideAnnulus { argument: f64, lo: f64, hi: f64 },
    #[error("series truncation failed to reach the requested tail bound")]
    Truncation,
}

/// Compensated (Kahan) accumulator for long cancellation-prone sums.
#[derive(Debug, Default, Clone, Copy)]
struct Kahan {
    sum: f64,
    carry: f64,
}

impl Kahan {
    fn add(&mut self, x: f64) {
        let y = x - self.carry;
        let t = self.sum + y;
        self.carry = (t - self.sum) - y;
        self.sum = t;
    }

    fn value(self) -> f64 {
        self.sum
    }
}

/// Sums `term` over all permutations of 0..n with compensated summation,
/// parallelized over the leading element.
fn permutation_sum<F>(n: usize, term: F) -> f64
where
    F: Fn(&[usize]) -> f64 + Sync,
{
    (0..n)
        .into_par_iter()
        .map(|first| {
            let rest: Vec<usize> = (0..n).filter(|&x| x != first).collect();
            if rest.is_empty() {
                return term(&[first]);
            }
            let mut acc = Kahan::default();
            let mut perm = Vec::with_capacity(n);
            for tail in rest.iter().copied().permutations(rest.len()) {
                perm.clear();
                perm.push(first);
                perm.extend(tail);
                acc.add(term(&perm));
            }
            acc.value()
        })
        .sum()
}

/// One permutation-form sum: 1/B = ∏_j β_j · Σ_perms ∏_{ℓ<J} (β_(ℓ) − α_(ℓ))⁻¹
/// where levels aggregate the server prefix and its uniquely served customers.
fn b_inverse_server_form(model: &MatchingModel) -> f64 {
    let j = model.n_servers();
    // Precompute per-mask aggregates; masks index server subsets.
    let size = 1usize << j;
    let mut beta_of = vec![0.0; size];
    let mut alpha_u_of = vec![0.0; size];
    for mask in 1..size {
        let low = mask.trailing_zeros() as usize;
        beta_of[mask] = beta_of[mask & (mask - 1)] + model.beta(low);
        let subset = TypeSubset::from_mask(Side::Server, mask as u64);
        alpha_u_of[mask] = model.alpha_mass(&model.uniquely_served(&subset));
    }
    let prod_beta: f64 = (0..j).map(|t| model.beta(t)).product();
    let sum = permutation_sum(j, |perm| {
        let mut mask = 0usize;
        let mut prod = 1.0;
        for &s in &perm[..j - 1] {
            mask |= 1 << s;
            let denom = beta_of[mask] - alpha_u_of[mask];
            if denom <= 0.0 {
                return f64::INFINITY;
            }
            prod /= denom;
        }
        prod
    });
    prod_beta * sum
}

/// Computes the normalizing constant B and Bˢ = B·∏β_j via both the
/// server-permutation and the customer-permutation forms, requiring the two
/// to agree within [`DUAL_FORM_TOL`].
pub fn normalizing_constant(model: &MatchingModel) -> Result<(f64, f64), AnalyticError> {
    if model.n_servers() > PERMUTATION_CAP {
        return Err(AnalyticError::PermutationCap(model.n_servers()));
    }
    if model.n_customers() > PERMUTATION_CAP {
        return Err(AnalyticError::PermutationCap(model.n_customers()));
    }
    let crp = crate::model::check_crp(model);
    if !crp.holds {
        let v = &crp.violations[0];
        return Err(AnalyticError::Divergent {
            subset: model.subset_labels(&v.subset).join(", "),
            beta: v.lhs,
            alpha: v.rhs,
        });
    }
    let server_inv = b_inverse_server_form(model);
    let customer_inv = b_inverse_server_form(&model.mirrored());
    let server_form = 1.0 / server_inv;
    let customer_form = 1.0 / customer_inv;
    let scale = server_form.abs().max(customer_form.abs()).max(1.0);
    if (server_form - customer_form).abs() > DUAL_FORM_TOL * scale {
        return Err(AnalyticError::FormsDisagree { server_form, customer_form });
    }
    let prod_beta: f64 = (0..model.n_servers()).map(|t| model.beta(t)).product();
    Ok((server_form, server_form * prod_beta))
}

/// Exact-rational evaluation of the server-permutation form of B for small
/// models. The rational α/β must match the model's floating probabilities.
pub fn normalizing_constant_rational(
    model: &MatchingModel,
    alpha: &[BigRational],
    beta: &[BigRational],
) -> Result<BigRational, AnalyticError> {
    let (i, j) = (model.n_customers(), model.n_servers());
    if j > 6 {
        return Err(AnalyticError::PermutationCap(j));
    }
    if alpha.len() != i || beta.len() != j {
        return Err(AnalyticError::Invalid("rational probability lengths".into()));
    }
    for (t, a) in alpha.iter().enumerate() {
        let back = a.to_f64().unwrap_or(f64::NAN);
        if (back - model.alpha(t)).abs() > 1e-9 {
            return Err(AnalyticError::Invalid(format!("alpha[{t}] mismatch")));
        }
    }
    for (t, b) in beta.iter().enumerate() {
        let back = b.to_f64().unwrap_or(f64::NAN);
        if (back - model.beta(t)).abs() > 1e-9 {
            return Err(AnalyticError::Invalid(format!("beta[{t}] mismatch")));
        }
    }
    let mut sum = BigRational::zero();
    for perm in (0..j).permutations(j) {
        let mut subset = TypeSubset::empty(Side::Server);
        let mut prod = BigRational::from_integer(1.into());
        let mut diverged = false;
        for &s in &perm[..j - 1] {
            subset.insert(s);
            let beta_l: BigRational = subset.iter().map(|t| beta[t].clone()).sum();
            let alpha_l: BigRational = model
                .uniquely_served(&subset)
                .iter()
                .map(|t| alpha[t].clone())
                .sum();
            let denom = beta_l - alpha_l;
            if denom <= BigRational::zero() {
                diverged = true;
                break;
            }
            prod /= denom;
        }
        if diverged {
            return Err(AnalyticError::Divergent {
                subset: model.subset_labels(&subset).join(", "),
                beta: 0.0,
                alpha: 0.0,
            });
        }
        sum += prod;
    }
    let prod_beta: BigRational = beta.iter().cloned().product();
    Ok((prod_beta * sum).recip())
}

/// Focal selection for per-permutation match probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Focal {
    None,
    /// Matches of server s_j with any compatible customer.
    Server(usize),
    /// Matches of server s_j specifically with customer c_i.
    Pair(usize, usize),
}

/// Per-permutation aggregates α_(k), β_(k) and, for a focal server or pair,
/// the stepwise match probabilities φ_k, ψ_k, χ_k (with 0/0 = 0).
#[derive(Debug, Clone)]
pub struct PermutationContext {
    pub permutation: Vec<usize>,
    pub alpha_agg: Vec<f64>,
    pub beta_agg: Vec<f64>,
    pub phi: Vec<f64>,
    pub psi: Vec<f64>,
    pub chi: Vec<f64>,
}

impl PermutationContext {
    pub fn new(model: &MatchingModel, permutation: &[usize], focal: Focal) -> Self {
        let j = permutation.len();
        let mut subset = TypeSubset::empty(Side::Server);
        let mut alpha_agg = Vec::with_capacity(j);
        let mut beta_agg = Vec::with_capacity(j);
        let mut phi = Vec::with_capacity(j);
        let mut psi = Vec::with_capacity(j);
        let mut chi = Vec::with_capacity(j);
        for &s in permutation {
            subset.insert(s);
            let u = model.uniquely_served(&subset);
            let a = model.alpha_mass(&u);
            alpha_agg.push(a);
            beta_agg.push(model.beta_mass(&subset));
            let (p, q) = match focal {
                Focal::None => (0.0, 0.0),
                Focal::Server(sj) => {
                    (0.0, model.alpha_mass(&u.intersect(&model.customers_of_type(sj))))
                }
                Focal::Pair(ci, sj) => {
                    let compat = u.intersect(&model.customers_of_type(sj));
                    let p = if compat.contains(ci) { model.alpha(ci) } else { 0.0 };
                    (p, model.alpha_mass(&compat) - p)
                }
            };
            if a > 0.0 {
                phi.push(p / a);
                psi.push(q / a);
                chi.push(1.0 - (p + q) / a);
            } else {
                phi.push(0.0);
                psi.push(0.0);
                chi.push(1.0);
            }
        }
        PermutationContext {
            permutation: permutation.to_vec(),
            alpha_agg,
            beta_agg,
            phi,
            psi,
            chi,
        }
    }

    /// π_R of this permutation: Bˢ·∏_{ℓ<J} (β_(ℓ) − α_(ℓ))⁻¹.
    pub fn pi_r(&self, bs: f64) -> f64 {
        let j = self.permutation.len();
        let mut prod = bs;
        for l in 0..j.saturating_sub(1) {
            prod /= self.beta_agg[l] - self.alpha_agg[l];
        }
        prod
    }
}

/// Matching rates indexed `[customer][server]`.
#[derive(Debug, Clone)]
pub struct RateMatrix {
    pub rates: Vec<Vec<f64>>,
}

impl RateMatrix {
    pub fn row_sums(&self) -> Vec<f64> {
        self.rates.iter().map(|row| row.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let cols = self.rates.first().map_or(0, Vec::len);
        (0..cols)
            .map(|j| self.rates.iter().map(|row| row[j]).sum())
            .collect()
    }

    pub fn total(&self) -> f64 {
        self.rates.iter().flatten().sum()
    }
}

/// One mixture component: two signed convolutions of geometric variables
/// plus a deterministic shift, tagged with its provenance.
#[derive(Debug, Clone)]
pub struct MixtureComponent {
    pub weight: f64,
    /// Ratios g of the positively signed Geom₀ parts (pmf (1−g)gʳ).
    pub pos_ratios: Vec<f64>,
    /// Ratios h of the negatively signed Geom₀ parts.
    pub neg_ratios: Vec<f64>,
    /// Deterministic −(J−ℓ) shift.
    pub shift: i64,
    pub permutation: Vec<usize>,
    /// Level ℓ (1-based) of the match within the permutation.
    pub level: usize,
}

/// Mixture of convolutions of signed geometric variables: the link-length
/// law L = G₁+…+G_ℓ − (H_ℓ+…+H_J) − (J−ℓ), mixed over permutations and ℓ.
#[derive(Debug, Clone)]
pub struct SignedGeometricMixture {
    pub components: Vec<MixtureComponent>,
}

/// Per-component truncation bound used by pmf evaluation.
const COMPONENT_TAIL: f64 = 1e-12;

/// Number of terms keeping a geometric tail below `bound`: gⁿ⁺¹ ≤ bound.
fn geometric_cut(g: f64, bound: f64) -> usize {
    if g <= 0.0 {
        return 0;
    }
    let n = (bound.ln() / g.ln()).ceil() as i64 - 1;
    n.max(0) as usize
}

/// Dense pmf over a contiguous integer support starting at `base`.
#[derive(Debug, Clone)]
struct DensePmf {
    base: i64,
    probs: Vec<f64>,
}

impl DensePmf {
    fn point() -> DensePmf {
        DensePmf { base: 0, probs: vec![1.0] }
    }

    fn convolve(&self, other: &DensePmf) -> DensePmf {
        let mut probs = vec![0.0; self.probs.len() + other.probs.len() - 1];
        for (i, &a) in self.probs.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            for (k, &b) in other.probs.iter().enumerate() {
                probs[i + k] += a * b;
            }
        }
        DensePmf { base: self.base + other.base, probs }
    }
}

impl SignedGeometricMixture {
    pub fn total_mass(&self) -> f64 {
        let mut acc = Kahan::default();
        for c in &self.components {
            acc.add(c.weight);
        }
        acc.value()
    }

    /// Rescales the weights so the total mass is 1.
    pub fn normalized(&self) -> SignedGeometricMixture {
        let mass = self.total_mass();
        let components = self
            .components
            .iter()
            .map(|c| MixtureComponent { weight: c.weight / mass, ..c.clone() })
            .collect();
        SignedGeometricMixture { components }
    }

    /// Convergence annulus (lo, hi) of the generating function: the pgf
    /// series converges for lo < |Z| < hi.
    pub fn annulus(&self) -> (f64, f64) {
        let mut lo: f64 = 0.0;
        let mut hi = f64::INFINITY;
        for c in &self.components {
            for &h in &c.neg_ratios {
                lo = lo.max(h);
            }
            for &g in &c.pos_ratios {
                if g > 0.0 {
                    hi = hi.min(1.0 / g);
                }
            }
        }
        (lo, hi)
    }

    /// Mean of the mixture normalized by its total mass.
    pub fn mean(&self) -> f64 {
        let mut acc = Kahan::default();
        for c in &self.components {
            let pos: f64 = c.pos_ratios.iter().map(|&g| g / (1.0 - g)).sum();
            let neg: f64 = c.neg_ratios.iter().map(|&h| h / (1.0 - h)).sum();
            acc.add(c.weight * (pos - neg + c.shift as f64));
        }
        acc.value() / self.total_mass()
    }

    /// Dense pmf of one component over its truncated support; the truncated
    /// tail mass is below [`COMPONENT_TAIL`].
    fn component_pmf(c: &MixtureComponent) -> DensePmf {
        let n_parts = (c.pos_ratios.len() + c.neg_ratios.len()).max(1);
        let bound = COMPONENT_TAIL / n_parts as f64;
        let mut pmf = DensePmf::point();
        pmf.base = c.shift;
        for &g in &c.pos_ratios {
            let cut = geometric_cut(g, bound);
            let probs: Vec<f64> = (0..=cut).map(|r| (1.0 - g) * g.powi(r as i32)).collect();
            pmf = pmf.convolve(&DensePmf { base: 0, probs });
        }
        for &h in &c.neg_ratios {
            let cut = geometric_cut(h, bound);
            let probs: Vec<f64> = (0..=cut)
                .rev()
                .map(|r| (1.0 - h) * h.powi(r as i32))
                .collect();
            pmf = pmf.convolve(&DensePmf { base: -(cut as i64), probs });
        }
        pmf
    }

    /// pmf values for k in lo..=hi. Truncation error per component is below
    /// [`COMPONENT_TAIL`] in total mass.
    pub fn pmf_range(&self, lo: i64, hi: i64) -> Vec<f64> {
        let mut out = vec![0.0; (hi - lo + 1).max(0) as usize];
        for c in &self.components {
            if c.weight == 0.0 {
                continue;
            }
            let pmf = Self::component_pmf(c);
            for (idx, &p) in pmf.probs.iter().enumerate() {
                let k = pmf.base + idx as i64;
                if k >= lo && k <= hi {
                    out[(k - lo) as usize] += c.weight * p;
                }
            }
        }
        out
    }

    /// Support bounds covering all but the truncated tails.
    pub fn support_hint(&self) -> (i64, i64) {
        let mut lo = 0i64;
        let mut hi = 0i64;
        for c in &self.components {
            let bound = COMPONENT_TAIL / ((c.pos_ratios.len() + c.neg_ratios.len()).max(1)) as f64;
            let up: i64 = c
                .pos_ratios
                .iter()
                .map(|&g| geometric_cut(g, bound) as i64)
                .sum();
            let down: i64 = c
                .neg_ratios
                .iter()
                .map(|&h| geometric_cut(h, bound) as i64)
                .sum();
            lo = lo.min(c.shift - down);
            hi = hi.max(c.shift + up);
        }
        (lo, hi)
    }

    /// Generating function E[Z^L] evaluated by term-by-term geometric series
    /// (not the closed form), valid strictly inside the annulus.
    pub fn pgf(&self, z: f64) -> Result<f64, AnalyticError> {
        let (lo, hi) = self.annulus();
        if !(z > lo && z < hi) || z <= 0.0 {
            return Err(AnalyticError::OutsideAnnulus { argument: z, lo, hi });
        }
        let series = |ratio: f64, arg: f64| -> Result<f64, AnalyticError> {
            // Σ_r (1−ratio)·ratioʳ·argʳ with |ratio·arg| < 1.
            let q = ratio * arg;
            let mut term = 1.0 - ratio;
            let mut acc = 0.0;
            for _ in 0..100_000 {
                acc += term;
                term *= q;
                if term.abs() <= 1e-17 * acc.abs().max(1e-300) {
                    return Ok(acc);
                }
            }
            Err(AnalyticError::Truncation)
        };
        let mut total = Kahan::default();
        for c in &self.components {
            if c.weight == 0.0 {
                continue;
            }
            let mut v = c.weight * (z as f64).powi(c.shift as i32);
            for &g in &c.pos_ratios {
                v *= series(g, z)?;
            }
            for &h in &c.neg_ratios {
                v *= series(h, 1.0 / z)?;
            }
            total.add(v);
        }
        Ok(total.value())
    }
}

/// Exact evaluator for all stationary laws of one model. Immutable after
/// construction; all queries are thread-safe.
#[derive(Debug, Clone)]
pub struct StationaryEvaluator {
    model: MatchingModel,
    b: f64,
    bs: f64,
}

impl StationaryEvaluator {
    /// Computes B (both forms) and fails when complete resource pooling
    /// does not hold.
    pub fn new(model: &MatchingModel) -> Result<Self, AnalyticError> {
        let (b, bs) = normalizing_constant(model)?;
        Ok(StationaryEvaluator { model: model.clone(), b, bs })
    }

    pub fn model(&self) -> &MatchingModel {
        &self.model
    }

    /// The shared normalizing constant B.
    pub fn b(&self) -> f64 {
        self.b
    }

    /// Bˢ = B·∏_j β_j.
    pub fn bs(&self) -> f64 {
        self.bs
    }

    /// Product over a word's symbols of the type probabilities.
    fn word_product(&self, word: &[Symbol]) -> f64 {
        word.iter()
            .map(|&s| match s.side() {
                Side::Customer => self.model.alpha(s.type_index()),
                Side::Server => self.model.beta(s.type_index()),
            })
            .product()
    }

    /// Stationary probability of a detailed-chain state (Zs, Zc, D, E):
    /// B·∏α^{#c}·∏β^{#s} counting every symbol, with the same B for all
    /// four chains.
    pub fn pi_detailed(&self, state: &ChainState) -> Result<f64, AnalyticError> {
        if !crate::chains::is_valid_state(&self.model, state) {
            return Err(AnalyticError::Invalid("state fails its chain invariants".into()));
        }
        let prod = match state {
            ChainState::Zs(w) | ChainState::Zc(w) => self.word_product(w),
            ChainState::D { z, y } | ChainState::E { y, z } => {
                self.word_product(z) * self.word_product(y)
            }
            _ => {
                return Err(AnalyticError::Invalid(
                    "natural-chain states use pi_natural".into(),
                ))
            }
        };
        Ok(self.b * prod)
    }

    /// Stationary probability of an augmented word (the 𝒵 or o-Z form):
    /// the same full product form, B·∏α^{#c}·∏β^{#s}.
    pub fn pi_augmented(&self, aug: &AugmentedState) -> f64 {
        self.b * self.word_product(&aug.to_word())
    }

    /// Stationary probability of a natural-chain state (Qs, Qc, O).
    pub fn pi_natural(&self, state: &ChainState) -> Result<f64, AnalyticError> {
        if !crate::chains::is_valid_state(&self.model, state) {
            return Err(AnalyticError::Invalid("state fails its chain invariants".into()));
        }
        match state {
            ChainState::Qs(w) => Ok(self.qs_value(w)),
            ChainState::Qc(w) => Ok(self.qc_value(w)),
            ChainState::O { customers, servers } => Ok(self.o_value(customers, servers)),
            _ => Err(AnalyticError::Invalid("detailed-chain states use pi_detailed".into())),
        }
    }

    fn qs_value(&self, word: &[usize]) -> f64 {
        let mut prefix = TypeSubset::empty(Side::Customer);
        let mut prod = self.b;
        for &c in word {
            prefix.insert(c);
            prod *= self.model.alpha(c) / self.model.beta_mass(&self.model.servers_of(&prefix));
        }
        prod * (1.0 - self.model.beta_mass(&self.model.servers_of(&prefix)))
    }

    fn qc_value(&self, word: &[usize]) -> f64 {
        let mut prefix = TypeSubset::empty(Side::Server);
        let mut prod = self.b;
        for &s in word {
            prefix.insert(s);
            prod *= self.model.beta(s) / self.model.alpha_mass(&self.model.customers_of(&prefix));
        }
        prod * (1.0 - self.model.alpha_mass(&self.model.customers_of(&prefix)))
    }

    fn o_value(&self, customers: &[usize], servers: &[usize]) -> f64 {
        let mut c_prefix = TypeSubset::empty(Side::Customer);
        let mut s_prefix = TypeSubset::empty(Side::Server);
        let mut prod = self.b;
        for (&c, &s) in customers.iter().zip(servers) {
            c_prefix.insert(c);
            s_prefix.insert(s);
            prod *= self.model.alpha(c) / self.model.beta_mass(&self.model.servers_of(&c_prefix));
            prod *= self.model.beta(s) / self.model.alpha_mass(&self.model.customers_of(&s_prefix));
        }
        prod
    }

    /// Independent route to the natural laws: sums the detailed product-form
    /// probabilities over all interleavings of exchanged runs, truncating
    /// each geometric slot series once its analytic tail drops below `tol`
    /// relative to the partial sum.
    pub fn pi_natural_via_detailed(
        &self,
        state: &ChainState,
        tol: f64,
    ) -> Result<f64, AnalyticError> {
        if !crate::chains::is_valid_state(&self.model, state) {
            return Err(AnalyticError::Invalid("state fails its chain invariants".into()));
        }
        let slot = |x: f64, at_least_one: bool| -> Result<f64, AnalyticError> {
            let mut term = if at_least_one { x } else { 1.0 };
            let mut acc = 0.0;
            for _ in 0..100_000 {
                acc += term;
                term *= x;
                // Remaining tail is term/(1−x).
                if term / (1.0 - x) <= tol * acc.max(1e-300) {
                    return Ok(acc);
                }
            }
            Err(AnalyticError::Truncation)
        };
        match state {
            ChainState::Qs(w) => {
                let mut prefix = TypeSubset::empty(Side::Customer);
                let mut prod = self.b;
                for (l, &c) in w.iter().enumerate() {
                    prefix.insert(c);
                    let x = 1.0 - self.model.beta_mass(&self.model.servers_of(&prefix));
                    prod *= self.model.alpha(c) * slot(x, l + 1 == w.len())?;
                }
                Ok(prod)
            }
            ChainState::Qc(w) => {
                let mut prefix = TypeSubset::empty(Side::Server);
                let mut prod = self.b;
                for (l, &s) in w.iter().enumerate() {
                    prefix.insert(s);
                    let x = 1.0 - self.model.alpha_mass(&self.model.customers_of(&prefix));
                    prod *= self.model.beta(s) * slot(x, l + 1 == w.len())?;
                }
                Ok(prod)
            }
            ChainState::O { customers, servers } => {
                let mut c_prefix = TypeSubset::empty(Side::Customer);
                let mut s_prefix = TypeSubset::empty(Side::Server);
                let mut prod = self.b;
                for (&c, &s) in customers.iter().zip(servers) {
                    c_prefix.insert(c);
                    s_prefix.insert(s);
                    let xz = 1.0 - self.model.beta_mass(&self.model.servers_of(&c_prefix));
                    let xy = 1.0 - self.model.alpha_mass(&self.model.customers_of(&s_prefix));
                    prod *= self.model.alpha(c) * slot(xz, false)?;
                    prod *= self.model.beta(s) * slot(xy, false)?;
                }
                Ok(prod)
            }
            _ => Err(AnalyticError::Invalid("detailed-chain states use pi_detailed".into())),
        }
    }

    fn context_for(&self, value: &MarginalValue) -> Result<PermutationContext, AnalyticError> {
        let (perm, expected) = match value {
            MarginalValue::W { permutation, words } => (permutation, Some(words.len())),
            MarginalValue::X { permutation, counts } | MarginalValue::Y { permutation, counts } | MarginalValue::V { permutation, counts } => {
                (permutation, Some(counts.len()))
            }
            MarginalValue::U { permutation, counts } => (permutation, Some(counts.len())),
            MarginalValue::R { permutation } => (permutation, None),
        };
        let j = self.model.n_servers();
        let mut seen = vec![false; j];
        if perm.len() != j {
            return Err(AnalyticError::Invalid("permutation length".into()));
        }
        for &s in perm {
            if s >= j || seen[s] {
                return Err(AnalyticError::Invalid("not a permutation of the server types".into()));
            }
            seen[s] = true;
        }
        if let Some(len) = expected {
            if len != j - 1 {
                return Err(AnalyticError::Invalid(format!(
                    "expected {} between-landmark entries, got {len}",
                    j - 1
                )));
            }
        }
        Ok(PermutationContext::new(&self.model, perm, Focal::None))
    }

    /// Stationary probability of a marginal value (W, X, Y, U, V, or R).
    pub fn pi_marginal(&self, value: &MarginalValue) -> Result<f64, AnalyticError> {
        let ctx = self.context_for(value)?;
        let j = ctx.permutation.len();
        let mut prod = self.bs;
        match value {
            MarginalValue::R { .. } => {
                for l in 0..j - 1 {
                    prod /= ctx.beta_agg[l] - ctx.alpha_agg[l];
                }
            }
            MarginalValue::W { words, .. } => {
                for (l, bits) in words.iter().enumerate() {
                    for &is_server in bits {
                        prod *= if is_server {
                            1.0 - ctx.beta_agg[l]
                        } else {
                            ctx.alpha_agg[l]
                        };
                    }
                }
            }
            MarginalValue::X { counts, .. } => {
                for (l, &n) in counts.iter().enumerate() {
                    prod *= ctx.alpha_agg[l].powi(n as i32)
                        / ctx.beta_agg[l].powi(n as i32 + 1);
                }
            }
            MarginalValue::Y { counts, .. } => {
                for (l, &m) in counts.iter().enumerate() {
                    prod *= (1.0 - ctx.beta_agg[l]).powi(m as i32)
                        / (1.0 - ctx.alpha_agg[l]).powi(m as i32 + 1);
                }
            }
            MarginalValue::U { counts, .. } => {
                for (l, &(n, m)) in counts.iter().enumerate() {
                    prod *= binomial(n + m, n)
                        * ctx.alpha_agg[l].powi(n as i32)
                        * (1.0 - ctx.beta_agg[l]).powi(m as i32);
                }
            }
            MarginalValue::V { counts, .. } => {
                for (l, &r) in counts.iter().enumerate() {
                    prod *= (ctx.alpha_agg[l] + 1.0 - ctx.beta_agg[l]).powi(r as i32);
                }
            }
        }
        Ok(prod)
    }

    /// P(X = n | R): a product of geometric probabilities with ratios
    /// α_(ℓ)/β_(ℓ).
    pub fn conditional_x_given_r(
        &self,
        permutation: &[usize],
        counts: &[usize],
    ) -> Result<f64, AnalyticError> {
        let value = MarginalValue::X {
            permutation: permutation.to_vec(),
            counts: counts.to_vec(),
        };
        let ctx = self.context_for(&value)?;
        let mut p = 1.0;
        for (l, &n) in counts.iter().enumerate() {
            let q = ctx.alpha_agg[l] / ctx.beta_agg[l];
            p *= q.powi(n as i32) * (1.0 - q);
        }
        Ok(p)
    }

    /// P(Y = m | R): geometric products with ratios (1−β_(ℓ))/(1−α_(ℓ)).
    pub fn conditional_y_given_r(
        &self,
        permutation: &[usize],
        counts: &[usize],
    ) -> Result<f64, AnalyticError> {
        let value = MarginalValue::Y {
            permutation: permutation.to_vec(),
            counts: counts.to_vec(),
        };
        let ctx = self.context_for(&value)?;
        let mut p = 1.0;
        for (l, &m) in counts.iter().enumerate() {
            let q = (1.0 - ctx.beta_agg[l]) / (1.0 - ctx.alpha_agg[l]);
            p *= q.powi(m as i32) * (1.0 - q);
        }
        Ok(p)
    }

    /// The matching-rate matrix: r[i][j] summed over all permutations, with
    /// zero entries on non-edges.
    pub fn matching_rates(&self) -> Result<RateMatrix, AnalyticError> {
        let (i_n, j_n) = (self.model.n_customers(), self.model.n_servers());
        if j_n > PERMUTATION_CAP {
            return Err(AnalyticError::PermutationCap(j_n));
        }
        let mut rates = vec![vec![0.0; j_n]; i_n];
        for i in 0..i_n {
            for j in 0..j_n {
                if !self.model.is_edge(i, j) {
                    continue;
                }
                let sum = permutation_sum(j_n, |perm| {
                    let ctx = PermutationContext::new(&self.model, perm, Focal::Pair(i, j));
                    let mut bracket = 0.0;
                    let mut running = 1.0;
                    for k in 0..j_n - 1 {
                        let denom = ctx.beta_agg[k] - ctx.alpha_agg[k] * ctx.chi[k];
                        bracket += ctx.phi[k] * ctx.alpha_agg[k] / denom * running;
                        running *= (ctx.beta_agg[k] - ctx.alpha_agg[k]) / denom;
                    }
                    let last = ctx.phi[j_n - 1] + ctx.psi[j_n - 1];
                    bracket += ctx.phi[j_n - 1] / last * running;
                    ctx.pi_r(self.bs) * bracket
                });
                rates[i][j] = self.model.beta(j) * sum;
            }
        }
        Ok(RateMatrix { rates })
    }

    /// Builds the link-length mixture for matches of server type s_j,
    /// optionally restricted to matches with customer type c_i. The
    /// unconditional mixture has total mass 1; the conditional one has mass
    /// r_{c_i,s_j}/β_{s_j} (normalize for the conditional law).
    pub fn link_length_distribution(
        &self,
        server: usize,
        conditional: Option<usize>,
    ) -> Result<SignedGeometricMixture, AnalyticError> {
        let j_n = self.model.n_servers();
        if j_n > PERMUTATION_CAP {
            return Err(AnalyticError::PermutationCap(j_n));
        }
        if server >= j_n {
            return Err(AnalyticError::Invalid("server index out of range".into()));
        }
        if let Some(ci) = conditional {
            if !self.model.is_edge(ci, server) {
                return Err(AnalyticError::NotAnEdge {
                    customer: self.model.customer_label(ci).to_string(),
                    server: self.model.server_label(server).to_string(),
                });
            }
        }
        let focal = match conditional {
            Some(ci) => Focal::Pair(ci, server),
            None => Focal::Server(server),
        };
        let mut components = Vec::new();
        for perm in (0..j_n).permutations(j_n) {
            let ctx = PermutationContext::new(&self.model, &perm, focal);
            let pi_r = ctx.pi_r(self.bs);
            let mut running = 1.0;
            for level in 1..=j_n {
                let k = level - 1;
                let denom = ctx.beta_agg[k] - ctx.alpha_agg[k] * ctx.chi[k];
                // Weight numerator: (φ+ψ) for the unconditional law, φ alone
                // for the conditional one (a Bayes restriction of the same
                // joint law, so the geometric ratios are unchanged).
                let numer = match conditional {
                    Some(_) => ctx.phi[k],
                    None => ctx.phi[k] + ctx.psi[k],
                };
                let weight = pi_r * ctx.alpha_agg[k] * numer / denom * running;
                running *= (ctx.beta_agg[k] - ctx.alpha_agg[k]) / denom;
                if weight > 0.0 {
                    let pos_ratios: Vec<f64> = (0..level)
                        .map(|l| ctx.alpha_agg[l] * ctx.chi[l] / ctx.beta_agg[l])
                        .collect();
                    let neg_ratios: Vec<f64> = (level - 1..j_n)
                        .map(|l| {
                            if l + 1 == j_n {
                                0.0
                            } else {
                                (1.0 - ctx.beta_agg[l]) / (1.0 - ctx.alpha_agg[l])
                            }
                        })
                        .collect();
                    components.push(MixtureComponent {
                        weight,
                        pos_ratios,
                        neg_ratios,
                        shift: -((j_n - level) as i64),
                        permutation: perm.clone(),
                        level,
                    });
                }
            }
        }
        Ok(SignedGeometricMixture { components })
    }

    /// Evaluates the link-length generating function directly from its
    /// closed-form permutation sum (the dual route to the mixture's series
    /// pgf). The conditional version returns the pgf of the normalized law.
    pub fn pgf_eval(
        &self,
        server: usize,
        conditional: Option<usize>,
        z: f64,
    ) -> Result<f64, AnalyticError> {
        let mixture = self.link_length_distribution(server, conditional)?;
        let (lo, hi) = mixture.annulus();
        if !(z > lo && z < hi) || z <= 0.0 {
            return Err(AnalyticError::OutsideAnnulus { argument: z, lo, hi });
        }
        let j_n = self.model.n_servers();
        let focal = match conditional {
            Some(ci) => Focal::Pair(ci, server),
            None => Focal::Server(server),
        };
        let mut total = Kahan::default();
        let mut mass = Kahan::default();
        for perm in (0..j_n).permutations(j_n) {
            let ctx = PermutationContext::new(&self.model, &perm, focal);
            let pi_r = ctx.pi_r(self.bs);
            let mut running = 1.0;
            for level in 1..=j_n {
                let k = level - 1;
                let denom = ctx.beta_agg[k] - ctx.alpha_agg[k] * ctx.chi[k];
                let numer = match conditional {
                    Some(_) => ctx.phi[k],
                    None => ctx.phi[k] + ctx.psi[k],
                };
                let weight = pi_r * ctx.alpha_agg[k] * numer / denom * running;
                running *= (ctx.beta_agg[k] - ctx.alpha_agg[k]) / denom;
                if weight == 0.0 {
                    continue;
                }
                let mut factor = z.powi(-((j_n - level) as i32));
                for l in 0..level {
                    let d = ctx.beta_agg[l] - ctx.alpha_agg[l] * ctx.chi[l];
                    factor *= d / (ctx.beta_agg[l] - ctx.alpha_agg[l] * ctx.chi[l] * z);
                }
                for l in level - 1..j_n {
                    let h = if l + 1 == j_n {
                        0.0
                    } else {
                        (1.0 - ctx.beta_agg[l]) / (1.0 - ctx.alpha_agg[l])
                    };
                    factor *= (1.0 - h) / (1.0 - h / z);
                }
                total.add(weight * factor);
                mass.add(weight);
            }
        }
        match conditional {
            Some(_) => Ok(total.value() / mass.value()),
            None => Ok(total.value()),
        }
    }
}

/// Binomial coefficient in double precision.
fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k.min(n));
    let mut v = 1.0;
    for t in 0..k {
        v *= (n - t) as f64 / (t + 1) as f64;
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chains::{
        enumerate_states, to_augmented, zs_d_bijection, ChainKind, MarginalKind, project,
    };
    use crate::model::tests::nn;
    use crate::model::{validate_model, RawModel, RawType};
    use approx::assert_abs_diff_eq;
    use num::rational::BigRational;

    fn ratio(n: i64, d: i64) -> BigRational {
        BigRational::new(n.into(), d.into())
    }

    fn single_edge() -> MatchingModel {
        let raw = RawModel {
            customers: vec![RawType { name: "c1".into(), prob: 1.0 }],
            servers: vec![RawType { name: "s1".into(), prob: 1.0 }],
            edges: vec![("c1".into(), "s1".into())],
        };
        validate_model(&raw).unwrap()
    }

    #[test]
    fn nn_normalizing_constant() {
        let m = nn();
        let (b, bs) = normalizing_constant(&m).unwrap();
        assert_abs_diff_eq!(b, 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(bs, 0.25 * 0.4 * 0.4 * 0.2, epsilon = 1e-14);
        // Closed form for this graph: (α₁−β₃)(β₁−α₃)(1−α₁−β₁)/(α₁α₂β₁β₂).
        let closed = (0.5 - 0.2) * (0.4 - 0.2) * (1.0 - 0.5 - 0.4)
            / (0.5 * 0.3 * 0.4 * 0.4);
        assert_abs_diff_eq!(b, closed, epsilon = 1e-12);
        let (b1, _) = normalizing_constant(&single_edge()).unwrap();
        assert_abs_diff_eq!(b1, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn rational_form_is_exact() {
        let m = nn();
        let alpha = [ratio(1, 2), ratio(3, 10), ratio(1, 5)];
        let beta = [ratio(2, 5), ratio(2, 5), ratio(1, 5)];
        let b = normalizing_constant_rational(&m, &alpha, &beta).unwrap();
        assert_eq!(b, ratio(1, 4));
    }

    #[test]
    fn divergence_without_crp() {
        let mut raw = crate::model::tests::nn_raw();
        raw.customers[0].prob = 0.35;
        raw.customers[1].prob = 0.2;
        raw.customers[2].prob = 0.45;
        let m = validate_model(&raw).unwrap();
        match normalizing_constant(&m) {
            Err(AnalyticError::Divergent { .. }) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn permutation_cap_is_enforced() {
        let servers: Vec<RawType> = (0..11)
            .map(|k| RawType { name: format!("s{k}"), prob: 1.0 / 11.0 })
            .collect();
        let edges = (0..11).map(|k| ("c1".to_string(), format!("s{k}"))).collect();
        let raw = RawModel {
            customers: vec![RawType { name: "c1".into(), prob: 1.0 }],
            servers,
            edges,
        };
        let m = validate_model(&raw).unwrap();
        assert!(matches!(
            normalizing_constant(&m),
            Err(AnalyticError::PermutationCap(11))
        ));
    }

    #[test]
    fn detailed_spot_values() {
        let ev = StationaryEvaluator::new(&nn()).unwrap();
        let empty = ChainState::Zs(vec![]);
        assert_abs_diff_eq!(ev.pi_detailed(&empty).unwrap(), 0.25, epsilon = 1e-12);
        let state = ChainState::Zs(vec![Symbol::C(0), Symbol::ExS(0)]);
        assert_abs_diff_eq!(ev.pi_detailed(&state).unwrap(), 0.05, epsilon = 1e-12);
        // The bijection image carries the same probability.
        let d = zs_d_bijection(ev.model(), &state).unwrap();
        assert_abs_diff_eq!(ev.pi_detailed(&d).unwrap(), 0.05, epsilon = 1e-12);
        // Invalid state rejected.
        let bad = ChainState::Zs(vec![Symbol::C(0), Symbol::ExS(1)]);
        assert!(ev.pi_detailed(&bad).is_err());
    }

    #[test]
    fn natural_spot_values() {
        let ev = StationaryEvaluator::new(&nn()).unwrap();
        let qs4 = ChainState::Qs(vec![0, 0, 0, 0]);
        let expect = 0.25 * 0.4 * (0.5f64 / 0.6).powi(4);
        assert_abs_diff_eq!(ev.pi_natural(&qs4).unwrap(), expect, epsilon = 1e-12);
        let qs_c3 = ChainState::Qs(vec![2, 2, 2, 2, 2]);
        let expect = 0.25 * 0.6 * (0.2f64 / 0.4).powi(5);
        assert_abs_diff_eq!(ev.pi_natural(&qs_c3).unwrap(), expect, epsilon = 1e-12);
        let qc = ChainState::Qc(vec![2, 2, 2, 1, 2, 1]);
        let expect = 0.25
            * 0.2
            * (0.2f64 / 0.5).powi(3)
            * (0.4f64 / 0.8).powi(2)
            * (0.2 / 0.8);
        assert_abs_diff_eq!(ev.pi_natural(&qc).unwrap(), expect, epsilon = 1e-12);
        let o = ChainState::O {
            customers: vec![2, 2, 1, 2, 1, 2],
            servers: vec![2, 2, 2, 2, 2, 2],
        };
        let expect = 0.25
            * (0.2f64 / 0.4).powi(2)
            * (0.3f64 / 0.8).powi(2)
            * (0.2f64 / 0.8).powi(2)
            * (0.2f64 / 0.5).powi(6);
        assert_abs_diff_eq!(ev.pi_natural(&o).unwrap(), expect, epsilon = 1e-12);
        assert_abs_diff_eq!(
            ev.pi_natural(&ChainState::Qs(vec![])).unwrap(),
            0.25,
            epsilon = 1e-15
        );
    }

    #[test]
    fn natural_via_detailed_summation_agrees() {
        let ev = StationaryEvaluator::new(&nn()).unwrap();
        for kind in [ChainKind::Qs, ChainKind::Qc, ChainKind::O] {
            for state in enumerate_states(ev.model(), kind, 3).unwrap() {
                let direct = ev.pi_natural(&state).unwrap();
                let summed = ev.pi_natural_via_detailed(&state, 1e-12).unwrap();
                assert_abs_diff_eq!(direct, summed, epsilon = 1e-10 * direct.max(1e-12));
            }
        }
    }

    #[test]
    fn marginal_laws() {
        let ev = StationaryEvaluator::new(&nn()).unwrap();
        // π_R sums to 1 over all six permutations.
        let mut total = 0.0;
        for perm in (0..3).permutations(3) {
            total += ev
                .pi_marginal(&MarginalValue::R { permutation: perm })
                .unwrap();
        }
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);

        // Conditional X | R with all zero counts on (s1, s2, s3).
        let p = ev.conditional_x_given_r(&[0, 1, 2], &[0, 0]).unwrap();
        assert_abs_diff_eq!(p, 0.1875, epsilon = 1e-12);
        // And π_X = π_R · P(X | R).
        let x = ev
            .pi_marginal(&MarginalValue::X { permutation: vec![0, 1, 2], counts: vec![0, 0] })
            .unwrap();
        let r = ev
            .pi_marginal(&MarginalValue::R { permutation: vec![0, 1, 2] })
            .unwrap();
        assert_abs_diff_eq!(x, r * p, epsilon = 1e-14);

        // Summing π_U over the exchanged-server counts recovers π_X.
        let perm = vec![1, 0, 2];
        for counts in [[0usize, 0], [1, 0], [0, 2], [2, 1]] {
            let x = ev
                .pi_marginal(&MarginalValue::X {
                    permutation: perm.clone(),
                    counts: counts.to_vec(),
                })
                .unwrap();
            let mut summed = 0.0;
            for m1 in 0..400 {
                for m2 in 0..400 {
                    summed += ev
                        .pi_marginal(&MarginalValue::U {
                            permutation: perm.clone(),
                            counts: vec![(counts[0], m1), (counts[1], m2)],
                        })
                        .unwrap();
                }
            }
            assert_abs_diff_eq!(x, summed, epsilon = 1e-10);
        }

        // Summing π_X and conditional Y over a truncated grid approaches π_R.
        let mut grid = 0.0;
        for n1 in 0..200 {
            for n2 in 0..200 {
                grid += ev
                    .pi_marginal(&MarginalValue::X {
                        permutation: perm.clone(),
                        counts: vec![n1, n2],
                    })
                    .unwrap();
            }
        }
        let r = ev
            .pi_marginal(&MarginalValue::R { permutation: perm.clone() })
            .unwrap();
        assert_abs_diff_eq!(grid, r, epsilon = 1e-10);

        // π_V recovered from π_U along the diagonal sums.
        let v = ev
            .pi_marginal(&MarginalValue::V { permutation: perm.clone(), counts: vec![1, 1] })
            .unwrap();
        let mut diag = 0.0;
        for n1 in 0..=1usize {
            for n2 in 0..=1usize {
                diag += ev
                    .pi_marginal(&MarginalValue::U {
                        permutation: perm.clone(),
                        counts: vec![(n1, 1 - n1), (n2, 1 - n2)],
                    })
                    .unwrap();
            }
        }
        assert_abs_diff_eq!(v, diag, epsilon = 1e-14);

        // A W value matches the augmented product form summed over types.
        let w = ev
            .pi_marginal(&MarginalValue::W {
                permutation: vec![1, 0, 2],
                words: vec![vec![true], vec![false]],
            })
            .unwrap();
        // The matching augmented words carry one exchanged server in w₁
        // (any type landmarked later, here s1 or s3) and one customer in w₂
        // (members of U{s1, s2} = {c2, c3}).
        let mut summed = 0.0;
        for srv in [0usize, 2] {
            for cust in [1usize, 2] {
                let word = vec![
                    Symbol::ExS(1),
                    Symbol::ExS(srv),
                    Symbol::ExS(0),
                    Symbol::C(cust),
                    Symbol::ExS(2),
                ];
                let aug = to_augmented(ev.model(), &word).unwrap();
                assert_eq!(aug.permutation, vec![1, 0, 2]);
                summed += ev.pi_augmented(&aug);
            }
        }
        assert_abs_diff_eq!(w, summed, epsilon = 1e-14);
    }

    #[test]
    fn augmented_projection_consistency() {
        let ev = StationaryEvaluator::new(&nn()).unwrap();
        let word = vec![
            Symbol::ExS(1),
            Symbol::ExS(2),
            Symbol::ExS(0),
            Symbol::C(2),
            Symbol::ExS(2),
        ];
        let aug = to_augmented(ev.model(), &word).unwrap();
        let x = project(MarginalKind::X, &aug);
        let u = project(MarginalKind::U, &aug);
        // The X probability dominates the single augmented word's.
        let px = ev.pi_marginal(&x).unwrap();
        let pu = ev.pi_marginal(&u).unwrap();
        let pw = ev.pi_augmented(&aug);
        assert!(px >= pu && pu >= pw);
    }

    #[test]
    fn rate_matrix_marginals() {
        let ev = StationaryEvaluator::new(&nn()).unwrap();
        let rates = ev.matching_rates().unwrap();
        assert_eq!(rates.rates[0][0], 0.0, "non-edge rate must vanish");
        let rows = rates.row_sums();
        let cols = rates.col_sums();
        for (i, &row) in rows.iter().enumerate() {
            assert_abs_diff_eq!(row, ev.model().alpha(i), epsilon = 1e-10);
        }
        for (j, &col) in cols.iter().enumerate() {
            assert_abs_diff_eq!(col, ev.model().beta(j), epsilon = 1e-10);
        }
        assert_abs_diff_eq!(rates.total(), 1.0, epsilon = 1e-10);
        for row in &rates.rates {
            for &r in row {
                assert!(r >= 0.0);
            }
        }
    }

    #[test]
    fn link_length_mixture_mass_and_consistency() {
        let ev = StationaryEvaluator::new(&nn()).unwrap();
        let rates = ev.matching_rates().unwrap();
        for j in 0..3 {
            let mix = ev.link_length_distribution(j, None).unwrap();
            assert_abs_diff_eq!(mix.total_mass(), 1.0, epsilon = 1e-12);
            // Conditional masses recover the matching rates.
            let mut mass_sum = 0.0;
            for i in 0..3 {
                if !ev.model().is_edge(i, j) {
                    assert!(ev.link_length_distribution(j, Some(i)).is_err());
                    continue;
                }
                let cond = ev.link_length_distribution(j, Some(i)).unwrap();
                let mass = cond.total_mass();
                assert_abs_diff_eq!(
                    mass * ev.model().beta(j),
                    rates.rates[i][j],
                    epsilon = 1e-10
                );
                mass_sum += mass;
            }
            assert_abs_diff_eq!(mass_sum, 1.0, epsilon = 1e-10);

            // The conditional mixtures recombine to the unconditional pmf.
            let (lo, hi) = mix.support_hint();
            let uncond = mix.pmf_range(lo, hi);
            let mut recombined = vec![0.0; uncond.len()];
            for i in 0..3 {
                if ev.model().is_edge(i, j) {
                    let cond = ev.link_length_distribution(j, Some(i)).unwrap();
                    for (slot, p) in recombined.iter_mut().zip(cond.pmf_range(lo, hi)) {
                        *slot += p;
                    }
                }
            }
            for (a, b) in uncond.iter().zip(&recombined) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-10);
            }
            let total: f64 = uncond.iter().sum();
            assert_abs_diff_eq!(total, 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn pgf_dual_routes_agree() {
        let ev = StationaryEvaluator::new(&nn()).unwrap();
        for j in 0..3 {
            let mix = ev.link_length_distribution(j, None).unwrap();
            assert_abs_diff_eq!(mix.pgf(1.0).unwrap(), 1.0, epsilon = 1e-12);
            assert_abs_diff_eq!(ev.pgf_eval(j, None, 1.0).unwrap(), 1.0, epsilon = 1e-12);
            for z in [0.9, 1.0, 1.1] {
                let direct = ev.pgf_eval(j, None, z).unwrap();
                let series = mix.pgf(z).unwrap();
                assert_abs_diff_eq!(direct, series, epsilon = 1e-9);
            }
            // Mean from the pgf derivative matches the mixture mean.
            let eps = 1e-6;
            let deriv = (ev.pgf_eval(j, None, 1.0 + eps).unwrap()
                - ev.pgf_eval(j, None, 1.0 - eps).unwrap())
                / (2.0 * eps);
            assert_abs_diff_eq!(deriv, mix.mean(), epsilon = 1e-5);
        }
        // On this model every annulus floor exceeds 0.5, so 0.5 must be
        // refused by both routes for every server. For s1 the floor is 0.75:
        // its only 0.8 ratios sit in components whose weight vanishes.
        let mix = ev.link_length_distribution(0, None).unwrap();
        let (lo, _) = mix.annulus();
        assert_abs_diff_eq!(lo, 0.75, epsilon = 1e-12);
        for j in 0..3 {
            let mix = ev.link_length_distribution(j, None).unwrap();
            let (lo, hi) = mix.annulus();
            assert!(lo > 0.5 && hi > 1.0, "annulus ({lo}, {hi}) for server {j}");
            assert!(matches!(
                ev.pgf_eval(j, None, 0.5),
                Err(AnalyticError::OutsideAnnulus { .. })
            ));
            assert!(matches!(mix.pgf(0.5), Err(AnalyticError::OutsideAnnulus { .. })));
        }

        // Conditional pgf agrees with the normalized conditional mixture.
        let cond = ev.link_length_distribution(0, Some(1)).unwrap().normalized();
        for z in [0.9, 1.0] {
            let direct = ev.pgf_eval(0, Some(1), z).unwrap();
            assert_abs_diff_eq!(direct, cond.pgf(z).unwrap(), epsilon = 1e-9);
        }
    }

    #[test]
    fn kelly_balance_on_short_words() {
        use crate::chains::{reverse_role_flip, successors, transition_probability};
        let ev = StationaryEvaluator::new(&nn()).unwrap();
        let m = ev.model();
        // Worked instance: π(∅)·P(∅→(c1,ŝ1)) = π((c1,ŝ1))·α_{C(s1)}.
        let empty = ChainState::Zs(vec![]);
        let target = ChainState::Zs(vec![Symbol::C(0), Symbol::ExS(0)]);
        let p_fwd = transition_probability(m, &empty, &target, 4).unwrap();
        assert_abs_diff_eq!(0.25 * p_fwd, 0.025, epsilon = 1e-15);
        assert_abs_diff_eq!(0.05 * 0.5, 0.025, epsilon = 1e-15);

        for state in enumerate_states(m, ChainKind::Zs, 3).unwrap() {
            let pi_from = ev.pi_detailed(&state).unwrap();
            let ChainState::Zs(w) = &state else { unreachable!() };
            for (next, p) in successors(m, &state, 6).unwrap().transitions {
                let ChainState::Zs(w2) = &next else { unreachable!() };
                let rev_from = ChainState::Zc(reverse_role_flip(w2));
                let rev_to = ChainState::Zc(reverse_role_flip(w));
                let p_rev =
                    transition_probability(m, &rev_from, &rev_to, 16).unwrap();
                let pi_to = ev.pi_detailed(&next).unwrap();
                assert_abs_diff_eq!(pi_from * p, pi_to * p_rev, epsilon = 1e-13);
            }
        }
    }
}
