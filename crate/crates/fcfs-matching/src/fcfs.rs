//! Deterministic FCFS matching of finite words, the FCFS-validity oracle,
//! the exchange transformation and time-reversal verification.

use crate::model::{MatchingModel, Side};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A finite window of the two type sequences. Position 0 of each word sits
/// at `base_index`, so windows of ℤ are representable.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ItemSequence {
    pub customer_word: Vec<usize>,
    pub server_word: Vec<usize>,
    pub base_index: i64,
}

impl ItemSequence {
    pub fn new(customer_word: Vec<usize>, server_word: Vec<usize>, base_index: i64) -> Self {
        ItemSequence { customer_word, server_word, base_index }
    }

    /// Builds a sequence from type labels.
    pub fn from_labels(
        model: &MatchingModel,
        customers: &[&str],
        servers: &[&str],
        base_index: i64,
    ) -> Result<Self, FcfsError> {
        let customer_word = customers
            .iter()
            .map(|l| {
                model.customer_index(l).ok_or_else(|| FcfsError::UnknownLabel {
                    side: Side::Customer,
                    label: l.to_string(),
                })
            })
            .collect::<Result<_, _>>()?;
        let server_word = servers
            .iter()
            .map(|l| {
                model.server_index(l).ok_or_else(|| FcfsError::UnknownLabel {
                    side: Side::Server,
                    label: l.to_string(),
                })
            })
            .collect::<Result<_, _>>()?;
        Ok(ItemSequence { customer_word, server_word, base_index })
    }

    pub fn n_customers(&self) -> usize {
        self.customer_word.len()
    }

    pub fn n_servers(&self) -> usize {
        self.server_word.len()
    }

    fn customer_offset(&self, m: i64) -> Option<usize> {
        let off = m - self.base_index;
        (0..self.customer_word.len() as i64).contains(&off).then_some(off as usize)
    }

    fn server_offset(&self, n: i64) -> Option<usize> {
        let off = n - self.base_index;
        (0..self.server_word.len() as i64).contains(&off).then_some(off as usize)
    }
}

/// A partial matching: links are absolute (customer position, server position)
/// pairs, kept sorted by customer position. Serializes as `[[m, n], ...]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Matching {
    links: Vec<(i64, i64)>,
}

impl Matching {
    pub fn from_links(mut links: Vec<(i64, i64)>) -> Self {
        links.sort_unstable();
        Matching { links }
    }

    pub fn links(&self) -> &[(i64, i64)] {
        &self.links
    }

    pub fn len(&self) -> usize {
        self.links.len()
    }

    pub fn is_empty(&self) -> bool {
        self.links.is_empty()
    }

    pub fn server_of(&self, m: i64) -> Option<i64> {
        self.links.iter().find(|&&(lm, _)| lm == m).map(|&(_, n)| n)
    }

    pub fn customer_of(&self, n: i64) -> Option<i64> {
        self.links.iter().find(|&&(_, ln)| ln == n).map(|&(m, _)| m)
    }
}

#[derive(Debug, Error)]
pub enum FcfsError {
    #[error("matching link ({m}, {n}) is out of range")]
    OutOfRange { m: i64, n: i64 },
    #[error("expected a perfect matching of equal-length words")]
    NotPerfect,
    #[error("unknown {side} label `{label}`")]
    UnknownLabel { side: Side, label: String },
}

/// Computes the unique complete FCFS matching of the finite words by the
/// server-by-server scan, then runs the symmetric customer pass to certify
/// completeness. Unmatched items are recoverable via [`unmatched_positions`].
pub fn fcfs_match_finite(model: &MatchingModel, seq: &ItemSequence) -> Matching {
    let mut c_matched = vec![false; seq.n_customers()];
    let mut s_matched = vec![false; seq.n_servers()];
    let mut links = Vec::new();
    for (no, &sj) in seq.server_word.iter().enumerate() {
        for (mo, &ci) in seq.customer_word.iter().enumerate() {
            if !c_matched[mo] && model.is_edge(ci, sj) {
                c_matched[mo] = true;
                s_matched[no] = true;
                links.push((seq.base_index + mo as i64, seq.base_index + no as i64));
                break;
            }
        }
    }
    // Completion pass from the customer side. The server scan already leaves
    // no compatible unmatched pair, so this never adds a link.
    for (mo, &ci) in seq.customer_word.iter().enumerate() {
        if c_matched[mo] {
            continue;
        }
        for (no, &sj) in seq.server_word.iter().enumerate() {
            if !s_matched[no] && model.is_edge(ci, sj) {
                debug_assert!(false, "server pass left a compatible unmatched pair");
                c_matched[mo] = true;
                s_matched[no] = true;
                links.push((seq.base_index + mo as i64, seq.base_index + no as i64));
                break;
            }
        }
    }
    Matching::from_links(links)
}

/// Pair-by-pair construction: at stage k the new customer scans previously
/// unmatched servers, the new server scans previously unmatched customers,
/// and the two newcomers match each other if both failed and are compatible.
pub fn fcfs_match_pair_by_pair(model: &MatchingModel, seq: &ItemSequence) -> Matching {
    let (m_len, n_len) = (seq.n_customers(), seq.n_servers());
    let mut c_matched = vec![false; m_len];
    let mut s_matched = vec![false; n_len];
    let mut links = Vec::new();
    for k in 0..m_len.max(n_len) {
        let mut k_customer_link = None;
        if k < m_len {
            let ci = seq.customer_word[k];
            for no in 0..k.min(n_len) {
                if !s_matched[no] && model.is_edge(ci, seq.server_word[no]) {
                    k_customer_link = Some(no);
                    break;
                }
            }
        }
        let mut k_server_link = None;
        if k < n_len {
            let sj = seq.server_word[k];
            for mo in 0..k.min(m_len) {
                if !c_matched[mo] && model.is_edge(seq.customer_word[mo], sj) {
                    k_server_link = Some(mo);
                    break;
                }
            }
        }
        if let Some(no) = k_customer_link {
            c_matched[k] = true;
            s_matched[no] = true;
            links.push((k as i64, no as i64));
        }
        if let Some(mo) = k_server_link {
            c_matched[mo] = true;
            s_matched[k] = true;
            links.push((mo as i64, k as i64));
        }
        // Both newcomers still unmatched: they match each other if compatible.
        if k < m_len
            && k < n_len
            && !c_matched[k]
            && !s_matched[k]
            && model.is_edge(seq.customer_word[k], seq.server_word[k])
        {
            c_matched[k] = true;
            s_matched[k] = true;
            links.push((k as i64, k as i64));
        }
    }
    Matching::from_links(
        links.into_iter().map(|(m, n)| (seq.base_index + m, seq.base_index + n)).collect(),
    )
}

/// Customer-by-customer construction, the mirror of the server scan.
pub fn fcfs_match_customer_by_customer(model: &MatchingModel, seq: &ItemSequence) -> Matching {
    let mirrored = model.mirrored();
    let swapped = ItemSequence {
        customer_word: seq.server_word.clone(),
        server_word: seq.customer_word.clone(),
        base_index: seq.base_index,
    };
    let links = fcfs_match_finite(&mirrored, &swapped)
        .links()
        .iter()
        .map(|&(n, m)| (m, n))
        .collect();
    Matching::from_links(links)
}

/// Positions of unmatched customers and servers under the given matching.
pub fn unmatched_positions(seq: &ItemSequence, matching: &Matching) -> (Vec<i64>, Vec<i64>) {
    let mut c_matched = vec![false; seq.n_customers()];
    let mut s_matched = vec![false; seq.n_servers()];
    for &(m, n) in matching.links() {
        if let Some(mo) = seq.customer_offset(m) {
            c_matched[mo] = true;
        }
        if let Some(no) = seq.server_offset(n) {
            s_matched[no] = true;
        }
    }
    let customers = c_matched
        .iter()
        .enumerate()
        .filter(|(_, &m)| !m)
        .map(|(mo, _)| seq.base_index + mo as i64)
        .collect();
    let servers = s_matched
        .iter()
        .enumerate()
        .filter(|(_, &m)| !m)
        .map(|(no, _)| seq.base_index + no as i64)
        .collect();
    (customers, servers)
}

/// Brute-force oracle: true iff `matching` is a valid partial matching that
/// is complete and satisfies both FCFS clauses. Out-of-range links are errors.
pub fn verify_fcfs(
    model: &MatchingModel,
    seq: &ItemSequence,
    matching: &Matching,
) -> Result<bool, FcfsError> {
    let mut c_partner = vec![None; seq.n_customers()];
    let mut s_partner = vec![None; seq.n_servers()];
    for &(m, n) in matching.links() {
        let (mo, no) = match (seq.customer_offset(m), seq.server_offset(n)) {
            (Some(mo), Some(no)) => (mo, no),
            _ => return Err(FcfsError::OutOfRange { m, n }),
        };
        // Conditions (i) and (ii): links are edges, items matched at most once.
        if !model.is_edge(seq.customer_word[mo], seq.server_word[no]) {
            return Ok(false);
        }
        if c_partner[mo].is_some() || s_partner[no].is_some() {
            return Ok(false);
        }
        c_partner[mo] = Some(no);
        s_partner[no] = Some(mo);
    }
    // Completeness: no compatible pair left unmatched.
    for (mo, &ci) in seq.customer_word.iter().enumerate() {
        if c_partner[mo].is_some() {
            continue;
        }
        for (no, &sj) in seq.server_word.iter().enumerate() {
            if s_partner[no].is_none() && model.is_edge(ci, sj) {
                return Ok(false);
            }
        }
    }
    // FCFS clauses: every earlier compatible item is matched to an earlier partner.
    for (mo, no) in c_partner.iter().enumerate() {
        let Some(no) = *no else { continue };
        let ci = seq.customer_word[mo];
        for l in 0..no {
            if model.is_edge(ci, seq.server_word[l]) && !matches!(s_partner[l], Some(k) if k < mo) {
                return Ok(false);
            }
        }
        let sj = seq.server_word[no];
        for k in 0..mo {
            if model.is_edge(seq.customer_word[k], sj) && !matches!(c_partner[k], Some(l) if l < no)
            {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// One slot of an exchanged line: either the original unmatched item, or the
/// partner's type brought over by the exchange (a server type on the customer
/// line, a customer type on the server line).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LineItem {
    Unmatched(usize),
    Exchanged(usize),
}

/// Result of the exchange transformation: matched positions carry the
/// partner's type, unmatched items stay in place, links are retained.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExchangedPath {
    pub customer_line: Vec<LineItem>,
    pub server_line: Vec<LineItem>,
    pub links: Matching,
    pub base_index: i64,
}

/// Exchanges each matched pair across the two lines: for a link (m,n) the
/// customer line holds s̃ᵐ = sⁿ and the server line holds c̃ⁿ = cᵐ.
pub fn exchange_transform(seq: &ItemSequence, matching: &Matching) -> ExchangedPath {
    let mut customer_line: Vec<LineItem> =
        seq.customer_word.iter().map(|&t| LineItem::Unmatched(t)).collect();
    let mut server_line: Vec<LineItem> =
        seq.server_word.iter().map(|&t| LineItem::Unmatched(t)).collect();
    for &(m, n) in matching.links() {
        let mo = seq.customer_offset(m).expect("link out of range");
        let no = seq.server_offset(n).expect("link out of range");
        customer_line[mo] = LineItem::Exchanged(seq.server_word[no]);
        server_line[no] = LineItem::Exchanged(seq.customer_word[mo]);
    }
    ExchangedPath { customer_line, server_line, links: matching.clone(), base_index: seq.base_index }
}

impl ExchangedPath {
    /// Undoes the exchange, returning the original sequences and links.
    pub fn invert(&self) -> (ItemSequence, Matching) {
        let mut customer_word: Vec<usize> = self
            .customer_line
            .iter()
            .map(|it| match it {
                LineItem::Unmatched(t) | LineItem::Exchanged(t) => *t,
            })
            .collect();
        let mut server_word: Vec<usize> = self
            .server_line
            .iter()
            .map(|it| match it {
                LineItem::Unmatched(t) | LineItem::Exchanged(t) => *t,
            })
            .collect();
        for &(m, n) in self.links.links() {
            let mo = (m - self.base_index) as usize;
            let no = (n - self.base_index) as usize;
            let LineItem::Exchanged(s_type) = self.customer_line[mo] else {
                panic!("linked position {m} is not exchanged");
            };
            let LineItem::Exchanged(c_type) = self.server_line[no] else {
                panic!("linked position {n} is not exchanged");
            };
            customer_word[mo] = c_type;
            server_word[no] = s_type;
        }
        (
            ItemSequence { customer_word, server_word, base_index: self.base_index },
            self.links.clone(),
        )
    }
}

/// Exchanges a perfect matching, reverses both lines, recomputes the FCFS
/// matching of the reversed words, and compares against the retained links
/// under index reversal. True iff they coincide.
pub fn reversed_rematch_check(
    model: &MatchingModel,
    seq: &ItemSequence,
    matching: &Matching,
) -> Result<bool, FcfsError> {
    let m_len = seq.n_customers();
    if seq.n_servers() != m_len || matching.len() != m_len {
        return Err(FcfsError::NotPerfect);
    }
    let exchanged = exchange_transform(seq, matching);
    let last = seq.base_index + m_len as i64 - 1;

    // After a perfect exchange the customer line holds server types and the
    // server line holds customer types; reversing both yields the words to
    // rematch in reversed time.
    let rev_customers: Vec<usize> = exchanged
        .server_line
        .iter()
        .rev()
        .map(|it| match it {
            LineItem::Exchanged(t) => *t,
            LineItem::Unmatched(_) => unreachable!("perfect matching"),
        })
        .collect();
    let rev_servers: Vec<usize> = exchanged
        .customer_line
        .iter()
        .rev()
        .map(|it| match it {
            LineItem::Exchanged(t) => *t,
            LineItem::Unmatched(_) => unreachable!("perfect matching"),
        })
        .collect();
    let rev_seq = ItemSequence::new(rev_customers, rev_servers, seq.base_index);
    let rematched = fcfs_match_finite(model, &rev_seq);

    let expected = Matching::from_links(
        matching.links().iter().map(|&(m, n)| (last - n + seq.base_index, last - m + seq.base_index)).collect(),
    );
    Ok(rematched == expected)
}

/// Absolute positions p (base + 1 ..= base + min(M,N)) at which the
/// pair-by-pair state is empty: everything strictly before p is matched
/// within the prefix and no link crosses p. Blocks between successive
/// boundaries are perfectly matched.
pub fn decompose_perfect_blocks(seq: &ItemSequence, matching: &Matching) -> Vec<i64> {
    let t_max = seq.n_customers().min(seq.n_servers());
    let mut c_partner: Vec<Option<i64>> = vec![None; seq.n_customers()];
    let mut s_partner: Vec<Option<i64>> = vec![None; seq.n_servers()];
    for &(m, n) in matching.links() {
        if let Some(mo) = seq.customer_offset(m) {
            c_partner[mo] = Some(n);
        }
        if let Some(no) = seq.server_offset(n) {
            s_partner[no] = Some(m);
        }
    }
    let mut boundaries = Vec::new();
    // Each link crossing a stage is counted open at its earlier endpoint's
    // stage and closed at its later endpoint's; same-stage links never open.
    let mut open = 0i64;
    for t in 1..=t_max {
        let o = (t - 1) as i64;
        match c_partner[o as usize] {
            None => break,
            Some(n) => {
                let no = n - seq.base_index;
                if no > o {
                    open += 1;
                } else if no < o {
                    open -= 1;
                }
            }
        }
        match s_partner[o as usize] {
            None => break,
            Some(m) => {
                let mo = m - seq.base_index;
                if mo > o {
                    open += 1;
                } else if mo < o {
                    open -= 1;
                }
            }
        }
        if open == 0 {
            boundaries.push(seq.base_index + t as i64);
        }
    }
    boundaries
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tests::nn;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn seq(model: &MatchingModel, c: &[&str], s: &[&str]) -> ItemSequence {
        ItemSequence::from_labels(model, c, s, 0).unwrap()
    }

    fn random_words(rng: &mut ChaCha12Rng, m_len: usize, n_len: usize) -> ItemSequence {
        ItemSequence::new(
            (0..m_len).map(|_| rng.gen_range(0..3)).collect(),
            (0..n_len).map(|_| rng.gen_range(0..3)).collect(),
            0,
        )
    }

    #[test]
    fn single_pair_matches() {
        let m = nn();
        let s1 = seq(&m, &["c3"], &["s1"]);
        let matching = fcfs_match_finite(&m, &s1);
        assert_eq!(matching.links(), &[(0, 0)]);
        assert!(verify_fcfs(&m, &s1, &matching).unwrap());
    }

    #[test]
    fn lemma_path_sequence_is_perfect() {
        // Incompatible pair c3, s3 followed by the connecting path items
        // c2, c1 / s1, s2 yields a perfect 3-link matching.
        let m = nn();
        let s = seq(&m, &["c3", "c2", "c1"], &["s3", "s1", "s2"]);
        let matching = fcfs_match_finite(&m, &s);
        assert_eq!(matching.links(), &[(0, 1), (1, 2), (2, 0)]);
        assert!(verify_fcfs(&m, &s, &matching).unwrap());
        let (uc, us) = unmatched_positions(&s, &matching);
        assert!(uc.is_empty() && us.is_empty());
    }

    #[test]
    fn construction_orders_agree() {
        let m = nn();
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        for _ in 0..200 {
            let s = random_words(&mut rng, 12, 12);
            let a = fcfs_match_finite(&m, &s);
            let b = fcfs_match_pair_by_pair(&m, &s);
            let c = fcfs_match_customer_by_customer(&m, &s);
            assert_eq!(a, b, "pair-by-pair disagrees on {s:?}");
            assert_eq!(a, c, "customer-by-customer disagrees on {s:?}");
            assert!(verify_fcfs(&m, &s, &a).unwrap());
        }
    }

    #[test]
    fn construction_orders_agree_unequal_lengths() {
        let m = nn();
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        for _ in 0..200 {
            let m_len = rng.gen_range(0..10);
            let n_len = rng.gen_range(0..10);
            let s = random_words(&mut rng, m_len, n_len);
            let a = fcfs_match_finite(&m, &s);
            let b = fcfs_match_pair_by_pair(&m, &s);
            let c = fcfs_match_customer_by_customer(&m, &s);
            assert_eq!(a, b);
            assert_eq!(a, c);
            assert!(verify_fcfs(&m, &s, &a).unwrap());
        }
    }

    #[test]
    fn oracle_rejects_broken_matchings() {
        let m = nn();
        let s = seq(&m, &["c2", "c1", "c2"], &["s2", "s1", "s2"]);
        let matching = fcfs_match_finite(&m, &s);
        assert!(verify_fcfs(&m, &s, &matching).unwrap());

        // Swapping the partners of two links breaks FCFS order.
        let links = matching.links();
        assert!(links.len() >= 2);
        let mut swapped = links.to_vec();
        let (a, b) = (swapped[0], swapped[1]);
        swapped[0] = (a.0, b.1);
        swapped[1] = (b.0, a.1);
        let swapped = Matching::from_links(swapped);
        if swapped != matching {
            assert!(!verify_fcfs(&m, &s, &swapped).unwrap());
        }

        // Empty matching on words with a compatible pair is incomplete.
        assert!(!verify_fcfs(&m, &s, &Matching::from_links(vec![])).unwrap());

        // Out-of-range link is an error.
        assert!(verify_fcfs(&m, &s, &Matching::from_links(vec![(0, 99)])).is_err());
    }

    #[test]
    fn exchange_swaps_single_pair() {
        let m = nn();
        let s = seq(&m, &["c3"], &["s1"]);
        let matching = fcfs_match_finite(&m, &s);
        let ex = exchange_transform(&s, &matching);
        assert_eq!(ex.customer_line, vec![LineItem::Exchanged(0)]);
        assert_eq!(ex.server_line, vec![LineItem::Exchanged(2)]);
    }

    #[test]
    fn exchange_is_an_involution() {
        let m = nn();
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        for _ in 0..100 {
            let s = random_words(&mut rng, 9, 7);
            let matching = fcfs_match_finite(&m, &s);
            let ex = exchange_transform(&s, &matching);
            let (back, links) = ex.invert();
            assert_eq!(back, s);
            assert_eq!(links, matching);
        }
    }

    #[test]
    fn exchange_preserves_type_multisets_per_line() {
        let m = nn();
        // A perfectly matched block: exchanged customer line is a permutation
        // of the server word and vice versa.
        let s = seq(&m, &["c3", "c2", "c1"], &["s3", "s1", "s2"]);
        let matching = fcfs_match_finite(&m, &s);
        let ex = exchange_transform(&s, &matching);
        let mut line_types: Vec<usize> = ex
            .customer_line
            .iter()
            .map(|it| match it {
                LineItem::Exchanged(t) => *t,
                LineItem::Unmatched(_) => panic!("perfect block"),
            })
            .collect();
        line_types.sort_unstable();
        let mut servers = s.server_word.clone();
        servers.sort_unstable();
        assert_eq!(line_types, servers);
    }

    #[test]
    fn reversed_rematch_holds_on_blocks() {
        let m = nn();
        let s = seq(&m, &["c3"], &["s1"]);
        let matching = fcfs_match_finite(&m, &s);
        assert!(reversed_rematch_check(&m, &s, &matching).unwrap());

        let s = seq(&m, &["c3", "c2", "c1"], &["s3", "s1", "s2"]);
        let matching = fcfs_match_finite(&m, &s);
        assert!(reversed_rematch_check(&m, &s, &matching).unwrap());

        // Crossing 2-block.
        let s = seq(&m, &["c1", "c2"], &["s1", "s2"]);
        let matching = fcfs_match_finite(&m, &s);
        assert_eq!(matching.len(), 2);
        assert!(reversed_rematch_check(&m, &s, &matching).unwrap());
    }

    #[test]
    fn naive_reversal_differs_without_exchange() {
        // Witness that plain time reversal without the exchange step does not
        // reproduce the forward links.
        let m = nn();
        let s = seq(&m, &["c1", "c2"], &["s1", "s2"]);
        let forward = fcfs_match_finite(&m, &s);
        assert_eq!(forward.links(), &[(0, 1), (1, 0)]);

        let rev = ItemSequence::new(
            s.customer_word.iter().rev().copied().collect(),
            s.server_word.iter().rev().copied().collect(),
            0,
        );
        let naive = fcfs_match_finite(&m, &rev);
        let expected = Matching::from_links(
            forward.links().iter().map(|&(m_, n_)| (1 - n_, 1 - m_)).collect(),
        );
        assert_ne!(naive, expected);
    }

    #[test]
    fn rejects_non_perfect_reversal_input() {
        let m = nn();
        let s = seq(&m, &["c1"], &["s1"]);
        let matching = fcfs_match_finite(&m, &s);
        assert!(matching.is_empty());
        assert!(matches!(reversed_rematch_check(&m, &s, &matching), Err(FcfsError::NotPerfect)));
    }

    #[test]
    fn block_decomposition() {
        let m = nn();
        let s = seq(&m, &["c3"], &["s1"]);
        let matching = fcfs_match_finite(&m, &s);
        assert_eq!(decompose_perfect_blocks(&s, &matching), vec![1]);

        // Concatenating two known perfect blocks yields exactly their boundaries.
        let s = seq(&m, &["c3", "c1", "c2"], &["s1", "s2", "s2"]);
        let matching = fcfs_match_finite(&m, &s);
        assert_eq!(decompose_perfect_blocks(&s, &matching), vec![1, 2, 3]);

        let s = seq(&m, &["c1", "c2", "c3"], &["s1", "s2", "s1"]);
        let matching = fcfs_match_finite(&m, &s);
        // c1 takes s2 (stage 2), c2 takes s1, c3 takes the second s1.
        assert_eq!(decompose_perfect_blocks(&s, &matching), vec![2, 3]);

        // Unmatched prefix item blocks all boundaries.
        let s = seq(&m, &["c3", "c3"], &["s2", "s1"]);
        let matching = fcfs_match_finite(&m, &s);
        assert_eq!(decompose_perfect_blocks(&s, &matching), Vec::<i64>::new());
    }

    #[test]
    fn blocks_line_up_under_exchange_and_reversal() {
        let m = nn();
        let mut rng = ChaCha12Rng::seed_from_u64(10);
        let mut checked = 0;
        for _ in 0..400 {
            let s = random_words(&mut rng, 10, 10);
            let matching = fcfs_match_finite(&m, &s);
            if matching.len() != 10 {
                continue;
            }
            checked += 1;
            let boundaries = decompose_perfect_blocks(&s, &matching);
            assert!(reversed_rematch_check(&m, &s, &matching).unwrap());

            let ex = exchange_transform(&s, &matching);
            let rev_seq = ItemSequence::new(
                ex.server_line
                    .iter()
                    .rev()
                    .map(|it| match it {
                        LineItem::Exchanged(t) => *t,
                        LineItem::Unmatched(_) => unreachable!(),
                    })
                    .collect(),
                ex.customer_line
                    .iter()
                    .rev()
                    .map(|it| match it {
                        LineItem::Exchanged(t) => *t,
                        LineItem::Unmatched(_) => unreachable!(),
                    })
                    .collect(),
                0,
            );
            let rev_matching = fcfs_match_finite(&m, &rev_seq);
            let rev_boundaries = decompose_perfect_blocks(&rev_seq, &rev_matching);
            // Boundary t in forward time corresponds to boundary 10 - t reversed.
            let mut mapped: Vec<i64> = boundaries.iter().map(|t| 10 - t).collect();
            mapped.retain(|&t| t > 0);
            mapped.push(10);
            mapped.sort_unstable();
            let mut expected = rev_boundaries.clone();
            expected.sort_unstable();
            assert_eq!(mapped, expected, "words {s:?}");
        }
        assert!(checked > 50, "too few perfect blocks sampled: {checked}");
    }

    #[test]
    fn monotonicity_under_prepended_customer() {
        let m = nn();
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        for _ in 0..300 {
            let s = random_words(&mut rng, 8, 8);
            let base = fcfs_match_finite(&m, &s);
            let (uc, us) = unmatched_positions(&s, &base);
            let (k, l) = (uc.len() as i64, us.len() as i64);
            let mut extended = s.clone();
            extended.customer_word.insert(0, rng.gen_range(0..3));
            let ext = fcfs_match_finite(&m, &extended);
            let (uc2, us2) = unmatched_positions(&extended, &ext);
            let (k2, l2) = (uc2.len() as i64, us2.len() as i64);
            assert!(
                (k2, l2) == (k + 1, l) || (k2, l2) == (k, l - 1),
                "({k},{l}) -> ({k2},{l2}) on {extended:?}"
            );
        }
    }

    #[test]
    fn subadditivity_under_concatenation() {
        let m = nn();
        let mut rng = ChaCha12Rng::seed_from_u64(12);
        for _ in 0..300 {
            let (a, b, c, d) = (
                rng.gen_range(0..8),
                rng.gen_range(0..8),
                rng.gen_range(0..8),
                rng.gen_range(0..8),
            );
            let left = random_words(&mut rng, a, b);
            let right = random_words(&mut rng, c, d);
            let mut whole = left.clone();
            whole.customer_word.extend_from_slice(&right.customer_word);
            whole.server_word.extend_from_slice(&right.server_word);

            let count = |s: &ItemSequence| {
                let matching = fcfs_match_finite(&m, s);
                let (uc, us) = unmatched_positions(s, &matching);
                (uc.len(), us.len())
            };
            let (k, l) = count(&whole);
            let (kp, lp) = count(&left);
            let (kq, lq) = count(&right);
            assert!(k <= kp + kq && l <= lp + lq);
        }
    }
}
