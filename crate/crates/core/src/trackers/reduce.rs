//! Ballot-to-item reductions feeding the frequency trackers.

use crate::election::{check_kind, Ballot, ElectionError, RuleId};
use std::fmt;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ReductionItem {
    Candidate(usize),
    /// `(winner, loser)`: the voter prefers the first candidate.
    Pair(usize, usize),
    /// Candidate `c` sits in block `j` of size `2^i` on the padded ballot.
    Bucklin { c: usize, i: u32, j: usize },
}

impl fmt::Display for ReductionItem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ReductionItem::Candidate(c) => write!(f, "{c}"),
            ReductionItem::Pair(c, d) => write!(f, "({c},{d})"),
            ReductionItem::Bucklin { c, i, j } => write!(f, "({c},{i},{j})"),
        }
    }
}

/// Roster size after padding to a power of two with dummy candidates.
pub fn padded_size(m: usize) -> usize {
    m.next_power_of_two().max(2)
}

pub fn log2_exact(p: usize) -> u32 {
    p.trailing_zeros()
}

/// Dense index of an item inside a tracker's universe.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ItemSpace {
    pub m: usize,
}

impl ItemSpace {
    pub fn candidates(&self) -> usize {
        self.m
    }

    pub fn pairs(&self) -> usize {
        self.m * self.m
    }

    pub fn bucklin(&self) -> usize {
        let big = padded_size(self.m);
        big * log2_exact(big) as usize * big
    }

    pub fn index(&self, item: ReductionItem) -> usize {
        match item {
            ReductionItem::Candidate(c) => c,
            ReductionItem::Pair(c, d) => c * self.m + d,
            ReductionItem::Bucklin { c, i, j } => {
                let big = padded_size(self.m);
                (c * log2_exact(big) as usize + i as usize) * big + j
            }
        }
    }
}

/// Items one ballot contributes, with multiplicities folded into weights.
///
/// Plurality, t-Approval and Approval emit each approved candidate; Borda
/// emits the candidate at position `j` (1-based) `m − j` times; the pairwise
/// rules emit every ordered preferred pair; Bucklin pads the ranking with
/// dummies and emits `(c, i, ⌊(ℓ−1)/2^i⌋)` for every candidate at position `ℓ`.
pub fn reduce_weighted(rule: &RuleId, ballot: &Ballot, m: usize) -> Result<Vec<(ReductionItem, u64)>, ElectionError> {
    check_kind(rule, ballot.kind())?;
    if let Some(t) = rule.approval_size() {
        if ballot.ids().len() != t {
            return Err(ElectionError::BallotSize { rule: rule.name(), expected: t, found: ballot.ids().len() });
        }
    }
    let ids = ballot.ids();
    Ok(match rule {
        RuleId::Plurality | RuleId::TApproval { .. } | RuleId::Approval => {
            ids.iter().map(|&c| (ReductionItem::Candidate(c), 1)).collect()
        }
        RuleId::Borda => ids
            .iter()
            .enumerate()
            .filter(|(j, _)| j + 1 < m)
            .map(|(j, &c)| (ReductionItem::Candidate(c), (m - 1 - j) as u64))
            .collect(),
        RuleId::Copeland | RuleId::Condorcet | RuleId::Cup { .. } | RuleId::Runoff => pairs_of(ids),
        RuleId::Bucklin => bucklin_items(ids, m).into_iter().map(|x| (x, 1)).collect(),
    })
}

/// The reduction with every weight expanded into repeated items.
pub fn reduce_ballot(rule: &RuleId, ballot: &Ballot, m: usize) -> Result<Vec<ReductionItem>, ElectionError> {
    Ok(reduce_weighted(rule, ballot, m)?
        .into_iter()
        .flat_map(|(x, w)| std::iter::repeat(x).take(w as usize))
        .collect())
}

pub fn pairs_of(order: &[usize]) -> Vec<(ReductionItem, u64)> {
    let mut out = Vec::with_capacity(order.len() * order.len().saturating_sub(1) / 2);
    for (a, &c) in order.iter().enumerate() {
        for &d in &order[a + 1..] {
            out.push((ReductionItem::Pair(c, d), 1));
        }
    }
    out
}

pub fn bucklin_items(order: &[usize], m: usize) -> Vec<ReductionItem> {
    let big = padded_size(m);
    let levels = log2_exact(big);
    let padded = order.iter().copied().chain(m..big);
    let mut out = Vec::with_capacity(big * levels as usize);
    for (pos, c) in padded.enumerate() {
        for i in 0..levels {
            out.push(ReductionItem::Bucklin { c, i, j: pos >> i });
        }
    }
    out
}

/// `(i, j)` terms whose block counts add up to the top-`k` count, `1 ≤ k < M`.
/// Each set bit `i` of `k` contributes block `⌊k/2^i⌋ − 1`.
pub fn bucklin_terms(k: usize) -> Vec<(u32, usize)> {
    (0..usize::BITS).filter(|&i| k >> i & 1 == 1).map(|i| (i, (k >> i) - 1)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::election::{BallotKind, Election};
    use rand::seq::SliceRandom;
    use rand::SeedableRng;

    fn names(items: &[ReductionItem], letters: &str) -> String {
        let l: Vec<char> = letters.chars().collect();
        items
            .iter()
            .map(|x| match x {
                ReductionItem::Candidate(c) => l[*c].to_string(),
                other => other.to_string(),
            })
            .collect::<Vec<_>>()
            .join(",")
    }

    #[test]
    fn three_approval_golden() {
        let rule = RuleId::TApproval { t: 3 };
        let mut items = reduce_ballot(&rule, &Ballot::approval([0, 1, 2]), 6).unwrap();
        items.extend(reduce_ballot(&rule, &Ballot::approval([0, 1, 3]), 6).unwrap());
        assert_eq!(names(&items, "abcdef"), "a,b,c,a,b,d");
    }

    #[test]
    fn borda_golden() {
        let mut items = reduce_ballot(&RuleId::Borda, &Ballot::ordinal([0, 1, 2]), 3).unwrap();
        items.extend(reduce_ballot(&RuleId::Borda, &Ballot::ordinal([2, 0, 1]), 3).unwrap());
        assert_eq!(names(&items, "abc"), "a,a,b,c,c,a");
    }

    #[test]
    fn pairs_golden() {
        let items = reduce_ballot(&RuleId::Copeland, &Ballot::ordinal([0, 1, 2]), 3).unwrap();
        assert_eq!(items, vec![ReductionItem::Pair(0, 1), ReductionItem::Pair(0, 2), ReductionItem::Pair(1, 2)]);
    }

    #[test]
    fn bucklin_golden() {
        let items = reduce_ballot(&RuleId::Bucklin, &Ballot::ordinal([0, 1, 2, 3]), 4).unwrap();
        let s: Vec<String> = items
            .iter()
            .map(|x| match x {
                ReductionItem::Bucklin { c, i, j } => format!("(c{},{i},{j})", c + 1),
                _ => unreachable!(),
            })
            .collect();
        assert_eq!(s.join(","), "(c1,0,0),(c1,1,0),(c2,0,1),(c2,1,0),(c3,0,2),(c3,1,1),(c4,0,3),(c4,1,1)");
    }

    #[test]
    fn item_counts() {
        for m in 2..=8usize {
            let ord = Ballot::ordinal((0..m).rev());
            assert_eq!(reduce_ballot(&RuleId::Borda, &ord, m).unwrap().len(), m * (m - 1) / 2);
            assert_eq!(reduce_ballot(&RuleId::Copeland, &ord, m).unwrap().len(), m * (m - 1) / 2);
            let big = padded_size(m);
            assert_eq!(reduce_ballot(&RuleId::Bucklin, &ord, m).unwrap().len(), big * log2_exact(big) as usize);
        }
        assert_eq!(reduce_ballot(&RuleId::TApproval { t: 2 }, &Ballot::approval([1, 3]), 5).unwrap().len(), 2);
        assert!(reduce_ballot(&RuleId::TApproval { t: 2 }, &Ballot::approval([1]), 5).is_err());
        assert!(reduce_ballot(&RuleId::Borda, &Ballot::approval([1]), 5).is_err());
    }

    #[test]
    fn bucklin_decomposition_matches_prefix_counts() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for m in [2usize, 3, 4, 5, 8] {
            let space = ItemSpace { m };
            let mut ballots = Vec::new();
            for _ in 0..25 {
                let mut p: Vec<usize> = (0..m).collect();
                p.shuffle(&mut rng);
                ballots.push(Ballot::ordinal(p));
            }
            let e = Election::from_ballots(m, BallotKind::Ordinal, ballots.clone()).unwrap();
            let tally = e.tally();
            let mut f = vec![0u64; space.bucklin()];
            for b in &ballots {
                for x in reduce_ballot(&RuleId::Bucklin, b, m).unwrap() {
                    f[space.index(x)] += 1;
                }
            }
            for c in 0..m {
                for k in 1..m {
                    let sum: u64 = bucklin_terms(k).into_iter().map(|(i, j)| f[space.index(ReductionItem::Bucklin { c, i, j })]).sum();
                    assert_eq!(sum, tally.prefix_count(c, k), "m={m} c={c} k={k}");
                }
            }
        }
    }
}
