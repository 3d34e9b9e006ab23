//! Turning approximate counts into a declared candidate.
//!
//! Each view carries point estimates plus a symmetric error `err` (zero for
//! randomized estimates) and a range `[n_lo, n_hi]` for the election size.
//! Threshold tests use `q = ⌊ε·n_lo⌋` rounded down to an even number: the
//! largest padding of paired ballots the target budget always allows.

use crate::election::{Candidate, CupNode, RuleId};
use crate::ratio::Ratio;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bounds {
    pub err: f64,
    pub n_lo: f64,
    pub n_hi: f64,
}

impl Bounds {
    pub fn exact(n: f64) -> Self {
        Bounds { err: 0.0, n_lo: n, n_hi: n }
    }

    fn even_budget(&self, eps: Ratio) -> f64 {
        let q = eps.floor_mul(self.n_lo.max(0.0).floor() as u64);
        (q - q % 2) as f64
    }

    /// `c` can be pushed over a strict majority by the even budget.
    fn clears_majority(&self, count: f64, eps: Ratio) -> bool {
        2.0 * (count - self.err) + self.even_budget(eps) > self.n_hi
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum RuleView {
    /// One score per candidate.
    Scores(Vec<f64>),
    /// `n[c*m + d]` ≈ voters preferring `c` to `d`.
    Pairs { n: Vec<f64>, bounds: Bounds },
    Runoff { plurality: Vec<f64>, pairs: Vec<f64> },
    /// `counts[c*m + (j-1)]` ≈ voters ranking `c` in the top `j`.
    Prefix { counts: Vec<f64>, bounds: Bounds },
}

/// Lowest index among the maxima.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

pub fn declare(rule: &RuleId, view: &RuleView, m: usize, eps: Ratio) -> Candidate {
    Candidate(match (rule, view) {
        (_, RuleView::Scores(s)) => argmax(s),
        (RuleId::Cup { bracket }, RuleView::Pairs { n, .. }) => {
            cup_walk(&CupNode::build(&bracket.leaves(m)), &|x, y| beats(n, m, x, y))
        }
        (_, RuleView::Pairs { n, bounds }) => {
            let wins: Vec<f64> = (0..m)
                .map(|c| (0..m).filter(|&d| d != c && bounds.clears_majority(n[c * m + d], eps)).count() as f64)
                .collect();
            argmax(&wins)
        }
        (_, RuleView::Runoff { plurality, pairs }) => {
            let (a, b) = top_two(plurality);
            if beats(pairs, m, a, b) {
                a
            } else {
                b
            }
        }
        (_, RuleView::Prefix { counts, bounds }) => {
            let at = |c: usize, j: usize| counts[c * m + j - 1];
            (1..=m)
                .find_map(|j| {
                    let hit: Vec<f64> =
                        (0..m).map(|c| if bounds.clears_majority(at(c, j), eps) { at(c, j) } else { f64::NEG_INFINITY }).collect();
                    hit.iter().any(|x| x.is_finite()).then(|| argmax(&hit))
                })
                .unwrap_or_else(|| argmax(&(0..m).map(|c| at(c, m)).collect::<Vec<_>>()))
        }
    })
}

/// `x` wins the head-to-head estimate; exact ties go to the lower id.
fn beats(n: &[f64], m: usize, x: usize, y: usize) -> bool {
    let (a, b) = (n[x * m + y], n[y * m + x]);
    a > b || (a == b && x < y)
}

pub fn cup_walk(node: &CupNode, beats: &dyn Fn(usize, usize) -> bool) -> usize {
    match node {
        CupNode::Leaf(c) => *c,
        CupNode::Match(l, r) => {
            let (x, y) = (cup_walk(l, beats), cup_walk(r, beats));
            if beats(x, y) {
                x
            } else {
                y
            }
        }
    }
}

/// Two highest scores, ties by lower id.
pub fn top_two(s: &[f64]) -> (usize, usize) {
    let a = argmax(s);
    let b = (0..s.len()).filter(|&i| i != a).fold(None::<usize>, |best, i| match best {
        Some(j) if s[j] >= s[i] => Some(j),
        _ => Some(i),
    });
    (a, b.expect("at least two candidates"))
}
