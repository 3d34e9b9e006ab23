//! One-shot exchanges run at checkpoints.
//!
//! Sites round their local values to the nearest multiple of a granularity
//! `g` (half-up) and send the multiple's index; the center sums. With `k`
//! sites the sum of each value is off by at most `k·g/2`. A granularity of
//! one is lossless.

use super::declare::{declare, Bounds, RuleView};
use crate::election::{bits_for_levels, Candidate, CupNode, RuleId, Tally};
use crate::harness::count_bits;
use crate::ratio::Ratio;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum StaticQuery {
    /// Approval or Borda score of every candidate.
    Scores,
    /// `N(a, b)` for each listed pair.
    Pairs(Vec<(usize, usize)>),
    /// Top-`j` count of every candidate.
    Prefix(usize),
    /// Exact `N(a, b)` and `N(b, a)`.
    HeadToHead(usize, usize),
}

impl StaticQuery {
    pub fn bits(&self, m: usize) -> u64 {
        let id = bits_for_levels(m as u64);
        2 + match self {
            StaticQuery::Scores => 0,
            StaticQuery::Pairs(p) => p.len() as u64 * 2 * id,
            StaticQuery::Prefix(_) => bits_for_levels(m as u64 + 1),
            StaticQuery::HeadToHead(..) => 2 * id,
        }
    }
}

pub enum Step {
    Ask(StaticQuery),
    Done(Candidate),
}

/// Rounding step for `rule` at precision `eps` with `k` sites and exact total `n`.
pub fn granularity(rule: &RuleId, m: usize, k: usize, eps: Ratio, n: u64) -> f64 {
    let base = eps.as_f64() * n as f64 / k as f64;
    let raw = match rule {
        RuleId::Plurality | RuleId::Approval => base,
        RuleId::TApproval { .. } | RuleId::Cup { .. } => base / 2.0,
        RuleId::Borda => base * m as f64 / 4.0,
        RuleId::Copeland | RuleId::Condorcet | RuleId::Bucklin => base / 4.0,
        RuleId::Runoff => 1.0,
    };
    raw.max(1.0)
}

fn round_index(v: u64, g: f64) -> u64 {
    if g <= 1.0 {
        v
    } else {
        (v as f64 / g + 0.5).floor() as u64
    }
}

/// Largest raw value a site may hold for this query.
fn value_cap(rule: &RuleId, q: &StaticQuery, m: usize, n: u64) -> u64 {
    match (rule, q) {
        (RuleId::Borda, StaticQuery::Scores) => n * (m as u64 - 1),
        _ => n,
    }
}

/// A site's reply: rounded indices (or exact values) plus their bit cost.
pub fn answer(tally: &Tally, q: &StaticQuery, rule: &RuleId, k: usize, eps: Ratio, n: u64) -> (Vec<u64>, u64) {
    let m = tally.m();
    let raw: Vec<u64> = match q {
        StaticQuery::Scores if *rule == RuleId::Borda => (0..m).map(|c| tally.borda_score(c)).collect(),
        StaticQuery::Scores => (0..m).map(|c| tally.score(c)).collect(),
        StaticQuery::Pairs(p) => p.iter().map(|&(a, b)| tally.pair(a, b)).collect(),
        StaticQuery::Prefix(j) => (0..m).map(|c| tally.prefix_count(c, *j)).collect(),
        StaticQuery::HeadToHead(a, b) => {
            let v = vec![tally.pair(*a, *b), tally.pair(*b, *a)];
            let bits = v.iter().map(|&x| count_bits(x)).sum();
            return (v, bits);
        }
    };
    let g = granularity(rule, m, k, eps, n);
    let levels = (value_cap(rule, q, m, n) as f64 / g).floor() as u64 + 2;
    let per = bits_for_levels(levels);
    (raw.iter().map(|&v| round_index(v, g)).collect(), per * raw.len() as u64)
}

#[derive(Clone, Debug)]
struct CupArena {
    nodes: Vec<ArenaNode>,
}

#[derive(Clone, Debug)]
struct ArenaNode {
    children: Option<(usize, usize)>,
    winner: Option<usize>,
}

impl CupArena {
    fn build(tree: &CupNode) -> Self {
        fn go(node: &CupNode, out: &mut Vec<ArenaNode>) -> usize {
            match node {
                CupNode::Leaf(c) => {
                    out.push(ArenaNode { children: None, winner: Some(*c) });
                    out.len() - 1
                }
                CupNode::Match(l, r) => {
                    let (a, b) = (go(l, out), go(r, out));
                    out.push(ArenaNode { children: Some((a, b)), winner: None });
                    out.len() - 1
                }
            }
        }
        let mut nodes = Vec::new();
        go(tree, &mut nodes);
        CupArena { nodes }
    }

    fn root(&self) -> usize {
        self.nodes.len() - 1
    }

    /// Undecided matches whose two players are known.
    fn ready(&self) -> Vec<(usize, usize, usize)> {
        self.nodes
            .iter()
            .enumerate()
            .filter_map(|(i, node)| {
                let (a, b) = node.children?;
                if node.winner.is_some() {
                    return None;
                }
                Some((i, self.nodes[a].winner?, self.nodes[b].winner?))
            })
            .collect()
    }
}

#[derive(Clone, Debug)]
enum Stage {
    Scores,
    AllPairs(Vec<(usize, usize)>),
    Cup { arena: CupArena, asked: Vec<(usize, usize, usize)> },
    Bucklin { lo: usize, hi: usize, asked: usize, known: Option<(usize, Vec<f64>)> },
    HeadToHead(usize, usize),
}

/// Center-side state of one static exchange.
#[derive(Clone, Debug)]
pub struct StaticPlan {
    rule: RuleId,
    m: usize,
    eps: Ratio,
    n: u64,
    gran: f64,
    err: f64,
    stage: Stage,
}

impl StaticPlan {
    /// Plan computing an `eps`-winner of the election with exact total `n`.
    pub fn new(rule: &RuleId, m: usize, k: usize, eps: Ratio, n: u64) -> Self {
        let gran = granularity(rule, m, k, eps, n);
        let err = if gran <= 1.0 { 0.0 } else { k as f64 * gran / 2.0 };
        let stage = match rule {
            RuleId::Plurality | RuleId::TApproval { .. } | RuleId::Approval | RuleId::Borda => Stage::Scores,
            RuleId::Copeland | RuleId::Condorcet => {
                Stage::AllPairs((0..m).flat_map(|a| (a + 1..m).map(move |b| (a, b))).collect())
            }
            RuleId::Cup { bracket } => {
                Stage::Cup { arena: CupArena::build(&CupNode::build(&bracket.leaves(m))), asked: Vec::new() }
            }
            RuleId::Bucklin => Stage::Bucklin { lo: 1, hi: m, asked: 0, known: None },
            RuleId::Runoff => Stage::HeadToHead(0, 1.min(m - 1)),
        };
        StaticPlan { rule: rule.clone(), m, eps, n, gran, err, stage }
    }

    /// Exact head-to-head between two finalists.
    pub fn head_to_head(m: usize, a: usize, b: usize) -> Self {
        StaticPlan {
            rule: RuleId::Runoff,
            m,
            eps: Ratio::ZERO,
            n: 0,
            gran: 1.0,
            err: 0.0,
            stage: Stage::HeadToHead(a, b),
        }
    }

    pub fn granularity(&self) -> f64 {
        self.gran
    }

    fn bounds(&self) -> Bounds {
        Bounds { err: self.err, n_lo: self.n as f64, n_hi: self.n as f64 }
    }

    pub fn first_query(&mut self) -> StaticQuery {
        match &mut self.stage {
            Stage::Scores => StaticQuery::Scores,
            Stage::AllPairs(p) => StaticQuery::Pairs(p.clone()),
            Stage::Cup { arena, asked } => {
                *asked = arena.ready();
                StaticQuery::Pairs(asked.iter().map(|&(_, a, b)| (a, b)).collect())
            }
            Stage::Bucklin { lo, hi, asked, .. } => {
                *asked = (*lo + *hi) / 2;
                StaticQuery::Prefix(*asked)
            }
            Stage::HeadToHead(a, b) => StaticQuery::HeadToHead(*a, *b),
        }
    }

    /// Consumes the summed replies of all sites.
    pub fn absorb(&mut self, sums: &[u64]) -> Step {
        let (m, n, g) = (self.m, self.n as f64, self.gran);
        let vals: Vec<f64> = sums.iter().map(|&s| s as f64 * g).collect();
        let bounds = self.bounds();
        match &mut self.stage {
            Stage::Scores => Step::Done(declare(&self.rule, &RuleView::Scores(vals), m, self.eps)),
            Stage::AllPairs(pairs) => {
                let mut full = vec![0.0; m * m];
                for (&(a, b), &v) in pairs.iter().zip(&vals) {
                    full[a * m + b] = v;
                    full[b * m + a] = n - v;
                }
                Step::Done(declare(&self.rule, &RuleView::Pairs { n: full, bounds }, m, self.eps))
            }
            Stage::Cup { arena, asked } => {
                for (&(node, a, b), &v) in asked.iter().zip(&vals) {
                    let a_wins = 2.0 * v > n || (2.0 * v == n && a < b);
                    arena.nodes[node].winner = Some(if a_wins { a } else { b });
                }
                let root = arena.root();
                if let Some(w) = arena.nodes[root].winner {
                    return Step::Done(Candidate(w));
                }
                *asked = arena.ready();
                Step::Ask(StaticQuery::Pairs(asked.iter().map(|&(_, a, b)| (a, b)).collect()))
            }
            Stage::Bucklin { lo, hi, asked, known } => {
                let j = *asked;
                let hit = (0..m).any(|c| 2.0 * (vals[c] - bounds.err) + even_budget(self.eps, self.n) > n);
                if hit {
                    *hi = j;
                    *known = Some((j, vals.clone()));
                } else {
                    *lo = j + 1;
                }
                if lo < hi {
                    *asked = (*lo + *hi) / 2;
                    return Step::Ask(StaticQuery::Prefix(*asked));
                }
                let finish = |v: &[f64], at: usize| {
                    // Columns before `at` can never clear the threshold.
                    let mut counts = vec![f64::NEG_INFINITY; m * m];
                    for c in 0..m {
                        for col in at..=m {
                            counts[c * m + col - 1] = v[c];
                        }
                    }
                    Step::Done(declare(&RuleId::Bucklin, &RuleView::Prefix { counts, bounds }, m, self.eps))
                };
                match known.take() {
                    Some((at, v)) if at == *hi => finish(&v, at),
                    _ if j == *hi || lo > hi => finish(&vals, j),
                    _ => {
                        *asked = *hi;
                        Step::Ask(StaticQuery::Prefix(*hi))
                    }
                }
            }
            Stage::HeadToHead(a, b) => {
                let (ab, ba) = (sums[0], sums[1]);
                Step::Done(Candidate(if ab > ba || (ab == ba && a < b) { *a } else { *b }))
            }
        }
    }
}

fn even_budget(eps: Ratio, n: u64) -> f64 {
    let q = eps.floor_mul(n);
    (q - q % 2) as f64
}
