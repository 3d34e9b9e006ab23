//! Deciding whether a candidate is an ε-winner: exhaustive search on small
//! instances, closed-form decisions where one exists, witness constructions
//! that certify "yes", and necessary conditions that certify "no".

use super::{check_kind, Ballot, BallotKind, CupNode, Election, ElectionError, RuleId, Tally};
use crate::ratio::Ratio;
use serde::{Deserialize, Serialize};
use std::collections::BinaryHeap;

pub const EXACT_ORDINAL_MAX_M: usize = 4;
pub const EXACT_APPROVAL_MAX_M: usize = 6;
pub const EXACT_MAX_Q: u64 = 4;

/// A multiset of added ballots, stored as runs of identical ballots.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Witness {
    pub runs: Vec<(Ballot, u64)>,
}

impl Witness {
    pub fn len(&self) -> u64 {
        self.runs.iter().map(|r| r.1).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn ballots(&self) -> Vec<Ballot> {
        self.runs
            .iter()
            .flat_map(|(b, k)| std::iter::repeat(b.clone()).take(*k as usize))
            .collect()
    }

    fn apply(&self, t: &Tally) -> Tally {
        let mut t = t.clone();
        for (b, k) in &self.runs {
            t.add_many(b, *k);
        }
        t
    }

    /// `len` ballots taken cyclically from `pattern`.
    fn cyclic(pattern: &[Ballot], len: u64) -> Witness {
        let p = pattern.len() as u64;
        let runs = pattern
            .iter()
            .enumerate()
            .map(|(i, b)| (b.clone(), len / p + u64::from((i as u64) < len % p)))
            .filter(|r| r.1 > 0)
            .collect();
        Witness { runs }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum WitnessVerdict {
    Yes(Witness),
    Unknown,
}

impl WitnessVerdict {
    pub fn is_yes(&self) -> bool {
        matches!(self, WitnessVerdict::Yes(_))
    }
}

fn budget(n: u64, eps: Ratio) -> u64 {
    eps.floor_mul(n)
}

fn prepare(t: &Tally, rule: &RuleId) -> Result<(), ElectionError> {
    rule.validate(t.m())?;
    check_kind(rule, t.kind())?;
    if t.n() == 0 {
        return Err(ElectionError::EmptyElection);
    }
    Ok(())
}

fn wins(t: &Tally, c: usize, rule: &RuleId) -> bool {
    t.evaluate(rule).map(|w| w.iter().any(|x| x.0 == c)).unwrap_or(false)
}

/// Whether `(m, q)` is small enough for exhaustive search.
pub fn within_exact_bounds(m: usize, kind: BallotKind, q: u64) -> bool {
    let m_ok = match kind {
        BallotKind::Ordinal => m <= EXACT_ORDINAL_MAX_M,
        BallotKind::Approval => m <= EXACT_APPROVAL_MAX_M,
    };
    m_ok && q <= EXACT_MAX_Q
}

/// Every ballot a voter may cast under `rule` over `m` candidates.
fn ballot_types(m: usize, rule: &RuleId) -> Vec<Ballot> {
    match rule.ballot_kind() {
        BallotKind::Ordinal => permutations(m).into_iter().map(Ballot::Ordinal).collect(),
        BallotKind::Approval => (1u32..(1 << m))
            .filter(|mask| rule.approval_size().is_none_or(|t| mask.count_ones() as usize == t))
            .map(|mask| Ballot::approval((0..m).filter(|&c| mask >> c & 1 == 1)))
            .collect(),
    }
}

fn permutations(m: usize) -> Vec<Vec<usize>> {
    fn go(cur: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if cur.len() == used.len() {
            out.push(cur.clone());
            return;
        }
        for c in 0..used.len() {
            if !used[c] {
                used[c] = true;
                cur.push(c);
                go(cur, used, out);
                cur.pop();
                used[c] = false;
            }
        }
    }
    let mut out = Vec::new();
    go(&mut Vec::new(), &mut vec![false; m], &mut out);
    out
}

/// Number of added-ballot multisets of size at most `q` the exhaustive oracle visits.
pub fn exact_search_size(m: usize, rule: &RuleId, q: u64) -> u64 {
    let types = ballot_types(m, rule).len() as u64;
    // multisets of size <= q over `types` kinds = C(types + q, q)
    (1..=q).fold(1u64, |acc, i| acc.saturating_mul(types + i) / i)
}

pub fn is_eps_winner_exact(e: &Election, c: usize, eps: Ratio, rule: &RuleId) -> Result<bool, ElectionError> {
    e.check_rule(rule)?;
    is_eps_winner_exact_tally(&e.tally(), c, eps, rule)
}

/// Exhaustive search over multisets of at most `floor(eps·n)` added ballots.
pub fn is_eps_winner_exact_tally(t: &Tally, c: usize, eps: Ratio, rule: &RuleId) -> Result<bool, ElectionError> {
    prepare(t, rule)?;
    let q = budget(t.n(), eps);
    if !within_exact_bounds(t.m(), t.kind(), q) {
        return Err(ElectionError::TooLarge { m: t.m(), kind: t.kind(), budget: q });
    }
    let types = ballot_types(t.m(), rule);
    let mut work = t.clone();
    Ok(search(&mut work, &types, 0, q, c, rule))
}

fn search(t: &mut Tally, types: &[Ballot], start: usize, left: u64, c: usize, rule: &RuleId) -> bool {
    if wins(t, c, rule) {
        return true;
    }
    if left == 0 {
        return false;
    }
    for i in start..types.len() {
        t.add(&types[i]);
        let hit = search(t, types, i, left - 1, c, rule);
        t.remove(&types[i]);
        if hit {
            return true;
        }
    }
    false
}

/// Closed-form exact decision, available for the approval rules, Runoff,
/// and every rule on two candidates.
pub fn decide_analytic(t: &Tally, c: usize, eps: Ratio, rule: &RuleId) -> Result<Option<bool>, ElectionError> {
    prepare(t, rule)?;
    let q = budget(t.n(), eps);
    Ok(analytic_plan(t, c, q, rule).map(|w| w.is_some()))
}

/// `Some(Some(w))`: exact yes with witness; `Some(None)`: exact no; `None`: no closed form.
fn analytic_plan(t: &Tally, c: usize, q: u64, rule: &RuleId) -> Option<Option<Witness>> {
    let m = t.m();
    match rule {
        RuleId::Plurality | RuleId::Approval => {
            let s = t.score(c);
            let ok = (0..m).all(|d| t.score(d) <= s + q);
            Some(ok.then(|| single_run(Ballot::approval([c]), needed_top_up(t, c, |d| t.score(d)))))
        }
        RuleId::TApproval { t: size } => Some(t_approval_plan(t, c, q, *size)),
        RuleId::Runoff => Some(runoff_plan(t, c, q)),
        _ if m == 2 => {
            let d = 1 - c;
            let need = t.pair(d, c).saturating_sub(t.pair(c, d));
            Some((need <= q).then(|| single_run(Ballot::ordinal([c, d]), need)))
        }
        _ => None,
    }
}

fn single_run(b: Ballot, k: u64) -> Witness {
    Witness { runs: if k > 0 { vec![(b, k)] } else { Vec::new() } }
}

fn needed_top_up(t: &Tally, c: usize, score: impl Fn(usize) -> u64) -> u64 {
    (0..t.m()).map(&score).max().unwrap_or(0).saturating_sub(score(c))
}

/// Adds `a` ballots each approving `c` plus `size - 1` others, filling the
/// others by largest remaining slack.
fn t_approval_plan(t: &Tally, c: usize, q: u64, size: usize) -> Option<Witness> {
    let m = t.m();
    let s = t.score(c);
    if (0..m).any(|d| t.score(d) > s + q) {
        return None;
    }
    let extra = (size - 1) as u64;
    let cap = |a: u64, d: usize| a.min(s + a - t.score(d));
    let total_cap = |a: u64| (0..m).filter(|&d| d != c).map(|d| cap(a, d)).sum::<u64>();
    if total_cap(q) < q * extra {
        return None;
    }
    // Smallest feasible count; the condition is monotone in a.
    let a = (0..=q)
        .find(|&a| (0..m).all(|d| t.score(d) <= s + a) && total_cap(a) >= a * extra)
        .expect("a = q is feasible");
    let mut heap: BinaryHeap<(u64, std::cmp::Reverse<usize>)> =
        (0..m).filter(|&d| d != c).map(|d| (cap(a, d), std::cmp::Reverse(d))).collect();
    let mut runs: Vec<(Ballot, u64)> = Vec::new();
    for _ in 0..a {
        let mut picked = Vec::with_capacity(size - 1);
        for _ in 0..extra {
            picked.push(heap.pop().expect("capacity suffices"));
        }
        let ballot = Ballot::approval(std::iter::once(c).chain(picked.iter().map(|p| p.1 .0)));
        for (k, d) in picked {
            heap.push((k - 1, d));
        }
        match runs.last_mut() {
            Some((b, k)) if *b == ballot => *k += 1,
            _ => runs.push((ballot, 1)),
        }
    }
    Some(Witness { runs })
}

/// Best partner `p`: `a` ballots `c ≻ p ≻ …` and `b` ballots `p ≻ c ≻ …`.
fn runoff_plan(t: &Tally, c: usize, q: u64) -> Option<Witness> {
    let m = t.m();
    let mut best: Option<(u64, usize, u64, u64)> = None;
    for p in (0..m).filter(|&p| p != c) {
        let top = (0..m).filter(|&x| x != c && x != p).map(|x| t.score(x)).max().unwrap_or(0);
        let b = top.saturating_sub(t.score(p));
        let a = top
            .saturating_sub(t.score(c))
            .max((b + t.pair(p, c)).saturating_sub(t.pair(c, p)));
        if a + b <= q && best.is_none_or(|x| a + b < x.0) {
            best = Some((a + b, p, a, b));
        }
    }
    best.map(|(_, p, a, b)| {
        let rest = |first: usize, second: usize| {
            Ballot::ordinal([first, second].into_iter().chain((0..m).filter(|&x| x != c && x != p)))
        };
        let mut runs = Vec::new();
        if a > 0 {
            runs.push((rest(c, p), a));
        }
        if b > 0 {
            runs.push((rest(p, c), b));
        }
        Witness { runs }
    })
}

pub fn is_eps_winner_witness(e: &Election, c: usize, eps: Ratio, rule: &RuleId) -> Result<WitnessVerdict, ElectionError> {
    e.check_rule(rule)?;
    is_eps_winner_witness_tally(&e.tally(), c, eps, rule)
}

/// Tries the rule's constructions; `Yes` carries a witness verified by evaluation.
pub fn is_eps_winner_witness_tally(t: &Tally, c: usize, eps: Ratio, rule: &RuleId) -> Result<WitnessVerdict, ElectionError> {
    prepare(t, rule)?;
    let q = budget(t.n(), eps);
    if wins(t, c, rule) {
        return Ok(WitnessVerdict::Yes(Witness::default()));
    }
    if let Some(plan) = analytic_plan(t, c, q, rule) {
        return Ok(match plan {
            Some(w) if w.len() <= q && wins(&w.apply(t), c, rule) => WitnessVerdict::Yes(w),
            _ => WitnessVerdict::Unknown,
        });
    }
    for pattern in patterns(t, c, q, rule) {
        let p = pattern.len() as u64;
        for len in (q.saturating_sub(p - 1)..=q).rev() {
            let w = Witness::cyclic(&pattern, len);
            if wins(&w.apply(t), c, rule) {
                return Ok(WitnessVerdict::Yes(w));
            }
        }
    }
    Ok(WitnessVerdict::Unknown)
}

fn with_top(c: usize, tail: &[usize]) -> Ballot {
    Ballot::ordinal(std::iter::once(c).chain(tail.iter().copied()))
}

/// Others sorted by ascending `key`, ties by id.
fn ascending(t: &Tally, c: usize, key: impl Fn(usize) -> u64) -> Vec<usize> {
    let mut v: Vec<usize> = (0..t.m()).filter(|&d| d != c).collect();
    v.sort_by_key(|&d| (key(d), d));
    v
}

/// Periodic ballot patterns whose repetition may make `c` win.
fn patterns(t: &Tally, c: usize, q: u64, rule: &RuleId) -> Vec<Vec<Ballot>> {
    let ids: Vec<usize> = (0..t.m()).filter(|&d| d != c).collect();
    let rev: Vec<usize> = ids.iter().rev().copied().collect();
    let paired = vec![with_top(c, &ids), with_top(c, &rev)];
    match rule {
        RuleId::Borda => {
            let asc = ascending(t, c, |d| t.borda_score(d));
            let rotations = (0..asc.len())
                .map(|r| {
                    let mut tail = asc.clone();
                    tail.rotate_left(r);
                    with_top(c, &tail)
                })
                .collect();
            let asc_rev: Vec<usize> = asc.iter().rev().copied().collect();
            vec![paired, vec![with_top(c, &asc)], rotations, vec![with_top(c, &asc), with_top(c, &asc_rev)]]
        }
        RuleId::Copeland | RuleId::Condorcet => {
            let by_copeland = ascending(t, c, |d| t.copeland_score(d) as u64);
            let by_borda = ascending(t, c, |d| t.borda_score(d));
            vec![paired, vec![with_top(c, &by_copeland)], vec![with_top(c, &by_borda)]]
        }
        RuleId::Bucklin => {
            let strength = |d: usize| (1..t.m()).map(|j| t.prefix_count(d, j)).sum::<u64>();
            let asc = ascending(t, c, strength);
            let mut swapped = asc.clone();
            let len = swapped.len();
            if len >= 2 {
                swapped.swap(len - 1, len - 2);
            }
            vec![paired, vec![with_top(c, &asc)], vec![with_top(c, &asc), with_top(c, &swapped)]]
        }
        RuleId::Cup { bracket } => {
            let tree = CupNode::build(&bracket.leaves(t.m()));
            match cup_contest_order(t, c, &tree) {
                Some(order) => vec![vec![Ballot::ordinal(order)]],
                None => Vec::new(),
            }
        }
        _ => {
            let _ = q;
            vec![paired]
        }
    }
}

/// Outcome plan for the Cup: `c` wins its path against the easiest
/// possible winner of each sibling subtree; everything else keeps a
/// currently possible result. Returns a ranking consistent with all planned wins.
fn cup_contest_order(t: &Tally, c: usize, tree: &CupNode) -> Option<Vec<usize>> {
    fn contains(node: &CupNode, c: usize) -> bool {
        match node {
            CupNode::Leaf(x) => *x == c,
            CupNode::Match(l, r) => contains(l, c) || contains(r, c),
        }
    }
    fn settle(t: &Tally, node: &CupNode, winner: usize, pairs: &mut Vec<(usize, usize)>) {
        if let CupNode::Match(l, r) = node {
            let (own, other) = if contains(l, winner) { (l, r) } else { (r, l) };
            let rival = t
                .cup_winners(other)
                .into_iter()
                .filter(|&y| t.pair(winner, y) >= t.pair(y, winner))
                .min()
                .expect("winner is a possible winner");
            pairs.push((winner, rival));
            settle(t, own, winner, pairs);
            settle(t, other, rival, pairs);
        }
    }
    fn walk(t: &Tally, node: &CupNode, c: usize, pairs: &mut Vec<(usize, usize)>) {
        if let CupNode::Match(l, r) = node {
            let (own, other) = if contains(l, c) { (l, r) } else { (r, l) };
            let margin = |d: usize| t.pair(d, c) as i64 - t.pair(c, d) as i64;
            let rival = t.cup_winners(other).into_iter().min_by_key(|&d| (margin(d), d)).expect("non-empty");
            pairs.push((c, rival));
            settle(t, other, rival, pairs);
            walk(t, own, c, pairs);
        }
    }
    let mut pairs = Vec::new();
    walk(t, tree, c, &mut pairs);
    topological_contest_order(t.m(), &pairs).ok()
}

/// Orders all `m` candidates so that every `(winner, loser)` pair has the
/// winner first; ties by lowest id.
pub fn topological_contest_order(m: usize, pairs: &[(usize, usize)]) -> Result<Vec<usize>, ElectionError> {
    let mut indeg = vec![0usize; m];
    let mut out_edges = vec![Vec::new(); m];
    for &(a, b) in pairs {
        if a >= m || b >= m {
            return Err(ElectionError::InvalidBallot(format!("contest ({a},{b}) outside roster of {m}")));
        }
        out_edges[a].push(b);
        indeg[b] += 1;
    }
    let mut ready: BinaryHeap<std::cmp::Reverse<usize>> =
        (0..m).filter(|&x| indeg[x] == 0).map(std::cmp::Reverse).collect();
    let mut order = Vec::with_capacity(m);
    while let Some(std::cmp::Reverse(x)) = ready.pop() {
        order.push(x);
        for &y in &out_edges[x] {
            indeg[y] -= 1;
            if indeg[y] == 0 {
                ready.push(std::cmp::Reverse(y));
            }
        }
    }
    if order.len() < m {
        let stuck = (0..m).find(|&x| indeg[x] > 0).expect("some node is on a cycle");
        return Err(ElectionError::ContestCycle(stuck));
    }
    Ok(order)
}

/// Sound necessary conditions: `true` proves `c` is not an ε-winner.
pub fn refute_eps_winner(t: &Tally, c: usize, eps: Ratio, rule: &RuleId) -> Result<bool, ElectionError> {
    prepare(t, rule)?;
    let q = budget(t.n(), eps);
    if let Some(plan) = analytic_plan(t, c, q, rule) {
        return Ok(plan.is_none());
    }
    let m = t.m();
    let margin = |x: usize, y: usize| t.pair(x, y) as i64 - t.pair(y, x) as i64;
    let q_i = q as i64;
    Ok(match rule {
        RuleId::Borda => {
            // Each added ballot gives c at most m-1 points and the others
            // together at least (m-1)(m-2)/2.
            let top = t.borda_score(c) + q * (m as u64 - 1);
            let over = (0..m).any(|d| t.borda_score(d) > top);
            let slack: u64 = (0..m).filter(|&d| d != c).map(|d| top.saturating_sub(t.borda_score(d))).sum();
            over || slack < q * (m as u64 - 1) * (m as u64 - 2) / 2
        }
        RuleId::Copeland => {
            let upper = (0..m).filter(|&d| d != c && margin(c, d) + q_i > 0).count();
            (0..m).any(|d| d != c && (0..m).filter(|&e| e != d && margin(d, e) > q_i).count() > upper)
        }
        RuleId::Condorcet => (0..m).any(|d| d != c && (0..m).all(|e| e == d || margin(d, e) > q_i)),
        RuleId::Cup { bracket } => {
            let mut node = &CupNode::build(&bracket.leaves(m));
            let mut refuted = false;
            while let CupNode::Match(l, r) = node {
                let (own, other) = if l.leaves().contains(&c) { (l, r) } else { (r, l) };
                if other.leaves().iter().all(|&d| margin(d, c) > q_i) {
                    refuted = true;
                    break;
                }
                node = own;
            }
            refuted
        }
        RuleId::Bucklin => (0..=q).all(|a| {
            let n = t.n() + a;
            let first_c = (1..=m).find(|&j| 2 * (t.prefix_count(c, j) + a) > n).unwrap_or(m);
            (1..first_c).any(|j| (0..m).any(|d| d != c && 2 * t.prefix_count(d, j) > n))
        }),
        _ => false,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OracleMode {
    /// Exhaustive search where it fits, the other methods elsewhere.
    #[default]
    Exact,
    /// Never runs the exhaustive search.
    Witness,
    /// Runs both and reports any disagreement.
    Both,
}

impl std::str::FromStr for OracleMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exact" => Ok(OracleMode::Exact),
            "witness" => Ok(OracleMode::Witness),
            "both" => Ok(OracleMode::Both),
            other => Err(format!("unknown oracle mode {other:?}")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    Unknown,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditMethod {
    Exact,
    Analytic,
    Witness,
    Refutation,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditOutcome {
    pub verdict: Verdict,
    pub method: AuditMethod,
    /// Set when a witness was found for an instance the exhaustive search rejected.
    pub inconsistent: bool,
}

/// Checks whether `c` is an ε-winner of the tallied election.
pub fn audit_candidate(t: &Tally, c: usize, eps: Ratio, rule: &RuleId, mode: OracleMode) -> Result<AuditOutcome, ElectionError> {
    prepare(t, rule)?;
    let q = budget(t.n(), eps);
    let outcome = |verdict, method| AuditOutcome { verdict, method, inconsistent: false };
    let exact = if mode != OracleMode::Witness && within_exact_bounds(t.m(), t.kind(), q) {
        Some(is_eps_winner_exact_tally(t, c, eps, rule)?)
    } else {
        None
    };
    if let (Some(v), OracleMode::Exact) = (exact, mode) {
        return Ok(outcome(if v { Verdict::Pass } else { Verdict::Fail }, AuditMethod::Exact));
    }
    let witness = is_eps_winner_witness_tally(t, c, eps, rule)?;
    if let Some(v) = exact {
        let mut o = outcome(if v { Verdict::Pass } else { Verdict::Fail }, AuditMethod::Exact);
        o.inconsistent = witness.is_yes() && !v;
        return Ok(o);
    }
    if let Some(v) = decide_analytic(t, c, eps, rule)? {
        return Ok(outcome(if v { Verdict::Pass } else { Verdict::Fail }, AuditMethod::Analytic));
    }
    if witness.is_yes() {
        return Ok(outcome(Verdict::Pass, AuditMethod::Witness));
    }
    if refute_eps_winner(t, c, eps, rule)? {
        return Ok(outcome(Verdict::Fail, AuditMethod::Refutation));
    }
    Ok(outcome(Verdict::Unknown, AuditMethod::None))
}
