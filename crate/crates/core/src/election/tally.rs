use super::{check_kind, Ballot, BallotKind, Bracket, Candidate, CupNode, Election, ElectionError, RuleId};

/// `N[c][d]` = number of voters preferring `c` to `d`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairwiseMatrix {
    m: usize,
    counts: Vec<u64>,
}

impl PairwiseMatrix {
    pub fn zeros(m: usize) -> Self {
        PairwiseMatrix { m, counts: vec![0; m * m] }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn get(&self, c: usize, d: usize) -> u64 {
        self.counts[c * self.m + d]
    }

    fn bump(&mut self, order: &[usize], count: u64, up: bool) {
        for (i, &c) in order.iter().enumerate() {
            for &d in &order[i + 1..] {
                let cell = &mut self.counts[c * self.m + d];
                if up {
                    *cell += count;
                } else {
                    *cell -= count;
                }
            }
        }
    }
}

pub fn pairwise_matrix(e: &Election) -> Result<PairwiseMatrix, ElectionError> {
    if e.kind() != BallotKind::Ordinal {
        return Err(ElectionError::KindMismatch {
            rule: "pairwise matrix".into(),
            expected: BallotKind::Ordinal,
            found: e.kind(),
        });
    }
    Ok(e.tally().pairs.expect("ordinal tally carries pairs"))
}

/// Sufficient statistics of an election for every supported rule,
/// updatable one ballot at a time.
#[derive(Clone, Debug)]
pub struct Tally {
    m: usize,
    kind: BallotKind,
    n: u64,
    /// Approval: approvals per candidate. Ordinal: first-place counts.
    scores: Vec<u64>,
    /// Ordinal only: `pos[c*m + j]` voters ranking `c` at position `j` (0-based).
    pos: Vec<u64>,
    pairs: Option<PairwiseMatrix>,
}

impl Tally {
    pub fn new(m: usize, kind: BallotKind) -> Self {
        let ordinal = kind == BallotKind::Ordinal;
        Tally {
            m,
            kind,
            n: 0,
            scores: vec![0; m],
            pos: if ordinal { vec![0; m * m] } else { Vec::new() },
            pairs: ordinal.then(|| PairwiseMatrix::zeros(m)),
        }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn kind(&self) -> BallotKind {
        self.kind
    }

    pub fn add(&mut self, b: &Ballot) {
        self.apply(b, 1, true);
    }

    /// Adds `count` copies of a ballot.
    pub fn add_many(&mut self, b: &Ballot, count: u64) {
        self.apply(b, count, true);
    }

    /// Removes a ballot previously added.
    pub fn remove(&mut self, b: &Ballot) {
        self.apply(b, 1, false);
    }

    fn apply(&mut self, b: &Ballot, count: u64, up: bool) {
        debug_assert_eq!(b.kind(), self.kind);
        if count == 0 {
            return;
        }
        let step = |x: &mut u64| if up { *x += count } else { *x -= count };
        step(&mut self.n);
        match b {
            Ballot::Approval(set) => set.iter().for_each(|&c| step(&mut self.scores[c])),
            Ballot::Ordinal(order) => {
                step(&mut self.scores[order[0]]);
                for (j, &c) in order.iter().enumerate() {
                    step(&mut self.pos[c * self.m + j]);
                }
                self.pairs.as_mut().expect("ordinal").bump(order, count, up);
            }
        }
    }

    /// Approval count (approval ballots) or first-place count (ordinal).
    pub fn score(&self, c: usize) -> u64 {
        self.scores[c]
    }

    pub fn borda_score(&self, c: usize) -> u64 {
        (0..self.m).map(|j| self.pos[c * self.m + j] * (self.m - 1 - j) as u64).sum()
    }

    /// Voters ranking `c` within the top `j` positions.
    pub fn prefix_count(&self, c: usize, j: usize) -> u64 {
        self.pos[c * self.m..c * self.m + j.min(self.m)].iter().sum()
    }

    pub fn pairs(&self) -> Option<&PairwiseMatrix> {
        self.pairs.as_ref()
    }

    /// `N(c, d)`; zero for approval tallies.
    pub fn pair(&self, c: usize, d: usize) -> u64 {
        self.pairs.as_ref().map_or(0, |p| p.get(c, d))
    }

    pub fn copeland_score(&self, c: usize) -> usize {
        (0..self.m).filter(|&d| d != c && self.pair(c, d) > self.pair(d, c)).count()
    }

    /// Exact co-winners under favorable tie-breaking, sorted by id.
    pub fn evaluate(&self, rule: &RuleId) -> Result<Vec<Candidate>, ElectionError> {
        check_kind(rule, self.kind)?;
        if self.n == 0 {
            return Err(ElectionError::EmptyElection);
        }
        let m = self.m;
        let ids: Vec<usize> = match rule {
            RuleId::Plurality | RuleId::TApproval { .. } | RuleId::Approval => argmax_all(m, |c| self.scores[c]),
            RuleId::Borda => argmax_all(m, |c| self.borda_score(c)),
            RuleId::Copeland => argmax_all(m, |c| self.copeland_score(c) as u64),
            RuleId::Condorcet => match (0..m).find(|&c| self.copeland_score(c) == m - 1) {
                Some(c) => vec![c],
                None => (0..m).collect(),
            },
            RuleId::Cup { bracket } => {
                let mut w = self.cup_winners(&CupNode::build(&bracket.leaves(m)));
                w.sort_unstable();
                w
            }
            RuleId::Runoff => self.runoff_winners(),
            RuleId::Bucklin => self.bucklin_winners().1,
        };
        Ok(ids.into_iter().map(Candidate).collect())
    }

    /// Possible winners of a Cup subtree when every tied match may go either way.
    pub fn cup_winners(&self, node: &CupNode) -> Vec<usize> {
        match node {
            CupNode::Leaf(c) => vec![*c],
            CupNode::Match(l, r) => {
                let (wl, wr) = (self.cup_winners(l), self.cup_winners(r));
                let beats = |x: usize, ys: &[usize]| ys.iter().any(|&y| self.pair(x, y) >= self.pair(y, x));
                let mut out: Vec<usize> = wl.iter().copied().filter(|&x| beats(x, &wr)).collect();
                out.extend(wr.iter().copied().filter(|&y| beats(y, &wl)));
                out
            }
        }
    }

    pub fn cup_winners_for(&self, bracket: &Bracket) -> Vec<usize> {
        self.cup_winners(&CupNode::build(&bracket.leaves(self.m)))
    }

    /// Pairs `{a, b}` that can be the two runoff finalists under some tie-breaking.
    pub fn runoff_finalists(&self) -> Vec<(usize, usize)> {
        let m = self.m;
        let mut out = Vec::new();
        for a in 0..m {
            for b in a + 1..m {
                let floor = self.scores[a].min(self.scores[b]);
                if (0..m).all(|x| x == a || x == b || self.scores[x] <= floor) {
                    out.push((a, b));
                }
            }
        }
        out
    }

    fn runoff_winners(&self) -> Vec<usize> {
        let mut win = vec![false; self.m];
        for (a, b) in self.runoff_finalists() {
            if self.pair(a, b) >= self.pair(b, a) {
                win[a] = true;
            }
            if self.pair(b, a) >= self.pair(a, b) {
                win[b] = true;
            }
        }
        (0..self.m).filter(|&c| win[c]).collect()
    }

    /// Earliest round with a strict majority and every candidate holding one there.
    pub fn bucklin_winners(&self) -> (usize, Vec<usize>) {
        for j in 1..=self.m {
            let w: Vec<usize> = (0..self.m).filter(|&c| 2 * self.prefix_count(c, j) > self.n).collect();
            if !w.is_empty() {
                return (j, w);
            }
        }
        unreachable!("every candidate is ranked by every voter within m positions")
    }
}

fn argmax_all(m: usize, score: impl Fn(usize) -> u64) -> Vec<usize> {
    let best = (0..m).map(&score).max().unwrap_or(0);
    (0..m).filter(|&c| score(c) == best).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;

    #[test]
    fn matrix_example() {
        // a≻b≻c, a≻c≻b
        let e = Election::from_ballots(3, BallotKind::Ordinal, vec![Ballot::ordinal([0, 1, 2]), Ballot::ordinal([0, 2, 1])]).unwrap();
        let p = pairwise_matrix(&e).unwrap();
        assert_eq!((p.get(0, 1), p.get(0, 2), p.get(1, 2), p.get(2, 1)), (2, 2, 1, 1));
        assert_eq!(p.get(1, 0), 0);
        let empty = Election::new(3, BallotKind::Ordinal).unwrap();
        assert!(pairwise_matrix(&empty).unwrap().counts.iter().all(|&x| x == 0));
        let appr = Election::new(3, BallotKind::Approval).unwrap();
        assert!(pairwise_matrix(&appr).is_err());
    }

    #[test]
    fn matrix_matches_brute_force() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let mut ballots = Vec::new();
            for _ in 0..3 {
                let mut p: Vec<usize> = (0..3).collect();
                p.shuffle(&mut rng);
                ballots.push(Ballot::ordinal(p));
            }
            let e = Election::from_ballots(3, BallotKind::Ordinal, ballots.clone()).unwrap();
            let p = pairwise_matrix(&e).unwrap();
            for c in 0..3 {
                for d in 0..3 {
                    if c == d {
                        assert_eq!(p.get(c, d), 0);
                        continue;
                    }
                    let brute = ballots
                        .iter()
                        .filter(|b| {
                            let ids = b.ids();
                            ids.iter().position(|&x| x == c) < ids.iter().position(|&x| x == d)
                        })
                        .count() as u64;
                    assert_eq!(p.get(c, d), brute);
                    assert_eq!(p.get(c, d) + p.get(d, c), 3);
                }
            }
        }
    }

    #[test]
    fn remove_undoes_add() {
        let mut t = Tally::new(4, BallotKind::Ordinal);
        let a = Ballot::ordinal([3, 1, 0, 2]);
        let b = Ballot::ordinal([0, 1, 2, 3]);
        t.add(&a);
        let before = (t.pos.clone(), t.pairs.clone(), t.scores.clone());
        t.add(&b);
        t.remove(&b);
        assert_eq!(before, (t.pos.clone(), t.pairs.clone(), t.scores.clone()));
        assert_eq!(t.n(), 1);
    }

    #[test]
    fn cup_tie_gives_both() {
        // a vs b tied 1:1; with m=2 both can win.
        let e = Election::from_ballots(2, BallotKind::Ordinal, vec![Ballot::ordinal([0, 1]), Ballot::ordinal([1, 0])]).unwrap();
        assert_eq!(e.tally().evaluate(&RuleId::cup()).unwrap().len(), 2);
    }

    #[test]
    fn cup_custom_bracket() {
        // a beats b, b beats c, c beats a (cycle). Bracket (a,b | c): a wins left, c beats a.
        let rows = [[0, 1, 2], [1, 2, 0], [2, 0, 1]];
        let mut ballots: Vec<Ballot> = rows.iter().map(|r| Ballot::ordinal(*r)).collect();
        ballots.push(Ballot::ordinal([0, 1, 2]));
        ballots.push(Ballot::ordinal([2, 0, 1]));
        // N(a,b)=4-1? compute: a≻b in rows 0,2,3,4 → 4; b≻c in 0,1,3 → 3; c≻a in 1,2,4 → 3.
        let e = Election::from_ballots(3, BallotKind::Ordinal, ballots).unwrap();
        let t = e.tally();
        assert_eq!(t.cup_winners_for(&Bracket::default()), vec![2]);
        let br = Bracket { order: Some(vec![1, 2, 0]) };
        // (b,c) → b; b vs a → a.
        assert_eq!(t.cup_winners_for(&br), vec![0]);
    }
}
