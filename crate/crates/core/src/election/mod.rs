//! Elections, ballots, voting rules and ε-winner oracles.

mod oracle;
mod tally;

pub use oracle::{
    audit_candidate, decide_analytic, exact_search_size, is_eps_winner_exact, is_eps_winner_exact_tally,
    is_eps_winner_witness, is_eps_winner_witness_tally, refute_eps_winner, topological_contest_order,
    within_exact_bounds, AuditMethod, AuditOutcome, OracleMode, Verdict, Witness, WitnessVerdict,
    EXACT_APPROVAL_MAX_M, EXACT_MAX_Q, EXACT_ORDINAL_MAX_M,
};
pub use tally::{pairwise_matrix, PairwiseMatrix, Tally};

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

/// Dense candidate index in `[0, m)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Candidate(pub usize);

impl fmt::Display for Candidate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BallotKind {
    Approval,
    Ordinal,
}

impl fmt::Display for BallotKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BallotKind::Approval => "approval",
            BallotKind::Ordinal => "ordinal",
        })
    }
}

/// A single voter.
///
/// Approval sets are stored sorted without duplicates; ordinal ballots list
/// every candidate from most to least preferred.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ballot {
    Approval(Vec<usize>),
    Ordinal(Vec<usize>),
}

impl Ballot {
    /// Builds an approval ballot, normalising the order.
    pub fn approval(ids: impl IntoIterator<Item = usize>) -> Ballot {
        let mut v: Vec<usize> = ids.into_iter().collect();
        v.sort_unstable();
        v.dedup();
        Ballot::Approval(v)
    }

    pub fn ordinal(ids: impl IntoIterator<Item = usize>) -> Ballot {
        Ballot::Ordinal(ids.into_iter().collect())
    }

    pub fn kind(&self) -> BallotKind {
        match self {
            Ballot::Approval(_) => BallotKind::Approval,
            Ballot::Ordinal(_) => BallotKind::Ordinal,
        }
    }

    pub fn ids(&self) -> &[usize] {
        match self {
            Ballot::Approval(v) | Ballot::Ordinal(v) => v,
        }
    }

    /// Checks the ballot against a roster of `m` candidates.
    pub fn validate(&self, m: usize) -> Result<(), ElectionError> {
        match self {
            Ballot::Approval(v) => {
                if v.is_empty() {
                    return Err(ElectionError::InvalidBallot("empty approval set".into()));
                }
                if v.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(ElectionError::InvalidBallot(format!("unsorted or duplicate approval set {v:?}")));
                }
                if let Some(&c) = v.iter().find(|&&c| c >= m) {
                    return Err(ElectionError::InvalidBallot(format!("candidate {c} outside roster of {m}")));
                }
            }
            Ballot::Ordinal(v) => {
                if v.len() != m {
                    return Err(ElectionError::InvalidBallot(format!(
                        "ordinal ballot ranks {} of {m} candidates",
                        v.len()
                    )));
                }
                let mut seen = vec![false; m];
                for &c in v {
                    if c >= m || std::mem::replace(&mut seen[c], true) {
                        return Err(ElectionError::InvalidBallot(format!("{v:?} is not a permutation of 0..{m}")));
                    }
                }
            }
        }
        Ok(())
    }

    /// The ballot with its preference order reversed (ordinal only).
    pub fn reversed(&self) -> Ballot {
        match self {
            Ballot::Approval(v) => Ballot::Approval(v.clone()),
            Ballot::Ordinal(v) => Ballot::Ordinal(v.iter().rev().copied().collect()),
        }
    }

    /// Number of bits needed to transmit this ballot verbatim.
    pub fn encoded_bits(&self, m: usize) -> u64 {
        match self {
            Ballot::Approval(_) => m as u64,
            Ballot::Ordinal(_) => log2_factorial_ceil(m),
        }
    }
}

impl fmt::Display for Ballot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ids = self.ids();
        for (i, c) in ids.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{c}")?;
        }
        Ok(())
    }
}

/// `ceil(log2(m!))`, the bit cost of one ranking.
pub fn log2_factorial_ceil(m: usize) -> u64 {
    // Exact via big-ish integer doubling: find the smallest b with 2^b >= m!.
    let mut digits: Vec<u32> = vec![1];
    for k in 2..=m as u64 {
        let mut carry = 0u64;
        for d in digits.iter_mut() {
            let v = *d as u64 * k + carry;
            *d = (v & 0xffff_ffff) as u32;
            carry = v >> 32;
        }
        while carry > 0 {
            digits.push((carry & 0xffff_ffff) as u32);
            carry >>= 32;
        }
    }
    // m! as little-endian base-2^32 digits; compute ceil(log2).
    let top = *digits.last().unwrap();
    let bits = (digits.len() as u64 - 1) * 32 + (32 - top.leading_zeros() as u64);
    let is_pow2 = top.is_power_of_two() && digits[..digits.len() - 1].iter().all(|&d| d == 0);
    if is_pow2 {
        bits - 1
    } else {
        bits
    }
}

/// Bits to encode one of `levels` distinct values (at least one bit).
pub fn bits_for_levels(levels: u64) -> u64 {
    if levels <= 2 {
        1
    } else {
        64 - (levels - 1).leading_zeros() as u64
    }
}

/// Leaf order of a Cup bracket. The tree is the balanced bracket built by
/// recursively splitting the order in half (left half rounded up).
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub struct Bracket {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order: Option<Vec<usize>>,
}

impl Bracket {
    pub fn leaves(&self, m: usize) -> Vec<usize> {
        self.order.clone().unwrap_or_else(|| (0..m).collect())
    }

    fn validate(&self, m: usize) -> Result<(), ElectionError> {
        if let Some(o) = &self.order {
            Ballot::Ordinal(o.clone())
                .validate(m)
                .map_err(|_| ElectionError::InvalidRule(format!("cup bracket {o:?} is not a permutation of 0..{m}")))?;
        }
        Ok(())
    }
}

/// Node of the balanced Cup tree.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CupNode {
    Leaf(usize),
    Match(Box<CupNode>, Box<CupNode>),
}

impl CupNode {
    pub fn build(leaves: &[usize]) -> CupNode {
        assert!(!leaves.is_empty());
        if leaves.len() == 1 {
            return CupNode::Leaf(leaves[0]);
        }
        let mid = leaves.len().div_ceil(2);
        CupNode::Match(Box::new(CupNode::build(&leaves[..mid])), Box::new(CupNode::build(&leaves[mid..])))
    }

    pub fn height(&self) -> usize {
        match self {
            CupNode::Leaf(_) => 0,
            CupNode::Match(l, r) => 1 + l.height().max(r.height()),
        }
    }

    pub fn leaves(&self) -> Vec<usize> {
        match self {
            CupNode::Leaf(c) => vec![*c],
            CupNode::Match(l, r) => {
                let mut v = l.leaves();
                v.extend(r.leaves());
                v
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum RuleId {
    Plurality,
    #[serde(rename = "t_approval")]
    TApproval {
        t: usize,
    },
    Approval,
    Borda,
    Cup {
        #[serde(default)]
        bracket: Bracket,
    },
    Copeland,
    Condorcet,
    Runoff,
    Bucklin,
}

impl RuleId {
    pub fn cup() -> RuleId {
        RuleId::Cup { bracket: Bracket::default() }
    }

    pub fn ballot_kind(&self) -> BallotKind {
        match self {
            RuleId::Plurality | RuleId::TApproval { .. } | RuleId::Approval => BallotKind::Approval,
            _ => BallotKind::Ordinal,
        }
    }

    /// Fixed approval-set size, if the rule imposes one.
    pub fn approval_size(&self) -> Option<usize> {
        match self {
            RuleId::Plurality => Some(1),
            RuleId::TApproval { t } => Some(*t),
            _ => None,
        }
    }

    /// Checks the rule parameters against a roster of `m` candidates.
    pub fn validate(&self, m: usize) -> Result<(), ElectionError> {
        if m < 2 {
            return Err(ElectionError::InvalidRule(format!("need at least two candidates, got {m}")));
        }
        match self {
            RuleId::TApproval { t } if *t == 0 || 2 * *t > m => Err(ElectionError::InvalidRule(format!(
                "t-approval needs 1 <= t <= m/2, got t={t}, m={m}"
            ))),
            RuleId::Cup { bracket } => bracket.validate(m),
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> String {
        match self {
            RuleId::Plurality => "plurality".into(),
            RuleId::TApproval { t } => format!("{t}-approval"),
            RuleId::Approval => "approval".into(),
            RuleId::Borda => "borda".into(),
            RuleId::Cup { .. } => "cup".into(),
            RuleId::Copeland => "copeland".into(),
            RuleId::Condorcet => "condorcet".into(),
            RuleId::Runoff => "runoff".into(),
            RuleId::Bucklin => "bucklin".into(),
        }
    }

    /// Every rule with default parameters for a roster of `m` (t = 2 for t-approval when it fits).
    pub fn all(m: usize) -> Vec<RuleId> {
        let mut v = vec![RuleId::Plurality];
        if m >= 4 {
            v.push(RuleId::TApproval { t: 2 });
        }
        v.extend([
            RuleId::Approval,
            RuleId::Borda,
            RuleId::cup(),
            RuleId::Copeland,
            RuleId::Condorcet,
            RuleId::Runoff,
            RuleId::Bucklin,
        ]);
        v
    }
}

impl fmt::Display for RuleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ElectionError {
    #[error("rule {rule} expects {expected} ballots, election has {found} ballots")]
    KindMismatch {
        rule: String,
        expected: BallotKind,
        found: BallotKind,
    },
    #[error("rule {rule} needs approval sets of size {expected}, found one of size {found}")]
    BallotSize { rule: String, expected: usize, found: usize },
    #[error("the election has no ballots, so no winner is defined")]
    EmptyElection,
    #[error("invalid ballot: {0}")]
    InvalidBallot(String),
    #[error("invalid rule: {0}")]
    InvalidRule(String),
    #[error("instance too large for exhaustive search (m={m}, kind={kind}, budget={budget}); use the witness oracle")]
    TooLarge { m: usize, kind: BallotKind, budget: u64 },
    #[error("contest pairs contain a cycle through candidate {0}")]
    ContestCycle(usize),
    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// A candidate roster plus an ordered list of ballots of one kind.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Election {
    m: usize,
    kind: BallotKind,
    ballots: Vec<Ballot>,
}

impl Election {
    pub fn new(m: usize, kind: BallotKind) -> Result<Self, ElectionError> {
        if m < 2 {
            return Err(ElectionError::InvalidRule(format!("need at least two candidates, got {m}")));
        }
        Ok(Election { m, kind, ballots: Vec::new() })
    }

    pub fn from_ballots(m: usize, kind: BallotKind, ballots: Vec<Ballot>) -> Result<Self, ElectionError> {
        let mut e = Election::new(m, kind)?;
        for b in ballots {
            e.push(b)?;
        }
        Ok(e)
    }

    pub fn push(&mut self, ballot: Ballot) -> Result<(), ElectionError> {
        if ballot.kind() != self.kind {
            return Err(ElectionError::InvalidBallot(format!(
                "{} ballot in a {} election",
                ballot.kind(),
                self.kind
            )));
        }
        ballot.validate(self.m)?;
        self.ballots.push(ballot);
        Ok(())
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.ballots.len()
    }

    pub fn kind(&self) -> BallotKind {
        self.kind
    }

    pub fn ballots(&self) -> &[Ballot] {
        &self.ballots
    }

    /// Verifies that this election can be fed to `rule`.
    pub fn check_rule(&self, rule: &RuleId) -> Result<(), ElectionError> {
        rule.validate(self.m)?;
        check_kind(rule, self.kind)?;
        if let Some(t) = rule.approval_size() {
            if let Some(b) = self.ballots.iter().find(|b| b.ids().len() != t) {
                return Err(ElectionError::BallotSize {
                    rule: rule.name(),
                    expected: t,
                    found: b.ids().len(),
                });
            }
        }
        Ok(())
    }

    pub fn tally(&self) -> Tally {
        let mut t = Tally::new(self.m, self.kind);
        for b in &self.ballots {
            t.add(b);
        }
        t
    }

    /// Parses the line-oriented text format: a header `m=<int> kind=<approval|ordinal>`
    /// followed by one ballot per line.
    pub fn parse_text(text: &str) -> Result<Election, ElectionError> {
        let (m, kind, rows) = parse_stream_text(text)?;
        let mut e = Election::new(m, kind)?;
        for (line, ballot, site) in rows {
            if site.is_some() {
                return Err(ElectionError::Parse { line, msg: "unexpected site column".into() });
            }
            e.push(ballot).map_err(|err| ElectionError::Parse { line, msg: err.to_string() })?;
        }
        Ok(e)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("m={} kind={}\n", self.m, self.kind);
        for b in &self.ballots {
            s.push_str(&b.to_string());
            s.push('\n');
        }
        s
    }
}

impl FromStr for Election {
    type Err = ElectionError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Election::parse_text(s)
    }
}

pub(crate) fn check_kind(rule: &RuleId, kind: BallotKind) -> Result<(), ElectionError> {
    if rule.ballot_kind() != kind {
        return Err(ElectionError::KindMismatch {
            rule: rule.name(),
            expected: rule.ballot_kind(),
            found: kind,
        });
    }
    Ok(())
}

/// Parsed rows of the text format: `(line number, ballot, optional site id)`.
pub type StreamRows = Vec<(usize, Ballot, Option<usize>)>;

/// Parses the election text format, optionally extended with a `site=<id>`
/// column after each ballot.
pub fn parse_stream_text(text: &str) -> Result<(usize, BallotKind, StreamRows), ElectionError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (hline, header) = lines.next().ok_or(ElectionError::Parse { line: 1, msg: "missing header".into() })?;
    let perr = |line: usize, msg: String| ElectionError::Parse { line: line + 1, msg };
    let mut m = None;
    let mut kind = None;
    for field in header.split_whitespace() {
        match field.split_once('=') {
            Some(("m", v)) => m = Some(v.parse::<usize>().map_err(|e| perr(hline, format!("bad m: {e}")))?),
            Some(("kind", "approval")) => kind = Some(BallotKind::Approval),
            Some(("kind", "ordinal")) => kind = Some(BallotKind::Ordinal),
            _ => return Err(perr(hline, format!("unexpected header field {field:?}"))),
        }
    }
    let m = m.ok_or_else(|| perr(hline, "header lacks m=".into()))?;
    let kind = kind.ok_or_else(|| perr(hline, "header lacks kind=".into()))?;
    let mut rows = Vec::new();
    for (ln, line) in lines {
        let mut parts = line.split_whitespace();
        let ballot_txt = parts.next().unwrap_or("");
        let mut site = None;
        for extra in parts {
            match extra.split_once('=') {
                Some(("site", v)) => site = Some(v.parse::<usize>().map_err(|e| perr(ln, format!("bad site: {e}")))?),
                _ => return Err(perr(ln, format!("unexpected column {extra:?}"))),
            }
        }
        let ids = ballot_txt
            .split(',')
            .map(|x| x.trim().parse::<usize>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| perr(ln, format!("bad candidate id: {e}")))?;
        let ballot = match kind {
            BallotKind::Approval => {
                let b = Ballot::approval(ids.iter().copied());
                if b.ids().len() != ids.len() {
                    return Err(perr(ln, "duplicate candidate in approval set".into()));
                }
                b
            }
            BallotKind::Ordinal => Ballot::ordinal(ids),
        };
        ballot.validate(m).map_err(|e| perr(ln, e.to_string()))?;
        rows.push((ln + 1, ballot, site));
    }
    Ok((m, kind, rows))
}

/// Exact co-winners of `rule` on `e`, sorted by id.
pub fn evaluate_rule(e: &Election, rule: &RuleId) -> Result<Vec<Candidate>, ElectionError> {
    e.check_rule(rule)?;
    if e.n() == 0 {
        return Err(ElectionError::EmptyElection);
    }
    e.tally().evaluate(rule)
}
