//! Discrete-event simulation of the star network.
//!
//! Ballots arrive at sites one per time step. Messages are delivered
//! instantly, and every cascade drains before the next ballot. Queries read
//! the center's state and may not send anything.

use crate::election::{Ballot, BallotKind, Candidate, RuleId, Tally, Verdict, AuditMethod};
use crate::ratio::Ratio;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, VecDeque};
use std::io::{BufRead, Write};
use thiserror::Error;

/// Fixed per-message header cost, reported apart from payload bits.
pub const TAG_BITS: u64 = 8;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("protocol violation at time {time}: {detail}")]
    Violation { time: u64, detail: String },
    #[error("message {tag} declares a zero-bit payload")]
    ZeroPayload { tag: String },
    #[error("malformed event #{index}: {detail}")]
    BadEvent { index: usize, detail: String },
    #[error("transcript i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("transcript line {line}: {source}")]
    Json { line: usize, source: serde_json::Error },
    #[error("transcript has no header record")]
    MissingHeader,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Node {
    Center,
    Site(usize),
}

/// One ballot arriving at one site.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamEvent {
    pub time: u64,
    pub site: usize,
    pub ballot: Ballot,
}

/// Content a protocol puts on the wire.
pub trait Payload {
    fn payload_bits(&self) -> u64;
    fn tag(&self) -> &'static str;
}

/// Messages queued by an endpoint during one handler call.
#[derive(Debug)]
pub struct Outbox<M> {
    queued: Vec<(Node, M)>,
}

impl<M> Outbox<M> {
    fn new() -> Self {
        Outbox { queued: Vec::new() }
    }

    pub fn send(&mut self, to: Node, msg: M) {
        self.queued.push((to, msg));
    }

    pub fn to_center(&mut self, msg: M) {
        self.send(Node::Center, msg);
    }

    pub fn to_site(&mut self, site: usize, msg: M) {
        self.send(Node::Site(site), msg);
    }

    pub fn is_empty(&self) -> bool {
        self.queued.is_empty()
    }
}

impl<M: Clone> Outbox<M> {
    pub fn broadcast(&mut self, k: usize, msg: M) {
        for j in 0..k {
            self.to_site(j, msg.clone());
        }
    }
}

/// What a handler may touch besides its own state.
pub struct Ctx<'a, M> {
    pub out: &'a mut Outbox<M>,
    pub rng: &'a mut ChaCha8Rng,
    pub time: u64,
}

pub trait SiteEndpoint {
    type Msg: Payload;
    fn on_ballot(&mut self, ctx: &mut Ctx<'_, Self::Msg>, ballot: &Ballot);
    fn on_message(&mut self, ctx: &mut Ctx<'_, Self::Msg>, msg: Self::Msg);
}

pub trait CenterEndpoint {
    type Msg: Payload;
    fn on_message(&mut self, ctx: &mut Ctx<'_, Self::Msg>, from: usize, msg: Self::Msg);
    /// Answers a winner query. Anything placed in `ctx.out` is a violation.
    fn on_query(&mut self, ctx: &mut Ctx<'_, Self::Msg>) -> Option<Candidate>;
    /// Static recomputations run so far (zero for protocols without checkpoints).
    fn checkpoints(&self) -> u64 {
        0
    }
}

/// Exact bit counters per link and direction.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommLedger {
    pub bits_up: Vec<u64>,
    pub bits_down: Vec<u64>,
    pub messages_up: u64,
    pub messages_down: u64,
    pub total_bits: u64,
    pub tag_bits: u64,
    /// Per message tag: (count, payload bits).
    pub by_tag: BTreeMap<String, (u64, u64)>,
}

impl CommLedger {
    pub fn new(k: usize) -> Self {
        CommLedger { bits_up: vec![0; k], bits_down: vec![0; k], ..Default::default() }
    }

    /// Charges one message on the link to or from `site`.
    pub fn charge(&mut self, site: usize, upward: bool, bits: u64, tag: &str) -> Result<(), HarnessError> {
        if bits == 0 {
            return Err(HarnessError::ZeroPayload { tag: tag.to_string() });
        }
        if upward {
            self.bits_up[site] += bits;
            self.messages_up += 1;
        } else {
            self.bits_down[site] += bits;
            self.messages_down += 1;
        }
        self.total_bits += bits;
        self.tag_bits += TAG_BITS;
        let e = self.by_tag.entry(tag.to_string()).or_default();
        e.0 += 1;
        e.1 += bits;
        Ok(())
    }

    pub fn messages(&self) -> u64 {
        self.messages_up + self.messages_down
    }

    /// `ceil(total_bits / max(1, ceil(log2 n_ref)))`.
    pub fn words(&self, n_ref: u64) -> u64 {
        words_for(self.total_bits, n_ref)
    }
}

pub fn words_for(bits: u64, n_ref: u64) -> u64 {
    let w = if n_ref <= 1 { 0 } else { 64 - (n_ref - 1).leading_zeros() as u64 };
    bits.div_ceil(w.max(1))
}

/// Bits to send a count in `[0, n]`.
pub fn count_bits(n: u64) -> u64 {
    crate::election::bits_for_levels(n.saturating_add(1))
}

/// SplitMix64 finalizer, used to derive independent seeds.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(root: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(mix64(root), |acc, &p| mix64(acc ^ mix64(p)))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptHeader {
    pub protocol: String,
    pub m: usize,
    pub k: usize,
    pub kind: BallotKind,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rule: Option<RuleId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<Ratio>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageRecord {
    pub time: u64,
    pub from: Node,
    pub to: Node,
    pub tag: String,
    pub bits: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Declaration {
    pub time: u64,
    pub declared: Option<Candidate>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub time: u64,
    pub declared: Option<Candidate>,
    pub verdict: Verdict,
    pub method: AuditMethod,
    #[serde(default)]
    pub inconsistent: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Summary {
    pub ledger: CommLedger,
    pub checkpoints: u64,
}

/// One JSON line of an exported transcript.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Record {
    Header(TranscriptHeader),
    Event(StreamEvent),
    Message(MessageRecord),
    Declaration(Declaration),
    Audit(AuditRecord),
    Summary(Summary),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    pub header: TranscriptHeader,
    pub events: Vec<StreamEvent>,
    pub messages: Vec<MessageRecord>,
    pub declarations: Vec<Declaration>,
    pub audits: Vec<AuditRecord>,
    pub ledger: CommLedger,
    pub checkpoints: u64,
}

impl Transcript {
    pub fn n(&self) -> u64 {
        self.events.len() as u64
    }

    /// Writes one JSON object per line, in time order within each kind.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<(), HarnessError> {
        let mut line = |r: Record| -> Result<(), HarnessError> {
            serde_json::to_writer(&mut w, &r).map_err(|e| HarnessError::Json { line: 0, source: e })?;
            w.write_all(b"\n")?;
            Ok(())
        };
        line(Record::Header(self.header.clone()))?;
        for e in &self.events {
            line(Record::Event(e.clone()))?;
        }
        for msg in &self.messages {
            line(Record::Message(msg.clone()))?;
        }
        for d in &self.declarations {
            line(Record::Declaration(d.clone()))?;
        }
        for a in &self.audits {
            line(Record::Audit(a.clone()))?;
        }
        line(Record::Summary(Summary { ledger: self.ledger.clone(), checkpoints: self.checkpoints }))
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Transcript, HarnessError> {
        let mut header = None;
        let mut t = Transcript {
            header: TranscriptHeader { protocol: String::new(), m: 0, k: 0, kind: BallotKind::Ordinal, seed: 0, rule: None, eps: None },
            events: Vec::new(),
            messages: Vec::new(),
            declarations: Vec::new(),
            audits: Vec::new(),
            ledger: CommLedger::default(),
            checkpoints: 0,
        };
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: Record = serde_json::from_str(&line).map_err(|e| HarnessError::Json { line: i + 1, source: e })?;
            match rec {
                Record::Header(h) => header = Some(h),
                Record::Event(e) => t.events.push(e),
                Record::Message(msg) => t.messages.push(msg),
                Record::Declaration(d) => t.declarations.push(d),
                Record::Audit(a) => t.audits.push(a),
                Record::Summary(s) => {
                    t.ledger = s.ledger;
                    t.checkpoints = s.checkpoints;
                }
            }
        }
        t.header = header.ok_or(HarnessError::MissingHeader)?;
        Ok(t)
    }
}

#[derive(Clone, Debug)]
pub struct RunOptions {
    pub seed: u64,
    pub record_messages: bool,
    pub protocol: String,
    pub rule: Option<RuleId>,
    pub eps: Option<Ratio>,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { seed: 0, record_messages: false, protocol: "unnamed".into(), rule: None, eps: None }
    }
}

/// Per-endpoint random streams, re-keyed at every event index so a handler's
/// draws depend only on (seed, endpoint, event).
struct Rngs {
    rngs: Vec<ChaCha8Rng>,
    keyed: Vec<u64>,
}

impl Rngs {
    fn new(seed: u64, k: usize) -> Self {
        Rngs {
            rngs: (0..=k).map(|e| ChaCha8Rng::seed_from_u64(derive_seed(seed, &[e as u64]))).collect(),
            keyed: vec![u64::MAX; k + 1],
        }
    }

    fn get(&mut self, node: Node, event: u64) -> &mut ChaCha8Rng {
        let idx = match node {
            Node::Center => 0,
            Node::Site(j) => j + 1,
        };
        if self.keyed[idx] != event {
            self.keyed[idx] = event;
            self.rngs[idx].set_stream(event);
            self.rngs[idx].set_word_pos(0);
        }
        &mut self.rngs[idx]
    }
}

/// Runs a stream through one center and `sites.len()` sites.
///
/// `queries` are times after which the center is asked for its winner; time
/// 0 means before the first ballot. Each query is answered once even if listed twice.
pub fn run_stream<C, S, M>(
    events: &[StreamEvent],
    m: usize,
    kind: BallotKind,
    center: &mut C,
    sites: &mut [S],
    queries: &[u64],
    opts: &RunOptions,
) -> Result<Transcript, HarnessError>
where
    C: CenterEndpoint<Msg = M>,
    S: SiteEndpoint<Msg = M>,
    M: Payload,
{
    let k = sites.len();
    for (i, e) in events.iter().enumerate() {
        if e.time != i as u64 + 1 {
            return Err(HarnessError::BadEvent { index: i, detail: format!("time {} where {} expected", e.time, i + 1) });
        }
        if e.site >= k {
            return Err(HarnessError::BadEvent { index: i, detail: format!("site {} of {k}", e.site) });
        }
        if e.ballot.kind() != kind {
            return Err(HarnessError::BadEvent { index: i, detail: "ballot kind differs from the stream".into() });
        }
        e.ballot.validate(m).map_err(|err| HarnessError::BadEvent { index: i, detail: err.to_string() })?;
    }
    let mut qs: Vec<u64> = queries.iter().copied().filter(|&q| q <= events.len() as u64).collect();
    qs.sort_unstable();
    qs.dedup();
    let mut next_q = 0;

    let mut ledger = CommLedger::new(k);
    let mut rngs = Rngs::new(opts.seed, k);
    let mut messages = Vec::new();
    let mut declarations = Vec::new();

    let mut ask = |time: u64, center: &mut C, rngs: &mut Rngs| -> Result<(), HarnessError> {
        let mut out = Outbox::new();
        let declared = center.on_query(&mut Ctx { out: &mut out, rng: rngs.get(Node::Center, time), time });
        if !out.is_empty() {
            return Err(HarnessError::Violation { time, detail: "center sent a message while answering a query".into() });
        }
        declarations.push(Declaration { time, declared });
        Ok(())
    };

    while next_q < qs.len() && qs[next_q] == 0 {
        ask(0, center, &mut rngs)?;
        next_q += 1;
    }
    for e in events {
        let time = e.time;
        let mut queue: VecDeque<(Node, Node, M)> = VecDeque::new();
        let mut out = Outbox::new();
        let from = Node::Site(e.site);
        sites[e.site].on_ballot(&mut Ctx { out: &mut out, rng: rngs.get(from, time), time }, &e.ballot);
        queue.extend(out.queued.drain(..).map(|(to, msg)| (from, to, msg)));
        while let Some((from, to, msg)) = queue.pop_front() {
            let (site, upward) = match (from, to) {
                (Node::Site(j), Node::Center) => (j, true),
                (Node::Center, Node::Site(j)) if j < k => (j, false),
                _ => {
                    return Err(HarnessError::Violation { time, detail: format!("illegal link {from:?} -> {to:?}") });
                }
            };
            let bits = msg.payload_bits();
            ledger.charge(site, upward, bits, msg.tag())?;
            if opts.record_messages {
                messages.push(MessageRecord { time, from, to, tag: msg.tag().to_string(), bits });
            }
            let mut out = Outbox::new();
            let mut ctx = Ctx { out: &mut out, rng: rngs.get(to, time), time };
            match to {
                Node::Center => center.on_message(&mut ctx, site, msg),
                Node::Site(j) => sites[j].on_message(&mut ctx, msg),
            }
            queue.extend(out.queued.drain(..).map(|(dest, m2)| (to, dest, m2)));
        }
        while next_q < qs.len() && qs[next_q] == time {
            ask(time, center, &mut rngs)?;
            next_q += 1;
        }
    }
    Ok(Transcript {
        header: TranscriptHeader {
            protocol: opts.protocol.clone(),
            m,
            k,
            kind,
            seed: opts.seed,
            rule: opts.rule.clone(),
            eps: opts.eps,
        },
        events: events.to_vec(),
        messages,
        declarations,
        audits: Vec::new(),
        checkpoints: center.checkpoints(),
        ledger,
    })
}

/// Protocol that never communicates and never declares.
pub mod null {
    use super::*;

    #[derive(Clone, Copy, Debug)]
    pub enum Never {}

    impl Payload for Never {
        fn payload_bits(&self) -> u64 {
            match *self {}
        }
        fn tag(&self) -> &'static str {
            match *self {}
        }
    }

    #[derive(Clone, Debug, Default)]
    pub struct Site;
    #[derive(Debug, Default)]
    pub struct Center;

    impl SiteEndpoint for Site {
        type Msg = Never;
        fn on_ballot(&mut self, _: &mut Ctx<'_, Never>, _: &Ballot) {}
        fn on_message(&mut self, _: &mut Ctx<'_, Never>, msg: Never) {
            match msg {}
        }
    }

    impl CenterEndpoint for Center {
        type Msg = Never;
        fn on_message(&mut self, _: &mut Ctx<'_, Never>, _: usize, msg: Never) {
            match msg {}
        }
        fn on_query(&mut self, _: &mut Ctx<'_, Never>) -> Option<Candidate> {
            None
        }
    }
}

/// Every site forwards every ballot verbatim; the center evaluates exactly.
pub mod naive {
    use super::*;

    #[derive(Clone, Debug)]
    pub struct Forward {
        pub ballot: Ballot,
        pub m: usize,
    }

    impl Payload for Forward {
        fn payload_bits(&self) -> u64 {
            self.ballot.encoded_bits(self.m).max(1)
        }
        fn tag(&self) -> &'static str {
            "ballot"
        }
    }

    #[derive(Debug)]
    pub struct Site {
        pub m: usize,
    }

    impl SiteEndpoint for Site {
        type Msg = Forward;
        fn on_ballot(&mut self, ctx: &mut Ctx<'_, Forward>, ballot: &Ballot) {
            ctx.out.to_center(Forward { ballot: ballot.clone(), m: self.m });
        }
        fn on_message(&mut self, _: &mut Ctx<'_, Forward>, _: Forward) {}
    }

    #[derive(Debug)]
    pub struct Center {
        pub tally: Tally,
        pub rule: RuleId,
    }

    impl Center {
        pub fn new(m: usize, rule: RuleId) -> Self {
            Center { tally: Tally::new(m, rule.ballot_kind()), rule }
        }
    }

    impl CenterEndpoint for Center {
        type Msg = Forward;
        fn on_message(&mut self, _: &mut Ctx<'_, Forward>, _: usize, msg: Forward) {
            self.tally.add(&msg.ballot);
        }
        fn on_query(&mut self, _: &mut Ctx<'_, Forward>) -> Option<Candidate> {
            self.tally.evaluate(&self.rule).ok().and_then(|w| w.first().copied())
        }
    }
}
