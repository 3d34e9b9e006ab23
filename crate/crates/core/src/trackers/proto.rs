//! Site and center endpoints for every tracking technique.

use super::config::{channels, Channel, ChannelKind, Technique, TrackerConfig, TrackerError};
use super::declare::{declare, top_two, Bounds, RuleView};
use super::reduce::{bucklin_items, bucklin_terms, log2_exact, padded_size, pairs_of, reduce_weighted, ItemSpace, ReductionItem};
use super::static_proto::{answer, StaticPlan, StaticQuery};
use crate::checkpoint::{checkpoint_lambda, static_eps, CheckpointClock, Exchange, Outgoing};
use crate::election::{bits_for_levels, Ballot, Candidate, RuleId, Tally};
use crate::harness::{count_bits, run_stream, CenterEndpoint, Ctx, Payload, RunOptions, SiteEndpoint, StreamEvent, Transcript};
use crate::primitives::{
    required_sample_size, CountSite, DetFreqCenter, DetFreqSite, FreqUp, RandFreqCenter, RandFreqSite, SampleSize,
    SampleSizeSpec, SamplerCenter, SamplerSite,
};
use crate::ratio::Ratio;
use rand::Rng;

/// Bits for a sampling level (at most 64).
const LEVEL_BITS: u64 = 7;

#[derive(Clone, Debug, PartialEq)]
pub enum Body {
    /// A site's first ballot produced no other traffic.
    Hello,
    Ballot(Ballot),
    Freq { channel: usize, up: FreqUp },
    Scale { channel: usize, scale: u64 },
    Count(u64),
    Poll,
    LocalCount(u64),
    Request { n: u64, query: StaticQuery },
    Reply(Vec<u64>),
    Sampled { ballot: Ballot, level: u32 },
    Round(u32),
}

/// A message with its payload size fixed by the sender.
#[derive(Clone, Debug, PartialEq)]
pub struct Msg {
    pub body: Body,
    pub bits: u64,
}

impl Payload for Msg {
    fn payload_bits(&self) -> u64 {
        self.bits
    }

    fn tag(&self) -> &'static str {
        match self.body {
            Body::Hello => "hello",
            Body::Ballot(_) => "ballot",
            Body::Freq { up: FreqUp::Count(_), .. } => "freq_count",
            Body::Freq { up: FreqUp::Item(..), .. } => "freq_item",
            Body::Scale { .. } => "scale",
            Body::Count(_) => "count",
            Body::Poll => "poll",
            Body::LocalCount(_) => "local_count",
            Body::Request { .. } => "request",
            Body::Reply(_) => "reply",
            Body::Sampled { .. } => "sampled",
            Body::Round(_) => "round",
        }
    }
}

fn freq_msg(channel: usize, chans: &[Channel], up: FreqUp) -> Msg {
    let chan_bits = bits_for_levels(chans.len() as u64);
    let bits = chan_bits
        + 1
        + match up {
            FreqUp::Count(v) => count_bits(v),
            FreqUp::Item(_, v) => bits_for_levels(chans[channel].universe as u64).max(1) + count_bits(v).max(1),
        };
    Msg { body: Body::Freq { channel, up }, bits }
}

/// Weighted item indices one ballot feeds into a channel.
pub fn channel_items(rule: &RuleId, chan: &Channel, ballot: &Ballot, m: usize) -> Vec<(usize, u64)> {
    let space = ItemSpace { m };
    let ids = ballot.ids();
    let index = |(x, w): (ReductionItem, u64)| (space.index(x), w);
    match chan.kind {
        ChannelKind::Scores => {
            reduce_weighted(rule, ballot, m).map(|v| v.into_iter().map(index).collect()).unwrap_or_default()
        }
        ChannelKind::TopChoice => ids.first().map(|&c| vec![(c, 1)]).unwrap_or_default(),
        ChannelKind::Pairs => pairs_of(ids).into_iter().map(index).collect(),
        ChannelKind::Bucklin => bucklin_items(ids, m).into_iter().map(|x| (space.index(x), 1)).collect(),
    }
}

#[derive(Clone, Debug)]
enum SiteKind {
    Naive,
    Det(Vec<DetFreqSite>),
    Rand(Vec<RandFreqSite>),
    Checkpoint { count: CountSite, tally: Tally },
    Sampling(SamplerSite),
    Hybrid { freq: DetFreqSite, count: CountSite, tally: Tally },
}

#[derive(Clone, Debug)]
pub struct TrackerSite {
    rule: RuleId,
    m: usize,
    k: usize,
    eps: Ratio,
    chans: Vec<Channel>,
    started: bool,
    kind: SiteKind,
}

impl TrackerSite {
    pub fn new(cfg: &TrackerConfig) -> Self {
        let (m, k) = (cfg.m, cfg.k);
        let lambda = checkpoint_lambda(cfg.eps);
        let tally = || Tally::new(m, cfg.rule.ballot_kind());
        let mut chans = channels(&cfg.rule, m, cfg.eps);
        let kind = match cfg.technique {
            Technique::Naive => SiteKind::Naive,
            Technique::FrequencyDet => SiteKind::Det(chans.iter().map(|c| DetFreqSite::new(c.eps, k, c.universe)).collect()),
            Technique::FrequencyRand => {
                SiteKind::Rand(chans.iter().map(|c| RandFreqSite::new(c.eps, k, c.universe, cfg.cp())).collect())
            }
            Technique::Checkpoint => SiteKind::Checkpoint { count: CountSite::new(lambda), tally: tally() },
            Technique::Sampling => SiteKind::Sampling(SamplerSite::new()),
            Technique::Hybrid => {
                chans.truncate(1);
                SiteKind::Hybrid { freq: DetFreqSite::new(chans[0].eps, k, m), count: CountSite::new(lambda), tally: tally() }
            }
        };
        TrackerSite { rule: cfg.rule.clone(), m, k, eps: static_eps(cfg.eps), chans, started: false, kind }
    }

    fn local_tally(&self) -> Option<&Tally> {
        match &self.kind {
            SiteKind::Checkpoint { tally, .. } | SiteKind::Hybrid { tally, .. } => Some(tally),
            _ => None,
        }
    }
}

impl SiteEndpoint for TrackerSite {
    type Msg = Msg;

    fn on_ballot(&mut self, ctx: &mut Ctx<'_, Msg>, ballot: &Ballot) {
        let m = self.m;
        let mut ups = Vec::new();
        match &mut self.kind {
            SiteKind::Naive => {
                ctx.out.to_center(Msg { body: Body::Ballot(ballot.clone()), bits: ballot.encoded_bits(m).max(1) });
            }
            SiteKind::Det(sites) => {
                for (ci, (site, chan)) in sites.iter_mut().zip(&self.chans).enumerate() {
                    for (item, w) in channel_items(&self.rule, chan, ballot, m) {
                        site.arrive(item, w, &mut ups);
                    }
                    for up in ups.drain(..) {
                        ctx.out.to_center(freq_msg(ci, &self.chans, up));
                    }
                }
            }
            SiteKind::Rand(sites) => {
                for (ci, (site, chan)) in sites.iter_mut().zip(&self.chans).enumerate() {
                    for (item, w) in channel_items(&self.rule, chan, ballot, m) {
                        site.arrive(item, w, ctx.rng, &mut ups);
                    }
                    for up in ups.drain(..) {
                        ctx.out.to_center(freq_msg(ci, &self.chans, up));
                    }
                }
            }
            SiteKind::Checkpoint { count, tally } => {
                tally.add(ballot);
                if let Some(v) = count.arrive(1) {
                    ctx.out.to_center(Msg { body: Body::Count(v), bits: count_bits(v) });
                }
            }
            SiteKind::Sampling(sampler) => {
                if let Some(level) = sampler.arrive(ctx.rng) {
                    let bits = ballot.encoded_bits(m) + LEVEL_BITS;
                    ctx.out.to_center(Msg { body: Body::Sampled { ballot: ballot.clone(), level }, bits });
                }
            }
            SiteKind::Hybrid { freq, count, tally } => {
                tally.add(ballot);
                for (item, w) in channel_items(&self.rule, &self.chans[0], ballot, m) {
                    freq.arrive(item, w, &mut ups);
                }
                for up in ups.drain(..) {
                    ctx.out.to_center(freq_msg(0, &self.chans, up));
                }
                if let Some(v) = count.arrive(1) {
                    ctx.out.to_center(Msg { body: Body::Count(v), bits: count_bits(v) });
                }
            }
        }
        if !self.started && ctx.out.is_empty() {
            ctx.out.to_center(Msg { body: Body::Hello, bits: 1 });
        }
        self.started = true;
    }

    fn on_message(&mut self, ctx: &mut Ctx<'_, Msg>, msg: Msg) {
        match msg.body {
            Body::Scale { channel, scale } => match &mut self.kind {
                SiteKind::Det(sites) => sites[channel].set_scale(scale),
                SiteKind::Rand(sites) => sites[channel].set_scale(scale),
                SiteKind::Hybrid { freq, .. } => freq.set_scale(scale),
                _ => {}
            },
            Body::Round(r) => {
                if let SiteKind::Sampling(s) = &mut self.kind {
                    s.set_round(r);
                }
            }
            Body::Poll => {
                if let Some(t) = self.local_tally() {
                    let v = t.n();
                    ctx.out.to_center(Msg { body: Body::LocalCount(v), bits: count_bits(v).max(1) });
                }
            }
            Body::Request { n, query } => {
                if let Some(t) = self.local_tally() {
                    let (values, bits) = answer(t, &query, &self.rule, self.k, self.eps, n);
                    ctx.out.to_center(Msg { body: Body::Reply(values), bits: bits.max(1) });
                }
            }
            _ => {}
        }
    }
}

#[derive(Clone, Debug)]
struct Recompute {
    clock: CheckpointClock,
    exchange: Exchange,
    pending: bool,
}

#[derive(Clone, Debug)]
enum CenterKind {
    Naive(Tally),
    Det(Vec<DetFreqCenter>),
    Rand(Vec<RandFreqCenter>),
    Checkpoint(Recompute),
    Sampling { sampler: SamplerCenter<Ballot>, size: SampleSize },
    Hybrid { freq: DetFreqCenter, rec: Recompute },
}

#[derive(Clone, Debug)]
pub struct TrackerCenter {
    rule: RuleId,
    m: usize,
    k: usize,
    eps: Ratio,
    chans: Vec<Channel>,
    started: bool,
    kind: CenterKind,
}

impl TrackerCenter {
    pub fn new(cfg: &TrackerConfig) -> Result<Self, TrackerError> {
        let (m, k) = (cfg.m, cfg.k);
        let rec = || Recompute { clock: CheckpointClock::new(k, checkpoint_lambda(cfg.eps)), exchange: Exchange::new(k), pending: false };
        let mut chans = channels(&cfg.rule, m, cfg.eps);
        let kind = match cfg.technique {
            Technique::Naive => CenterKind::Naive(Tally::new(m, cfg.rule.ballot_kind())),
            Technique::FrequencyDet => {
                CenterKind::Det(chans.iter().map(|c| DetFreqCenter::new(c.eps, k, c.universe)).collect())
            }
            Technique::FrequencyRand => {
                CenterKind::Rand(chans.iter().map(|c| RandFreqCenter::new(c.eps, k, c.universe, cfg.cp())).collect())
            }
            Technique::Checkpoint => CenterKind::Checkpoint(rec()),
            Technique::Sampling => {
                let delta = cfg.delta.ok_or(TrackerError::MissingDelta)?;
                let size = required_sample_size(&SampleSizeSpec { rule: cfg.rule.clone(), eps: cfg.eps, delta, m })?;
                CenterKind::Sampling { sampler: SamplerCenter::new(size.total() as usize), size }
            }
            Technique::Hybrid => {
                chans.truncate(1);
                CenterKind::Hybrid { freq: DetFreqCenter::new(chans[0].eps, k, m), rec: rec() }
            }
        };
        Ok(TrackerCenter { rule: cfg.rule.clone(), m, k, eps: cfg.eps, chans, started: false, kind })
    }

    fn emit(k: usize, m: usize, ctx: &mut Ctx<'_, Msg>, out: Outgoing) {
        match out {
            Outgoing::Poll => ctx.out.broadcast(k, Msg { body: Body::Poll, bits: 1 }),
            Outgoing::Ask { n, query } => {
                let bits = query.bits(m) + count_bits(n);
                ctx.out.broadcast(k, Msg { body: Body::Request { n, query }, bits });
            }
            Outgoing::Nothing => {}
        }
    }

    /// Opens a static exchange for the checkpoint that just fired.
    fn start(&mut self, ctx: &mut Ctx<'_, Msg>) {
        let (k, m) = (self.k, self.m);
        let out = match &mut self.kind {
            CenterKind::Checkpoint(rec) => rec.exchange.start_polled(),
            CenterKind::Hybrid { freq, rec } => {
                let est: Vec<f64> = freq.estimates().iter().map(|&x| x as f64).collect();
                let (a, b) = top_two(&est);
                rec.exchange.start_with(StaticPlan::head_to_head(m, a, b), 0)
            }
            _ => Outgoing::Nothing,
        };
        Self::emit(k, m, ctx, out);
    }

    fn recompute(&mut self) -> Option<&mut Recompute> {
        match &mut self.kind {
            CenterKind::Checkpoint(rec) | CenterKind::Hybrid { rec, .. } => Some(rec),
            _ => None,
        }
    }

    /// Current view for the frequency techniques.
    fn frequency_view(&self) -> Option<RuleView> {
        match &self.kind {
            CenterKind::Det(centers) => Some(det_view(&self.rule, self.m, centers)),
            CenterKind::Rand(centers) => Some(rand_view(&self.rule, self.m, centers)),
            _ => None,
        }
    }

    fn sample_view(&self, seed: u64) -> Option<RuleView> {
        let CenterKind::Sampling { sampler, size } = &self.kind else {
            return None;
        };
        let sample = sampler.draw_sample(size.total() as usize, seed);
        let (m, kind) = (self.m, self.rule.ballot_kind());
        let tally_of = |bs: &[Ballot]| {
            let mut t = Tally::new(m, kind);
            bs.iter().for_each(|b| t.add(b));
            t
        };
        if self.rule == RuleId::Runoff {
            let items = &sample.items;
            let (first, second) = if sample.short && sampler.is_complete() || items.len() < 2 {
                (&items[..], &items[..])
            } else {
                items.split_at(items.len() / 2)
            };
            let (t1, t2) = (tally_of(first), tally_of(second));
            return Some(RuleView::Runoff {
                plurality: (0..m).map(|c| t1.prefix_count(c, 1) as f64).collect(),
                pairs: (0..m * m).map(|x| t2.pair(x / m, x % m) as f64).collect(),
            });
        }
        Some(tally_view(&self.rule, &tally_of(&sample.items)))
    }
}

/// The view of an exactly known tally.
pub fn tally_view(rule: &RuleId, t: &Tally) -> RuleView {
    let m = t.m();
    let bounds = Bounds::exact(t.n() as f64);
    match rule {
        RuleId::Borda => RuleView::Scores((0..m).map(|c| t.borda_score(c) as f64).collect()),
        RuleId::Plurality | RuleId::TApproval { .. } | RuleId::Approval => {
            RuleView::Scores((0..m).map(|c| t.score(c) as f64).collect())
        }
        RuleId::Copeland | RuleId::Condorcet | RuleId::Cup { .. } => {
            RuleView::Pairs { n: (0..m * m).map(|x| t.pair(x / m, x % m) as f64).collect(), bounds }
        }
        RuleId::Runoff => RuleView::Runoff {
            plurality: (0..m).map(|c| t.prefix_count(c, 1) as f64).collect(),
            pairs: (0..m * m).map(|x| t.pair(x / m, x % m) as f64).collect(),
        },
        RuleId::Bucklin => {
            RuleView::Prefix { counts: (0..m * m).map(|x| t.prefix_count(x / m, x % m + 1) as f64).collect(), bounds }
        }
    }
}

/// Top-`j` estimate from block estimates, and how many blocks it summed.
fn prefix_from_blocks(est: &dyn Fn(usize) -> f64, m: usize, c: usize, j: usize) -> (f64, usize) {
    let space = ItemSpace { m };
    let terms = bucklin_terms(j);
    let sum = terms.iter().map(|&(i, jj)| est(space.index(ReductionItem::Bucklin { c, i, j: jj }))).sum();
    (sum, terms.len())
}

/// Per-candidate estimates of `n` from the two top-level blocks.
fn bucklin_sizes(est: &dyn Fn(usize) -> f64, m: usize) -> Vec<f64> {
    let space = ItemSpace { m };
    let top = log2_exact(padded_size(m)) - 1;
    (0..m)
        .map(|c| (0..2).map(|j| est(space.index(ReductionItem::Bucklin { c, i: top, j }))).sum())
        .collect()
}

fn det_view(rule: &RuleId, m: usize, centers: &[DetFreqCenter]) -> RuleView {
    let e1 = centers[0].error_bound() as f64;
    let est = |i: usize| centers[0].estimate(i) as f64;
    let pair_range = |est: &dyn Fn(usize) -> f64, e1: f64| {
        let sums: Vec<f64> = (0..m).flat_map(|a| (a + 1..m).map(move |b| (a, b))).map(|(a, b)| est(a * m + b) + est(b * m + a)).collect();
        let lo = sums.iter().copied().fold(0.0, f64::max);
        let hi = sums.iter().map(|s| s + 2.0 * e1).fold(f64::INFINITY, f64::min);
        (lo, hi.max(lo))
    };
    match rule {
        RuleId::Plurality | RuleId::TApproval { .. } | RuleId::Approval | RuleId::Borda => {
            RuleView::Scores((0..m).map(est).collect())
        }
        RuleId::Copeland | RuleId::Condorcet | RuleId::Cup { .. } => {
            let (n_lo, n_hi) = pair_range(&est, e1);
            let n = (0..m * m).map(|x| if x / m == x % m { 0.0 } else { est(x) + e1 / 2.0 }).collect();
            RuleView::Pairs { n, bounds: Bounds { err: e1 / 2.0, n_lo, n_hi } }
        }
        RuleId::Runoff => {
            let e2 = centers[1].error_bound() as f64;
            let pest = |i: usize| centers[1].estimate(i) as f64;
            RuleView::Runoff {
                plurality: (0..m).map(est).collect(),
                pairs: (0..m * m).map(|x| pest(x) + e2 / 2.0).collect(),
            }
        }
        RuleId::Bucklin => {
            let sizes = bucklin_sizes(&est, m);
            let n_lo = sizes.iter().copied().fold(0.0, f64::max);
            let n_hi = sizes.iter().map(|s| s + 2.0 * e1).fold(f64::INFINITY, f64::min).max(n_lo);
            let big = padded_size(m);
            let levels = log2_exact(big) as f64;
            let counts = (0..m * m)
                .map(|x| {
                    let (c, j) = (x / m, x % m + 1);
                    if j == big {
                        (n_lo + n_hi) / 2.0
                    } else {
                        let (sum, terms) = prefix_from_blocks(&est, m, c, j);
                        sum + terms as f64 * e1 / 2.0
                    }
                })
                .collect();
            let err = levels.max(2.0) * e1 / 2.0;
            RuleView::Prefix { counts, bounds: Bounds { err, n_lo, n_hi } }
        }
    }
}

fn rand_view(rule: &RuleId, m: usize, centers: &[RandFreqCenter]) -> RuleView {
    let est = |i: usize| centers[0].estimate(i);
    match rule {
        RuleId::Plurality | RuleId::TApproval { .. } | RuleId::Approval | RuleId::Borda => {
            RuleView::Scores((0..m).map(est).collect())
        }
        RuleId::Copeland | RuleId::Condorcet | RuleId::Cup { .. } => {
            let pairs: Vec<(usize, usize)> = (0..m).flat_map(|a| (a + 1..m).map(move |b| (a, b))).collect();
            let n_avg = pairs.iter().map(|&(a, b)| est(a * m + b) + est(b * m + a)).sum::<f64>() / pairs.len() as f64;
            let n = (0..m * m).map(|x| if x / m == x % m { 0.0 } else { est(x) }).collect();
            RuleView::Pairs { n, bounds: Bounds::exact(n_avg) }
        }
        RuleId::Runoff => RuleView::Runoff {
            plurality: (0..m).map(est).collect(),
            pairs: (0..m * m).map(|x| centers[1].estimate(x)).collect(),
        },
        RuleId::Bucklin => {
            let sizes = bucklin_sizes(&est, m);
            let n_avg = sizes.iter().sum::<f64>() / m as f64;
            let big = padded_size(m);
            let counts = (0..m * m)
                .map(|x| {
                    let (c, j) = (x / m, x % m + 1);
                    if j == big {
                        n_avg
                    } else {
                        prefix_from_blocks(&est, m, c, j).0
                    }
                })
                .collect();
            RuleView::Prefix { counts, bounds: Bounds::exact(n_avg) }
        }
    }
}

impl CenterEndpoint for TrackerCenter {
    type Msg = Msg;

    fn on_message(&mut self, ctx: &mut Ctx<'_, Msg>, from: usize, msg: Msg) {
        self.started = true;
        let (k, m) = (self.k, self.m);
        match msg.body {
            Body::Ballot(b) => {
                if let CenterKind::Naive(t) = &mut self.kind {
                    t.add(&b);
                }
            }
            Body::Freq { channel, up } => {
                let scale = match &mut self.kind {
                    CenterKind::Det(cs) => cs[channel].receive(from, up),
                    CenterKind::Rand(cs) => cs[channel].receive(from, up),
                    CenterKind::Hybrid { freq, .. } => freq.receive(from, up),
                    _ => None,
                };
                if let Some(scale) = scale {
                    let bits = bits_for_levels(self.chans.len() as u64) + count_bits(scale);
                    ctx.out.broadcast(k, Msg { body: Body::Scale { channel, scale }, bits });
                }
            }
            Body::Count(v) => {
                let Some(rec) = self.recompute() else { return };
                if rec.clock.receive(from, v) {
                    if rec.exchange.busy() {
                        rec.pending = true;
                    } else {
                        self.start(ctx);
                    }
                }
            }
            Body::LocalCount(v) => {
                let (rule, eps) = (self.rule.clone(), static_eps(self.eps));
                let Some(rec) = self.recompute() else { return };
                let out = rec.exchange.on_local_count(v, |n| StaticPlan::new(&rule, m, k, eps, n));
                Self::emit(k, m, ctx, out);
            }
            Body::Reply(values) => {
                let Some(rec) = self.recompute() else { return };
                let out = rec.exchange.on_reply(&values);
                let restart = !rec.exchange.busy() && std::mem::take(&mut rec.pending);
                Self::emit(k, m, ctx, out);
                if restart {
                    self.start(ctx);
                }
            }
            Body::Sampled { ballot, level } => {
                if let CenterKind::Sampling { sampler, .. } = &mut self.kind {
                    if let Some(r) = sampler.receive(ballot, level) {
                        ctx.out.broadcast(k, Msg { body: Body::Round(r), bits: LEVEL_BITS });
                    }
                }
            }
            _ => {}
        }
    }

    fn on_query(&mut self, ctx: &mut Ctx<'_, Msg>) -> Option<Candidate> {
        if !self.started {
            return None;
        }
        match &self.kind {
            CenterKind::Naive(t) => return t.evaluate(&self.rule).ok().and_then(|w| w.first().copied()),
            CenterKind::Checkpoint(rec) | CenterKind::Hybrid { rec, .. } => return rec.exchange.declared(),
            _ => {}
        }
        let view = match self.frequency_view() {
            Some(v) => v,
            None => self.sample_view(ctx.rng.gen())?,
        };
        Some(declare(&self.rule, &view, self.m, self.eps))
    }

    fn checkpoints(&self) -> u64 {
        match &self.kind {
            CenterKind::Checkpoint(rec) | CenterKind::Hybrid { rec, .. } => rec.clock.fired(),
            _ => 0,
        }
    }
}

/// Validated endpoints for one configuration.
pub fn build(cfg: &TrackerConfig) -> Result<(TrackerCenter, Vec<TrackerSite>), TrackerError> {
    cfg.validate()?;
    let center = TrackerCenter::new(cfg)?;
    Ok((center, (0..cfg.k).map(|_| TrackerSite::new(cfg)).collect()))
}

/// Runs one tracker over a stream. Ballots must fit the rule.
pub fn run_tracker(
    cfg: &TrackerConfig,
    events: &[StreamEvent],
    queries: &[u64],
    seed: u64,
    record_messages: bool,
) -> Result<Transcript, TrackerError> {
    let (mut center, mut sites) = build(cfg)?;
    for e in events {
        reduce_weighted(&cfg.rule, &e.ballot, cfg.m)?;
    }
    let opts = RunOptions {
        seed,
        record_messages,
        protocol: cfg.technique.name().to_string(),
        rule: Some(cfg.rule.clone()),
        eps: Some(cfg.eps),
    };
    Ok(run_stream(events, cfg.m, cfg.rule.ballot_kind(), &mut center, &mut sites, queries, &opts)?)
}
