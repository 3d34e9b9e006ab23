//! Checkpoint-driven tracking.
//!
//! A count tracker with precision `λ = ε/12` runs continuously. Whenever its
//! estimate first passes `(1+λ)^i` for a new `i`, the center runs a one-shot
//! static exchange that computes an `ε/4`-winner of the election so far, and
//! it declares that candidate until the next checkpoint.

use crate::election::Candidate;
use crate::primitives::CountCenter;
use crate::ratio::Ratio;
use crate::trackers::static_proto::{StaticPlan, StaticQuery, Step};

/// Largest `i` with `(1+λ)^i ≤ n′`, if it exceeds `last`.
pub fn should_fire(n_prime: f64, last: Option<u64>, lambda: Ratio) -> Option<u64> {
    if n_prime < 1.0 {
        return None;
    }
    let base = lambda.one_plus().as_f64();
    let mut i = ((n_prime * (1.0 + 1e-12)).ln() / base.ln()).floor().max(0.0) as u64;
    // Guard the float estimate against off-by-one in either direction.
    while i > 0 && base.powi(i as i32) > n_prime * (1.0 + 1e-12) {
        i -= 1;
    }
    while base.powi(i as i32 + 1) <= n_prime * (1.0 + 1e-12) {
        i += 1;
    }
    match last {
        Some(l) if i <= l => None,
        _ => Some(i),
    }
}

/// `1 + log_{1+λ}(n)`, the most checkpoints a stream of length `n` can fire.
pub fn checkpoint_bound(n: f64, lambda: Ratio) -> f64 {
    if n < 1.0 {
        return 0.0;
    }
    1.0 + n.ln() / lambda.one_plus().as_f64().ln()
}

/// `λ = ε/12`.
pub fn checkpoint_lambda(eps: Ratio) -> Ratio {
    eps.div_int(12)
}

/// Precision of the static recomputation, `ε/4`.
pub fn static_eps(eps: Ratio) -> Ratio {
    eps.div_int(4)
}

/// Center-side count tracking plus the firing rule.
#[derive(Clone, Debug)]
pub struct CheckpointClock {
    count: CountCenter,
    lambda: Ratio,
    last: Option<u64>,
    fired: u64,
}

impl CheckpointClock {
    pub fn new(k: usize, lambda: Ratio) -> Self {
        CheckpointClock { count: CountCenter::new(k), lambda, last: None, fired: 0 }
    }

    /// Records a count report; `true` if a checkpoint fires.
    pub fn receive(&mut self, site: usize, value: u64) -> bool {
        self.count.receive(site, value);
        match should_fire(self.count.estimate() as f64, self.last, self.lambda) {
            Some(i) => {
                self.last = Some(i);
                self.fired += 1;
                true
            }
            None => false,
        }
    }

    pub fn fired(&self) -> u64 {
        self.fired
    }

    pub fn estimate(&self) -> u64 {
        self.count.estimate()
    }
}

/// What the center must send next.
#[derive(Clone, Debug, PartialEq)]
pub enum Outgoing {
    /// Ask every site for its exact local count.
    Poll,
    /// Send the query, with the exact total, to every site.
    Ask { n: u64, query: StaticQuery },
    Nothing,
}

#[derive(Clone, Debug)]
enum Phase {
    Idle,
    Polling { got: usize, n: u64 },
    Asking { got: usize, sums: Vec<u64>, n: u64 },
}

/// Center side of one static exchange at a time.
#[derive(Clone, Debug)]
pub struct Exchange {
    k: usize,
    phase: Phase,
    plan: Option<StaticPlan>,
    declared: Option<Candidate>,
}

impl Exchange {
    pub fn new(k: usize) -> Self {
        Exchange { k, phase: Phase::Idle, plan: None, declared: None }
    }

    pub fn declared(&self) -> Option<Candidate> {
        self.declared
    }

    pub fn busy(&self) -> bool {
        !matches!(self.phase, Phase::Idle)
    }

    /// Starts with a poll for exact local counts.
    pub fn start_polled(&mut self) -> Outgoing {
        self.phase = Phase::Polling { got: 0, n: 0 };
        Outgoing::Poll
    }

    /// Starts directly with a plan whose query needs no exact total.
    pub fn start_with(&mut self, mut plan: StaticPlan, n: u64) -> Outgoing {
        let query = plan.first_query();
        self.plan = Some(plan);
        self.phase = Phase::Asking { got: 0, sums: Vec::new(), n };
        Outgoing::Ask { n, query }
    }

    /// Handles a local count; once all arrived, `make_plan(n)` builds the plan.
    pub fn on_local_count(&mut self, value: u64, make_plan: impl FnOnce(u64) -> StaticPlan) -> Outgoing {
        let Phase::Polling { got, n } = &mut self.phase else {
            return Outgoing::Nothing;
        };
        *got += 1;
        *n += value;
        if *got < self.k {
            return Outgoing::Nothing;
        }
        let n = *n;
        self.start_with(make_plan(n), n)
    }

    pub fn on_reply(&mut self, values: &[u64]) -> Outgoing {
        let Phase::Asking { got, sums, n } = &mut self.phase else {
            return Outgoing::Nothing;
        };
        if sums.is_empty() {
            sums.resize(values.len(), 0);
        }
        for (s, v) in sums.iter_mut().zip(values) {
            *s += v;
        }
        *got += 1;
        if *got < self.k {
            return Outgoing::Nothing;
        }
        let (sums, n) = (std::mem::take(sums), *n);
        let plan = self.plan.as_mut().expect("asking implies a plan");
        match plan.absorb(&sums) {
            Step::Ask(query) => {
                self.phase = Phase::Asking { got: 0, sums: Vec::new(), n };
                Outgoing::Ask { n, query }
            }
            Step::Done(c) => {
                self.declared = Some(c);
                self.phase = Phase::Idle;
                self.plan = None;
                Outgoing::Nothing
            }
        }
    }
}
