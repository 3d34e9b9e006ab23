use crate::election::{ElectionError, RuleId};
use crate::primitives::SampleSizeError;
use crate::ratio::Ratio;
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

use super::reduce::{log2_exact, padded_size};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Technique {
    /// Deterministic frequency tracking over the rule's reduction.
    FrequencyDet,
    /// Randomized frequency tracking over the rule's reduction.
    FrequencyRand,
    /// Count-triggered static recomputation.
    Checkpoint,
    /// Distributed uniform sample of ballots.
    Sampling,
    /// Runoff only: plurality frequencies plus exact head-to-heads at checkpoints.
    Hybrid,
    /// Forward every ballot.
    Naive,
}

impl Technique {
    pub fn is_deterministic(self) -> bool {
        matches!(self, Technique::FrequencyDet | Technique::Checkpoint | Technique::Hybrid | Technique::Naive)
    }

    pub fn name(self) -> &'static str {
        match self {
            Technique::FrequencyDet => "frequency_det",
            Technique::FrequencyRand => "frequency_rand",
            Technique::Checkpoint => "checkpoint",
            Technique::Sampling => "sampling",
            Technique::Hybrid => "hybrid",
            Technique::Naive => "naive",
        }
    }
}

impl fmt::Display for Technique {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error)]
pub enum TrackerError {
    #[error("technique {technique} is not available for {rule}")]
    Unsupported { rule: String, technique: Technique },
    #[error("need at least one site")]
    NoSites,
    #[error("epsilon must lie strictly between 0 and 1, got {0}")]
    Epsilon(Ratio),
    #[error("sampling needs a failure probability delta")]
    MissingDelta,
    #[error(transparent)]
    Election(#[from] ElectionError),
    #[error(transparent)]
    SampleSize(#[from] SampleSizeError),
    #[error(transparent)]
    Harness(#[from] crate::harness::HarnessError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackerConfig {
    pub rule: RuleId,
    pub technique: Technique,
    pub eps: Ratio,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<Ratio>,
    pub k: usize,
    pub m: usize,
    /// Constant in the randomized reporting probability.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cp: Option<f64>,
}

impl TrackerConfig {
    pub fn new(rule: RuleId, technique: Technique, eps: Ratio, k: usize, m: usize) -> Self {
        TrackerConfig { rule, technique, eps, delta: None, k, m, cp: None }
    }

    pub fn with_delta(mut self, delta: Ratio) -> Self {
        self.delta = Some(delta);
        self
    }

    pub fn validate(&self) -> Result<(), TrackerError> {
        self.rule.validate(self.m)?;
        if self.k == 0 {
            return Err(TrackerError::NoSites);
        }
        if !self.eps.is_open_unit() {
            return Err(TrackerError::Epsilon(self.eps));
        }
        let runoff = self.rule == RuleId::Runoff;
        let bad = match self.technique {
            Technique::Hybrid => !runoff,
            // The runoff checkpoint protocol is the hybrid one.
            Technique::Checkpoint => runoff,
            _ => false,
        };
        if bad {
            return Err(TrackerError::Unsupported { rule: self.rule.name(), technique: self.technique });
        }
        if self.technique == Technique::Sampling && self.delta.is_none() {
            return Err(TrackerError::MissingDelta);
        }
        Ok(())
    }

    pub fn cp(&self) -> f64 {
        self.cp.unwrap_or(crate::primitives::DEFAULT_CP)
    }
}

/// What a frequency channel counts.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ChannelKind {
    /// Candidate items of the rule's own reduction.
    Scores,
    /// First choices only.
    TopChoice,
    Pairs,
    Bucklin,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Channel {
    pub kind: ChannelKind,
    pub universe: usize,
    pub eps: Ratio,
}

fn pair_count(m: usize) -> u64 {
    (m * (m - 1) / 2).max(1) as u64
}

/// Frequency channels and their precisions for `rule` at target `eps`.
pub fn channels(rule: &RuleId, m: usize, eps: Ratio) -> Vec<Channel> {
    let mu = m as u64;
    let scores = |e: Ratio| Channel { kind: ChannelKind::Scores, universe: m, eps: e };
    let pairs = |e: Ratio| Channel { kind: ChannelKind::Pairs, universe: m * m, eps: e };
    match rule {
        RuleId::Plurality => vec![scores(eps.div_int(2))],
        RuleId::TApproval { t } => vec![scores(eps.div_int(2 * *t as u64))],
        RuleId::Approval => vec![scores(eps.div_int(2 * mu))],
        RuleId::Borda => vec![scores(eps.div_int(4 * mu))],
        RuleId::Copeland | RuleId::Condorcet | RuleId::Cup { .. } => vec![pairs(eps.div_int(mu * mu))],
        RuleId::Runoff => vec![
            Channel { kind: ChannelKind::TopChoice, universe: m, eps: eps.div_int(6) },
            pairs(eps.div_int(3 * pair_count(m))),
        ],
        RuleId::Bucklin => {
            let big = padded_size(m);
            let levels = log2_exact(big) as u64;
            let universe = big * levels as usize * big;
            vec![Channel { kind: ChannelKind::Bucklin, universe, eps: eps.div_int(2 * mu * levels * levels) }]
        }
    }
}
