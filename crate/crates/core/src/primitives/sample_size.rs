//! Sample sizes for the sampling-based trackers.

use crate::election::RuleId;
use crate::ratio::Ratio;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SampleSizeError {
    #[error("epsilon must lie strictly between 0 and 1, got {0}")]
    Epsilon(Ratio),
    #[error("delta must lie strictly between 0 and 1, got {0}")]
    Delta(Ratio),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleSizeSpec {
    pub rule: RuleId,
    pub eps: Ratio,
    pub delta: Ratio,
    pub m: usize,
}

/// Size of each independent sample set and how many sets are needed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleSize {
    pub per_set: u64,
    pub sets: u64,
}

impl SampleSize {
    pub fn total(&self) -> u64 {
        self.per_set * self.sets
    }
}

/// `3/ε²·ln(2/δ)`, the smallest size any estimate may use.
pub fn floor_size(eps: f64, delta: f64) -> u64 {
    (3.0 / (eps * eps) * (2.0 / delta).ln()).ceil() as u64
}

pub fn required_sample_size(spec: &SampleSizeSpec) -> Result<SampleSize, SampleSizeError> {
    if !spec.eps.is_open_unit() {
        return Err(SampleSizeError::Epsilon(spec.eps));
    }
    if !spec.delta.is_open_unit() {
        return Err(SampleSizeError::Delta(spec.delta));
    }
    let (e, d, m) = (spec.eps.as_f64(), spec.delta.as_f64(), spec.m as f64);
    let size = |c: f64, union: f64| (c / (e * e) * (2.0 * union / d).ln()).ceil() as u64;
    let (per_set, sets) = match &spec.rule {
        RuleId::Plurality => (size(24.0, 1.0), 1),
        RuleId::TApproval { t } => (size(24.0, *t as f64), 1),
        RuleId::Approval => (size(12.0, m), 1),
        RuleId::Borda => (size(48.0, m), 1),
        RuleId::Copeland | RuleId::Condorcet | RuleId::Cup { .. } | RuleId::Bucklin => (size(12.0, m * m), 1),
        RuleId::Runoff => (size(48.0, 2.0), 2),
    };
    Ok(SampleSize { per_set: per_set.max(floor_size(e, d)), sets })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(rule: RuleId, eps: f64, delta: f64, m: usize) -> SampleSizeSpec {
        SampleSizeSpec { rule, eps: Ratio::from_f64(eps).unwrap(), delta: Ratio::from_f64(delta).unwrap(), m }
    }

    #[test]
    fn two_approval_spot_value() {
        // 2400·ln 40 = 8853.30…
        let want = (2400.0f64 * 40f64.ln()).ceil() as u64;
        assert_eq!(want, 8854);
        let s = required_sample_size(&spec(RuleId::TApproval { t: 2 }, 0.1, 0.1, 4)).unwrap();
        assert_eq!(s, SampleSize { per_set: want, sets: 1 });
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(required_sample_size(&spec(RuleId::Borda, 0.0, 0.1, 4)).is_err());
        assert!(required_sample_size(&spec(RuleId::Borda, 0.1, 1.0, 4)).is_err());
        assert!(required_sample_size(&spec(RuleId::Borda, 1.0, 0.1, 4)).is_err());
    }

    #[test]
    fn monotone_and_above_floor() {
        for rule in RuleId::all(8) {
            let mut prev = u64::MAX;
            for eps in [0.05, 0.1, 0.2, 0.4] {
                let s = required_sample_size(&spec(rule.clone(), eps, 0.1, 8)).unwrap();
                assert!(s.per_set >= floor_size(eps, 0.1));
                assert!(s.total() <= prev);
                prev = s.total();
            }
            let a = required_sample_size(&spec(rule.clone(), 0.1, 0.05, 8)).unwrap();
            let b = required_sample_size(&spec(rule.clone(), 0.1, 0.2, 8)).unwrap();
            assert!(a.total() >= b.total());
        }
    }
}
