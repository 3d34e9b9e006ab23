//! Deterministic count tracking with one-way threshold reports.

use crate::ratio::Ratio;

/// Site side: reports its exact local count once it exceeds the last
/// report by a `(1+λ)` factor.
#[derive(Clone, Debug)]
pub struct CountSite {
    growth: Ratio,
    local: u64,
    reported: u64,
}

impl CountSite {
    pub fn new(lambda: Ratio) -> Self {
        CountSite { growth: lambda.one_plus(), local: 0, reported: 0 }
    }

    pub fn local(&self) -> u64 {
        self.local
    }

    /// Counts `weight` arrivals; returns the value to report, if any.
    pub fn arrive(&mut self, weight: u64) -> Option<u64> {
        self.local += weight;
        if weight == 0 {
            return None;
        }
        let due = if self.reported == 0 { 1 } else { self.growth.ceil_mul(self.reported) };
        (self.local >= due).then(|| {
            self.reported = self.local;
            self.local
        })
    }
}

/// Center side: `n′` is the sum of the latest report from each site.
#[derive(Clone, Debug)]
pub struct CountCenter {
    last: Vec<u64>,
    sum: u64,
}

impl CountCenter {
    pub fn new(k: usize) -> Self {
        CountCenter { last: vec![0; k], sum: 0 }
    }

    pub fn receive(&mut self, site: usize, value: u64) {
        self.sum = self.sum - self.last[site] + value;
        self.last[site] = value;
    }

    pub fn estimate(&self) -> u64 {
        self.sum
    }
}
