//! Distributed uniform sampling by geometric levels.
//!
//! Every item gets a level (number of trailing one bits of a random word, so
//! `P[level ≥ r] = 2^-r`). Sites forward items whose level reaches the
//! current round. When the pool grows past `4s` the center raises the round,
//! discards items below it and broadcasts the new round.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn draw_level<R: Rng>(rng: &mut R) -> u32 {
    rng.gen::<u64>().trailing_ones()
}

#[derive(Clone, Debug, Default)]
pub struct SamplerSite {
    round: u32,
}

impl SamplerSite {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn round(&self) -> u32 {
        self.round
    }

    pub fn set_round(&mut self, round: u32) {
        self.round = self.round.max(round);
    }

    /// Level to forward with, if the item survives the current round.
    pub fn arrive<R: Rng>(&mut self, rng: &mut R) -> Option<u32> {
        let level = draw_level(rng);
        (level >= self.round).then_some(level)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sample<T> {
    pub items: Vec<T>,
    /// Fewer items were available than requested.
    pub short: bool,
}

#[derive(Clone, Debug)]
pub struct SamplerCenter<T> {
    target: usize,
    round: u32,
    pool: Vec<(T, u32)>,
    version: u64,
}

impl<T: Clone> SamplerCenter<T> {
    pub fn new(target: usize) -> Self {
        SamplerCenter { target: target.max(1), round: 0, pool: Vec::new(), version: 0 }
    }

    pub fn round(&self) -> u32 {
        self.round
    }

    pub fn pool_len(&self) -> usize {
        self.pool.len()
    }

    pub fn pool(&self) -> impl Iterator<Item = &(T, u32)> {
        self.pool.iter()
    }

    /// Adds a forwarded item; returns a new round to broadcast, if raised.
    pub fn receive(&mut self, item: T, level: u32) -> Option<u32> {
        if level < self.round {
            return None;
        }
        self.pool.push((item, level));
        self.version += 1;
        let start = self.round;
        while self.pool.len() > 4 * self.target {
            self.round += 1;
            let r = self.round;
            self.pool.retain(|x| x.1 >= r);
        }
        (self.round > start).then_some(self.round)
    }

    /// `min(want, |pool|)` distinct uniform picks from the pool. The picks
    /// depend only on `seed` and the pool contents.
    pub fn draw_sample(&self, want: usize, seed: u64) -> Sample<T> {
        let take = want.min(self.pool.len());
        let mut rng = ChaCha8Rng::seed_from_u64(crate::harness::derive_seed(seed, &[self.version]));
        let mut picks = index::sample(&mut rng, self.pool.len(), take).into_vec();
        picks.sort_unstable();
        Sample { items: picks.into_iter().map(|i| self.pool[i].0.clone()).collect(), short: take < want }
    }

    /// The pool is the whole stream seen so far (no item was ever discarded).
    pub fn is_complete(&self) -> bool {
        self.round == 0
    }
}
