//! Frequency tracking over a fixed item universe.
//!
//! Both variants embed a `λ = 1/2` count tracker over the item stream. The
//! center rebroadcasts its count estimate `n̂` each time it doubles, and the
//! sites use `n̂` to set their reporting rate.

use super::count::{CountCenter, CountSite};
use crate::ratio::Ratio;
use rand::Rng;

/// Default constant in the randomized reporting probability.
pub const DEFAULT_CP: f64 = 4.0;

/// A site-to-center report.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FreqUp {
    /// Local item-stream length for the embedded count tracker.
    Count(u64),
    /// Exact local count of one item.
    Item(usize, u64),
}

fn half() -> Ratio {
    Ratio::new(1, 2).expect("constant")
}

/// Threshold step `max(1, floor(ε·n̂/(4k)))`.
pub fn det_step(eps: Ratio, scale: u64, k: usize) -> u64 {
    (eps.floor_mul(scale) / (4 * k as u64)).max(1)
}

/// Tracks `n̂` at the center and decides when to rebroadcast it.
#[derive(Clone, Debug)]
struct ScaleKeeper {
    count: CountCenter,
    scale: u64,
}

impl ScaleKeeper {
    fn new(k: usize) -> Self {
        ScaleKeeper { count: CountCenter::new(k), scale: 0 }
    }

    fn receive(&mut self, site: usize, value: u64) -> Option<u64> {
        self.count.receive(site, value);
        let est = self.count.estimate();
        let due = if self.scale == 0 { est > 0 } else { est >= 2 * self.scale };
        due.then(|| {
            self.scale = est;
            est
        })
    }
}

#[derive(Clone, Debug)]
pub struct DetFreqSite {
    eps: Ratio,
    k: usize,
    counts: Vec<u64>,
    reported: Vec<u64>,
    count: CountSite,
    scale: u64,
}

impl DetFreqSite {
    pub fn new(eps: Ratio, k: usize, universe: usize) -> Self {
        DetFreqSite {
            eps,
            k,
            counts: vec![0; universe],
            reported: vec![0; universe],
            count: CountSite::new(half()),
            scale: 0,
        }
    }

    pub fn set_scale(&mut self, scale: u64) {
        self.scale = scale;
    }

    pub fn local(&self, item: usize) -> u64 {
        self.counts[item]
    }

    /// Records `weight` copies of `item`, pushing any due reports.
    pub fn arrive(&mut self, item: usize, weight: u64, out: &mut Vec<FreqUp>) {
        if let Some(v) = self.count.arrive(weight) {
            out.push(FreqUp::Count(v));
        }
        self.counts[item] += weight;
        if self.counts[item] - self.reported[item] >= det_step(self.eps, self.scale, self.k) {
            self.reported[item] = self.counts[item];
            out.push(FreqUp::Item(item, self.counts[item]));
        }
    }
}

/// Center of the deterministic tracker. Each estimate `f′(i)` is a lower
/// bound with `f(i) − f′(i) ≤ error_bound()`.
#[derive(Clone, Debug)]
pub struct DetFreqCenter {
    eps: Ratio,
    k: usize,
    universe: usize,
    last: Vec<u64>,
    sums: Vec<u64>,
    scale: ScaleKeeper,
}

impl DetFreqCenter {
    pub fn new(eps: Ratio, k: usize, universe: usize) -> Self {
        DetFreqCenter { eps, k, universe, last: vec![0; k * universe], sums: vec![0; universe], scale: ScaleKeeper::new(k) }
    }

    /// Handles a report; returns a new `n̂` to broadcast to every site.
    pub fn receive(&mut self, site: usize, up: FreqUp) -> Option<u64> {
        match up {
            FreqUp::Count(v) => self.scale.receive(site, v),
            FreqUp::Item(i, v) => {
                let slot = &mut self.last[site * self.universe + i];
                self.sums[i] = self.sums[i] - *slot + v;
                *slot = v;
                None
            }
        }
    }

    pub fn estimate(&self, item: usize) -> u64 {
        self.sums[item]
    }

    pub fn estimates(&self) -> &[u64] {
        &self.sums
    }

    /// Maximum total unreported count of one item across all sites.
    pub fn error_bound(&self) -> u64 {
        self.k as u64 * (det_step(self.eps, self.scale.scale, self.k) - 1)
    }

    /// Current `λ = 1/2` estimate of the item-stream length.
    pub fn count_estimate(&self) -> u64 {
        self.scale.count.estimate()
    }

    pub fn scale(&self) -> u64 {
        self.scale.scale
    }
}

/// Reporting probability `min(1, c_p·√k/(ε·n̂))`.
pub fn rand_probability(eps: Ratio, scale: u64, k: usize, cp: f64) -> f64 {
    if scale == 0 || eps.is_zero() {
        return 1.0;
    }
    (cp * (k as f64).sqrt() / (eps.as_f64() * scale as f64)).min(1.0)
}

#[derive(Clone, Debug)]
pub struct RandFreqSite {
    eps: Ratio,
    k: usize,
    cp: f64,
    counts: Vec<u64>,
    count: CountSite,
    scale: u64,
}

impl RandFreqSite {
    pub fn new(eps: Ratio, k: usize, universe: usize, cp: f64) -> Self {
        RandFreqSite { eps, k, cp, counts: vec![0; universe], count: CountSite::new(half()), scale: 0 }
    }

    pub fn set_scale(&mut self, scale: u64) {
        self.scale = scale;
    }

    /// Each of the `weight` unit arrivals triggers a report with probability
    /// `p`; at most one report (the final count) is sent.
    pub fn arrive<R: Rng>(&mut self, item: usize, weight: u64, rng: &mut R, out: &mut Vec<FreqUp>) {
        if let Some(v) = self.count.arrive(weight) {
            out.push(FreqUp::Count(v));
        }
        self.counts[item] += weight;
        let p = rand_probability(self.eps, self.scale, self.k, self.cp);
        let fire = p >= 1.0 || (0..weight).any(|_| rng.gen::<f64>() < p);
        if fire {
            out.push(FreqUp::Item(item, self.counts[item]));
        }
    }
}

/// Center of the randomized tracker. A site that has reported item `i`
/// contributes its last report plus `1/p − 1`, the expected number of
/// arrivals since then.
#[derive(Clone, Debug)]
pub struct RandFreqCenter {
    eps: Ratio,
    k: usize,
    cp: f64,
    universe: usize,
    last: Vec<Option<u64>>,
    scale: ScaleKeeper,
}

impl RandFreqCenter {
    pub fn new(eps: Ratio, k: usize, universe: usize, cp: f64) -> Self {
        RandFreqCenter { eps, k, cp, universe, last: vec![None; k * universe], scale: ScaleKeeper::new(k) }
    }

    pub fn receive(&mut self, site: usize, up: FreqUp) -> Option<u64> {
        match up {
            FreqUp::Count(v) => self.scale.receive(site, v),
            FreqUp::Item(i, v) => {
                self.last[site * self.universe + i] = Some(v);
                None
            }
        }
    }

    pub fn probability(&self) -> f64 {
        rand_probability(self.eps, self.scale.scale, self.k, self.cp)
    }

    pub fn estimate(&self, item: usize) -> f64 {
        let tail = 1.0 / self.probability() - 1.0;
        (0..self.k)
            .filter_map(|j| self.last[j * self.universe + item])
            .map(|v| v as f64 + tail)
            .sum()
    }

    pub fn count_estimate(&self) -> u64 {
        self.scale.count.estimate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Drives `k` deterministic sites and one center directly.
    struct DetRig {
        sites: Vec<DetFreqSite>,
        center: DetFreqCenter,
        messages: u64,
    }

    impl DetRig {
        fn new(eps: Ratio, k: usize, u: usize) -> Self {
            DetRig { sites: (0..k).map(|_| DetFreqSite::new(eps, k, u)).collect(), center: DetFreqCenter::new(eps, k, u), messages: 0 }
        }

        fn arrive(&mut self, site: usize, item: usize) {
            let mut out = Vec::new();
            self.sites[site].arrive(item, 1, &mut out);
            for up in out {
                self.messages += 1;
                if let Some(s) = self.center.receive(site, up) {
                    self.messages += self.sites.len() as u64;
                    self.sites.iter_mut().for_each(|x| x.set_scale(s));
                }
            }
        }
    }

    #[test]
    fn small_stream_within_bound() {
        let stream = [2usize, 2, 1, 3, 3, 3, 3, 3, 2, 1];
        let eps = Ratio::new(1, 10).unwrap();
        let mut rig = DetRig::new(eps, 2, 4);
        let mut truth = [0u64; 4];
        for (t, &x) in stream.iter().enumerate() {
            rig.arrive(t % 2, x);
            truth[x] += 1;
        }
        assert_eq!(&truth[1..], &[2, 3, 5]);
        for i in 0..4 {
            assert!(truth[i].abs_diff(rig.center.estimate(i)) as f64 <= 0.1 * 10.0);
        }
    }

    #[test]
    fn single_site_unit_eps_is_exact_until_scale_grows() {
        let mut rig = DetRig::new(Ratio::ONE, 1, 1);
        for n in 1..=3u64 {
            rig.arrive(0, 0);
            assert_eq!(rig.center.estimate(0), n);
        }
    }

    #[test]
    fn random_stream_error_and_bound() {
        let eps = Ratio::new(1, 10).unwrap();
        let (k, u) = (4, 5);
        let mut rig = DetRig::new(eps, k, u);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut truth = vec![0u64; u];
        for n in 1..=10_000u64 {
            let item = rng.gen_range(0..u);
            rig.arrive(rng.gen_range(0..k), item);
            truth[item] += 1;
            for i in 0..u {
                let est = rig.center.estimate(i);
                assert!(est <= truth[i]);
                assert!(truth[i] - est <= rig.center.error_bound());
                assert!(10 * (truth[i] - est) <= n);
            }
        }
    }

    #[test]
    fn randomized_is_exact_while_p_is_one() {
        let eps = Ratio::new(1, 10).unwrap();
        let k = 4;
        let mut sites: Vec<RandFreqSite> = (0..k).map(|_| RandFreqSite::new(eps, k, 2, DEFAULT_CP)).collect();
        let mut c = RandFreqCenter::new(eps, k, 2, DEFAULT_CP);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        // p = 1 while n̂ <= 4·2/0.1 = 80.
        for n in 1..=60u64 {
            let mut out = Vec::new();
            sites[(n % 4) as usize].arrive(0, 1, &mut rng, &mut out);
            for up in out {
                if let Some(s) = c.receive((n % 4) as usize, up) {
                    sites.iter_mut().for_each(|x| x.set_scale(s));
                }
            }
            assert_eq!(c.probability(), 1.0);
            assert_eq!(c.estimate(0), n as f64);
        }
    }
}
