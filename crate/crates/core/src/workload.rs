//! Seeded ballot streams and site assignment.

use crate::election::{parse_stream_text, Ballot, BallotKind, ElectionError};
use crate::harness::{mix64, StreamEvent};
use crate::ratio::Ratio;
use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("weights must be {m} non-negative numbers, not all zero")]
    Weights { m: usize },
    #[error("margin {0} outside [0, (m-1)/m]")]
    Margin(f64),
    #[error("planted winner {winner} is not a candidate of {m}")]
    Winner { winner: usize, m: usize },
    #[error("adversarial flip needs m = 2, epsilon < 1/3 and k >= 1")]
    Flip,
    #[error("approval size {size} outside 1..={m}")]
    ApprovalSize { size: usize, m: usize },
    #[error("need at least two candidates")]
    TooFewCandidates,
    #[error("need at least one site")]
    NoSites,
    #[error("generator carries no site targets; pick another assignment policy")]
    NoTargets,
    #[error("event {index} targets site {site} of {k}")]
    SiteOutOfRange { index: usize, site: usize, k: usize },
    #[error("phase sizes overflow")]
    Overflow,
    #[error(transparent)]
    Election(#[from] ElectionError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GeneratorKind {
    UniformImpartial,
    /// Plackett–Luce rankings with the given candidate weights.
    Skewed { weights: Vec<f64> },
    /// The winner tops a ballot with probability `margin·m/(m−1)`, otherwise
    /// the ballot is uniform, so its first-place share is `margin + 1/m`.
    PlantedWinner {
        margin: f64,
        #[serde(default)]
        winner: usize,
    },
    /// Phase `i` sends `x_i` votes for candidate `i mod 2` to each of `k` sites,
    /// with `x_1 = 1` and `x_i = ⌈(1+3ε)·k·y_{i−1}⌉`, `y_i = y_{i−1} + x_i`.
    AdversarialFlip { eps: Ratio, k: usize, phases: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    #[serde(flatten)]
    pub kind: GeneratorKind,
    #[serde(default)]
    pub n: usize,
    pub m: usize,
    pub ballot: BallotKind,
    /// Approval ballots: fixed set size (1 for plurality); random in `1..=m` if absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub approval_size: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum AssignmentPolicy {
    RoundRobin,
    UniformRandom { seed: u64 },
    SingleSite,
    /// Use the sites the generator chose.
    PerGenerator,
}

/// A generated stream before site assignment.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Generated {
    pub m: usize,
    pub kind: BallotKind,
    pub ballots: Vec<Ballot>,
    /// Site targets, for generators that pick them.
    pub sites: Option<Vec<usize>>,
    /// Stream lengths at which phases end.
    pub phase_ends: Vec<u64>,
}

/// Per-site phase sizes `x_1, x_2, …` of the flip stream.
pub fn flip_phase_sizes(eps: Ratio, k: usize, phases: usize) -> Result<Vec<u64>, WorkloadError> {
    // (1+3ε)·k = (den + 3·num)·k / den
    let (num, den) = (eps.num() as u128, eps.den() as u128);
    let mut xs = Vec::with_capacity(phases);
    let mut y: u128 = 0;
    for i in 0..phases {
        let x = if i == 0 { 1 } else { ((den + 3 * num) * k as u128 * y).div_ceil(den) };
        y += x;
        xs.push(u64::try_from(x).map_err(|_| WorkloadError::Overflow)?);
    }
    Ok(xs)
}

fn ballot_from_order(order: Vec<usize>, kind: BallotKind, size: usize) -> Ballot {
    match kind {
        BallotKind::Ordinal => Ballot::ordinal(order),
        BallotKind::Approval => Ballot::approval(order.into_iter().take(size)),
    }
}

pub fn generate(spec: &GeneratorSpec) -> Result<Generated, WorkloadError> {
    let m = spec.m;
    if m < 2 {
        return Err(WorkloadError::TooFewCandidates);
    }
    if let Some(size) = spec.approval_size {
        if size == 0 || size > m {
            return Err(WorkloadError::ApprovalSize { size, m });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let size = |rng: &mut ChaCha8Rng| spec.approval_size.unwrap_or_else(|| rng.gen_range(1..=m));
    let plain = |ballots| Generated { m, kind: spec.ballot, ballots, sites: None, phase_ends: Vec::new() };
    match &spec.kind {
        GeneratorKind::UniformImpartial => {
            let ballots = (0..spec.n)
                .map(|_| {
                    let mut order: Vec<usize> = (0..m).collect();
                    order.shuffle(&mut rng);
                    let s = size(&mut rng);
                    ballot_from_order(order, spec.ballot, s)
                })
                .collect();
            Ok(plain(ballots))
        }
        GeneratorKind::Skewed { weights } => {
            if weights.len() != m || weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) || weights.iter().all(|&w| w == 0.0) {
                return Err(WorkloadError::Weights { m });
            }
            let ballots = (0..spec.n)
                .map(|_| {
                    let order = plackett_luce(weights, &mut rng);
                    let s = size(&mut rng);
                    ballot_from_order(order, spec.ballot, s)
                })
                .collect();
            Ok(plain(ballots))
        }
        GeneratorKind::PlantedWinner { margin, winner } => {
            let top_p = margin * m as f64 / (m - 1) as f64;
            if !(0.0..=1.0).contains(&top_p) {
                return Err(WorkloadError::Margin(*margin));
            }
            if *winner >= m {
                return Err(WorkloadError::Winner { winner: *winner, m });
            }
            let ballots = (0..spec.n)
                .map(|_| {
                    let mut order: Vec<usize> = (0..m).collect();
                    order.shuffle(&mut rng);
                    if rng.gen::<f64>() < top_p {
                        let p = order.iter().position(|c| c == winner).expect("winner is a candidate");
                        order[..=p].rotate_right(1);
                    }
                    let s = size(&mut rng);
                    ballot_from_order(order, spec.ballot, s)
                })
                .collect();
            Ok(plain(ballots))
        }
        GeneratorKind::AdversarialFlip { eps, k, phases } => {
            if m != 2 || *k == 0 || 3 * eps.num() as u128 >= eps.den() as u128 {
                return Err(WorkloadError::Flip);
            }
            let xs = flip_phase_sizes(*eps, *k, *phases)?;
            let mut ballots = Vec::new();
            let mut sites = Vec::new();
            let mut phase_ends = Vec::new();
            for (i, &x) in xs.iter().enumerate() {
                let c = (i + 1) % 2;
                let b = ballot_from_order(vec![c, 1 - c], spec.ballot, 1);
                for j in 0..*k {
                    for _ in 0..x {
                        ballots.push(b.clone());
                        sites.push(j);
                    }
                }
                phase_ends.push(ballots.len() as u64);
            }
            Ok(Generated { m, kind: spec.ballot, ballots, sites: Some(sites), phase_ends })
        }
    }
}

/// Draws candidates one at a time in proportion to the remaining weights.
/// Zero-weight candidates fill the tail in random order.
fn plackett_luce<R: Rng>(weights: &[f64], rng: &mut R) -> Vec<usize> {
    let mut left: Vec<usize> = (0..weights.len()).collect();
    let mut order = Vec::with_capacity(weights.len());
    while !left.is_empty() {
        let w: Vec<f64> = left.iter().map(|&c| weights[c]).collect();
        match WeightedIndex::new(&w) {
            Ok(dist) => order.push(left.remove(dist.sample(rng))),
            Err(_) => {
                left.shuffle(rng);
                order.append(&mut left);
            }
        }
    }
    order
}

/// Site of the event at `index` (0-based). `None` for `PerGenerator`.
pub fn assign(policy: &AssignmentPolicy, index: u64, k: usize) -> Option<usize> {
    match policy {
        AssignmentPolicy::RoundRobin => Some((index % k as u64) as usize),
        AssignmentPolicy::UniformRandom { seed } => {
            let r = mix64(mix64(*seed) ^ index);
            Some(((r as u128 * k as u128) >> 64) as usize)
        }
        AssignmentPolicy::SingleSite => Some(0),
        AssignmentPolicy::PerGenerator => None,
    }
}

/// Time-stamped events with sites chosen by `policy`.
pub fn to_events(g: &Generated, policy: &AssignmentPolicy, k: usize) -> Result<Vec<StreamEvent>, WorkloadError> {
    if k == 0 {
        return Err(WorkloadError::NoSites);
    }
    g.ballots
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let site = match assign(policy, i as u64, k) {
                Some(s) => s,
                None => g.sites.as_ref().ok_or(WorkloadError::NoTargets)?[i],
            };
            if site >= k {
                return Err(WorkloadError::SiteOutOfRange { index: i, site, k });
            }
            Ok(StreamEvent { time: i as u64 + 1, site, ballot: b.clone() })
        })
        .collect()
}

/// Election text format with a `site=<id>` column.
pub fn stream_to_text(m: usize, kind: BallotKind, events: &[StreamEvent]) -> String {
    let mut s = format!("m={m} kind={kind}\n");
    for e in events {
        s.push_str(&format!("{} site={}\n", e.ballot, e.site));
    }
    s
}

/// Reads a stream written by [`stream_to_text`]. Rows without a site go to site 0.
pub fn stream_from_text(text: &str) -> Result<(usize, BallotKind, Vec<StreamEvent>), WorkloadError> {
    let (m, kind, rows) = parse_stream_text(text)?;
    let events = rows
        .into_iter()
        .enumerate()
        .map(|(i, (_, ballot, site))| StreamEvent { time: i as u64 + 1, site: site.unwrap_or(0), ballot })
        .collect();
    Ok((m, kind, events))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(kind: GeneratorKind, n: usize, m: usize, ballot: BallotKind) -> GeneratorSpec {
        GeneratorSpec { kind, n, m, ballot, approval_size: Some(1), seed: 7 }
    }

    #[test]
    fn empty_uniform_stream() {
        let g = generate(&spec(GeneratorKind::UniformImpartial, 0, 3, BallotKind::Ordinal)).unwrap();
        assert!(g.ballots.is_empty());
    }

    #[test]
    fn replayable() {
        let s = spec(GeneratorKind::Skewed { weights: vec![3.0, 1.0, 0.0] }, 500, 3, BallotKind::Ordinal);
        assert_eq!(generate(&s).unwrap(), generate(&s).unwrap());
    }

    #[test]
    fn planted_share() {
        let s = spec(GeneratorKind::PlantedWinner { margin: 0.3, winner: 0 }, 1000, 3, BallotKind::Approval);
        let g = generate(&s).unwrap();
        let share = g.ballots.iter().filter(|b| b.ids() == [0]).count() as f64 / 1000.0;
        // Binomial sd at p ≈ 0.633 is about 0.015.
        assert!(share >= 0.3 + 1.0 / 3.0 - 3.0 * 0.016, "{share}");
    }

    #[test]
    fn flip_sizes() {
        let eps = Ratio::new(1, 10).unwrap();
        assert_eq!(flip_phase_sizes(eps, 2, 6).unwrap(), vec![1, 3, 11, 39, 141, 507]);
        assert_eq!(flip_phase_sizes(eps, 8, 3).unwrap(), vec![1, 11, 125]);
        let g = generate(&GeneratorSpec {
            kind: GeneratorKind::AdversarialFlip { eps, k: 2, phases: 3 },
            n: 0,
            m: 2,
            ballot: BallotKind::Approval,
            approval_size: Some(1),
            seed: 0,
        })
        .unwrap();
        assert_eq!(g.phase_ends, vec![2, 8, 30]);
        assert_eq!(g.sites.as_ref().unwrap()[..8], [0, 1, 0, 0, 0, 1, 1, 1]);
        assert_eq!(g.ballots[0], Ballot::approval([1]));
        assert_eq!(g.ballots[2], Ballot::approval([0]));
    }

    #[test]
    fn flip_rejects_bad_parameters() {
        let third = Ratio::new(1, 3).unwrap();
        let s = spec(GeneratorKind::AdversarialFlip { eps: third, k: 2, phases: 3 }, 0, 2, BallotKind::Approval);
        assert!(matches!(generate(&s), Err(WorkloadError::Flip)));
        let s = spec(GeneratorKind::AdversarialFlip { eps: Ratio::new(1, 10).unwrap(), k: 2, phases: 3 }, 0, 3, BallotKind::Approval);
        assert!(matches!(generate(&s), Err(WorkloadError::Flip)));
    }

    #[test]
    fn assignment_policies() {
        let rr: Vec<usize> = (0..6).map(|i| assign(&AssignmentPolicy::RoundRobin, i, 3).unwrap()).collect();
        assert_eq!(rr, vec![0, 1, 2, 0, 1, 2]);
        assert!((0..10).all(|i| assign(&AssignmentPolicy::SingleSite, i, 5) == Some(0)));
        let mut counts = [0u64; 4];
        for i in 0..10_000 {
            counts[assign(&AssignmentPolicy::UniformRandom { seed: 3 }, i, 4).unwrap()] += 1;
        }
        // sd = sqrt(10⁴·¼·¾) ≈ 43.3
        for c in counts {
            assert!((c as f64 - 2500.0).abs() <= 3.0 * 43.31, "{counts:?}");
        }
    }

    #[test]
    fn text_roundtrip() {
        let g = generate(&spec(GeneratorKind::UniformImpartial, 20, 4, BallotKind::Ordinal)).unwrap();
        let ev = to_events(&g, &AssignmentPolicy::UniformRandom { seed: 1 }, 3).unwrap();
        let text = stream_to_text(4, BallotKind::Ordinal, &ev);
        assert_eq!(stream_from_text(&text).unwrap(), (4, BallotKind::Ordinal, ev));
        assert!(matches!(to_events(&g, &AssignmentPolicy::PerGenerator, 3), Err(WorkloadError::NoTargets)));
    }

    #[test]
    fn spec_json() {
        let s: GeneratorSpec =
            serde_json::from_str(r#"{"kind":"skewed","weights":[2,1],"n":5,"m":2,"ballot":"ordinal","seed":4}"#).unwrap();
        assert_eq!(s.kind, GeneratorKind::Skewed { weights: vec![2.0, 1.0] });
        let back: GeneratorSpec = serde_json::from_str(&serde_json::to_string(&s).unwrap()).unwrap();
        assert_eq!(back, s);
    }
}
