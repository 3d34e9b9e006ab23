//! Continuous distributed monitoring of approximate election winners.
//!
//! A center and `k` sites observe a stream of ballots. Tracking protocols keep
//! the center able to name a candidate that an auditor can check against the
//! election seen so far.

pub mod checkpoint;
pub mod election;
pub mod experiment;
pub mod harness;
pub mod primitives;
pub mod ratio;
pub mod trackers;
pub mod workload;

pub use election::{Ballot, BallotKind, Candidate, Election, ElectionError, RuleId};
pub use ratio::Ratio;
