//! Per-rule tracking protocols.

pub mod config;
pub mod declare;
pub mod proto;
pub mod reduce;
pub mod static_proto;

pub use config::{channels, Channel, ChannelKind, Technique, TrackerConfig, TrackerError};
pub use declare::{declare, Bounds, RuleView};
pub use proto::{build, run_tracker, tally_view, Body, Msg, TrackerCenter, TrackerSite};
pub use reduce::{reduce_ballot, reduce_weighted, ReductionItem};
