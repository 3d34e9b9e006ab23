//! Reusable distributed primitives: count tracking, frequency tracking,
//! uniform sampling, and the sample sizes the sampling trackers need.

pub mod count;
pub mod freq;
pub mod sample_size;
pub mod sampler;

pub use count::{CountCenter, CountSite};
pub use freq::{DetFreqCenter, DetFreqSite, FreqUp, RandFreqCenter, RandFreqSite, DEFAULT_CP};
pub use sample_size::{required_sample_size, SampleSize, SampleSizeError, SampleSizeSpec};
pub use sampler::{Sample, SamplerCenter, SamplerSite};
