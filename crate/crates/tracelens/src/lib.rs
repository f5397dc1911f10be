//! Turns screenshot-level digital trace logs into classified, sessionized,
//! segmented media-use data, and computes three measurement-bias
//! diagnostics: entangling (content proxied by format), flattening
//! (duration-blind segment counts), and bundling (aggregate durations that
//! hide the duration distribution).

pub mod cli;
pub mod forest;
pub mod ingest;
pub mod metrics;
pub mod model;
pub mod segment;
pub mod stats;
pub mod synth;
pub mod textfeat;
