//! Approximate counting library.
//!
//! Implements three runtime-selectable counters — Morris(a), Morris+ and an
//! epoch-scheduled sampled counter — together with the machinery needed to
//! verify them end to end:
//!
//! - [`randkit`]: seedable random streams with reproducible substreams and
//!   the exact variate families the counters need (power-of-two Bernoulli,
//!   geometric gaps for skip-ahead);
//! - [`morris`]: Morris(a) and the Morris+ wrapper with exact skip-ahead and
//!   bit accounting;
//! - [`nycount`]: the epoch-scheduled counter with its deterministic epoch
//!   schedule, lossless merge and JSON state records;
//! - [`oracle`]: exact dynamic-programming distributions for both counters
//!   at small counts, exact moment checks and merge enumeration;
//! - [`registry`]: the named algorithm registry used by harnesses;
//! - [`stats`]: chi-square goodness-of-fit helpers;
//! - [`bits`]: the shared bit-accounting metric.

pub mod bits;
pub mod error;
pub mod morris;
pub mod nycount;
pub mod oracle;
pub mod randkit;
pub mod registry;
pub mod stats;

pub use error::{Error, Result};
pub use randkit::RandStream;
