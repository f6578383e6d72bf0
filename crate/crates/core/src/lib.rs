//! Opinion market model: a two-tier model of attention on several platforms.
//!
//! Tier 1 ([`volume`]) is a multivariate discrete-time Hawkes process with a
//! geometric kernel ([`kernel`]) that sets the total post volume per platform.
//! Tier 2 ([`share`]) splits that volume across competing or cooperating
//! opinions with a market-share attraction model driven by interventions and
//! by the opinion-conditional intensities of tier 1.
//!
//! Time bins are 1-based in every function that takes a single bin `t`.
//! Whole-series arrays are 0-based, so index `idx` holds bin `idx + 1`.

pub mod data_io;
pub mod error;
pub mod estimation;
pub mod evaluation;
pub mod intervention;
pub mod kernel;
pub mod rng;
pub mod share;
pub mod simulation;
pub mod types;
pub mod volume;

pub use error::{OmmError, Result};
pub use kernel::{build_smoothed_interventions, kernel_convolve, kernel_pmf, Kernel};
pub use share::{FeaturePanel, FeatureStats, OmmModel, ShareMatrix, Tier2Params};
pub use types::{CountPanel, Dimensions, Exogenous, SignalSet};
pub use volume::{MuSplit, Tier1Params};
