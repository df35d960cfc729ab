//! Closed-loop reservoir management across multiple assets: geostatistical
//! ensembles, a two-phase simulator, NPV economics, and transformer policies
//! trained with PPO.

// `!(x > 0.0)` is used on purpose so NaN fails validation, and the numeric
// kernels index several parallel arrays with one loop variable.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod container;
pub mod economics;
pub mod environment;
pub mod error;
pub mod geostat;
pub mod harness;
pub mod nn;
pub mod policy;
pub mod ppo;
pub mod presets;
pub mod rng;
pub mod simulator;

pub use error::{Error, Result};
