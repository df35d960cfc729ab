//! Gated-transformer policy with per-well embedding action heads and a
//! shared-trunk value head.

mod distribution;
mod memory;
mod network;

pub use distribution::{
    entropy_graph, gaussian_entropy, gaussian_log_prob, log_prob_graph, sample_action, ActionSample,
};
pub use memory::Memory;
pub use network::{Architecture, BatchInput, Forward, HeadKind, Inference, Policy, PolicyConfig};
