//! Proximal policy optimization: lockstep rollouts over sampled
//! realizations, GAE, clipped-surrogate updates and the training loop.

mod config;
mod rollout;
mod train;
mod trajectory;
mod update;

pub use config::{sim_budget, PPOConfig, SimBudget};
pub use rollout::{
    collect_rollouts, evaluate_jobs, evaluate_traced, EnvSet, EpisodeJob, FailedEpisode, Rollout,
};
pub use train::{read_training_log, write_training_log, BatchEntry, IterationLog, Trainer};
pub use trajectory::{compute_gae, normalize_advantages, EpisodeMeta, Trajectory, Transition};
pub use update::{
    build_samples, clipped_objective, minibatch_loss, ppo_update, MinibatchLoss, Sample,
    UpdateStats,
};
