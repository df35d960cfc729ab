//! Episode wrapper around the simulator and economics: action mapping,
//! observation assembly, rewards and global well numbering.

mod control;
mod episode;
mod observation;

pub use control::{
    apply_action, apply_relative_change, assign_well_ids, build_well_ids, canonical_order,
    first_step_settings, max_relative_change, Bounds, WellIdTable,
};
pub use episode::{write_trace_csv, Episode, EpisodeConfig, StepInfo, StepOutcome, TraceRow};
pub use observation::{
    canonical_reports, denormalize_observation, normalize_observation, InputLayout, RawObservation,
    WellScales,
};
