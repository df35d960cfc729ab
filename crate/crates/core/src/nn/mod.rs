//! Small f64 tensor library: dynamic tape autodiff, layers used by the
//! policy, Adam, and checkpoints.

mod adam;
mod gradcheck;
mod graph;
mod params;

pub use adam::{lr_schedule, Adam};
pub use gradcheck::gradient_check;
pub use graph::{Graph, Var};
pub use params::{
    read_checkpoint, save_checkpoint, CheckpointManifest, Grads, Init, Param, ParamId, ParamStore,
    CHECKPOINT_FORMAT,
};
