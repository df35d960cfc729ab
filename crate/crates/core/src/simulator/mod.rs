//! Two-phase oil–water reservoir simulator: incompressible IMPES on a
//! Cartesian grid with Peaceman wells under BHP control and liquid-rate caps.

mod fluid;
mod impes;
mod linear;
mod model;
mod well;

pub use fluid::{relative_permeability, CoreyParams, FluidRock};
pub use impes::{
    ControlMode, ReportInterval, SimState, Simulator, StepDiagnostics, StepResult, WellReport,
};
pub use linear::{pcg, BandCholesky, SparseSym};
pub use model::{Reservoir, SimConfig, SolverKind, G_BAR};
pub use well::{
    peaceman_radius, peaceman_well_index, WellKind, WellSpec, DARCY_METRIC,
    DEFAULT_INJECTOR_BOUNDS, DEFAULT_MAX_LIQUID_RATE, DEFAULT_PRODUCER_BOUNDS,
    DEFAULT_WELLBORE_RADIUS,
};
