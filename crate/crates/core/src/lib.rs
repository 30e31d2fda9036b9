//! Coupled power-network and district-heating dynamics in which heat pumps
//! take part in primary frequency regulation.
//!
//! * [`netmodel`]: typed network description, validation, `A_h` assembly.
//! * [`dynamics`]: the compiled right-hand side.
//! * [`solver`]: RK4 / RK45 integration with steady-state detection.
//! * [`equilibrium`]: closed-form steady states and power-sharing QPs.
//! * [`lyapunov`]: storage functions and monotonicity audits.
//! * [`analysis`]: settling times and energy bookkeeping on trajectories.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod dynamics;
pub mod equilibrium;
pub mod fixtures;
pub mod lyapunov;
pub mod netmodel;
pub mod schedule;
pub mod solver;

pub use dynamics::{AlgebraicOutputs, Loads, Model, ModelError, StateLayout};
pub use equilibrium::{equilibrium, EquilibriumError, EquilibriumSolution};
pub use netmodel::{
    validate, BlockKind, BusKind, CombinedSystem, EdgeRole, GeneratorSpec, HeatArea, HeatEdge, HeatNode,
    HeatSourceSpec, PowerBus, PowerLine, PumpCoupling, PumpMode, SystemMode, ValidationReport,
};
pub use schedule::{Disturbance, DisturbanceSchedule, TargetKind};
pub use solver::{integrate, integrate_to_steady, Method, SimParams, SolverError, Trajectory};
