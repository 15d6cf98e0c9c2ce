//! Closed-form safety filters built on control barrier functions (CBFs),
//! together with the robot models, reference QP solvers, and scenario
//! simulator used to verify their forward-invariance guarantees.
//!
//! The crate is organised around six pieces:
//!
//! - [`models`]: analytic rigid-body dynamics (inertia, Coriolis, gravity,
//!   actuation) and task-space kinematics for three built-in systems:
//!   a double integrator, a planar two-link arm, and a cart-pole.
//! - [`barrier`]: configuration-space constraints `h(q)`, extended class-K
//!   functions, and the energy-based constraint `h_D` (with its
//!   underactuated analog) whose 0-superlevel sets are kept invariant.
//! - [`filter`]: every safety filter as a closed-form expression, from
//!   the generic explicit CBF-QP and the kinematic velocity filter
//!   through the energy-based torque filter, its robust reduced-model
//!   variants, and the velocity-command filter with an embedded PD loop,
//!   to the underactuated filter with Schur-complement reduction.
//! - [`qp_oracle`]: independent reference solvers (KKT projection and grid
//!   search) plus sampled bound estimation for the robust constants.
//! - [`sim`]: fixed-step RK4 closed-loop simulation producing traces and
//!   safety metrics.
//! - [`cli`]: the scenario front end (`run`, `sweep`, `verify`).
//!
//! Start with the `examples/` directory: each example is a runnable tour of
//! one capability (`cargo run --example torque_filter`, etc.).

// Validation guards are written `!(x > 0.0)` so that NaN is rejected
// together with nonpositive values; the `x <= 0.0` form clippy prefers
// would wave NaN through.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod barrier;
pub mod cli;
pub mod diff;
pub mod filter;
pub mod models;
pub mod qp_oracle;
pub mod sim;
pub mod verify;

pub use barrier::{
    BarrierDescriptor, ClassKappa, EnergyBarrier, KinematicBarrier, UnderactuatedBarrier,
};
pub use filter::{FilterOutput, SchurReduction, TrackingTask};
pub use models::{RobotModel, State, StateBox};
pub use sim::{Metrics, Scenario, Trace};
