//! Cucker-Smale flocking with the singular communication weight
//! `psi(s) = s^-alpha` and its shifted variant `psi(s - delta)`.
//!
//! The crate provides the model right-hand side, an adaptive integrator that
//! resolves close encounters without regularizing the kernel, diagnostics for
//! the functionals that control collisions, scenario generation, and the
//! file formats used by the `flock` command-line harness.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diagnostics;
pub mod error;
pub mod integrator;
pub mod io;
pub mod kernel;
pub mod model;
pub mod quadrature;
pub mod scenarios;
pub mod state;
pub mod verify;

pub use error::{Error, Result};
pub use integrator::{
    collision_time_oracle, integrate, integrate_fixed_rk4, EventKind, EventRecord, ExitReason,
    IntegrationResult, Integrator, IntegratorConfig, StepOutcome,
};
pub use kernel::{kernel_eval, psi_primitive, KernelSpec};
pub use model::{flocking_condition, rhs, FlockingCondition};
pub use state::{ParticleState, StateDerivative};
