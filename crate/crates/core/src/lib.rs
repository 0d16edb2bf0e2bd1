//! Equation-based modeling of power-system dynamics.
//!
//! * [`symcore`]: symbolic expressions, substitution, time-derivative expansion.
//! * [`blocksys`]: input/output blocks, composition and flattening to mass-matrix form.
//! * [`netdyn`]: node and edge models coupled on a graph through summed line currents.
//! * [`odesolve`]: explicit and implicit integrators, steady states, dense output.
//! * [`powerlib`]: swing, PID, bus and line models.
//! * [`probetune`]: output metric, behavioral distance and joint ADAM tuning.

pub mod scalar;
pub mod symcore;
pub mod blocksys;
pub mod netdyn;
pub mod odesolve;
pub mod powerlib;
pub mod probetune;

pub use scalar::{Dual, Scalar};
