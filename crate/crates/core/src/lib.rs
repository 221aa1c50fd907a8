//! Simulation and design analysis for a soft-switched, phase-shifted
//! half-bridge battery voltage equalizer.
//!
//! The crate is split along the same lines as the hardware it models:
//!
//! - [`signal`]: square/triangle carriers and per-leg gate timing.
//! - [`controller`]: tolerance-band classification of cells into
//!   discharge/charge/idle roles.
//! - [`analytic`]: closed-form inductor current, power, battery current,
//!   idle-diode voltages, switching-current bounds and turn-off losses.
//! - [`network`]: an independent time-domain integrator of the ideal
//!   switched LC network, plus the dead-time commutation model.
//! - [`runner`]: long-horizon pack equalization and cycling scenarios.
//! - [`suite`]: seeded randomized operating points and the cross-checks
//!   that pit the analytic engine against the simulator.
//!
//! Batch work (suites, sweeps) goes through [`par`], which uses rayon when
//! the `parallel` feature is on and a plain iterator otherwise.

pub mod analytic;
pub mod controller;
mod error;
pub mod network;
pub mod par;
mod params;
pub mod runner;
pub mod signal;
pub mod suite;

pub use error::{EqualizerError, Result};
pub use params::{CapacitanceRange, EqualizerParams, OperatingPoint, PhaseAssignment, Role};
