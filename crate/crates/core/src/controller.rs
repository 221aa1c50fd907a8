//! Tolerance-band balancing controller.
//!
//! Every control period the mean cell voltage is computed and a band of
//! ±`v_tol` placed around it. Cells above the band discharge, cells below
//! it charge and the rest sit idle. Values exactly on a band edge are idle.

use crate::error::{EqualizerError, Result};
use crate::params::{EqualizerParams, PhaseAssignment, Role};

/// Readings outside `[v_bmin - SENSOR_GUARD, v_bmax + SENSOR_GUARD]` are
/// treated as sensor faults.
pub const SENSOR_GUARD: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct VoltageReading {
    pub voltages: Vec<f64>,
    pub timestamp: f64,
}

impl VoltageReading {
    pub fn new(voltages: Vec<f64>, timestamp: f64) -> Self {
        Self { voltages, timestamp }
    }

    /// Rejects readings outside the guarded cell window.
    pub fn check(&self, params: &EqualizerParams) -> Result<()> {
        let lo = params.v_bmin - SENSOR_GUARD;
        let hi = params.v_bmax + SENSOR_GUARD;
        for (index, &voltage) in self.voltages.iter().enumerate() {
            if !(voltage >= lo && voltage <= hi) {
                return Err(EqualizerError::SensorFault { index, voltage, lo, hi });
            }
        }
        Ok(())
    }
}

/// Acceptance band around the mean voltage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Band {
    pub v_avg: f64,
    pub v_high: f64,
    pub v_low: f64,
}

pub fn compute_band(reading: &VoltageReading, v_tol: f64) -> Result<Band> {
    if reading.voltages.is_empty() {
        return Err(EqualizerError::Empty("voltage reading"));
    }
    let v_avg = reading.voltages.iter().sum::<f64>() / reading.voltages.len() as f64;
    Ok(Band {
        v_avg,
        v_high: v_avg + v_tol,
        v_low: v_avg - v_tol,
    })
}

pub fn classify(reading: &VoltageReading, band: &Band, phase_shift: f64) -> PhaseAssignment {
    let roles = reading
        .voltages
        .iter()
        .map(|&v| {
            if v > band.v_high {
                Role::Discharge
            } else if v < band.v_low {
                Role::Charge
            } else {
                Role::Idle
            }
        })
        .collect();
    PhaseAssignment::new(roles, phase_shift)
}

/// True iff at least one leg discharges and one charges.
pub fn is_active(assignment: &PhaseAssignment) -> bool {
    assignment.is_active()
}

/// Stateless controller bound to a design and a re-evaluation period.
#[derive(Debug, Clone, PartialEq)]
pub struct BalancingController {
    pub v_tol: f64,
    pub phase_shift: f64,
    pub control_period: f64,
}

/// One control decision.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub band: Band,
    pub assignment: PhaseAssignment,
    /// False when one side of the band is empty; every gate stays off.
    pub active: bool,
}

impl BalancingController {
    pub fn new(params: &EqualizerParams, control_period: f64) -> Self {
        Self {
            v_tol: params.v_tol,
            phase_shift: params.phase_shift,
            control_period,
        }
    }

    pub fn decide(&self, reading: &VoltageReading) -> Result<Decision> {
        let band = compute_band(reading, self.v_tol)?;
        let assignment = classify(reading, &band, self.phase_shift);
        let active = assignment.is_active();
        Ok(Decision {
            band,
            assignment,
            active,
        })
    }
}
