//! Closed-loop pack simulation on the control-period timescale.
//!
//! Each control period the controller reads terminal voltages, picks roles,
//! and the cells are charged or discharged by the dc currents of the
//! steady-state converter model for that reading. The converter itself
//! settles within microseconds, so it is not co-simulated.
//!
//! Terminal readings include the IR drop of the current applied over the
//! previous period.

use crate::analytic;
use crate::controller::{BalancingController, VoltageReading};
use crate::error::{ensure_non_negative, ensure_positive, EqualizerError, Result};
use crate::params::{EqualizerParams, OperatingPoint, Role};

pub const LEAD_ACID_OCV_LO: f64 = 11.8;
pub const LEAD_ACID_OCV_HI: f64 = 12.9;
pub const LEAD_ACID_R_INT: f64 = 0.010;
pub const RACK_R_INT: f64 = 0.002;
pub const RACK_V_MAX: f64 = 14.4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CellKind {
    /// Battery with OCV linear in state of charge.
    LeadAcidLinearOcv,
    /// Ideal capacitor bank.
    UltracapRack,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellModel {
    pub kind: CellKind,
    /// Ah for a battery, farads for a rack.
    pub capacity: f64,
    /// State of charge in `[0, 1]` for a battery, stored charge (C) for a
    /// rack.
    pub state: f64,
    pub r_int: f64,
    /// Battery: OCV at empty. Rack: lower voltage clamp.
    pub ocv_lo: f64,
    /// Battery: OCV at full. Rack: upper voltage clamp.
    pub ocv_hi: f64,
}

impl CellModel {
    pub fn lead_acid(capacity_ah: f64, soc: f64) -> Result<Self> {
        let cell = Self {
            kind: CellKind::LeadAcidLinearOcv,
            capacity: capacity_ah,
            state: soc,
            r_int: LEAD_ACID_R_INT,
            ocv_lo: LEAD_ACID_OCV_LO,
            ocv_hi: LEAD_ACID_OCV_HI,
        };
        cell.validate()?;
        Ok(cell)
    }

    /// Battery whose open-circuit voltage is `ocv`.
    pub fn lead_acid_at_voltage(capacity_ah: f64, ocv: f64, r_int: f64, ocv_lo: f64, ocv_hi: f64) -> Result<Self> {
        if !(ocv_hi > ocv_lo) {
            return Err(EqualizerError::InvalidParameter {
                name: "ocv_hi",
                reason: format!("must exceed ocv_lo ({ocv_lo} V), got {ocv_hi} V"),
            });
        }
        if !(ocv >= ocv_lo && ocv <= ocv_hi) {
            return Err(EqualizerError::InvalidParameter {
                name: "voltage",
                reason: format!("{ocv} V is outside the OCV range [{ocv_lo}, {ocv_hi}] V"),
            });
        }
        let cell = Self {
            kind: CellKind::LeadAcidLinearOcv,
            capacity: capacity_ah,
            state: (ocv - ocv_lo) / (ocv_hi - ocv_lo),
            r_int,
            ocv_lo,
            ocv_hi,
        };
        cell.validate()?;
        Ok(cell)
    }

    /// Capacitor rack charged to `voltage`.
    pub fn ultracap_rack(capacitance: f64, voltage: f64) -> Result<Self> {
        let cell = Self {
            kind: CellKind::UltracapRack,
            capacity: capacitance,
            state: capacitance * voltage,
            r_int: RACK_R_INT,
            ocv_lo: 0.0,
            ocv_hi: RACK_V_MAX,
        };
        cell.validate()?;
        Ok(cell)
    }

    pub fn validate(&self) -> Result<()> {
        ensure_positive("capacity", self.capacity)?;
        ensure_non_negative("r_int", self.r_int)?;
        ensure_non_negative("ocv_lo", self.ocv_lo)?;
        if !(self.ocv_hi > self.ocv_lo) {
            return Err(EqualizerError::InvalidParameter {
                name: "ocv_hi",
                reason: format!("must exceed ocv_lo ({} V), got {} V", self.ocv_lo, self.ocv_hi),
            });
        }
        let (lo, hi) = self.state_range();
        if !(self.state >= lo && self.state <= hi) {
            return Err(EqualizerError::InvalidParameter {
                name: "state",
                reason: format!("{} is outside [{lo}, {hi}]", self.state),
            });
        }
        Ok(())
    }

    fn state_range(&self) -> (f64, f64) {
        match self.kind {
            CellKind::LeadAcidLinearOcv => (0.0, 1.0),
            CellKind::UltracapRack => (self.capacity * self.ocv_lo, self.capacity * self.ocv_hi),
        }
    }

    pub fn ocv(&self) -> f64 {
        match self.kind {
            CellKind::LeadAcidLinearOcv => self.ocv_lo + (self.ocv_hi - self.ocv_lo) * self.state,
            CellKind::UltracapRack => self.state / self.capacity,
        }
    }

    /// Terminal voltage with `current` flowing out of the cell.
    pub fn terminal_voltage(&self, current: f64) -> f64 {
        self.ocv() - current * self.r_int
    }

    /// Stored charge in coulombs.
    pub fn charge(&self) -> f64 {
        match self.kind {
            CellKind::LeadAcidLinearOcv => self.state * self.capacity * 3600.0,
            CellKind::UltracapRack => self.state,
        }
    }

    /// Coulomb-counts `current` (positive = discharge) over `dt`. The flag
    /// is set when the state had to be clamped.
    pub fn step_cell(&self, current: f64, dt: f64) -> Result<(CellModel, bool)> {
        ensure_positive("dt", dt)?;
        let next = match self.kind {
            CellKind::LeadAcidLinearOcv => self.state - current * dt / (3600.0 * self.capacity),
            CellKind::UltracapRack => self.state - current * dt,
        };
        let (lo, hi) = self.state_range();
        let clamped = next.clamp(lo, hi);
        Ok((
            CellModel {
                state: clamped,
                ..self.clone()
            },
            clamped != next,
        ))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PackState {
    pub cells: Vec<CellModel>,
    pub time: f64,
}

impl PackState {
    pub fn new(cells: Vec<CellModel>) -> Self {
        Self { cells, time: 0.0 }
    }

    pub fn total_charge(&self) -> f64 {
        self.cells.iter().map(CellModel::charge).sum()
    }

    pub fn ocvs(&self) -> Vec<f64> {
        self.cells.iter().map(CellModel::ocv).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub t: f64,
    /// Terminal voltages read by the controller.
    pub voltages: Vec<f64>,
    pub roles: Vec<Role>,
    /// Per-cell current over the following period, external current
    /// included; positive = discharge.
    pub currents: Vec<f64>,
    pub spread: f64,
    pub saturated: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    /// Every cell inside the band.
    AllIdle,
    /// Only one side of the band is populated and no external current
    /// flows, so the pack can no longer change.
    Stalled,
    HorizonReached,
    CyclesComplete,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EqualizationLog {
    pub rows: Vec<LogRow>,
    pub termination: Termination,
    /// Time at which the run stopped.
    pub end_time: f64,
    pub final_pack: PackState,
    pub initial_charge: f64,
    pub final_charge: f64,
    /// Largest reading spread seen during each completed cycle.
    pub cycle_spreads: Vec<f64>,
    pub saturation_events: usize,
    /// Lowest and highest terminal voltage seen at any control step.
    pub voltage_range: (f64, f64),
}

impl EqualizationLog {
    pub fn final_spread(&self) -> f64 {
        self.rows.last().map_or(0.0, |r| r.spread)
    }

    /// Relative change of total stored charge over the run.
    pub fn charge_drift(&self) -> f64 {
        (self.final_charge - self.initial_charge).abs() / self.initial_charge.abs()
    }

    /// Pairs of consecutive rows, both with every cell active, whose spread
    /// rose by more than `tol`.
    pub fn envelope_violations(&self, tol: f64) -> Vec<(usize, f64)> {
        let active = |r: &LogRow| r.roles.iter().all(|x| !x.is_idle());
        self.rows
            .windows(2)
            .enumerate()
            .filter(|(_, w)| active(&w[0]) && active(&w[1]) && w[1].spread > w[0].spread + tol)
            .map(|(j, w)| (j + 1, w[1].spread - w[0].spread))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunSettings {
    pub horizon: f64,
    pub control_period: f64,
    /// Log every `log_every`-th control step; the last step is always kept.
    pub log_every: usize,
}

impl RunSettings {
    pub fn new(horizon: f64, control_period: f64) -> Self {
        Self {
            horizon,
            control_period,
            log_every: 1,
        }
    }

    fn validate(&self) -> Result<()> {
        ensure_positive("control_period", self.control_period)?;
        if !(self.horizon > self.control_period) {
            return Err(EqualizerError::InvalidParameter {
                name: "horizon",
                reason: format!(
                    "must exceed the control period ({} s), got {} s",
                    self.control_period, self.horizon
                ),
            });
        }
        if self.log_every == 0 {
            return Err(EqualizerError::InvalidParameter {
                name: "log_every",
                reason: "must be at least 1".into(),
            });
        }
        Ok(())
    }
}

/// External string current alternating between charge and discharge with
/// turnaround at voltage limits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CyclingProfile {
    /// Magnitude of the string current (A).
    pub current: f64,
    pub v_min: f64,
    pub v_max: f64,
}

impl CyclingProfile {
    fn validate(&self) -> Result<()> {
        ensure_non_negative("profile.current", self.current)?;
        ensure_positive("profile.v_min", self.v_min)?;
        if !(self.v_max > self.v_min) {
            return Err(EqualizerError::InvalidParameter {
                name: "profile.v_max",
                reason: format!("must exceed v_min ({} V), got {} V", self.v_min, self.v_max),
            });
        }
        Ok(())
    }
}

fn spread(v: &[f64]) -> f64 {
    let (lo, hi) = v
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    hi - lo
}

/// Equalizer currents for one reading, zero unless the band is two-sided.
fn equalizer_currents(
    controller: &BalancingController,
    reading: &VoltageReading,
    params: &EqualizerParams,
) -> Result<(Vec<Role>, Vec<f64>, bool)> {
    reading.check(params)?;
    let decision = controller.decide(reading)?;
    let roles = decision.assignment.roles().to_vec();
    if !decision.active {
        return Ok((roles, vec![0.0; reading.voltages.len()], false));
    }
    let op = OperatingPoint::new(reading.voltages.clone(), decision.assignment, params.clone())?;
    Ok((roles, analytic::battery_currents(&op), true))
}

struct Recorder {
    rows: Vec<LogRow>,
    log_every: usize,
    step: usize,
    saturation_events: usize,
    v_lo: f64,
    v_hi: f64,
}

impl Recorder {
    fn new(log_every: usize) -> Self {
        Self {
            rows: Vec::new(),
            log_every,
            step: 0,
            saturation_events: 0,
            v_lo: f64::INFINITY,
            v_hi: f64::NEG_INFINITY,
        }
    }

    fn record(&mut self, row: LogRow, force: bool) {
        for &v in &row.voltages {
            self.v_lo = self.v_lo.min(v);
            self.v_hi = self.v_hi.max(v);
        }
        if row.saturated {
            self.saturation_events += 1;
        }
        if force || self.step.is_multiple_of(self.log_every) {
            self.rows.push(row);
        }
        self.step += 1;
    }
}

fn step_pack(pack: &mut PackState, currents: &[f64], dt: f64) -> Result<bool> {
    let mut saturated = false;
    for (cell, &i) in pack.cells.iter_mut().zip(currents) {
        let (next, sat) = cell.step_cell(i, dt)?;
        *cell = next;
        saturated |= sat;
    }
    pack.time += dt;
    Ok(saturated)
}

fn check_pack(pack: &PackState, params: &EqualizerParams) -> Result<()> {
    if pack.cells.len() != params.n {
        return Err(EqualizerError::LengthMismatch {
            expected: params.n,
            actual: pack.cells.len(),
        });
    }
    params.validate()?;
    for cell in &pack.cells {
        cell.validate()?;
    }
    Ok(())
}

/// Runs the balancing loop without external current until every cell is in
/// band, the band becomes one-sided, or `horizon` elapses.
pub fn run_equalization(pack: PackState, params: &EqualizerParams, settings: &RunSettings) -> Result<EqualizationLog> {
    settings.validate()?;
    check_pack(&pack, params)?;
    let controller = BalancingController::new(params, settings.control_period);
    let initial_charge = pack.total_charge();
    let mut pack = pack;
    let mut rec = Recorder::new(settings.log_every);
    let mut applied = vec![0.0; params.n];
    let dt = settings.control_period;

    let termination = loop {
        let voltages: Vec<f64> = pack.cells.iter().zip(&applied).map(|(c, &i)| c.terminal_voltage(i)).collect();
        let reading = VoltageReading::new(voltages, pack.time);
        let (roles, currents, active) = equalizer_currents(&controller, &reading, params)?;
        let stop = if roles.iter().all(|r| r.is_idle()) {
            Some(Termination::AllIdle)
        } else if !active {
            Some(Termination::Stalled)
        } else if pack.time + dt > settings.horizon * (1.0 + 1e-12) {
            Some(Termination::HorizonReached)
        } else {
            None
        };
        let mut row = LogRow {
            t: pack.time,
            spread: spread(&reading.voltages),
            voltages: reading.voltages,
            roles,
            currents,
            saturated: false,
        };
        if let Some(t) = stop {
            if t != Termination::HorizonReached {
                row.currents.iter_mut().for_each(|i| *i = 0.0);
            }
            rec.record(row, true);
            break t;
        }
        row.saturated = step_pack(&mut pack, &row.currents, dt)?;
        applied.clone_from(&row.currents);
        rec.record(row, false);
    };

    let final_charge = pack.total_charge();
    Ok(EqualizationLog {
        rows: rec.rows,
        termination,
        end_time: pack.time,
        initial_charge,
        final_charge,
        final_pack: pack,
        cycle_spreads: Vec::new(),
        saturation_events: rec.saturation_events,
        voltage_range: (rec.v_lo, rec.v_hi),
    })
}

/// Cycles the string between the profile's voltage limits while the
/// equalizer runs continuously. A cycle is one discharge followed by one
/// charge; the run starts discharging.
///
/// The direction flips before a step whose end-of-step terminal voltage
/// would leave `[v_min, v_max]` on any cell.
pub fn run_cycling(
    pack: PackState,
    params: &EqualizerParams,
    profile: &CyclingProfile,
    cycles: usize,
    settings: &RunSettings,
) -> Result<EqualizationLog> {
    profile.validate()?;
    if profile.current == 0.0 {
        return run_equalization(pack, params, settings);
    }
    settings.validate()?;
    check_pack(&pack, params)?;
    if cycles == 0 {
        return Err(EqualizerError::InvalidParameter {
            name: "cycles",
            reason: "need at least one cycle".into(),
        });
    }
    let controller = BalancingController::new(params, settings.control_period);
    let initial_charge = pack.total_charge();
    let mut pack = pack;
    let mut rec = Recorder::new(settings.log_every);
    let mut applied = vec![profile.current; params.n];
    let mut discharging = true;
    let mut completed = 0usize;
    let mut cycle_spreads = Vec::with_capacity(cycles);
    let mut cycle_peak: f64 = 0.0;
    let dt = settings.control_period;

    let within = |pack: &PackState, currents: &[f64]| -> Result<bool> {
        for (cell, &i) in pack.cells.iter().zip(currents) {
            let (next, _) = cell.step_cell(i, dt)?;
            let v = next.terminal_voltage(i);
            if v < profile.v_min || v > profile.v_max {
                return Ok(false);
            }
        }
        Ok(true)
    };

    let termination = loop {
        let voltages: Vec<f64> = pack.cells.iter().zip(&applied).map(|(c, &i)| c.terminal_voltage(i)).collect();
        let reading = VoltageReading::new(voltages, pack.time);
        let (roles, eq, _) = equalizer_currents(&controller, &reading, params)?;
        let reading_spread = spread(&reading.voltages);
        let with_external = |discharging: bool| -> Vec<f64> {
            let ext = if discharging { profile.current } else { -profile.current };
            eq.iter().map(|i| i + ext).collect()
        };
        let mut currents = with_external(discharging);
        if !within(&pack, &currents)? {
            discharging = !discharging;
            if discharging {
                completed += 1;
                cycle_spreads.push(cycle_peak.max(reading_spread));
                cycle_peak = 0.0;
            }
            currents = with_external(discharging);
            if completed < cycles && !within(&pack, &currents)? {
                return Err(EqualizerError::InvalidParameter {
                    name: "profile",
                    reason: format!(
                        "no current direction keeps every cell within [{}, {}] V at t = {} s",
                        profile.v_min, profile.v_max, pack.time
                    ),
                });
            }
        }
        cycle_peak = cycle_peak.max(reading_spread);
        let stop = if completed >= cycles {
            Some(Termination::CyclesComplete)
        } else if pack.time + dt > settings.horizon * (1.0 + 1e-12) {
            Some(Termination::HorizonReached)
        } else {
            None
        };
        let mut row = LogRow {
            t: pack.time,
            spread: spread(&reading.voltages),
            voltages: reading.voltages,
            roles,
            currents,
            saturated: false,
        };
        if let Some(t) = stop {
            rec.record(row, true);
            break t;
        }
        row.saturated = step_pack(&mut pack, &row.currents, dt)?;
        applied.clone_from(&row.currents);
        rec.record(row, false);
    };

    let final_charge = pack.total_charge();
    Ok(EqualizationLog {
        rows: rec.rows,
        termination,
        end_time: pack.time,
        initial_charge,
        final_charge,
        final_pack: pack,
        cycle_spreads,
        saturation_events: rec.saturation_events,
        voltage_range: (rec.v_lo, rec.v_hi),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn battery_pack(terminals: &[f64]) -> PackState {
        PackState::new(
            terminals
                .iter()
                .map(|&v| CellModel::lead_acid_at_voltage(60.0, v, LEAD_ACID_R_INT, 11.5, 13.2).unwrap())
                .collect(),
        )
    }

    #[test]
    fn coulomb_counting_examples() {
        let cell = CellModel::lead_acid(60.0, 0.5).unwrap();
        let (next, sat) = cell.step_cell(2.284, 3600.0).unwrap();
        assert!(!sat);
        assert_relative_eq!(next.state - cell.state, -2.284 / 60.0, max_relative = 1e-12);
        assert!((next.state - cell.state + 0.03807).abs() < 5e-6);

        let rack = CellModel::ultracap_rack(20.0 * 2500.0, 12.0).unwrap();
        let (next, _) = rack.step_cell(40.0, 100.0).unwrap();
        assert_relative_eq!(next.ocv() - rack.ocv(), -0.08, max_relative = 1e-9);

        let (same, sat) = cell.step_cell(0.0, 10.0).unwrap();
        assert_eq!(same, cell);
        assert!(!sat);
        assert!(cell.step_cell(1.0, 0.0).is_err());
    }

    #[test]
    fn soc_saturates() {
        let cell = CellModel::lead_acid(1.0, 0.01).unwrap();
        let (next, sat) = cell.step_cell(10.0, 3600.0).unwrap();
        assert!(sat);
        assert_eq!(next.state, 0.0);
        assert_eq!(next.ocv(), LEAD_ACID_OCV_LO);
    }

    #[test]
    fn terminal_voltage_drops_under_discharge() {
        let cell = CellModel::lead_acid(60.0, 1.0).unwrap();
        assert_relative_eq!(cell.terminal_voltage(5.0), 12.9 - 0.05, max_relative = 1e-12);
        assert_relative_eq!(cell.terminal_voltage(-5.0), 12.9 + 0.05, max_relative = 1e-12);
    }

    #[test]
    fn equal_cells_stop_immediately() {
        let log = run_equalization(
            battery_pack(&[12.3; 4]),
            &EqualizerParams::default(),
            &RunSettings::new(3600.0, 1.0),
        )
        .unwrap();
        assert_eq!(log.termination, Termination::AllIdle);
        assert_eq!(log.rows.len(), 1);
        assert_eq!(log.end_time, 0.0);
    }

    #[test]
    fn one_sided_band_carries_no_current() {
        let log = run_equalization(
            battery_pack(&[12.36, 12.3, 12.3, 12.3]),
            &EqualizerParams::default(),
            &RunSettings::new(3600.0, 1.0),
        )
        .unwrap();
        assert_eq!(log.termination, Termination::Stalled);
        assert!(log.rows.iter().all(|r| r.currents.iter().all(|&i| i == 0.0)));
    }

    #[test]
    fn spread_shrinks_and_idle_cells_carry_nothing() {
        let settings = RunSettings {
            log_every: 60,
            ..RunSettings::new(48.0 * 3600.0, 1.0)
        };
        let log = run_equalization(battery_pack(&[13.0, 12.4, 12.2, 11.7]), &EqualizerParams::default(), &settings).unwrap();
        assert!(log.rows[0].spread > 1.29);
        assert!(log.final_spread() < 2.0 * 0.025 + 0.010);
        assert!(matches!(log.termination, Termination::AllIdle | Termination::Stalled));
        for row in &log.rows {
            for (r, i) in row.roles.iter().zip(&row.currents) {
                if r.is_idle() {
                    assert_eq!(*i, 0.0);
                }
            }
            assert!(row.spread >= 0.0);
        }
        assert!(log.rows.windows(2).all(|w| w[0].t < w[1].t));
    }

    #[test]
    fn runs_are_bit_identical() {
        let settings = RunSettings::new(2.0 * 3600.0, 1.0);
        let a = run_equalization(battery_pack(&[13.0, 12.4, 12.2, 11.7]), &EqualizerParams::default(), &settings).unwrap();
        let b = run_equalization(battery_pack(&[13.0, 12.4, 12.2, 11.7]), &EqualizerParams::default(), &settings).unwrap();
        assert_eq!(a, b);
    }

    fn racks(v: &[f64]) -> PackState {
        PackState::new(v.iter().map(|&v| CellModel::ultracap_rack(50e3, v).unwrap()).collect())
    }

    #[test]
    fn zero_external_current_is_plain_equalization() {
        let settings = RunSettings::new(3600.0, 1.0);
        let p = EqualizerParams::default();
        let profile = CyclingProfile {
            current: 0.0,
            v_min: 11.0,
            v_max: 13.8,
        };
        let a = run_cycling(racks(&[12.6, 12.4, 12.3, 12.2]), &p, &profile, 3, &settings).unwrap();
        let b = run_equalization(racks(&[12.6, 12.4, 12.3, 12.2]), &p, &settings).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn disabled_equalizer_keeps_spread() {
        let p = EqualizerParams {
            v_tol: 10.0,
            ..Default::default()
        };
        let profile = CyclingProfile {
            current: 40.0,
            v_min: 11.0,
            v_max: 13.8,
        };
        let log = run_cycling(racks(&[12.6, 12.4, 12.3, 12.2]), &p, &profile, 2, &RunSettings::new(1e6, 1.0)).unwrap();
        assert_eq!(log.termination, Termination::CyclesComplete);
        assert_eq!(log.cycle_spreads.len(), 2);
        for s in &log.cycle_spreads {
            assert!((s - 0.4).abs() < 1e-9);
        }
        assert!(log.voltage_range.0 >= 11.0 && log.voltage_range.1 <= 13.8);
    }

    #[test]
    fn rejects_bad_settings() {
        let p = EqualizerParams::default();
        assert!(run_equalization(battery_pack(&[12.3; 4]), &p, &RunSettings::new(1.0, 1.0)).is_err());
        assert!(run_equalization(battery_pack(&[12.3; 3]), &p, &RunSettings::new(10.0, 1.0)).is_err());
    }
}
