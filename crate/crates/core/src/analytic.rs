//! Closed-form steady-state analysis.
//!
//! All current and power expressions sum over the active (non-idle) legs
//! only and use the active count `n_a` in place of `n`: an idle leg carries
//! no inductor current, so it drops out of the superposition that defines
//! the common-node voltage.

use crate::error::{ensure_positive, EqualizerError, Result};
use crate::par::{self, Execution};
use crate::params::{EqualizerParams, OperatingPoint, Role};
use crate::signal::{sq_phase, tr_phase};

/// Current and power kernel `Δ(1 − 2|Δ|)` for a phase difference `Δ`.
fn transfer_kernel(d: f64) -> f64 {
    d * (1.0 - 2.0 * d.abs())
}

/// Inductor current of leg `k` at time `t`, positive from the pole into the
/// inductor. Idle legs return 0.
///
/// `i_k = T_s/(8·n_a·L) · [n_a·V_k·Tr(t+δ_k T_s) − Σ_active V_i·Tr(t+δ_i T_s)]`
pub fn inductor_current(k: usize, t: f64, op: &OperatingPoint) -> Result<f64> {
    op.check_index(k)?;
    let a = &op.assignment;
    if a.role(k).is_idle() {
        return Ok(0.0);
    }
    let p = &op.params;
    let period = p.period();
    let x = t / period;
    let n_a = a.active_count() as f64;
    let sum: f64 = a
        .active_indices()
        .map(|i| op.voltages[i] * tr_phase(x + a.phase(i)))
        .sum();
    let own = n_a * op.voltages[k] * tr_phase(x + a.phase(k));
    Ok(period / (8.0 * n_a * p.inductance) * (own - sum))
}

/// Average power drawn from cell `k` (positive = discharging).
///
/// `P_k = V_k/(4·n_a·L·f_s) · Σ_active V_i·(δ_k−δ_i)(1−2|δ_k−δ_i|)`
pub fn battery_power(k: usize, op: &OperatingPoint) -> Result<f64> {
    Ok(op.voltages[k] * battery_current(k, op)?)
}

/// DC current drawn from cell `k` (positive = discharging).
///
/// The `i = k` term vanishes, so the result does not depend on `V_k`.
pub fn battery_current(k: usize, op: &OperatingPoint) -> Result<f64> {
    op.check_index(k)?;
    let a = &op.assignment;
    if a.role(k).is_idle() {
        return Ok(0.0);
    }
    let p = &op.params;
    let n_a = a.active_count() as f64;
    let dk = a.phase(k);
    let sum: f64 = a
        .active_indices()
        .map(|i| op.voltages[i] * transfer_kernel(dk - a.phase(i)))
        .sum();
    Ok(sum / (4.0 * n_a * p.inductance * p.switching_frequency))
}

pub fn battery_currents(op: &OperatingPoint) -> Vec<f64> {
    (0..op.n())
        .map(|k| battery_current(k, op).expect("index in range"))
        .collect()
}

pub fn battery_powers(op: &OperatingPoint) -> Vec<f64> {
    (0..op.n())
        .map(|k| battery_power(k, op).expect("index in range"))
        .collect()
}

/// Voltage held by the dc blocking capacitor of leg `k` (0-based):
/// `Σ_{i<k} V_i + V_k/2 − V_o,dc`.
pub fn dc_block_voltage(k: usize, voltages: &[f64], v_o_dc: f64) -> Result<f64> {
    if k >= voltages.len() {
        return Err(EqualizerError::IndexOutOfRange {
            index: k,
            n: voltages.len(),
        });
    }
    let below: f64 = voltages[..k].iter().sum();
    Ok(below + voltages[k] / 2.0 - v_o_dc)
}

/// Instantaneous top and bottom body-diode voltages of an idle leg
/// (positive = forward biased).
pub fn idle_diode_voltages(k_idle: usize, t: f64, op: &OperatingPoint) -> Result<(f64, f64)> {
    op.check_index(k_idle)?;
    let a = &op.assignment;
    if !a.role(k_idle).is_idle() {
        return Err(EqualizerError::NotIdle { index: k_idle });
    }
    if a.active_count() == 0 {
        let half = op.voltages[k_idle] / 2.0;
        return Ok((-half, -half));
    }
    let x = t / op.params.period();
    let common = active_source_mean(op, x);
    let half = op.voltages[k_idle] / 2.0;
    Ok((common - half, -common - half))
}

/// Mean of the active ac sources `(V_i/2)·Sq(x + δ_i)` at phase `x`, i.e.
/// the ac part of the common-node voltage.
pub(crate) fn active_source_mean(op: &OperatingPoint, x: f64) -> f64 {
    let a = &op.assignment;
    let n_a = a.active_count();
    if n_a == 0 {
        return 0.0;
    }
    a.active_indices()
        .map(|i| op.voltages[i] / 2.0 * sq_phase(x + a.phase(i)))
        .sum::<f64>()
        / n_a as f64
}

/// Largest forward voltage seen by either diode of idle leg `k_idle` over a
/// period. The waveforms are piecewise constant between gate edges, so the
/// midpoints of those intervals cover every level.
pub fn peak_idle_diode_voltage(k_idle: usize, op: &OperatingPoint) -> Result<f64> {
    let period = op.params.period();
    let mut peak = f64::NEG_INFINITY;
    for x in interval_midpoints(op) {
        let (top, bottom) = idle_diode_voltages(k_idle, x * period, op)?;
        peak = peak.max(top).max(bottom);
    }
    Ok(peak)
}

/// Phases in `[0, 1)` where any active leg changes state.
pub fn switching_edges(op: &OperatingPoint) -> Vec<f64> {
    let a = &op.assignment;
    let mut edges: Vec<f64> = a
        .active_indices()
        .flat_map(|i| {
            let d = a.phase(i);
            [crate::signal::wrap_phase(-d), crate::signal::wrap_phase(0.5 - d)]
        })
        .collect();
    if edges.is_empty() {
        edges.push(0.0);
    }
    edges.sort_by(f64::total_cmp);
    edges.dedup_by(|a, b| (*a - *b).abs() < 1e-15);
    edges
}

fn interval_midpoints(op: &OperatingPoint) -> Vec<f64> {
    let edges = switching_edges(op);
    (0..edges.len())
        .map(|j| {
            let start = edges[j];
            let end = if j + 1 < edges.len() { edges[j + 1] } else { 1.0 + edges[0] };
            0.5 * (start + end)
        })
        .collect()
}

/// Worst-case forward voltage on an idle leg's diodes with one idle leg:
/// `n·V_tol / (2(n−1))`, which is `(2/3)·V_tol` for four cells.
pub fn max_idle_diode_voltage(n: usize, v_tol: f64) -> Result<f64> {
    max_idle_diode_voltage_with(n, 1, v_tol)
}

/// Worst-case idle-diode forward voltage with `idle` idle legs, all within
/// the band: `n·V_tol / (2(n−idle))`.
///
/// The bound is reached when the idle leg under test sits at the bottom of
/// the band, every other idle leg also sits at the bottom, and the active
/// legs take up the remaining sum.
pub fn max_idle_diode_voltage_with(n: usize, idle: usize, v_tol: f64) -> Result<f64> {
    if n < 2 {
        return Err(EqualizerError::InvalidParameter {
            name: "n",
            reason: format!("need at least 2 cells, got {n}"),
        });
    }
    if idle == 0 || idle >= n {
        return Err(EqualizerError::InvalidParameter {
            name: "idle",
            reason: format!("need between 1 and {} idle legs, got {idle}", n - 1),
        });
    }
    Ok(n as f64 * v_tol / (2.0 * (n - idle) as f64))
}

/// Whether in-band cells are guaranteed never to conduct through a body
/// diode with a single idle leg.
pub fn diode_blocking_ok(params: &EqualizerParams) -> bool {
    match max_idle_diode_voltage(params.n, params.v_tol) {
        Ok(v) => params.diode_drop > v,
        Err(_) => false,
    }
}

/// Guaranteed minimum magnitude of the switch current at every discharge-leg
/// turn-on edge: `δ·V_bmin / (2·n·L·f_s)`.
pub fn min_turnon_current(params: &EqualizerParams) -> f64 {
    params.phase_shift * params.v_bmin
        / (2.0 * params.n as f64 * params.inductance * params.switching_frequency)
}

/// Upper bound on the switch current at a turn-on edge:
/// `(n−1)·T_s/(8nL)·[V_bmax − (1−4δ)·V_bmin]`.
pub fn max_switch_current(params: &EqualizerParams) -> f64 {
    let n = params.n as f64;
    let c = params.period() / (8.0 * n * params.inductance);
    (n - 1.0) * c * (params.v_bmax - (1.0 - 4.0 * params.phase_shift) * params.v_bmin)
}

/// Turn-off loss with a snubber: `i0²·t_f²·f_s / (48·C_s)`.
pub fn turnoff_loss_soft(i0: f64, c_s_eff: f64, params: &EqualizerParams) -> Result<f64> {
    ensure_positive("C_s", c_s_eff)?;
    Ok(i0 * i0 * params.fall_time.powi(2) * params.switching_frequency / (48.0 * c_s_eff))
}

/// Hard-switched turn-off loss: `½·V_b·|i0|·(t_vr + t_f)·f_s`.
pub fn turnoff_loss_hard(v_b: f64, i0: f64, params: &EqualizerParams) -> f64 {
    0.5 * v_b * i0.abs() * (params.rise_time + params.fall_time) * params.switching_frequency
}

/// Soft-to-hard turn-off loss ratio: `|i0|·t_f² / (24·C_s·V_b·(t_vr + t_f))`.
pub fn loss_ratio(i0: f64, v_b: f64, c_s_eff: f64, params: &EqualizerParams) -> Result<f64> {
    ensure_positive("C_s", c_s_eff)?;
    ensure_positive("V_b", v_b)?;
    let transition = params.rise_time + params.fall_time;
    ensure_positive("t_vr + t_f", transition)?;
    Ok(i0.abs() * params.fall_time.powi(2) / (24.0 * c_s_eff * v_b * transition))
}

/// Pole-voltage swing time `2·C_s·V_b / i0_min`, the shortest dead time
/// that still gives zero-voltage turn-on.
pub fn min_dead_time(c_s_eff: f64, v_b: f64, i0_min: f64) -> Result<f64> {
    if !(i0_min > 0.0) {
        return Err(EqualizerError::InvalidParameter {
            name: "i0_min",
            reason: format!("no zero-voltage switching without current, got {i0_min}"),
        });
    }
    ensure_positive("C_s", c_s_eff)?;
    Ok(2.0 * c_s_eff * v_b / i0_min)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SoftSwitchReport {
    /// Switch current at the transition (A, signed).
    pub i0: f64,
    pub p_soft: f64,
    pub p_hard: f64,
    pub ratio: f64,
    /// Pole-voltage swing time at `i0`.
    pub t_r: f64,
    /// Equal to `t_r`.
    pub t_d_min: f64,
}

pub fn soft_switch_report(
    i0: f64,
    v_b: f64,
    c_s_eff: f64,
    params: &EqualizerParams,
) -> Result<SoftSwitchReport> {
    let p_soft = turnoff_loss_soft(i0, c_s_eff, params)?;
    let p_hard = turnoff_loss_hard(v_b, i0, params);
    let ratio = if p_hard > 0.0 { p_soft / p_hard } else { 0.0 };
    let t_r = if i0 == 0.0 {
        f64::INFINITY
    } else {
        min_dead_time(c_s_eff, v_b, i0.abs())?
    };
    Ok(SoftSwitchReport {
        i0,
        p_soft,
        p_hard,
        ratio,
        t_r,
        t_d_min: t_r,
    })
}

/// Worst-case design report at the parameter corners: loss ratio at the
/// largest switch current and highest cell voltage with the smallest
/// effective snubber, dead time at the smallest turn-on current with the
/// largest effective snubber.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorstCaseSwitching {
    pub min_turnon_current: f64,
    pub max_switch_current: f64,
    pub loss_ratio: f64,
    pub hard_loss_per_device: f64,
    pub hard_loss_per_pack: f64,
    pub min_dead_time: f64,
}

pub fn worst_case_switching(params: &EqualizerParams) -> Result<WorstCaseSwitching> {
    let i_min = min_turnon_current(params);
    let i_max = max_switch_current(params);
    let hard = turnoff_loss_hard(params.v_bmax, i_max, params);
    Ok(WorstCaseSwitching {
        min_turnon_current: i_min,
        max_switch_current: i_max,
        loss_ratio: loss_ratio(i_max, params.v_bmax, params.effective_snubber_min(), params)?,
        hard_loss_per_device: hard,
        hard_loss_per_pack: hard * 2.0 * params.n as f64,
        min_dead_time: min_dead_time(params.effective_snubber_max(), params.v_bmax, i_min)?,
    })
}

/// One row of the snubber-capacitance sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CsSweepRow {
    /// Nominal snubber capacitance.
    pub c_s: f64,
    /// With the smallest device capacitance added.
    pub c_eff_low: f64,
    /// With the largest device capacitance added.
    pub c_eff_high: f64,
    pub loss_ratio_low: f64,
    pub loss_ratio_high: f64,
    pub t_d_min_low: f64,
    pub t_d_min_high: f64,
}

/// Loss ratio (at `max_switch_current`, `V_bmax`) and minimum dead time (at
/// `min_turnon_current`, `V_bmax`) for every nominal snubber value in
/// `grid`, at both ends of the device-capacitance range.
pub fn cs_sweep(params: &EqualizerParams, grid: &[f64], exec: Execution) -> Result<Vec<CsSweepRow>> {
    if grid.is_empty() {
        return Err(EqualizerError::Empty("snubber capacitance grid"));
    }
    if let Some((index, &c)) = grid.iter().enumerate().find(|(_, c)| !(c.is_finite() && **c > 0.0)) {
        return Err(EqualizerError::InvalidParameter {
            name: "cs_grid",
            reason: format!("element {index} must be positive, got {c}"),
        });
    }
    let i_max = max_switch_current(params);
    let i_min = min_turnon_current(params);
    let v_b = params.v_bmax;
    par::map_indexed(grid.len(), exec, |j| {
        let c_s = grid[j];
        let lo = c_s + params.parasitic_capacitance.min;
        let hi = c_s + params.parasitic_capacitance.max;
        Ok(CsSweepRow {
            c_s,
            c_eff_low: lo,
            c_eff_high: hi,
            loss_ratio_low: loss_ratio(i_max, v_b, lo, params)?,
            loss_ratio_high: loss_ratio(i_max, v_b, hi, params)?,
            t_d_min_low: min_dead_time(lo, v_b, i_min)?,
            t_d_min_high: min_dead_time(hi, v_b, i_min)?,
        })
    })
    .into_iter()
    .collect()
}

/// Gate-driver supply drawn from one cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateDrive {
    pub current: f64,
    pub voltage: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Efficiency {
    /// Power delivered to charging cells over power drawn from discharging
    /// cells.
    pub power_circuit: f64,
    /// Including gate-drive consumption.
    pub overall: f64,
    pub gate_loss: f64,
}

/// Equalizer efficiency from per-cell powers (positive = discharging).
///
/// Each cell powers its own gate driver. A discharging or idle cell's gate
/// power adds to the input; a charging cell's gate power is taken out of
/// what it receives.
pub fn efficiency(powers: &[f64], gate_drive: Option<&[GateDrive]>) -> Result<Efficiency> {
    let input: f64 = powers.iter().filter(|&&p| p > 0.0).sum();
    let output: f64 = powers.iter().filter(|&&p| p < 0.0).map(|p| -p).sum();
    if !(input > 0.0) {
        return Err(EqualizerError::NoInputPower);
    }
    let mut gate_in = 0.0;
    let mut gate_out = 0.0;
    if let Some(gd) = gate_drive {
        if gd.len() != powers.len() {
            return Err(EqualizerError::LengthMismatch {
                expected: powers.len(),
                actual: gd.len(),
            });
        }
        for (p, g) in powers.iter().zip(gd) {
            let loss = g.current * g.voltage;
            if *p < 0.0 {
                gate_out += loss;
            } else {
                gate_in += loss;
            }
        }
    }
    Ok(Efficiency {
        power_circuit: output / input,
        overall: (output - gate_out) / (input + gate_in),
        gate_loss: gate_in + gate_out,
    })
}

/// Whether the operating point respects the ordering the controller always
/// produces: every discharging cell at or above the mean, every charging
/// cell at or below it.
pub fn is_controller_consistent(op: &OperatingPoint) -> bool {
    let avg = op.voltages.iter().sum::<f64>() / op.n() as f64;
    op.assignment
        .roles()
        .iter()
        .zip(&op.voltages)
        .all(|(r, &v)| match r {
            Role::Discharge => v >= avg,
            Role::Charge => v <= avg,
            Role::Idle => true,
        })
}
