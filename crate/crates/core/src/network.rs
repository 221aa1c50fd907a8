//! Time-domain model of the ideal switched LC network.
//!
//! Each active leg is a square-wave source `(V_k/2)·Sq(t + δ_k T_s)` behind
//! an inductor; all inductors meet at a common node whose voltage is the
//! mean of the active sources. Between gate edges every branch voltage is
//! constant, so the integrator advances each branch current with exact
//! linear segments. A uniform reporting grid is laid over those segments.
//!
//! The dc blocking capacitors are ideal, so in periodic steady state no
//! branch carries dc current. The integrator starts from that state: one
//! settling pass from zero current measures each branch's cycle mean, and
//! the recorded run starts from minus that mean.
//!
//! Dead time is ignored at this scale; [`commutation`] models the
//! transition on its own.

use crate::analytic;
use crate::error::{ensure_positive, EqualizerError, Result};
use crate::params::{OperatingPoint, Role};
use crate::signal::{sq_phase, wrap_phase, SwitchCommand};

/// Convergence threshold on the cycle-to-cycle change of branch mean
/// current (A).
pub const STEADY_STATE_DRIFT: f64 = 1e-9;

/// Residual pole voltage (V) below which a turn-on counts as zero-voltage.
pub const ZVS_EPSILON: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    /// Index of the converter leg this branch belongs to.
    pub converter: usize,
    /// Source amplitude `V_k/2`.
    pub amplitude: f64,
    /// Phase shift as a fraction of the period.
    pub phase: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkModel {
    pub branches: Vec<Branch>,
    /// Total number of legs, idle ones included.
    pub n: usize,
    pub inductance: f64,
    pub period: f64,
    pub steps_per_period: usize,
    roles: Vec<Role>,
    /// Gate-edge phases in `[0, 1)`, sorted.
    edges: Vec<f64>,
}

impl NetworkModel {
    pub fn roles(&self) -> &[Role] {
        &self.roles
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    fn source(&self, b: &Branch, x: f64) -> f64 {
        b.amplitude * sq_phase(x + b.phase)
    }

    /// Common-node voltage (ac part) at phase `x`.
    pub fn common_node_voltage(&self, x: f64) -> f64 {
        self.branches.iter().map(|b| self.source(b, x)).sum::<f64>() / self.branches.len() as f64
    }

    /// Top-device state of converter `k` at phase `x`.
    fn top_on(&self, k: usize, x: f64, phase: f64) -> bool {
        !self.roles[k].is_idle() && sq_phase(x + phase) > 0.0
    }
}

/// Builds the ac equivalent network of an operating point.
pub fn build_network(op: &OperatingPoint, steps_per_period: usize) -> Result<NetworkModel> {
    if !op.assignment.is_active() {
        return Err(EqualizerError::InactiveAssignment);
    }
    let edges = analytic::switching_edges(op);
    if steps_per_period == 0 || !steps_per_period.is_multiple_of(edges.len()) {
        return Err(EqualizerError::InvalidParameter {
            name: "steps_per_period",
            reason: format!(
                "must be a positive multiple of the {} switching edges per period, got {steps_per_period}",
                edges.len()
            ),
        });
    }
    let branches = op
        .assignment
        .active_indices()
        .map(|k| Branch {
            converter: k,
            amplitude: op.voltages[k] / 2.0,
            phase: op.assignment.phase(k),
        })
        .collect();
    Ok(NetworkModel {
        branches,
        n: op.n(),
        inductance: op.params.inductance,
        period: op.params.period(),
        steps_per_period,
        roles: op.assignment.roles().to_vec(),
        edges,
    })
}

/// A stretch of one period over which every branch voltage is constant.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    /// Start phase in `[0, 1)`.
    pub start: f64,
    /// End phase in `(0, 1]`.
    pub end: f64,
    /// Per-converter current at `start` (idle legs 0).
    pub currents: Vec<f64>,
    /// Per-converter di/dt (A/s).
    pub slopes: Vec<f64>,
    /// Per-converter top-device state.
    pub top_on: Vec<bool>,
    /// Common-node voltage over the segment.
    pub v_o: f64,
}

impl Segment {
    pub fn current_at(&self, k: usize, x: f64, period: f64) -> f64 {
        self.currents[k] + self.slopes[k] * (x - self.start) * period
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub t: f64,
    /// Per-converter inductor current, idle legs 0.
    pub currents: Vec<f64>,
    pub v_o: f64,
    pub gates: Vec<SwitchCommand>,
    /// Instantaneous `S_k·i_k − Σ_{j≤k} i_j`.
    pub battery_currents: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub model: NetworkModel,
    pub cycles: usize,
    pub rows: Vec<TraceRow>,
    /// Exact per-cycle mean current of every converter.
    pub cycle_means: Vec<Vec<f64>>,
    /// Exact description of the last simulated cycle.
    pub final_cycle: Vec<Segment>,
    /// Branch currents at t = 0 that put the network in its dc-free state.
    pub initial_currents: Vec<f64>,
}

struct SegmentPlan {
    start: f64,
    end: f64,
    grid_index: Option<usize>,
    slopes: Vec<f64>,
    top_on: Vec<bool>,
    v_o: f64,
}

fn plan_period(model: &NetworkModel) -> Vec<SegmentPlan> {
    let steps = model.steps_per_period;
    let mut points: Vec<(f64, Option<usize>)> = (0..steps).map(|j| (j as f64 / steps as f64, Some(j))).collect();
    points.extend(model.edges.iter().map(|&e| (e, None)));
    points.sort_by(|a, b| a.0.total_cmp(&b.0));
    // an edge that coincides with a grid point folds into it
    points.dedup_by(|later, earlier| {
        let same = (later.0 - earlier.0).abs() < 1e-14;
        if same && earlier.1.is_none() {
            *earlier = *later;
        }
        same
    });

    let phase_of: Vec<f64> = {
        let mut p = vec![0.0; model.n];
        for b in &model.branches {
            p[b.converter] = b.phase;
        }
        p
    };
    (0..points.len())
        .map(|j| {
            let (start, grid_index) = points[j];
            let end = points.get(j + 1).map_or(1.0, |p| p.0);
            let mid = 0.5 * (start + end);
            let v_o = model.common_node_voltage(mid);
            let mut slopes = vec![0.0; model.n];
            for b in &model.branches {
                slopes[b.converter] = (model.source(b, mid) - v_o) / model.inductance;
            }
            let top_on = (0..model.n).map(|k| model.top_on(k, mid, phase_of[k])).collect();
            SegmentPlan {
                start,
                end,
                grid_index,
                slopes,
                top_on,
                v_o,
            }
        })
        .collect()
}

/// Advances one period from `state`, returning the exact mean current of
/// each converter and, when asked, the segments traversed.
fn run_period(
    model: &NetworkModel,
    plan: &[SegmentPlan],
    state: &mut [f64],
    mut on_grid: impl FnMut(&SegmentPlan, &[f64]),
    keep_segments: bool,
) -> (Vec<f64>, Vec<Segment>) {
    let mut integral = vec![0.0; model.n];
    let mut segments = Vec::new();
    for seg in plan {
        if seg.grid_index.is_some() {
            on_grid(seg, state);
        }
        if keep_segments {
            segments.push(Segment {
                start: seg.start,
                end: seg.end,
                currents: state.to_vec(),
                slopes: seg.slopes.clone(),
                top_on: seg.top_on.clone(),
                v_o: seg.v_o,
            });
        }
        let dt = (seg.end - seg.start) * model.period;
        for k in 0..model.n {
            let next = state[k] + seg.slopes[k] * dt;
            integral[k] += 0.5 * (state[k] + next) * dt;
            state[k] = next;
        }
    }
    let means = integral.iter().map(|s| s / model.period).collect();
    (means, segments)
}

/// Integrates `cycles` periods and records the reporting grid.
pub fn integrate(model: &NetworkModel, cycles: usize) -> Result<Trace> {
    if cycles == 0 {
        return Err(EqualizerError::InvalidParameter {
            name: "cycles",
            reason: "need at least one cycle".into(),
        });
    }
    let plan = plan_period(model);

    // settling pass from zero current
    let mut state = vec![0.0; model.n];
    let (means, _) = run_period(model, &plan, &mut state, |_, _| {}, false);
    let initial: Vec<f64> = means.iter().map(|m| -m).collect();

    let mut state = initial.clone();
    let mut rows = Vec::with_capacity(cycles * model.steps_per_period);
    let mut cycle_means = Vec::with_capacity(cycles);
    let mut final_cycle = Vec::new();
    for cycle in 0..cycles {
        let last = cycle + 1 == cycles;
        let (means, segments) = run_period(
            model,
            &plan,
            &mut state,
            |seg, currents| {
                let gates = (0..model.n)
                    .map(|k| {
                        if model.roles[k].is_idle() {
                            SwitchCommand::BothOff
                        } else if seg.top_on[k] {
                            SwitchCommand::TopOn
                        } else {
                            SwitchCommand::BottomOn
                        }
                    })
                    .collect();
                rows.push(TraceRow {
                    t: (cycle as f64 + seg.start) * model.period,
                    currents: currents.to_vec(),
                    v_o: seg.v_o,
                    gates,
                    battery_currents: battery_current_row(currents, &seg.top_on),
                });
            },
            last,
        );
        cycle_means.push(means);
        if last {
            final_cycle = segments;
        }
    }
    Ok(Trace {
        model: model.clone(),
        cycles,
        rows,
        cycle_means,
        final_cycle,
        initial_currents: initial,
    })
}

fn battery_current_row(currents: &[f64], top_on: &[bool]) -> Vec<f64> {
    let mut prefix = 0.0;
    currents
        .iter()
        .zip(top_on)
        .map(|(&i, &on)| {
            prefix += i;
            (if on { i } else { 0.0 }) - prefix
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SteadyStateSolution {
    /// Per-cell dc current, positive = discharging.
    pub dc_currents: Vec<f64>,
    /// Per-cell average power, positive = discharging.
    pub powers: Vec<f64>,
    /// Inductor current at the top-device turn-on edge of each active leg.
    pub top_edge_currents: Vec<Option<f64>>,
    /// Inductor current at the bottom-device turn-on edge of each active leg.
    pub bottom_edge_currents: Vec<Option<f64>>,
    pub current_min: Vec<f64>,
    pub current_max: Vec<f64>,
    /// Peak-to-peak inductor current.
    pub ripple: Vec<f64>,
    /// Gate-edge times within the period (s).
    pub switching_times: Vec<f64>,
    /// Largest cycle-to-cycle change of a branch mean current (A).
    pub drift: f64,
    pub converged: bool,
    /// Largest branch mean current in the final cycle (A).
    pub branch_mean_residual: f64,
    /// Largest `|Σ i_k|` seen in the final cycle relative to the largest
    /// branch current.
    pub kcl_residual: f64,
    /// Peak body-diode forward voltage of each idle leg.
    pub idle_diode_peaks: Vec<Option<f64>>,
    /// Set when an idle leg's diode would conduct; the model does not
    /// represent that conduction.
    pub diode_conduction: bool,
}

/// Extracts dc currents, powers and switching-edge currents from the final
/// simulated cycle.
pub fn steady_state(trace: &Trace, op: &OperatingPoint) -> Result<SteadyStateSolution> {
    let model = &trace.model;
    if op.n() != model.n {
        return Err(EqualizerError::LengthMismatch {
            expected: model.n,
            actual: op.n(),
        });
    }
    let n = model.n;
    let period = model.period;
    let segs = &trace.final_cycle;

    let mut top_integral = vec![0.0; n];
    let mut current_min = vec![f64::INFINITY; n];
    let mut current_max = vec![f64::NEG_INFINITY; n];
    let mut kcl: f64 = 0.0;
    let mut peak: f64 = 0.0;
    for seg in segs {
        let dt = (seg.end - seg.start) * period;
        let end_currents: Vec<f64> = (0..n).map(|k| seg.currents[k] + seg.slopes[k] * dt).collect();
        for k in 0..n {
            if seg.top_on[k] {
                top_integral[k] += 0.5 * (seg.currents[k] + end_currents[k]) * dt;
            }
            for i in [seg.currents[k], end_currents[k]] {
                current_min[k] = current_min[k].min(i);
                current_max[k] = current_max[k].max(i);
                peak = peak.max(i.abs());
            }
        }
        kcl = kcl.max(seg.currents.iter().sum::<f64>().abs());
    }

    let dc_currents: Vec<f64> = top_integral.iter().map(|s| s / period).collect();
    let powers = dc_currents.iter().zip(&op.voltages).map(|(i, v)| i * v).collect();

    let current_at_phase = |k: usize, x: f64| -> f64 {
        let seg = segs
            .iter()
            .rev()
            .find(|s| s.start <= x + 1e-14)
            .unwrap_or(&segs[0]);
        seg.current_at(k, x.max(seg.start), period)
    };
    let mut top_edge_currents = vec![None; n];
    let mut bottom_edge_currents = vec![None; n];
    for k in op.assignment.active_indices() {
        let d = op.assignment.phase(k);
        top_edge_currents[k] = Some(current_at_phase(k, wrap_phase(-d)));
        bottom_edge_currents[k] = Some(current_at_phase(k, wrap_phase(0.5 - d)));
    }

    let last = trace.cycle_means.last().expect("at least one cycle");
    let drift = match trace.cycle_means.len() {
        1 => last.iter().fold(0.0f64, |m, x| m.max(x.abs())),
        len => last
            .iter()
            .zip(&trace.cycle_means[len - 2])
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs())),
    };
    let branch_mean_residual = last.iter().fold(0.0f64, |m, x| m.max(x.abs()));

    let mut idle_diode_peaks = vec![None; n];
    let mut diode_conduction = false;
    for k in 0..n {
        if op.assignment.role(k).is_idle() {
            let v = analytic::peak_idle_diode_voltage(k, op)?;
            diode_conduction |= v >= op.params.diode_drop;
            idle_diode_peaks[k] = Some(v);
        }
    }

    Ok(SteadyStateSolution {
        dc_currents,
        powers,
        top_edge_currents,
        bottom_edge_currents,
        ripple: current_max.iter().zip(&current_min).map(|(a, b)| a - b).collect(),
        current_min,
        current_max,
        switching_times: model.edges.iter().map(|e| e * period).collect(),
        drift,
        converged: drift < STEADY_STATE_DRIFT,
        branch_mean_residual,
        kcl_residual: if peak > 0.0 { kcl / peak } else { 0.0 },
        idle_diode_peaks,
        diode_conduction,
    })
}

/// Convenience: build, integrate and reduce in one call.
pub fn simulate(op: &OperatingPoint, cycles: usize, steps_per_period: usize) -> Result<(Trace, SteadyStateSolution)> {
    let model = build_network(op, steps_per_period)?;
    let trace = integrate(&model, cycles)?;
    let solution = steady_state(&trace, op)?;
    Ok((trace, solution))
}

/// Operating mode of the network within one period.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    I,
    II,
    III,
    IV,
    V,
    VI,
    /// Discharging legs on top, charging legs on bottom.
    DischargeTopChargeBottom,
    AllTop,
    /// Discharging legs on bottom, charging legs on top.
    DischargeBottomChargeTop,
    AllBottom,
}

impl Mode {
    pub fn label(self) -> &'static str {
        match self {
            Mode::I => "I",
            Mode::II => "II",
            Mode::III => "III",
            Mode::IV => "IV",
            Mode::V => "V",
            Mode::VI => "VI",
            Mode::DischargeTopChargeBottom => "DT-CB",
            Mode::AllTop => "ALL-TOP",
            Mode::DischargeBottomChargeTop => "DB-CT",
            Mode::AllBottom => "ALL-BOT",
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeInterval {
    /// Start within the period (s).
    pub start: f64,
    /// End within the period (s).
    pub end: f64,
    pub mode: Mode,
}

fn is_two_by_two(op: &OperatingPoint) -> bool {
    let a = &op.assignment;
    a.count(Role::Discharge) == 2 && a.count(Role::Charge) == 2
}

/// Gate interval of phase `x`: 0 = discharge top / charge bottom,
/// 1 = all top, 2 = discharge bottom / charge top, 3 = all bottom.
fn gate_interval(x: f64, delta: f64) -> usize {
    let x = wrap_phase(x);
    if x < delta {
        0
    } else if x < 0.5 {
        1
    } else if x < 0.5 + delta {
        2
    } else {
        3
    }
}

/// Mode at phase `x` given the current of the reference discharging leg.
pub fn mode_at(x: f64, reference_current: f64, op: &OperatingPoint) -> Mode {
    let interval = gate_interval(x, op.params.phase_shift);
    if is_two_by_two(op) {
        match interval {
            0 if reference_current < 0.0 => Mode::I,
            0 => Mode::II,
            1 => Mode::III,
            2 if reference_current > 0.0 => Mode::IV,
            2 => Mode::V,
            _ => Mode::VI,
        }
    } else {
        match interval {
            0 => Mode::DischargeTopChargeBottom,
            1 => Mode::AllTop,
            2 => Mode::DischargeBottomChargeTop,
            _ => Mode::AllBottom,
        }
    }
}

/// The converter whose current splits modes I/II and IV/V.
pub fn reference_leg(op: &OperatingPoint) -> Option<usize> {
    op.assignment.roles().iter().position(|r| *r == Role::Discharge)
}

/// Labels the final simulated cycle. In the two-discharge/two-charge case
/// the I/II and IV/V boundaries fall on the reference current's zero
/// crossing; otherwise intervals are labelled by gate pattern only.
pub fn mode_sequence(trace: &Trace, op: &OperatingPoint) -> Vec<ModeInterval> {
    let period = trace.model.period;
    let reference = reference_leg(op);
    let mut out: Vec<ModeInterval> = Vec::new();
    let mut push = |start: f64, end: f64, mode: Mode| {
        if end <= start {
            return;
        }
        match out.last_mut() {
            Some(last) if last.mode == mode => last.end = end * period,
            _ => out.push(ModeInterval {
                start: start * period,
                end: end * period,
                mode,
            }),
        }
    };
    for seg in &trace.final_cycle {
        let mid = 0.5 * (seg.start + seg.end);
        let Some(r) = reference else {
            push(seg.start, seg.end, mode_at(mid, 0.0, op));
            continue;
        };
        let i0 = seg.currents[r];
        let slope = seg.slopes[r];
        let i1 = seg.current_at(r, seg.end, period);
        if (i0 < 0.0) != (i1 < 0.0) && slope != 0.0 {
            let cross = seg.start - i0 / (slope * period);
            push(seg.start, cross, mode_at(mid, i0, op));
            push(cross, seg.end, mode_at(mid, i1, op));
        } else {
            push(seg.start, seg.end, mode_at(mid, seg.current_at(r, mid, period), op));
        }
    }
    out
}

/// Dead-time transition of one leg.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CommutationReport {
    /// Time for the pole voltage to swing across the cell (s);
    /// `f64::INFINITY` when the current does not drive the swing.
    pub t_r: f64,
    pub zvs_achieved: bool,
    /// Voltage left across the incoming device when it turns on (V).
    pub residual_voltage: f64,
}

/// Linear pole-voltage swing during a dead time.
///
/// The inductor acts as a current source into the two snubber capacitors in
/// parallel. `i0` follows the turn-on convention of a top device: negative
/// current drives the swing, zero or positive current leaves the full cell
/// voltage across the incoming device.
pub fn commutation(i0: f64, c_s_eff: f64, v_b: f64, dead_time: f64) -> Result<CommutationReport> {
    ensure_positive("C_s_eff", c_s_eff)?;
    if !(i0 < 0.0) {
        return Ok(CommutationReport {
            t_r: f64::INFINITY,
            zvs_achieved: false,
            residual_voltage: v_b,
        });
    }
    let drive = -i0;
    let t_r = 2.0 * c_s_eff * v_b / drive;
    let residual_voltage = (v_b - drive * dead_time / (2.0 * c_s_eff)).max(0.0);
    Ok(CommutationReport {
        t_r,
        zvs_achieved: residual_voltage <= ZVS_EPSILON,
        residual_voltage,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Edge {
    TopTurnOn,
    BottomTurnOn,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeCommutation {
    pub converter: usize,
    pub role: Role,
    pub edge: Edge,
    /// Inductor current at the edge.
    pub current: f64,
    pub report: CommutationReport,
}

/// Runs [`commutation`] at both turn-on edges of every active leg.
pub fn edge_commutations(
    solution: &SteadyStateSolution,
    op: &OperatingPoint,
    c_s_eff: f64,
    dead_time: f64,
) -> Result<Vec<EdgeCommutation>> {
    let mut out = Vec::new();
    for k in op.assignment.active_indices() {
        let v_b = op.voltages[k];
        let role = op.assignment.role(k);
        if let Some(i) = solution.top_edge_currents[k] {
            out.push(EdgeCommutation {
                converter: k,
                role,
                edge: Edge::TopTurnOn,
                current: i,
                report: commutation(i, c_s_eff, v_b, dead_time)?,
            });
        }
        if let Some(i) = solution.bottom_edge_currents[k] {
            // a bottom turn-on is driven by positive inductor current
            out.push(EdgeCommutation {
                converter: k,
                role,
                edge: Edge::BottomTurnOn,
                current: i,
                report: commutation(-i, c_s_eff, v_b, dead_time)?,
            });
        }
    }
    Ok(out)
}
