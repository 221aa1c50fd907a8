//! Seeded randomized operating points and the checks run over them.
//!
//! Point `i` of a suite depends only on the seed and `i`, so results are
//! identical whether the points are evaluated in parallel or in order.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::analytic;
use crate::controller::{compute_band, classify, VoltageReading};
use crate::error::Result;
use crate::network::{self, EdgeCommutation};
use crate::par::{map_indexed, Execution};
use crate::params::{EqualizerParams, OperatingPoint, PhaseAssignment, Role};

/// Cell counts cycled through by point index.
pub const CELL_COUNTS: [usize; 4] = [2, 3, 4, 8];

const MAX_DRAWS: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ordering {
    /// Voltages uniform in the cell window, roles assigned regardless of
    /// voltage.
    Free,
    /// Every discharging cell at or above the mean, every charging cell at
    /// or below it.
    ControllerConsistent,
    /// Roles chosen by the controller; at least one cell sits in band.
    Banded,
}

fn rng_for(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Cell count and number of discharging legs for point `index`. Every split
/// `m = 1..n-1` recurs as the index grows.
pub fn shape(index: usize) -> (usize, usize) {
    let n = CELL_COUNTS[index % CELL_COUNTS.len()];
    let m = 1 + (index / CELL_COUNTS.len()) % (n - 1);
    (n, m)
}

fn permuted(rng: &mut ChaCha8Rng, voltages: Vec<f64>, roles: Vec<Role>) -> (Vec<f64>, Vec<Role>) {
    let mut order: Vec<usize> = (0..voltages.len()).collect();
    order.shuffle(rng);
    (
        order.iter().map(|&i| voltages[i]).collect(),
        order.iter().map(|&i| roles[i]).collect(),
    )
}

/// Draws point `index` of the suite identified by `seed`.
pub fn random_point(base: &EqualizerParams, seed: u64, index: usize, ordering: Ordering) -> OperatingPoint {
    let mut rng = rng_for(seed, index);
    let (lo, hi) = (base.v_bmin, base.v_bmax);
    match ordering {
        Ordering::Free | Ordering::ControllerConsistent => {
            let (n, m) = shape(index);
            let params = base.clone().with_cells(n);
            let roles: Vec<Role> = (0..n).map(|i| if i < m { Role::Discharge } else { Role::Charge }).collect();
            let mut draws = 0;
            let voltages = loop {
                let mut v: Vec<f64> = (0..n).map(|_| rng.gen_range(lo..=hi)).collect();
                if ordering == Ordering::Free {
                    break v;
                }
                v.sort_by(|a, b| b.total_cmp(a));
                let avg = v.iter().sum::<f64>() / n as f64;
                if v[m - 1] >= avg && v[m] <= avg {
                    break v;
                }
                draws += 1;
                assert!(draws < MAX_DRAWS, "rejection sampling did not converge");
            };
            let (voltages, roles) = permuted(&mut rng, voltages, roles);
            OperatingPoint::from_roles(voltages, roles, params).expect("sampled point is valid")
        }
        Ordering::Banded => {
            let n = [3, 4, 8][index % 3];
            let params = base.clone().with_cells(n);
            let tol = params.v_tol;
            for _ in 0..MAX_DRAWS {
                let centre = rng.gen_range(lo + 1.0..=hi - 1.0);
                let idle = rng.gen_range(1..=n - 2);
                let m = rng.gen_range(1..=n - idle - 1);
                let v: Vec<f64> = (0..n)
                    .map(|i| {
                        if i < idle {
                            centre + rng.gen_range(-0.9 * tol..0.9 * tol)
                        } else if i < idle + m {
                            centre + rng.gen_range(2.0 * tol..1.0)
                        } else {
                            centre - rng.gen_range(2.0 * tol..1.0)
                        }
                    })
                    .collect();
                let reading = VoltageReading::new(v.clone(), 0.0);
                let band = compute_band(&reading, tol).expect("non-empty reading");
                let assignment: PhaseAssignment = classify(&reading, &band, params.phase_shift);
                if !assignment.is_active() || assignment.count(Role::Idle) == 0 {
                    continue;
                }
                let (voltages, roles) = permuted(&mut rng, v, assignment.roles().to_vec());
                return OperatingPoint::from_roles(voltages, roles, params).expect("sampled point is valid");
            }
            panic!("rejection sampling did not converge");
        }
    }
}

pub fn random_points(
    base: &EqualizerParams,
    seed: u64,
    count: usize,
    ordering: Ordering,
    exec: Execution,
) -> Vec<OperatingPoint> {
    map_indexed(count, exec, |i| random_point(base, seed, i, ordering))
}

/// `|Σ P_k| / max |P_k|` for each point.
pub fn power_residuals(points: &[OperatingPoint], exec: Execution) -> Vec<f64> {
    map_indexed(points.len(), exec, |i| {
        let p = analytic::battery_powers(&points[i]);
        let scale = p.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        if scale == 0.0 {
            0.0
        } else {
            p.iter().sum::<f64>().abs() / scale
        }
    })
}

/// Simulator against closed form at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleCheck {
    pub index: usize,
    pub n: usize,
    /// Largest `|I_sim − I_formula| / |I_formula|` over the cells.
    pub max_rel_error: f64,
    /// Largest `|I_sim|` on an idle cell.
    pub idle_current_max: f64,
    pub converged: bool,
    pub diode_conduction: bool,
    pub kcl_residual: f64,
    /// Largest turn-on edge current magnitude over all legs.
    pub edge_max_abs: f64,
    /// Smallest turn-on edge current magnitude over discharging legs.
    pub discharge_edge_min_abs: f64,
    /// Smallest assisting turn-on current over charging legs (negative
    /// when the current opposes the swing).
    pub charge_edge_min_assist: f64,
}

pub fn oracle_checks(
    points: &[OperatingPoint],
    cycles: usize,
    steps_per_period: usize,
    exec: Execution,
) -> Result<Vec<OracleCheck>> {
    map_indexed(points.len(), exec, |index| {
        let op = &points[index];
        let (_, sol) = network::simulate(op, cycles, steps_per_period)?;
        let formula = analytic::battery_currents(op);
        let floor = 1e-12 * formula.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let mut max_rel_error: f64 = 0.0;
        let mut idle_current_max: f64 = 0.0;
        let mut edge_max_abs: f64 = 0.0;
        let mut discharge_edge_min_abs = f64::INFINITY;
        let mut charge_edge_min_assist = f64::INFINITY;
        for k in 0..op.n() {
            let sim = sol.dc_currents[k];
            match op.assignment.role(k) {
                Role::Idle => {
                    idle_current_max = idle_current_max.max(sim.abs());
                    continue;
                }
                role => {
                    let err = (sim - formula[k]).abs() / formula[k].abs().max(floor);
                    max_rel_error = max_rel_error.max(err);
                    let top = sol.top_edge_currents[k].expect("active leg");
                    let bottom = sol.bottom_edge_currents[k].expect("active leg");
                    edge_max_abs = edge_max_abs.max(top.abs()).max(bottom.abs());
                    if role == Role::Discharge {
                        discharge_edge_min_abs = discharge_edge_min_abs.min(top.abs()).min(bottom.abs());
                    } else {
                        charge_edge_min_assist = charge_edge_min_assist.min(-top).min(bottom);
                    }
                }
            }
        }
        Ok(OracleCheck {
            index,
            n: op.n(),
            max_rel_error,
            idle_current_max,
            converged: sol.converged,
            diode_conduction: sol.diode_conduction,
            kcl_residual: sol.kcl_residual,
            edge_max_abs,
            discharge_edge_min_abs,
            charge_edge_min_assist,
        })
    })
    .into_iter()
    .collect()
}

/// Dead time that just covers the slowest transition the design allows:
/// largest effective snubber, highest cell voltage, smallest turn-on
/// current.
pub fn worst_case_dead_time(params: &EqualizerParams) -> Result<f64> {
    analytic::min_dead_time(
        params.effective_snubber_max(),
        params.v_bmax,
        analytic::min_turnon_current(params),
    )
}

/// The point whose discharging legs switch with exactly the minimum
/// turn-on current: every cell at the lowest voltage, a single charging
/// leg.
pub fn min_current_corner(params: &EqualizerParams) -> Result<OperatingPoint> {
    let n = params.n;
    let roles = (0..n).map(|i| if i + 1 < n { Role::Discharge } else { Role::Charge }).collect();
    OperatingPoint::from_roles(vec![params.v_bmin; n], roles, params.clone())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZvsCheck {
    pub index: usize,
    pub discharge_edges: usize,
    pub discharge_failures: usize,
    pub charge_edges: usize,
    pub charge_failures: usize,
    pub worst_residual: f64,
}

impl ZvsCheck {
    fn from_edges(index: usize, edges: &[EdgeCommutation]) -> Self {
        let mut c = ZvsCheck {
            index,
            discharge_edges: 0,
            discharge_failures: 0,
            charge_edges: 0,
            charge_failures: 0,
            worst_residual: 0.0,
        };
        for e in edges {
            let failed = !e.report.zvs_achieved;
            if e.role == Role::Discharge {
                c.discharge_edges += 1;
                c.discharge_failures += failed as usize;
            } else {
                c.charge_edges += 1;
                c.charge_failures += failed as usize;
            }
            c.worst_residual = c.worst_residual.max(e.report.residual_voltage);
        }
        c
    }
}

/// Commutates every turn-on edge of every point at the largest effective
/// snubber capacitance, with the dead time set to `dead_time_factor` times
/// the worst-case swing time of that point's design.
pub fn zvs_checks(
    points: &[OperatingPoint],
    dead_time_factor: f64,
    cycles: usize,
    steps_per_period: usize,
    exec: Execution,
) -> Result<Vec<ZvsCheck>> {
    map_indexed(points.len(), exec, |index| {
        let op = &points[index];
        let dead_time = dead_time_factor * worst_case_dead_time(&op.params)?;
        let (_, sol) = network::simulate(op, cycles, steps_per_period)?;
        let edges = network::edge_commutations(&sol, op, op.params.effective_snubber_max(), dead_time)?;
        Ok(ZvsCheck::from_edges(index, &edges))
    })
    .into_iter()
    .collect()
}
