//! The four subcommands. Each returns the text report, the CSV files to
//! write and an overall status; nothing here touches the filesystem.

use std::fmt::Write as _;

use equalizer::analytic;
use equalizer::network::{self, Edge};
use equalizer::par::Execution;
use equalizer::runner::{self, Termination};
use equalizer::suite::{self, Ordering};
use equalizer::Role;

use crate::config::ScenarioConfig;
use crate::error::CliError;
use crate::table::{fmt6, Cell, Table};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Status {
    Ok,
    /// A physical limit of the design was violated or could not be modeled.
    PhysicsFlag(Vec<String>),
    NonConvergence(String),
}

impl Status {
    pub fn exit_code(&self) -> i32 {
        match self {
            Status::Ok => 0,
            Status::PhysicsFlag(_) => 3,
            Status::NonConvergence(_) => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputFile {
    pub name: String,
    pub table: Table,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub report: String,
    pub files: Vec<OutputFile>,
    pub status: Status,
}

/// Command-line overrides applied on top of the config.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Overrides {
    pub cycles: Option<usize>,
    pub steps_per_period: Option<usize>,
    pub seed: Option<u64>,
}

fn flags_status(flags: Vec<String>) -> Status {
    if flags.is_empty() {
        Status::Ok
    } else {
        Status::PhysicsFlag(flags)
    }
}

fn push_flags(report: &mut String, status: &Status) {
    match status {
        Status::Ok => {}
        Status::PhysicsFlag(flags) => {
            for f in flags {
                let _ = writeln!(report, "FLAG: {f}");
            }
        }
        Status::NonConvergence(why) => {
            let _ = writeln!(report, "NOT CONVERGED: {why}");
        }
    }
}

fn quantity_table(rows: &[(&str, f64, &str)]) -> Table {
    let mut t = Table::new(["quantity", "value", "unit"]);
    for (q, v, u) in rows {
        t.push(vec![(*q).into(), Cell::Num(*v), (*u).into()]);
    }
    t
}

pub fn analyze(config: &ScenarioConfig) -> Result<Outcome, CliError> {
    let op = config.operating_point()?;
    let p = &op.params;
    let active = op.assignment.is_active();
    let currents = if active { analytic::battery_currents(&op) } else { vec![0.0; op.n()] };
    let powers: Vec<f64> = currents.iter().zip(&op.voltages).map(|(i, v)| i * v).collect();

    let mut cells = Table::new(["cell", "voltage_v", "role", "current_a", "power_w"]);
    for k in 0..op.n() {
        cells.push(vec![
            (k + 1).into(),
            op.voltages[k].into(),
            op.assignment.role(k).tag().into(),
            currents[k].into(),
            powers[k].into(),
        ]);
    }

    let worst = analytic::worst_case_switching(p)?;
    let idle_bound = analytic::max_idle_diode_voltage(p.n, p.v_tol)?;
    let mut summary = vec![
        ("active_legs", op.assignment.active_count() as f64, "-"),
        ("total_power", powers.iter().sum::<f64>(), "W"),
        ("min_turnon_current", worst.min_turnon_current, "A"),
        ("max_switch_current", worst.max_switch_current, "A"),
        ("hard_turnoff_loss_per_device", worst.hard_loss_per_device, "W"),
        ("hard_turnoff_loss_per_pack", worst.hard_loss_per_pack, "W"),
        ("worst_case_loss_ratio", worst.loss_ratio, "-"),
        ("worst_case_min_dead_time", worst.min_dead_time, "s"),
        ("dead_time", p.dead_time, "s"),
        ("max_idle_diode_voltage", idle_bound, "V"),
        ("diode_drop", p.diode_drop, "V"),
    ];
    let input: f64 = powers.iter().filter(|&&x| x > 0.0).sum();
    if input > 0.0 {
        let eff = analytic::efficiency(&powers, None)?;
        summary.push(("power_circuit_efficiency", eff.power_circuit, "-"));
    }
    let summary = quantity_table(&summary);

    let mut flags = Vec::new();
    if !analytic::diode_blocking_ok(p) {
        flags.push(format!(
            "idle-leg diode voltage bound {} V reaches the diode drop {} V",
            fmt6(idle_bound),
            fmt6(p.diode_drop)
        ));
    }
    if p.dead_time < worst.min_dead_time {
        flags.push(format!(
            "dead time {} s is shorter than the worst-case swing time {} s",
            fmt6(p.dead_time),
            fmt6(worst.min_dead_time)
        ));
    }
    let status = flags_status(flags);

    let mut report = String::new();
    let _ = writeln!(report, "operating point ({} cells)", op.n());
    if !active {
        let _ = writeln!(report, "assignment inactive: no leg pair to transfer between, all currents zero");
    }
    report.push_str(&cells.to_text());
    let _ = writeln!(report, "design bounds");
    report.push_str(&summary.to_text());
    push_flags(&mut report, &status);

    Ok(Outcome {
        report,
        files: vec![
            OutputFile {
                name: "analyze_cells.csv".into(),
                table: cells,
            },
            OutputFile {
                name: "analyze_summary.csv".into(),
                table: summary,
            },
        ],
        status,
    })
}

fn trace_table(trace: &network::Trace, op: &equalizer::OperatingPoint) -> Table {
    let n = op.n();
    let header: Vec<String> = std::iter::once("t_s".to_string())
        .chain((1..=n).map(|k| format!("i_{k}")))
        .chain(std::iter::once("v_o".to_string()))
        .chain((1..=n).map(|k| format!("ib_{k}")))
        .chain(std::iter::once("mode".to_string()))
        .collect();
    let mut t = Table::new(header);
    let reference = network::reference_leg(op);
    let period = trace.model.period;
    for row in &trace.rows {
        let x = equalizer::signal::CycleTime::from_seconds(row.t, period).phase;
        let r = reference.map_or(0.0, |k| row.currents[k]);
        let mode = network::mode_at(x, r, op);
        let mut cells: Vec<Cell> = Vec::with_capacity(2 * n + 3);
        cells.push(row.t.into());
        cells.extend(row.currents.iter().map(|&i| Cell::Num(i)));
        cells.push(row.v_o.into());
        cells.extend(row.battery_currents.iter().map(|&i| Cell::Num(i)));
        cells.push(mode.label().into());
        t.push(cells);
    }
    t
}

pub fn simulate(config: &ScenarioConfig, overrides: &Overrides) -> Result<Outcome, CliError> {
    let op = config.operating_point()?;
    let cycles = overrides.cycles.unwrap_or(config.cycles);
    let steps = overrides.steps_per_period.unwrap_or(config.steps_per_period);
    let mut report = String::new();
    if !op.assignment.is_active() {
        let _ = writeln!(report, "assignment inactive: nothing to simulate");
        let status = Status::PhysicsFlag(vec!["inactive assignment".into()]);
        push_flags(&mut report, &status);
        return Ok(Outcome {
            report,
            files: Vec::new(),
            status,
        });
    }
    let (trace, sol) = network::simulate(&op, cycles, steps)?;
    let formula = analytic::battery_currents(&op);

    let mut steady = Table::new([
        "cell",
        "role",
        "dc_current_a",
        "formula_current_a",
        "power_w",
        "top_edge_current_a",
        "bottom_edge_current_a",
        "ripple_a",
    ]);
    for k in 0..op.n() {
        steady.push(vec![
            (k + 1).into(),
            op.assignment.role(k).tag().into(),
            sol.dc_currents[k].into(),
            formula[k].into(),
            sol.powers[k].into(),
            sol.top_edge_currents[k].unwrap_or(0.0).into(),
            sol.bottom_edge_currents[k].unwrap_or(0.0).into(),
            sol.ripple[k].into(),
        ]);
    }

    let mut modes = Table::new(["start_s", "end_s", "mode"]);
    for m in network::mode_sequence(&trace, &op) {
        modes.push(vec![m.start.into(), m.end.into(), m.mode.label().into()]);
    }

    let c_eff = op.params.effective_snubber_max();
    let edges = network::edge_commutations(&sol, &op, c_eff, op.params.dead_time)?;
    let mut commutations = Table::new(["cell", "role", "edge", "current_a", "t_r_s", "residual_v", "zvs"]);
    for e in &edges {
        commutations.push(vec![
            (e.converter + 1).into(),
            e.role.tag().into(),
            match e.edge {
                Edge::TopTurnOn => "top_on",
                Edge::BottomTurnOn => "bottom_on",
            }
            .into(),
            e.current.into(),
            e.report.t_r.into(),
            e.report.residual_voltage.into(),
            if e.report.zvs_achieved { "yes" } else { "no" }.into(),
        ]);
    }

    let mut flags = Vec::new();
    if sol.diode_conduction {
        flags.push("an idle leg's body diode would conduct; its current is not modeled".into());
    }
    let hard = edges.iter().filter(|e| !e.report.zvs_achieved).count();
    if hard > 0 {
        flags.push(format!("{hard} of {} turn-on edges are not zero-voltage at the configured dead time", edges.len()));
    }

    let summary_rows = vec![
        ("cycles", cycles as f64, "-"),
        ("steps_per_period", steps as f64, "-"),
        ("cycle_mean_drift", sol.drift, "A"),
        ("branch_mean_residual", sol.branch_mean_residual, "A"),
        ("kcl_residual", sol.kcl_residual, "-"),
        ("total_power", sol.powers.iter().sum::<f64>(), "W"),
    ];
    let mut files = vec![
        OutputFile {
            name: "trace.csv".into(),
            table: trace_table(&trace, &op),
        },
        OutputFile {
            name: "steady_state.csv".into(),
            table: steady.clone(),
        },
        OutputFile {
            name: "modes.csv".into(),
            table: modes.clone(),
        },
        OutputFile {
            name: "commutations.csv".into(),
            table: commutations.clone(),
        },
    ];

    let _ = writeln!(report, "steady state after {cycles} cycles");
    report.push_str(&steady.to_text());
    report.push_str(&quantity_table(&summary_rows).to_text());
    let _ = writeln!(report, "modes over the final period");
    report.push_str(&modes.to_text());
    let _ = writeln!(
        report,
        "turn-on commutations at dead time {} s, C_s_eff {} F",
        fmt6(op.params.dead_time),
        fmt6(c_eff)
    );
    report.push_str(&commutations.to_text());

    if let Some(seed) = overrides.seed {
        let (table, failures) = verify(config, seed, cycles, steps)?;
        let _ = writeln!(
            report,
            "randomized verification: {} points, seed {seed}, {} failing",
            config.verify_points,
            failures
        );
        if failures > 0 {
            flags.push(format!("{failures} randomized points disagree with the closed form or the edge-current bounds"));
        }
        files.push(OutputFile {
            name: "verify.csv".into(),
            table,
        });
    }

    let status = if !sol.converged {
        Status::NonConvergence(format!(
            "cycle-to-cycle drift {} A after {cycles} cycles",
            fmt6(sol.drift)
        ))
    } else {
        flags_status(flags)
    };
    push_flags(&mut report, &status);
    Ok(Outcome { report, files, status })
}

/// Simulator against closed form over a seeded suite of controller-
/// consistent points.
fn verify(config: &ScenarioConfig, seed: u64, cycles: usize, steps: usize) -> Result<(Table, usize), CliError> {
    let points = suite::random_points(
        &config.params,
        seed,
        config.verify_points,
        Ordering::ControllerConsistent,
        Execution::default(),
    );
    let checks = suite::oracle_checks(&points, cycles, steps, Execution::default())?;
    let mut t = Table::new([
        "index",
        "n",
        "max_rel_error",
        "edge_max_abs_a",
        "discharge_edge_min_abs_a",
        "charge_edge_min_assist_a",
        "ok",
    ]);
    let mut failures = 0;
    for (c, op) in checks.iter().zip(&points) {
        let ok = c.max_rel_error <= 5e-3
            && c.converged
            && c.edge_max_abs <= analytic::max_switch_current(&op.params) * (1.0 + 1e-9)
            && c.discharge_edge_min_abs >= analytic::min_turnon_current(&op.params) * (1.0 - 1e-9);
        failures += (!ok) as usize;
        t.push(vec![
            c.index.into(),
            c.n.into(),
            c.max_rel_error.into(),
            c.edge_max_abs.into(),
            c.discharge_edge_min_abs.into(),
            c.charge_edge_min_assist.into(),
            if ok { "yes" } else { "no" }.into(),
        ]);
    }
    Ok((t, failures))
}

fn log_table(log: &runner::EqualizationLog, n: usize) -> Table {
    let header: Vec<String> = std::iter::once("t_s".to_string())
        .chain((1..=n).map(|k| format!("v_{k}")))
        .chain((1..=n).map(|k| format!("role_{k}")))
        .chain((1..=n).map(|k| format!("i_{k}")))
        .chain(std::iter::once("spread_v".to_string()))
        .collect();
    let mut t = Table::new(header);
    for row in &log.rows {
        let mut cells: Vec<Cell> = Vec::with_capacity(3 * n + 2);
        cells.push(row.t.into());
        cells.extend(row.voltages.iter().map(|&v| Cell::Num(v)));
        cells.extend(row.roles.iter().map(|r: &Role| Cell::from(r.tag())));
        cells.extend(row.currents.iter().map(|&i| Cell::Num(i)));
        cells.push(row.spread.into());
        t.push(cells);
    }
    t
}

pub fn equalize(config: &ScenarioConfig, overrides: &Overrides) -> Result<Outcome, CliError> {
    let settings = config.run_settings();
    let log = match config.profile {
        Some((profile, cycles)) => runner::run_cycling(
            config.pack.clone(),
            &config.params,
            &profile,
            overrides.cycles.unwrap_or(cycles),
            &settings,
        )?,
        None => runner::run_equalization(config.pack.clone(), &config.params, &settings)?,
    };
    let n = config.params.n;
    let table = log_table(&log, n);

    let termination = match log.termination {
        Termination::AllIdle => "all cells in band",
        Termination::Stalled => "band one-sided, gates off",
        Termination::HorizonReached => "horizon reached",
        Termination::CyclesComplete => "cycles complete",
    };
    let mut summary = vec![
        ("end_time", log.end_time, "s"),
        ("initial_spread", log.rows.first().map_or(0.0, |r| r.spread), "V"),
        ("final_spread", log.final_spread(), "V"),
        ("charge_drift", log.charge_drift(), "-"),
        ("min_voltage", log.voltage_range.0, "V"),
        ("max_voltage", log.voltage_range.1, "V"),
        ("saturation_events", log.saturation_events as f64, "-"),
    ];
    if let (Some(first), Some(last)) = (log.cycle_spreads.first(), log.cycle_spreads.last()) {
        summary.push(("first_cycle_spread", *first, "V"));
        summary.push(("last_cycle_spread", *last, "V"));
    }
    let summary = quantity_table(&summary);

    let mut flags = Vec::new();
    if log.saturation_events > 0 {
        flags.push(format!("{} control steps clamped a cell's state of charge", log.saturation_events));
    }
    let status = if log.termination == Termination::HorizonReached {
        Status::NonConvergence(format!("still equalizing at the {} s horizon", fmt6(config.horizon)))
    } else {
        flags_status(flags)
    };

    let mut report = String::new();
    let _ = writeln!(report, "equalization: {termination}");
    report.push_str(&summary.to_text());
    push_flags(&mut report, &status);
    Ok(Outcome {
        report,
        files: vec![
            OutputFile {
                name: "equalization_log.csv".into(),
                table,
            },
            OutputFile {
                name: "equalization_summary.csv".into(),
                table: summary,
            },
        ],
        status,
    })
}

pub fn sweep_cs(config: &ScenarioConfig) -> Result<Outcome, CliError> {
    let rows = analytic::cs_sweep(&config.params, &config.cs_grid, Execution::default())?;
    let mut t = Table::new([
        "c_s_f",
        "c_eff_low_f",
        "c_eff_high_f",
        "loss_ratio_low",
        "loss_ratio_high",
        "t_d_min_low_s",
        "t_d_min_high_s",
    ]);
    for r in &rows {
        t.push(vec![
            r.c_s.into(),
            r.c_eff_low.into(),
            r.c_eff_high.into(),
            r.loss_ratio_low.into(),
            r.loss_ratio_high.into(),
            r.t_d_min_low.into(),
            r.t_d_min_high.into(),
        ]);
    }
    let mut report = String::new();
    let _ = writeln!(
        report,
        "snubber sweep at I_max {} A, I_min {} A, V_bmax {} V",
        fmt6(analytic::max_switch_current(&config.params)),
        fmt6(analytic::min_turnon_current(&config.params)),
        fmt6(config.params.v_bmax)
    );
    report.push_str(&t.to_text());
    Ok(Outcome {
        report,
        files: vec![OutputFile {
            name: "sweep_cs.csv".into(),
            table: t,
        }],
        status: Status::Ok,
    })
}
