//! Scenario configuration: JSON schema, defaults and validation.
//!
//! Every section except `cells` may be omitted. Unknown keys are rejected.
//! Errors carry the path of the offending field, e.g.
//! `equalizer.inductance` or `cells[2].voltage`.

use serde::Deserialize;

use equalizer::runner::{CellModel, CyclingProfile, PackState, RunSettings, LEAD_ACID_OCV_HI, LEAD_ACID_OCV_LO, LEAD_ACID_R_INT, RACK_R_INT, RACK_V_MAX};
use equalizer::{CapacitanceRange, EqualizerError, EqualizerParams, OperatingPoint, PhaseAssignment, Role};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{path}: {message}")]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl ConfigError {
    fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            path: path.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    schema_version: u32,
    #[serde(default)]
    equalizer: RawEqualizer,
    cells: Vec<RawCell>,
    #[serde(default)]
    operating_point: RawOperatingPoint,
    #[serde(default)]
    controller: RawController,
    #[serde(default)]
    simulation: RawSimulation,
    #[serde(default)]
    sweep: RawSweep,
    #[serde(default)]
    profile: Option<RawProfile>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCapacitanceRange {
    min: f64,
    max: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawEqualizer {
    n: usize,
    inductance: f64,
    blocking_capacitance: f64,
    bus_capacitance: f64,
    snubber_capacitance: f64,
    parasitic_capacitance: RawCapacitanceRange,
    switching_frequency: f64,
    phase_shift: f64,
    dead_time: f64,
    diode_drop: f64,
    v_bmin: f64,
    v_bmax: f64,
    fall_time: f64,
    rise_time: f64,
}

impl Default for RawEqualizer {
    fn default() -> Self {
        let p = EqualizerParams::default();
        Self {
            n: p.n,
            inductance: p.inductance,
            blocking_capacitance: p.blocking_capacitance,
            bus_capacitance: p.bus_capacitance,
            snubber_capacitance: p.snubber_capacitance,
            parasitic_capacitance: RawCapacitanceRange {
                min: p.parasitic_capacitance.min,
                max: p.parasitic_capacitance.max,
            },
            switching_frequency: p.switching_frequency,
            phase_shift: p.phase_shift,
            dead_time: p.dead_time,
            diode_drop: p.diode_drop,
            v_bmin: p.v_bmin,
            v_bmax: p.v_bmax,
            fall_time: p.fall_time,
            rise_time: p.rise_time,
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum CellKindSpec {
    LeadAcid,
    UltracapRack,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCell {
    kind: CellKindSpec,
    capacity: Option<f64>,
    voltage: Option<f64>,
    soc: Option<f64>,
    r_int: Option<f64>,
    ocv_lo: Option<f64>,
    ocv_hi: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOperatingPoint {
    roles: Option<Vec<String>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawController {
    v_tol: f64,
    control_period: f64,
    log_every: usize,
}

impl Default for RawController {
    fn default() -> Self {
        Self {
            v_tol: EqualizerParams::default().v_tol,
            control_period: 1.0,
            log_every: 1,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawSimulation {
    cycles: usize,
    steps_per_period: usize,
    horizon: f64,
    verify_points: usize,
}

impl Default for RawSimulation {
    fn default() -> Self {
        Self {
            cycles: 20,
            steps_per_period: 64,
            horizon: 48.0 * 3600.0,
            verify_points: 200,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawSweep {
    cs_grid: Vec<f64>,
}

impl Default for RawSweep {
    fn default() -> Self {
        Self {
            cs_grid: (2..=20).map(|j| j as f64 * 0.5e-9).collect(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProfile {
    current: f64,
    v_min: f64,
    v_max: f64,
    cycles: usize,
}

/// A validated scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub params: EqualizerParams,
    pub pack: PackState,
    /// Explicit roles; when absent the controller decides.
    pub roles: Option<Vec<Role>>,
    pub control_period: f64,
    pub log_every: usize,
    pub cycles: usize,
    pub steps_per_period: usize,
    pub horizon: f64,
    pub verify_points: usize,
    pub cs_grid: Vec<f64>,
    pub profile: Option<(CyclingProfile, usize)>,
}

impl ScenarioConfig {
    /// Initial open-circuit voltages.
    pub fn voltages(&self) -> Vec<f64> {
        self.pack.ocvs()
    }

    /// Operating point at the initial voltages.
    pub fn operating_point(&self) -> Result<OperatingPoint, EqualizerError> {
        let voltages = self.voltages();
        let assignment = match &self.roles {
            Some(roles) => PhaseAssignment::new(roles.clone(), self.params.phase_shift),
            None => {
                let controller = equalizer::controller::BalancingController::new(&self.params, self.control_period);
                controller
                    .decide(&equalizer::controller::VoltageReading::new(voltages.clone(), 0.0))?
                    .assignment
            }
        };
        OperatingPoint::new(voltages, assignment, self.params.clone())
    }

    pub fn run_settings(&self) -> RunSettings {
        RunSettings {
            horizon: self.horizon,
            control_period: self.control_period,
            log_every: self.log_every,
        }
    }
}

/// Parses and validates a JSON scenario.
pub fn parse_config(text: &str) -> Result<ScenarioConfig, ConfigError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let raw: RawConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let path = if path == "." { "$".to_string() } else { path };
        ConfigError::new(path, e.into_inner().to_string())
    })?;
    validate(raw)
}

fn param_error(e: EqualizerError) -> ConfigError {
    match e {
        EqualizerError::InvalidParameter { name, reason } => {
            let path = if name == "v_tol" {
                "controller.v_tol".to_string()
            } else {
                format!("equalizer.{name}")
            };
            ConfigError::new(path, reason)
        }
        other => ConfigError::new("equalizer", other.to_string()),
    }
}

fn positive(path: &str, value: f64) -> Result<(), ConfigError> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(ConfigError::new(path, format!("must be positive and finite, got {value}")))
    }
}

fn build_cell(index: usize, raw: &RawCell) -> Result<CellModel, ConfigError> {
    let path = |field: &str| format!("cells[{index}].{field}");
    let r_int = raw.r_int;
    if let Some(r) = r_int {
        if !(r.is_finite() && r >= 0.0) {
            return Err(ConfigError::new(path("r_int"), format!("must be non-negative, got {r}")));
        }
    }
    if let Some(c) = raw.capacity {
        positive(&path("capacity"), c)?;
    }
    let cell_error = |e: EqualizerError| match e {
        EqualizerError::InvalidParameter { name, reason } => ConfigError::new(path(name), reason),
        other => ConfigError::new(format!("cells[{index}]"), other.to_string()),
    };
    match raw.kind {
        CellKindSpec::LeadAcid => {
            let lo = raw.ocv_lo.unwrap_or(LEAD_ACID_OCV_LO);
            let hi = raw.ocv_hi.unwrap_or(LEAD_ACID_OCV_HI);
            positive(&path("ocv_lo"), lo)?;
            if !(hi > lo) {
                return Err(ConfigError::new(path("ocv_hi"), format!("must exceed ocv_lo ({lo} V), got {hi} V")));
            }
            let capacity = raw.capacity.unwrap_or(60.0);
            let r = r_int.unwrap_or(LEAD_ACID_R_INT);
            match (raw.voltage, raw.soc) {
                (Some(v), None) => CellModel::lead_acid_at_voltage(capacity, v, r, lo, hi).map_err(cell_error),
                (None, Some(soc)) => {
                    if !(0.0..=1.0).contains(&soc) {
                        return Err(ConfigError::new(path("soc"), format!("must lie in [0, 1], got {soc}")));
                    }
                    let cell = CellModel {
                        r_int: r,
                        ocv_lo: lo,
                        ocv_hi: hi,
                        capacity,
                        ..CellModel::lead_acid(capacity, soc).map_err(cell_error)?
                    };
                    cell.validate().map_err(cell_error)?;
                    Ok(cell)
                }
                _ => Err(ConfigError::new(format!("cells[{index}]"), "give exactly one of `voltage` or `soc`")),
            }
        }
        CellKindSpec::UltracapRack => {
            if raw.soc.is_some() {
                return Err(ConfigError::new(path("soc"), "racks are specified by `voltage`"));
            }
            let Some(v) = raw.voltage else {
                return Err(ConfigError::new(path("voltage"), "required for an ultracap rack"));
            };
            positive(&path("voltage"), v)?;
            let mut cell = CellModel::ultracap_rack(raw.capacity.unwrap_or(50e3), v).map_err(cell_error)?;
            cell.r_int = r_int.unwrap_or(RACK_R_INT);
            cell.ocv_lo = raw.ocv_lo.unwrap_or(0.0);
            cell.ocv_hi = raw.ocv_hi.unwrap_or(RACK_V_MAX);
            cell.validate().map_err(cell_error)?;
            Ok(cell)
        }
    }
}

fn validate(raw: RawConfig) -> Result<ScenarioConfig, ConfigError> {
    if raw.schema_version != SCHEMA_VERSION {
        return Err(ConfigError::new(
            "schema_version",
            format!("unsupported version {}, expected {SCHEMA_VERSION}", raw.schema_version),
        ));
    }
    let e = &raw.equalizer;
    let params = EqualizerParams {
        n: e.n,
        inductance: e.inductance,
        blocking_capacitance: e.blocking_capacitance,
        bus_capacitance: e.bus_capacitance,
        snubber_capacitance: e.snubber_capacitance,
        parasitic_capacitance: CapacitanceRange {
            min: e.parasitic_capacitance.min,
            max: e.parasitic_capacitance.max,
        },
        switching_frequency: e.switching_frequency,
        phase_shift: e.phase_shift,
        dead_time: e.dead_time,
        v_tol: raw.controller.v_tol,
        diode_drop: e.diode_drop,
        v_bmin: e.v_bmin,
        v_bmax: e.v_bmax,
        fall_time: e.fall_time,
        rise_time: e.rise_time,
    };
    params.validate().map_err(param_error)?;

    if raw.cells.len() != params.n {
        return Err(ConfigError::new(
            "cells",
            format!("{} cells listed but equalizer.n is {}", raw.cells.len(), params.n),
        ));
    }
    let cells = raw
        .cells
        .iter()
        .enumerate()
        .map(|(i, c)| build_cell(i, c))
        .collect::<Result<Vec<_>, _>>()?;

    let roles = match &raw.operating_point.roles {
        None => None,
        Some(tags) => {
            if tags.len() != params.n {
                return Err(ConfigError::new(
                    "operating_point.roles",
                    format!("{} roles listed but equalizer.n is {}", tags.len(), params.n),
                ));
            }
            let roles = tags
                .iter()
                .enumerate()
                .map(|(i, t)| {
                    Role::from_tag(t).ok_or_else(|| {
                        ConfigError::new(format!("operating_point.roles[{i}]"), format!("expected D, C or I, got {t:?}"))
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            Some(roles)
        }
    };

    let c = &raw.controller;
    positive("controller.control_period", c.control_period)?;
    if c.log_every == 0 {
        return Err(ConfigError::new("controller.log_every", "must be at least 1"));
    }

    let s = &raw.simulation;
    if s.cycles == 0 {
        return Err(ConfigError::new("simulation.cycles", "must be at least 1"));
    }
    if s.steps_per_period < 4 || !s.steps_per_period.is_multiple_of(4) {
        return Err(ConfigError::new(
            "simulation.steps_per_period",
            format!("must be a positive multiple of 4, got {}", s.steps_per_period),
        ));
    }
    positive("simulation.horizon", s.horizon)?;
    if s.horizon <= c.control_period {
        return Err(ConfigError::new("simulation.horizon", "must exceed controller.control_period"));
    }
    if s.verify_points == 0 {
        return Err(ConfigError::new("simulation.verify_points", "must be at least 1"));
    }

    if raw.sweep.cs_grid.is_empty() {
        return Err(ConfigError::new("sweep.cs_grid", "must not be empty"));
    }
    for (i, &cs) in raw.sweep.cs_grid.iter().enumerate() {
        positive(&format!("sweep.cs_grid[{i}]"), cs)?;
    }

    let profile = match &raw.profile {
        None => None,
        Some(p) => {
            if !(p.current.is_finite() && p.current >= 0.0) {
                return Err(ConfigError::new("profile.current", format!("must be non-negative, got {}", p.current)));
            }
            positive("profile.v_min", p.v_min)?;
            if !(p.v_max > p.v_min) {
                return Err(ConfigError::new("profile.v_max", format!("must exceed profile.v_min ({} V)", p.v_min)));
            }
            if p.cycles == 0 {
                return Err(ConfigError::new("profile.cycles", "must be at least 1"));
            }
            Some((
                CyclingProfile {
                    current: p.current,
                    v_min: p.v_min,
                    v_max: p.v_max,
                },
                p.cycles,
            ))
        }
    };

    Ok(ScenarioConfig {
        params,
        pack: PackState::new(cells),
        roles,
        control_period: c.control_period,
        log_every: c.log_every,
        cycles: s.cycles,
        steps_per_period: s.steps_per_period,
        horizon: s.horizon,
        verify_points: s.verify_points,
        cs_grid: raw.sweep.cs_grid.clone(),
        profile,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "schema_version": 1,
        "cells": [
            {"kind": "lead_acid", "voltage": 12.69},
            {"kind": "lead_acid", "voltage": 12.59},
            {"kind": "lead_acid", "voltage": 12.52},
            {"kind": "lead_acid", "voltage": 12.04}
        ]
    }"#;

    #[test]
    fn defaults_fill_omitted_sections() {
        let c = parse_config(MINIMAL).unwrap();
        assert_eq!(c.params, EqualizerParams::default());
        assert_eq!(c.params.n, 4);
        assert_eq!(c.params.inductance, 2.1e-6);
        assert_eq!(c.params.switching_frequency, 30e3);
        assert_eq!(c.params.phase_shift, 0.125);
        assert_eq!(c.params.snubber_capacitance, 4.7e-9);
        assert!(c.profile.is_none());
        assert!((c.voltages()[3] - 12.04).abs() < 1e-12);
    }

    fn error_path(text: &str) -> String {
        parse_config(text).unwrap_err().path
    }

    #[test]
    fn errors_name_the_field() {
        let neg = MINIMAL.replace("\"schema_version\": 1,", "\"schema_version\": 1, \"equalizer\": {\"inductance\": -2.1e-6},");
        assert_eq!(error_path(&neg), "equalizer.inductance");

        let n2 = MINIMAL.replace("\"schema_version\": 1,", "\"schema_version\": 1, \"equalizer\": {\"n\": 2},");
        assert_eq!(error_path(&n2), "cells");

        let unknown = MINIMAL.replace("\"schema_version\": 1,", "\"schema_version\": 1, \"equaliser\": {},");
        assert!(parse_config(&unknown).unwrap_err().message.contains("unknown field"));

        let nested = MINIMAL.replace("\"voltage\": 12.52", "\"voltage\": 12.52, \"colour\": 1");
        assert_eq!(error_path(&nested), "cells[2].colour");

        let typed = MINIMAL.replace("\"voltage\": 12.59", "\"voltage\": \"high\"");
        assert_eq!(error_path(&typed), "cells[1].voltage");

        let out_of_range = MINIMAL.replace("12.04", "13.5");
        assert_eq!(error_path(&out_of_range), "cells[3].voltage");

        let roles = MINIMAL.replace("\"schema_version\": 1,", "\"schema_version\": 1, \"operating_point\": {\"roles\": [\"D\",\"D\",\"X\",\"C\"]},");
        assert_eq!(error_path(&roles), "operating_point.roles[2]");

        let version = MINIMAL.replace("\"schema_version\": 1", "\"schema_version\": 2");
        assert_eq!(error_path(&version), "schema_version");

        let grid = MINIMAL.replace("\"schema_version\": 1,", "\"schema_version\": 1, \"sweep\": {\"cs_grid\": []},");
        assert_eq!(error_path(&grid), "sweep.cs_grid");

        let tol = MINIMAL.replace("\"schema_version\": 1,", "\"schema_version\": 1, \"controller\": {\"v_tol\": -1},");
        assert_eq!(error_path(&tol), "controller.v_tol");

        assert!(parse_config("{").is_err());
    }

    #[test]
    fn roles_and_racks() {
        let text = r#"{
            "schema_version": 1,
            "operating_point": {"roles": ["D", "D", "C", "C"]},
            "cells": [
                {"kind": "ultracap_rack", "voltage": 12.6},
                {"kind": "ultracap_rack", "voltage": 12.4},
                {"kind": "ultracap_rack", "voltage": 12.3, "capacity": 40000},
                {"kind": "ultracap_rack", "voltage": 12.2}
            ],
            "profile": {"current": 40, "v_min": 11.0, "v_max": 13.8, "cycles": 18}
        }"#;
        let c = parse_config(text).unwrap();
        assert_eq!(c.roles.as_deref(), Some(&[Role::Discharge, Role::Discharge, Role::Charge, Role::Charge][..]));
        assert_eq!(c.pack.cells[2].capacity, 40000.0);
        assert_eq!(c.profile.unwrap().1, 18);
        let op = c.operating_point().unwrap();
        assert_eq!(op.assignment.roles(), c.roles.as_deref().unwrap());
    }
}
