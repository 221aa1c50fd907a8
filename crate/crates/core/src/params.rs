use crate::error::{ensure_non_negative, ensure_positive, EqualizerError, Result};

/// Range of the device drain-source capacitance that sits in parallel with
/// the snubber capacitor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CapacitanceRange {
    pub min: f64,
    pub max: f64,
}

/// Electrical design constants of the equalizer.
///
/// [`Default`] gives the 4-cell, 48 W prototype: L = 2.1 µH, f_s = 30 kHz,
/// δ = 1/8, C_s = 4.7 nF with 1.2–4.3 nF device capacitance, t_f = 10.6 ns,
/// t_vr = 45.4 ns and a 10.5–14.4 V cell window.
#[derive(Debug, Clone, PartialEq)]
pub struct EqualizerParams {
    /// Number of series cells, one half-bridge leg per cell.
    pub n: usize,
    /// Series inductance per leg (H).
    pub inductance: f64,
    /// DC blocking capacitance per leg (F). Treated as ideal by the models.
    pub blocking_capacitance: f64,
    /// DC bus capacitance per leg (F). Treated as ideal by the models.
    pub bus_capacitance: f64,
    /// Snubber capacitance across each device (F).
    pub snubber_capacitance: f64,
    /// Device output capacitance added to the snubber (F).
    pub parasitic_capacitance: CapacitanceRange,
    /// Switching frequency (Hz).
    pub switching_frequency: f64,
    /// Phase shift of charging legs, as a fraction of the period, in (0, 1/4).
    pub phase_shift: f64,
    /// Blanking interval after every gate edge (s).
    pub dead_time: f64,
    /// Half-width of the acceptance band around the mean cell voltage (V).
    pub v_tol: f64,
    /// Forward drop of the device body diodes (V).
    pub diode_drop: f64,
    /// Lowest cell voltage the design must handle (V).
    pub v_bmin: f64,
    /// Highest cell voltage the design must handle (V).
    pub v_bmax: f64,
    /// Device current fall time (s).
    pub fall_time: f64,
    /// Device voltage rise time under hard switching (s).
    pub rise_time: f64,
}

impl Default for EqualizerParams {
    fn default() -> Self {
        Self {
            n: 4,
            inductance: 2.1e-6,
            blocking_capacitance: 670e-6,
            bus_capacitance: 640e-6,
            snubber_capacitance: 4.7e-9,
            parasitic_capacitance: CapacitanceRange {
                min: 1.2e-9,
                max: 4.3e-9,
            },
            switching_frequency: 30e3,
            phase_shift: 0.125,
            dead_time: 120e-9,
            v_tol: 0.025,
            diode_drop: 0.4,
            v_bmin: 10.5,
            v_bmax: 14.4,
            fall_time: 10.6e-9,
            rise_time: 45.4e-9,
        }
    }
}

impl EqualizerParams {
    /// Same design with a different cell count.
    pub fn with_cells(mut self, n: usize) -> Self {
        self.n = n;
        self
    }

    pub fn period(&self) -> f64 {
        1.0 / self.switching_frequency
    }

    /// Snubber plus the smallest device capacitance.
    pub fn effective_snubber_min(&self) -> f64 {
        self.snubber_capacitance + self.parasitic_capacitance.min
    }

    /// Snubber plus the largest device capacitance.
    pub fn effective_snubber_max(&self) -> f64 {
        self.snubber_capacitance + self.parasitic_capacitance.max
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(EqualizerError::InvalidParameter {
                name: "n",
                reason: format!("need at least 2 cells, got {}", self.n),
            });
        }
        ensure_positive("inductance", self.inductance)?;
        ensure_positive("blocking_capacitance", self.blocking_capacitance)?;
        ensure_positive("bus_capacitance", self.bus_capacitance)?;
        ensure_non_negative("snubber_capacitance", self.snubber_capacitance)?;
        ensure_non_negative("parasitic_capacitance.min", self.parasitic_capacitance.min)?;
        ensure_non_negative("parasitic_capacitance.max", self.parasitic_capacitance.max)?;
        if self.parasitic_capacitance.min > self.parasitic_capacitance.max {
            return Err(EqualizerError::InvalidParameter {
                name: "parasitic_capacitance",
                reason: "min exceeds max".into(),
            });
        }
        ensure_positive("switching_frequency", self.switching_frequency)?;
        if !(self.phase_shift > 0.0 && self.phase_shift < 0.25) {
            return Err(EqualizerError::InvalidParameter {
                name: "phase_shift",
                reason: format!("must lie in (0, 0.25), got {}", self.phase_shift),
            });
        }
        ensure_non_negative("dead_time", self.dead_time)?;
        if self.dead_time >= self.phase_shift * self.period() {
            return Err(EqualizerError::InvalidParameter {
                name: "dead_time",
                reason: format!(
                    "must be shorter than the phase-shift interval {} s",
                    self.phase_shift * self.period()
                ),
            });
        }
        ensure_non_negative("v_tol", self.v_tol)?;
        ensure_non_negative("diode_drop", self.diode_drop)?;
        ensure_positive("v_bmin", self.v_bmin)?;
        if self.v_bmin >= self.v_bmax {
            return Err(EqualizerError::InvalidParameter {
                name: "v_bmax",
                reason: format!("must exceed v_bmin ({})", self.v_bmin),
            });
        }
        ensure_non_negative("fall_time", self.fall_time)?;
        ensure_non_negative("rise_time", self.rise_time)?;
        Ok(())
    }
}

/// What a converter leg does during the current control period.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    Discharge,
    Charge,
    /// Both devices held off.
    Idle,
}

impl Role {
    pub fn is_idle(self) -> bool {
        self == Role::Idle
    }

    /// Single-letter tag used in CSV output.
    pub fn tag(self) -> &'static str {
        match self {
            Role::Discharge => "D",
            Role::Charge => "C",
            Role::Idle => "I",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "D" | "d" | "Discharge" | "discharge" => Some(Role::Discharge),
            "C" | "c" | "Charge" | "charge" => Some(Role::Charge),
            "I" | "i" | "Idle" | "idle" => Some(Role::Idle),
            _ => None,
        }
    }
}

/// Per-leg role and phase shift (fraction of the period).
///
/// Discharging legs run at phase 0 and charging legs lag by δ, i.e. their
/// phase is −δ. The phase of an idle leg is stored as 0 and never used.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseAssignment {
    roles: Vec<Role>,
    phases: Vec<f64>,
}

impl PhaseAssignment {
    pub fn new(roles: Vec<Role>, phase_shift: f64) -> Self {
        let phases = roles
            .iter()
            .map(|r| match r {
                Role::Charge => -phase_shift,
                Role::Discharge | Role::Idle => 0.0,
            })
            .collect();
        Self { roles, phases }
    }

    pub fn all_idle(n: usize) -> Self {
        Self::new(vec![Role::Idle; n], 0.0)
    }

    pub fn len(&self) -> usize {
        self.roles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.roles.is_empty()
    }

    pub fn roles(&self) -> &[Role] {
        &self.roles
    }

    pub fn role(&self, k: usize) -> Role {
        self.roles[k]
    }

    pub fn phases(&self) -> &[f64] {
        &self.phases
    }

    pub fn phase(&self, k: usize) -> f64 {
        self.phases[k]
    }

    pub fn count(&self, role: Role) -> usize {
        self.roles.iter().filter(|&&r| r == role).count()
    }

    pub fn active_count(&self) -> usize {
        self.len() - self.count(Role::Idle)
    }

    pub fn active_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.roles
            .iter()
            .enumerate()
            .filter(|(_, r)| !r.is_idle())
            .map(|(k, _)| k)
    }

    /// True when power can flow: at least one discharging and one charging leg.
    pub fn is_active(&self) -> bool {
        self.roles.contains(&Role::Discharge) && self.roles.contains(&Role::Charge)
    }

    pub fn all_idle_roles(&self) -> bool {
        self.roles.iter().all(|r| r.is_idle())
    }
}

/// Cell voltages, the roles applied to them and the design they run on.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatingPoint {
    pub voltages: Vec<f64>,
    pub assignment: PhaseAssignment,
    pub params: EqualizerParams,
}

impl OperatingPoint {
    pub fn new(
        voltages: Vec<f64>,
        assignment: PhaseAssignment,
        params: EqualizerParams,
    ) -> Result<Self> {
        params.validate()?;
        if voltages.len() != params.n {
            return Err(EqualizerError::LengthMismatch {
                expected: params.n,
                actual: voltages.len(),
            });
        }
        if assignment.len() != params.n {
            return Err(EqualizerError::LengthMismatch {
                expected: params.n,
                actual: assignment.len(),
            });
        }
        for &v in &voltages {
            ensure_positive("cell voltage", v)?;
        }
        Ok(Self {
            voltages,
            assignment,
            params,
        })
    }

    /// Builds the assignment from roles using the design's phase shift.
    pub fn from_roles(voltages: Vec<f64>, roles: Vec<Role>, params: EqualizerParams) -> Result<Self> {
        let assignment = PhaseAssignment::new(roles, params.phase_shift);
        Self::new(voltages, assignment, params)
    }

    pub fn n(&self) -> usize {
        self.voltages.len()
    }

    pub(crate) fn check_index(&self, k: usize) -> Result<()> {
        if k < self.n() {
            Ok(())
        } else {
            Err(EqualizerError::IndexOutOfRange { index: k, n: self.n() })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let p = EqualizerParams::default();
        p.validate().unwrap();
        assert!((p.period() - 33.333_333e-6).abs() < 1e-11);
        assert!((p.effective_snubber_min() - 5.9e-9).abs() < 1e-18);
        assert!((p.effective_snubber_max() - 9.0e-9).abs() < 1e-18);
    }

    #[test]
    fn rejects_bad_parameters() {
        let bad = |f: fn(&mut EqualizerParams)| {
            let mut p = EqualizerParams::default();
            f(&mut p);
            p.validate().unwrap_err()
        };
        assert!(matches!(bad(|p| p.n = 1), EqualizerError::InvalidParameter { name: "n", .. }));
        assert!(matches!(
            bad(|p| p.inductance = -1.0),
            EqualizerError::InvalidParameter { name: "inductance", .. }
        ));
        assert!(matches!(
            bad(|p| p.phase_shift = 0.25),
            EqualizerError::InvalidParameter { name: "phase_shift", .. }
        ));
        assert!(matches!(
            bad(|p| p.dead_time = 5e-6),
            EqualizerError::InvalidParameter { name: "dead_time", .. }
        ));
        assert!(matches!(
            bad(|p| p.v_bmax = 10.0),
            EqualizerError::InvalidParameter { name: "v_bmax", .. }
        ));
    }

    #[test]
    fn assignment_phases_follow_roles() {
        use Role::*;
        let a = PhaseAssignment::new(vec![Discharge, Idle, Charge, Charge], 0.125);
        assert_eq!(a.phases(), &[0.0, 0.0, -0.125, -0.125]);
        assert_eq!(a.active_count(), 3);
        assert_eq!(a.active_indices().collect::<Vec<_>>(), vec![0, 2, 3]);
        assert!(a.is_active());
        assert!(!PhaseAssignment::new(vec![Discharge, Idle], 0.125).is_active());
    }

    #[test]
    fn operating_point_checks_lengths() {
        let p = EqualizerParams::default();
        let err = OperatingPoint::from_roles(vec![12.0; 3], vec![Role::Idle; 4], p).unwrap_err();
        assert_eq!(err, EqualizerError::LengthMismatch { expected: 4, actual: 3 });
    }
}
