//! Carrier waveforms and gate timing.
//!
//! Time is reduced to a cycle index plus a phase fraction in `[0, 1)` before
//! any periodic evaluation, so long runs do not accumulate drift.

use crate::error::{ensure_positive, Result};
use crate::params::{EqualizerParams, Role};

/// A point in time split into whole switching periods and a phase fraction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CycleTime {
    pub cycle: i64,
    pub phase: f64,
}

impl CycleTime {
    pub fn from_seconds(t: f64, period: f64) -> Self {
        let periods = t / period;
        let cycle = periods.floor();
        let mut phase = periods - cycle;
        // periods - floor(periods) can round up to exactly 1.0
        let mut cycle = cycle as i64;
        if phase >= 1.0 {
            phase = 0.0;
            cycle += 1;
        }
        Self { cycle, phase }
    }

    pub fn to_seconds(self, period: f64) -> f64 {
        (self.cycle as f64 + self.phase) * period
    }
}

/// Wraps any real phase into `[0, 1)`.
pub fn wrap_phase(x: f64) -> f64 {
    let r = x.rem_euclid(1.0);
    if r >= 1.0 {
        0.0
    } else {
        // folds -0.0 into 0.0
        r + 0.0
    }
}

/// Square carrier on a phase fraction: +1 on `[0, 1/2)`, −1 on `[1/2, 1)`.
pub fn sq_phase(x: f64) -> f64 {
    if wrap_phase(x) < 0.5 {
        1.0
    } else {
        -1.0
    }
}

/// Triangle carrier on a phase fraction: −1 at 0, +1 at 1/2, slope ±4 per
/// period. It is the zero-mean integral of [`sq_phase`].
pub fn tr_phase(x: f64) -> f64 {
    let x = wrap_phase(x);
    if x <= 0.5 {
        -1.0 + 4.0 * x
    } else {
        3.0 - 4.0 * x
    }
}

/// `Sq(t)` for a period `ts` in seconds.
pub fn sq(t: f64, ts: f64) -> Result<f64> {
    ensure_positive("T_s", ts)?;
    Ok(sq_phase(CycleTime::from_seconds(t, ts).phase))
}

/// `Tr(t)` for a period `ts` in seconds.
pub fn tr(t: f64, ts: f64) -> Result<f64> {
    ensure_positive("T_s", ts)?;
    Ok(tr_phase(CycleTime::from_seconds(t, ts).phase))
}

/// Gate command of one half-bridge leg.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SwitchCommand {
    TopOn,
    BottomOn,
    BothOff,
}

/// Gate state of a leg with phase `delta_k` (fraction of the period).
///
/// The top device follows the high half of `Sq(t + δ_k·T_s)`, the bottom
/// device the low half. Each device turns on `dead_time` after its edge, so
/// `BothOff` covers `2·dead_time` per period.
pub fn gate_state(t: f64, delta_k: f64, params: &EqualizerParams) -> SwitchCommand {
    let period = params.period();
    let x = wrap_phase(CycleTime::from_seconds(t, period).phase + delta_k);
    let blank = params.dead_time / period;
    if x < 0.5 {
        if x < blank {
            SwitchCommand::BothOff
        } else {
            SwitchCommand::TopOn
        }
    } else if x - 0.5 < blank {
        SwitchCommand::BothOff
    } else {
        SwitchCommand::BottomOn
    }
}

/// [`gate_state`] for a leg with a role; idle legs are always off.
pub fn gate_state_for_role(t: f64, role: Role, params: &EqualizerParams) -> SwitchCommand {
    match role {
        Role::Idle => SwitchCommand::BothOff,
        Role::Discharge => gate_state(t, 0.0, params),
        Role::Charge => gate_state(t, -params.phase_shift, params),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const TS: f64 = 1.0 / 30e3;

    #[test]
    fn square_wave_values() {
        assert_eq!(sq(0.0, TS).unwrap(), 1.0);
        assert_eq!(sq(TS / 2.0, TS).unwrap(), -1.0);
        assert_eq!(sq(TS + TS / 4.0, TS).unwrap(), 1.0);
        assert_eq!(sq(-TS / 4.0, TS).unwrap(), -1.0);
    }

    #[test]
    fn triangle_wave_values() {
        assert_eq!(tr(0.0, TS).unwrap(), -1.0);
        assert!(tr(TS / 4.0, TS).unwrap().abs() < 1e-12);
        assert!((tr(TS / 2.0, TS).unwrap() - 1.0).abs() < 1e-12);
        assert!((tr(-TS / 8.0, TS).unwrap() - (-0.5)).abs() < 1e-12);
    }

    #[test]
    fn rejects_non_positive_period() {
        assert!(sq(0.0, 0.0).is_err());
        assert!(tr(0.0, -1.0).is_err());
    }

    #[test]
    fn sampled_means_are_zero() {
        for n in [4usize, 8, 64, 1000] {
            let sq_sum: f64 = (0..n).map(|j| sq_phase(j as f64 / n as f64)).sum();
            assert_eq!(sq_sum, 0.0);
            // numerators (4j - n) sum to zero in integers
            let tr_num: i64 = (0..n as i64)
                .map(|j| {
                    if 2 * j <= n as i64 {
                        4 * j - n as i64
                    } else {
                        3 * n as i64 - 4 * j
                    }
                })
                .sum();
            assert_eq!(tr_num, 0);
            let tr_sum: f64 = (0..n).map(|j| tr_phase(j as f64 / n as f64)).sum();
            assert!(tr_sum.abs() < 1e-12 * n as f64);
        }
    }

    #[test]
    fn triangle_is_scaled_integral_of_square() {
        // composite midpoint rule; sq is piecewise constant so each panel is
        // exact except the one straddling T_s/2
        let panels = 200_000;
        let h = TS / panels as f64;
        let mut integral = 0.0;
        for j in 0..panels {
            let t_end = (j + 1) as f64 * h;
            integral += sq((j as f64 + 0.5) * h, TS).unwrap() * h;
            if j % 9_973 == 0 || j + 1 == panels {
                let expected = 4.0 / TS * integral - 1.0;
                let got = tr(t_end, TS).unwrap();
                assert!(
                    (got - expected).abs() <= 1e-9 * expected.abs().max(1.0),
                    "t={t_end}: {got} vs {expected}"
                );
            }
        }
    }

    #[test]
    fn gate_examples() {
        let mut p = EqualizerParams {
            dead_time: 0.0,
            ..Default::default()
        };
        assert_eq!(gate_state(0.3 * TS, 0.0, &p), SwitchCommand::TopOn);
        assert_eq!(gate_state(0.6 * TS, 0.0, &p), SwitchCommand::BottomOn);
        p.dead_time = 120e-9;
        assert_eq!(gate_state(TS / 2.0 + 10e-9, 0.0, &p), SwitchCommand::BothOff);
        assert_eq!(gate_state(TS / 2.0 + 130e-9, 0.0, &p), SwitchCommand::BottomOn);
        // charging leg lags by δ·T_s
        assert_eq!(gate_state(0.1 * TS, -0.125, &p), SwitchCommand::BottomOn);
        assert_eq!(gate_state(0.2 * TS, -0.125, &p), SwitchCommand::TopOn);
        assert_eq!(gate_state_for_role(0.3 * TS, Role::Idle, &p), SwitchCommand::BothOff);
    }

    fn blanked_fraction(p: &EqualizerParams, delta_k: f64, samples: usize) -> f64 {
        let ts = p.period();
        let off = (0..samples)
            .filter(|&j| {
                let t = (j as f64 + 0.5) / samples as f64 * ts;
                gate_state(t, delta_k, p) == SwitchCommand::BothOff
            })
            .count();
        off as f64 / samples as f64
    }

    #[test]
    fn no_blanking_without_dead_time() {
        let p = EqualizerParams {
            dead_time: 0.0,
            ..Default::default()
        };
        assert_eq!(blanked_fraction(&p, 0.0, 10_000), 0.0);
        assert_eq!(blanked_fraction(&p, -0.125, 10_000), 0.0);
    }

    proptest! {
        #[test]
        fn blanking_measure_is_twice_dead_time(
            dead_ns in 1.0f64..2000.0,
            delta_k in -0.24f64..0.0,
        ) {
            let p = EqualizerParams { dead_time: dead_ns * 1e-9, ..Default::default() };
            let samples = 200_000;
            let frac = blanked_fraction(&p, delta_k, samples);
            let expected = 2.0 * p.dead_time / p.period();
            // one sample of slack per edge
            prop_assert!((frac - expected).abs() <= 2.0 / samples as f64 + 1e-12);
        }

        #[test]
        fn carriers_are_periodic(t in -1e-3f64..1e-3, k in -50i64..50) {
            let shifted = t + k as f64 * TS;
            let ct = CycleTime::from_seconds(t, TS);
            let cs = CycleTime::from_seconds(shifted, TS);
            prop_assert!((ct.phase - cs.phase).abs() < 1e-6 || (ct.phase - cs.phase).abs() > 1.0 - 1e-6);
            prop_assert!((tr(t, TS).unwrap() - tr(shifted, TS).unwrap()).abs() < 1e-5);
        }
    }
}
