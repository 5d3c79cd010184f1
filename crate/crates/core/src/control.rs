//! Valve PID loops, occupancy setpoints and Peltier power tracking.

use serde::{Deserialize, Serialize};

use crate::model::PeltierUnit;
use crate::scenario::OccupancyWindow;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PidConfig {
    /// Proportional gain [1/K].
    pub kp: f64,
    /// Integral gain [1/(K·s)].
    pub ki: f64,
    /// Derivative gain [s/K].
    pub kd: f64,
    /// [s]
    pub sample_time: f64,
    pub u_min: f64,
    pub u_max: f64,
    /// Conditional integration while the output is saturated.
    pub anti_windup: bool,
}

impl Default for PidConfig {
    fn default() -> Self {
        Self {
            kp: 0.5,
            ki: 0.5 / 600.0,
            kd: 0.0,
            sample_time: 10.0,
            u_min: 0.0,
            u_max: 1.0,
            anti_windup: true,
        }
    }
}

impl PidConfig {
    /// Gains for a plant whose temperature differences are `temp` times and
    /// whose clock is `time` times those of the original, giving the same
    /// valve trajectory on the scaled clock.
    pub fn time_scaled(&self, temp: f64, time: f64) -> Self {
        Self {
            kp: self.kp / temp,
            ki: self.ki / (temp * time),
            kd: self.kd * time / temp,
            sample_time: self.sample_time * time,
            ..*self
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PidState {
    pub integral: f64,
    pub prev_measurement: Option<f64>,
}

/// One positional PID update with derivative on measurement.
///
/// The integral only advances when doing so does not push a saturated output
/// further past its limit.
pub fn pid_step(
    config: &PidConfig,
    state: PidState,
    setpoint: f64,
    measurement: f64,
    dt: f64,
) -> (f64, PidState) {
    let e = setpoint - measurement;
    let p = config.kp * e;
    let d = match state.prev_measurement {
        Some(prev) if dt > 0.0 => -config.kd * (measurement - prev) / dt,
        _ => 0.0,
    };
    let candidate = state.integral + config.ki * e * dt;
    let raw = p + candidate + d;
    let winding = (raw > config.u_max && e > 0.0) || (raw < config.u_min && e < 0.0);
    let integral = if config.anti_windup && winding {
        state.integral
    } else {
        candidate
    };
    let u = (p + integral + d).clamp(config.u_min, config.u_max);
    (
        u,
        PidState {
            integral,
            prev_measurement: Some(measurement),
        },
    )
}

/// Active setpoint at `t`: the heating value inside a window (start inclusive,
/// end exclusive), otherwise the cooling value of the last window that closed.
pub fn setpoint_at(windows: &[OccupancyWindow], t: f64, default_cooling: f64) -> (f64, bool) {
    let mut cooling = windows.first().map_or(default_cooling, |w| w.cooling_setpoint);
    for w in windows {
        if t < w.start {
            break;
        }
        if t < w.end {
            return (w.heating_setpoint, true);
        }
        cooling = w.cooling_setpoint;
    }
    (cooling, false)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeltierCommand {
    /// Power applied over the next interval [W].
    pub applied: f64,
    /// The requested setpoint fell outside `[0, max_power]`.
    pub clamped: bool,
}

/// Advance the Peltier power towards `power_setpoint` over `dt`.
///
/// The built-in loop tracks the clamped setpoint with a first-order lag; the
/// update uses its exact discrete form so any step size stays stable.
pub fn peltier_tracking_step(
    unit: &PeltierUnit,
    current: f64,
    power_setpoint: f64,
    dt: f64,
) -> PeltierCommand {
    let target = power_setpoint.clamp(0.0, unit.max_power);
    let clamped = target != power_setpoint;
    if clamped {
        log::debug!(
            "peltier setpoint {power_setpoint:.3} W clamped to {target:.3} W (max {:.1} W)",
            unit.max_power
        );
    }
    let applied = if unit.time_constant > 0.0 {
        target + (current - target) * (-dt / unit.time_constant).exp()
    } else {
        target
    };
    PeltierCommand { applied, clamped }
}

/// Ultimate gain and period from a relay experiment:
/// `K_u = 4d/(π a)` for relay amplitude `d` and oscillation amplitude `a`.
pub fn relay_ultimate(relay_amplitude: f64, oscillation_amplitude: f64, period: f64) -> (f64, f64) {
    (
        4.0 * relay_amplitude / (std::f64::consts::PI * oscillation_amplitude),
        period,
    )
}

/// Conservative PI gains from the ultimate point (Tyreus-Luyben rule).
pub fn pi_from_ultimate(ku: f64, pu: f64, base: &PidConfig) -> PidConfig {
    let kp = ku / 3.2;
    let ti = 2.2 * pu;
    PidConfig {
        kp,
        ki: kp / ti,
        kd: 0.0,
        ..*base
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn window(start: f64, end: f64) -> OccupancyWindow {
        OccupancyWindow {
            start,
            end,
            heating_setpoint: 20.0,
            cooling_setpoint: 15.0,
        }
    }

    #[test]
    fn setpoint_is_right_continuous_at_window_edges() {
        let w = [window(10.0, 20.0)];
        assert_eq!(setpoint_at(&w, 9.999, 0.0), (15.0, false));
        assert_eq!(setpoint_at(&w, 10.0, 0.0), (20.0, true));
        assert_eq!(setpoint_at(&w, 20.0, 0.0), (15.0, false));
        assert_eq!(setpoint_at(&[], 5.0, 3.0), (3.0, false));
    }

    #[test]
    fn zero_error_holds_output_after_settling() {
        let cfg = PidConfig {
            kp: 2.0,
            ki: 0.1,
            kd: 1.0,
            ..PidConfig::default()
        };
        let state = PidState {
            integral: 0.4,
            prev_measurement: Some(20.0),
        };
        let (u, next) = pid_step(&cfg, state, 20.0, 20.0, 10.0);
        assert!((u - 0.4).abs() < 1e-15);
        assert_eq!(next.integral, 0.4);
    }

    #[test]
    fn peltier_tracks_and_clamps() {
        let unit = PeltierUnit {
            max_power: 40.0,
            time_constant: 0.0,
        };
        let c = peltier_tracking_step(&unit, 0.0, 55.0, 1.0);
        assert_eq!(c.applied, 40.0);
        assert!(c.clamped);
        let c = peltier_tracking_step(&unit, 0.0, -3.0, 1.0);
        assert_eq!(c.applied, 0.0);
        let lag = PeltierUnit {
            max_power: 40.0,
            time_constant: 5.0,
        };
        let c = peltier_tracking_step(&lag, 0.0, 10.0, 5.0);
        assert!((c.applied - 10.0 * (1.0 - (-1.0f64).exp())).abs() < 1e-12);
    }

    #[test]
    fn relay_formula() {
        let (ku, pu) = relay_ultimate(0.5, 0.25, 120.0);
        assert!((ku - 8.0 / std::f64::consts::PI).abs() < 1e-12);
        assert_eq!(pu, 120.0);
    }

    proptest! {
        #[test]
        fn output_stays_in_range(
            errs in proptest::collection::vec(-50.0f64..50.0, 1..200),
            kp in 0.0f64..10.0, ki in 0.0f64..1.0, kd in 0.0f64..10.0,
        ) {
            let cfg = PidConfig { kp, ki, kd, ..PidConfig::default() };
            let mut st = PidState::default();
            for e in errs {
                let (u, next) = pid_step(&cfg, st, 20.0, 20.0 - e, 10.0);
                prop_assert!((cfg.u_min..=cfg.u_max).contains(&u));
                st = next;
            }
        }

        #[test]
        fn integrator_bounded_under_bounded_error(
            errs in proptest::collection::vec(-5.0f64..5.0, 1..500),
            kp in 0.01f64..5.0, ki in 1e-4f64..0.1,
        ) {
            let cfg = PidConfig { kp, ki, kd: 0.0, ..PidConfig::default() };
            let dt = cfg.sample_time;
            let mut st = PidState::default();
            let bound = cfg.u_max.abs() + cfg.u_min.abs() + kp * 5.0 + ki * 5.0 * dt;
            for e in errs {
                let (_, next) = pid_step(&cfg, st, 0.0, -e, dt);
                prop_assert!(next.integral.abs() <= bound);
                st = next;
            }
        }

        #[test]
        fn twin_gains_reproduce_valve_trajectory(
            errs in proptest::collection::vec(-3.0f64..3.0, 1..100),
            kt in 0.2f64..2.0, r in 0.1f64..5.0,
        ) {
            let cfg = PidConfig { kp: 0.8, ki: 0.004, kd: 2.0, ..PidConfig::default() };
            let twin = cfg.time_scaled(kt, r);
            let (mut a, mut b) = (PidState::default(), PidState::default());
            for e in errs {
                let (ua, na) = pid_step(&cfg, a, 0.0, -e, cfg.sample_time);
                let (ub, nb) = pid_step(&twin, b, 0.0, -e * kt, twin.sample_time);
                prop_assert!((ua - ub).abs() < 1e-9);
                a = na;
                b = nb;
            }
        }
    }
}
