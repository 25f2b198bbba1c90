//! Discrete PID flow regulation, ticked once per second.
//!
//! The error is cumulative: grains expected by now at the setpoint rate minus
//! grains counted so far. Positive error means a deficit and drives more
//! feeder on-time. There is no anti-windup; under a permanent deficit the
//! error sum grows without bound and the [`SafetyMonitor`] is what stops the
//! feeder.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PidGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
}

impl Default for PidGains {
    fn default() -> Self {
        PidGains {
            kp: 2.0,
            ki: 0.2,
            kd: 0.1,
        }
    }
}

/// `u_n = kp·e_n + ki·Σe_i + kd·(e_n − e_{n−1})`
#[derive(Debug, Clone, PartialEq)]
pub struct PidController {
    pub gains: PidGains,
    pub error_sum: f64,
    pub prev_error: f64,
    /// Number of completed ticks.
    pub tick: u64,
}

impl PidController {
    pub fn new(gains: PidGains) -> Self {
        PidController {
            gains,
            error_sum: 0.0,
            prev_error: 0.0,
            tick: 0,
        }
    }

    pub fn reset(&mut self) {
        self.error_sum = 0.0;
        self.prev_error = 0.0;
        self.tick = 0;
    }

    /// Advances one tick and returns the raw control value.
    pub fn step(&mut self, error: f64) -> f64 {
        let g = self.gains;
        self.error_sum += error;
        let u = compensated_sum([
            g.kp * error,
            g.ki * self.error_sum,
            g.kd * (error - self.prev_error),
        ]);
        self.prev_error = error;
        self.tick += 1;
        u
    }
}

/// Neumaier-compensated summation, so `2 + 0.2 + 0.1` rounds to `2.3`
/// instead of drifting to `2.3000000000000003`.
fn compensated_sum<const N: usize>(terms: [f64; N]) -> f64 {
    let mut sum = 0.0f64;
    let mut carry = 0.0f64;
    for t in terms {
        let s = sum + t;
        carry += if sum.abs() >= t.abs() { (sum - s) + t } else { (t - s) + sum };
        sum = s;
    }
    sum + carry
}

impl Default for PidController {
    fn default() -> Self {
        PidController::new(PidGains::default())
    }
}

/// Target flow in grains per minute.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowSetpoint {
    rate_per_min: f64,
}

impl FlowSetpoint {
    pub fn new(rate_per_min: f64) -> Result<Self, String> {
        if rate_per_min.is_finite() && rate_per_min > 0.0 {
            Ok(FlowSetpoint { rate_per_min })
        } else {
            Err(format!("setpoint must be a positive rate, got {rate_per_min}"))
        }
    }

    pub fn rate_per_min(&self) -> f64 {
        self.rate_per_min
    }

    /// Grains expected after `elapsed_s` seconds.
    pub fn expected(&self, elapsed_s: f64) -> f64 {
        self.rate_per_min * elapsed_s / 60.0
    }
}

/// Cumulative count error after `elapsed_s` seconds.
pub fn compute_error(setpoint: FlowSetpoint, total_counted: u64, elapsed_s: u64) -> f64 {
    setpoint.expected(elapsed_s as f64) - total_counted as f64
}

/// Fraction of the one-second tick the feeder motor runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActuationCommand {
    on_fraction: f64,
}

impl ActuationCommand {
    pub const OFF: ActuationCommand = ActuationCommand { on_fraction: 0.0 };

    /// Clamps into `[0, 1]`; NaN maps to 0.
    pub fn new(on_fraction: f64) -> Self {
        let f = if on_fraction.is_nan() { 0.0 } else { on_fraction.clamp(0.0, 1.0) };
        ActuationCommand { on_fraction: f }
    }

    pub fn on_fraction(&self) -> f64 {
        self.on_fraction
    }
}

pub const DEFAULT_ACTUATION_SCALE: f64 = 0.01;

pub fn to_actuation(u: f64, scale: f64) -> ActuationCommand {
    ActuationCommand::new(u * scale)
}

/// Latching congestion / empty-hopper detector.
///
/// Trips when, over the last `congestion_window_s` ticks, the mean on-fraction
/// is at least `duty_threshold` and fewer than `min_expected_fraction` of the
/// grains expected in that window were counted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SafetyMonitor {
    pub congestion_window_s: usize,
    pub min_expected_fraction: f64,
    pub duty_threshold: f64,
    tripped: bool,
}

impl Default for SafetyMonitor {
    fn default() -> Self {
        SafetyMonitor {
            congestion_window_s: 10,
            min_expected_fraction: 0.1,
            duty_threshold: 0.5,
            tripped: false,
        }
    }
}

impl SafetyMonitor {
    pub fn new(congestion_window_s: usize) -> Self {
        SafetyMonitor {
            congestion_window_s,
            ..SafetyMonitor::default()
        }
    }

    pub fn tripped(&self) -> bool {
        self.tripped
    }

    pub fn reset(&mut self) {
        self.tripped = false;
    }

    /// `per_second_counts` and `on_fractions` are per-tick histories, oldest
    /// first. Does nothing until a full window of history exists.
    pub fn check(&mut self, per_second_counts: &[u64], on_fractions: &[f64], setpoint: FlowSetpoint) -> bool {
        let w = self.congestion_window_s;
        if self.tripped || w == 0 || per_second_counts.len() < w || on_fractions.len() < w {
            return self.tripped;
        }
        let counts: u64 = per_second_counts[per_second_counts.len() - w..].iter().sum();
        let duty = on_fractions[on_fractions.len() - w..].iter().sum::<f64>() / w as f64;
        let expected = setpoint.expected(w as f64);
        if duty >= self.duty_threshold && (counts as f64) < self.min_expected_fraction * expected {
            self.tripped = true;
        }
        self.tripped
    }

    /// Forces the command to zero once tripped.
    pub fn gate(&self, cmd: ActuationCommand) -> ActuationCommand {
        if self.tripped {
            ActuationCommand::OFF
        } else {
            cmd
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sp(rate: f64) -> FlowSetpoint {
        FlowSetpoint::new(rate).unwrap()
    }

    #[test]
    fn error_examples() {
        assert_eq!(compute_error(sp(60.0), 10, 10), 0.0);
        assert_eq!(compute_error(sp(200.0), 190, 60), 10.0);
        assert_eq!(compute_error(sp(50.0), 243, 300), 7.0);
    }

    #[test]
    fn setpoint_must_be_positive() {
        assert!(FlowSetpoint::new(0.0).is_err());
        assert!(FlowSetpoint::new(-5.0).is_err());
        assert!(FlowSetpoint::new(f64::NAN).is_err());
    }

    #[test]
    fn pid_first_steps() {
        let mut c = PidController::default();
        assert_eq!(c.step(1.0), 2.3);
        assert_eq!(c.step(1.0), 2.4);
        assert_eq!(c.tick, 2);
        assert_eq!(c.error_sum, 2.0);
        c.reset();
        assert_eq!((c.error_sum, c.prev_error, c.tick), (0.0, 0.0, 0));
    }

    #[test]
    fn zero_errors_hold_integral() {
        let mut c = PidController::default();
        for _ in 0..5 {
            assert_eq!(c.step(0.0), 0.0);
        }
        let mut c = PidController::default();
        c.step(3.0);
        let held = c.gains.ki * 3.0;
        c.step(0.0); // derivative kick on the way down
        for _ in 0..5 {
            assert!((c.step(0.0) - held).abs() < 1e-15);
        }
    }

    #[test]
    fn actuation_clamps() {
        assert!((to_actuation(2.3, 0.01).on_fraction() - 0.023).abs() < 1e-15);
        assert_eq!(to_actuation(-5.0, 0.01).on_fraction(), 0.0);
        assert_eq!(to_actuation(500.0, 0.01).on_fraction(), 1.0);
        assert_eq!(to_actuation(f64::NAN, 0.01).on_fraction(), 0.0);
    }

    #[test]
    fn safety_trips_on_jam() {
        let mut m = SafetyMonitor::default();
        assert!(m.check(&[0; 10], &[0.8; 10], sp(200.0)));
        assert_eq!(m.gate(ActuationCommand::new(0.7)), ActuationCommand::OFF);
        // Latching: good data afterwards does not clear it.
        assert!(m.check(&[100; 10], &[0.1; 10], sp(200.0)));
        m.reset();
        assert!(!m.tripped());
    }

    #[test]
    fn safety_quiet_when_on_target() {
        let mut m = SafetyMonitor::default();
        assert!(!m.check(&[3, 4, 3, 3, 4, 3, 3, 4, 3, 3], &[0.09; 10], sp(200.0)));
    }

    #[test]
    fn safety_quiet_when_idle() {
        let mut m = SafetyMonitor::default();
        assert!(!m.check(&[0; 10], &[0.0; 10], sp(200.0)));
    }

    #[test]
    fn safety_needs_full_window() {
        let mut m = SafetyMonitor::default();
        assert!(!m.check(&[0; 9], &[1.0; 9], sp(200.0)));
        // Only the most recent window counts.
        let mut counts = vec![50u64; 5];
        counts.extend([0; 10]);
        let mut duty = vec![0.0; 5];
        duty.extend([0.9; 10]);
        assert!(m.check(&counts, &duty, sp(200.0)));
    }
}
