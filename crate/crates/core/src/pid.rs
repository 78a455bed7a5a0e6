//! Discrete PID with output clamping and conditional-integration anti-windup.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct PidGains {
    pub kp: f64,
    pub ki: f64,
    #[serde(default)]
    pub kd: f64,
}

impl PidGains {
    pub fn new(kp: f64, ki: f64, kd: f64) -> Self {
        Self { kp, ki, kd }
    }

    pub fn pi(kp: f64, ki: f64) -> Self {
        Self { kp, ki, kd: 0.0 }
    }
}

/// Integrator and derivative memory plus the output limits, in volts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PidState {
    pub integral: f64,
    pub prev_error: f64,
    pub u_min: f64,
    pub u_max: f64,
}

impl PidState {
    pub fn new(u_min: f64, u_max: f64) -> Result<Self> {
        if !(u_min.is_finite() && u_max.is_finite() && u_min < u_max) {
            return Err(Error::param(format!(
                "output limits [{u_min}, {u_max}] invalid"
            )));
        }
        Ok(Self {
            integral: 0.0,
            prev_error: 0.0,
            u_min,
            u_max,
        })
    }

    /// Valve signal range, 0 to 10 V.
    pub fn valve() -> Self {
        Self::new(0.0, 10.0).expect("static limits")
    }

    /// One control step. Returns the clamped output.
    pub fn step(&mut self, gains: &PidGains, error: f64, dt: f64) -> Result<f64> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::param(format!("pid dt must be > 0, got {dt}")));
        }
        let integral = self.integral + error * dt;
        let derivative = (error - self.prev_error) / dt;
        let raw = gains.kp * error + gains.ki * integral + gains.kd * derivative;
        let u = raw.clamp(self.u_min, self.u_max);
        let winding = gains.ki * error;
        let saturated_further =
            (raw > self.u_max && winding > 0.0) || (raw < self.u_min && winding < 0.0);
        if !saturated_further {
            self.integral = integral;
        }
        self.prev_error = error;
        Ok(u)
    }

    pub fn reset(&mut self) {
        self.integral = 0.0;
        self.prev_error = 0.0;
    }

    /// Rescales the integrator so the integral contribution is unchanged
    /// across a switch of `ki`.
    pub fn retune(&mut self, old: &PidGains, new: &PidGains) {
        if new.ki > 0.0 && old.ki != new.ki {
            self.integral *= old.ki / new.ki;
        }
    }

    /// Presets the integrator so that a zero-error step outputs `u`.
    pub fn preload(&mut self, gains: &PidGains, u: f64) {
        self.prev_error = 0.0;
        self.integral = if gains.ki > 0.0 {
            u.clamp(self.u_min, self.u_max) / gains.ki
        } else {
            0.0
        };
    }
}
