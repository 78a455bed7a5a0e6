//! Surrogate two-circuit thermal plant and the load scenarios that drive it.
//!
//! The control circuit (temperature `t_t`) receives the load heat and loses
//! heat to ambient and to cooling water drawn from the circulation circuit
//! (temperature `t_z`) through a valve. The circulation circuit is pulled
//! towards its supply temperature by a chiller. The valve follows the
//! 0..10 V command through a first-order lag, and the command reaches the
//! valve after a transport delay.

use std::collections::VecDeque;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Simulation sanity envelope for both temperatures, kelvin.
pub const TEMP_ENVELOPE: (f64, f64) = (250.0, 400.0);

/// Static-test setpoint, kelvin.
pub const STATIC_SETPOINT: f64 = 298.15;
/// Static-test circulation supply temperature, kelvin.
pub const STATIC_SUPPLY: f64 = 292.65;
pub const CYCLE_SECONDS: f64 = 2000.0;
pub const HIGH_LOAD_KW: f64 = 4.0;
pub const LOW_LOAD_KW: f64 = 2.0;
pub const HIGH_LOAD_FRACTION: f64 = 0.7;

/// Setpoints of the random suite, kelvin.
pub const RANDOM_SETPOINTS: [f64; 5] = [295.15, 296.15, 297.15, 298.15, 299.15];
pub const RANDOM_LOAD_KW: (f64, f64) = (2.0, 4.0);
pub const RANDOM_SEGMENT_S: (f64, f64) = (600.0, 1600.0);
pub const RANDOM_SUPPLY_K: (f64, f64) = (292.15, 293.15);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlantParams {
    /// Heat capacity of the control circuit, J/K.
    pub c_t: f64,
    /// Heat capacity of the circulation circuit, J/K.
    pub c_z: f64,
    /// Cooling-water mass flow at a fully open valve, kg/s.
    pub q_max: f64,
    /// Specific heat of water, J/(kg K).
    pub cp: f64,
    /// Ambient loss coefficient, W/K.
    pub k_amb: f64,
    /// Ambient temperature, K.
    pub t_ambient: f64,
    /// Chiller heat-removal coefficient, W/K.
    pub chiller_gain: f64,
    /// Valve actuator time constant, s.
    pub valve_tau: f64,
    /// Transport delay between command and valve, s.
    pub dead_time: f64,
    /// Half-width of uniform multiplicative load noise (0.02 = +-2%).
    pub load_noise: f64,
}

impl Default for PlantParams {
    fn default() -> Self {
        Self {
            c_t: 2.0e4,
            c_z: 5.0e5,
            q_max: 0.8,
            cp: 4186.0,
            k_amb: 20.0,
            t_ambient: 295.15,
            chiller_gain: 1.0e4,
            valve_tau: 5.0,
            dead_time: 5.0,
            load_noise: 0.0,
        }
    }
}

impl PlantParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("c_t", self.c_t),
            ("c_z", self.c_z),
            ("q_max", self.q_max),
            ("cp", self.cp),
            ("k_amb", self.k_amb),
            ("chiller_gain", self.chiller_gain),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::param(format!(
                    "plant parameter {name} must be > 0, got {v}"
                )));
            }
        }
        for (name, v) in [
            ("valve_tau", self.valve_tau),
            ("dead_time", self.dead_time),
            ("load_noise", self.load_noise),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::param(format!(
                    "plant parameter {name} must be >= 0, got {v}"
                )));
            }
        }
        if !self.t_ambient.is_finite() {
            return Err(Error::param("t_ambient must be finite"));
        }
        Ok(())
    }

    /// Heat-transfer coefficient of the fully open valve, W/K.
    pub fn flow_coeff(&self) -> f64 {
        self.q_max * self.cp
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantState {
    pub t_t: f64,
    pub t_z: f64,
    pub valve_pos: f64,
}

impl PlantState {
    /// Steady operating point holding `t_t` at `setpoint`. The valve is
    /// clamped to [0, 1] when the load cannot be balanced exactly.
    pub fn steady(params: &PlantParams, setpoint: f64, load_w: f64, t_z_supply: f64) -> Self {
        let removed = load_w + params.k_amb * (params.t_ambient - setpoint);
        let t_z = t_z_supply + removed / params.chiller_gain;
        let gap = setpoint - t_z;
        let valve_pos = if removed <= 0.0 || gap <= 0.0 {
            if removed <= 0.0 {
                0.0
            } else {
                1.0
            }
        } else {
            (removed / (params.flow_coeff() * gap)).clamp(0.0, 1.0)
        };
        Self {
            t_t: setpoint,
            t_z,
            valve_pos,
        }
    }

    pub fn in_envelope(&self) -> bool {
        let (lo, hi) = TEMP_ENVELOPE;
        (lo..=hi).contains(&self.t_t) && (lo..=hi).contains(&self.t_z)
    }
}

/// The three heat flows into the control circuit at the current state, W.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlFluxes {
    pub load: f64,
    pub cooling: f64,
    pub ambient: f64,
}

impl ControlFluxes {
    pub fn total(&self) -> f64 {
        self.load + self.cooling + self.ambient
    }
}

pub fn control_fluxes(state: &PlantState, params: &PlantParams, load_w: f64) -> ControlFluxes {
    ControlFluxes {
        load: load_w,
        cooling: state.valve_pos * params.flow_coeff() * (state.t_z - state.t_t),
        ambient: params.k_amb * (params.t_ambient - state.t_t),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepResult {
    pub state: PlantState,
    /// Set when a temperature left the sanity envelope and was clipped.
    pub envelope_hit: bool,
}

/// One explicit-Euler step of the plant with valve command `u` in volts.
pub fn plant_step(
    state: &PlantState,
    params: &PlantParams,
    u: f64,
    load_w: f64,
    t_z_supply: f64,
    dt: f64,
) -> Result<StepResult> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::param(format!("plant dt must be > 0, got {dt}")));
    }
    if !(u.is_finite() && load_w.is_finite() && t_z_supply.is_finite()) {
        return Err(Error::param("plant inputs must be finite"));
    }
    let target = (u / 10.0).clamp(0.0, 1.0);
    let valve_pos = if params.valve_tau > 0.0 {
        let alpha = (dt / params.valve_tau).min(1.0);
        (state.valve_pos + alpha * (target - state.valve_pos)).clamp(0.0, 1.0)
    } else {
        target
    };
    let flux = control_fluxes(state, params, load_w);
    let exchange = state.valve_pos * params.flow_coeff() * (state.t_t - state.t_z);
    let chiller = params.chiller_gain * (t_z_supply - state.t_z);
    let mut t_t = state.t_t + dt * flux.total() / params.c_t;
    let mut t_z = state.t_z + dt * (chiller + exchange) / params.c_z;
    let (lo, hi) = TEMP_ENVELOPE;
    let envelope_hit = !(lo..=hi).contains(&t_t)
        || !(lo..=hi).contains(&t_z)
        || !t_t.is_finite()
        || !t_z.is_finite();
    if envelope_hit {
        t_t = if t_t.is_nan() { hi } else { t_t.clamp(lo, hi) };
        t_z = if t_z.is_nan() { hi } else { t_z.clamp(lo, hi) };
    }
    Ok(StepResult {
        state: PlantState {
            t_t,
            t_z,
            valve_pos,
        },
        envelope_hit,
    })
}

/// Fixed-length FIFO modelling the command transport delay.
#[derive(Debug, Clone)]
pub struct CommandDelay {
    buf: VecDeque<f64>,
}

impl CommandDelay {
    pub fn new(dead_time: f64, dt: f64, initial: f64) -> Self {
        let n = if dt > 0.0 {
            (dead_time / dt).round().max(0.0) as usize
        } else {
            0
        };
        Self {
            buf: std::iter::repeat_n(initial, n).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    /// Pushes the newest command and returns the one now reaching the valve.
    pub fn push(&mut self, u: f64) -> f64 {
        if self.buf.is_empty() {
            return u;
        }
        self.buf.push_back(u);
        self.buf.pop_front().expect("non-empty delay line")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Segment {
    pub t_from: f64,
    pub load_kw: f64,
    pub setpoint: f64,
    pub t_z_supply: f64,
}

impl Segment {
    pub fn load_w(&self) -> f64 {
        self.load_kw * 1000.0
    }
}

/// Timed sequence of operating conditions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub duration: f64,
    #[serde(default)]
    pub seed: u64,
    pub segments: Vec<Segment>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioKind {
    Static,
    Random,
}

impl Scenario {
    pub fn new(duration: f64, seed: u64, segments: Vec<Segment>) -> Result<Self> {
        let s = Self {
            duration,
            seed,
            segments,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(Error::Scenario(format!(
                "duration must be > 0, got {}",
                self.duration
            )));
        }
        let first = self
            .segments
            .first()
            .ok_or_else(|| Error::Scenario("scenario has no segments".into()))?;
        if first.t_from != 0.0 {
            return Err(Error::Scenario(format!(
                "first segment must start at 0, got {}",
                first.t_from
            )));
        }
        for w in self.segments.windows(2) {
            if w[1].t_from.is_nan() || w[1].t_from <= w[0].t_from {
                return Err(Error::Scenario(format!(
                    "segments must be strictly increasing in t_from ({} then {})",
                    w[0].t_from, w[1].t_from
                )));
            }
        }
        for s in &self.segments {
            if s.t_from >= self.duration {
                return Err(Error::Scenario(format!(
                    "segment at {} starts after the duration",
                    s.t_from
                )));
            }
            if !(s.load_kw >= 0.0 && s.load_kw.is_finite()) {
                return Err(Error::Scenario(format!(
                    "load must be >= 0 kW, got {}",
                    s.load_kw
                )));
            }
            if !(s.setpoint.is_finite() && s.t_z_supply.is_finite()) {
                return Err(Error::Scenario("temperatures must be finite".into()));
            }
        }
        Ok(())
    }

    /// End time of segment `i`.
    pub fn segment_end(&self, i: usize) -> f64 {
        self.segments.get(i + 1).map_or(self.duration, |s| s.t_from)
    }

    pub fn segment_index_at(&self, t: f64) -> usize {
        self.segments
            .partition_point(|s| s.t_from <= t)
            .saturating_sub(1)
    }

    pub fn at(&self, t: f64) -> &Segment {
        &self.segments[self.segment_index_at(t)]
    }

    /// `cycles` 2000 s cycles at the static setpoint, high load first.
    pub fn static_cycles(cycles: usize) -> Result<Self> {
        if cycles == 0 {
            return Err(Error::Scenario(
                "static scenario needs at least one cycle".into(),
            ));
        }
        let high = CYCLE_SECONDS * HIGH_LOAD_FRACTION;
        let mut segments = Vec::with_capacity(2 * cycles);
        for c in 0..cycles {
            let t0 = c as f64 * CYCLE_SECONDS;
            for (t_from, load_kw) in [(t0, HIGH_LOAD_KW), (t0 + high, LOW_LOAD_KW)] {
                segments.push(Segment {
                    t_from,
                    load_kw,
                    setpoint: STATIC_SETPOINT,
                    t_z_supply: STATIC_SUPPLY,
                });
            }
        }
        Self::new(cycles as f64 * CYCLE_SECONDS, 0, segments)
    }

    /// Random loads, durations, supply temperatures and setpoints.
    pub fn random(duration: f64, seed: u64) -> Result<Self> {
        Self::random_with(duration, seed, None)
    }

    /// Random loads, durations and supply temperatures at one fixed setpoint.
    pub fn random_at_setpoint(setpoint: f64, duration: f64, seed: u64) -> Result<Self> {
        Self::random_with(duration, seed, Some(setpoint))
    }

    fn random_with(duration: f64, seed: u64, setpoint: Option<f64>) -> Result<Self> {
        use rand::SeedableRng;
        if !(duration > 0.0 && duration.is_finite()) {
            return Err(Error::Scenario(format!(
                "duration must be > 0, got {duration}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut segments = Vec::new();
        let mut t = 0.0;
        while t < duration {
            let len = rng.random_range(RANDOM_SEGMENT_S.0..=RANDOM_SEGMENT_S.1);
            let load_kw = rng.random_range(RANDOM_LOAD_KW.0..=RANDOM_LOAD_KW.1);
            let t_z_supply = rng.random_range(RANDOM_SUPPLY_K.0..=RANDOM_SUPPLY_K.1);
            let sp = match setpoint {
                Some(s) => s,
                None => RANDOM_SETPOINTS[rng.random_range(0..RANDOM_SETPOINTS.len())],
            };
            segments.push(Segment {
                t_from: t,
                load_kw,
                setpoint: sp,
                t_z_supply,
            });
            t += len;
        }
        Self::new(duration, seed, segments)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let s: Scenario = toml::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }
}

/// Default random-suite length, seconds.
pub const RANDOM_DURATION: f64 = 8000.0;
/// Default number of static cycles per episode.
pub const STATIC_CYCLES: usize = 2;

pub fn standard_scenario(kind: ScenarioKind, seed: u64) -> Result<Scenario> {
    match kind {
        ScenarioKind::Static => Scenario::static_cycles(STATIC_CYCLES),
        ScenarioKind::Random => Scenario::random(RANDOM_DURATION, seed),
    }
}
