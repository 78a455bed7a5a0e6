//! Players, utilities, and the barrier that keeps gains inside their action set.
//!
//! Utilities are evaluated once per finished event. Every player sees the same
//! event metrics; they differ only in their weights and in the barrier on their
//! own gain. That shared structure is what the numerical condition checks in
//! this module verify.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::map::PerformanceMap;

/// Closed interval of admissible values for one gain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionBounds {
    pub min: f64,
    pub max: f64,
}

impl ActionBounds {
    pub fn new(min: f64, max: f64) -> Result<Self> {
        if !(min.is_finite() && max.is_finite() && min < max) {
            return Err(Error::InvalidBounds { min, max });
        }
        Ok(Self { min, max })
    }

    pub fn validate(&self) -> Result<()> {
        Self::new(self.min, self.max).map(|_| ())
    }

    pub fn width(&self) -> f64 {
        self.max - self.min
    }

    pub fn clip(&self, value: f64) -> f64 {
        value.clamp(self.min, self.max)
    }

    pub fn contains(&self, value: f64) -> bool {
        (self.min..=self.max).contains(&value)
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.min + self.max)
    }

    /// True when `self` lies inside `outer`.
    pub fn is_within(&self, outer: &ActionBounds) -> bool {
        self.min >= outer.min && self.max <= outer.max
    }
}

/// Which PID gain a player controls.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlayerId {
    Kp,
    Ki,
    Kd,
}

impl PlayerId {
    pub fn as_str(&self) -> &'static str {
        match self {
            PlayerId::Kp => "kp",
            PlayerId::Ki => "ki",
            PlayerId::Kd => "kd",
        }
    }
}

impl std::fmt::Display for PlayerId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for PlayerId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "kp" | "p" => Ok(PlayerId::Kp),
            "ki" | "i" => Ok(PlayerId::Ki),
            "kd" | "d" => Ok(PlayerId::Kd),
            other => Err(Error::param(format!("unknown player id {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum UtilityVariant {
    /// Settling ratio scaled by the inverse peak deviation.
    Type1,
    /// Settling ratio and inverse peak deviation as independent terms.
    #[default]
    Type2,
}

impl std::str::FromStr for UtilityVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "type1" | "1" => Ok(UtilityVariant::Type1),
            "type2" | "2" => Ok(UtilityVariant::Type2),
            other => Err(Error::param(format!("unknown utility variant {other:?}"))),
        }
    }
}

/// Default denominator smoothing for the settling ratio.
pub const DEFAULT_GAMMA: f64 = 1.0;

fn default_gamma() -> f64 {
    DEFAULT_GAMMA
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UtilityParams {
    pub alpha_x: f64,
    pub alpha_y: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default)]
    pub variant: UtilityVariant,
}

impl UtilityParams {
    pub fn new(alpha_x: f64, alpha_y: f64, variant: UtilityVariant) -> Self {
        Self {
            alpha_x,
            alpha_y,
            gamma: DEFAULT_GAMMA,
            variant,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_x >= 0.0 && self.alpha_x.is_finite()) {
            return Err(Error::param(format!(
                "alpha_x must be >= 0, got {}",
                self.alpha_x
            )));
        }
        if !(self.alpha_y >= 0.0 && self.alpha_y.is_finite()) {
            return Err(Error::param(format!(
                "alpha_y must be >= 0, got {}",
                self.alpha_y
            )));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::param(format!(
                "gamma must be > 0, got {}",
                self.gamma
            )));
        }
        Ok(())
    }

    /// Overall scale of the metric part, used to normalise utilities of
    /// players whose weights differ by a positive factor.
    pub fn metric_scale(&self) -> f64 {
        let s = self.alpha_x + self.alpha_y;
        if s > 0.0 {
            s
        } else {
            1.0
        }
    }
}

/// One gain-player of the game.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Player {
    pub id: PlayerId,
    pub bounds: ActionBounds,
    pub barrier_coeff: f64,
    pub utility: UtilityParams,
}

impl Player {
    pub fn validate(&self) -> Result<()> {
        self.bounds.validate()?;
        if !(self.barrier_coeff > 0.0 && self.barrier_coeff.is_finite()) {
            return Err(Error::param(format!(
                "barrier coefficient of player {} must be > 0, got {}",
                self.id, self.barrier_coeff
            )));
        }
        self.utility.validate()
    }

    pub fn barrier(&self, action: f64) -> f64 {
        barrier(action, &self.bounds, self.barrier_coeff)
    }
}

/// Performance figures of one closed event.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventMetrics {
    /// Trigger-to-reset duration in seconds.
    pub settling_time: f64,
    /// Largest absolute deviation during the event, kelvin.
    pub peak_deviation: f64,
    /// Sum of |s1| over the event's samples.
    pub state1_l1: f64,
    /// Sum of |s2| over the event's samples.
    pub state2_l1: f64,
}

/// Piecewise-linear barrier: zero inside the bounds, growing with slope
/// `coeff` outside.
pub fn barrier(action: f64, bounds: &ActionBounds, coeff: f64) -> f64 {
    if action <= bounds.min {
        -coeff * (action - bounds.min)
    } else if action >= bounds.max {
        coeff * (action - bounds.max)
    } else {
        0.0
    }
}

/// The metric-dependent part of the utility, without the barrier.
pub fn metric_utility(metrics: &EventMetrics, params: &UtilityParams) -> Result<f64> {
    if metrics.peak_deviation.is_nan() || metrics.peak_deviation <= 0.0 {
        return Err(Error::InconsistentMetrics(metrics.peak_deviation));
    }
    let ratio = metrics.settling_time / (metrics.state1_l1 + metrics.state2_l1 + params.gamma);
    let inv_peak = 1.0 / metrics.peak_deviation;
    Ok(match params.variant {
        UtilityVariant::Type1 => params.alpha_x * ratio * inv_peak + params.alpha_y * inv_peak,
        UtilityVariant::Type2 => params.alpha_x * ratio + params.alpha_y * inv_peak,
    })
}

/// Utility of `player` having played `action` during an event with `metrics`.
pub fn utility(
    metrics: &EventMetrics,
    action: f64,
    player: &Player,
    params: &UtilityParams,
) -> Result<f64> {
    Ok(metric_utility(metrics, params)? - player.barrier(action))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BarrierCheck {
    pub ok: bool,
    pub margin: f64,
    pub max_slope: f64,
}

/// Compares the barrier coefficient against the steepest utility slope the
/// map has observed.
///
/// Initialized supports are ordered by stored action and the absolute secant
/// slope between each consecutive pair is taken; pairs with coincident actions
/// carry no slope information and are skipped.
pub fn validate_barrier_coefficient(player: &Player, map: &PerformanceMap) -> Result<BarrierCheck> {
    let mut pts: Vec<(f64, f64)> = map
        .supports()
        .iter()
        .filter(|s| s.initialized && s.utility.is_finite())
        .map(|s| (s.action, s.utility))
        .collect();
    if pts.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "player {} has {} populated supports, need at least 2",
            player.id,
            pts.len()
        )));
    }
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let max_slope = pts
        .windows(2)
        .filter(|w| (w[1].0 - w[0].0).abs() > 1e-12)
        .map(|w| ((w[1].1 - w[0].1) / (w[1].0 - w[0].0)).abs())
        .fold(None, |acc: Option<f64>, s| {
            Some(acc.map_or(s, |a| a.max(s)))
        })
        .ok_or_else(|| {
            Error::InsufficientData(format!(
                "player {} has no two supports with distinct actions",
                player.id
            ))
        })?;
    let margin = player.barrier_coeff - max_slope;
    Ok(BarrierCheck {
        ok: margin > 0.0,
        margin,
        max_slope,
    })
}

/// Event metrics as a smooth function of the state, with the plant out of
/// the loop. Used to probe the utilities' second derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticMetricModel {
    pub theta_h: f64,
    pub t_w: f64,
    pub sample_dt: f64,
}

impl Default for SyntheticMetricModel {
    fn default() -> Self {
        Self {
            theta_h: 0.5,
            t_w: 30.0,
            sample_dt: 0.1,
        }
    }
}

impl SyntheticMetricModel {
    pub fn metrics(&self, state: &[f64]) -> EventMetrics {
        let s1 = state.first().copied().unwrap_or(0.0).abs();
        let s2 = state.get(1).copied().unwrap_or(0.0).abs();
        let peak = self.theta_h + s1;
        let settling = self.t_w + 10.0 * s1 + 2.0 * s2;
        let samples = settling / self.sample_dt;
        EventMetrics {
            settling_time: settling,
            peak_deviation: peak,
            state1_l1: samples * 0.5 * peak,
            state2_l1: samples * s2,
        }
    }
}

/// A (state, joint action) point at which the conditions are probed.
#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    pub state: Vec<f64>,
    pub actions: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SymmetryCondition {
    /// d2 U_i / (da_j ds_m) = d2 U_j / (da_i ds_n)
    ActionState,
    /// d2 U_i / (ds_n ds_m) = d2 U_j / (ds_m ds_n)
    StateState,
    /// d2 U_i / (da_j da_i) = d2 U_j / (da_i da_j)
    ActionAction,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionResidual {
    pub condition: SymmetryCondition,
    /// Largest |lhs - rhs| on the raw utilities.
    pub raw: f64,
    /// Largest |lhs - rhs| after dividing each utility by its metric scale.
    pub weighted: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HessianReport {
    pub residuals: Vec<ConditionResidual>,
    pub tol: f64,
    pub probes: usize,
}

impl HessianReport {
    /// Pass when every weighted residual is within tolerance.
    pub fn passed(&self) -> bool {
        self.residuals.iter().all(|r| r.weighted <= self.tol)
    }

    pub fn passed_raw(&self) -> bool {
        self.residuals.iter().all(|r| r.raw <= self.tol)
    }

    pub fn get(&self, condition: SymmetryCondition) -> Option<&ConditionResidual> {
        self.residuals.iter().find(|r| r.condition == condition)
    }
}

#[derive(Clone, Copy)]
enum Var {
    Action(usize),
    State(usize),
}

/// Central finite-difference estimates of the mixed second derivatives of
/// the players' utilities, compared pairwise for every player pair and state
/// index pair.
pub fn hessian_symmetry_check(
    players: &[Player],
    model: &SyntheticMetricModel,
    probes: &[Probe],
    step: f64,
    tol: f64,
) -> Result<HessianReport> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::param(format!(
            "finite-difference step must be > 0, got {step}"
        )));
    }
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(Error::param(format!("tolerance must be > 0, got {tol}")));
    }
    if players.is_empty() {
        return Err(Error::param("hessian check needs at least one player"));
    }
    for p in probes {
        if p.actions.len() != players.len() {
            return Err(Error::param(format!(
                "probe has {} actions for {} players",
                p.actions.len(),
                players.len()
            )));
        }
    }

    let eval = |i: usize, state: &[f64], actions: &[f64]| -> Result<f64> {
        let p = &players[i];
        utility(&model.metrics(state), actions[i], p, &p.utility)
    };

    let mixed = |i: usize, probe: &Probe, x: Var, y: Var| -> Result<f64> {
        let mut total = 0.0;
        for (sx, sy, sign) in [
            (1.0, 1.0, 1.0),
            (1.0, -1.0, -1.0),
            (-1.0, 1.0, -1.0),
            (-1.0, -1.0, 1.0),
        ] {
            let mut s = probe.state.clone();
            let mut a = probe.actions.clone();
            for (var, dir) in [(x, sx), (y, sy)] {
                match var {
                    Var::Action(k) => a[k] += dir * step,
                    Var::State(k) => s[k] += dir * step,
                }
            }
            total += sign * eval(i, &s, &a)?;
        }
        Ok(total / (4.0 * step * step))
    };

    let n = players.len();
    let mut out = Vec::new();
    for condition in [
        SymmetryCondition::ActionState,
        SymmetryCondition::StateState,
        SymmetryCondition::ActionAction,
    ] {
        let mut raw: f64 = 0.0;
        let mut weighted: f64 = 0.0;
        for probe in probes {
            let dims = probe.state.len();
            for i in 0..n {
                for j in 0..n {
                    let wi = players[i].utility.metric_scale();
                    let wj = players[j].utility.metric_scale();
                    let pairs: Vec<(Var, Var, Var, Var)> = match condition {
                        SymmetryCondition::ActionState => (0..dims)
                            .flat_map(|m| {
                                (0..dims).map(move |nn| {
                                    (
                                        Var::Action(j),
                                        Var::State(m),
                                        Var::Action(i),
                                        Var::State(nn),
                                    )
                                })
                            })
                            .collect(),
                        SymmetryCondition::StateState => (0..dims)
                            .flat_map(|m| {
                                (0..dims).map(move |nn| {
                                    (Var::State(nn), Var::State(m), Var::State(m), Var::State(nn))
                                })
                            })
                            .collect(),
                        SymmetryCondition::ActionAction => {
                            vec![(
                                Var::Action(j),
                                Var::Action(i),
                                Var::Action(i),
                                Var::Action(j),
                            )]
                        }
                    };
                    for (lx, ly, rx, ry) in pairs {
                        let lhs = mixed(i, probe, lx, ly)?;
                        let rhs = mixed(j, probe, rx, ry)?;
                        raw = raw.max((lhs - rhs).abs());
                        weighted = weighted.max((lhs / wi - rhs / wj).abs());
                    }
                }
            }
        }
        out.push(ConditionResidual {
            condition,
            raw,
            weighted,
        });
    }
    Ok(HessianReport {
        residuals: out,
        tol,
        probes: probes.len(),
    })
}
