//! Performance maps: per-player grids of support vectors over the state space.
//!
//! Each support stores the best known action for its region of the state
//! space together with the utility that action earned. Queries blend the
//! initialized supports with inverse squared-distance weights computed on
//! per-dimension normalized coordinates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::ActionBounds;

/// Default interpolation smoothing.
pub const DEFAULT_GAMMA_MAP: f64 = 0.01;
/// Default grid nodes per state dimension.
pub const DEFAULT_RESOLUTION: usize = 4;

const COINCIDENT: f64 = 1e-12;
const DEGENERATE_STEP: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Support {
    pub action: f64,
    /// Best utility seen at this support; `-inf` until first written.
    pub utility: f64,
    /// Set once a learning update has written this support.
    pub initialized: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerformanceMap {
    ranges: Vec<(f64, f64)>,
    resolution: Vec<usize>,
    bounds: ActionBounds,
    gamma_map: f64,
    supports: Vec<Support>,
}

/// Exploration noise schedule used during training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Exploration {
    /// Initial half-width as a fraction of the action range.
    pub eps0: f64,
    /// Per-episode multiplicative decay.
    pub decay: f64,
}

impl Default for Exploration {
    fn default() -> Self {
        Self {
            eps0: 0.5,
            decay: 0.95,
        }
    }
}

impl Exploration {
    pub fn off() -> Self {
        Self {
            eps0: 0.0,
            decay: 0.0,
        }
    }

    pub fn half_width(&self, bounds: &ActionBounds, episode: usize) -> f64 {
        let exp = i32::try_from(episode).unwrap_or(i32::MAX);
        (self.eps0 * self.decay.powi(exp) * bounds.width()).max(0.0)
    }
}

impl PerformanceMap {
    /// Uniform grid over `ranges`, with random prior actions drawn from `bounds`.
    pub fn new(
        ranges: &[(f64, f64)],
        resolution: &[usize],
        bounds: ActionBounds,
        gamma_map: f64,
        seed: u64,
    ) -> Result<Self> {
        let mut map = Self::blank(ranges, resolution, bounds, gamma_map)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for s in &mut map.supports {
            s.action = rng.random_range(bounds.min..=bounds.max);
        }
        Ok(map)
    }

    /// Grid with every prior action at the bounds midpoint.
    pub fn blank(
        ranges: &[(f64, f64)],
        resolution: &[usize],
        bounds: ActionBounds,
        gamma_map: f64,
    ) -> Result<Self> {
        bounds.validate()?;
        if ranges.is_empty() || ranges.len() != resolution.len() {
            return Err(Error::param(format!(
                "map needs one resolution per state dimension ({} ranges, {} resolutions)",
                ranges.len(),
                resolution.len()
            )));
        }
        for &(lo, hi) in ranges {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::param(format!("degenerate state range [{lo}, {hi}]")));
            }
        }
        if let Some(r) = resolution.iter().find(|&&r| r < 2) {
            return Err(Error::param(format!(
                "map resolution must be >= 2, got {r}"
            )));
        }
        if !(gamma_map >= 0.0 && gamma_map.is_finite()) {
            return Err(Error::param(format!(
                "gamma_map must be >= 0, got {gamma_map}"
            )));
        }
        let count = resolution.iter().product();
        Ok(Self {
            ranges: ranges.to_vec(),
            resolution: resolution.to_vec(),
            bounds,
            gamma_map,
            supports: vec![
                Support {
                    action: bounds.midpoint(),
                    utility: f64::NEG_INFINITY,
                    initialized: false,
                };
                count
            ],
        })
    }

    pub fn dims(&self) -> usize {
        self.ranges.len()
    }

    pub fn ranges(&self) -> &[(f64, f64)] {
        &self.ranges
    }

    pub fn resolution(&self) -> &[usize] {
        &self.resolution
    }

    pub fn bounds(&self) -> ActionBounds {
        self.bounds
    }

    pub fn gamma_map(&self) -> f64 {
        self.gamma_map
    }

    pub fn supports(&self) -> &[Support] {
        &self.supports
    }

    pub fn support(&self, index: usize) -> Option<&Support> {
        self.supports.get(index)
    }

    pub fn initialized_count(&self) -> usize {
        self.supports.iter().filter(|s| s.initialized).count()
    }

    /// Overwrites one support directly; the action is clipped to the bounds.
    pub fn set_support(
        &mut self,
        index: usize,
        action: f64,
        utility: f64,
        initialized: bool,
    ) -> Result<()> {
        let bounds = self.bounds;
        let s = self
            .supports
            .get_mut(index)
            .ok_or_else(|| Error::param(format!("support index {index} out of range")))?;
        *s = Support {
            action: bounds.clip(action),
            utility,
            initialized,
        };
        Ok(())
    }

    /// Grid indices of support `index`, first dimension varying slowest.
    pub fn grid_indices(&self, index: usize) -> Vec<usize> {
        let mut out = vec![0; self.dims()];
        let mut rem = index;
        for d in (0..self.dims()).rev() {
            out[d] = rem % self.resolution[d];
            rem /= self.resolution[d];
        }
        out
    }

    pub fn linear_index(&self, grid: &[usize]) -> Option<usize> {
        if grid.len() != self.dims() {
            return None;
        }
        let mut idx = 0;
        for (d, &g) in grid.iter().enumerate() {
            if g >= self.resolution[d] {
                return None;
            }
            idx = idx * self.resolution[d] + g;
        }
        Some(idx)
    }

    /// Normalized [0, 1] coordinates of support `index`.
    pub fn support_normalized(&self, index: usize) -> Vec<f64> {
        self.grid_indices(index)
            .iter()
            .zip(&self.resolution)
            .map(|(&g, &r)| g as f64 / (r - 1) as f64)
            .collect()
    }

    /// State-space coordinates of support `index`.
    pub fn support_state(&self, index: usize) -> Vec<f64> {
        self.support_normalized(index)
            .iter()
            .zip(&self.ranges)
            .map(|(&u, &(lo, hi))| lo + u * (hi - lo))
            .collect()
    }

    /// Query state scaled to [0, 1] per dimension, clipped to the ranges.
    pub fn normalize(&self, state: &[f64]) -> Vec<f64> {
        self.ranges
            .iter()
            .enumerate()
            .map(|(d, &(lo, hi))| {
                let x = state.get(d).copied().unwrap_or(lo);
                ((x - lo) / (hi - lo)).clamp(0.0, 1.0)
            })
            .collect()
    }

    fn dist2(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
    }

    /// Support closest to `state`; ties go to the lowest linear index.
    pub fn nearest(&self, state: &[f64]) -> usize {
        let q = self.normalize(state);
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for i in 0..self.supports.len() {
            let d = Self::dist2(&q, &self.support_normalized(i));
            if d < best_d {
                best = i;
                best_d = d;
            }
        }
        best
    }

    /// Weighted blend of the initialized supports' actions.
    pub fn interpolate_action(&self, state: &[f64]) -> Result<f64> {
        let q = self.normalize(state);
        let mut wsum = 0.0;
        let mut acc = 0.0;
        let mut any = false;
        for (i, s) in self.supports.iter().enumerate() {
            if !s.initialized {
                continue;
            }
            any = true;
            let d2 = Self::dist2(&q, &self.support_normalized(i));
            if self.gamma_map == 0.0 && d2.sqrt() < COINCIDENT {
                return Ok(s.action);
            }
            let w = 1.0 / (d2 + self.gamma_map);
            wsum += w;
            acc += w * s.action;
        }
        if !any {
            return Err(Error::EmptyMap);
        }
        Ok(self.bounds.clip(acc / wsum))
    }

    /// Interpolated action, or the nearest support's prior action while the
    /// map has not learned anything yet.
    pub fn select_action(&self, state: &[f64]) -> f64 {
        match self.interpolate_action(state) {
            Ok(a) => a,
            Err(_) => self.supports[self.nearest(state)].action,
        }
    }

    /// Keeps `(action, utility)` at the nearest support if it beats what is
    /// stored there. Returns whether the support changed.
    pub fn update_best_response(&mut self, state: &[f64], action: f64, utility: f64) -> bool {
        let idx = self.nearest(state);
        let bounds = self.bounds;
        let s = &mut self.supports[idx];
        if !s.initialized || utility > s.utility {
            *s = Support {
                action: bounds.clip(action),
                utility,
                initialized: true,
            };
            true
        } else {
            false
        }
    }

    /// Secant-gradient step at the nearest support.
    ///
    /// The slope between the stored pair and the new sample moves the stored
    /// action by `learning_rate * slope`; the stored utility keeps the best
    /// value seen. Falls back to the best-response rule when the support is
    /// fresh or the two actions coincide.
    pub fn update_gradient_based(
        &mut self,
        state: &[f64],
        action: f64,
        utility: f64,
        learning_rate: f64,
    ) -> Result<bool> {
        self.update_gradient_limited(state, action, utility, learning_rate, f64::INFINITY)
    }

    /// [`update_gradient_based`](Self::update_gradient_based) with the step
    /// magnitude capped at `max_step` action units.
    pub fn update_gradient_limited(
        &mut self,
        state: &[f64],
        action: f64,
        utility: f64,
        learning_rate: f64,
        max_step: f64,
    ) -> Result<bool> {
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(Error::param(format!(
                "learning rate must be > 0, got {learning_rate}"
            )));
        }
        if max_step.is_nan() || max_step < 0.0 {
            return Err(Error::param(format!(
                "max step must be >= 0, got {max_step}"
            )));
        }
        let idx = self.nearest(state);
        let s = self.supports[idx];
        if !s.initialized || !s.utility.is_finite() || (action - s.action).abs() < DEGENERATE_STEP {
            return Ok(self.update_best_response(state, action, utility));
        }
        let slope = (utility - s.utility) / (action - s.action);
        let step = (learning_rate * slope).clamp(-max_step, max_step);
        let next = self.bounds.clip(s.action + step);
        self.supports[idx] = Support {
            action: next,
            utility: s.utility.max(utility),
            initialized: true,
        };
        Ok(true)
    }

    /// Current action for `state` plus uniform exploration noise, clipped to
    /// the bounds. A zero half-width returns the plain selection.
    pub fn explore_action<R: Rng + ?Sized>(
        &self,
        state: &[f64],
        exploration: &Exploration,
        episode: usize,
        rng: &mut R,
    ) -> f64 {
        let base = self.select_action(state);
        let half = exploration.half_width(&self.bounds, episode);
        if half <= 0.0 {
            return base;
        }
        self.bounds.clip(base + rng.random_range(-half..=half))
    }
}
