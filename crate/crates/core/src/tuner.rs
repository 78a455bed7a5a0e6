//! Closed-loop orchestration: episodes, training, baselines and the
//! grid search for stable action bounds.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event::{EventMonitor, EventRecord, Transition, TriggerConfig};
use crate::game::{
    metric_utility, utility, ActionBounds, EventMetrics, Player, PlayerId, UtilityParams,
    UtilityVariant,
};
use crate::map::{Exploration, PerformanceMap, DEFAULT_GAMMA_MAP, DEFAULT_RESOLUTION};
use crate::pid::{PidGains, PidState};
use crate::plant::{plant_step, CommandDelay, PlantParams, PlantState, Scenario};
use crate::seed::{SeedStreams, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Learner {
    BestResponse,
    #[default]
    GradientBased,
}

impl std::str::FromStr for Learner {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "br" | "best_response" | "bestresponse" => Ok(Learner::BestResponse),
            "gb" | "gradient" | "gradient_based" | "gradientbased" => Ok(Learner::GradientBased),
            other => Err(Error::param(format!(
                "unknown learner '{other}', expected br or gb"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MapConfig {
    pub resolution: usize,
    pub gamma_map: f64,
    /// Ranges of |T_T - T_set| and |T_Z - T_set|, kelvin.
    pub state_ranges: Vec<(f64, f64)>,
}

impl Default for MapConfig {
    fn default() -> Self {
        Self {
            resolution: DEFAULT_RESOLUTION,
            gamma_map: DEFAULT_GAMMA_MAP,
            state_ranges: vec![(0.0, 4.0), (1.0, 7.0)],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GameConfig {
    pub players: Vec<Player>,
    pub trigger: TriggerConfig,
    pub learner: Learner,
    pub learning_rate: f64,
    pub exploration: Exploration,
    pub episodes: usize,
    pub map: MapConfig,
    pub plant: PlantParams,
    /// Gains used for any role without a player.
    pub fixed_gains: PidGains,
}

pub const DEFAULT_EPISODES: usize = 50;
pub const DEFAULT_LEARNING_RATE: f64 = 1.0;

pub fn default_kp_player() -> Player {
    Player {
        id: PlayerId::Kp,
        bounds: ActionBounds {
            min: 0.0,
            max: 10.0,
        },
        barrier_coeff: 0.8,
        utility: UtilityParams::new(0.3, 0.3, UtilityVariant::Type2),
    }
}

pub fn default_ki_player() -> Player {
    Player {
        id: PlayerId::Ki,
        bounds: ActionBounds {
            min: 0.0,
            max: 0.17,
        },
        barrier_coeff: 10.0,
        utility: UtilityParams::new(0.1, 0.1, UtilityVariant::Type2),
    }
}

impl Default for GameConfig {
    fn default() -> Self {
        Self {
            players: vec![default_kp_player(), default_ki_player()],
            trigger: TriggerConfig::default(),
            learner: Learner::default(),
            learning_rate: DEFAULT_LEARNING_RATE,
            exploration: Exploration::default(),
            episodes: DEFAULT_EPISODES,
            map: MapConfig::default(),
            plant: PlantParams::default(),
            fixed_gains: PidGains::pi(2.0, 0.05),
        }
    }
}

impl GameConfig {
    pub fn validate(&self) -> Result<()> {
        if self.players.is_empty() {
            return Err(Error::param("at least one player is required"));
        }
        for (i, p) in self.players.iter().enumerate() {
            p.validate()?;
            if self.players[..i].iter().any(|q| q.id == p.id) {
                return Err(Error::param(format!("player {} listed twice", p.id)));
            }
        }
        self.trigger.validate()?;
        self.plant.validate()?;
        if self.learner == Learner::GradientBased
            && !(self.learning_rate > 0.0 && self.learning_rate.is_finite())
        {
            return Err(Error::param(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if !(self.exploration.eps0 >= 0.0 && self.exploration.decay >= 0.0) {
            return Err(Error::param("exploration eps0 and decay must be >= 0"));
        }
        if self.map.state_ranges.len() != 2 {
            return Err(Error::param(
                "maps are defined over exactly two state dimensions",
            ));
        }
        Ok(())
    }

    pub fn with_variant(mut self, variant: UtilityVariant) -> Self {
        for p in &mut self.players {
            p.utility.variant = variant;
        }
        self
    }

    pub fn with_learner(mut self, learner: Learner) -> Self {
        self.learner = learner;
        self
    }

    /// Replaces the action bounds of the K_P and K_I players.
    pub fn with_bounds(mut self, kp: ActionBounds, ki: ActionBounds) -> Self {
        for p in &mut self.players {
            match p.id {
                PlayerId::Kp => p.bounds = kp,
                PlayerId::Ki => p.bounds = ki,
                PlayerId::Kd => {}
            }
        }
        self
    }

    pub fn player(&self, id: PlayerId) -> Option<&Player> {
        self.players.iter().find(|p| p.id == id)
    }

    /// Fresh maps, one per player, with seeded prior actions.
    pub fn init_maps(&self, seed: u64) -> Result<Vec<PerformanceMap>> {
        let streams = SeedStreams::new(seed);
        let res = vec![self.map.resolution; self.map.state_ranges.len()];
        self.players
            .iter()
            .enumerate()
            .map(|(i, p)| {
                PerformanceMap::new(
                    &self.map.state_ranges,
                    &res,
                    p.bounds,
                    self.map.gamma_map,
                    streams.derive(Stream::MapInit, i as u64),
                )
            })
            .collect()
    }

    fn gains_from(&self, actions: &[f64]) -> PidGains {
        let mut g = self.fixed_gains;
        for (p, &a) in self.players.iter().zip(actions) {
            match p.id {
                PlayerId::Kp => g.kp = a,
                PlayerId::Ki => g.ki = a,
                PlayerId::Kd => g.kd = a,
            }
        }
        g
    }
}

/// Per-event entry of a run report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventLog {
    pub t_start: f64,
    pub t_end: f64,
    pub settling_time: f64,
    pub peak: f64,
    pub state1_l1: f64,
    pub state2_l1: f64,
    pub setpoint: f64,
    /// Highest and lowest T_T seen during the event, kelvin.
    pub t_max: f64,
    pub t_min: f64,
    pub state: Vec<f64>,
    pub actions: Vec<f64>,
    pub utilities: Vec<f64>,
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    /// Mean event duration, seconds; zero when no event occurred.
    pub avg_settling_time: f64,
    /// Highest T_T reached during any event, kelvin.
    pub max_overshoot: f64,
    /// Lowest T_T reached during any event, kelvin.
    pub max_undershoot: f64,
    /// Largest excursion above the active setpoint, kelvin.
    pub overshoot_dev: f64,
    /// Largest excursion below the active setpoint, kelvin.
    pub undershoot_dev: f64,
    pub events: usize,
    pub truncated: usize,
    /// Set when a training episode was cut short by plant divergence.
    pub divergence: Option<String>,
    pub log: Vec<EventLog>,
}

impl RunReport {
    fn from_log(log: Vec<EventLog>, fallback_setpoint: f64) -> Self {
        let events = log.len();
        let truncated = log.iter().filter(|e| e.truncated).count();
        let avg_settling_time = if events == 0 {
            0.0
        } else {
            log.iter().map(|e| e.settling_time).sum::<f64>() / events as f64
        };
        let max_overshoot = log
            .iter()
            .map(|e| e.t_max)
            .fold(f64::NEG_INFINITY, f64::max);
        let max_undershoot = log.iter().map(|e| e.t_min).fold(f64::INFINITY, f64::min);
        Self {
            avg_settling_time,
            max_overshoot: if events == 0 {
                fallback_setpoint
            } else {
                max_overshoot
            },
            max_undershoot: if events == 0 {
                fallback_setpoint
            } else {
                max_undershoot
            },
            overshoot_dev: log.iter().map(|e| e.t_max - e.setpoint).fold(0.0, f64::max),
            undershoot_dev: log.iter().map(|e| e.setpoint - e.t_min).fold(0.0, f64::max),
            events,
            truncated,
            divergence: None,
            log,
        }
    }

    /// Report restricted to events that opened under `setpoint`.
    pub fn for_setpoint(&self, setpoint: f64) -> Self {
        let log = self
            .log
            .iter()
            .filter(|e| (e.setpoint - setpoint).abs() < 1e-9)
            .cloned()
            .collect();
        Self::from_log(log, setpoint)
    }
}

/// One sample of a closed-loop trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: f64,
    pub t_t: f64,
    pub t_z: f64,
    pub t_set: f64,
    pub u: f64,
    pub kp: f64,
    pub ki: f64,
    pub event: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub report: RunReport,
    pub trace: Vec<TraceRow>,
}

/// Where the gains come from during an episode.
pub enum GainPolicy<'a> {
    Maps(&'a mut [PerformanceMap]),
    Fixed(PidGains),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeOptions {
    pub train: bool,
    /// Index into the exploration schedule.
    pub episode: usize,
    pub seed: u64,
    pub record_trace: bool,
}

impl EpisodeOptions {
    pub fn evaluate(seed: u64) -> Self {
        Self {
            train: false,
            episode: 0,
            seed,
            record_trace: false,
        }
    }

    pub fn traced(mut self) -> Self {
        self.record_trace = true;
        self
    }
}

fn state_of(t_t: f64, t_z: f64, setpoint: f64) -> [f64; 2] {
    [(t_t - setpoint).abs(), (t_z - setpoint).abs()]
}

/// Runs one closed-loop episode over `scenario`.
///
/// The loop starts at the steady operating point of the first segment with
/// the integrator preloaded. Gains change only when an event opens; in
/// training mode each closed event updates every player's map.
///
/// Leaving the temperature envelope is an error in evaluation mode. In
/// training mode the open event is closed, learned from, and the episode
/// ends early with the report's `divergence` set.
pub fn run_episode(
    config: &GameConfig,
    scenario: &Scenario,
    mut policy: GainPolicy<'_>,
    opts: EpisodeOptions,
) -> Result<Episode> {
    config.validate()?;
    scenario.validate()?;
    if let GainPolicy::Maps(maps) = &policy {
        if maps.len() != config.players.len() {
            return Err(Error::param(format!(
                "{} maps supplied for {} players",
                maps.len(),
                config.players.len()
            )));
        }
    }
    let dt = config.trigger.sample_dt;
    let params = &config.plant;
    let streams = SeedStreams::new(opts.seed);
    let mut explore_rng = streams.rng(Stream::Exploration, opts.episode as u64);
    let mut noise_rng = streams.rng(Stream::LoadNoise, opts.episode as u64);

    let first = scenario.segments[0];
    let mut plant = PlantState::steady(params, first.setpoint, first.load_w(), first.t_z_supply);
    let init_state = state_of(plant.t_t, plant.t_z, first.setpoint);
    let init_actions: Vec<f64> = match &policy {
        GainPolicy::Maps(maps) => maps.iter().map(|m| m.select_action(&init_state)).collect(),
        GainPolicy::Fixed(_) => Vec::new(),
    };
    let mut gains = match &policy {
        GainPolicy::Maps(_) => config.gains_from(&init_actions),
        GainPolicy::Fixed(g) => *g,
    };
    let mut pid = PidState::valve();
    let u0 = plant.valve_pos * pid.u_max;
    pid.preload(&gains, u0);
    let mut delay = CommandDelay::new(params.dead_time, dt, u0);
    let mut monitor = EventMonitor::new(config.trigger)?;

    let steps = (scenario.duration / dt).round() as usize;
    let mut log = Vec::new();
    let mut trace = Vec::with_capacity(if opts.record_trace { steps } else { 0 });
    let mut extremes = (first.setpoint, first.setpoint, first.setpoint);

    let close = |ev: EventRecord,
                 extremes: (f64, f64, f64),
                 policy: &mut GainPolicy<'_>|
     -> Result<EventLog> {
        let metrics = crate::event::finalize_metrics(&ev)?;
        let utilities = match policy {
            GainPolicy::Maps(_) => config
                .players
                .iter()
                .zip(&ev.actions)
                .map(|(p, &a)| utility(&metrics, a, p, &p.utility))
                .collect::<Result<Vec<f64>>>()?,
            GainPolicy::Fixed(_) => Vec::new(),
        };
        if let (true, GainPolicy::Maps(maps)) = (opts.train, policy) {
            for ((map, &a), &u) in maps.iter_mut().zip(&ev.actions).zip(&utilities) {
                match config.learner {
                    Learner::BestResponse => {
                        map.update_best_response(&ev.state_at_open, a, u);
                    }
                    Learner::GradientBased => {
                        let w = map.bounds().width();
                        let cap = config.exploration.half_width(&map.bounds(), opts.episode);
                        map.update_gradient_limited(
                            &ev.state_at_open,
                            a,
                            u,
                            config.learning_rate * w * w,
                            cap,
                        )?;
                    }
                }
            }
        }
        let (setpoint, t_max, t_min) = extremes;
        Ok(EventLog {
            t_start: ev.t_start,
            t_end: ev.t_end.unwrap_or(ev.t_start),
            settling_time: metrics.settling_time,
            peak: metrics.peak_deviation,
            state1_l1: metrics.state1_l1,
            state2_l1: metrics.state2_l1,
            setpoint,
            t_max,
            t_min,
            state: ev.state_at_open.clone(),
            actions: ev.actions.clone(),
            utilities,
            truncated: ev.truncated,
        })
    };

    for k in 0..steps {
        let t = k as f64 * dt;
        let seg = *scenario.at(t);
        let sp = seg.setpoint;
        let error = sp - plant.t_t;
        let state = state_of(plant.t_t, plant.t_z, sp);

        let transition = {
            let policy_ref = &policy;
            let rng = &mut explore_rng;
            monitor.observe(t, error, state[0], state[1], || {
                let actions = match policy_ref {
                    GainPolicy::Maps(maps) => maps
                        .iter()
                        .map(|m| {
                            if opts.train {
                                m.explore_action(&state, &config.exploration, opts.episode, rng)
                            } else {
                                m.select_action(&state)
                            }
                        })
                        .collect(),
                    GainPolicy::Fixed(_) => Vec::new(),
                };
                (actions, state.to_vec())
            })
        };
        match transition {
            Transition::Opened => {
                extremes = (sp, plant.t_t.max(sp), plant.t_t.min(sp));
                if let GainPolicy::Maps(_) = &policy {
                    let ev = monitor.current().expect("event just opened");
                    let next = config.gains_from(&ev.actions);
                    pid.retune(&gains, &next);
                    gains = next;
                }
            }
            Transition::Closed(ev) => {
                extremes.1 = extremes.1.max(plant.t_t);
                extremes.2 = extremes.2.min(plant.t_t);
                log.push(close(ev, extremes, &mut policy)?);
            }
            Transition::None => {
                if monitor.is_open() {
                    extremes.1 = extremes.1.max(plant.t_t);
                    extremes.2 = extremes.2.min(plant.t_t);
                }
            }
        }

        let u = pid.step(&gains, plant.t_t - sp, dt)?;
        if opts.record_trace {
            trace.push(TraceRow {
                t,
                t_t: plant.t_t,
                t_z: plant.t_z,
                t_set: sp,
                u,
                kp: gains.kp,
                ki: gains.ki,
                event: monitor.is_open(),
            });
        }
        let applied = delay.push(u);
        let mut load = seg.load_w();
        if params.load_noise > 0.0 {
            load *= 1.0 + noise_rng.random_range(-params.load_noise..=params.load_noise);
        }
        let step = plant_step(&plant, params, applied, load, seg.t_z_supply, dt)?;
        if step.envelope_hit {
            let err = Error::Divergence {
                time: t + dt,
                t_t: step.state.t_t,
                t_z: step.state.t_z,
            };
            if !opts.train {
                return Err(err);
            }
            // a training episode learns from the event that ran away
            if let Some(ev) = monitor.finish(t + dt) {
                log.push(close(ev, extremes, &mut policy)?);
            }
            let mut report = RunReport::from_log(log, first.setpoint);
            report.divergence = Some(err.to_string());
            return Ok(Episode { report, trace });
        }
        plant = step.state;
    }
    if let Some(ev) = monitor.finish(steps as f64 * dt) {
        log.push(close(ev, extremes, &mut policy)?);
    }
    Ok(Episode {
        report: RunReport::from_log(log, first.setpoint),
        trace,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub maps: Vec<PerformanceMap>,
    /// Report of every training episode, in order.
    pub curve: Vec<RunReport>,
}

/// Trains fresh maps for `config.episodes` episodes.
pub fn train(config: &GameConfig, scenario: &Scenario, seed: u64) -> Result<TrainOutcome> {
    let maps = config.init_maps(seed)?;
    train_from(config, scenario, maps, seed, |_, _, _| Ok(false))
}

/// Trains `maps` in place. `after_episode` sees each episode's index, the
/// updated maps and the episode report, and may stop training early by
/// returning `true`.
pub fn train_from(
    config: &GameConfig,
    scenario: &Scenario,
    mut maps: Vec<PerformanceMap>,
    seed: u64,
    mut after_episode: impl FnMut(usize, &[PerformanceMap], &RunReport) -> Result<bool>,
) -> Result<TrainOutcome> {
    config.validate()?;
    let mut curve = Vec::with_capacity(config.episodes);
    for episode in 0..config.episodes {
        let opts = EpisodeOptions {
            train: true,
            episode,
            seed,
            record_trace: false,
        };
        let ep = run_episode(config, scenario, GainPolicy::Maps(&mut maps), opts)?;
        let stop = after_episode(episode, &maps, &ep.report)?;
        curve.push(ep.report);
        if stop {
            break;
        }
    }
    Ok(TrainOutcome { maps, curve })
}

/// Greedy evaluation of trained maps.
pub fn evaluate(
    config: &GameConfig,
    scenario: &Scenario,
    maps: &[PerformanceMap],
    seed: u64,
) -> Result<RunReport> {
    let mut maps = maps.to_vec();
    Ok(run_episode(
        config,
        scenario,
        GainPolicy::Maps(&mut maps),
        EpisodeOptions::evaluate(seed),
    )?
    .report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineResult {
    pub gains: PidGains,
    /// `None` when the loop diverged.
    pub report: Option<RunReport>,
    pub divergence: Option<String>,
}

impl BaselineResult {
    pub fn diverged(&self) -> bool {
        self.report.is_none()
    }
}

/// Runs each constant-gain controller without learning. Divergence is
/// recorded per entry.
pub fn evaluate_baseline(
    config: &GameConfig,
    gains: &[PidGains],
    scenario: &Scenario,
    seed: u64,
) -> Result<Vec<BaselineResult>> {
    config.validate()?;
    gains
        .par_iter()
        .map(|g| {
            match run_episode(
                config,
                scenario,
                GainPolicy::Fixed(*g),
                EpisodeOptions::evaluate(seed),
            ) {
                Ok(ep) => Ok(BaselineResult {
                    gains: *g,
                    report: Some(ep.report),
                    divergence: None,
                }),
                Err(e @ Error::Divergence { .. }) => Ok(BaselineResult {
                    gains: *g,
                    report: None,
                    divergence: Some(e.to_string()),
                }),
                Err(e) => Err(e),
            }
        })
        .collect()
}

/// `n` constant gain pairs drawn uniformly from the K_P and K_I bounds.
pub fn random_baseline_gains(
    kp: ActionBounds,
    ki: ActionBounds,
    n: usize,
    seed: u64,
) -> Vec<PidGains> {
    let mut rng: ChaCha8Rng = SeedStreams::new(seed).rng(Stream::Baseline, 0);
    (0..n)
        .map(|_| {
            PidGains::pi(
                rng.random_range(kp.min..=kp.max),
                rng.random_range(ki.min..=ki.max),
            )
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub kp_range: ActionBounds,
    pub ki_range: ActionBounds,
    pub resolution: usize,
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        self.kp_range.validate()?;
        self.ki_range.validate()?;
        if self.resolution < 2 {
            return Err(Error::param(format!(
                "grid resolution must be >= 2, got {}",
                self.resolution
            )));
        }
        Ok(())
    }

    pub fn cell(&self, i: usize, j: usize) -> (ActionBounds, ActionBounds) {
        let n = self.resolution as f64;
        let slice = |r: ActionBounds, k: usize| ActionBounds {
            min: r.min + r.width() * k as f64 / n,
            max: r.min + r.width() * (k + 1) as f64 / n,
        };
        (slice(self.kp_range, i), slice(self.ki_range, j))
    }

    pub fn center(&self, i: usize, j: usize) -> PidGains {
        let (kp, ki) = self.cell(i, j);
        PidGains::pi(kp.midpoint(), ki.midpoint())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellScore {
    pub i: usize,
    pub j: usize,
    pub kp: f64,
    pub ki: f64,
    /// `-inf` for cells that diverge or never settle.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundsResult {
    pub kp_bounds: ActionBounds,
    pub ki_bounds: ActionBounds,
    pub threshold: f64,
    pub grid: GridSpec,
    pub scores: Vec<CellScore>,
}

impl BoundsResult {
    /// Area of the returned box relative to the searched area.
    pub fn area_ratio(&self) -> f64 {
        (self.kp_bounds.width() * self.ki_bounds.width())
            / (self.grid.kp_range.width() * self.grid.ki_range.width())
    }
}

pub const DEFAULT_DWELL: f64 = 400.0;
pub const DEFAULT_GRID_RESOLUTION: usize = 10;
pub const BOUNDS_PERCENTILE: f64 = 0.75;

/// Scores one constant-gain controller on every load change of `scenario`
/// and returns the worst score. Each window starts at a segment boundary,
/// warm-started at the steady state of the preceding segment, and lasts
/// `dwell` seconds. A scenario without boundaries is scored from t = 0.
pub fn score_gains(
    config: &GameConfig,
    scenario: &Scenario,
    gains: PidGains,
    dwell: f64,
) -> Result<f64> {
    let scorer = config
        .player(PlayerId::Kp)
        .map(|p| p.utility)
        .unwrap_or_else(|| default_kp_player().utility);
    let params = UtilityParams {
        variant: UtilityVariant::Type1,
        ..scorer
    };
    if scenario.segments.len() == 1 {
        return score_window(config, &params, scenario, 0, gains, dwell);
    }
    let mut worst = f64::INFINITY;
    for i in 1..scenario.segments.len() {
        worst = worst.min(score_window(config, &params, scenario, i, gains, dwell)?);
        if worst == f64::NEG_INFINITY {
            break;
        }
    }
    Ok(worst)
}

fn score_window(
    config: &GameConfig,
    params: &UtilityParams,
    scenario: &Scenario,
    boundary: usize,
    gains: PidGains,
    dwell: f64,
) -> Result<f64> {
    let trig = &config.trigger;
    let dt = trig.sample_dt;
    let pre = scenario.segments[boundary.saturating_sub(1)];
    let start = scenario.segments[boundary].t_from;
    let end = (start + dwell).min(scenario.duration);

    let mut plant = PlantState::steady(&config.plant, pre.setpoint, pre.load_w(), pre.t_z_supply);
    let mut pid = PidState::valve();
    let u0 = plant.valve_pos * pid.u_max;
    pid.preload(&gains, u0);
    let mut delay = CommandDelay::new(config.plant.dead_time, dt, u0);

    let steps = ((end - start) / dt).round() as usize;
    let mut samples = Vec::with_capacity(steps);
    let mut last_out: Option<usize> = None;
    for k in 0..steps {
        let t = start + k as f64 * dt;
        let seg = *scenario.at(t);
        let error = seg.setpoint - plant.t_t;
        if !trig.within(error) {
            last_out = Some(k);
        }
        samples.push(state_of(plant.t_t, plant.t_z, seg.setpoint));
        let u = pid.step(&gains, plant.t_t - seg.setpoint, dt)?;
        let applied = delay.push(u);
        let step = plant_step(
            &plant,
            &config.plant,
            applied,
            seg.load_w(),
            seg.t_z_supply,
            dt,
        )?;
        if step.envelope_hit {
            return Ok(f64::NEG_INFINITY);
        }
        plant = step.state;
    }
    let settle_idx = last_out.map_or(0, |k| k + 1);
    let dwell_samples = (trig.t_w / dt).round() as usize;
    if settle_idx + dwell_samples > steps {
        return Ok(f64::NEG_INFINITY);
    }
    let event_end = settle_idx + dwell_samples;
    let window = &samples[..event_end];
    let peak = window
        .iter()
        .map(|s| s[0])
        .fold(0.0, f64::max)
        .max(trig.theta_h);
    let metrics = EventMetrics {
        settling_time: event_end as f64 * dt,
        peak_deviation: peak,
        state1_l1: window.iter().map(|s| s[0]).sum(),
        state2_l1: window.iter().map(|s| s[1]).sum(),
    };
    metric_utility(&metrics, params)
}

/// Worst score over the centre and the four corners of cell `(i, j)`, so a
/// cell only counts as stable when all of it is.
pub fn score_cell(
    config: &GameConfig,
    scenario: &Scenario,
    grid: &GridSpec,
    i: usize,
    j: usize,
    dwell: f64,
) -> Result<f64> {
    let (kp, ki) = grid.cell(i, j);
    let probes = [
        grid.center(i, j),
        PidGains::pi(kp.min, ki.min),
        PidGains::pi(kp.min, ki.max),
        PidGains::pi(kp.max, ki.min),
        PidGains::pi(kp.max, ki.max),
    ];
    let mut worst = f64::INFINITY;
    for g in probes {
        worst = worst.min(score_gains(config, scenario, g, dwell)?);
        if worst == f64::NEG_INFINITY {
            break;
        }
    }
    Ok(worst)
}

/// Linear-interpolation percentile of sorted finite values, `q` in [0, 1].
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Grid search over constant (K_P, K_I) pairs. Returns the bounding box of
/// the cells scoring at or above the upper quartile of finite scores.
pub fn detect_action_bounds(
    config: &GameConfig,
    scenario: &Scenario,
    grid: GridSpec,
    dwell: f64,
) -> Result<BoundsResult> {
    config.validate()?;
    scenario.validate()?;
    grid.validate()?;
    if dwell.is_nan() || dwell <= 0.0 {
        return Err(Error::param(format!("dwell must be > 0, got {dwell}")));
    }
    let n = grid.resolution;
    let scores = (0..n * n)
        .into_par_iter()
        .map(|idx| {
            let (i, j) = (idx / n, idx % n);
            let g = grid.center(i, j);
            score_cell(config, scenario, &grid, i, j, dwell).map(|score| CellScore {
                i,
                j,
                kp: g.kp,
                ki: g.ki,
                score,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut finite: Vec<f64> = scores
        .iter()
        .map(|c| c.score)
        .filter(|s| s.is_finite())
        .collect();
    if finite.is_empty() {
        return Err(Error::NoStableRegion);
    }
    finite.sort_by(f64::total_cmp);
    let threshold = percentile(&finite, BOUNDS_PERCENTILE);
    let mut kp = (f64::INFINITY, f64::NEG_INFINITY);
    let mut ki = (f64::INFINITY, f64::NEG_INFINITY);
    for c in scores
        .iter()
        .filter(|c| c.score.is_finite() && c.score >= threshold)
    {
        let (bp, bi) = grid.cell(c.i, c.j);
        kp = (kp.0.min(bp.min), kp.1.max(bp.max));
        ki = (ki.0.min(bi.min), ki.1.max(bi.max));
    }
    Ok(BoundsResult {
        kp_bounds: ActionBounds::new(kp.0, kp.1)?,
        ki_bounds: ActionBounds::new(ki.0, ki.1)?,
        threshold,
        grid,
        scores,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percentile_interpolates() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(percentile(&v, 0.75), 4.0);
        assert_eq!(percentile(&[1.0, 2.0], 0.75), 1.75);
        assert_eq!(percentile(&[3.0], 0.75), 3.0);
    }

    #[test]
    fn grid_cells_tile_ranges() {
        let g = GridSpec {
            kp_range: ActionBounds::new(0.0, 10.0).unwrap(),
            ki_range: ActionBounds::new(0.0, 0.2).unwrap(),
            resolution: 4,
        };
        let (a, b) = g.cell(3, 0);
        assert!((a.min - 7.5).abs() < 1e-12 && (a.max - 10.0).abs() < 1e-12);
        assert!((b.max - 0.05).abs() < 1e-12);
        assert!((g.center(0, 0).kp - 1.25).abs() < 1e-12);
    }

    #[test]
    fn learner_parsing() {
        assert_eq!("br".parse::<Learner>().unwrap(), Learner::BestResponse);
        assert_eq!("GB".parse::<Learner>().unwrap(), Learner::GradientBased);
        assert!("sgd".parse::<Learner>().is_err());
    }

    #[test]
    fn config_validation() {
        assert!(GameConfig::default().validate().is_ok());
        let mut c = GameConfig::default();
        c.players.clear();
        assert!(c.validate().is_err());
        let mut c = GameConfig {
            learning_rate: 0.0,
            ..GameConfig::default()
        };
        assert!(c.validate().is_err());
        c.learner = Learner::BestResponse;
        assert!(c.validate().is_ok());
        let mut c = GameConfig::default();
        c.players.push(default_kp_player());
        assert!(c.validate().is_err());
    }

    #[test]
    fn config_roundtrips_through_toml() {
        let c = GameConfig::default()
            .with_learner(Learner::BestResponse)
            .with_variant(UtilityVariant::Type1);
        let text = toml::to_string(&c).unwrap();
        assert!(text.contains("learner = \"best_response\""));
        assert_eq!(toml::from_str::<GameConfig>(&text).unwrap(), c);
        assert_eq!(
            toml::from_str::<GameConfig>("").unwrap(),
            GameConfig::default()
        );
    }

    #[test]
    fn config_rejects_unknown_keys() {
        for doc in [
            "lerner = \"br\"",
            "[trigger]\nthresh = 1.0",
            "[exploration]\nwidth = 1.0",
            "[map]\nres = 3",
        ] {
            assert!(toml::from_str::<GameConfig>(doc).is_err(), "{doc}");
        }
    }
}
