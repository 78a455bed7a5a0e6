//! Comparisons built on top of the tuner: baseline statistics, the
//! per-setpoint robustness suite, and learning speed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::map::PerformanceMap;
use crate::plant::{Scenario, RANDOM_SETPOINTS};
use crate::seed::{SeedStreams, Stream};
use crate::tuner::{evaluate, train_from, BaselineResult, GameConfig, RunReport};

/// Tuned settling time must be at most this fraction of the baseline median.
pub const SETTLING_RATIO: f64 = 0.7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineSummary {
    /// Median average settling time; diverged controllers count as infinite.
    pub median_settling: f64,
    /// Median overshoot above setpoint; diverged controllers count as infinite.
    pub median_overshoot: f64,
    pub diverged: usize,
    pub count: usize,
}

pub fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        let (a, b) = (values[n / 2 - 1], values[n / 2]);
        if a.is_infinite() || b.is_infinite() {
            a.max(b)
        } else {
            0.5 * (a + b)
        }
    }
}

pub fn summarize_baseline(results: &[BaselineResult]) -> BaselineSummary {
    let mut st: Vec<f64> = results
        .iter()
        .map(|r| {
            r.report
                .as_ref()
                .map_or(f64::INFINITY, |r| r.avg_settling_time)
        })
        .collect();
    let mut ov: Vec<f64> = results
        .iter()
        .map(|r| r.report.as_ref().map_or(f64::INFINITY, |r| r.overshoot_dev))
        .collect();
    BaselineSummary {
        median_settling: median(&mut st),
        median_overshoot: median(&mut ov),
        diverged: results.iter().filter(|r| r.diverged()).count(),
        count: results.len(),
    }
}

/// True when `report` settles within the ratio of the baseline median and
/// overshoots strictly less than it.
pub fn beats_baseline(report: &RunReport, baseline: &BaselineSummary) -> bool {
    report.events > 0
        && report.avg_settling_time <= SETTLING_RATIO * baseline.median_settling
        && report.overshoot_dev < baseline.median_overshoot
}

/// Trains fresh maps and reports the first episode after which greedy
/// evaluation on `eval_scenario` beats the baseline, counting from 1.
/// `None` when it never does within `config.episodes`.
pub fn episodes_to_beat(
    config: &GameConfig,
    train_scenario: &Scenario,
    eval_scenario: &Scenario,
    baseline: &BaselineSummary,
    seed: u64,
) -> Result<Option<usize>> {
    let maps = config.init_maps(seed)?;
    let mut reached = None;
    train_from(
        config,
        train_scenario,
        maps,
        seed,
        |episode, maps, _| match evaluate(config, eval_scenario, maps, seed) {
            Ok(r) if beats_baseline(&r, baseline) => {
                reached = Some(episode + 1);
                Ok(true)
            }
            Ok(_) | Err(Error::Divergence { .. }) => Ok(false),
            Err(e) => Err(e),
        },
    )?;
    Ok(reached)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetpointRow {
    pub setpoint: f64,
    pub report: RunReport,
}

/// Length of each per-setpoint validation scenario, seconds.
pub const SUITE_DURATION: f64 = 20_000.0;

/// Evaluates `maps` on one random-load scenario per setpoint.
pub fn setpoint_suite(
    config: &GameConfig,
    maps: &[PerformanceMap],
    seed: u64,
) -> Result<Vec<SetpointRow>> {
    let streams = SeedStreams::new(seed);
    RANDOM_SETPOINTS
        .iter()
        .enumerate()
        .map(|(i, &sp)| {
            let scenario = Scenario::random_at_setpoint(
                sp,
                SUITE_DURATION,
                streams.derive(Stream::Scenario, 100 + i as u64),
            )?;
            Ok(SetpointRow {
                setpoint: sp,
                report: evaluate(config, &scenario, maps, seed)?,
            })
        })
        .collect()
}
