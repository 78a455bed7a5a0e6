//! Event lifecycle: threshold trigger, dwell-based reset, metric accumulation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::EventMetrics;

/// Slack when comparing accumulated sample times against the dwell.
const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TriggerConfig {
    /// Upper threshold on the signed deviation, kelvin.
    pub theta_h: f64,
    /// Lower threshold on the signed deviation, kelvin (negative).
    pub theta_l: f64,
    /// In-envelope dwell required before an event resets, seconds.
    pub t_w: f64,
    /// Controller sampling period, seconds.
    pub sample_dt: f64,
}

impl Default for TriggerConfig {
    fn default() -> Self {
        Self {
            theta_h: 0.5,
            theta_l: -0.5,
            t_w: 30.0,
            sample_dt: 0.1,
        }
    }
}

impl TriggerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.theta_l < 0.0 && self.theta_h > 0.0) {
            return Err(Error::param(format!(
                "thresholds must satisfy theta_l < 0 < theta_h, got [{}, {}]",
                self.theta_l, self.theta_h
            )));
        }
        if !(self.t_w > 0.0 && self.t_w.is_finite()) {
            return Err(Error::param(format!("t_w must be > 0, got {}", self.t_w)));
        }
        if !(self.sample_dt > 0.0 && self.sample_dt.is_finite()) {
            return Err(Error::param(format!(
                "sample_dt must be > 0, got {}",
                self.sample_dt
            )));
        }
        Ok(())
    }

    pub fn within(&self, error: f64) -> bool {
        error >= self.theta_l && error <= self.theta_h
    }
}

/// One trigger-to-reset window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub t_start: f64,
    pub t_within_since: Option<f64>,
    pub t_end: Option<f64>,
    pub accum_s1: f64,
    pub accum_s2: f64,
    pub peak: f64,
    /// Gains committed at the trigger, in player order.
    pub actions: Vec<f64>,
    /// State observed at the trigger.
    pub state_at_open: Vec<f64>,
    /// Set when the event was force-closed at the end of an episode.
    pub truncated: bool,
}

impl EventRecord {
    pub fn open(t_start: f64, actions: Vec<f64>, state_at_open: Vec<f64>) -> Self {
        Self {
            t_start,
            t_within_since: None,
            t_end: None,
            accum_s1: 0.0,
            accum_s2: 0.0,
            peak: 0.0,
            actions,
            state_at_open,
            truncated: false,
        }
    }

    pub fn is_open(&self) -> bool {
        self.t_end.is_none()
    }

    /// Closes an event that never regained the envelope.
    pub fn truncate(&mut self, now: f64) {
        if self.is_open() {
            self.t_end = Some(now);
            self.truncated = true;
        }
    }
}

/// True when a new event should open.
pub fn trigger_check(error: f64, config: &TriggerConfig, event_open: bool) -> bool {
    !event_open && (error > config.theta_h || error < config.theta_l)
}

/// Advances the reset dwell; returns true when the event closed at `now`.
pub fn reset_check(error: f64, now: f64, event: &mut EventRecord, config: &TriggerConfig) -> bool {
    if !event.is_open() {
        return false;
    }
    if config.within(error) {
        let since = *event.t_within_since.get_or_insert(now);
        if now - since >= config.t_w - TIME_EPS {
            event.t_end = Some(now);
            return true;
        }
    } else {
        event.t_within_since = None;
    }
    false
}

pub fn accumulate(event: &mut EventRecord, s1: f64, s2: f64) {
    event.accum_s1 += s1.abs();
    event.accum_s2 += s2.abs();
    event.peak = event.peak.max(s1.abs());
}

pub fn finalize_metrics(event: &EventRecord) -> Result<EventMetrics> {
    let t_end = event.t_end.ok_or(Error::EventOpen(event.t_start))?;
    Ok(EventMetrics {
        settling_time: t_end - event.t_start,
        peak_deviation: event.peak,
        state1_l1: event.accum_s1,
        state2_l1: event.accum_s2,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum Transition {
    None,
    Opened,
    Closed(EventRecord),
}

/// Runs trigger and reset over a stream of samples, keeping at most one
/// event open.
///
/// Per sample: an open event first accumulates the sample and then checks
/// for reset; with no event open the trigger is checked, and an opening
/// sample is accumulated into the new event.
#[derive(Debug, Clone)]
pub struct EventMonitor {
    config: TriggerConfig,
    current: Option<EventRecord>,
}

impl EventMonitor {
    pub fn new(config: TriggerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            current: None,
        })
    }

    pub fn config(&self) -> &TriggerConfig {
        &self.config
    }

    pub fn current(&self) -> Option<&EventRecord> {
        self.current.as_ref()
    }

    pub fn is_open(&self) -> bool {
        self.current.is_some()
    }

    /// Feeds one sample. `open_with` supplies the actions and state to freeze
    /// when this sample triggers a new event.
    pub fn observe(
        &mut self,
        now: f64,
        error: f64,
        s1: f64,
        s2: f64,
        open_with: impl FnOnce() -> (Vec<f64>, Vec<f64>),
    ) -> Transition {
        if let Some(ev) = self.current.as_mut() {
            accumulate(ev, s1, s2);
            if reset_check(error, now, ev, &self.config) {
                return Transition::Closed(self.current.take().expect("open event"));
            }
            return Transition::None;
        }
        if trigger_check(error, &self.config, false) {
            let (actions, state) = open_with();
            let mut ev = EventRecord::open(now, actions, state);
            accumulate(&mut ev, s1, s2);
            self.current = Some(ev);
            return Transition::Opened;
        }
        Transition::None
    }

    /// Force-closes whatever is still open.
    pub fn finish(&mut self, now: f64) -> Option<EventRecord> {
        self.current.take().map(|mut ev| {
            ev.truncate(now);
            ev
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> TriggerConfig {
        TriggerConfig::default()
    }

    #[test]
    fn trigger_examples() {
        let error = 298.15 - 298.9;
        assert!(trigger_check(error, &cfg(), false));
        assert!(!trigger_check(0.3, &cfg(), false));
        assert!(!trigger_check(error, &cfg(), true));
        assert!(!trigger_check(0.5, &cfg(), false));
    }

    #[test]
    fn reset_closes_after_dwell() {
        let mut ev = EventRecord::open(50.0, vec![], vec![]);
        assert!(!reset_check(0.8, 90.0, &mut ev, &cfg()));
        assert!(!reset_check(0.2, 100.0, &mut ev, &cfg()));
        assert_eq!(ev.t_within_since, Some(100.0));
        assert!(!reset_check(0.1, 129.9, &mut ev, &cfg()));
        assert!(reset_check(0.1, 130.0, &mut ev, &cfg()));
        assert_eq!(finalize_metrics(&ev).unwrap().settling_time, 80.0);
    }

    #[test]
    fn reset_dwell_restarts_after_exit() {
        let mut ev = EventRecord::open(0.0, vec![], vec![]);
        assert!(!reset_check(0.1, 100.0, &mut ev, &cfg()));
        assert!(!reset_check(0.7, 110.0, &mut ev, &cfg()));
        assert_eq!(ev.t_within_since, None);
        assert!(!reset_check(0.1, 120.0, &mut ev, &cfg()));
        assert!(!reset_check(0.1, 140.0, &mut ev, &cfg()));
        assert!(reset_check(0.1, 150.0, &mut ev, &cfg()));
    }

    #[test]
    fn never_reentering_stays_open() {
        let mut ev = EventRecord::open(0.0, vec![], vec![]);
        for k in 0..1000 {
            assert!(!reset_check(0.9, k as f64, &mut ev, &cfg()));
        }
        assert!(ev.is_open());
        assert!(matches!(finalize_metrics(&ev), Err(Error::EventOpen(_))));
    }

    #[test]
    fn accumulate_examples() {
        let mut ev = EventRecord::open(0.0, vec![], vec![]);
        let m = (ev.accum_s1, ev.accum_s2, ev.peak);
        assert_eq!(m, (0.0, 0.0, 0.0));
        accumulate(&mut ev, 0.6, 1.0);
        accumulate(&mut ev, -0.8, 1.0);
        assert!((ev.accum_s1 - 1.4).abs() < 1e-12);
        assert_eq!(ev.peak, 0.8);

        let mut ev = EventRecord::open(0.0, vec![], vec![]);
        for _ in 0..500 {
            accumulate(&mut ev, 0.2, 0.0);
        }
        assert!((ev.accum_s1 - 100.0).abs() < 1e-9);
    }

    #[test]
    fn finalize_passthrough() {
        let mut ev = EventRecord::open(50.0, vec![], vec![]);
        ev.peak = 0.75;
        ev.accum_s1 = 100.0;
        ev.accum_s2 = 49.0;
        ev.t_end = Some(109.14);
        let m = finalize_metrics(&ev).unwrap();
        assert!((m.settling_time - 59.14).abs() < 1e-9);
        assert_eq!(m.peak_deviation, 0.75);
        assert_eq!((m.state1_l1, m.state2_l1), (100.0, 49.0));
    }

    #[test]
    fn config_validation() {
        assert!(TriggerConfig {
            theta_l: 0.1,
            ..cfg()
        }
        .validate()
        .is_err());
        assert!(TriggerConfig { t_w: 0.0, ..cfg() }.validate().is_err());
        assert!(TriggerConfig {
            sample_dt: -1.0,
            ..cfg()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn monitor_keeps_one_event_open() {
        let mut mon = EventMonitor::new(cfg()).unwrap();
        let mut opened = 0;
        for k in 0..100 {
            let t = k as f64;
            match mon.observe(t, -0.9, 0.9, 1.0, || (vec![1.0], vec![0.9, 1.0])) {
                Transition::Opened => opened += 1,
                Transition::Closed(_) => panic!("must not close"),
                Transition::None => {}
            }
        }
        assert_eq!(opened, 1);
        let ev = mon.finish(100.0).unwrap();
        assert!(ev.truncated);
        assert_eq!(ev.t_end, Some(100.0));
        assert!(!mon.is_open());
    }
}
