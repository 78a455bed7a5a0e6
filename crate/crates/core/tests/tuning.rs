use gametune::event::{EventMonitor, Transition};
use gametune::game::{ActionBounds, PlayerId};
use gametune::map::PerformanceMap;
use gametune::pid::PidGains;
use gametune::plant::{Scenario, Segment, STATIC_SETPOINT, STATIC_SUPPLY};
use gametune::tuner::{
    detect_action_bounds, evaluate, evaluate_baseline, run_episode, train, train_from,
    EpisodeOptions, GainPolicy, GameConfig, GridSpec, Learner, TraceRow, DEFAULT_DWELL,
};
use gametune::Error;

fn segment(t_from: f64, load_kw: f64) -> Segment {
    Segment {
        t_from,
        load_kw,
        setpoint: STATIC_SETPOINT,
        t_z_supply: STATIC_SUPPLY,
    }
}

fn flat(duration: f64) -> Scenario {
    Scenario::new(duration, 0, vec![segment(0.0, 3.0)]).unwrap()
}

fn one_step() -> Scenario {
    Scenario::new(1500.0, 0, vec![segment(0.0, 2.0), segment(500.0, 4.0)]).unwrap()
}

/// A load far beyond the chiller's capacity at the starting valve position.
fn overload() -> Scenario {
    Scenario::new(600.0, 0, vec![segment(0.0, 2.0), segment(100.0, 60.0)]).unwrap()
}

fn boxed() -> GameConfig {
    GameConfig::default().with_bounds(
        ActionBounds::new(1.0, 2.0).unwrap(),
        ActionBounds::new(0.068, 0.085).unwrap(),
    )
}

/// Fully initialized maps whose actions rise with the first state.
fn graded_maps(config: &GameConfig) -> Vec<PerformanceMap> {
    let mut maps = config.init_maps(3).unwrap();
    for m in &mut maps {
        let b = m.bounds();
        for k in 0..m.supports().len() {
            let i0 = m.grid_indices(k)[0] as f64;
            let frac = i0 / (m.resolution()[0] - 1) as f64;
            m.set_support(k, b.min + frac * b.width(), 0.1, true)
                .unwrap();
        }
    }
    maps
}

fn traced(
    config: &GameConfig,
    scenario: &Scenario,
    maps: &mut [PerformanceMap],
) -> (gametune::RunReport, Vec<TraceRow>) {
    let ep = run_episode(
        config,
        scenario,
        GainPolicy::Maps(maps),
        EpisodeOptions::evaluate(0).traced(),
    )
    .unwrap();
    (ep.report, ep.trace)
}

fn gain_switches(trace: &[TraceRow]) -> Vec<usize> {
    trace
        .windows(2)
        .enumerate()
        .filter(|(_, w)| w[0].kp != w[1].kp || w[0].ki != w[1].ki)
        .map(|(k, _)| k + 1)
        .collect()
}

#[test]
fn no_trigger_means_no_events() {
    let config = boxed();
    let mut maps = graded_maps(&config);
    let (report, trace) = traced(&config, &flat(600.0), &mut maps);
    assert_eq!(report.events, 0);
    assert_eq!(report.avg_settling_time, 0.0);
    assert!(gain_switches(&trace).is_empty());
    assert!(trace.iter().all(|r| !r.event));
}

#[test]
fn one_load_step_is_one_event() {
    let config = boxed();
    let mut maps = graded_maps(&config);
    let (report, trace) = traced(&config, &one_step(), &mut maps);
    assert_eq!(report.events, 1);
    assert_eq!(report.truncated, 0);

    let switches = gain_switches(&trace);
    assert_eq!(switches.len(), 1);
    let k = switches[0];
    assert!(trace[k].event && !trace[k - 1].event);

    // replay the logged error through a fresh monitor
    let mut monitor = EventMonitor::new(config.trigger).unwrap();
    let mut opened = Vec::new();
    let mut closed = Vec::new();
    for r in &trace {
        let e = r.t_set - r.t_t;
        match monitor.observe(r.t, e, e.abs(), (r.t_z - r.t_set).abs(), || {
            (Vec::new(), Vec::new())
        }) {
            Transition::Opened => opened.push(r.t),
            Transition::Closed(ev) => closed.push(ev.t_end.unwrap()),
            Transition::None => {}
        }
    }
    assert_eq!(opened, vec![report.log[0].t_start]);
    assert_eq!(closed, vec![report.log[0].t_end]);
    assert_eq!(trace[k].t, report.log[0].t_start);
}

#[test]
fn evaluation_is_deterministic() {
    let config = boxed();
    let maps = graded_maps(&config);
    let sc = Scenario::static_cycles(1).unwrap();
    assert_eq!(
        evaluate(&config, &sc, &maps, 7).unwrap(),
        evaluate(&config, &sc, &maps, 7).unwrap()
    );
}

#[test]
fn training_is_reproducible() {
    let mut config = boxed();
    config.episodes = 4;
    let sc = Scenario::static_cycles(1).unwrap();
    let a = train(&config, &sc, 11).unwrap();
    let b = train(&config, &sc, 11).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.curve.len(), 4);
}

#[test]
fn zero_episodes_leaves_maps_untouched() {
    let mut config = boxed();
    config.episodes = 0;
    let out = train(&config, &one_step(), 5).unwrap();
    assert_eq!(out.maps, config.init_maps(5).unwrap());
    assert!(out.curve.is_empty());
}

#[test]
fn best_response_never_forgets_a_better_utility() {
    let mut config = boxed().with_learner(Learner::BestResponse);
    config.episodes = 6;
    let sc = Scenario::static_cycles(1).unwrap();
    let maps = config.init_maps(2).unwrap();
    let mut last: Option<Vec<Vec<f64>>> = None;
    train_from(&config, &sc, maps, 2, |_, maps, _| {
        let now: Vec<Vec<f64>> = maps
            .iter()
            .map(|m| m.supports().iter().map(|s| s.utility).collect())
            .collect();
        if let Some(prev) = &last {
            for (p, n) in prev.iter().flatten().zip(now.iter().flatten()) {
                assert!(n >= p);
            }
        }
        last = Some(now);
        Ok(false)
    })
    .unwrap();
}

#[test]
fn early_stop_cuts_the_curve() {
    let config = boxed();
    let sc = Scenario::static_cycles(1).unwrap();
    let out = train_from(&config, &sc, config.init_maps(0).unwrap(), 0, |ep, _, _| {
        Ok(ep == 2)
    })
    .unwrap();
    assert_eq!(out.curve.len(), 3);
}

#[test]
fn trained_actions_stay_in_bounds() {
    let mut config = boxed();
    config.episodes = 5;
    let out = train(&config, &Scenario::static_cycles(1).unwrap(), 4).unwrap();
    for (p, m) in config.players.iter().zip(&out.maps) {
        assert!(m.supports().iter().all(|s| p.bounds.contains(s.action)));
    }
}

#[test]
fn baseline_records_divergence_per_entry() {
    let config = GameConfig::default();
    let gains = [PidGains::pi(0.0, 0.0), PidGains::pi(1.5, 0.07)];
    let out = evaluate_baseline(&config, &gains, &Scenario::static_cycles(1).unwrap(), 0).unwrap();
    assert!(out[0].diverged() && out[0].divergence.is_some());
    assert!(!out[1].diverged());
    assert!(out[1].report.as_ref().unwrap().events > 0);
    assert!(evaluate_baseline(&config, &[], &flat(100.0), 0)
        .unwrap()
        .is_empty());
}

#[test]
fn evaluation_reports_divergence_as_error() {
    let mut config = GameConfig::default();
    for p in &mut config.players {
        p.bounds = ActionBounds::new(0.0, 1e-6).unwrap();
    }
    let maps: Vec<PerformanceMap> = config.init_maps(0).unwrap();
    let err = evaluate(&config, &overload(), &maps, 0).unwrap_err();
    assert!(matches!(err, Error::Divergence { .. }));
}

#[test]
fn training_survives_divergence() {
    let mut config = GameConfig {
        episodes: 1,
        ..GameConfig::default()
    };
    for p in &mut config.players {
        p.bounds = ActionBounds::new(0.0, 1e-6).unwrap();
    }
    let out = train(&config, &overload(), 0).unwrap();
    let report = &out.curve[0];
    assert!(report.divergence.is_some());
    assert!(report.log.last().unwrap().truncated);
}

#[test]
fn detected_box_sits_inside_the_grid() {
    let config = GameConfig::default();
    let grid = GridSpec {
        kp_range: config.player(PlayerId::Kp).unwrap().bounds,
        ki_range: config.player(PlayerId::Ki).unwrap().bounds,
        resolution: 4,
    };
    let sc = Scenario::static_cycles(1).unwrap();
    match detect_action_bounds(&config, &sc, grid, DEFAULT_DWELL) {
        Ok(b) => {
            assert!(b.kp_bounds.is_within(&grid.kp_range));
            assert!(b.ki_bounds.is_within(&grid.ki_range));
            assert!(b.area_ratio() > 0.0 && b.area_ratio() <= 1.0);
            assert_eq!(b.scores.len(), 16);
        }
        Err(e) => assert!(matches!(e, Error::NoStableRegion)),
    }
}

#[test]
fn single_finite_cell_is_the_box() {
    let config = GameConfig::default();
    let grid = GridSpec {
        kp_range: ActionBounds::new(1.0, 3.0).unwrap(),
        ki_range: ActionBounds::new(0.034, 0.102).unwrap(),
        resolution: 2,
    };
    let b = detect_action_bounds(
        &config,
        &Scenario::static_cycles(1).unwrap(),
        grid,
        DEFAULT_DWELL,
    )
    .unwrap();
    let finite: Vec<_> = b.scores.iter().filter(|c| c.score.is_finite()).collect();
    assert_eq!(finite.len(), 1);
    let (kp, ki) = grid.cell(finite[0].i, finite[0].j);
    assert_eq!((b.kp_bounds, b.ki_bounds), (kp, ki));
}

#[test]
fn unstable_grid_has_no_region() {
    let config = GameConfig::default();
    let grid = GridSpec {
        kp_range: ActionBounds::new(0.0, 1e-3).unwrap(),
        ki_range: ActionBounds::new(0.0, 1e-4).unwrap(),
        resolution: 2,
    };
    let err = detect_action_bounds(
        &config,
        &Scenario::static_cycles(1).unwrap(),
        grid,
        DEFAULT_DWELL,
    )
    .unwrap_err();
    assert!(matches!(err, Error::NoStableRegion));
}
