use gametune::game::PlayerId;
use gametune::plant::Scenario;
use gametune::report::{
    read_maps, read_trace, write_event_log, write_maps, write_trace, Provenance,
};
use gametune::tuner::{run_episode, EpisodeOptions, GainPolicy, GameConfig};
use gametune::Error;
use proptest::prelude::*;

fn prov() -> Provenance {
    Provenance::new("0123abcd", 42)
}

fn to_string(write: impl FnOnce(&mut Vec<u8>)) -> String {
    let mut buf = Vec::new();
    write(&mut buf);
    String::from_utf8(buf).unwrap()
}

#[test]
fn trace_roundtrip_keeps_columns() {
    let config = GameConfig::default();
    let mut maps = config.init_maps(1).unwrap();
    let sc = Scenario::static_cycles(1).unwrap();
    let ep = run_episode(
        &config,
        &sc,
        GainPolicy::Maps(&mut maps),
        EpisodeOptions::evaluate(1).traced(),
    )
    .unwrap();
    let text = to_string(|b| write_trace(b, &prov(), &ep.trace).unwrap());
    assert!(text.starts_with("# config_hash=0123abcd seed=42\nt,T_T,T_Z,T_set,u,K_P,K_I,event\n"));
    let back = read_trace(text.as_bytes()).unwrap();
    assert_eq!(back.len(), ep.trace.len());
    for (a, b) in back.iter().zip(&ep.trace) {
        assert!((a.t - b.t).abs() < 1e-9);
        assert_eq!(
            (a.t_t, a.t_z, a.u, a.kp, a.ki, a.event),
            (b.t_t, b.t_z, b.u, b.kp, b.ki, b.event)
        );
    }
}

#[test]
fn event_log_has_one_row_per_event() {
    let config = GameConfig::default();
    let mut maps = config.init_maps(1).unwrap();
    let sc = Scenario::static_cycles(1).unwrap();
    let ep = run_episode(
        &config,
        &sc,
        GainPolicy::Maps(&mut maps),
        EpisodeOptions::evaluate(1),
    )
    .unwrap();
    let text = to_string(|b| {
        write_event_log(b, &prov(), &[PlayerId::Kp, PlayerId::Ki], &ep.report.log).unwrap()
    });
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("# config_hash=0123abcd seed=42"));
    let head = lines.next().unwrap();
    assert!(head.ends_with("action_kp,action_ki,utility_kp,utility_ki,truncated"));
    assert_eq!(lines.count(), ep.report.log.len());
}

#[test]
fn missing_player_metadata_is_rejected() {
    let text = "# config_hash=x seed=1\nplayer,i0,i1,s0,s1,action,utility,initialized\n";
    assert!(matches!(read_maps(text), Err(Error::MapTable(_))));
}

#[test]
fn short_map_table_is_rejected() {
    let config = GameConfig::default();
    let maps = config.init_maps(3).unwrap();
    let pairs: Vec<_> = config.players.iter().map(|p| p.id).zip(&maps).collect();
    let text = to_string(|b| write_maps(b, &prov(), &pairs).unwrap());
    let truncated: String = text
        .lines()
        .take(text.lines().count() - 1)
        .map(|l| format!("{l}\n"))
        .collect();
    assert!(matches!(read_maps(&truncated), Err(Error::MapTable(_))));
}

proptest! {
    #[test]
    fn maps_roundtrip(seed in 0u64..500, trained in proptest::collection::vec((0usize..16, 0.0f64..1.0), 0..10)) {
        let config = GameConfig::default();
        let mut maps = config.init_maps(seed).unwrap();
        for (k, u) in &trained {
            for m in &mut maps {
                let a = m.supports()[*k].action;
                m.set_support(*k, a, *u, true).unwrap();
            }
        }
        let pairs: Vec<_> = config.players.iter().map(|p| p.id).zip(&maps).collect();
        let text = to_string(|b| write_maps(b, &prov(), &pairs).unwrap());
        let back = read_maps(&text).unwrap();
        prop_assert_eq!(back.len(), maps.len());
        for ((id, m), (want_id, want)) in back.iter().zip(config.players.iter().map(|p| p.id).zip(&maps)) {
            prop_assert_eq!(*id, want_id);
            prop_assert_eq!(m, want);
        }
    }
}
