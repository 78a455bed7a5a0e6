use std::path::Path;
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use gametune::report::{read_maps, read_trace};
use tempfile::TempDir;

fn gametune(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gametune"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("exp.toml");
    std::fs::write(&path, body).unwrap();
    path.to_string_lossy().into_owned()
}

const QUICK: &str = "seed = 3\n[game]\nepisodes = 1\n";

const BOXED_PLAYERS: &str = "[[game.players]]\nid = \"kp\"\nbounds = { min = 1.0, max = 2.0 }\nbarrier_coeff = 0.8\nutility = { alpha_x = 0.3, alpha_y = 0.3 }\n\
     [[game.players]]\nid = \"ki\"\nbounds = { min = 0.068, max = 0.085 }\nbarrier_coeff = 10.0\nutility = { alpha_x = 0.1, alpha_y = 0.1 }\n";

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn pipeline(dir: &Path) {
    let cfg = write_config(dir, QUICK);
    for cmd in ["bounds", "train", "validate", "baseline"] {
        let o = gametune(&[cmd, "--config", &cfg, "--out", "out"], dir);
        assert!(o.status.success(), "{cmd}: {}", stderr(&o));
    }
}

#[test]
fn reruns_are_byte_identical() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    pipeline(a.path());
    pipeline(b.path());
    for name in [
        "bounds_scores.csv",
        "bounds.toml",
        "maps.csv",
        "learning_curve.csv",
        "trace.csv",
        "events.csv",
        "summary.toml",
        "baseline.csv",
    ] {
        let x = std::fs::read(a.path().join("out").join(name)).unwrap();
        let y = std::fs::read(b.path().join("out").join(name)).unwrap();
        assert_eq!(x, y, "{name}");
    }
}

#[test]
fn outputs_carry_provenance_and_parse_back() {
    let dir = TempDir::new().unwrap();
    pipeline(dir.path());
    let out = dir.path().join("out");
    let header = std::fs::read_to_string(out.join("maps.csv")).unwrap();
    let first = header.lines().next().unwrap().to_string();
    assert!(
        first.starts_with("# config_hash=") && first.ends_with(" seed=3"),
        "{first}"
    );
    for entry in std::fs::read_dir(&out).unwrap() {
        let text = std::fs::read_to_string(entry.unwrap().path()).unwrap();
        assert_eq!(text.lines().next().unwrap(), first);
    }

    let maps = read_maps(&header).unwrap();
    assert_eq!(maps.len(), 2);
    let trace = read_trace(std::fs::File::open(out.join("trace.csv")).unwrap()).unwrap();
    assert!(!trace.is_empty());
    let bounds: toml::Table =
        toml::from_str(&std::fs::read_to_string(out.join("bounds.toml")).unwrap()).unwrap();
    assert!(bounds.contains_key("kp") && bounds.contains_key("ki"));
    let summary: toml::Table =
        toml::from_str(&std::fs::read_to_string(out.join("summary.toml")).unwrap()).unwrap();
    assert_eq!(summary["rows"].as_array().unwrap().len(), 2 + 5);
}

#[test]
fn seed_flag_changes_the_header_not_the_hash() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), QUICK);
    for (seed, out) in [("3", "a"), ("4", "b")] {
        assert!(gametune(
            &["baseline", "--config", &cfg, "--seed", seed, "--out", out],
            dir.path()
        )
        .status
        .success());
    }
    let head = |d: &str| {
        let t = std::fs::read_to_string(dir.path().join(d).join("baseline.csv")).unwrap();
        t.lines().next().unwrap().to_string()
    };
    let (a, b) = (head("a"), head("b"));
    assert_eq!(a.split(' ').nth(1), b.split(' ').nth(1));
    assert!(a.ends_with("seed=3") && b.ends_with("seed=4"));
}

#[test]
fn missing_maps_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let o = gametune(
        &["validate", "--out", "out", "--maps", "nope.csv"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("maps file not found"));
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "[game]\nepisodez = 3\n");
    let o = gametune(&["bounds", "--config", &cfg], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("episodez"));
}

#[test]
fn bad_flag_value_is_rejected() {
    let dir = TempDir::new().unwrap();
    let o = gametune(&["train", "--learner", "sgd"], dir.path());
    assert!(!o.status.success());
}

#[test]
fn train_without_bounds_warns_and_falls_back() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), &format!("{QUICK}{BOXED_PLAYERS}"));
    let o = gametune(&["train", "--config", &cfg, "--out", "out"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("warning: no bounds file"));
    let maps =
        read_maps(&std::fs::read_to_string(dir.path().join("out/maps.csv")).unwrap()).unwrap();
    assert_eq!(maps[0].1.bounds().max, 2.0);
}

#[test]
fn all_divergent_grid_exits_4() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "[bounds]\nresolution = 2\n\
         [[game.players]]\nid = \"kp\"\nbounds = { min = 0.0, max = 0.001 }\nbarrier_coeff = 0.8\nutility = { alpha_x = 0.3, alpha_y = 0.3 }\n\
         [[game.players]]\nid = \"ki\"\nbounds = { min = 0.0, max = 0.0001 }\nbarrier_coeff = 10.0\nutility = { alpha_x = 0.1, alpha_y = 0.1 }\n",
    );
    let o = gametune(&["bounds", "--config", &cfg, "--out", "out"], dir.path());
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
}

#[test]
fn divergent_greedy_run_exits_3() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "[game]\nepisodes = 1\n\
         [[game.players]]\nid = \"kp\"\nbounds = { min = 0.0, max = 0.000001 }\nbarrier_coeff = 0.8\nutility = { alpha_x = 0.3, alpha_y = 0.3 }\n\
         [[game.players]]\nid = \"ki\"\nbounds = { min = 0.0, max = 0.000001 }\nbarrier_coeff = 10.0\nutility = { alpha_x = 0.1, alpha_y = 0.1 }\n\
         [scenario]\nduration = 600.0\n\
         [[scenario.segments]]\nt_from = 0.0\nload_kw = 2.0\nsetpoint = 298.15\nt_z_supply = 292.65\n\
         [[scenario.segments]]\nt_from = 100.0\nload_kw = 60.0\nsetpoint = 298.15\nt_z_supply = 292.65\n",
    );
    let o = gametune(&["train", "--config", &cfg, "--out", "out"], dir.path());
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(dir.path().join("out/maps.csv").exists());
}

#[test]
fn one_episode_smoke_run_is_quick() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), &format!("{QUICK}{BOXED_PLAYERS}"));
    let start = Instant::now();
    let o = gametune(
        &[
            "train",
            "--config",
            &cfg,
            "--scenario",
            "random",
            "--utility",
            "type1",
            "--learner",
            "br",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(start.elapsed() < Duration::from_secs(10));
    assert!(dir.path().join("out/trace.csv").exists());
}

#[test]
fn scenario_file_path_is_resolved_against_the_config() {
    let dir = TempDir::new().unwrap();
    std::fs::write(
        dir.path().join("flat.toml"),
        "duration = 300.0\n[[segments]]\nt_from = 0.0\nload_kw = 3.0\nsetpoint = 298.15\nt_z_supply = 292.65\n",
    )
    .unwrap();
    let sub = dir.path().join("run");
    std::fs::create_dir(&sub).unwrap();
    let cfg = write_config(
        dir.path(),
        "scenario = \"flat.toml\"\n[game]\nepisodes = 1\n",
    );
    let o = gametune(&["train", "--config", &cfg, "--out", "out"], &sub);
    assert!(o.status.success(), "{}", stderr(&o));
    let trace = read_trace(std::fs::File::open(sub.join("out/trace.csv")).unwrap()).unwrap();
    assert!((trace.last().unwrap().t - 300.0).abs() < 1.0);
}

#[test]
fn demo_config_runs_every_command() {
    let demo = concat!(env!("CARGO_MANIFEST_DIR"), "/configs/demo.toml");
    let dir = TempDir::new().unwrap();
    for cmd in ["bounds", "train", "validate", "baseline"] {
        let o = gametune(&[cmd, "--config", demo, "--out", "out"], dir.path());
        assert!(o.status.success(), "{cmd}: {}", stderr(&o));
    }
    let o = gametune(
        &[
            "baseline",
            "--config",
            demo,
            "--out",
            "out",
            "--maps",
            "out/maps.csv",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));

    let out = dir.path().join("out");
    let summary: toml::Table =
        toml::from_str(&std::fs::read_to_string(out.join("summary.toml")).unwrap()).unwrap();
    let setpoints: Vec<f64> = summary["rows"]
        .as_array()
        .unwrap()
        .iter()
        .filter_map(|r| r.get("setpoint").and_then(|v| v.as_float()))
        .collect();
    assert_eq!(setpoints, [295.15, 296.15, 297.15, 298.15, 299.15]);

    let baseline = std::fs::read_to_string(out.join("baseline.csv")).unwrap();
    assert_eq!(baseline.lines().count(), 2 + 10);
    assert!(baseline.lines().nth(1).unwrap().ends_with(",diverged"));
    let comparison = std::fs::read_to_string(out.join("comparison.csv")).unwrap();
    assert!(comparison.lines().any(|l| l.starts_with("tuned,")));
}
