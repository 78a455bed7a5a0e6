use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use gametune::experiment::{beats_baseline, setpoint_suite, summarize_baseline, BaselineSummary};
use gametune::plant::{Scenario, RANDOM_DURATION};
use gametune::report::{read_maps, write_event_log, write_maps, write_trace, Provenance};
use gametune::seed::{SeedStreams, Stream};
use gametune::tuner::{
    detect_action_bounds, evaluate, evaluate_baseline, random_baseline_gains, run_episode, train,
    EpisodeOptions, GainPolicy, GameConfig, GridSpec,
};
use gametune::{ActionBounds, PerformanceMap, PlayerId, RunReport};
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, ScenarioRef};
use crate::error::CliError;

pub struct Context {
    pub cfg: ExperimentConfig,
    pub prov: Provenance,
}

impl Context {
    pub fn new(cfg: ExperimentConfig) -> Result<Self, CliError> {
        cfg.validate()?;
        let prov = Provenance::new(cfg.hash(), cfg.seed);
        std::fs::create_dir_all(&cfg.out).map_err(|e| output_error(&cfg.out, e))?;
        Ok(Self { cfg, prov })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.cfg.out.join(name)
    }

    fn create(&self, name: &str) -> Result<(PathBuf, BufWriter<File>), CliError> {
        let path = self.path(name);
        let file = File::create(&path).map_err(|e| output_error(&path, e))?;
        Ok((path, BufWriter::new(file)))
    }

    /// CSV writer positioned after the provenance line.
    fn csv(&self, name: &str) -> Result<csv::Writer<BufWriter<File>>, CliError> {
        let (path, mut w) = self.create(name)?;
        w.write_all(self.prov.header_line().as_bytes())
            .map_err(|e| output_error(&path, e))?;
        Ok(csv::Writer::from_writer(w))
    }

    fn toml<T: Serialize>(&self, name: &str, doc: &T) -> Result<PathBuf, CliError> {
        let body = toml::to_string(doc).map_err(|e| CliError::Config(e.to_string()))?;
        let (path, mut w) = self.create(name)?;
        w.write_all(self.prov.header_line().as_bytes())
            .and_then(|_| w.write_all(body.as_bytes()))
            .and_then(|_| w.flush())
            .map_err(|e| output_error(&path, e))?;
        Ok(path)
    }

    fn with_file<F>(&self, name: &str, write: F) -> Result<PathBuf, CliError>
    where
        F: FnOnce(&mut BufWriter<File>) -> gametune::Result<()>,
    {
        let (path, mut w) = self.create(name)?;
        write(&mut w)?;
        w.flush().map_err(|e| output_error(&path, e))?;
        Ok(path)
    }

    fn streams(&self) -> SeedStreams {
        SeedStreams::new(self.cfg.seed)
    }
}

fn output_error(path: &Path, source: std::io::Error) -> CliError {
    CliError::Output {
        path: path.display().to_string(),
        source,
    }
}

fn csv_error(e: csv::Error) -> CliError {
    CliError::Core(e.into())
}

fn finish<W: Write>(mut w: csv::Writer<W>) -> Result<(), CliError> {
    w.flush().map_err(|e| CliError::Core(e.into()))
}

fn bounds_of(game: &GameConfig, id: PlayerId) -> Result<ActionBounds, CliError> {
    game.player(id)
        .map(|p| p.bounds)
        .ok_or_else(|| CliError::Config(format!("game.players has no {id} player")))
}

/// Contents of `bounds.toml`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsDoc {
    pub kp: ActionBounds,
    pub ki: ActionBounds,
    pub threshold: f64,
    pub area_ratio: f64,
}

impl BoundsDoc {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read bounds {}: {e}", path.display())))?;
        let doc: Self = toml::from_str(&text)
            .map_err(|e| CliError::Config(format!("bounds {}: {e}", path.display())))?;
        doc.kp.validate()?;
        doc.ki.validate()?;
        Ok(doc)
    }
}

pub fn bounds(ctx: &Context) -> Result<(), CliError> {
    let game = &ctx.cfg.game;
    let scenario = ctx.cfg.resolve_scenario()?;
    let grid = GridSpec {
        kp_range: bounds_of(game, PlayerId::Kp)?,
        ki_range: bounds_of(game, PlayerId::Ki)?,
        resolution: ctx.cfg.bounds.resolution,
    };
    let result = detect_action_bounds(game, &scenario, grid, ctx.cfg.bounds.dwell)?;

    let mut w = ctx.csv("bounds_scores.csv")?;
    w.write_record(["i", "j", "kp", "ki", "score"])
        .map_err(csv_error)?;
    for c in &result.scores {
        w.serialize((c.i, c.j, c.kp, c.ki, c.score))
            .map_err(csv_error)?;
    }
    finish(w)?;

    let doc = BoundsDoc {
        kp: result.kp_bounds,
        ki: result.ki_bounds,
        threshold: result.threshold,
        area_ratio: result.area_ratio(),
    };
    let path = ctx.toml("bounds.toml", &doc)?;
    println!(
        "kp [{}, {}]  ki [{}, {}]  area {:.1}%  -> {}",
        doc.kp.min,
        doc.kp.max,
        doc.ki.min,
        doc.ki.max,
        100.0 * doc.area_ratio,
        path.display()
    );
    Ok(())
}

pub fn train_cmd(ctx: &Context, bounds_file: Option<&Path>) -> Result<(), CliError> {
    let path = bounds_file
        .map(Path::to_path_buf)
        .or_else(|| ctx.cfg.bounds.file.clone())
        .unwrap_or_else(|| ctx.path("bounds.toml"));
    let mut game = ctx.cfg.game.clone();
    if path.exists() {
        let doc = BoundsDoc::load(&path)?;
        game = game.with_bounds(doc.kp, doc.ki);
    } else {
        eprintln!(
            "warning: no bounds file at {}; training inside the configured action ranges",
            path.display()
        );
    }
    let scenario = ctx.cfg.resolve_scenario()?;
    let outcome = train(&game, &scenario, ctx.cfg.seed)?;

    let pairs: Vec<_> = game
        .players
        .iter()
        .map(|p| p.id)
        .zip(&outcome.maps)
        .collect();
    let maps_path = ctx.with_file("maps.csv", |w| write_maps(w, &ctx.prov, &pairs))?;

    let mut w = ctx.csv("learning_curve.csv")?;
    w.write_record([
        "episode",
        "avg_settling_time",
        "max_overshoot",
        "max_undershoot",
        "overshoot_dev",
        "undershoot_dev",
        "events",
        "truncated",
        "diverged",
    ])
    .map_err(csv_error)?;
    for (k, r) in outcome.curve.iter().enumerate() {
        w.serialize((
            k,
            r.avg_settling_time,
            r.max_overshoot,
            r.max_undershoot,
            r.overshoot_dev,
            r.undershoot_dev,
            r.events,
            r.truncated,
            u8::from(r.divergence.is_some()),
        ))
        .map_err(csv_error)?;
    }
    finish(w)?;

    let mut maps = outcome.maps.clone();
    let ep = run_episode(
        &game,
        &scenario,
        GainPolicy::Maps(&mut maps),
        EpisodeOptions::evaluate(ctx.cfg.seed).traced(),
    )?;
    ctx.with_file("trace.csv", |w| write_trace(w, &ctx.prov, &ep.trace))?;
    let ids: Vec<_> = game.players.iter().map(|p| p.id).collect();
    ctx.with_file("events.csv", |w| {
        write_event_log(w, &ctx.prov, &ids, &ep.report.log)
    })?;

    println!(
        "{} episodes, greedy run: {} events, avg settling {:.1} s, peak {:.3} K -> {}",
        outcome.curve.len(),
        ep.report.events,
        ep.report.avg_settling_time,
        ep.report.max_overshoot,
        maps_path.display()
    );
    Ok(())
}

/// Reads a map table and lines it up with the configured players.
pub fn load_maps(game: &mut GameConfig, path: &Path) -> Result<Vec<PerformanceMap>, CliError> {
    if !path.exists() {
        return Err(CliError::Config(format!(
            "maps file not found: {} (run `gametune train` first or pass --maps)",
            path.display()
        )));
    }
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read maps {}: {e}", path.display())))?;
    let mut loaded = read_maps(&text)?;
    let mut maps = Vec::with_capacity(game.players.len());
    for p in &mut game.players {
        let k = loaded
            .iter()
            .position(|(id, _)| *id == p.id)
            .ok_or_else(|| {
                CliError::Config(format!("{} has no map for player {}", path.display(), p.id))
            })?;
        let (_, m) = loaded.swap_remove(k);
        p.bounds = m.bounds();
        maps.push(m);
    }
    Ok(maps)
}

fn maps_path(ctx: &Context, maps: Option<&Path>) -> PathBuf {
    maps.map(Path::to_path_buf)
        .unwrap_or_else(|| ctx.path("maps.csv"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub scenario: String,
    pub setpoint: Option<f64>,
    pub avg_settling_time: f64,
    pub max_overshoot: f64,
    pub max_undershoot: f64,
    pub overshoot_dev: f64,
    pub events: usize,
    pub truncated: usize,
}

impl SummaryRow {
    fn new(scenario: &str, setpoint: Option<f64>, r: &RunReport) -> Self {
        Self {
            scenario: scenario.into(),
            setpoint,
            avg_settling_time: r.avg_settling_time,
            max_overshoot: r.max_overshoot,
            max_undershoot: r.max_undershoot,
            overshoot_dev: r.overshoot_dev,
            events: r.events,
            truncated: r.truncated,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub rows: Vec<SummaryRow>,
}

pub fn validate(ctx: &Context, maps: Option<&Path>) -> Result<(), CliError> {
    let mut game = ctx.cfg.game.clone();
    let maps = load_maps(&mut game, &maps_path(ctx, maps))?;
    let seed = ctx.cfg.seed;

    let mut rows = Vec::new();
    let fixed = Scenario::static_cycles(gametune::plant::STATIC_CYCLES)?;
    rows.push(SummaryRow::new(
        "static",
        None,
        &evaluate(&game, &fixed, &maps, seed)?,
    ));
    let random = Scenario::random(RANDOM_DURATION, ctx.streams().derive(Stream::Scenario, 1))?;
    rows.push(SummaryRow::new(
        "random",
        None,
        &evaluate(&game, &random, &maps, seed)?,
    ));
    if !matches!(&ctx.cfg.scenario, ScenarioRef::Named(n) if n == "static" || n == "random") {
        let own = ctx.cfg.resolve_scenario()?;
        rows.push(SummaryRow::new(
            "configured",
            None,
            &evaluate(&game, &own, &maps, seed)?,
        ));
    }
    for row in setpoint_suite(&game, &maps, seed)? {
        let r = row.report.for_setpoint(row.setpoint);
        rows.push(SummaryRow::new("setpoint", Some(row.setpoint), &r));
    }

    println!(
        "{:<11} {:>9} {:>10} {:>10} {:>10} {:>7}",
        "scenario", "setpoint", "settle_s", "max_K", "min_K", "events"
    );
    for r in &rows {
        let sp = r.setpoint.map_or("-".to_string(), |s| format!("{s:.2}"));
        println!(
            "{:<11} {:>9} {:>10.1} {:>10.3} {:>10.3} {:>7}",
            r.scenario, sp, r.avg_settling_time, r.max_overshoot, r.max_undershoot, r.events
        );
    }
    ctx.toml("summary.toml", &Summary { rows })?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BaselineDoc {
    summary: BaselineSummary,
}

pub fn baseline(ctx: &Context, maps: Option<&Path>) -> Result<(), CliError> {
    let game = &ctx.cfg.game;
    let scenario = ctx.cfg.resolve_scenario()?;
    let gains = random_baseline_gains(
        bounds_of(game, PlayerId::Kp)?,
        bounds_of(game, PlayerId::Ki)?,
        ctx.cfg.baseline.count,
        ctx.cfg.seed,
    );
    let results = evaluate_baseline(game, &gains, &scenario, ctx.cfg.seed)?;

    let mut w = ctx.csv("baseline.csv")?;
    w.write_record([
        "index",
        "kp",
        "ki",
        "avg_settling_time",
        "max_overshoot",
        "overshoot_dev",
        "events",
        "diverged",
    ])
    .map_err(csv_error)?;
    for (k, b) in results.iter().enumerate() {
        let (st, ov, dev, n) = b
            .report
            .as_ref()
            .map_or((f64::NAN, f64::NAN, f64::NAN, 0), |r| {
                (
                    r.avg_settling_time,
                    r.max_overshoot,
                    r.overshoot_dev,
                    r.events,
                )
            });
        w.serialize((
            k,
            b.gains.kp,
            b.gains.ki,
            st,
            ov,
            dev,
            n,
            u8::from(b.diverged()),
        ))
        .map_err(csv_error)?;
    }
    finish(w)?;

    let summary = summarize_baseline(&results);
    ctx.toml("baseline_summary.toml", &BaselineDoc { summary })?;
    println!(
        "{} controllers, {} diverged, median settling {:.1} s, median overshoot {:.3} K",
        summary.count, summary.diverged, summary.median_settling, summary.median_overshoot
    );

    if let Some(path) = maps {
        let mut tuned_game = game.clone();
        let maps = load_maps(&mut tuned_game, path)?;
        let tuned = evaluate(&tuned_game, &scenario, &maps, ctx.cfg.seed)?;
        let mut w = ctx.csv("comparison.csv")?;
        w.write_record([
            "controller",
            "avg_settling_time",
            "overshoot_dev",
            "events",
            "beats_baseline",
        ])
        .map_err(csv_error)?;
        w.serialize((
            "baseline_median",
            summary.median_settling,
            summary.median_overshoot,
            "",
            "",
        ))
        .map_err(csv_error)?;
        w.serialize((
            "tuned",
            tuned.avg_settling_time,
            tuned.overshoot_dev,
            tuned.events.to_string(),
            u8::from(beats_baseline(&tuned, &summary)).to_string(),
        ))
        .map_err(csv_error)?;
        finish(w)?;
        println!(
            "tuned: settling {:.1} s, overshoot {:.3} K, beats baseline: {}",
            tuned.avg_settling_time,
            tuned.overshoot_dev,
            beats_baseline(&tuned, &summary)
        );
    }
    Ok(())
}
