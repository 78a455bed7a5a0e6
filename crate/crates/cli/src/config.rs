//! Experiment configuration document.

use std::path::{Path, PathBuf};

use gametune::plant::{standard_scenario, Scenario, ScenarioKind};
use gametune::seed::{SeedStreams, Stream};
use gametune::tuner::{GameConfig, DEFAULT_DWELL, DEFAULT_GRID_RESOLUTION};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    /// Output directory, relative to the working directory.
    #[serde(default = "default_out")]
    pub out: PathBuf,
    /// `"static"`, `"random"`, a path to a scenario file, or an inline table.
    #[serde(default)]
    pub scenario: ScenarioRef,
    #[serde(default)]
    pub game: GameConfig,
    #[serde(default)]
    pub bounds: BoundsOptions,
    #[serde(default)]
    pub baseline: BaselineOptions,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: default_out(),
            scenario: ScenarioRef::default(),
            game: GameConfig::default(),
            bounds: BoundsOptions::default(),
            baseline: BaselineOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScenarioRef {
    Named(String),
    Inline(Scenario),
}

impl Default for ScenarioRef {
    fn default() -> Self {
        ScenarioRef::Named("static".into())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoundsOptions {
    pub resolution: usize,
    /// Settling window per transition, seconds.
    pub dwell: f64,
    /// Bounds document read by `train`; defaults to `<out>/bounds.toml`.
    pub file: Option<PathBuf>,
}

impl Default for BoundsOptions {
    fn default() -> Self {
        Self {
            resolution: DEFAULT_GRID_RESOLUTION,
            dwell: DEFAULT_DWELL,
            file: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineOptions {
    pub count: usize,
}

impl Default for BaselineOptions {
    fn default() -> Self {
        Self { count: 10 }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path`. Relative scenario paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text)?;
        if let ScenarioRef::Named(name) = &cfg.scenario {
            if !is_builtin(name) && Path::new(name).is_relative() {
                if let Some(dir) = path.parent() {
                    cfg.scenario =
                        ScenarioRef::Named(dir.join(name).to_string_lossy().into_owned());
                }
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.game
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        if self.bounds.resolution < 2 {
            return Err(CliError::Config(format!(
                "bounds.resolution must be >= 2, got {}",
                self.bounds.resolution
            )));
        }
        if !(self.bounds.dwell > 0.0 && self.bounds.dwell.is_finite()) {
            return Err(CliError::Config(format!(
                "bounds.dwell must be > 0, got {}",
                self.bounds.dwell
            )));
        }
        if self.baseline.count == 0 {
            return Err(CliError::Config("baseline.count must be >= 1".into()));
        }
        if let ScenarioRef::Inline(s) = &self.scenario {
            s.validate().map_err(|e| CliError::Config(e.to_string()))?;
        }
        Ok(())
    }

    /// Hex SHA-256 prefix of the canonical document. Seed and output
    /// directory are left out.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.seed = 0;
        canonical.out = PathBuf::new();
        let text = toml::to_string(&canonical).expect("config serializes");
        Sha256::digest(text.as_bytes())
            .iter()
            .take(8)
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn resolve_scenario(&self) -> Result<Scenario, CliError> {
        match &self.scenario {
            ScenarioRef::Inline(s) => Ok(s.clone()),
            ScenarioRef::Named(name) => match name.as_str() {
                "static" => Ok(standard_scenario(ScenarioKind::Static, 0)?),
                "random" => Ok(standard_scenario(
                    ScenarioKind::Random,
                    SeedStreams::new(self.seed).derive(Stream::Scenario, 0),
                )?),
                path => Scenario::load(Path::new(path))
                    .map_err(|e| CliError::Config(format!("scenario {path}: {e}"))),
            },
        }
    }
}

fn is_builtin(name: &str) -> bool {
    matches!(name, "static" | "random")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_all_defaults() {
        assert_eq!(
            ExperimentConfig::from_toml_str("").unwrap(),
            ExperimentConfig::default()
        );
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for doc in [
            "colour = 1",
            "[game]\nepisodez = 3",
            "[game.trigger]\ntheta = 1.0",
            "[bounds]\nres = 3",
        ] {
            assert!(
                matches!(
                    ExperimentConfig::from_toml_str(doc),
                    Err(CliError::Config(_))
                ),
                "{doc}"
            );
        }
    }

    #[test]
    fn hash_ignores_seed_and_out() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.seed = 9;
        b.out = PathBuf::from("elsewhere");
        assert_eq!(a.hash(), b.hash());
        b.game.episodes = 3;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 16);
    }

    #[test]
    fn defaults_roundtrip_through_toml() {
        let cfg = ExperimentConfig::default();
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn inline_scenario_is_accepted() {
        let doc = "[scenario]\nduration = 100.0\n[[scenario.segments]]\nt_from = 0.0\nload_kw = 2.0\nsetpoint = 298.15\nt_z_supply = 292.65\n";
        let cfg = ExperimentConfig::from_toml_str(doc).unwrap();
        assert_eq!(cfg.resolve_scenario().unwrap().duration, 100.0);
    }
}
