//! Experiment configuration. One JSON document holds every setting of a run.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::env::{EnvConfig, RacingEnv};
use crate::error::{Error, Result};
use crate::policy::{NetworkSpec, Policy};
use crate::ppo::PpoConfig;
use crate::render::DomainAppearance;
use crate::track::{builtin_names, builtin_track, Track};

/// Environment variable that overrides the configured seed.
pub const SEED_ENV: &str = "ATTNRACER_SEED";

/// A builtin appearance by name, or a full description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AppearanceChoice {
    Named(String),
    Custom(DomainAppearance),
}

impl AppearanceChoice {
    pub fn resolve(&self) -> Result<DomainAppearance> {
        let a = match self {
            Self::Named(n) => DomainAppearance::named(n)?,
            Self::Custom(a) => a.clone(),
        };
        a.validate()?;
        Ok(a)
    }
}

/// A network preset by name, or a full spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NetworkChoice {
    Preset(String),
    Custom(NetworkSpec),
}

/// A checkpoint entered into a transfer matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointEntry {
    /// Appearance the checkpoint was trained under.
    pub train: String,
    pub path: PathBuf,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub appearances: Vec<String>,
    pub episodes: usize,
    /// Transfer-matrix inputs.
    pub checkpoints: Vec<CheckpointEntry>,
    /// Track for evaluation; the training track when absent.
    pub track: Option<String>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            appearances: ["asphalt", "concrete", "carpet", "wood", "spotlight"]
                .map(String::from)
                .to_vec(),
            episodes: 5,
            checkpoints: Vec::new(),
            track: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Builtin track name or path to a track JSON file.
    pub track: String,
    pub appearance: AppearanceChoice,
    pub network: NetworkChoice,
    pub env: EnvConfig,
    pub ppo: PpoConfig,
    pub eval: EvalConfig,
    /// Where training writes metrics and checkpoints.
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            track: "loop-A".into(),
            appearance: AppearanceChoice::Named("asphalt".into()),
            network: NetworkChoice::Preset("dacnn-shallow".into()),
            env: EnvConfig::default(),
            ppo: PpoConfig::default(),
            eval: EvalConfig::default(),
            output_dir: PathBuf::from("runs/default"),
        }
    }
}

/// Builtin track by name, else a track file.
pub fn load_track(name_or_path: &str) -> Result<Track> {
    if builtin_names().iter().any(|n| n.eq_ignore_ascii_case(name_or_path)) {
        return builtin_track(name_or_path);
    }
    let path = Path::new(name_or_path);
    if path.is_file() {
        return Track::load(path);
    }
    Err(Error::Config(format!(
        "track {name_or_path:?} is neither a builtin ({}) nor a readable file",
        builtin_names().join(", ")
    )))
}

impl ExperimentConfig {
    /// Parses JSON and applies the seed override from [`SEED_ENV`].
    pub fn from_json(text: &str) -> Result<Self> {
        let mut cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        if let Ok(s) = std::env::var(SEED_ENV) {
            cfg.seed = s
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV}={s:?} is not an unsigned integer")))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.ppo.validate()?;
        self.appearance.resolve()?;
        self.network_spec()?;
        load_track(&self.track)?;
        if let Some(t) = &self.eval.track {
            load_track(t)?;
        }
        for a in &self.eval.appearances {
            DomainAppearance::named(a)?;
        }
        if self.eval.episodes == 0 {
            return Err(Error::Config("eval.episodes must be at least 1".into()));
        }
        Ok(())
    }

    /// Network sized to the configured camera and action grid.
    pub fn network_spec(&self) -> Result<NetworkSpec> {
        let input = (3, self.env.camera.height, self.env.camera.width);
        let (s, t) = (self.env.actions.steering_bins, self.env.actions.throttle_bins());
        let spec = match &self.network {
            NetworkChoice::Preset(name) => NetworkSpec::preset(name, input, s, t)?,
            NetworkChoice::Custom(spec) => {
                spec.validate()?;
                spec.clone()
            }
        };
        if spec.input != input || spec.num_actions() != s * t {
            return Err(Error::Config(format!(
                "network expects input {:?} and {} actions; environment gives {input:?} and {}",
                spec.input,
                spec.num_actions(),
                s * t
            )));
        }
        Ok(spec)
    }

    /// The PPO settings with the experiment seed applied.
    pub fn ppo_config(&self) -> PpoConfig {
        PpoConfig {
            seed: self.seed,
            ..self.ppo.clone()
        }
    }

    /// Training environments, each with its own seed stream.
    pub fn make_envs(&self) -> Result<Vec<RacingEnv>> {
        let track = Arc::new(load_track(&self.track)?);
        let appearance = self.appearance.resolve()?;
        (0..self.ppo.num_envs)
            .map(|k| {
                RacingEnv::new(
                    track.clone(),
                    appearance.clone(),
                    self.env.clone(),
                    env_seed(self.seed, k),
                )
            })
            .collect()
    }

    pub fn make_policy(&self) -> Result<Policy> {
        Policy::new(self.network_spec()?, self.seed)
    }
}

/// Seed of training environment `k` for experiment seed `seed`.
pub fn env_seed(seed: u64, k: usize) -> u64 {
    seed.wrapping_mul(1_000_003).wrapping_add(k as u64 + 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_roundtrip() {
        let cfg = ExperimentConfig::default();
        let back: ExperimentConfig = serde_json::from_str(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
        cfg.validate().unwrap();
        assert_eq!(cfg.network_spec().unwrap().annotation_count().unwrap(), 35);
    }

    #[test]
    fn partial_documents_fill_defaults() {
        let cfg: ExperimentConfig = serde_json::from_str(
            r#"{"track": "oval", "network": "baseline", "ppo": {"iterations": 2},
                "appearance": {"name": "mine", "surface": "wood"}}"#,
        )
        .unwrap();
        assert_eq!(cfg.ppo.iterations, 2);
        assert_eq!(cfg.ppo.clip, 0.2);
        assert_eq!(cfg.appearance.resolve().unwrap().name, "mine");
        assert!(!cfg.network_spec().unwrap().has_attention());
    }

    #[test]
    fn rejects_bad_documents() {
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"trak": "oval"}"#).is_err());
        let bad = ExperimentConfig {
            track: "nowhere".into(),
            ..ExperimentConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = ExperimentConfig {
            network: NetworkChoice::Preset("huge".into()),
            ..ExperimentConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
