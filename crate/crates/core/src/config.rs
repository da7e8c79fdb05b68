//! Run configuration: one TOML document covering every stage, with desk
//! and full-size presets and a content hash stamped into every artifact.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::clock::GammaKind;
use crate::env::{EnvConfig, TaskKind};
use crate::error::{Error, Result};
use crate::ppo::eval::IncrementLimits;
use crate::ppo::TrainConfig;
use crate::td2td::{GridSpec, ModelTrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Desk,
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Td2tdConfig {
    pub grid: GridSpec,
    pub resets: usize,
    pub model: ModelTrainConfig,
}

impl Default for Td2tdConfig {
    fn default() -> Self {
        Td2tdConfig {
            grid: GridSpec::default(),
            resets: 100,
            model: ModelTrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub grid: GridSpec,
    /// Consecutive touchdowns averaged per constant-command cell.
    pub touchdowns_per_cell: usize,
    /// Commanded footsteps per random-increments run.
    pub footsteps: usize,
    pub limits: IncrementLimits,
    pub sequence_left: Vec<f64>,
    pub sequence_right: Vec<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            grid: GridSpec::default(),
            touchdowns_per_cell: 20,
            footsteps: 200,
            limits: IncrementLimits::default(),
            sequence_left: crate::ppo::eval::SEQUENCE_LEFT.to_vec(),
            sequence_right: crate::ppo::eval::SEQUENCE_RIGHT.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServeConfig {
    pub port: u16,
    /// Wall-clock period between frames, ms.
    pub frame_period_ms: f64,
    pub faster_than_realtime: bool,
    pub gamma: GammaKind,
}

impl Default for ServeConfig {
    fn default() -> Self {
        ServeConfig {
            port: 8765,
            frame_period_ms: 25.0,
            faster_than_realtime: false,
            gamma: GammaKind::Fixed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    /// Training output: metrics, breakdown CSV, checkpoints.
    pub run_dir: PathBuf,
    pub policy: PathBuf,
    pub dataset: PathBuf,
    pub model: PathBuf,
    pub reports: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            run_dir: "runs/default".into(),
            policy: "runs/default/latest.ckpt".into(),
            dataset: "runs/default/td2td.bin".into(),
            model: "runs/default/td2td_model.ckpt".into(),
            reports: "runs/default/reports".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub preset: Preset,
    pub seed: u64,
    pub workers: usize,
    pub env: EnvConfig,
    pub train: TrainConfig,
    pub td2td: Td2tdConfig,
    pub eval: EvalConfig,
    pub serve: ServeConfig,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::preset(Preset::Desk)
    }
}

impl RunConfig {
    pub fn preset(preset: Preset) -> Self {
        let (train, resets) = match preset {
            Preset::Desk => (TrainConfig::desk(), 100),
            Preset::Full => (TrainConfig::full(), 10_000),
        };
        RunConfig {
            preset,
            seed: 0,
            workers: 1,
            env: EnvConfig::default(),
            train,
            td2td: Td2tdConfig {
                resets,
                ..Default::default()
            },
            eval: EvalConfig::default(),
            serve: ServeConfig::default(),
            paths: Paths::default(),
        }
    }

    /// Small constant-command stepping task used for the training smoke run.
    pub fn stepping_in_place() -> Self {
        let mut c = Self::preset(Preset::Desk);
        c.env.task = TaskKind::Constant {
            l_step: 0.05,
            theta_step: 0.0,
        };
        c
    }

    /// Parses TOML. Missing keys take the values of the named `preset`
    /// (desk when absent).
    pub fn from_toml(text: &str) -> Result<Self> {
        let value: toml::Value = toml::from_str(text).map_err(|e| Error::config(format!("config: {e}")))?;
        let preset = match value.get("preset") {
            Some(p) => p
                .clone()
                .try_into::<Preset>()
                .map_err(|e| Error::config(format!("preset: {e}")))?,
            None => Preset::Desk,
        };
        let mut base = toml::Value::try_from(Self::preset(preset)).map_err(|e| Error::config(e.to_string()))?;
        merge(&mut base, value);
        let cfg: RunConfig = base.try_into().map_err(|e| Error::config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.train.validate()?;
        self.td2td.grid.validate()?;
        self.eval.grid.validate()?;
        if self.workers == 0 {
            return Err(Error::config("workers must be positive"));
        }
        if !(self.serve.frame_period_ms > 0.0) {
            return Err(Error::config("frame_period_ms must be positive"));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form of the effective config.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }
}

/// Recursively overlays `over` onto `base`.
fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_round_trip_through_toml() {
        for p in [Preset::Desk, Preset::Full] {
            let c = RunConfig::preset(p);
            let back = RunConfig::from_toml(&c.to_toml()).unwrap();
            assert_eq!(back, c);
            assert_eq!(back.hash(), c.hash());
        }
    }

    #[test]
    fn partial_file_inherits_preset() {
        let c = RunConfig::from_toml("preset = \"full\"\nseed = 4\n[train]\nepochs = 3\n").unwrap();
        assert_eq!(c.seed, 4);
        assert_eq!(c.train.epochs, 3);
        assert_eq!(c.train.samples_per_iteration, 50_000);
        assert_eq!(c.td2td.resets, 10_000);
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn bad_config_is_rejected() {
        assert!(RunConfig::from_toml("workers = 0").is_err());
        assert!(RunConfig::from_toml("[train]\nlearning_rate = -1.0").is_err());
        assert!(RunConfig::from_toml("not toml =").is_err());
        assert!(RunConfig::from_toml("preset = \"huge\"").is_err());
    }
}
