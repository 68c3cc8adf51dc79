//! Experiment configuration as `section.key = value` text.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::histogram::HistogramConfig;
use crate::model::NetworkConfig;
use crate::scene::SceneParams;
use crate::superpixel::{scale_superpixel_count, SlicConfig};
use crate::train::TrainConfig;

/// Largest seed the text format can hold (its integers are signed 64-bit).
pub const MAX_SEED: u64 = i64::MAX as u64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub seed: u64,
    /// Scenes written by `generate`.
    pub scene_count: usize,
    /// The last `test_scenes` scenes (in sorted order) are held out by `ablate`.
    pub test_scenes: usize,
    pub ablation_seeds: Vec<u64>,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            seed: 0,
            scene_count: 40,
            test_scenes: 10,
            ablation_seeds: vec![0, 1, 2],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    pub scenes: PathBuf,
    pub features: PathBuf,
    pub output: PathBuf,
}

impl Default for PathsSection {
    fn default() -> Self {
        Self {
            scenes: "scenes".into(),
            features: "features".into(),
            output: "out".into(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub scene: SceneParams,
    /// `num_superpixels` is the count for a 500 x 500 image; smaller images scale it by area.
    pub slic: SlicConfig,
    pub histogram: HistogramConfig,
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub paths: PathsSection,
}

impl ExperimentConfig {
    /// Parses `section.key = value` lines; `#` starts a comment. Unknown keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| {
            let msg = e.message().trim().to_owned();
            match e.span() {
                Some(span) => {
                    let line = text[..span.start].matches('\n').count() + 1;
                    Error::Config(format!("line {line}: {msg}"))
                }
                None => Error::Config(msg),
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::format(path, m),
            other => other,
        })
    }

    /// One `section.key = value` line per field, sections in declaration order.
    pub fn to_text(&self) -> Result<String> {
        let value = toml::Value::try_from(self).map_err(|e| Error::Config(e.to_string()))?;
        let mut out = String::new();
        if let toml::Value::Table(sections) = value {
            for (section, fields) in sections {
                if let toml::Value::Table(fields) = fields {
                    for (key, v) in fields {
                        out.push_str(&format!("{section}.{key} = {v}\n"));
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.histogram.validate()?;
        self.train.validate()?;
        self.network_config().validate()?;
        if self.slic.num_superpixels == 0 {
            return Err(Error::Config("slic.num_superpixels must be positive".into()));
        }
        let seeds = std::iter::once(&self.experiment.seed).chain(&self.experiment.ablation_seeds);
        if seeds.into_iter().any(|&s| s > MAX_SEED) {
            return Err(Error::Config(format!("seeds must not exceed {MAX_SEED}")));
        }
        if self.experiment.ablation_seeds.is_empty() {
            return Err(Error::Config("experiment.ablation_seeds must not be empty".into()));
        }
        Ok(())
    }

    /// SLIC settings for an `h x w` image.
    pub fn slic_for(&self, height: usize, width: usize) -> SlicConfig {
        SlicConfig {
            num_superpixels: scale_superpixel_count(self.slic.num_superpixels, height, width),
            ..self.slic
        }
    }

    /// Network settings with class count and histogram length filled from the other sections.
    pub fn network_config(&self) -> NetworkConfig {
        NetworkConfig {
            num_classes: self.scene.num_classes,
            histogram_bins: self.histogram.bins(),
            ..self.network.clone()
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.experiment.seed,
            ..self.train.clone()
        }
    }

    /// Hex SHA-256 of the settings that determine a feature cache.
    pub fn feature_hash(&self) -> String {
        // slic and histogram sections hold no integers outside the i64 range
        let text = self
            .to_text()
            .unwrap_or_default()
            .lines()
            .filter(|l| l.starts_with("slic.") || l.starts_with("histogram."))
            .collect::<Vec<_>>()
            .join("\n");
        Sha256::digest(text.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}
