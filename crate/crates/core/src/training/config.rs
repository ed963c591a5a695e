use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::ModelConfig;
use crate::nn::AdamConfig;
use crate::preconv::DEFAULT_SIGMAS;
use crate::renderer::RenderSettings;
use crate::scenes::AnalyticAmbient;
use crate::training::losses::LossWeights;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Scene directory or manifest; relative paths resolve against the config file.
    pub scene: PathBuf,
    pub seed: u64,
    pub iterations: u64,
    pub batch_size: usize,
    /// Probability that a batch ray is an object pixel rather than a background one.
    pub image_fraction: f64,
    pub lr: f64,
    /// Learning rate reached at the last iteration (log-linear decay).
    pub lr_final: f64,
    pub adam: AdamConfig,
    pub weights: LossWeights,
    pub sigmas: Vec<f64>,
    pub checkpoint_every: u64,
    pub eval_every: u64,
    /// Test views rendered per evaluation; 0 means all.
    pub eval_views: usize,
    /// Fixed work partition of a batch; gradients are reduced in this order.
    pub chunks: usize,
    /// Rays traced together inside a chunk.
    pub sub_batch: usize,
    pub write_preconv_cache: bool,
    pub model: ModelConfig,
    pub render: RenderSettings,
    /// Frozen analytic environment instead of the learned one.
    pub ambient: Option<AnalyticAmbient>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            scene: PathBuf::new(),
            seed: 0,
            iterations: 50_000,
            batch_size: 4096,
            image_fraction: 0.5,
            lr: 5e-4,
            lr_final: 5e-5,
            adam: AdamConfig::default(),
            weights: LossWeights::default(),
            sigmas: DEFAULT_SIGMAS.to_vec(),
            checkpoint_every: 5_000,
            eval_every: 5_000,
            eval_views: 0,
            chunks: 8,
            sub_batch: 8,
            write_preconv_cache: true,
            model: ModelConfig::default(),
            render: RenderSettings::default(),
            ambient: None,
        }
    }
}

impl TrainConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: TrainConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())))?;
        if cfg.scene.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.scene = dir.join(&cfg.scene);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.adam.validate()?;
        self.weights.validate()?;
        self.model.validate()?;
        self.render.validate()?;
        if let Some(a) = &self.ambient {
            a.validate()?;
        }
        if self.batch_size == 0 || self.chunks == 0 || self.sub_batch == 0 {
            return Err(Error::Config(
                "batch_size, chunks and sub_batch must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.image_fraction) {
            return Err(Error::Config(format!(
                "image_fraction must be in [0, 1], got {}",
                self.image_fraction
            )));
        }
        if !(self.lr > 0.0 && self.lr_final > 0.0 && self.lr.is_finite() && self.lr_final.is_finite()) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if self.sigmas.is_empty() || self.sigmas.windows(2).any(|w| w[1] <= w[0]) || self.sigmas[0] < 0.0 {
            return Err(Error::Config(
                "sigmas must be non-negative and strictly increasing".into(),
            ));
        }
        Ok(())
    }

    /// Learning rate used for the update made at `iteration`.
    pub fn lr_at(&self, iteration: u64) -> f64 {
        if self.iterations <= 1 {
            return self.lr;
        }
        let t = (iteration as f64 / (self.iterations - 1) as f64).min(1.0);
        self.lr * (self.lr_final / self.lr).powf(t)
    }
}
