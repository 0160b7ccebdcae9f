//! Training hyperparameters and the flat key=value config format.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::FusionMode;

/// Where the decoder's frame posteriors come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PosteriorSource {
    /// Dedicated action head fit with uniform-alignment pseudo-labels.
    Head,
    /// Reuse the T-CAM attribute head (identity decomposition only).
    Tcam,
}

impl std::str::FromStr for PosteriorSource {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "head" => Ok(PosteriorSource::Head),
            "tcam" => Ok(PosteriorSource::Tcam),
            other => Err(Error::Config(format!(
                "unknown posterior source \"{other}\" (expected head or tcam)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Decoupled decay multiplies parameters by (1 - lr * wd) before the
    /// Adam update; disabled it is added to the gradient instead.
    pub decoupled_decay: bool,
    pub iterations: usize,
    /// Attribute-vs-task balance in the semantic loss.
    pub lambda: f64,
    /// Temporal-loss weight in the total loss.
    pub beta: f64,
    /// Stage count K of the temporal stream.
    pub stages: usize,
    /// Top-k pooling divisor s.
    pub pool_s: usize,
    /// Temporal convolution kernel length L (odd).
    pub kernel_len: usize,
    /// Encoding dimension F (number of kernels).
    pub enc_dim: usize,
    /// Affine layer output dimension.
    pub hidden_dim: usize,
    pub keep_rate: f64,
    /// Frame cap per video in a training batch (about 9 minutes at the
    /// reference frame rate).
    pub t_max_frames: usize,
    pub fusion: FusionMode,
    /// Optimization steps for the auxiliary frame-classifier head.
    pub aux_iterations: usize,
    /// Learning rate for the (convex) head fit; larger than the model rate.
    pub aux_learning_rate: f64,
    /// Duration cap factor: d_max = ceil(dmax_factor * max lambda).
    pub dmax_factor: f64,
    pub posterior: PosteriorSource,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 10,
            learning_rate: 1e-3,
            weight_decay: 0.005,
            decoupled_decay: true,
            iterations: 20_000,
            lambda: 0.9,
            beta: 0.25,
            stages: 3,
            pool_s: 8,
            kernel_len: 15,
            enc_dim: 64,
            hidden_dim: 256,
            keep_rate: 0.3,
            t_max_frames: 8100,
            fusion: FusionMode::Gated,
            aux_iterations: 1000,
            aux_learning_rate: 0.02,
            dmax_factor: 3.0,
            posterior: PosteriorSource::Head,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Desk-scale preset for synthetic corpora.
    pub fn synthetic() -> Self {
        TrainConfig {
            iterations: 2000,
            kernel_len: 9,
            enc_dim: 32,
            hidden_dim: 32,
            t_max_frames: 512,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("batch_size", self.batch_size),
            ("stages", self.stages),
            ("pool_s", self.pool_s),
            ("kernel_len", self.kernel_len),
            ("enc_dim", self.enc_dim),
            ("hidden_dim", self.hidden_dim),
            ("t_max_frames", self.t_max_frames),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
        }
        if self.kernel_len % 2 == 0 {
            return Err(Error::Config("kernel_len must be odd".into()));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::Config("learning_rate must be > 0".into()));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Config("weight_decay must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config("lambda must be in [0, 1]".into()));
        }
        if self.beta < 0.0 {
            return Err(Error::Config("beta must be >= 0".into()));
        }
        if !(self.keep_rate > 0.0 && self.keep_rate <= 1.0) {
            return Err(Error::Config("keep_rate must be in (0, 1]".into()));
        }
        if self.dmax_factor <= 0.0 {
            return Err(Error::Config("dmax_factor must be > 0".into()));
        }
        Ok(())
    }

    /// Apply one `key=value` setting; unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("invalid value \"{value}\" for key \"{key}\"")))
        }
        match key {
            "batch_size" => self.batch_size = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "weight_decay" => self.weight_decay = parse(key, value)?,
            "decoupled_decay" => self.decoupled_decay = parse(key, value)?,
            "iterations" => self.iterations = parse(key, value)?,
            "lambda" => self.lambda = parse(key, value)?,
            "beta" => self.beta = parse(key, value)?,
            "stages" => self.stages = parse(key, value)?,
            "pool_s" => self.pool_s = parse(key, value)?,
            "kernel_len" => self.kernel_len = parse(key, value)?,
            "enc_dim" => self.enc_dim = parse(key, value)?,
            "hidden_dim" => self.hidden_dim = parse(key, value)?,
            "keep_rate" => self.keep_rate = parse(key, value)?,
            "t_max_frames" => self.t_max_frames = parse(key, value)?,
            "fusion" | "fusion.mode" => self.fusion = value.parse()?,
            "aux_iterations" => self.aux_iterations = parse(key, value)?,
            "aux_learning_rate" => self.aux_learning_rate = parse(key, value)?,
            "dmax_factor" => self.dmax_factor = parse(key, value)?,
            "posterior" => self.posterior = value.parse()?,
            "seed" => self.seed = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown config key \"{other}\""))),
        }
        Ok(())
    }

    /// Parse a flat key=value config file (# starts a comment line).
    pub fn apply_file(&mut self, path: &std::path::Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "{}:{}: expected key=value",
                    path.display(),
                    lineno + 1
                )));
            };
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        TrainConfig::default().validate().unwrap();
        TrainConfig::synthetic().validate().unwrap();
    }

    #[test]
    fn defaults_pin_the_reference_configuration() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.batch_size, 10);
        assert_eq!(cfg.learning_rate, 1e-3);
        assert_eq!(cfg.weight_decay, 0.005);
        assert_eq!(cfg.iterations, 20_000);
        assert_eq!(cfg.lambda, 0.9);
        assert_eq!(cfg.beta, 0.25);
        assert_eq!(cfg.stages, 3);
        assert_eq!(cfg.pool_s, 8);
        assert_eq!(cfg.kernel_len, 15);
        assert_eq!(cfg.enc_dim, 64);
        assert_eq!(cfg.hidden_dim, 256);
        assert_eq!(cfg.keep_rate, 0.3);
        assert_eq!(cfg.fusion, FusionMode::Gated);
        // About nine minutes at 15 fps.
        assert_eq!(cfg.t_max_frames, 8100);
        assert_eq!(TrainConfig::synthetic().iterations, 2000);
    }

    #[test]
    fn fusion_mode_alias_key() {
        let mut cfg = TrainConfig::default();
        cfg.set("fusion.mode", "weighted").unwrap();
        assert_eq!(cfg.fusion, FusionMode::Weighted);
    }

    #[test]
    fn unknown_key_is_rejected() {
        let mut cfg = TrainConfig::default();
        let err = cfg.set("learning_rat", "0.01").unwrap_err();
        assert!(err.to_string().contains("unknown config key"));
    }

    #[test]
    fn set_overrides_values() {
        let mut cfg = TrainConfig::default();
        cfg.set("iterations", "50").unwrap();
        cfg.set("fusion", "average").unwrap();
        assert_eq!(cfg.iterations, 50);
        assert_eq!(cfg.fusion, FusionMode::Average);
        assert!(cfg.set("fusion", "other").is_err());
    }

    #[test]
    fn config_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.conf");
        std::fs::write(&path, "# comment\niterations = 123\nbeta=0.01\n").unwrap();
        let mut cfg = TrainConfig::default();
        cfg.apply_file(&path).unwrap();
        assert_eq!(cfg.iterations, 123);
        assert_eq!(cfg.beta, 0.01);
    }
}
