//! Run configuration: a flat `key = value` text file covering the model,
//! the training schedule and the ablation toggles.
//!
//! Unknown keys are an error (listed in full), missing keys fall back to
//! the defaults below, and `to_file_string` writes every key in a fixed
//! order so config snapshots embedded in checkpoints are canonical.

use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;

use crate::losses::LossWeights;
use crate::{Error, Result};

/// Where extractor weights come from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExtractorSource {
    /// Bundled convolutional extractor, deterministic in `extractor_seed`.
    Toy,
    /// Named-array container on disk.
    File(String),
}

/// Which image the style loss compares against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StyleTarget {
    Reference,
    Hr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    // Model geometry.
    pub alpha: usize,
    pub extractor: ExtractorSource,
    pub extractor_seed: u64,
    pub canonical_ref_size: usize,
    pub latent_h: usize,
    pub latent_w: usize,
    pub latent_c: usize,
    pub cvae_hidden: usize,
    pub disc_channels: usize,
    /// Image-decoder stage widths; `None` derives (C, C/2, C/4) from the
    /// extractor's final channel count.
    pub decoder_channels: Option<[usize; 3]>,
    // Optimisation schedule.
    pub lr: f64,
    pub batch: usize,
    pub iterations: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// LR patch side; the HR patch is `patch * alpha`.
    pub patch: usize,
    pub noise_std: f64,
    pub checkpoint_every: u64,
    // Loss weights.
    pub weights: LossWeights,
    pub style_target: StyleTarget,
    // Ablation toggles.
    pub use_cvae: bool,
    pub use_sc_loss: bool,
    pub use_discriminator: bool,
    // Execution.
    pub sequential: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            alpha: 8,
            extractor: ExtractorSource::Toy,
            extractor_seed: 7,
            canonical_ref_size: 256,
            latent_h: 8,
            latent_w: 8,
            latent_c: 128,
            cvae_hidden: 64,
            disc_channels: 64,
            decoder_channels: None,
            lr: 1e-4,
            batch: 16,
            iterations: 50_000,
            beta1: 0.9,
            beta2: 0.999,
            weight_decay: 1e-4,
            seed: 0,
            patch: 32,
            noise_std: 0.0,
            checkpoint_every: 1000,
            weights: LossWeights::default(),
            style_target: StyleTarget::Reference,
            use_cvae: true,
            use_sc_loss: true,
            use_discriminator: true,
            sequential: false,
        }
    }
}

impl RunConfig {
    /// Desk-scale profile: small extractor input, thin latent, a 4-image
    /// corpus trained in minutes on a CPU.
    pub fn desk() -> Self {
        RunConfig {
            canonical_ref_size: 64,
            latent_c: 32,
            cvae_hidden: 32,
            disc_channels: 8,
            decoder_channels: Some([32, 16, 8]),
            batch: 4,
            iterations: 2000,
            patch: 16,
            lr: 1e-3,
            checkpoint_every: 500,
            ..RunConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha < 1 || !self.alpha.is_power_of_two() {
            return Err(Error::Config(format!(
                "alpha must be a positive power of two, got {}",
                self.alpha
            )));
        }
        if self.canonical_ref_size == 0 || self.canonical_ref_size % 8 != 0 {
            return Err(Error::Config(format!(
                "canonical_ref_size must be a positive multiple of 8, got {}",
                self.canonical_ref_size
            )));
        }
        if self.batch < 1 {
            return Err(Error::Config("batch must be >= 1".into()));
        }
        if self.iterations < 1 {
            return Err(Error::Config("iterations must be >= 1".into()));
        }
        if self.patch == 0 || (self.patch * self.alpha) % 8 != 0 {
            return Err(Error::Config(format!(
                "patch * alpha must be a positive multiple of 8, got {}",
                self.patch * self.alpha
            )));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("beta1/beta2 must be in [0, 1)".into()));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config("weight_decay must be >= 0".into()));
        }
        if !(self.noise_std >= 0.0) {
            return Err(Error::Config("noise_std must be >= 0".into()));
        }
        self.weights.validate()
    }

    /// HR patch side.
    pub fn hr_patch(&self) -> usize {
        self.patch * self.alpha
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Data(format!("cannot read config {path:?}: {e}")))?;
        Self::from_str_contents(&text)
    }

    pub fn from_str_contents(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut unknown = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "config line {} is not 'key = value': {raw:?}",
                    lineno + 1
                )));
            };
            let key = key.trim();
            let value = value.trim();
            if !cfg.apply(key, value)? {
                unknown.push(key.to_string());
            }
        }
        if !unknown.is_empty() {
            return Err(Error::Config(format!(
                "unknown config keys: {}",
                unknown.join(", ")
            )));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies one `key = value` pair; false when the key is unknown.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<bool> {
        fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::Config(format!("invalid value for {key}: {v:?}")))
        }
        match key {
            "alpha" => self.alpha = parse(key, value)?,
            "extractor" => {
                self.extractor = if value == "toy" {
                    ExtractorSource::Toy
                } else {
                    ExtractorSource::File(value.to_string())
                }
            }
            "extractor_seed" => self.extractor_seed = parse(key, value)?,
            "canonical_ref_size" => self.canonical_ref_size = parse(key, value)?,
            "latent_h" => self.latent_h = parse(key, value)?,
            "latent_w" => self.latent_w = parse(key, value)?,
            "latent_c" => self.latent_c = parse(key, value)?,
            "cvae_hidden" => self.cvae_hidden = parse(key, value)?,
            "disc_channels" => self.disc_channels = parse(key, value)?,
            "decoder_channels" => {
                self.decoder_channels = if value == "auto" {
                    None
                } else {
                    let parts: Vec<usize> = value
                        .split(',')
                        .map(|v| parse(key, v.trim()))
                        .collect::<Result<_>>()?;
                    let [a, b, c] = parts[..] else {
                        return Err(Error::Config(format!(
                            "decoder_channels needs three comma-separated widths, got {value:?}"
                        )));
                    };
                    Some([a, b, c])
                }
            }
            "lr" => self.lr = parse(key, value)?,
            "batch" => self.batch = parse(key, value)?,
            "iterations" => self.iterations = parse(key, value)?,
            "beta1" => self.beta1 = parse(key, value)?,
            "beta2" => self.beta2 = parse(key, value)?,
            "weight_decay" => self.weight_decay = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "patch" => self.patch = parse(key, value)?,
            "noise_std" => self.noise_std = parse(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, value)?,
            "lambda_content" => self.weights.content = parse(key, value)?,
            "lambda_style" => self.weights.style = parse(key, value)?,
            "lambda_lpips" => self.weights.lpips = parse(key, value)?,
            "lambda_tv" => self.weights.tv = parse(key, value)?,
            "lambda_kl" => self.weights.kl = parse(key, value)?,
            "adv_weight" => self.weights.adversarial = parse(key, value)?,
            "tv_beta" => self.weights.tv_beta = parse(key, value)?,
            "style_target" => {
                self.style_target = match value {
                    "reference" => StyleTarget::Reference,
                    "hr" => StyleTarget::Hr,
                    other => {
                        return Err(Error::Config(format!(
                            "style_target must be 'reference' or 'hr', got {other:?}"
                        )))
                    }
                }
            }
            "use_cvae" => self.use_cvae = parse(key, value)?,
            "use_sc_loss" => self.use_sc_loss = parse(key, value)?,
            "use_discriminator" => self.use_discriminator = parse(key, value)?,
            "sequential" => self.sequential = parse(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// Canonical text form: every key, fixed order.
    pub fn to_file_string(&self) -> String {
        let mut s = String::new();
        let ext = match &self.extractor {
            ExtractorSource::Toy => "toy".to_string(),
            ExtractorSource::File(p) => p.clone(),
        };
        let style = match self.style_target {
            StyleTarget::Reference => "reference",
            StyleTarget::Hr => "hr",
        };
        let _ = writeln!(s, "alpha = {}", self.alpha);
        let _ = writeln!(s, "extractor = {ext}");
        let _ = writeln!(s, "extractor_seed = {}", self.extractor_seed);
        let _ = writeln!(s, "canonical_ref_size = {}", self.canonical_ref_size);
        let _ = writeln!(s, "latent_h = {}", self.latent_h);
        let _ = writeln!(s, "latent_w = {}", self.latent_w);
        let _ = writeln!(s, "latent_c = {}", self.latent_c);
        let _ = writeln!(s, "cvae_hidden = {}", self.cvae_hidden);
        let _ = writeln!(s, "disc_channels = {}", self.disc_channels);
        let dec = match self.decoder_channels {
            None => "auto".to_string(),
            Some([a, b, c]) => format!("{a},{b},{c}"),
        };
        let _ = writeln!(s, "decoder_channels = {dec}");
        let _ = writeln!(s, "lr = {}", self.lr);
        let _ = writeln!(s, "batch = {}", self.batch);
        let _ = writeln!(s, "iterations = {}", self.iterations);
        let _ = writeln!(s, "beta1 = {}", self.beta1);
        let _ = writeln!(s, "beta2 = {}", self.beta2);
        let _ = writeln!(s, "weight_decay = {}", self.weight_decay);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "patch = {}", self.patch);
        let _ = writeln!(s, "noise_std = {}", self.noise_std);
        let _ = writeln!(s, "checkpoint_every = {}", self.checkpoint_every);
        let _ = writeln!(s, "lambda_content = {}", self.weights.content);
        let _ = writeln!(s, "lambda_style = {}", self.weights.style);
        let _ = writeln!(s, "lambda_lpips = {}", self.weights.lpips);
        let _ = writeln!(s, "lambda_tv = {}", self.weights.tv);
        let _ = writeln!(s, "lambda_kl = {}", self.weights.kl);
        let _ = writeln!(s, "adv_weight = {}", self.weights.adversarial);
        let _ = writeln!(s, "tv_beta = {}", self.weights.tv_beta);
        let _ = writeln!(s, "style_target = {style}");
        let _ = writeln!(s, "use_cvae = {}", self.use_cvae);
        let _ = writeln!(s, "use_sc_loss = {}", self.use_sc_loss);
        let _ = writeln!(s, "use_discriminator = {}", self.use_discriminator);
        let _ = writeln!(s, "sequential = {}", self.sequential);
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_through_text() {
        let cfg = RunConfig::desk();
        let text = cfg.to_file_string();
        let parsed = RunConfig::from_str_contents(&text).unwrap();
        assert_eq!(cfg, parsed);
    }

    #[test]
    fn unknown_keys_are_listed() {
        let err = RunConfig::from_str_contents("alpha = 8\nbogus = 1\nwat = 2\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("bogus") && msg.contains("wat"));
    }

    #[test]
    fn comments_and_blanks_are_ignored() {
        let cfg = RunConfig::from_str_contents("# header\n\nalpha = 4 # inline\n").unwrap();
        assert_eq!(cfg.alpha, 4);
    }
}
