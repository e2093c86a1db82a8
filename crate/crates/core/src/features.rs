//! Perceptual feature extraction with four named tap points.
//!
//! The extractor is a frozen stack of four conv blocks separated by three
//! max-poolings, so the final tap sits at 1/8 of the input resolution. Two
//! sources are supported: the bundled "toy" extractor (one 3x3 conv per
//! block, randomly initialised from a seed) for desk-scale work, and
//! externally converted weights loaded from a named-array container, whose
//! block layout `[2, 2, 4, 1]` x `[64, 128, 256, 512]` matches the classic
//! VGG-19 taps relu1_2 / relu2_2 / relu3_4 / relu4_1.

use ndarray::ArrayD;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::container::Container;
use crate::imaging::{bicubic_resize, Image};
use crate::params::{pool2, Conv, GraphCtx, Params};
use crate::rng::{stream, Stream};
use crate::tensor::Tensor;
use crate::{Error, Result};

pub const TAP_NAMES: [&str; 4] = ["tap1", "tap2", "tap3", "tap4"];

/// A feature grid from a named tap.
#[derive(Debug, Clone)]
pub struct FeatureMap {
    pub values: ArrayD<f64>,
    pub tap: String,
}

impl FeatureMap {
    pub fn spatial(&self) -> (usize, usize) {
        (self.values.shape()[0], self.values.shape()[1])
    }

    pub fn channels(&self) -> usize {
        self.values.shape()[2]
    }
}

/// Architecture of an extractor: channels and conv count per tap block,
/// plus the canonical reference input size.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractorArch {
    pub channels: [usize; 4],
    pub convs_per_block: [usize; 4],
    pub canonical_size: usize,
}

impl ExtractorArch {
    pub fn toy(canonical_size: usize) -> Self {
        ExtractorArch {
            channels: [8, 16, 32, 64],
            convs_per_block: [1, 1, 1, 1],
            canonical_size,
        }
    }

    pub fn vgg19(canonical_size: usize) -> Self {
        ExtractorArch {
            channels: [64, 128, 256, 512],
            convs_per_block: [2, 2, 4, 1],
            canonical_size,
        }
    }

    fn layer(&self, block: usize, index: usize) -> Conv {
        let in_ch = if index > 0 {
            self.channels[block]
        } else if block > 0 {
            self.channels[block - 1]
        } else {
            3
        };
        Conv::same(format!("ext.b{block}.c{index}"), in_ch, self.channels[block])
    }
}

/// A frozen feature extractor. Forward passes are pure; parameters never
/// receive gradients (they enter graphs as constants), though gradients do
/// flow through the activations back to the input.
pub struct FeatureExtractor {
    pub arch: ExtractorArch,
    params: Params,
}

impl FeatureExtractor {
    /// The bundled desk-scale extractor, deterministic in `seed`.
    pub fn toy(seed: u64, canonical_size: usize) -> Self {
        let arch = ExtractorArch::toy(canonical_size);
        let mut params = Params::new();
        let mut rng = stream(seed, Stream::Init(900));
        for b in 0..4 {
            for i in 0..arch.convs_per_block[b] {
                arch.layer(b, i).init(&mut params, &mut rng, 1.0);
            }
        }
        FeatureExtractor { arch, params }
    }

    /// Loads weights from a named-array container. The container metadata
    /// carries the architecture; every layer's arrays must be present with
    /// matching shapes.
    pub fn from_container(path: &Path) -> Result<Self> {
        let container = Container::load(path)?;
        let arch: ExtractorArch = serde_json::from_str(&container.meta)
            .map_err(|e| Error::Data(format!("weight container metadata: {e}")))?;
        if arch.canonical_size < 8 || arch.canonical_size % 8 != 0 {
            return Err(Error::Config(format!(
                "canonical size {} must be a positive multiple of 8",
                arch.canonical_size
            )));
        }
        let mut params = Params::new();
        let mut in_ch = 3;
        for (b, (&ch, &n)) in arch
            .channels
            .iter()
            .zip(arch.convs_per_block.iter())
            .enumerate()
        {
            for i in 0..n {
                let w = container.get_shaped(&format!("ext.b{b}.c{i}.w"), &[ch, 3, 3, in_ch])?;
                let bias = container.get_shaped(&format!("ext.b{b}.c{i}.b"), &[ch])?;
                params.insert(format!("ext.b{b}.c{i}.w"), w.clone());
                params.insert(format!("ext.b{b}.c{i}.b"), bias.clone());
                in_ch = ch;
            }
        }
        Ok(FeatureExtractor { arch, params })
    }

    pub fn save_container(&self, path: &Path) -> Result<()> {
        let meta = serde_json::to_string(&self.arch)
            .map_err(|e| Error::Data(format!("serialize arch: {e}")))?;
        let mut container = Container::new(meta);
        self.params.export(&mut container, "ext.");
        container.save(path)
    }

    pub fn final_channels(&self) -> usize {
        self.arch.channels[3]
    }

    /// Spatial side of reference features: canonical / 8.
    pub fn reference_grid(&self) -> usize {
        self.arch.canonical_size / 8
    }

    pub fn weights_hash(&self) -> String {
        self.params.content_hash()
    }

    /// All four tap activations in one forward pass (graph form). Input is
    /// (H, W, 3) with H and W divisible by 8.
    pub fn taps_graph(&self, input: &Tensor) -> Result<[Tensor; 4]> {
        let shape = input.shape();
        if shape.len() != 3 || shape[2] != 3 {
            return Err(Error::Shape(format!(
                "extractor input must be (H, W, 3), got {shape:?}"
            )));
        }
        if shape[0] % 8 != 0 || shape[1] % 8 != 0 {
            return Err(Error::Shape(format!(
                "extractor input {}x{} must be divisible by 8",
                shape[0], shape[1]
            )));
        }
        let ctx = GraphCtx::frozen(&self.params);
        let mut x = input.clone();
        let mut taps = Vec::with_capacity(4);
        for b in 0..4 {
            for i in 0..self.arch.convs_per_block[b] {
                x = self.arch.layer(b, i).forward(&ctx, &x).relu();
            }
            taps.push(x.clone());
            if b < 3 {
                x = pool2(&x);
            }
        }
        Ok([
            taps[0].clone(),
            taps[1].clone(),
            taps[2].clone(),
            taps[3].clone(),
        ])
    }

    /// Final-tap features of an image (plain-array form).
    fn tap4(&self, img: &Image) -> Result<FeatureMap> {
        let taps = self.taps_graph(&img.to_tensor())?;
        Ok(FeatureMap {
            values: taps[3].value().clone(),
            tap: TAP_NAMES[3].to_string(),
        })
    }

    /// Reference encoding: resize to the canonical square, then extract the
    /// final tap. Output shape is canonical/8 regardless of input size.
    pub fn encode_reference(&self, reference: &Image) -> Result<FeatureMap> {
        let canon = self.arch.canonical_size;
        let resized = bicubic_resize(reference, canon, canon)?;
        self.tap4(&resized)
    }

    /// LR encoding: bicubic upsample by `alpha`, then extract the final
    /// tap. Output spatial size is alpha*H/8 x alpha*W/8.
    pub fn encode_lr(&self, lr: &Image, alpha: usize) -> Result<FeatureMap> {
        if alpha < 1 {
            return Err(Error::Config(format!("alpha must be >= 1, got {alpha}")));
        }
        let up = bicubic_resize(lr, lr.height() * alpha, lr.width() * alpha)?;
        self.tap4(&up)
    }

    /// Tap activations of the bicubic-upsampled LR image; the pipeline
    /// building block behind [`Self::encode_lr`].
    pub fn encode_lr_graph(&self, lr: &Image, alpha: usize) -> Result<[Tensor; 4]> {
        if alpha < 1 {
            return Err(Error::Config(format!("alpha must be >= 1, got {alpha}")));
        }
        let up = bicubic_resize(lr, lr.height() * alpha, lr.width() * alpha)?;
        self.taps_graph(&up.to_tensor())
    }

    /// All four taps of an image as plain feature maps.
    pub fn taps(&self, img: &Image) -> Result<Vec<FeatureMap>> {
        let taps = self.taps_graph(&img.to_tensor())?;
        Ok(taps
            .iter()
            .zip(TAP_NAMES)
            .map(|(t, name)| FeatureMap {
                values: t.value().clone(),
                tap: name.to_string(),
            })
            .collect())
    }
}
