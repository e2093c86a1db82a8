//! LR-feature statistics, conditional fusion and the image decoder, plus
//! the four-mode `super_resolve` pipeline.
//!
//! Fusion follows `fused = C_R * (1 + f_sigma) + f_mu`: the conditional
//! features carry reference texture, the learned statistics carry the LR
//! content as a per-site scale and shift.

use crate::cvae::{kl_divergence, sample_latent, sample_prior, CvaeSpec, LatentSample};
use crate::features::FeatureExtractor;
use crate::imaging::Image;
use crate::params::{Conv, GraphCtx, Params};
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::{Error, Result};

const LEAK: f64 = 0.2;

/// Learned per-site statistics of the LR feature map.
#[derive(Clone)]
pub struct FusionStats {
    pub f_mu: Tensor,
    pub f_sigma: Tensor,
}

/// Stats heads plus the upsampling image decoder.
#[derive(Debug, Clone)]
pub struct GeneratorSpec {
    /// Channels of the extractor's final tap.
    pub feat_channels: usize,
    /// Width of each upsampling stage. Each stage doubles the spatial
    /// size; the stage count is fixed at the extractor's pooling count (3)
    /// so the decoder exactly inverts the 8x feature-grid reduction for
    /// any configured alpha.
    pub stage_widths: Vec<usize>,
}

impl GeneratorSpec {
    /// Default widths: (C, C/2, C/4), halving per stage.
    pub fn new(feat_channels: usize) -> Self {
        let widths = (0..3).map(|s| (feat_channels >> s).max(4)).collect();
        GeneratorSpec::with_widths(feat_channels, widths)
    }

    pub fn with_widths(feat_channels: usize, stage_widths: Vec<usize>) -> Self {
        assert_eq!(stage_widths.len(), 3, "decoder runs exactly three stages");
        GeneratorSpec {
            feat_channels,
            stage_widths,
        }
    }

    pub fn stages(&self) -> usize {
        self.stage_widths.len()
    }

    /// Spatial growth factor of the decoder: 2^stages.
    pub fn upsample_factor(&self) -> usize {
        1 << self.stages()
    }

    fn stage_channels(&self, stage: usize) -> usize {
        self.stage_widths[stage]
    }

    fn stats_trunk(&self) -> Conv {
        Conv::same("gen.stats.trunk", self.feat_channels, self.feat_channels)
    }

    fn stats_mu(&self) -> Conv {
        Conv::same("gen.stats.mu", self.feat_channels, self.feat_channels)
    }

    fn stats_sigma(&self) -> Conv {
        Conv::same("gen.stats.sigma", self.feat_channels, self.feat_channels)
    }

    fn stage_conv(&self, stage: usize, index: usize) -> Conv {
        let in_ch = if index == 0 {
            if stage == 0 {
                self.feat_channels
            } else {
                self.stage_channels(stage - 1)
            }
        } else {
            self.stage_channels(stage)
        };
        Conv::same(format!("gen.dec.s{stage}.c{index}"), in_ch, self.stage_channels(stage))
    }

    fn output_conv(&self) -> Conv {
        Conv::same("gen.dec.out", self.stage_channels(self.stages() - 1), 3)
    }

    /// Initialises stats heads and decoder. Stat heads start small so the
    /// fusion begins close to an identity modulation; the output layer's
    /// bias starts mid-range.
    pub fn init(&self, params: &mut Params, rng: &mut Rng) {
        self.stats_trunk().init(params, rng, 1.0);
        self.stats_mu().init(params, rng, 0.1);
        self.stats_sigma().init(params, rng, 0.1);
        for s in 0..self.stages() {
            for i in 0..3 {
                self.stage_conv(s, i).init(params, rng, 1.0);
            }
        }
        self.output_conv().init_with_bias(params, rng, 0.1, 0.5);
    }

    /// One conv block with two heads over the LR feature map; both outputs
    /// keep its spatial shape.
    pub fn compute_stats(&self, ctx: &GraphCtx, f_x: &Tensor) -> Result<FusionStats> {
        let shape = f_x.shape();
        if shape.len() != 3 || shape[2] != self.feat_channels {
            return Err(Error::Shape(format!(
                "LR features have shape {shape:?}, expected (h, w, {})",
                self.feat_channels
            )));
        }
        let trunk = self.stats_trunk().forward(ctx, f_x).leaky_relu(LEAK);
        Ok(FusionStats {
            f_mu: self.stats_mu().forward(ctx, &trunk),
            f_sigma: self.stats_sigma().forward(ctx, &trunk),
        })
    }

    /// Fused features -> RGB image. Each stage runs three convolutions and
    /// a bilinear 2x upsampling; a final projection maps to three channels
    /// and the result is clamped into [0, 1].
    pub fn decode_image(&self, ctx: &GraphCtx, fused: &Tensor) -> Result<Tensor> {
        let shape = fused.shape();
        if shape.len() != 3 || shape[2] != self.feat_channels {
            return Err(Error::Shape(format!(
                "fused features have shape {shape:?}, expected (h, w, {})",
                self.feat_channels
            )));
        }
        let mut x = fused.clone();
        for s in 0..self.stages() {
            for i in 0..3 {
                x = self.stage_conv(s, i).forward(ctx, &x).leaky_relu(LEAK);
            }
            let (h, w) = (x.shape()[0], x.shape()[1]);
            x = x.resize_bilinear(2 * h, 2 * w);
        }
        let out = self.output_conv().forward(ctx, &x);
        if out.value().iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite decoder activations".into()));
        }
        Ok(out.clamp01())
    }
}

/// Elementwise fusion `C_R * (1 + f_sigma) + f_mu`; no clamping.
pub fn fuse(c_r: &Tensor, stats: &FusionStats) -> Result<Tensor> {
    if c_r.shape() != stats.f_mu.shape() || c_r.shape() != stats.f_sigma.shape() {
        return Err(Error::Shape(format!(
            "fusion shapes differ: C_R {:?}, f_mu {:?}, f_sigma {:?}",
            c_r.shape(),
            stats.f_mu.shape(),
            stats.f_sigma.shape()
        )));
    }
    Ok(c_r.mul(&stats.f_sigma.add_scalar(1.0)).add(&stats.f_mu))
}

/// How the conditional branch is fed during inference.
#[derive(Debug, Clone, Copy)]
pub enum Mode<'a> {
    /// Encode a user-chosen reference image.
    Reference(&'a Image),
    /// Draw the latent from the standard-normal prior.
    Random,
    /// Use the LR input itself as the reference.
    LrAsRef,
    /// Use the ground-truth HR image as the reference (evaluation only).
    HrAsRef(&'a Image),
}

impl Mode<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            Mode::Reference(_) => "reference",
            Mode::Random => "random",
            Mode::LrAsRef => "lr_as_ref",
            Mode::HrAsRef(_) => "hr_as_ref",
        }
    }
}

/// The assembled pipeline: frozen extractor plus trainable parameters.
pub struct Model {
    pub extractor: FeatureExtractor,
    pub cvae: CvaeSpec,
    pub generator: GeneratorSpec,
    pub params: Params,
    pub alpha: usize,
    /// When false the conditional branch is dropped and the decoder sees
    /// the stats-only path (fused = f_mu); outputs are then deterministic.
    pub use_cvae: bool,
}

/// Everything the losses need from one forward pass.
pub struct ForwardArtifacts {
    pub sr: Tensor,
    pub kl: Tensor,
    pub latent: Option<LatentSample>,
}

impl Model {
    /// Runs the conditional branch for a given latent and precomputed LR
    /// feature tensor. `f_x` must be the extractor's final LR tap.
    pub fn forward_from_latent(
        &self,
        ctx: &GraphCtx,
        f_x: &Tensor,
        latent: Option<&LatentSample>,
    ) -> Result<Tensor> {
        let (h, w) = (f_x.shape()[0], f_x.shape()[1]);
        let stats = self.generator.compute_stats(ctx, f_x)?;
        let fused = match latent {
            Some(sample) => {
                let c_r = self.cvae.feature_decode(ctx, &sample.z, h, w)?;
                fuse(&c_r, &stats)?
            }
            None => stats.f_mu.clone(),
        };
        self.generator.decode_image(ctx, &fused)
    }

    /// Full pipeline on graph tensors; used by both inference and training.
    pub fn forward(
        &self,
        ctx: &GraphCtx,
        lr: &Image,
        mode: &Mode,
        rng: &mut Rng,
    ) -> Result<ForwardArtifacts> {
        let taps = self.extractor.encode_lr_graph(lr, self.alpha)?;
        let f_x = taps[3].clone();
        if !self.use_cvae {
            let sr = self.forward_from_latent(ctx, &f_x, None)?;
            return Ok(ForwardArtifacts {
                sr,
                kl: Tensor::scalar(0.0),
                latent: None,
            });
        }
        let (latent, kl) = match mode {
            Mode::Random => {
                let shape = self.cvae.latent.shape();
                let sample = sample_prior(&self.cvae.latent, &shape, rng)?;
                (sample, Tensor::scalar(0.0))
            }
            Mode::Reference(r) => self.posterior_sample(ctx, r, rng)?,
            Mode::LrAsRef => self.posterior_sample(ctx, lr, rng)?,
            Mode::HrAsRef(hr) => self.posterior_sample(ctx, hr, rng)?,
        };
        let sr = self.forward_from_latent(ctx, &f_x, Some(&latent))?;
        Ok(ForwardArtifacts {
            sr,
            kl,
            latent: Some(latent),
        })
    }

    fn posterior_sample(
        &self,
        ctx: &GraphCtx,
        reference: &Image,
        rng: &mut Rng,
    ) -> Result<(LatentSample, Tensor)> {
        let f_r = self.extractor.encode_reference(reference)?;
        let f_r = Tensor::constant(f_r.values);
        let dist = self.cvae.feature_encode(ctx, &f_r)?;
        let kl = kl_divergence(&dist)?;
        Ok((sample_latent(&dist, rng), kl))
    }
}

/// Super-resolves an LR image in the requested mode. Output dimensions are
/// `alpha` times the input.
pub fn super_resolve(model: &Model, lr: &Image, mode: &Mode, rng: &mut Rng) -> Result<Image> {
    if lr.height() < 4 || lr.width() < 4 {
        return Err(Error::Shape(format!(
            "LR input {}x{} is below the 4x4 minimum",
            lr.height(),
            lr.width()
        )));
    }
    if (lr.height() * model.alpha) % 8 != 0 || (lr.width() * model.alpha) % 8 != 0 {
        return Err(Error::Shape(format!(
            "alpha * LR dims ({}x{}) must be divisible by 8",
            lr.height() * model.alpha,
            lr.width() * model.alpha
        )));
    }
    let ctx = GraphCtx::frozen(&model.params);
    let art = model.forward(&ctx, lr, mode, rng)?;
    Image::from_tensor(&art.sr)
}
