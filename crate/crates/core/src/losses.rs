//! Training objectives: adversarial (patch discriminator), content, style,
//! total variation, perceptual distance, and the weighted total.
//!
//! Every reduction is a mean, so magnitudes are resolution-independent.
//! The discriminator emits a logit map; probabilities only appear through
//! the log-sigmoid identity `log(1 - sigmoid(x)) = -softplus(x)`, which
//! keeps both adversarial losses finite for any logit.

use serde::{Deserialize, Serialize};

use crate::features::FeatureExtractor;
use crate::params::{Conv, GraphCtx, Params};
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Loss term weights. `adversarial` applies to the generator-side GAN term
/// (the printed total keeps it at 1; set 0 to drop it).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub content: f64,
    pub style: f64,
    pub lpips: f64,
    pub tv: f64,
    pub kl: f64,
    pub adversarial: f64,
    pub tv_beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            content: 1.0,
            style: 10.0,
            lpips: 1.0,
            tv: 1.0,
            kl: 1.0,
            adversarial: 1.0,
            tv_beta: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            ("content", self.content),
            ("style", self.style),
            ("lpips", self.lpips),
            ("tv", self.tv),
            ("kl", self.kl),
            ("adversarial", self.adversarial),
        ];
        for (name, v) in all {
            if !(v >= 0.0) {
                return Err(Error::Config(format!("lambda_{name} must be >= 0, got {v}")));
            }
        }
        if !(self.tv_beta > 0.0) {
            return Err(Error::Config(format!(
                "tv_beta must be positive, got {}",
                self.tv_beta
            )));
        }
        Ok(())
    }
}

/// Patch discriminator: strided 4x4 convolutions ending in a 1-channel
/// logit map, one verdict per receptive-field patch.
#[derive(Debug, Clone)]
pub struct DiscriminatorSpec {
    pub base_channels: usize,
}

impl DiscriminatorSpec {
    pub fn new(base_channels: usize) -> Self {
        DiscriminatorSpec { base_channels }
    }

    fn layers(&self) -> Vec<Conv> {
        let c = self.base_channels;
        vec![
            Conv::strided("disc.l0", 3, c, 4, 2),
            Conv::strided("disc.l1", c, 2 * c, 4, 2),
            Conv::strided("disc.l2", 2 * c, 4 * c, 4, 2),
            Conv::strided("disc.l3", 4 * c, 4 * c, 4, 1),
            Conv::strided("disc.out", 4 * c, 1, 4, 1),
        ]
    }

    pub fn init(&self, params: &mut Params, rng: &mut Rng) {
        for conv in self.layers() {
            conv.init(params, rng, 1.0);
        }
    }

    /// Logit map over patches; (h', w', 1).
    pub fn score_map(&self, ctx: &GraphCtx, img: &Tensor) -> Result<Tensor> {
        let shape = img.shape();
        if shape.len() != 3 || shape[2] != 3 {
            return Err(Error::Shape(format!(
                "discriminator input must be (H, W, 3), got {shape:?}"
            )));
        }
        if shape[0] < 32 || shape[1] < 32 {
            return Err(Error::Shape(format!(
                "discriminator input {}x{} is below the 32x32 receptive field",
                shape[0], shape[1]
            )));
        }
        let mut x = img.clone();
        let layers = self.layers();
        for (i, conv) in layers.iter().enumerate() {
            x = conv.forward(ctx, &x);
            if i + 1 < layers.len() {
                x = x.leaky_relu(0.2);
            }
        }
        Ok(x)
    }
}

/// Generator-side adversarial loss: mean of `log(1 - D)` over the patch
/// map. Always <= 0; approaches 0 when the discriminator calls every
/// patch fake.
pub fn adversarial_g_loss(fake_logits: &Tensor) -> Tensor {
    fake_logits.softplus().neg().mean_all()
}

/// Two-sided discriminator loss: mean binary cross-entropy pushing real
/// patches towards 1 and fake patches towards 0.
pub fn adversarial_d_loss(real_logits: &Tensor, fake_logits: &Tensor) -> Result<Tensor> {
    if real_logits.shape() != fake_logits.shape() {
        return Err(Error::Shape(format!(
            "discriminator maps differ: {:?} vs {:?}",
            real_logits.shape(),
            fake_logits.shape()
        )));
    }
    let real_term = real_logits.neg().softplus().mean_all();
    let fake_term = fake_logits.softplus().mean_all();
    Ok(real_term.add(&fake_term).mul_scalar(0.5))
}

/// The three content terms (final-tap features, pixels, downsampled
/// pixels), each mean-reduced. `down_shape` is the LR geometry used by the
/// downsampling operator.
pub fn content_loss_parts(
    sr_tap4: &Tensor,
    hr_tap4: &Tensor,
    sr: &Tensor,
    hr: &Tensor,
    alpha: usize,
) -> Result<(Tensor, Tensor, Tensor)> {
    if sr.shape() != hr.shape() {
        return Err(Error::Shape(format!(
            "content loss inputs differ: {:?} vs {:?}",
            sr.shape(),
            hr.shape()
        )));
    }
    if sr_tap4.shape() != hr_tap4.shape() {
        return Err(Error::Shape(format!(
            "content feature maps differ: {:?} vs {:?}",
            sr_tap4.shape(),
            hr_tap4.shape()
        )));
    }
    let (h, w) = (sr.shape()[0], sr.shape()[1]);
    if h % alpha != 0 || w % alpha != 0 {
        return Err(Error::Shape(format!(
            "content loss input {h}x{w} not divisible by alpha {alpha}"
        )));
    }
    let feature = sr_tap4.l1_to(hr_tap4);
    let pixel = sr.l1_to(hr);
    let down = sr
        .resize_bicubic(h / alpha, w / alpha)
        .l1_to(&hr.resize_bicubic(h / alpha, w / alpha));
    Ok((feature, pixel, down))
}

/// Content loss per the three-term sum above.
pub fn content_loss(
    extractor: &FeatureExtractor,
    sr: &Tensor,
    hr: &Tensor,
    alpha: usize,
) -> Result<Tensor> {
    let sr_taps = extractor.taps_graph(sr)?;
    let hr_taps = extractor.taps_graph(hr)?;
    let (f, p, d) = content_loss_parts(&sr_taps[3], &hr_taps[3], sr, hr, alpha)?;
    Ok(f.add(&p).add(&d))
}

/// Style loss over all four taps: per-channel mean and population variance
/// of each tap, compared by L1 (mean over channels), summed over taps.
/// Statistics are position-invariant, so the two images may differ in size.
pub fn style_loss_from_taps(sr_taps: &[Tensor; 4], target_taps: &[Tensor; 4]) -> Result<Tensor> {
    let mut total = Tensor::scalar(0.0);
    for (a, b) in sr_taps.iter().zip(target_taps) {
        if a.shape()[2] != b.shape()[2] {
            return Err(Error::Shape(format!(
                "style taps have different channel counts: {:?} vs {:?}",
                a.shape(),
                b.shape()
            )));
        }
        let mean_term = a.channel_mean().l1_to(&b.channel_mean());
        let var_term = a.channel_var().l1_to(&b.channel_var());
        total = total.add(&mean_term).add(&var_term);
    }
    Ok(total)
}

pub fn style_loss(
    extractor: &FeatureExtractor,
    sr: &Tensor,
    style_target: &Tensor,
) -> Result<Tensor> {
    let sr_taps = extractor.taps_graph(sr)?;
    let target_taps = extractor.taps_graph(style_target)?;
    style_loss_from_taps(&sr_taps, &target_taps)
}

/// Total-variation smoothness penalty (see `Tensor::tv`).
pub fn tv_loss(sr: &Tensor, beta: f64) -> Result<Tensor> {
    let shape = sr.shape();
    if shape.len() != 3 {
        return Err(Error::Shape(format!("tv loss expects (H, W, C), got {shape:?}")));
    }
    if !(beta > 0.0) {
        return Err(Error::Config(format!("tv beta must be positive, got {beta}")));
    }
    Ok(sr.tv(beta))
}

/// Perceptual distance backbone. The bundled fallback measures mean
/// squared distance between unit-normalised tap features; external
/// per-channel weights (an LPIPS-style linear head) plug in on top.
#[derive(Debug, Clone, Default)]
pub enum PerceptualBackbone {
    #[default]
    TapFeatures,
    /// Per-tap, per-channel non-negative weights.
    Weighted([Vec<f64>; 4]),
}

impl PerceptualBackbone {
    /// Loads a weighted head from a named-array container with arrays
    /// `lin1..lin4`, validating channel counts against the extractor.
    pub fn from_container(path: &std::path::Path, extractor: &FeatureExtractor) -> Result<Self> {
        let container = crate::container::Container::load(path)?;
        let mut weights: [Vec<f64>; 4] = Default::default();
        for (i, w) in weights.iter_mut().enumerate() {
            let name = format!("lin{}", i + 1);
            let expected = extractor.arch.channels[i];
            let arr = container.get_shaped(&name, &[expected])?;
            if arr.iter().any(|v| *v < 0.0) {
                return Err(Error::Data(format!("{name}: negative perceptual weight")));
            }
            *w = arr.iter().copied().collect();
        }
        Ok(PerceptualBackbone::Weighted(weights))
    }
}

/// Perceptual distance between two images' tap stacks; symmetric, zero on
/// identical inputs.
pub fn perceptual_loss_from_taps(
    backbone: &PerceptualBackbone,
    a_taps: &[Tensor; 4],
    b_taps: &[Tensor; 4],
) -> Result<Tensor> {
    const EPS: f64 = 1e-10;
    let mut total = Tensor::scalar(0.0);
    for (i, (a, b)) in a_taps.iter().zip(b_taps).enumerate() {
        if a.shape() != b.shape() {
            return Err(Error::Shape(format!(
                "perceptual taps differ: {:?} vs {:?}",
                a.shape(),
                b.shape()
            )));
        }
        let diff = a
            .normalize_channels(EPS)
            .sub(&b.normalize_channels(EPS))
            .square();
        let term = match backbone {
            PerceptualBackbone::TapFeatures => diff.mean_all(),
            PerceptualBackbone::Weighted(weights) => {
                let c = a.shape()[2];
                if weights[i].len() != c {
                    return Err(Error::Shape(format!(
                        "perceptual weights for tap {} have {} channels, features have {c}",
                        i + 1,
                        weights[i].len()
                    )));
                }
                let w = ndarray::ArrayD::from_shape_vec(
                    ndarray::IxDyn(&[1, 1, c]),
                    weights[i].clone(),
                )
                .expect("weight shape")
                .broadcast(ndarray::IxDyn(a.shape()))
                .expect("weight broadcast")
                .to_owned();
                diff.mul(&Tensor::constant(w)).mean_all()
            }
        };
        total = total.add(&term);
    }
    Ok(total.mul_scalar(0.25))
}

pub fn perceptual_loss(
    backbone: &PerceptualBackbone,
    extractor: &FeatureExtractor,
    a: &Tensor,
    b: &Tensor,
) -> Result<Tensor> {
    let a_taps = extractor.taps_graph(a)?;
    let b_taps = extractor.taps_graph(b)?;
    perceptual_loss_from_taps(backbone, &a_taps, &b_taps)
}

/// The individually logged loss terms.
#[derive(Clone)]
pub struct LossParts {
    pub content: Tensor,
    pub style: Tensor,
    pub lpips: Tensor,
    pub tv: Tensor,
    pub kl: Tensor,
    pub adversarial: Tensor,
}

impl LossParts {
    pub fn values(&self) -> [(&'static str, f64); 6] {
        [
            ("content", self.content.item()),
            ("style", self.style.item()),
            ("lpips", self.lpips.item()),
            ("tv", self.tv.item()),
            ("kl", self.kl.item()),
            ("adversarial", self.adversarial.item()),
        ]
    }
}

/// Weighted sum of the loss parts. Errors name the first non-finite term.
pub fn total_loss(weights: &LossWeights, parts: &LossParts) -> Result<Tensor> {
    for (name, value) in parts.values() {
        if !value.is_finite() {
            return Err(Error::Numeric(format!("loss term '{name}' is non-finite")));
        }
    }
    Ok(parts
        .content
        .mul_scalar(weights.content)
        .add(&parts.style.mul_scalar(weights.style))
        .add(&parts.lpips.mul_scalar(weights.lpips))
        .add(&parts.tv.mul_scalar(weights.tv))
        .add(&parts.kl.mul_scalar(weights.kl))
        .add(&parts.adversarial.mul_scalar(weights.adversarial)))
}
