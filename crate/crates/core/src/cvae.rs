//! Conditional variational core: reference features are encoded into a
//! latent Gaussian grid, a sample is drawn by reparameterisation, and the
//! sample is projected back to conditional features sized to match the LR
//! feature grid.

use ndarray::{ArrayD, IxDyn};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::params::{Conv, GraphCtx, Params};
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::{Error, Result};

const LEAK: f64 = 0.2;

/// Latent grid dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatentConfig {
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

impl LatentConfig {
    pub fn shape(&self) -> [usize; 3] {
        [self.h, self.w, self.c]
    }
}

/// Per-site Gaussian over the latent grid, parameterised by mean and
/// log-variance heads.
#[derive(Clone)]
pub struct LatentDistribution {
    pub mu: Tensor,
    pub log_var: Tensor,
}

impl LatentDistribution {
    /// Per-site standard deviation, `exp(log_var / 2)`.
    pub fn sigma(&self) -> ArrayD<f64> {
        self.log_var.value().mapv(|v| (0.5 * v).exp())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LatentSource {
    Posterior,
    Prior,
}

/// A draw from either the posterior or the standard-normal prior.
#[derive(Clone)]
pub struct LatentSample {
    pub z: Tensor,
    pub source: LatentSource,
}

/// The encoder/decoder pair around the latent grid.
#[derive(Debug, Clone)]
pub struct CvaeSpec {
    /// Channels of the extractor's final tap.
    pub feat_channels: usize,
    /// Spatial side of the reference feature grid (canonical / 8).
    pub feat_grid: usize,
    pub latent: LatentConfig,
    /// Trunk width of the encoder/decoder conv blocks.
    pub hidden: usize,
}

impl CvaeSpec {
    pub fn validate(&self) -> Result<()> {
        if self.latent.h == 0 || self.latent.w == 0 || self.latent.c == 0 {
            return Err(Error::Config("latent dimensions must be positive".into()));
        }
        if self.latent.h != self.latent.w {
            return Err(Error::Config("latent grid must be square".into()));
        }
        if self.feat_grid % self.latent.h != 0 {
            return Err(Error::Config(format!(
                "latent side {} must divide the feature grid {}",
                self.latent.h, self.feat_grid
            )));
        }
        let ratio = self.feat_grid / self.latent.h;
        if !ratio.is_power_of_two() {
            return Err(Error::Config(format!(
                "feature-to-latent ratio {ratio} must be a power of two"
            )));
        }
        Ok(())
    }

    fn reduction_steps(&self) -> usize {
        (self.feat_grid / self.latent.h).trailing_zeros() as usize
    }

    fn encoder_trunk(&self) -> Conv {
        Conv::same("cvae.enc.trunk", self.feat_channels, self.hidden)
    }

    fn encoder_down(&self, i: usize) -> Conv {
        let mut conv = Conv::same(format!("cvae.enc.down{i}"), self.hidden, self.hidden);
        conv.stride = 2;
        conv
    }

    fn head_mu(&self) -> Conv {
        Conv::same("cvae.enc.mu", self.hidden, self.latent.c)
    }

    fn head_log_var(&self) -> Conv {
        Conv::same("cvae.enc.logvar", self.hidden, self.latent.c)
    }

    fn decoder_in(&self) -> Conv {
        Conv::same("cvae.dec.in", self.latent.c, self.hidden)
    }

    fn decoder_out(&self) -> Conv {
        Conv::same("cvae.dec.out", self.hidden, self.feat_channels)
    }

    /// Initialises all encoder/decoder parameters. The mu / log-var heads
    /// start at zero so the initial posterior is exactly the prior.
    pub fn init(&self, params: &mut Params, rng: &mut Rng) {
        self.encoder_trunk().init(params, rng, 1.0);
        for i in 0..self.reduction_steps() {
            self.encoder_down(i).init(params, rng, 1.0);
        }
        self.head_mu().init_zero(params);
        self.head_log_var().init_zero(params);
        self.decoder_in().init(params, rng, 1.0);
        self.decoder_out().init(params, rng, 1.0);
    }

    /// Reference features -> latent Gaussian.
    pub fn feature_encode(&self, ctx: &GraphCtx, f_r: &Tensor) -> Result<LatentDistribution> {
        let expected = [self.feat_grid, self.feat_grid, self.feat_channels];
        if f_r.shape() != expected {
            return Err(Error::Shape(format!(
                "reference features have shape {:?}, expected {:?}",
                f_r.shape(),
                expected
            )));
        }
        let mut x = self.encoder_trunk().forward(ctx, f_r).leaky_relu(LEAK);
        for i in 0..self.reduction_steps() {
            x = self.encoder_down(i).forward(ctx, &x).leaky_relu(LEAK);
        }
        Ok(LatentDistribution {
            mu: self.head_mu().forward(ctx, &x),
            log_var: self.head_log_var().forward(ctx, &x),
        })
    }

    /// Latent sample -> conditional features, bilinearly resized to the
    /// target spatial grid.
    pub fn feature_decode(
        &self,
        ctx: &GraphCtx,
        z: &Tensor,
        target_h: usize,
        target_w: usize,
    ) -> Result<Tensor> {
        if z.shape() != self.latent.shape() {
            return Err(Error::Shape(format!(
                "latent sample has shape {:?}, expected {:?}",
                z.shape(),
                self.latent.shape()
            )));
        }
        if target_h == 0 || target_w == 0 {
            return Err(Error::Config(format!(
                "conditional feature target {target_h}x{target_w} must be positive"
            )));
        }
        let x = self.decoder_in().forward(ctx, z).leaky_relu(LEAK);
        let x = self.decoder_out().forward(ctx, &x);
        if z.shape()[0] == target_h && z.shape()[1] == target_w {
            return Ok(x);
        }
        Ok(x.resize_bilinear(target_h, target_w))
    }
}

/// Reparameterised draw: `z = mu + eps * exp(log_var / 2)` with
/// `eps ~ N(0, I)`. Gradients flow to both heads.
pub fn sample_latent(dist: &LatentDistribution, rng: &mut Rng) -> LatentSample {
    let shape = dist.mu.shape().to_vec();
    let eps: Vec<f64> = (0..dist.mu.value().len())
        .map(|_| rng.sample(StandardNormal))
        .collect();
    let eps = Tensor::constant(ArrayD::from_shape_vec(IxDyn(&shape), eps).expect("eps shape"));
    let sigma = dist.log_var.mul_scalar(0.5).exp();
    let z = dist.mu.add(&eps.mul(&sigma));
    LatentSample {
        z,
        source: LatentSource::Posterior,
    }
}

/// Standard-normal draw over the latent grid.
pub fn sample_prior(cfg: &LatentConfig, shape: &[usize], rng: &mut Rng) -> Result<LatentSample> {
    if shape != cfg.shape() {
        return Err(Error::Shape(format!(
            "prior sample shape {shape:?} does not match latent grid {:?}",
            cfg.shape()
        )));
    }
    let values: Vec<f64> = (0..shape.iter().product::<usize>())
        .map(|_| rng.sample(StandardNormal))
        .collect();
    Ok(LatentSample {
        z: Tensor::constant(ArrayD::from_shape_vec(IxDyn(shape), values).expect("prior shape")),
        source: LatentSource::Prior,
    })
}

/// KL divergence of the latent Gaussian from N(0, I):
/// mean over entries of `(mu^2 + sigma^2 - log sigma^2 - 1) / 2`.
pub fn kl_divergence(dist: &LatentDistribution) -> Result<Tensor> {
    if dist.mu.value().iter().any(|v| !v.is_finite())
        || dist.log_var.value().iter().any(|v| !v.is_finite())
    {
        return Err(Error::Numeric("non-finite latent distribution".into()));
    }
    let var = dist.log_var.exp();
    let term = dist
        .mu
        .square()
        .add(&var)
        .sub(&dist.log_var)
        .add_scalar(-1.0)
        .mul_scalar(0.5);
    Ok(term.mean_all())
}
