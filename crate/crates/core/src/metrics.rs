//! Evaluation suite: Y-channel PSNR and SSIM, perceptual distance,
//! LR-consistency, the diverse score over sample sets, and the dataset
//! report driver.
//!
//! PSNR and SSIM run on 8-bit-quantised values (0..255 scale); identical
//! inputs report the 100 dB sentinel instead of infinity.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::exec::{self, Exec};
use crate::generator::{super_resolve, Mode, Model};
use crate::imaging::{bicubic_resize, degrade, luma, read_manifest, DegradationConfig, Image};
use crate::losses::{perceptual_loss, PerceptualBackbone};
use crate::rng::{stream, Stream};
use crate::{Error, Result};

pub const PSNR_CAP_DB: f64 = 100.0;

fn quantize(v: f64) -> f64 {
    (v.clamp(0.0, 1.0) * 255.0).round()
}

/// Quantised comparison planes: the Y channel, or all three RGB channels.
fn planes(img: &Image, y_only: bool) -> Vec<Array2<f64>> {
    if y_only {
        vec![luma(img).mapv(quantize)]
    } else {
        (0..3)
            .map(|k| {
                img.pixels()
                    .index_axis(ndarray::Axis(2), k)
                    .mapv(quantize)
            })
            .collect()
    }
}

/// Peak signal-to-noise ratio in dB, capped at 100.
pub fn psnr(a: &Image, b: &Image, y_only: bool) -> Result<f64> {
    if a.pixels().dim() != b.pixels().dim() {
        return Err(Error::Shape(format!(
            "psnr inputs differ: {:?} vs {:?}",
            a.pixels().dim(),
            b.pixels().dim()
        )));
    }
    let (pa, pb) = (planes(a, y_only), planes(b, y_only));
    let mut se = 0.0;
    let mut n = 0usize;
    for (x, y) in pa.iter().zip(&pb) {
        for (&u, &v) in x.iter().zip(y.iter()) {
            se += (u - v) * (u - v);
        }
        n += x.len();
    }
    let mse = se / n as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (255.0f64 * 255.0 / mse).log10()).min(PSNR_CAP_DB))
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;
const SSIM_L: f64 = 255.0;

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *v;
    }
    w.iter_mut().for_each(|v| *v /= sum);
    w
}

/// Valid-mode separable Gaussian filter.
fn filter_valid(x: &Array2<f64>, w: &[f64; SSIM_WINDOW]) -> Array2<f64> {
    let (h, wd) = x.dim();
    let (oh, ow) = (h - SSIM_WINDOW + 1, wd - SSIM_WINDOW + 1);
    let mut rows = Array2::zeros((oh, wd));
    for i in 0..oh {
        for j in 0..wd {
            let mut acc = 0.0;
            for (k, &wk) in w.iter().enumerate() {
                acc += wk * x[(i + k, j)];
            }
            rows[(i, j)] = acc;
        }
    }
    let mut out = Array2::zeros((oh, ow));
    for i in 0..oh {
        for j in 0..ow {
            let mut acc = 0.0;
            for (k, &wk) in w.iter().enumerate() {
                acc += wk * rows[(i, j + k)];
            }
            out[(i, j)] = acc;
        }
    }
    out
}

fn ssim_plane(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let w = gaussian_window();
    let c1 = (SSIM_K1 * SSIM_L) * (SSIM_K1 * SSIM_L);
    let c2 = (SSIM_K2 * SSIM_L) * (SSIM_K2 * SSIM_L);
    let mu1 = filter_valid(a, &w);
    let mu2 = filter_valid(b, &w);
    let e_aa = filter_valid(&(a * a), &w);
    let e_bb = filter_valid(&(b * b), &w);
    let e_ab = filter_valid(&(a * b), &w);
    let mut sum = 0.0;
    for ((i, j), &m1) in mu1.indexed_iter() {
        let m2 = mu2[(i, j)];
        let s11 = e_aa[(i, j)] - m1 * m1;
        let s22 = e_bb[(i, j)] - m2 * m2;
        let s12 = e_ab[(i, j)] - m1 * m2;
        sum += ((2.0 * m1 * m2 + c1) * (2.0 * s12 + c2))
            / ((m1 * m1 + m2 * m2 + c1) * (s11 + s22 + c2));
    }
    sum / mu1.len() as f64
}

/// Windowed SSIM (11x11 Gaussian, sigma 1.5) over valid positions.
pub fn ssim(a: &Image, b: &Image, y_only: bool) -> Result<f64> {
    if a.pixels().dim() != b.pixels().dim() {
        return Err(Error::Shape(format!(
            "ssim inputs differ: {:?} vs {:?}",
            a.pixels().dim(),
            b.pixels().dim()
        )));
    }
    if a.height() < SSIM_WINDOW || a.width() < SSIM_WINDOW {
        return Err(Error::Shape(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} input, got {}x{}",
            a.height(),
            a.width()
        )));
    }
    let (pa, pb) = (planes(a, y_only), planes(b, y_only));
    let mut total = 0.0;
    for (x, y) in pa.iter().zip(&pb) {
        total += ssim_plane(x, y);
    }
    Ok(total / pa.len() as f64)
}

/// Dense per-pixel error maps feeding the diverse score. Lower is better.
pub trait DenseMetric: Sync {
    fn map(&self, sample: &Image, gt: &Image) -> Array2<f64>;
}

/// Channel-mean absolute pixel error; the desk-scale default.
pub struct PixelAbsError;

impl DenseMetric for PixelAbsError {
    fn map(&self, sample: &Image, gt: &Image) -> Array2<f64> {
        let (h, w, _) = gt.pixels().dim();
        let mut out = Array2::zeros((h, w));
        for i in 0..h {
            for j in 0..w {
                let mut acc = 0.0;
                for k in 0..3 {
                    acc += (sample.pixels()[(i, j, k)] - gt.pixels()[(i, j, k)]).abs();
                }
                out[(i, j)] = acc / 3.0;
            }
        }
        out
    }
}

/// Diverse score over a sample set: `(global - local) / global * 100`,
/// where `local` is the image mean of the pixelwise best error and
/// `global` the best whole-image mean. Zero when every sample is the same;
/// defined as 0 when the global best is 0.
pub fn diverse_score(samples: &[Image], gt: &Image, metric: &dyn DenseMetric) -> Result<f64> {
    if samples.len() < 2 {
        return Err(Error::Config(format!(
            "diverse score needs at least 2 samples, got {}",
            samples.len()
        )));
    }
    for s in samples {
        if s.pixels().dim() != gt.pixels().dim() {
            return Err(Error::Shape(format!(
                "sample shape {:?} does not match ground truth {:?}",
                s.pixels().dim(),
                gt.pixels().dim()
            )));
        }
    }
    let maps: Vec<Array2<f64>> = samples.iter().map(|s| metric.map(s, gt)).collect();
    let n = maps[0].len() as f64;
    let mut local_sum = 0.0;
    for idx in ndarray::indices(maps[0].dim()) {
        let best = maps
            .iter()
            .map(|m| m[(idx.0, idx.1)])
            .fold(f64::INFINITY, f64::min);
        local_sum += best;
    }
    let local = local_sum / n;
    let global = maps
        .iter()
        .map(|m| m.sum() / n)
        .fold(f64::INFINITY, f64::min);
    if global == 0.0 {
        return Ok(0.0);
    }
    Ok((global - local) / global * 100.0)
}

/// Fidelity of the SR image to its LR source: bicubic downsample by
/// `alpha`, then (PSNR, SSIM) against the LR input.
pub fn lr_consistency(sr: &Image, lr: &Image, alpha: usize) -> Result<(f64, f64)> {
    if sr.height() != alpha * lr.height() || sr.width() != alpha * lr.width() {
        return Err(Error::Shape(format!(
            "SR {}x{} is not {alpha}x the LR {}x{}",
            sr.height(),
            sr.width(),
            lr.height(),
            lr.width()
        )));
    }
    let down = bicubic_resize(sr, lr.height(), lr.width())?;
    Ok((psnr(&down, lr, true)?, ssim(&down, lr, true)?))
}

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ImageRecord {
    pub path: String,
    pub psnr: f64,
    pub ssim: f64,
    pub perceptual: f64,
    pub lr_psnr: f64,
    pub lr_ssim: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diverse_score: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
pub struct Aggregate {
    pub psnr: f64,
    pub ssim: f64,
    pub perceptual: f64,
    pub lr_psnr: f64,
    pub lr_ssim: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ModeReport {
    pub mode: String,
    pub records: Vec<ImageRecord>,
    pub aggregate: Aggregate,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diverse_score: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diverse_note: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SkippedRecord {
    pub path: String,
    pub reason: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MetricsReport {
    pub schema_version: u32,
    pub dataset: String,
    pub seed: u64,
    pub n_samples: usize,
    pub modes: Vec<ModeReport>,
    pub skipped: Vec<SkippedRecord>,
}

impl MetricsReport {
    pub fn save_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Data(format!("serialize report: {e}")))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Data(format!("parse report {path:?}: {e}")))
    }

    /// One summary row per mode.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("mode,psnr,ssim,perceptual,lr_psnr,lr_ssim,diverse\n");
        for m in &self.modes {
            let div = m
                .diverse_score
                .map(|d| format!("{d:.6}"))
                .unwrap_or_default();
            out.push_str(&format!(
                "{},{:.6},{:.6},{:.8},{:.6},{:.6},{}\n",
                m.mode,
                m.aggregate.psnr,
                m.aggregate.ssim,
                m.aggregate.perceptual,
                m.aggregate.lr_psnr,
                m.aggregate.lr_ssim,
                div
            ));
        }
        out
    }
}

/// Inference modes requested from the evaluation driver.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    Reference,
    Random,
    LrAsRef,
    HrAsRef,
}

impl EvalMode {
    pub fn name(&self) -> &'static str {
        match self {
            EvalMode::Reference => "reference",
            EvalMode::Random => "random",
            EvalMode::LrAsRef => "lr_as_ref",
            EvalMode::HrAsRef => "hr_as_ref",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "reference" => Ok(EvalMode::Reference),
            "random" => Ok(EvalMode::Random),
            "lr_as_ref" => Ok(EvalMode::LrAsRef),
            "hr_as_ref" => Ok(EvalMode::HrAsRef),
            other => Err(Error::Config(format!("unknown mode '{other}'"))),
        }
    }
}

pub struct EvalOptions {
    pub modes: Vec<EvalMode>,
    /// Random-mode draws per image feeding the diverse score.
    pub n_samples: usize,
    pub seed: u64,
    pub references: Vec<Image>,
    pub backbone: PerceptualBackbone,
    pub exec: Exec,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            modes: vec![EvalMode::Random, EvalMode::LrAsRef, EvalMode::HrAsRef],
            n_samples: 10,
            seed: 0,
            references: Vec::new(),
            backbone: PerceptualBackbone::TapFeatures,
            exec: Exec::Parallel,
        }
    }
}

struct EvalItem {
    path: String,
    hr: Image,
    lr: Image,
}

/// Runs every requested mode over the manifest and assembles the report.
/// Unreadable or misaligned images are skipped with a note.
pub fn evaluate_dataset(model: &Model, manifest: &Path, opts: &EvalOptions) -> Result<MetricsReport> {
    let paths = read_manifest(manifest)?;
    if paths.is_empty() {
        return Err(Error::Data(format!("manifest {manifest:?} is empty")));
    }
    if opts.modes.contains(&EvalMode::Reference) && opts.references.is_empty() {
        return Err(Error::Config(
            "reference mode requested but no reference images supplied".into(),
        ));
    }
    let degradation = DegradationConfig {
        scale: model.alpha,
        noise_std: 0.0,
    };
    let mut items = Vec::new();
    let mut skipped = Vec::new();
    for (i, path) in paths.iter().enumerate() {
        let display = path.display().to_string();
        match Image::load_png(path) {
            Ok(hr) => {
                let mut rng = stream(opts.seed, Stream::Degrade(i as u64));
                match degrade(&hr, &degradation, &mut rng) {
                    Ok(lr) => items.push(EvalItem {
                        path: display,
                        hr,
                        lr,
                    }),
                    Err(e) => skipped.push(SkippedRecord {
                        path: display,
                        reason: e.to_string(),
                    }),
                }
            }
            Err(e) => skipped.push(SkippedRecord {
                path: display,
                reason: e.to_string(),
            }),
        }
    }
    if items.is_empty() {
        return Err(Error::Data("no usable images in manifest".into()));
    }

    let mut modes = Vec::new();
    for (mode_idx, mode) in opts.modes.iter().enumerate() {
        let results: Vec<Result<ImageRecord>> = exec::map_indexed(opts.exec, items.len(), |i| {
            evaluate_one(model, &items[i], *mode, mode_idx, i, opts)
        });
        let mut records = Vec::with_capacity(results.len());
        for r in results {
            records.push(r?);
        }
        let n = records.len() as f64;
        let aggregate = Aggregate {
            psnr: records.iter().map(|r| r.psnr).sum::<f64>() / n,
            ssim: records.iter().map(|r| r.ssim).sum::<f64>() / n,
            perceptual: records.iter().map(|r| r.perceptual).sum::<f64>() / n,
            lr_psnr: records.iter().map(|r| r.lr_psnr).sum::<f64>() / n,
            lr_ssim: records.iter().map(|r| r.lr_ssim).sum::<f64>() / n,
        };
        let diverse: Vec<f64> = records.iter().filter_map(|r| r.diverse_score).collect();
        let (diverse_score, diverse_note) = if !diverse.is_empty() {
            (
                Some(diverse.iter().sum::<f64>() / diverse.len() as f64),
                None,
            )
        } else if *mode == EvalMode::Random && opts.n_samples < 2 {
            (
                None,
                Some(format!(
                    "diverse score omitted: needs >= 2 samples per image, got {}",
                    opts.n_samples
                )),
            )
        } else {
            (None, None)
        };
        modes.push(ModeReport {
            mode: mode.name().to_string(),
            records,
            aggregate,
            diverse_score,
            diverse_note,
        });
    }

    Ok(MetricsReport {
        schema_version: REPORT_SCHEMA_VERSION,
        dataset: manifest.display().to_string(),
        seed: opts.seed,
        n_samples: opts.n_samples,
        modes,
        skipped,
    })
}

fn evaluate_one(
    model: &Model,
    item: &EvalItem,
    mode: EvalMode,
    mode_idx: usize,
    img_idx: usize,
    opts: &EvalOptions,
) -> Result<ImageRecord> {
    let stream_base = (img_idx as u64) * 1024 + (mode_idx as u64) * 64;
    let mut rng = stream(opts.seed, Stream::Eval(stream_base));
    let run_mode = match mode {
        EvalMode::Reference => Mode::Reference(&opts.references[img_idx % opts.references.len()]),
        EvalMode::Random => Mode::Random,
        EvalMode::LrAsRef => Mode::LrAsRef,
        EvalMode::HrAsRef => Mode::HrAsRef(&item.hr),
    };

    let sr = super_resolve(model, &item.lr, &run_mode, &mut rng)?;
    let diverse = if mode == EvalMode::Random && opts.n_samples >= 2 {
        let mut samples = vec![sr.clone()];
        for s in 1..opts.n_samples {
            let mut rng_s = stream(opts.seed, Stream::Eval(stream_base + s as u64));
            samples.push(super_resolve(model, &item.lr, &Mode::Random, &mut rng_s)?);
        }
        Some(diverse_score(&samples, &item.hr, &PixelAbsError)?)
    } else {
        None
    };

    let perceptual = perceptual_loss(
        &opts.backbone,
        &model.extractor,
        &sr.to_tensor(),
        &item.hr.to_tensor(),
    )?
    .item();
    let (lr_psnr, lr_ssim) = lr_consistency(&sr, &item.lr, model.alpha)?;
    Ok(ImageRecord {
        path: item.path.clone(),
        psnr: psnr(&sr, &item.hr, true)?,
        ssim: ssim(&sr, &item.hr, true)?,
        perceptual,
        lr_psnr,
        lr_ssim,
        diverse_score: diverse,
    })
}
