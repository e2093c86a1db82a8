//! Image container, PNG I/O, colour conversion, bicubic resampling and the
//! synthetic degradation model.
//!
//! Pixels are `f64` in [0, 1]; PNG 8-bit RGB is the interchange format.
//! Every raster-producing operation clamps back into [0, 1].

pub mod resample;

use ndarray::{Array3, ArrayD, IxDyn};
use rand::Rng as _;
use rand_distr::StandardNormal;
use std::path::Path;

use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::{Error, Result};

/// An H x W x 3 raster with values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pixels: Array3<f64>,
}

impl Image {
    /// Wraps pixel data, validating range and shape.
    pub fn new(pixels: Array3<f64>) -> Result<Self> {
        let (h, w, c) = pixels.dim();
        if h == 0 || w == 0 {
            return Err(Error::Shape("image must be at least 1x1".into()));
        }
        if c != 3 {
            return Err(Error::Shape(format!("image must have 3 channels, got {c}")));
        }
        if pixels.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Data("pixel values outside [0, 1]".into()));
        }
        Ok(Image { pixels })
    }

    /// Wraps pixel data, clamping into [0, 1].
    pub fn from_clamped(mut pixels: Array3<f64>) -> Self {
        pixels.mapv_inplace(|v| v.clamp(0.0, 1.0));
        Image { pixels }
    }

    pub fn constant(height: usize, width: usize, value: f64) -> Self {
        Image::from_clamped(Array3::from_elem((height, width, 3), value))
    }

    pub fn height(&self) -> usize {
        self.pixels.dim().0
    }

    pub fn width(&self) -> usize {
        self.pixels.dim().1
    }

    pub fn pixels(&self) -> &Array3<f64> {
        &self.pixels
    }

    pub fn as_slice(&self) -> &[f64] {
        self.pixels.as_slice().expect("image storage is contiguous")
    }

    /// Constant (no-gradient) tensor view of the raster.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::constant(self.pixels.clone().into_dyn())
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let shape = t.shape();
        if shape.len() != 3 || shape[2] != 3 {
            return Err(Error::Shape(format!("tensor shape {shape:?} is not an image")));
        }
        let arr = t
            .value()
            .clone()
            .into_dimensionality::<ndarray::Ix3>()
            .map_err(|e| Error::Shape(e.to_string()))?;
        Ok(Image::from_clamped(arr))
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path)
            .map_err(|e| Error::Data(format!("cannot read image {path:?}: {e}")))?
            .to_rgb8();
        let (w, h) = img.dimensions();
        let mut pixels = Array3::zeros((h as usize, w as usize, 3));
        for (x, y, p) in img.enumerate_pixels() {
            for k in 0..3 {
                pixels[(y as usize, x as usize, k)] = p.0[k] as f64 / 255.0;
            }
        }
        Ok(Image { pixels })
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let (h, w, _) = self.pixels.dim();
        let mut img = image::RgbImage::new(w as u32, h as u32);
        for (x, y, p) in img.enumerate_pixels_mut() {
            for k in 0..3 {
                let v = self.pixels[(y as usize, x as usize, k)];
                p.0[k] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            }
        }
        img.save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| Error::Data(format!("cannot write image {path:?}: {e}")))
    }

    /// Maximum absolute pixel difference to another image of the same size.
    pub fn max_abs_diff(&self, other: &Image) -> f64 {
        self.pixels
            .iter()
            .zip(other.pixels.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// BT.601 studio-swing forward matrix, 0..255 scale.
const YCBCR_FWD: [[f64; 3]; 3] = [
    [65.481, 128.553, 24.966],
    [-37.797, -74.203, 112.0],
    [112.0, -93.786, -18.214],
];
const YCBCR_OFFSET: [f64; 3] = [16.0, 128.0, 128.0];

fn invert3(m: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    let mut inv = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let (a, b) = ((i + 1) % 3, (i + 2) % 3);
            let (c, d) = ((j + 1) % 3, (j + 2) % 3);
            // Cofactor transpose.
            inv[j][i] = (m[a][c] * m[b][d] - m[a][d] * m[b][c]) / det;
        }
    }
    inv
}

/// RGB -> YCbCr (BT.601 studio swing). Plane 0 of the result is Y.
///
/// Black maps to Y = 16/255 and white to 235/255; the matrix is applied in
/// floating point, so the round trip through [`ycbcr_to_rgb`] is exact up
/// to rounding.
pub fn rgb_to_ycbcr(img: &Image) -> Image {
    let mut out = img.pixels.clone();
    for mut px in out.rows_mut() {
        let rgb = [px[0], px[1], px[2]];
        for k in 0..3 {
            let v: f64 = (0..3).map(|j| YCBCR_FWD[k][j] * rgb[j]).sum();
            px[k] = ((v + YCBCR_OFFSET[k]) / 255.0).clamp(0.0, 1.0);
        }
    }
    Image { pixels: out }
}

/// Inverse of [`rgb_to_ycbcr`].
pub fn ycbcr_to_rgb(img: &Image) -> Image {
    let inv = invert3(&YCBCR_FWD);
    let mut out = img.pixels.clone();
    for mut px in out.rows_mut() {
        let ycc = [
            px[0] * 255.0 - YCBCR_OFFSET[0],
            px[1] * 255.0 - YCBCR_OFFSET[1],
            px[2] * 255.0 - YCBCR_OFFSET[2],
        ];
        for k in 0..3 {
            let v: f64 = (0..3).map(|j| inv[k][j] * ycc[j]).sum();
            px[k] = v.clamp(0.0, 1.0);
        }
    }
    Image { pixels: out }
}

/// The Y plane of an image, via the BT.601 conversion.
pub fn luma(img: &Image) -> ndarray::Array2<f64> {
    let ycc = rgb_to_ycbcr(img);
    ycc.pixels.index_axis(ndarray::Axis(2), 0).to_owned()
}

/// Catmull-Rom bicubic resize with antialias prefiltering on shrink.
/// Output is clamped to [0, 1].
pub fn bicubic_resize(img: &Image, out_h: usize, out_w: usize) -> Result<Image> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::Config(format!(
            "target dimensions must be positive, got {out_h}x{out_w}"
        )));
    }
    let (h, w, c) = img.pixels.dim();
    let rows = resample::bicubic_table(h, out_h);
    let cols = resample::bicubic_table(w, out_w);
    let out = resample::resample_hwc(img.as_slice(), w, c, &rows, &cols);
    let arr = Array3::from_shape_vec((out_h, out_w, c), out).expect("resize shape");
    Ok(Image::from_clamped(arr))
}

/// Degradation configuration: the downsampling factor, the implicit
/// bicubic kernel, and the additive-noise level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DegradationConfig {
    pub scale: usize,
    pub noise_std: f64,
}

impl Default for DegradationConfig {
    fn default() -> Self {
        DegradationConfig {
            scale: 8,
            noise_std: 0.0,
        }
    }
}

impl DegradationConfig {
    pub fn new(scale: usize, noise_std: f64) -> Result<Self> {
        if scale < 1 {
            return Err(Error::Config("degradation scale must be >= 1".into()));
        }
        if !(noise_std >= 0.0) {
            return Err(Error::Config("noise_std must be non-negative".into()));
        }
        Ok(DegradationConfig { scale, noise_std })
    }
}

/// HR -> LR: bicubic downsample by the configured factor, then i.i.d.
/// Gaussian noise, then clamp.
pub fn degrade(hr: &Image, cfg: &DegradationConfig, rng: &mut Rng) -> Result<Image> {
    let (h, w) = (hr.height(), hr.width());
    if h % cfg.scale != 0 || w % cfg.scale != 0 {
        return Err(Error::Shape(format!(
            "HR dimensions {h}x{w} not divisible by scale {}",
            cfg.scale
        )));
    }
    let lr = bicubic_resize(hr, h / cfg.scale, w / cfg.scale)?;
    if cfg.noise_std == 0.0 {
        return Ok(lr);
    }
    let mut noisy = lr.pixels.clone();
    for v in noisy.iter_mut() {
        let n: f64 = rng.sample(StandardNormal);
        *v += cfg.noise_std * n;
    }
    Ok(Image::from_clamped(noisy))
}

/// Extracts aligned (LR, HR) patch pairs on a stride grid. Each HR patch is
/// degraded independently with a child noise stream drawn from `rng` in
/// row-major patch order, so a pair can be re-derived from its HR patch
/// alone. Images smaller than the patch yield no pairs.
pub fn extract_patch_pairs(
    hr: &Image,
    cfg: &DegradationConfig,
    patch: usize,
    stride: usize,
    rng: &mut Rng,
) -> Result<Vec<(Image, Image)>> {
    if patch == 0 || patch % cfg.scale != 0 {
        return Err(Error::Config(format!(
            "patch size {patch} must be a positive multiple of scale {}",
            cfg.scale
        )));
    }
    if stride == 0 {
        return Err(Error::Config("stride must be >= 1".into()));
    }
    let (h, w) = (hr.height(), hr.width());
    let mut pairs = Vec::new();
    if h < patch || w < patch {
        return Ok(pairs);
    }
    let mut y = 0;
    while y + patch <= h {
        let mut x = 0;
        while x + patch <= w {
            let hr_patch = crop(hr, y, x, patch, patch);
            let child_seed: u64 = rng.random();
            let mut child = crate::rng::stream(child_seed, crate::rng::Stream::Degrade(0));
            let lr_patch = degrade(&hr_patch, cfg, &mut child)?;
            pairs.push((lr_patch, hr_patch));
            x += stride;
        }
        y += stride;
    }
    Ok(pairs)
}

/// Reads a line-delimited manifest of image paths. Blank lines and `#`
/// comments are skipped; relative paths resolve against the manifest's
/// directory.
pub fn read_manifest(path: &Path) -> Result<Vec<std::path::PathBuf>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Data(format!("cannot read manifest {path:?}: {e}")))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut out = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let p = Path::new(line);
        out.push(if p.is_absolute() {
            p.to_path_buf()
        } else {
            base.join(p)
        });
    }
    Ok(out)
}

/// Axis-aligned crop; caller guarantees bounds.
pub fn crop(img: &Image, y: usize, x: usize, h: usize, w: usize) -> Image {
    let view = img
        .pixels
        .slice(ndarray::s![y..y + h, x..x + w, ..])
        .to_owned();
    Image { pixels: view }
}

/// Constant (no-gradient) tensor from raw HWC data; test and pipeline glue.
pub fn tensor_from_hwc(h: usize, w: usize, c: usize, data: Vec<f64>) -> Tensor {
    Tensor::constant(ArrayD::from_shape_vec(IxDyn(&[h, w, c]), data).expect("hwc shape"))
}
