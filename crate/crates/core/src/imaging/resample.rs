//! Separable resampling kernels and their precomputed tap tables.
//!
//! One table per axis: each output coordinate gets a contiguous span of
//! source indices plus normalised weights. Out-of-range taps are folded
//! into the nearest edge sample, and every weight row is renormalised so
//! the taps sum to exactly 1 (partition of unity), which makes constant
//! inputs map to the same constant.
//!
//! The cubic kernel is the Catmull-Rom family member (a = -0.5). When an
//! axis shrinks, the kernel is stretched by the scale factor so it acts as
//! an antialias prefilter.

/// One output coordinate's source span and weights.
#[derive(Debug, Clone)]
pub struct Tap {
    pub start: usize,
    pub weights: Vec<f64>,
}

/// Resampling plan for a single axis.
#[derive(Debug, Clone)]
pub struct AxisTable {
    pub src_len: usize,
    pub dst_len: usize,
    pub taps: Vec<Tap>,
}

fn cubic(x: f64) -> f64 {
    // Catmull-Rom: a = -0.5
    let x = x.abs();
    if x < 1.0 {
        (1.5 * x - 2.5) * x * x + 1.0
    } else if x < 2.0 {
        ((-0.5 * x + 2.5) * x - 4.0) * x + 2.0
    } else {
        0.0
    }
}

fn linear(x: f64) -> f64 {
    (1.0 - x.abs()).max(0.0)
}

fn build_table(
    src_len: usize,
    dst_len: usize,
    kernel: fn(f64) -> f64,
    support: f64,
    antialias: bool,
) -> AxisTable {
    assert!(src_len >= 1 && dst_len >= 1, "resample: empty axis");
    let scale = src_len as f64 / dst_len as f64;
    let filter_scale = if antialias && scale > 1.0 { scale } else { 1.0 };
    let radius = support * filter_scale;
    let mut taps = Vec::with_capacity(dst_len);
    for o in 0..dst_len {
        // Half-pixel centres on both grids.
        let center = (o as f64 + 0.5) * scale - 0.5;
        let lo = (center - radius).ceil() as isize;
        let hi = (center + radius).floor() as isize;
        let clamp = |i: isize| i.clamp(0, src_len as isize - 1) as usize;
        let start = clamp(lo);
        let end = clamp(hi);
        let mut weights = vec![0.0; end - start + 1];
        let mut sum = 0.0;
        for i in lo..=hi {
            let w = kernel((i as f64 - center) / filter_scale);
            weights[clamp(i) - start] += w;
            sum += w;
        }
        if sum.abs() < 1e-12 {
            // Pathological span; fall back to nearest neighbour.
            weights.iter_mut().for_each(|w| *w = 0.0);
            weights[clamp(center.round() as isize) - start] = 1.0;
        } else {
            weights.iter_mut().for_each(|w| *w /= sum);
        }
        taps.push(Tap { start, weights });
    }
    AxisTable {
        src_len,
        dst_len,
        taps,
    }
}

/// Catmull-Rom bicubic plan with antialias prefiltering on shrink.
pub fn bicubic_table(src_len: usize, dst_len: usize) -> AxisTable {
    build_table(src_len, dst_len, cubic, 2.0, true)
}

/// Bilinear plan (no antialias; used by in-network upsampling).
pub fn bilinear_table(src_len: usize, dst_len: usize) -> AxisTable {
    build_table(src_len, dst_len, linear, 1.0, false)
}

/// Resamples a flat (H, W, C) buffer through per-axis plans.
pub fn resample_hwc(
    input: &[f64],
    w: usize,
    c: usize,
    rows: &AxisTable,
    cols: &AxisTable,
) -> Vec<f64> {
    let (h, th, tw) = (rows.src_len, rows.dst_len, cols.dst_len);
    assert_eq!(input.len(), h * w * c, "resample: buffer size mismatch");
    assert_eq!(cols.src_len, w, "resample: column table mismatch");

    // Vertical pass: (H, W, C) -> (TH, W, C)
    let stride = w * c;
    let mut mid = vec![0.0; th * stride];
    for (ty, tap) in rows.taps.iter().enumerate() {
        let out = &mut mid[ty * stride..(ty + 1) * stride];
        for (j, &wgt) in tap.weights.iter().enumerate() {
            let src = &input[(tap.start + j) * stride..(tap.start + j + 1) * stride];
            for (o, &s) in out.iter_mut().zip(src) {
                *o += wgt * s;
            }
        }
    }

    // Horizontal pass: (TH, W, C) -> (TH, TW, C)
    let mut out = vec![0.0; th * tw * c];
    for r in 0..th {
        let src_row = &mid[r * stride..(r + 1) * stride];
        let out_row = &mut out[r * tw * c..(r + 1) * tw * c];
        for (tx, tap) in cols.taps.iter().enumerate() {
            let dst = &mut out_row[tx * c..(tx + 1) * c];
            for (j, &wgt) in tap.weights.iter().enumerate() {
                let src = &src_row[(tap.start + j) * c..(tap.start + j + 1) * c];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d += wgt * s;
                }
            }
        }
    }
    out
}

/// Adjoint of [`resample_hwc`]: scatters an output-shaped gradient back to
/// input shape. Linear maps make this the exact transpose.
pub fn resample_hwc_adjoint(
    grad: &[f64],
    w: usize,
    c: usize,
    rows: &AxisTable,
    cols: &AxisTable,
) -> Vec<f64> {
    let (h, th, tw) = (rows.src_len, rows.dst_len, cols.dst_len);
    assert_eq!(grad.len(), th * tw * c, "adjoint: buffer size mismatch");

    // Horizontal adjoint: (TH, TW, C) -> (TH, W, C)
    let stride = w * c;
    let mut mid = vec![0.0; th * stride];
    for r in 0..th {
        let g_row = &grad[r * tw * c..(r + 1) * tw * c];
        let m_row = &mut mid[r * stride..(r + 1) * stride];
        for (tx, tap) in cols.taps.iter().enumerate() {
            let g = &g_row[tx * c..(tx + 1) * c];
            for (j, &wgt) in tap.weights.iter().enumerate() {
                let dst = &mut m_row[(tap.start + j) * c..(tap.start + j + 1) * c];
                for (d, &gv) in dst.iter_mut().zip(g) {
                    *d += wgt * gv;
                }
            }
        }
    }

    // Vertical adjoint: (TH, W, C) -> (H, W, C)
    let mut out = vec![0.0; h * stride];
    for (ty, tap) in rows.taps.iter().enumerate() {
        let g = &mid[ty * stride..(ty + 1) * stride];
        for (j, &wgt) in tap.weights.iter().enumerate() {
            let dst = &mut out[(tap.start + j) * stride..(tap.start + j + 1) * stride];
            for (d, &gv) in dst.iter_mut().zip(g) {
                *d += wgt * gv;
            }
        }
    }
    out
}
