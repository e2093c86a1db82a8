//! 2-D convolution (im2col + GEMM) and max-pooling.
//!
//! Layouts: activations are (H, W, C); kernels are (O, K, K, I) so the
//! flattened kernel matrix lines up with the (ky, kx, in) column order of
//! the im2col matrix and both GEMM operands stay contiguous.

use super::{as_hwc, Tensor};
use ndarray::{Array2, ArrayD, ArrayView2, Axis, IxDyn};
use std::sync::Arc;

/// Border handling for the implicit padding ring.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pad {
    /// Mirror across the edge sample (no edge duplication).
    Reflect,
    /// Zero fill.
    Zero,
}

/// Source index for padded coordinate `t` on an axis of length `n`;
/// `None` means "outside" (zero padding).
fn pad_index(t: isize, n: usize, pad: Pad) -> Option<usize> {
    if t >= 0 && (t as usize) < n {
        return Some(t as usize);
    }
    match pad {
        Pad::Zero => None,
        Pad::Reflect => {
            if n == 1 {
                return Some(0);
            }
            let period = 2 * (n as isize - 1);
            let mut m = t % period;
            if m < 0 {
                m += period;
            }
            Some(if m < n as isize {
                m as usize
            } else {
                (period - m) as usize
            })
        }
    }
}

/// im2col source maps: for each output position and kernel offset, where in
/// the input to read (`usize::MAX` marks zero padding).
fn axis_map(out_len: usize, k: usize, stride: usize, pad_amount: usize, n: usize, pad: Pad) -> Vec<usize> {
    let mut map = Vec::with_capacity(out_len * k);
    for o in 0..out_len {
        for kk in 0..k {
            let t = (o * stride) as isize - pad_amount as isize + kk as isize;
            map.push(pad_index(t, n, pad).unwrap_or(usize::MAX));
        }
    }
    map
}

/// Convolution with square `k`x`k` kernels.
///
/// `input` (H, W, I), `weight` (O, K, K, I), `bias` (O). Output spatial
/// size is `(dim + 2*pad_amount - k) / stride + 1` per axis.
pub fn conv2d(
    input: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    stride: usize,
    pad_amount: usize,
    pad: Pad,
) -> Tensor {
    let (h, w, ci) = {
        let (h, w, c, _) = as_hwc(input.value());
        (h, w, c)
    };
    let wshape = weight.shape();
    assert_eq!(wshape.len(), 4, "conv2d: weight must be (O, K, K, I)");
    let (co, k) = (wshape[0], wshape[1]);
    assert_eq!(wshape[2], k, "conv2d: kernels must be square");
    assert_eq!(wshape[3], ci, "conv2d: input channels mismatch");
    assert_eq!(bias.shape(), [co], "conv2d: bias shape mismatch");
    assert!(
        h + 2 * pad_amount >= k && w + 2 * pad_amount >= k,
        "conv2d: input {h}x{w} too small for {k}x{k} kernel"
    );
    let oh = (h + 2 * pad_amount - k) / stride + 1;
    let ow = (w + 2 * pad_amount - k) / stride + 1;

    let row_map = Arc::new(axis_map(oh, k, stride, pad_amount, h, pad));
    let col_map = Arc::new(axis_map(ow, k, stride, pad_amount, w, pad));

    let x = input.value().as_slice().expect("contiguous input");
    let kki = k * k * ci;
    // Filled strictly in layout order, so no zero-init pass is needed.
    let mut col_data: Vec<f64> = Vec::with_capacity(oh * ow * kki);
    for oy in 0..oh {
        for ox in 0..ow {
            for ky in 0..k {
                let sy = row_map[oy * k + ky];
                for kx in 0..k {
                    let sx = col_map[ox * k + kx];
                    if sy == usize::MAX || sx == usize::MAX {
                        col_data.resize(col_data.len() + ci, 0.0);
                    } else {
                        let src = (sy * w + sx) * ci;
                        col_data.extend_from_slice(&x[src..src + ci]);
                    }
                }
            }
        }
    }
    let col = Array2::from_shape_vec((oh * ow, kki), col_data).expect("col shape");

    let w_mat = ArrayView2::from_shape(
        (co, kki),
        weight.value().as_slice().expect("contiguous weight"),
    )
    .expect("weight matrix view");
    let mut out = col.dot(&w_mat.t()); // (oh*ow, co)
    let b = ArrayView2::from_shape((1, co), bias.value().as_slice().expect("contiguous bias"))
        .expect("bias view");
    out += &b;

    let value = out
        .into_shape_with_order(IxDyn(&[oh, ow, co]))
        .expect("conv output shape");

    let col = Arc::new(col);
    let w_saved = weight.shared_value();
    let in_shape = [h, w, ci];
    Tensor::from_op(
        value,
        vec![input.clone(), weight.clone(), bias.clone()],
        Box::new(move |g, needs| {
            let g_mat = ArrayView2::from_shape((oh * ow, co), g.as_slice().expect("contiguous grad"))
                .expect("grad view");
            let grad_input = needs[0].then(|| {
                let w_mat = ArrayView2::from_shape((co, kki), w_saved.as_slice().unwrap()).unwrap();
                let grad_col = g_mat.dot(&w_mat); // (oh*ow, kki)
                let gc = grad_col.as_slice().expect("contiguous grad col");
                let mut gx = vec![0.0; in_shape[0] * in_shape[1] * in_shape[2]];
                for oy in 0..oh {
                    for ox in 0..ow {
                        let row_base = (oy * ow + ox) * kki;
                        for ky in 0..k {
                            let sy = row_map[oy * k + ky];
                            if sy == usize::MAX {
                                continue;
                            }
                            for kx in 0..k {
                                let sx = col_map[ox * k + kx];
                                if sx == usize::MAX {
                                    continue;
                                }
                                let dst = (sy * in_shape[1] + sx) * ci;
                                let src = row_base + (ky * k + kx) * ci;
                                for c in 0..ci {
                                    gx[dst + c] += gc[src + c];
                                }
                            }
                        }
                    }
                }
                ArrayD::from_shape_vec(IxDyn(&in_shape), gx).expect("input grad shape")
            });
            let grad_weight = needs[1].then(|| {
                g_mat
                    .t()
                    .dot(&*col)
                    .into_shape_with_order(IxDyn(&[co, k, k, ci]))
                    .expect("weight grad shape")
            });
            let grad_bias = needs[2].then(|| g_mat.sum_axis(Axis(0)).into_dyn());
            vec![grad_input, grad_weight, grad_bias]
        }),
    )
}

/// 2x2 max-pooling with stride 2; trailing odd rows/columns are dropped.
pub fn maxpool2(input: &Tensor) -> Tensor {
    let (h, w, c, x) = as_hwc(input.value());
    let (oh, ow) = (h / 2, w / 2);
    assert!(oh >= 1 && ow >= 1, "maxpool2: input {h}x{w} too small");
    let mut out = vec![f64::NEG_INFINITY; oh * ow * c];
    let mut argmax = vec![0usize; oh * ow * c];
    for oy in 0..oh {
        for ox in 0..ow {
            let dst = (oy * ow + ox) * c;
            for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                let src = ((2 * oy + dy) * w + 2 * ox + dx) * c;
                for k in 0..c {
                    if x[src + k] > out[dst + k] {
                        out[dst + k] = x[src + k];
                        argmax[dst + k] = src + k;
                    }
                }
            }
        }
    }
    let value = ArrayD::from_shape_vec(IxDyn(&[oh, ow, c]), out).expect("pool shape");
    let in_len = h * w * c;
    let in_shape = [h, w, c];
    Tensor::from_op(
        value,
        vec![input.clone()],
        Box::new(move |g, needs| {
            vec![needs[0].then(|| {
                let gv = g.as_slice().expect("contiguous grad");
                let mut gx = vec![0.0; in_len];
                for (i, &src) in argmax.iter().enumerate() {
                    gx[src] += gv[i];
                }
                ArrayD::from_shape_vec(IxDyn(&in_shape), gx).expect("pool grad shape")
            })]
        }),
    )
}
