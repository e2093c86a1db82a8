//! Differentiable separable resampling (linear maps with adjoint backward).

use super::{as_hwc, Tensor};
use crate::imaging::resample::{self, AxisTable};
use ndarray::{ArrayD, IxDyn};
use std::sync::Arc;

fn resize_with(input: &Tensor, rows: AxisTable, cols: AxisTable) -> Tensor {
    let (h, w, c, x) = as_hwc(input.value());
    assert_eq!(rows.src_len, h, "resize: row table mismatch");
    assert_eq!(cols.src_len, w, "resize: column table mismatch");
    let (th, tw) = (rows.dst_len, cols.dst_len);
    let out = resample::resample_hwc(x, w, c, &rows, &cols);
    let value = ArrayD::from_shape_vec(IxDyn(&[th, tw, c]), out).expect("resize shape");
    let tables = Arc::new((rows, cols));
    Tensor::from_op(
        value,
        vec![input.clone()],
        Box::new(move |g, needs| {
            vec![needs[0].then(|| {
                let gv = g.as_slice().expect("contiguous grad");
                let gx = resample::resample_hwc_adjoint(gv, w, c, &tables.0, &tables.1);
                ArrayD::from_shape_vec(IxDyn(&[h, w, c]), gx).expect("resize grad shape")
            })]
        }),
    )
}

impl Tensor {
    /// Bilinear resize of an (H, W, C) tensor to (th, tw, C).
    pub fn resize_bilinear(&self, th: usize, tw: usize) -> Tensor {
        let (h, w, _, _) = as_hwc(self.value());
        resize_with(
            self,
            resample::bilinear_table(h, th),
            resample::bilinear_table(w, tw),
        )
    }

    /// Bicubic resize (Catmull-Rom, antialias on shrink) without clamping;
    /// this is the downsampling operator used inside losses.
    pub fn resize_bicubic(&self, th: usize, tw: usize) -> Tensor {
        let (h, w, _, _) = as_hwc(self.value());
        resize_with(
            self,
            resample::bicubic_table(h, th),
            resample::bicubic_table(w, tw),
        )
    }
}
