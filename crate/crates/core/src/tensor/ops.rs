//! Elementwise and reduction ops.

use super::{as_hwc, Tensor};
use ndarray::{ArrayD, IxDyn};

impl Tensor {
    pub fn add(&self, other: &Tensor) -> Tensor {
        assert_eq!(self.shape(), other.shape(), "add: shape mismatch");
        let value = self.value() + other.value();
        Tensor::from_op(
            value,
            vec![self.clone(), other.clone()],
            Box::new(|g, needs| {
                vec![
                    needs[0].then(|| g.clone()),
                    needs[1].then(|| g.clone()),
                ]
            }),
        )
    }

    pub fn sub(&self, other: &Tensor) -> Tensor {
        assert_eq!(self.shape(), other.shape(), "sub: shape mismatch");
        let value = self.value() - other.value();
        Tensor::from_op(
            value,
            vec![self.clone(), other.clone()],
            Box::new(|g, needs| {
                vec![
                    needs[0].then(|| g.clone()),
                    needs[1].then(|| g.mapv(|v| -v)),
                ]
            }),
        )
    }

    pub fn mul(&self, other: &Tensor) -> Tensor {
        assert_eq!(self.shape(), other.shape(), "mul: shape mismatch");
        let value = self.value() * other.value();
        let a = self.shared_value();
        let b = other.shared_value();
        Tensor::from_op(
            value,
            vec![self.clone(), other.clone()],
            Box::new(move |g, needs| {
                vec![
                    needs[0].then(|| g * &*b),
                    needs[1].then(|| g * &*a),
                ]
            }),
        )
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        let value = self.value().mapv(|v| v + c);
        Tensor::from_op(
            value,
            vec![self.clone()],
            Box::new(|g, needs| vec![needs[0].then(|| g.clone())]),
        )
    }

    pub fn mul_scalar(&self, c: f64) -> Tensor {
        let value = self.value().mapv(|v| v * c);
        Tensor::from_op(
            value,
            vec![self.clone()],
            Box::new(move |g, needs| vec![needs[0].then(|| g.mapv(|v| v * c))]),
        )
    }

    pub fn neg(&self) -> Tensor {
        self.mul_scalar(-1.0)
    }

    pub fn abs(&self) -> Tensor {
        let value = self.value().mapv(f64::abs);
        let x = self.shared_value();
        Tensor::from_op(
            value,
            vec![self.clone()],
            Box::new(move |g, needs| {
                vec![needs[0].then(|| {
                    let mut out = g.clone();
                    out.zip_mut_with(&x, |gv, &xv| *gv *= xv.signum());
                    out
                })]
            }),
        )
    }

    pub fn square(&self) -> Tensor {
        let value = self.value().mapv(|v| v * v);
        let x = self.shared_value();
        Tensor::from_op(
            value,
            vec![self.clone()],
            Box::new(move |g, needs| {
                vec![needs[0].then(|| {
                    let mut out = g.clone();
                    out.zip_mut_with(&x, |gv, &xv| *gv *= 2.0 * xv);
                    out
                })]
            }),
        )
    }

    pub fn exp(&self) -> Tensor {
        let out = std::sync::Arc::new(self.value().mapv(f64::exp));
        let saved = std::sync::Arc::clone(&out);
        Tensor::from_op_shared(
            out,
            vec![self.clone()],
            Box::new(move |g, needs| {
                vec![needs[0].then(|| {
                    let mut gx = g.clone();
                    gx.zip_mut_with(&saved, |gv, &yv| *gv *= yv);
                    gx
                })]
            }),
        )
    }

    /// Numerically stable `ln(1 + e^x)`.
    pub fn softplus(&self) -> Tensor {
        let value = self.value().mapv(softplus_scalar);
        let x = self.shared_value();
        Tensor::from_op(
            value,
            vec![self.clone()],
            Box::new(move |g, needs| {
                vec![needs[0].then(|| {
                    let mut gx = g.clone();
                    gx.zip_mut_with(&x, |gv, &xv| *gv *= sigmoid_scalar(xv));
                    gx
                })]
            }),
        )
    }

    pub fn leaky_relu(&self, slope: f64) -> Tensor {
        let value = self.value().mapv(|v| if v > 0.0 { v } else { slope * v });
        let x = self.shared_value();
        Tensor::from_op(
            value,
            vec![self.clone()],
            Box::new(move |g, needs| {
                vec![needs[0].then(|| {
                    let mut gx = g.clone();
                    gx.zip_mut_with(&x, |gv, &xv| {
                        if xv <= 0.0 {
                            *gv *= slope;
                        }
                    });
                    gx
                })]
            }),
        )
    }

    pub fn relu(&self) -> Tensor {
        self.leaky_relu(0.0)
    }

    /// Clamp to [0, 1]; unit pass-through gradient inside the range.
    pub fn clamp01(&self) -> Tensor {
        let value = self.value().mapv(|v| v.clamp(0.0, 1.0));
        let x = self.shared_value();
        Tensor::from_op(
            value,
            vec![self.clone()],
            Box::new(move |g, needs| {
                vec![needs[0].then(|| {
                    let mut gx = g.clone();
                    gx.zip_mut_with(&x, |gv, &xv| {
                        if !(0.0..=1.0).contains(&xv) {
                            *gv = 0.0;
                        }
                    });
                    gx
                })]
            }),
        )
    }

    pub fn sum_all(&self) -> Tensor {
        let value = ArrayD::from_elem(IxDyn(&[]), self.value().sum());
        let shape: Vec<usize> = self.shape().to_vec();
        Tensor::from_op(
            value,
            vec![self.clone()],
            Box::new(move |g, needs| {
                let seed = g[IxDyn(&[])];
                vec![needs[0].then(|| ArrayD::from_elem(IxDyn(&shape), seed))]
            }),
        )
    }

    pub fn mean_all(&self) -> Tensor {
        let n = self.value().len() as f64;
        let value = ArrayD::from_elem(IxDyn(&[]), self.value().sum() / n);
        let shape: Vec<usize> = self.shape().to_vec();
        Tensor::from_op(
            value,
            vec![self.clone()],
            Box::new(move |g, needs| {
                let seed = g[IxDyn(&[])] / n;
                vec![needs[0].then(|| ArrayD::from_elem(IxDyn(&shape), seed))]
            }),
        )
    }

    /// Per-channel spatial mean: (H, W, C) -> (C).
    pub fn channel_mean(&self) -> Tensor {
        let (h, w, c, x) = as_hwc(self.value());
        let n = (h * w) as f64;
        let mut sums = vec![0.0; c];
        for site in x.chunks_exact(c) {
            for (s, &v) in sums.iter_mut().zip(site) {
                *s += v;
            }
        }
        let value = ArrayD::from_shape_vec(IxDyn(&[c]), sums.iter().map(|s| s / n).collect())
            .expect("channel mean shape");
        let shape = [h, w, c];
        Tensor::from_op(
            value,
            vec![self.clone()],
            Box::new(move |g, needs| {
                vec![needs[0].then(|| {
                    let gc = g.as_slice().expect("contiguous grad");
                    let mut gx = Vec::with_capacity(shape[0] * shape[1] * shape[2]);
                    for _ in 0..shape[0] * shape[1] {
                        gx.extend(gc.iter().map(|v| v / n));
                    }
                    ArrayD::from_shape_vec(IxDyn(&shape), gx).expect("grad shape")
                })]
            }),
        )
    }

    /// Per-site channel-vector L2 normalisation: y = x / sqrt(sum_c x^2 + eps).
    pub fn normalize_channels(&self, eps: f64) -> Tensor {
        let (h, w, c, x) = as_hwc(self.value());
        let mut out = Vec::with_capacity(x.len());
        let mut inv_norms = Vec::with_capacity(h * w);
        for site in x.chunks_exact(c) {
            let s: f64 = site.iter().map(|v| v * v).sum();
            let r = 1.0 / (s + eps).sqrt();
            inv_norms.push(r);
            out.extend(site.iter().map(|v| v * r));
        }
        let value = ArrayD::from_shape_vec(IxDyn(&[h, w, c]), out).expect("normalize shape");
        let xs = self.shared_value();
        Tensor::from_op(
            value,
            vec![self.clone()],
            Box::new(move |g, needs| {
                vec![needs[0].then(|| {
                    // d/dx_k [x r] = r I - r^3 x x^T  (per spatial site)
                    let gv = g.as_slice().expect("contiguous grad");
                    let xv = xs.as_slice().expect("contiguous value");
                    let mut gx = vec![0.0; xv.len()];
                    for (site, r) in inv_norms.iter().enumerate() {
                        let base = site * c;
                        let xsite = &xv[base..base + c];
                        let gsite = &gv[base..base + c];
                        let dot: f64 = xsite.iter().zip(gsite).map(|(x, g)| x * g).sum();
                        let r3dot = r * r * r * dot;
                        for k in 0..c {
                            gx[base + k] = r * gsite[k] - r3dot * xsite[k];
                        }
                    }
                    ArrayD::from_shape_vec(IxDyn(&[h, w, c]), gx).expect("grad shape")
                })]
            }),
        )
    }

    /// Total-variation penalty on first-order pixel gradients.
    ///
    /// Per site and channel, `(dh^2 + dv^2)^beta` where `dh` is the
    /// difference to the left neighbour and `dv` to the upper neighbour
    /// (zero where no neighbour exists), averaged over all sites and
    /// channels.
    pub fn tv(&self, beta: f64) -> Tensor {
        let (h, w, c, x) = as_hwc(self.value());
        let idx = move |i: usize, j: usize, k: usize| (i * w + j) * c + k;
        let mut total = 0.0;
        for i in 0..h {
            for j in 0..w {
                for k in 0..c {
                    let v = x[idx(i, j, k)];
                    let dh = if j > 0 { x[idx(i, j - 1, k)] - v } else { 0.0 };
                    let dv = if i > 0 { x[idx(i - 1, j, k)] - v } else { 0.0 };
                    let s = dh * dh + dv * dv;
                    if s > 0.0 {
                        total += s.powf(beta);
                    }
                }
            }
        }
        let n = (h * w * c) as f64;
        let value = ArrayD::from_elem(IxDyn(&[]), total / n);
        let xs = self.shared_value();
        Tensor::from_op(
            value,
            vec![self.clone()],
            Box::new(move |g, needs| {
                vec![needs[0].then(|| {
                    let seed = g[IxDyn(&[])] / n;
                    let xv = xs.as_slice().expect("contiguous value");
                    let mut gx = vec![0.0; xv.len()];
                    for i in 0..h {
                        for j in 0..w {
                            for k in 0..c {
                                let v = xv[idx(i, j, k)];
                                let dh = if j > 0 { xv[idx(i, j - 1, k)] - v } else { 0.0 };
                                let dv = if i > 0 { xv[idx(i - 1, j, k)] - v } else { 0.0 };
                                let s = dh * dh + dv * dv;
                                if s <= 0.0 {
                                    continue;
                                }
                                let outer = beta * s.powf(beta - 1.0) * seed;
                                if j > 0 {
                                    gx[idx(i, j - 1, k)] += outer * 2.0 * dh;
                                    gx[idx(i, j, k)] -= outer * 2.0 * dh;
                                }
                                if i > 0 {
                                    gx[idx(i - 1, j, k)] += outer * 2.0 * dv;
                                    gx[idx(i, j, k)] -= outer * 2.0 * dv;
                                }
                            }
                        }
                    }
                    ArrayD::from_shape_vec(IxDyn(&[h, w, c]), gx).expect("grad shape")
                })]
            }),
        )
    }

    /// Mean absolute difference: `mean(|a - b|)`.
    pub fn l1_to(&self, other: &Tensor) -> Tensor {
        self.sub(other).abs().mean_all()
    }

    /// Per-channel population variance: (H, W, C) -> (C).
    pub fn channel_var(&self) -> Tensor {
        let mean_sq = self.mul(self).channel_mean();
        let mean = self.channel_mean();
        mean_sq.sub(&mean.mul(&mean))
    }
}

pub(crate) fn softplus_scalar(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub(crate) fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
