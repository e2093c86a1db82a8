//! Finite-difference validation of every autodiff op.
//!
//! Each check builds a scalar function of one or more input arrays through
//! the graph, backpropagates, and compares against central differences at
//! double precision.

mod common;

use common::{assert_grads_close, fd_gradients, random_array};
use ndarray::ArrayD;
use refsr_core::tensor::{conv2d, maxpool2, Pad, Tensor};

const H: f64 = 1e-5;
const REL: f64 = 1e-5;
const FLOOR: f64 = 1e-7;

/// Runs one gradient check: `build` maps leaf tensors to a scalar tensor.
fn check(label: &str, inputs: &[ArrayD<f64>], build: &dyn Fn(&[Tensor]) -> Tensor) {
    let leaves: Vec<Tensor> = inputs
        .iter()
        .map(|a| Tensor::leaf(std::sync::Arc::new(a.clone()), true))
        .collect();
    let out = build(&leaves);
    assert_eq!(out.shape().len(), 0, "{label}: check output must be scalar");
    out.backward();
    let analytic: Vec<ArrayD<f64>> = leaves
        .iter()
        .map(|l| l.grad().unwrap_or_else(|| ArrayD::zeros(l.value().raw_dim())))
        .collect();

    let mut f = |arrays: &[ArrayD<f64>]| {
        let leaves: Vec<Tensor> = arrays
            .iter()
            .map(|a| Tensor::leaf(std::sync::Arc::new(a.clone()), false))
            .collect();
        build(&leaves).item()
    };
    let numeric = fd_gradients(&mut f, inputs, H);
    for (i, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
        assert_grads_close(a, n, REL, FLOOR, &format!("{label}/input{i}"));
    }
}

#[test]
fn elementwise_ops() {
    let a = random_array(1, &[3, 4], -1.0, 1.0);
    let b = random_array(2, &[3, 4], -1.0, 1.0);
    check("add", &[a.clone(), b.clone()], &|t| t[0].add(&t[1]).mean_all());
    check("sub", &[a.clone(), b.clone()], &|t| t[0].sub(&t[1]).mean_all());
    check("mul", &[a.clone(), b.clone()], &|t| t[0].mul(&t[1]).sum_all());
    check("scalar", &[a.clone()], &|t| {
        t[0].mul_scalar(3.5).add_scalar(-0.25).mean_all()
    });
    check("square", &[a.clone()], &|t| t[0].square().sum_all());
    check("exp", &[a.clone()], &|t| t[0].exp().mean_all());
    check("softplus", &[a.clone()], &|t| t[0].softplus().mean_all());
    // Keep |x| away from the kinks of abs / relu.
    let far = a.mapv(|v| if v.abs() < 0.2 { v + 0.5 } else { v });
    check("abs", &[far.clone()], &|t| t[0].abs().mean_all());
    check("leaky", &[far.clone()], &|t| t[0].leaky_relu(0.2).sum_all());
    check("relu", &[far], &|t| t[0].relu().sum_all());
}

#[test]
fn reductions_and_stats() {
    let a = random_array(3, &[4, 5, 3], -1.0, 1.0);
    let b = random_array(4, &[4, 5, 3], -1.0, 1.0);
    check("mean_all", &[a.clone()], &|t| t[0].mean_all());
    check("channel_mean", &[a.clone()], &|t| t[0].channel_mean().sum_all());
    check("channel_var", &[a.clone()], &|t| t[0].channel_var().sum_all());
    check("l1", &[a.clone(), b.clone()], &|t| t[0].l1_to(&t[1]));
    check("normalize", &[a], &|t| {
        t[0].normalize_channels(1e-10).square().sum_all()
    });
}

#[test]
fn clamp_gradient_inside_range() {
    let a = random_array(5, &[3, 3], 0.1, 0.9);
    check("clamp01", &[a], &|t| t[0].clamp01().square().sum_all());
}

#[test]
fn tv_penalty() {
    let a = random_array(6, &[5, 4, 3], 0.0, 1.0);
    check("tv_beta1", &[a.clone()], &|t| t[0].tv(1.0));
    check("tv_beta0.8", &[a], &|t| t[0].tv(0.8));
}

#[test]
fn convolution_all_paths() {
    let x = random_array(7, &[6, 5, 2], -1.0, 1.0);
    let w = random_array(8, &[3, 3, 3, 2], -0.5, 0.5);
    let b = random_array(9, &[3], -0.1, 0.1);
    check("conv_reflect", &[x.clone(), w.clone(), b.clone()], &|t| {
        conv2d(&t[0], &t[1], &t[2], 1, 1, Pad::Reflect).square().mean_all()
    });
    check("conv_zero", &[x.clone(), w.clone(), b.clone()], &|t| {
        conv2d(&t[0], &t[1], &t[2], 1, 1, Pad::Zero).square().mean_all()
    });
    let w4 = random_array(10, &[2, 4, 4, 2], -0.5, 0.5);
    let b4 = random_array(11, &[2], -0.1, 0.1);
    let x8 = random_array(12, &[8, 8, 2], -1.0, 1.0);
    check("conv_strided", &[x8, w4, b4], &|t| {
        conv2d(&t[0], &t[1], &t[2], 2, 1, Pad::Zero).square().mean_all()
    });
}

#[test]
fn pooling() {
    // Perturb well away from ties so the argmax stays put under FD steps.
    let mut x = random_array(13, &[6, 6, 2], 0.0, 1.0);
    for (i, v) in x.as_slice_mut().unwrap().iter_mut().enumerate() {
        *v += (i % 7) as f64 * 0.31;
    }
    check("maxpool2", &[x], &|t| maxpool2(&t[0]).square().sum_all());
}

#[test]
fn resizes() {
    let x = random_array(14, &[6, 8, 3], -1.0, 1.0);
    check("bilinear_up", &[x.clone()], &|t| {
        t[0].resize_bilinear(12, 16).square().mean_all()
    });
    check("bilinear_arbitrary", &[x.clone()], &|t| {
        t[0].resize_bilinear(5, 11).square().mean_all()
    });
    check("bicubic_down", &[x.clone()], &|t| {
        t[0].resize_bicubic(3, 4).square().mean_all()
    });
    check("bicubic_up", &[x], &|t| {
        t[0].resize_bicubic(9, 12).square().mean_all()
    });
}

#[test]
fn composite_chain() {
    // A miniature of the real pipeline: conv -> leaky -> pool -> bilinear
    // -> conv -> clamp -> L1, all in one graph.
    let x = random_array(15, &[8, 8, 2], 0.0, 1.0);
    let w1 = random_array(16, &[4, 3, 3, 2], -0.4, 0.4);
    let b1 = random_array(17, &[4], -0.05, 0.05);
    let w2 = random_array(18, &[3, 3, 3, 4], -0.4, 0.4);
    let b2 = ArrayD::from_elem(ndarray::IxDyn(&[3]), 0.5);
    check("chain", &[x, w1, b1, w2, b2], &|t| {
        let h = conv2d(&t[0], &t[1], &t[2], 1, 1, Pad::Reflect).leaky_relu(0.2);
        let h = maxpool2(&h);
        let h = h.resize_bilinear(8, 8);
        let y = conv2d(&h, &t[3], &t[4], 1, 1, Pad::Reflect).clamp01();
        y.l1_to(&Tensor::constant(random_array(19, &[8, 8, 3], 0.2, 0.8)))
    });
}
