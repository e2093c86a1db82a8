//! Shared test support: finite-difference gradients, deterministic random
//! arrays, and the synthetic desk corpus.
//!
//! The finite-difference path is the independent oracle for every gradient
//! assertion, so it deliberately goes through nothing but closure calls:
//! perturb one coordinate, re-run the full forward function, difference.

#![allow(dead_code)]

use ndarray::{Array3, ArrayD, IxDyn};
use rand::Rng as _;
use refsr_core::imaging::Image;
use refsr_core::rng::{stream, Stream};
use std::path::{Path, PathBuf};

/// Central finite differences of `f` with respect to every coordinate of
/// every input array.
pub fn fd_gradients(
    f: &mut dyn FnMut(&[ArrayD<f64>]) -> f64,
    inputs: &[ArrayD<f64>],
    h: f64,
) -> Vec<ArrayD<f64>> {
    let mut grads = Vec::with_capacity(inputs.len());
    for i in 0..inputs.len() {
        let mut grad = ArrayD::zeros(IxDyn(inputs[i].shape()));
        let len = inputs[i].len();
        for k in 0..len {
            let mut plus = inputs.to_vec();
            let mut minus = inputs.to_vec();
            let step = h * inputs[i].as_slice().unwrap()[k].abs().max(1.0);
            plus[i].as_slice_mut().unwrap()[k] += step;
            minus[i].as_slice_mut().unwrap()[k] -= step;
            let fp = f(&plus);
            let fm = f(&minus);
            grad.as_slice_mut().unwrap()[k] = (fp - fm) / (2.0 * step);
        }
        grads.push(grad);
    }
    grads
}

/// Asserts per-coordinate relative agreement between analytic and numeric
/// gradients. Components below `abs_floor` in both are compared absolutely.
pub fn assert_grads_close(
    analytic: &ArrayD<f64>,
    numeric: &ArrayD<f64>,
    rel_tol: f64,
    abs_floor: f64,
    label: &str,
) {
    assert_eq!(analytic.shape(), numeric.shape(), "{label}: gradient shapes");
    for (idx, (&a, &n)) in analytic.iter().zip(numeric.iter()).enumerate() {
        let denom = a.abs().max(n.abs());
        if denom < abs_floor {
            assert!(
                (a - n).abs() < abs_floor,
                "{label}[{idx}]: analytic {a} vs numeric {n} (absolute)"
            );
        } else {
            let rel = (a - n).abs() / denom;
            assert!(
                rel <= rel_tol,
                "{label}[{idx}]: analytic {a} vs numeric {n}, rel err {rel:.3e} > {rel_tol:.1e}"
            );
        }
    }
}

/// Uniform values in [lo, hi], deterministic in the seed.
pub fn random_array(seed: u64, shape: &[usize], lo: f64, hi: f64) -> ArrayD<f64> {
    let mut rng = stream(seed, Stream::Init(7000));
    let n: usize = shape.iter().product();
    let values: Vec<f64> = (0..n).map(|_| lo + (hi - lo) * rng.random::<f64>()).collect();
    ArrayD::from_shape_vec(IxDyn(shape), values).expect("random array shape")
}

/// A smooth synthetic test image: low-frequency colour fields plus a soft
/// radial blob, unique per seed.
pub fn synth_image(seed: u64, height: usize, width: usize) -> Image {
    let s = seed as f64;
    let mut px = Array3::zeros((height, width, 3));
    let (cy, cx) = (
        0.3 + 0.4 * ((s * 0.37).sin() * 0.5 + 0.5),
        0.3 + 0.4 * ((s * 0.53).cos() * 0.5 + 0.5),
    );
    for i in 0..height {
        for j in 0..width {
            let y = i as f64 / height as f64;
            let x = j as f64 / width as f64;
            let r2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
            let blob = (-r2 * 18.0).exp();
            let base = [
                0.5 + 0.3 * (2.0 * std::f64::consts::PI * (x * (1.0 + s % 3.0) + y) + s).sin(),
                0.5 + 0.3 * (2.0 * std::f64::consts::PI * (y * (1.5 + s % 2.0) - x) + 0.7 * s).cos(),
                0.5 + 0.25 * (2.0 * std::f64::consts::PI * (x + y) * 0.75 + 1.3 * s).sin(),
            ];
            for k in 0..3 {
                let v = base[k] * (1.0 - 0.5 * blob) + 0.9 * blob * ((k as f64 + 1.0) * 0.27);
                px[(i, j, k)] = v.clamp(0.0, 1.0);
            }
        }
    }
    Image::new(px).expect("synthetic image in range")
}

/// Writes an n-image corpus plus manifest; returns the manifest path.
pub fn write_corpus(dir: &Path, n: usize, height: usize, width: usize) -> PathBuf {
    std::fs::create_dir_all(dir).expect("corpus dir");
    let mut manifest = String::new();
    for i in 0..n {
        let name = format!("img{i}.png");
        synth_image(i as u64 + 1, height, width)
            .save_png(&dir.join(&name))
            .expect("write corpus image");
        manifest.push_str(&name);
        manifest.push('\n');
    }
    let path = dir.join("manifest.txt");
    std::fs::write(&path, manifest).expect("write manifest");
    path
}
