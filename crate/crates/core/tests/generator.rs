//! Fusion oracle and affine identity, decoder shape laws, the four-mode
//! pipeline, and the end-to-end parameter gradient check.

mod common;

use common::{assert_grads_close, fd_gradients, random_array, synth_image};
use ndarray::ArrayD;
use refsr_core::config::RunConfig;
use refsr_core::cvae::{CvaeSpec, LatentConfig, LatentSample, LatentSource};
use refsr_core::generator::{fuse, super_resolve, FusionStats, GeneratorSpec, Mode};
use refsr_core::harness::build_model;
use refsr_core::params::{GraphCtx, Params};
use refsr_core::rng::{stream, Stream};
use refsr_core::tensor::Tensor;

#[test]
fn fuse_matches_scalar_loop_oracle() {
    let c_r = random_array(1, &[5, 4, 6], -2.0, 2.0);
    let f_mu = random_array(2, &[5, 4, 6], -2.0, 2.0);
    let f_sigma = random_array(3, &[5, 4, 6], -2.0, 2.0);
    let fused = fuse(
        &Tensor::constant(c_r.clone()),
        &FusionStats {
            f_mu: Tensor::constant(f_mu.clone()),
            f_sigma: Tensor::constant(f_sigma.clone()),
        },
    )
    .unwrap();
    for (i, ((&c, &m), &s)) in c_r.iter().zip(f_mu.iter()).zip(f_sigma.iter()).enumerate() {
        let expect = c * (1.0 + s) + m;
        let got = fused.value().as_slice().unwrap()[i];
        assert!((got - expect).abs() < 1e-12, "site {i}: {got} vs {expect}");
    }
}

#[test]
fn fuse_affine_identity() {
    // fuse(a*C1 + b*C2, s) = a*fuse(C1, s) + b*fuse(C2, s) - (a+b-1)*f_mu
    let c1 = random_array(4, &[4, 4, 3], -1.0, 1.0);
    let c2 = random_array(5, &[4, 4, 3], -1.0, 1.0);
    let stats = FusionStats {
        f_mu: Tensor::constant(random_array(6, &[4, 4, 3], -1.0, 1.0)),
        f_sigma: Tensor::constant(random_array(7, &[4, 4, 3], -1.0, 1.0)),
    };
    let (a, b) = (0.7, -1.3);
    let mix = Tensor::constant(&(&c1 * a) + &(&c2 * b));
    let lhs = fuse(&mix, &stats).unwrap();
    let f1 = fuse(&Tensor::constant(c1), &stats).unwrap();
    let f2 = fuse(&Tensor::constant(c2), &stats).unwrap();
    for (i, &l) in lhs.value().iter().enumerate() {
        let rhs = a * f1.value().as_slice().unwrap()[i] + b * f2.value().as_slice().unwrap()[i]
            - (a + b - 1.0) * stats.f_mu.value().as_slice().unwrap()[i];
        assert!((l - rhs).abs() < 1e-9, "site {i}: {l} vs {rhs}");
    }
}

#[test]
fn stats_heads_shapes_and_zero_init() {
    let spec = GeneratorSpec::new(16);
    let mut params = Params::new();
    spec.init(&mut params, &mut stream(1, Stream::Init(0)));
    // Zero the heads explicitly: outputs must vanish regardless of trunk.
    params
        .set("gen.stats.mu.w", ArrayD::zeros(ndarray::IxDyn(&[16, 3, 3, 16])))
        .unwrap();
    params
        .set("gen.stats.mu.b", ArrayD::zeros(ndarray::IxDyn(&[16])))
        .unwrap();
    params
        .set("gen.stats.sigma.w", ArrayD::zeros(ndarray::IxDyn(&[16, 3, 3, 16])))
        .unwrap();
    params
        .set("gen.stats.sigma.b", ArrayD::zeros(ndarray::IxDyn(&[16])))
        .unwrap();
    let ctx = GraphCtx::frozen(&params);
    let f_x = Tensor::constant(random_array(8, &[12, 10, 16], -1.0, 1.0));
    let stats = spec.compute_stats(&ctx, &f_x).unwrap();
    assert_eq!(stats.f_mu.shape(), &[12, 10, 16]);
    assert_eq!(stats.f_sigma.shape(), &[12, 10, 16]);
    assert!(stats.f_mu.value().iter().all(|&v| v == 0.0));
    assert!(stats.f_sigma.value().iter().all(|&v| v == 0.0));

    let bad = Tensor::constant(random_array(9, &[12, 10, 8], -1.0, 1.0));
    assert!(spec.compute_stats(&ctx, &bad).is_err());
}

#[test]
fn different_inputs_give_different_stats() {
    let spec = GeneratorSpec::new(8);
    let mut params = Params::new();
    spec.init(&mut params, &mut stream(2, Stream::Init(0)));
    let ctx = GraphCtx::frozen(&params);
    let a = spec
        .compute_stats(&ctx, &Tensor::constant(random_array(10, &[6, 6, 8], -1.0, 1.0)))
        .unwrap();
    let b = spec
        .compute_stats(&ctx, &Tensor::constant(random_array(11, &[6, 6, 8], -1.0, 1.0)))
        .unwrap();
    let diff = a
        .f_mu
        .value()
        .iter()
        .zip(b.f_mu.value().iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    assert!(diff > 0.0);
}

#[test]
fn decoder_shape_law_and_range() {
    let spec = GeneratorSpec::new(16);
    let mut params = Params::new();
    spec.init(&mut params, &mut stream(3, Stream::Init(0)));
    let ctx = GraphCtx::frozen(&params);
    for (h, w) in [(8, 8), (4, 6)] {
        let fused = Tensor::constant(random_array(12, &[h, w, 16], -1.0, 1.0));
        let img = spec.decode_image(&ctx, &fused).unwrap();
        assert_eq!(img.shape(), &[8 * h, 8 * w, 3]);
        assert!(img.value().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}

fn desk_model(alpha: usize) -> refsr_core::generator::Model {
    let cfg = RunConfig {
        alpha,
        canonical_ref_size: 64,
        latent_h: 8,
        latent_w: 8,
        latent_c: 16,
        cvae_hidden: 16,
        disc_channels: 8,
        ..RunConfig::desk()
    };
    build_model(&cfg).unwrap().model
}

#[test]
fn super_resolve_shape_law_alpha_8_and_4() {
    let model8 = desk_model(8);
    let lr = synth_image(1, 4, 4);
    let sr = super_resolve(&model8, &lr, &Mode::Random, &mut stream(0, Stream::Eval(0))).unwrap();
    assert_eq!((sr.height(), sr.width()), (32, 32));

    let model4 = desk_model(4);
    let lr = synth_image(2, 8, 6);
    let sr = super_resolve(&model4, &lr, &Mode::Random, &mut stream(0, Stream::Eval(0))).unwrap();
    assert_eq!((sr.height(), sr.width()), (32, 24));

    // Below the 4x4 floor.
    let tiny = synth_image(3, 2, 2);
    assert!(super_resolve(&model8, &tiny, &Mode::Random, &mut stream(0, Stream::Eval(0))).is_err());
}

#[test]
fn super_resolve_modes_and_determinism() {
    let model = desk_model(8);
    let lr = synth_image(4, 8, 8);
    let hr = synth_image(4, 64, 64);
    let reference = synth_image(9, 40, 56);

    for mode in [
        Mode::Reference(&reference),
        Mode::Random,
        Mode::LrAsRef,
        Mode::HrAsRef(&hr),
    ] {
        let a = super_resolve(&model, &lr, &mode, &mut stream(3, Stream::Eval(1))).unwrap();
        assert_eq!((a.height(), a.width()), (64, 64), "mode {}", mode.name());
        let b = super_resolve(&model, &lr, &mode, &mut stream(3, Stream::Eval(1))).unwrap();
        assert_eq!(a.pixels(), b.pixels(), "mode {} not deterministic", mode.name());
    }

    // Different seeds produce different random-mode outputs even untrained.
    let a = super_resolve(&model, &lr, &Mode::Random, &mut stream(1, Stream::Eval(1))).unwrap();
    let b = super_resolve(&model, &lr, &Mode::Random, &mut stream(2, Stream::Eval(1))).unwrap();
    assert!(a.max_abs_diff(&b) > 0.0);
}

#[test]
fn end_to_end_parameter_gradient_matches_finite_differences() {
    // Pixel L1 between the decoded image and a fixed target, differentiated
    // against every cvae and generator parameter on a 4x4-latent toy model.
    let cvae = CvaeSpec {
        feat_channels: 6,
        feat_grid: 4,
        latent: LatentConfig { h: 4, w: 4, c: 3 },
        hidden: 5,
    };
    let gen = GeneratorSpec::new(6);
    let mut params = Params::new();
    cvae.init(&mut params, &mut stream(4, Stream::Init(1)));
    gen.init(&mut params, &mut stream(4, Stream::Init(2)));
    // Give the zero-initialised heads weight so their gradients are probed
    // at a generic point.
    params
        .set("cvae.enc.mu.w", random_array(20, &[3, 3, 3, 5], -0.2, 0.2))
        .unwrap();
    params
        .set("cvae.enc.logvar.w", random_array(21, &[3, 3, 3, 5], -0.2, 0.2))
        .unwrap();

    let f_r = random_array(22, &[4, 4, 6], 0.0, 1.0);
    let f_x = random_array(23, &[4, 4, 6], 0.0, 1.0);
    let eps = random_array(24, &[4, 4, 3], -1.0, 1.0);

    let names: Vec<String> = params.names().map(String::from).collect();
    let values: Vec<ArrayD<f64>> = names
        .iter()
        .map(|n| params.get(n).unwrap().as_ref().clone())
        .collect();

    // The target sits a fixed +-0.05 off the initial output so neither the
    // pixel-L1 kink nor the clamp boundary lies inside any finite-difference
    // neighbourhood.
    let target = std::cell::RefCell::new(ArrayD::zeros(ndarray::IxDyn(&[32, 32, 3])));

    let forward = |arrays: &[ArrayD<f64>], grad: bool| -> (f64, Option<Vec<ArrayD<f64>>>) {
        let mut p = Params::new();
        for (n, v) in names.iter().zip(arrays) {
            p.insert(n.clone(), v.clone());
        }
        let ctx = if grad {
            GraphCtx::new(&p, &["cvae.", "gen."])
        } else {
            GraphCtx::frozen(&p)
        };
        let dist = cvae
            .feature_encode(&ctx, &Tensor::constant(f_r.clone()))
            .unwrap();
        let sigma = dist.log_var.mul_scalar(0.5).exp();
        let z = dist.mu.add(&Tensor::constant(eps.clone()).mul(&sigma));
        let sample = LatentSample {
            z,
            source: LatentSource::Posterior,
        };
        let c_r = cvae.feature_decode(&ctx, &sample.z, 4, 4).unwrap();
        let stats = gen
            .compute_stats(&ctx, &Tensor::constant(f_x.clone()))
            .unwrap();
        let fused = fuse(&c_r, &stats).unwrap();
        let img = gen.decode_image(&ctx, &fused).unwrap();
        let loss = img.l1_to(&Tensor::constant(target.borrow().clone()));
        if grad {
            loss.backward();
            let grads = ctx.grads();
            let out: Vec<ArrayD<f64>> = names
                .iter()
                .map(|n| {
                    grads
                        .get(n.as_str())
                        .cloned()
                        .unwrap_or_else(|| ArrayD::zeros(p.get(n).unwrap().raw_dim()))
                })
                .collect();
            (loss.item(), Some(out))
        } else {
            (loss.item(), None)
        }
    };

    // Seed the target from the unperturbed output.
    {
        let mut p = Params::new();
        for (n, v) in names.iter().zip(&values) {
            p.insert(n.clone(), v.clone());
        }
        let ctx = GraphCtx::frozen(&p);
        let dist = cvae
            .feature_encode(&ctx, &Tensor::constant(f_r.clone()))
            .unwrap();
        let sigma = dist.log_var.mul_scalar(0.5).exp();
        let z = dist.mu.add(&Tensor::constant(eps.clone()).mul(&sigma));
        let c_r = cvae.feature_decode(&ctx, &z, 4, 4).unwrap();
        let stats = gen
            .compute_stats(&ctx, &Tensor::constant(f_x.clone()))
            .unwrap();
        let img = gen
            .decode_image(&ctx, &fuse(&c_r, &stats).unwrap())
            .unwrap();
        // The clamp must be inactive at the probe point or its kink would
        // poison the finite differences.
        assert!(
            img.value().iter().all(|&v| (0.02..=0.98).contains(&v)),
            "probe point saturates the output clamp"
        );
        let offsets = random_array(25, &[32, 32, 3], 0.0, 1.0)
            .mapv(|v| if v > 0.5 { 0.05 } else { -0.05 });
        *target.borrow_mut() = img.value() + &offsets;
    }

    let (_, analytic) = forward(&values, true);
    let analytic = analytic.unwrap();
    let mut f = |arrays: &[ArrayD<f64>]| forward(arrays, false).0;
    // A small step keeps leaky-relu kink crossings (whose FD error scales
    // with h) below the tolerance while staying far above the f64
    // cancellation floor.
    let numeric = fd_gradients(&mut f, &values, 1e-7);
    for ((name, a), n) in names.iter().zip(&analytic).zip(&numeric) {
        assert_grads_close(a, n, 1e-3, 1e-6, name);
    }
}
