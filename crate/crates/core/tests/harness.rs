//! Training-loop contracts: reproducibility, split-run resume equivalence,
//! checkpoint integrity, ablation toggles, and failure diagnostics.

mod common;

use common::write_corpus;
use refsr_core::config::RunConfig;
use refsr_core::harness::{build_model, model_from_checkpoint, resume, train, Checkpoint};
use refsr_core::Error;
use std::path::{Path, PathBuf};

/// Tiny but complete training setup: 2 images of 32x32, HR patch 32.
fn tiny_config(iterations: u64) -> RunConfig {
    RunConfig {
        canonical_ref_size: 64,
        latent_h: 4,
        latent_w: 4,
        latent_c: 8,
        cvae_hidden: 8,
        disc_channels: 4,
        batch: 2,
        iterations,
        patch: 4,
        lr: 1e-3,
        checkpoint_every: 0,
        sequential: true,
        ..RunConfig::default()
    }
}

fn corpus(dir: &Path) -> PathBuf {
    write_corpus(dir, 2, 32, 32)
}

#[test]
fn fixed_seed_reproduces_loss_csv_and_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = corpus(&dir.path().join("data"));
    let cfg = tiny_config(10);
    train(&cfg, &manifest, &manifest, &dir.path().join("run1")).unwrap();
    train(&cfg, &manifest, &manifest, &dir.path().join("run2")).unwrap();
    let csv1 = std::fs::read(dir.path().join("run1/losses.csv")).unwrap();
    let csv2 = std::fs::read(dir.path().join("run2/losses.csv")).unwrap();
    assert_eq!(csv1, csv2, "loss CSVs differ across identical runs");
    let ck1 = std::fs::read(dir.path().join("run1/checkpoint.nac")).unwrap();
    let ck2 = std::fs::read(dir.path().join("run2/checkpoint.nac")).unwrap();
    assert_eq!(ck1, ck2, "checkpoints differ across identical runs");
}

#[test]
fn parallel_and_sequential_runs_agree() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = corpus(&dir.path().join("data"));
    let mut cfg = tiny_config(6);
    cfg.sequential = true;
    train(&cfg, &manifest, &manifest, &dir.path().join("seq")).unwrap();
    cfg.sequential = false;
    train(&cfg, &manifest, &manifest, &dir.path().join("par")).unwrap();
    let a = std::fs::read_to_string(dir.path().join("seq/losses.csv")).unwrap();
    let b = std::fs::read_to_string(dir.path().join("par/losses.csv")).unwrap();
    assert_eq!(a, b, "parallel execution changed the loss trajectory");
}

#[test]
fn resume_zero_iterations_is_identity() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = corpus(&dir.path().join("data"));
    let cfg = tiny_config(5);
    let ckpt = train(&cfg, &manifest, &manifest, &dir.path().join("run")).unwrap();
    let hash_before = ckpt.params.content_hash();
    let resumed = resume(
        &dir.path().join("run/checkpoint.nac"),
        0,
        &manifest,
        &manifest,
        &dir.path().join("resume0"),
    )
    .unwrap();
    assert_eq!(resumed.iteration, 5);
    assert_eq!(resumed.params.content_hash(), hash_before);
}

#[test]
fn split_run_equals_unbroken_run() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = corpus(&dir.path().join("data"));

    let full = train(&tiny_config(20), &manifest, &manifest, &dir.path().join("full")).unwrap();

    train(&tiny_config(10), &manifest, &manifest, &dir.path().join("half")).unwrap();
    let split = resume(
        &dir.path().join("half/checkpoint.nac"),
        10,
        &manifest,
        &manifest,
        &dir.path().join("half"),
    )
    .unwrap();

    assert_eq!(full.iteration, split.iteration);
    assert_eq!(
        full.params.content_hash(),
        split.params.content_hash(),
        "split run diverged from the unbroken run"
    );
    assert_eq!(full.opt_g.t, split.opt_g.t);

    // The loss trajectory is continuous: the resumed CSV holds all 20 rows
    // and matches the unbroken run's rows exactly.
    let full_csv = std::fs::read_to_string(dir.path().join("full/losses.csv")).unwrap();
    let half_csv = std::fs::read_to_string(dir.path().join("half/losses.csv")).unwrap();
    assert_eq!(full_csv, half_csv);
}

#[test]
fn corrupted_checkpoint_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = corpus(&dir.path().join("data"));
    let cfg = tiny_config(3);
    train(&cfg, &manifest, &manifest, &dir.path().join("run")).unwrap();
    let path = dir.path().join("run/checkpoint.nac");
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 16]).unwrap();
    let err = Checkpoint::load(&path).unwrap_err();
    assert!(matches!(err, Error::Data(_)), "unexpected error: {err}");
}

#[test]
fn ablation_toggles_zero_the_right_terms() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = corpus(&dir.path().join("data"));

    // CVAE off: the KL column is identically zero.
    let mut cfg = tiny_config(4);
    cfg.use_cvae = false;
    train(&cfg, &manifest, &manifest, &dir.path().join("nocvae")).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("nocvae/losses.csv")).unwrap();
    for line in csv.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols[5].parse::<f64>().unwrap(), 0.0, "kl nonzero: {line}");
    }

    // Discriminator off: both adversarial columns are zero.
    let mut cfg = tiny_config(4);
    cfg.use_discriminator = false;
    train(&cfg, &manifest, &manifest, &dir.path().join("nodisc")).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("nodisc/losses.csv")).unwrap();
    for line in csv.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols[6].parse::<f64>().unwrap(), 0.0, "adv_g nonzero: {line}");
        assert_eq!(cols[7].parse::<f64>().unwrap(), 0.0, "adv_d nonzero: {line}");
    }

    // SC loss off: the style column is zero but content (pixel L1) stays.
    let mut cfg = tiny_config(4);
    cfg.use_sc_loss = false;
    train(&cfg, &manifest, &manifest, &dir.path().join("nosc")).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("nosc/losses.csv")).unwrap();
    for line in csv.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols[2].parse::<f64>().unwrap(), 0.0, "style nonzero: {line}");
        assert!(cols[1].parse::<f64>().unwrap() > 0.0, "content vanished: {line}");
    }
}

#[test]
fn frozen_extractor_never_changes() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = corpus(&dir.path().join("data"));
    let cfg = tiny_config(5);
    let before = build_model(&cfg).unwrap().model.extractor.weights_hash();
    let ckpt = train(&cfg, &manifest, &manifest, &dir.path().join("run")).unwrap();
    assert_eq!(ckpt.extractor_hash, before);
    let model = model_from_checkpoint(ckpt).unwrap();
    assert_eq!(model.extractor.weights_hash(), before);
}

#[test]
fn exploding_run_aborts_with_term_and_iteration() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = corpus(&dir.path().join("data"));
    let mut cfg = tiny_config(50);
    cfg.lr = 1e15; // drive the posterior heads into overflow
    let err = train(&cfg, &manifest, &manifest, &dir.path().join("run")).unwrap_err();
    let msg = err.to_string();
    assert!(matches!(err, Error::Numeric(_)), "unexpected error: {msg}");
    assert!(msg.contains("iteration"), "diagnostic lacks iteration: {msg}");
}

#[test]
fn checkpoint_save_load_save_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = corpus(&dir.path().join("data"));
    let cfg = tiny_config(3);
    train(&cfg, &manifest, &manifest, &dir.path().join("run")).unwrap();
    let p1 = dir.path().join("run/checkpoint.nac");
    let p2 = dir.path().join("copy.nac");
    Checkpoint::load(&p1).unwrap().save(&p2).unwrap();
    assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
}
