use std::fs;
use std::path::Path;

use asnet_core::dataset::{read_dataset, Split};
use asnet_core::nn::load_checkpoint;
use asnet_core::simulate::{make_geometry, simulate_dataset, PhantomConfig, SimulationConfig};
use asnet_core::train::{evaluate, net_config_for, train, Ablation, TrainConfig, TrainOutcome};

fn toy_dataset(dir: &Path, n: usize, seed: u64) {
    let geometry = make_geometry(8, 0.005, 0.006, 16, 1500.0, 40e6, 5e6, 0.8).unwrap();
    let cfg = SimulationConfig {
        phantom: PhantomConfig::for_grid(16, seed),
        geometry,
        m: 320,
        n_samples: n,
        split: Split::Train,
        dense_elements: Some(32),
        noise_std: 0.0,
    };
    simulate_dataset(&cfg, dir).unwrap();
}

fn run(data: &Path, out: &Path, epochs: usize, ablation: Ablation) -> TrainOutcome {
    let ds = read_dataset(data).unwrap();
    let net = net_config_for(&ds.manifest, true, 3);
    let cfg = TrainConfig {
        epochs,
        batch_size: 4,
        seed: 9,
        ablation,
        ..TrainConfig::default()
    };
    train(data, &cfg, &net, out).unwrap()
}

#[test]
fn training_is_reproducible_and_reduces_loss() {
    let root = tempfile::tempdir().unwrap();
    let data = root.path().join("data");
    toy_dataset(&data, 6, 1);
    let a = run(&data, &root.path().join("a"), 4, Ablation::Full);
    let b = run(&data, &root.path().join("b"), 4, Ablation::Full);
    assert_eq!(
        fs::read(&a.loss_log).unwrap(),
        fs::read(&b.loss_log).unwrap()
    );
    assert_eq!(
        fs::read(&a.checkpoint).unwrap(),
        fs::read(&b.checkpoint).unwrap()
    );

    let log = fs::read_to_string(&a.loss_log).unwrap();
    assert_eq!(log.lines().next(), Some("epoch,lr,loss,recon,aux"));
    assert_eq!(log.lines().count(), 5);
    let first = &a.epochs[0];
    let last = &a.epochs[3];
    assert!(last.loss < first.loss, "{first:?} -> {last:?}");
    // losses are accumulated in single precision
    for e in &a.epochs {
        assert!((e.loss - (0.2 * e.recon + e.aux)).abs() < 1e-6 * e.loss);
    }

    let (cfg, params) = load_checkpoint(&a.checkpoint).unwrap();
    assert_eq!(cfg, a.net_config);
    assert!(params.iter().all(|(_, t)| t.all_finite()));
}

#[test]
fn evaluation_scores_both_methods() {
    let root = tempfile::tempdir().unwrap();
    let data = root.path().join("data");
    toy_dataset(&data, 5, 2);
    let out = run(&data, &root.path().join("run"), 1, Ablation::Full);
    let report = evaluate(&out.checkpoint, &data).unwrap();
    for method in ["network", "das_sparse"] {
        let s = report.method(method).unwrap();
        assert_eq!(s.n, 5);
        assert!(s.ssim_mean.is_finite() && s.ssim_mean <= 1.0);
        assert!(s.psnr_mean > 0.0);
    }
    assert_eq!(report.rows.len(), 10);
}

#[test]
fn ablations_train() {
    let root = tempfile::tempdir().unwrap();
    let data = root.path().join("data");
    toy_dataset(&data, 4, 3);
    for ablation in [
        Ablation::NoFt,
        Ablation::NoSfe,
        Ablation::NoBpr,
        Ablation::NoAux,
    ] {
        let out = run(&data, &root.path().join(ablation.name()), 1, ablation);
        let e = &out.epochs[0];
        assert!(e.loss.is_finite(), "{ablation}");
        match ablation {
            Ablation::NoSfe | Ablation::NoAux => {
                assert!((e.loss - 0.2 * e.recon).abs() < 1e-6 * e.loss, "{ablation}")
            }
            _ => assert!(e.aux > 0.0, "{ablation}"),
        }
        assert_eq!(out.net_config, ablation.net_config(&out.net_config));
    }
}

#[test]
fn mismatched_checkpoint_is_rejected() {
    let root = tempfile::tempdir().unwrap();
    let small = root.path().join("small");
    toy_dataset(&small, 2, 4);
    let out = run(&small, &root.path().join("run"), 1, Ablation::Full);
    let other = root.path().join("other");
    let geometry = make_geometry(8, 0.005, 0.006, 32, 1500.0, 40e6, 5e6, 0.8).unwrap();
    let cfg = SimulationConfig {
        phantom: PhantomConfig::for_grid(32, 1),
        geometry,
        m: 320,
        n_samples: 1,
        split: Split::Test,
        dense_elements: None,
        noise_std: 0.0,
    };
    simulate_dataset(&cfg, &other).unwrap();
    let err = evaluate(&out.checkpoint, &other).unwrap_err().to_string();
    assert!(err.contains("does not match"), "{err}");
}
