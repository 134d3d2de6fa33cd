use std::path::{Path, PathBuf};

use iwsgd_core::data::{
    gen_two_spirals, load_idx, parse_idx_images, write_idx_images, write_idx_labels, Dataset, SpiralsSpec,
};
use iwsgd_core::net::{Activation, NetworkSpec, NoiseSpec};
use iwsgd_core::trainer::{evaluate, train, Budget, TrainConfig};
use iwsgd_core::Error;
use sha2::{Digest, Sha256};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[test]
fn idx_fixture_matches_reference_digest() {
    let split = load_idx::<f64>(&fixture("fixture-images.idx"), &fixture("fixture-labels.idx"), None).unwrap();
    assert_eq!(split.features.shape(), &[100, 30]);
    let mut h = Sha256::new();
    for v in split.features.data() {
        h.update(v.to_le_bytes());
    }
    assert_eq!(
        hex(&h.finalize()),
        "be4511fa99caa16ba76e3bb80b167e2f0c0731250fc33ba0da807af082c6592d"
    );
    let mut h = Sha256::new();
    for &l in &split.labels {
        h.update((l as u64).to_le_bytes());
    }
    assert_eq!(
        hex(&h.finalize()),
        "e7b40465432cdee3c097edda041d90e85b882cd0a77e9793996edde76d98f0c7"
    );
    assert!(split.features.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
}

#[test]
fn idx_limit_takes_leading_records() {
    let all = load_idx::<f64>(&fixture("fixture-images.idx"), &fixture("fixture-labels.idx"), None).unwrap();
    let head = load_idx::<f64>(&fixture("fixture-images.idx"), &fixture("fixture-labels.idx"), Some(7)).unwrap();
    assert_eq!(head, all.select(&(0..7).collect::<Vec<_>>()));
}

#[test]
fn idx_round_trip_preserves_pixels() {
    let dir = tempfile::tempdir().unwrap();
    let images = dir.path().join("images.idx");
    let labels = dir.path().join("labels.idx");
    let pixels: Vec<u8> = (0..=255u8).chain(0..=255u8).take(3 * 8 * 8).collect();
    write_idx_images(&images, 8, 8, &pixels).unwrap();
    write_idx_labels(&labels, &[0, 1, 2]).unwrap();
    let bytes = std::fs::read(&images).unwrap();
    assert_eq!(parse_idx_images(&bytes, &images).unwrap().pixels, pixels);
    let split = load_idx::<f32>(&images, &labels, None).unwrap();
    assert_eq!(split.labels, vec![0, 1, 2]);
    assert_eq!(split.features.data()[191], 191.0 / 255.0);
}

#[test]
fn idx_hand_crafted_scaling() {
    let dir = tempfile::tempdir().unwrap();
    let images = dir.path().join("i.idx");
    let labels = dir.path().join("l.idx");
    write_idx_images(&images, 2, 2, &[0, 255, 0, 255]).unwrap();
    write_idx_labels(&labels, &[4]).unwrap();
    let split = load_idx::<f64>(&images, &labels, None).unwrap();
    assert_eq!(split.features.data(), &[0.0, 1.0, 0.0, 1.0]);
}

#[test]
fn idx_count_mismatch_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let images = dir.path().join("i.idx");
    let labels = dir.path().join("l.idx");
    write_idx_images(&images, 2, 2, &[0; 8]).unwrap();
    write_idx_labels(&labels, &[1, 2, 3]).unwrap();
    assert_eq!(
        load_idx::<f64>(&images, &labels, None),
        Err(Error::CountMismatch { images: 2, labels: 3 })
    );
    assert!(matches!(
        load_idx::<f64>(&dir.path().join("missing"), &labels, None),
        Err(Error::Io { .. })
    ));
}

#[test]
fn spirals_defeat_a_linear_probe() {
    let data: Dataset<f64> = gen_two_spirals(&SpiralsSpec {
        n_per_class: 200,
        sigma: 0.0,
        turns: 1.5,
        seed: 8,
    })
    .unwrap();
    // softmax regression: no hidden layer, no noise
    let network = NetworkSpec::mlp(2, &[], 2, Activation::Relu, None).unwrap();
    let config = TrainConfig {
        learning_rate: 0.1,
        batch_size: 20,
        budget: Budget::Updates(2000),
        eval_every: 500,
        workers: 1,
        ..TrainConfig::new(network.clone(), NoiseSpec::bernoulli(1.0))
    };
    let out = train(&config, &data).unwrap();
    // the fit itself fails: error on the examples it was trained on
    let train_error = evaluate(&network, &out.params, &data.train).unwrap().error_rate;
    assert!(train_error > 0.3, "{train_error}");
}
