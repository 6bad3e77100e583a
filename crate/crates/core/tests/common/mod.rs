#![allow(dead_code)]

use std::path::Path;
use std::sync::Arc;

use jointdet::config::TrainConfig;
use jointdet::dataset::{
    load_training_set, synthetic_background, synthetic_car, write_synthetic_corpus, LabeledCrop, SynthSpec,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Writes a synthetic corpus under `root` and loads its training crops.
pub fn toy_corpus(root: &Path, positives: usize, negatives: usize, scenes: usize, seed: u64) -> Vec<LabeledCrop> {
    let spec = SynthSpec { positives, negatives, scenes, seed, ..Default::default() };
    write_synthetic_corpus(root, &spec).unwrap();
    load_training_set(root).unwrap()
}

/// In-memory crops, alternating car / clutter.
pub fn memory_crops(n: usize, seed: u64) -> Vec<LabeledCrop> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let label = (i % 2 == 0) as u8;
            let img = if label == 1 { synthetic_car(&mut rng) } else { synthetic_background(&mut rng, 40, 100) };
            LabeledCrop::from_source(Arc::new(img), label, format!("mem/{i}"), 0.0).unwrap()
        })
        .collect()
}

/// Small-data schedule: each stage stops once it fits the training set.
pub fn overfit_config() -> TrainConfig {
    let mut cfg = TrainConfig::default();
    for s in cfg.stages.iter_mut() {
        s.epochs = 200;
    }
    cfg.stages[2].lr = 0.2;
    cfg.batch_size = 10;
    cfg.augment = false;
    cfg.val_fraction = 0.0;
    cfg.target_train_accuracy = Some(0.99);
    cfg
}

/// A few fixed epochs per stage.
pub fn short_config(epochs: usize) -> TrainConfig {
    let mut cfg = TrainConfig::default();
    for s in cfg.stages.iter_mut() {
        s.epochs = epochs;
    }
    cfg.batch_size = 8;
    cfg.augment = false;
    cfg.val_fraction = 0.0;
    cfg
}
