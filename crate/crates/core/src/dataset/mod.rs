//! Training crops, test scenes, rotation augmentation and minibatching.
//!
//! Corpus layout:
//!
//! ```text
//! root/
//!   pos/*.pgm            40×100 car crops
//!   neg/*.pgm            40×100 non-car crops
//!   test/*.pgm           test scenes; the trailing number of the file stem
//!                        is the scene index used by the truth file
//!   trueLocations.txt    ground-truth anchors, see [`parse_truth_file`]
//! ```

mod synth;
mod truth;

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub use synth::{synthetic_background, synthetic_car, write_synthetic_corpus, SynthSpec};
pub use truth::{format_truth_line, parse_truth_file, parse_truth_line, Anchor};

use crate::error::{Error, Result};
use crate::image_io::{load_pgm, prepare_window, ChannelStack, GrayImage, CROP_H, CROP_W};

pub const TRUTH_FILE: &str = "trueLocations.txt";
/// Largest rotation a crop may carry.
pub const MAX_ROTATION_DEG: f64 = 10.0;

#[derive(Debug, Clone)]
pub struct LabeledCrop {
    pub stack: ChannelStack,
    pub label: u8,
    pub source_id: String,
    pub rotation_deg: f64,
    /// The unrotated 40×100 crop, kept so augmentation can rotate before
    /// resizing. Shared between all variants of one source.
    pub source: Arc<GrayImage>,
}

impl LabeledCrop {
    /// Builds the network input for `source` rotated by `rotation_deg`.
    pub fn from_source(source: Arc<GrayImage>, label: u8, source_id: String, rotation_deg: f64) -> Result<Self> {
        if label > 1 {
            return Err(Error::arg(format!("label must be 0 or 1, got {label}")));
        }
        if rotation_deg.is_nan() || rotation_deg.abs() > MAX_ROTATION_DEG {
            return Err(Error::arg(format!("rotation {rotation_deg} outside ±{MAX_ROTATION_DEG}°")));
        }
        let stack = prepare_window(&source, rotation_deg)?;
        Ok(LabeledCrop { stack, label, source_id, rotation_deg, source })
    }
}

#[derive(Debug, Clone)]
pub struct TestScene {
    pub image: GrayImage,
    pub ground_truths: Vec<Anchor>,
    pub scene_id: String,
}

/// One minibatch, borrowing its stacks from the crop list.
#[derive(Debug, Clone)]
pub struct Batch<'a> {
    pub indices: Vec<usize>,
    pub stacks: Vec<&'a ChannelStack>,
    pub labels: Vec<u8>,
}

impl Batch<'_> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

fn pgm_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm")) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

fn corpus_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::CorpusFormat { path: path.to_path_buf(), msg: msg.into() }
}

fn load_crops(dir: &Path, label: u8, prefix: &str) -> Result<Vec<LabeledCrop>> {
    let files = pgm_files(dir)?;
    files
        .par_iter()
        .map(|path| {
            let img = load_pgm(path).map_err(|e| corpus_err(path, e.to_string()))?;
            if img.height() != CROP_H || img.width() != CROP_W {
                return Err(corpus_err(
                    path,
                    format!("crop is {}x{}, expected {CROP_H}x{CROP_W}", img.height(), img.width()),
                ));
            }
            let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            LabeledCrop::from_source(Arc::new(img), label, format!("{prefix}/{stem}"), 0.0)
        })
        .collect()
}

/// Loads `pos/` (label 1) then `neg/` (label 0), each in file-name order.
pub fn load_training_set(root: impl AsRef<Path>) -> Result<Vec<LabeledCrop>> {
    let root = root.as_ref();
    if !root.is_dir() {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("corpus root {} not found", root.display()),
        )));
    }
    let mut crops = Vec::new();
    for (sub, label) in [("pos", 1u8), ("neg", 0u8)] {
        let dir = root.join(sub);
        if dir.is_dir() {
            crops.extend(load_crops(&dir, label, sub)?);
        }
    }
    if crops.is_empty() {
        return Err(corpus_err(root, "no training crops under pos/ or neg/"));
    }
    let pos = crops.iter().filter(|c| c.label == 1).count();
    info!("loaded {} training crops ({pos} positive, {} negative)", crops.len(), crops.len() - pos);
    Ok(crops)
}

/// Trailing decimal number of a file stem: `test-17` → 17.
pub fn scene_index(stem: &str) -> Option<usize> {
    let digits: String = stem.chars().rev().take_while(|c| c.is_ascii_digit()).collect();
    if digits.is_empty() {
        return None;
    }
    digits.chars().rev().collect::<String>().parse().ok()
}

/// Loads every scene in `dir` and attaches its anchors from `truth_file`.
pub fn load_test_scenes(dir: impl AsRef<Path>, truth_file: impl AsRef<Path>) -> Result<Vec<TestScene>> {
    let dir = dir.as_ref();
    let truth_path = truth_file.as_ref();
    let mut truths = parse_truth_file(&fs::read_to_string(truth_path)?)?;
    let files = pgm_files(dir)?;
    if files.is_empty() {
        return Err(corpus_err(dir, "no test scenes"));
    }
    let mut indexed = Vec::with_capacity(files.len());
    for path in files {
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let idx = scene_index(&stem).ok_or_else(|| corpus_err(&path, "scene file name has no trailing index"))?;
        indexed.push((idx, stem, path));
    }
    let images: Vec<GrayImage> = indexed
        .par_iter()
        .map(|(_, _, p)| load_pgm(p).map_err(|e| corpus_err(p, e.to_string())))
        .collect::<Result<_>>()?;
    let mut scenes = Vec::with_capacity(images.len());
    for ((idx, stem, path), image) in indexed.into_iter().zip(images) {
        let anchors = truths.remove(&idx).unwrap_or_default();
        for &(r, c) in &anchors {
            if r + CROP_H > image.height() || c + CROP_W > image.width() {
                return Err(corpus_err(
                    &path,
                    format!(
                        "anchor ({r},{c}) leaves no room for a {CROP_H}x{CROP_W} window in a {}x{} scene",
                        image.height(),
                        image.width()
                    ),
                ));
            }
        }
        scenes.push(TestScene { image, ground_truths: anchors, scene_id: stem });
    }
    if let Some((idx, _)) = truths.into_iter().next() {
        return Err(corpus_err(truth_path, format!("scene {idx} is listed but has no image in {}", dir.display())));
    }
    let total: usize = scenes.iter().map(|s| s.ground_truths.len()).sum();
    info!("loaded {} test scenes with {total} ground truths", scenes.len());
    Ok(scenes)
}

/// Rotation angles `-max, -max+step, …, ≤ max`.
pub fn rotation_angles(max_deg: f64, step_deg: f64) -> Result<Vec<f64>> {
    if step_deg.is_nan() || step_deg <= 0.0 {
        return Err(Error::arg(format!("rotation step must be positive, got {step_deg}")));
    }
    if !(0.0..=MAX_ROTATION_DEG).contains(&max_deg) {
        return Err(Error::arg(format!("rotation range must be within [0, {MAX_ROTATION_DEG}], got {max_deg}")));
    }
    let n = (2.0 * max_deg / step_deg + 1e-9).floor() as usize + 1;
    Ok((0..n).map(|k| -max_deg + k as f64 * step_deg).collect())
}

/// Every crop re-rendered at every angle; variants of one crop are
/// contiguous and ordered by angle.
pub fn augment_rotations(crops: &[LabeledCrop], max_deg: f64, step_deg: f64) -> Result<Vec<LabeledCrop>> {
    let angles = rotation_angles(max_deg, step_deg)?;
    if angles.len() == 1 {
        return Ok(crops.to_vec());
    }
    let nested: Vec<Vec<LabeledCrop>> = crops
        .par_iter()
        .map(|c| {
            angles
                .iter()
                .map(|&a| LabeledCrop::from_source(Arc::clone(&c.source), c.label, c.source_id.clone(), a))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    Ok(nested.into_iter().flatten().collect())
}

/// Seeded permutation of `0..n`.
pub fn epoch_order(n: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order
}

/// Shuffled partition of `crops` into batches of `batch_size` (the last may
/// be shorter).
pub fn minibatches(crops: &[LabeledCrop], batch_size: usize, seed: u64) -> Result<Vec<Batch<'_>>> {
    if crops.is_empty() {
        return Err(Error::arg("cannot batch an empty crop list"));
    }
    if batch_size == 0 {
        return Err(Error::arg("batch size must be at least 1"));
    }
    Ok(epoch_order(crops.len(), seed)
        .chunks(batch_size)
        .map(|idx| Batch {
            indices: idx.to_vec(),
            stacks: idx.iter().map(|&i| &crops[i].stack).collect(),
            labels: idx.iter().map(|&i| crops[i].label).collect(),
        })
        .collect())
}

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

/// Whether `source_id` falls in the held-out validation fraction.
pub fn is_validation(source_id: &str, fraction: f64) -> bool {
    ((fnv1a(source_id) % 10_000) as f64) < fraction * 10_000.0
}

/// Splits by source so every rotated variant lands on the same side.
pub fn split_validation(crops: Vec<LabeledCrop>, fraction: f64) -> Result<(Vec<LabeledCrop>, Vec<LabeledCrop>)> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::arg(format!("validation fraction must be in [0, 1), got {fraction}")));
    }
    let (val, train): (Vec<_>, Vec<_>) = crops.into_iter().partition(|c| is_validation(&c.source_id, fraction));
    if train.is_empty() {
        return Err(Error::arg("validation split left no training crops"));
    }
    Ok((train, val))
}
