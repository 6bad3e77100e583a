//! Sliding-window scoring, non-maximum suppression, matching and the
//! miss-rate / FPPI curve with its log-average miss rate.
//!
//! The log-average miss rate is the arithmetic mean of the miss rate sampled
//! at nine FPPI values `10^(-2 + k/4)`, `k = 0..8`. Each sample takes the miss
//! rate of the last curve point whose FPPI does not exceed it. Every curve
//! starts with an "accept nothing" point at FPPI 0 and miss rate 1.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use log::warn;
use rayon::prelude::*;

use crate::config::EvalConfig;
use crate::dataset::{Anchor, TestScene};
use crate::error::{Error, Result};
use crate::image_io::{prepare_window, GrayImage, CROP_H, CROP_W};
use crate::network::Network;

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionRecord {
    pub scene_id: String,
    pub row: usize,
    pub col: usize,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    /// Detections with score ≥ threshold are accepted; `+∞` accepts none.
    pub threshold: f64,
    pub fppi: f64,
    pub miss_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalCurve {
    pub points: Vec<CurvePoint>,
    pub lamr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MatchCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

/// The nine FPPI values the miss rate is averaged over.
pub fn fppi_samples() -> [f64; 9] {
    std::array::from_fn(|k| 10f64.powf(-2.0 + 0.25 * k as f64))
}

/// Descending score, then ascending scene, row, col.
fn by_rank(a: &DetectionRecord, b: &DetectionRecord) -> std::cmp::Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.scene_id.cmp(&b.scene_id))
        .then_with(|| a.row.cmp(&b.row))
        .then_with(|| a.col.cmp(&b.col))
}

/// Window anchors on the stride grid.
pub fn window_anchors(height: usize, width: usize, stride_r: usize, stride_c: usize) -> Vec<Anchor> {
    if height < CROP_H || width < CROP_W || stride_r == 0 || stride_c == 0 {
        return Vec::new();
    }
    let rows = (0..=height - CROP_H).step_by(stride_r);
    rows.flat_map(|r| (0..=width - CROP_W).step_by(stride_c).map(move |c| (r, c))).collect()
}

/// Scores every grid window of `image`. Images smaller than a window give
/// no records and a warning.
pub fn score_image(
    image: &GrayImage,
    scene_id: &str,
    net: &Network<f32>,
    stride_r: usize,
    stride_c: usize,
) -> Result<Vec<DetectionRecord>> {
    if stride_r == 0 || stride_c == 0 {
        return Err(Error::arg("strides must be at least 1"));
    }
    if image.height() < CROP_H || image.width() < CROP_W {
        warn!(
            "scene {scene_id} is {}x{}, smaller than the {CROP_H}x{CROP_W} window; skipped",
            image.height(),
            image.width()
        );
        return Ok(Vec::new());
    }
    window_anchors(image.height(), image.width(), stride_r, stride_c)
        .into_par_iter()
        .map(|(row, col)| {
            let window = image.crop(row, col, CROP_H, CROP_W)?;
            let score = net.predict(&prepare_window(&window, 0.0)?)? as f64;
            Ok(DetectionRecord { scene_id: scene_id.to_string(), row, col, score })
        })
        .collect()
}

pub fn sliding_window_scores(
    scene: &TestScene,
    net: &Network<f32>,
    stride_r: usize,
    stride_c: usize,
) -> Result<Vec<DetectionRecord>> {
    score_image(&scene.image, &scene.scene_id, net, stride_r, stride_c)
}

/// Greedy suppression in descending score order; a record survives iff no
/// kept record in its scene lies within `radius_r` rows and `radius_c` cols.
pub fn non_max_suppression(records: &[DetectionRecord], radius_r: usize, radius_c: usize) -> Vec<DetectionRecord> {
    let mut sorted = records.to_vec();
    sorted.sort_by(by_rank);
    let mut kept: Vec<DetectionRecord> = Vec::new();
    for r in sorted {
        let suppressed = kept.iter().any(|k| {
            k.scene_id == r.scene_id && k.row.abs_diff(r.row) <= radius_r && k.col.abs_diff(r.col) <= radius_c
        });
        if !suppressed {
            kept.push(r);
        }
    }
    kept
}

/// Greedy matching of one scene's detections. Returns the counts and a
/// true-positive flag per detection, in the order of `dets` after sorting
/// by descending score.
pub fn match_detections(
    dets: &[DetectionRecord],
    truths: &[Anchor],
    tol_r: usize,
    tol_c: usize,
) -> (MatchCounts, Vec<(DetectionRecord, bool)>) {
    let mut sorted = dets.to_vec();
    sorted.sort_by(by_rank);
    let mut used = vec![false; truths.len()];
    let mut labelled = Vec::with_capacity(sorted.len());
    let mut counts = MatchCounts::default();
    for d in sorted {
        let best = truths
            .iter()
            .enumerate()
            .filter(|(i, &(r, c))| !used[*i] && d.row.abs_diff(r) <= tol_r && d.col.abs_diff(c) <= tol_c)
            .min_by_key(|(i, &(r, c))| (d.row.abs_diff(r) * tol_c.max(1) + d.col.abs_diff(c) * tol_r.max(1), *i))
            .map(|(i, _)| i);
        match best {
            Some(i) => {
                used[i] = true;
                counts.tp += 1;
                labelled.push((d, true));
            }
            None => {
                counts.fp += 1;
                labelled.push((d, false));
            }
        }
    }
    counts.fn_ = truths.len() - counts.tp;
    (counts, labelled)
}

/// Per-detection labels across all scenes, ranked globally.
pub fn label_detections(
    records: &[DetectionRecord],
    truths: &BTreeMap<String, Vec<Anchor>>,
    tol_r: usize,
    tol_c: usize,
) -> Result<Vec<(DetectionRecord, bool)>> {
    let mut per_scene: BTreeMap<&str, Vec<DetectionRecord>> = BTreeMap::new();
    for r in records {
        if !truths.contains_key(&r.scene_id) {
            return Err(Error::Evaluation(format!("detection in unknown scene {}", r.scene_id)));
        }
        per_scene.entry(&r.scene_id).or_default().push(r.clone());
    }
    let mut all = Vec::with_capacity(records.len());
    for (scene, dets) in per_scene {
        all.extend(match_detections(&dets, &truths[scene], tol_r, tol_c).1);
    }
    all.sort_by(|a, b| by_rank(&a.0, &b.0));
    Ok(all)
}

/// Sweeps the threshold down through every distinct score. `truths` holds
/// every evaluated scene, including scenes without cars.
pub fn miss_rate_curve(
    records: &[DetectionRecord],
    truths: &BTreeMap<String, Vec<Anchor>>,
    tol_r: usize,
    tol_c: usize,
) -> Result<EvalCurve> {
    let n_truths: usize = truths.values().map(Vec::len).sum();
    if n_truths == 0 {
        return Err(Error::arg("miss-rate curve needs at least one ground truth"));
    }
    let n_scenes = truths.len() as f64;
    let labelled = label_detections(records, truths, tol_r, tol_c)?;
    let mut points = vec![CurvePoint { threshold: f64::INFINITY, fppi: 0.0, miss_rate: 1.0 }];
    let (mut tp, mut fp) = (0usize, 0usize);
    for (i, (d, hit)) in labelled.iter().enumerate() {
        if *hit {
            tp += 1;
        } else {
            fp += 1;
        }
        let last_of_score = labelled.get(i + 1).is_none_or(|(n, _)| n.score != d.score);
        if last_of_score {
            points.push(CurvePoint {
                threshold: d.score,
                fppi: fp as f64 / n_scenes,
                miss_rate: (n_truths - tp) as f64 / n_truths as f64,
            });
        }
    }
    // Sum integer miss counts so the mean is a single correctly rounded
    // division.
    let missed: usize = sample_points(&points)
        .iter()
        .map(|i| i.map_or(n_truths, |i| (points[i].miss_rate * n_truths as f64).round() as usize))
        .sum();
    let lamr = missed as f64 / (9 * n_truths) as f64;
    Ok(EvalCurve { points, lamr })
}

/// Mean miss rate at the nine log-spaced FPPI samples. Samples below the
/// smallest FPPI on the curve count as miss rate 1.
pub fn log_average_miss_rate(points: &[CurvePoint]) -> f64 {
    let total: f64 = sample_points(points).iter().map(|i| i.map_or(1.0, |i| points[i].miss_rate)).sum();
    total / 9.0
}

/// Index of the curve point used at each FPPI sample.
fn sample_points(points: &[CurvePoint]) -> [Option<usize>; 9] {
    fppi_samples().map(|f| points.iter().rposition(|p| p.fppi <= f))
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    /// Post-NMS detections with their match label, best first.
    pub detections: Vec<(DetectionRecord, bool)>,
    pub curve: EvalCurve,
    pub counts: MatchCounts,
    pub n_scenes: usize,
    pub n_truths: usize,
}

/// Scores, suppresses, matches and summarizes a set of test scenes.
pub fn evaluate_scenes(net: &Network<f32>, scenes: &[TestScene], cfg: &EvalConfig) -> Result<EvalReport> {
    let mut truths = BTreeMap::new();
    for s in scenes {
        if truths.insert(s.scene_id.clone(), s.ground_truths.clone()).is_some() {
            return Err(Error::arg(format!("duplicate scene id {}", s.scene_id)));
        }
    }
    let raw: Vec<Vec<DetectionRecord>> =
        scenes.par_iter().map(|s| sliding_window_scores(s, net, cfg.stride_r, cfg.stride_c)).collect::<Result<_>>()?;
    let records = non_max_suppression(&raw.concat(), cfg.nms_radius_r, cfg.nms_radius_c);
    let curve = miss_rate_curve(&records, &truths, cfg.tol_r, cfg.tol_c)?;
    let detections = label_detections(&records, &truths, cfg.tol_r, cfg.tol_c)?;
    let n_truths = truths.values().map(Vec::len).sum();
    let tp = detections.iter().filter(|d| d.1).count();
    let counts = MatchCounts { tp, fp: detections.len() - tp, fn_: n_truths - tp };
    Ok(EvalReport { detections, curve, counts, n_scenes: scenes.len(), n_truths })
}

/// Writes `detections.csv`, `curve.csv`, `summary.csv` and `curve.dat`.
pub fn write_report(dir: impl AsRef<Path>, report: &EvalReport) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut f = fs::File::create(dir.join("detections.csv"))?;
    writeln!(f, "scene_id,row,col,score,label")?;
    for (d, hit) in &report.detections {
        writeln!(f, "{},{},{},{:.8},{}", d.scene_id, d.row, d.col, d.score, if *hit { "tp" } else { "fp" })?;
    }
    let mut f = fs::File::create(dir.join("curve.csv"))?;
    writeln!(f, "threshold,fppi,miss_rate")?;
    for p in &report.curve.points {
        writeln!(f, "{},{:.8},{:.8}", p.threshold, p.fppi, p.miss_rate)?;
    }
    let mut f = fs::File::create(dir.join("summary.csv"))?;
    writeln!(f, "lamr,tp,fp,fn,n_scenes,n_truths,lamr_average")?;
    let c = report.counts;
    writeln!(
        f,
        "{:.8},{},{},{},{},{},arithmetic",
        report.curve.lamr, c.tp, c.fp, c.fn_, report.n_scenes, report.n_truths
    )?;
    let mut f = fs::File::create(dir.join("curve.dat"))?;
    writeln!(f, "# fppi miss_rate (points with fppi > 0, for a log-x plot)")?;
    for p in report.curve.points.iter().filter(|p| p.fppi > 0.0) {
        writeln!(f, "{:.8} {:.8}", p.fppi, p.miss_rate)?;
    }
    Ok(())
}
