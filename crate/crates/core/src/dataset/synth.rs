//! Procedural stand-in corpus in the same on-disk layout as the real one.
//!
//! Cars are a bright or dark body with a cabin and two dark wheels; non-cars
//! are stripe/blob/gradient textures drawn from the same intensity range.
//! Used by tests and by `prepare --synthetic`.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{format_truth_line, Anchor, TRUTH_FILE};
use crate::error::Result;
use crate::image_io::{save_pgm, GrayImage, PgmEncoding, CROP_H, CROP_W};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub positives: usize,
    pub negatives: usize,
    pub scenes: usize,
    pub scene_h: usize,
    pub scene_w: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec { positives: 60, negatives: 60, scenes: 6, scene_h: 100, scene_w: 240, seed: 0 }
    }
}

fn clamp_px(v: f64) -> f64 {
    v.clamp(0.0, 255.0)
}

/// Random clutter texture.
pub fn synthetic_background<R: Rng + ?Sized>(rng: &mut R, height: usize, width: usize) -> GrayImage {
    let base = rng.gen_range(70.0..190.0);
    let kind = rng.gen_range(0..3);
    let theta: f64 = rng.gen_range(0.0..std::f64::consts::PI);
    let period = rng.gen_range(6.0..30.0);
    let amp = rng.gen_range(10.0..50.0);
    let (gr, gc) = (rng.gen_range(-0.6..0.6), rng.gen_range(-0.4..0.4));
    let blobs: Vec<(f64, f64, f64, f64)> = (0..rng.gen_range(2..7))
        .map(|_| {
            (
                rng.gen_range(0.0..height as f64),
                rng.gen_range(0.0..width as f64),
                rng.gen_range(4.0..18.0),
                rng.gen_range(-70.0..70.0),
            )
        })
        .collect();
    let mut img = GrayImage::from_fn(height, width, |r, c| {
        let (y, x) = (r as f64, c as f64);
        let v = match kind {
            0 => base + amp * ((x * theta.cos() + y * theta.sin()) * std::f64::consts::TAU / period).sin(),
            1 => base + gr * y + gc * x,
            _ => {
                base + blobs
                    .iter()
                    .map(|&(br, bc, rad, a)| if (y - br).powi(2) + (x - bc).powi(2) < rad * rad { a } else { 0.0 })
                    .sum::<f64>()
            }
        };
        clamp_px(v)
    })
    .expect("non-empty");
    for v in img.data_mut() {
        *v = clamp_px(*v + rng.gen_range(-12.0..12.0));
    }
    img
}

/// Draws a side-view car whose 40×100 window starts at `(row, col)`.
pub fn draw_car<R: Rng + ?Sized>(img: &mut GrayImage, row: usize, col: usize, rng: &mut R) {
    let dark = rng.gen_bool(0.5);
    let body = if dark { rng.gen_range(20.0..70.0) } else { rng.gen_range(180.0..240.0) };
    let glass = if dark { body + 90.0 } else { body - 110.0 };
    let wheel = rng.gen_range(5.0..35.0);
    let dr = rng.gen_range(-2i64..=2) as f64;
    let dc = rng.gen_range(-3i64..=3) as f64;
    let cabin_lo = rng.gen_range(24.0..32.0);
    let cabin_hi = rng.gen_range(66.0..74.0);
    for r in 0..CROP_H {
        for c in 0..CROP_W {
            let (y, x) = (r as f64 - dr, c as f64 - dc);
            let mut v = None;
            if (15.0..29.0).contains(&y) && (6.0..94.0).contains(&x) {
                v = Some(body);
            }
            let slant = (15.0 - y).max(0.0) * 0.8;
            if (5.0..15.0).contains(&y) && x >= cabin_lo + slant && x < cabin_hi - slant {
                v = Some(if (7.0..14.0).contains(&y) && (x - 50.0).abs() > 2.0 { glass } else { body });
            }
            for wc in [24.0, 76.0] {
                let d2 = (y - 29.0).powi(2) + (x - wc).powi(2);
                if d2 < 49.0 {
                    v = Some(if d2 < 6.0 { wheel + 60.0 } else { wheel });
                }
            }
            if let Some(v) = v {
                let (rr, cc) = (row + r, col + c);
                if rr < img.height() && cc < img.width() {
                    img.set(rr, cc, clamp_px(v + rng.gen_range(-6.0..6.0)));
                }
            }
        }
    }
}

pub fn synthetic_car<R: Rng + ?Sized>(rng: &mut R) -> GrayImage {
    let mut img = synthetic_background(rng, CROP_H, CROP_W);
    draw_car(&mut img, 0, 0, rng);
    img
}

/// Scene with up to two non-overlapping cars.
fn synthetic_scene<R: Rng + ?Sized>(rng: &mut R, height: usize, width: usize) -> (GrayImage, Vec<Anchor>) {
    let mut img = synthetic_background(rng, height, width);
    let mut anchors: Vec<Anchor> = Vec::new();
    let want = rng.gen_range(1..=2);
    for _ in 0..20 {
        if anchors.len() == want {
            break;
        }
        let a = (rng.gen_range(0..=height - CROP_H), rng.gen_range(0..=width - CROP_W));
        if anchors.iter().all(|&(r, c)| r.abs_diff(a.0) >= CROP_H || c.abs_diff(a.1) >= CROP_W) {
            draw_car(&mut img, a.0, a.1, rng);
            anchors.push(a);
        }
    }
    anchors.sort();
    (img, anchors)
}

/// Writes `pos/`, `neg/`, `test/` and the truth file under `root`.
pub fn write_synthetic_corpus(root: impl AsRef<Path>, spec: &SynthSpec) -> Result<()> {
    let root = root.as_ref();
    for d in ["pos", "neg", "test"] {
        fs::create_dir_all(root.join(d))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    for i in 0..spec.positives {
        save_pgm(root.join(format!("pos/pos-{i:04}.pgm")), &synthetic_car(&mut rng), PgmEncoding::Binary)?;
    }
    for i in 0..spec.negatives {
        let img = synthetic_background(&mut rng, CROP_H, CROP_W);
        save_pgm(root.join(format!("neg/neg-{i:04}.pgm")), &img, PgmEncoding::Binary)?;
    }
    let mut truth = String::new();
    for i in 0..spec.scenes {
        let (img, anchors) = synthetic_scene(&mut rng, spec.scene_h.max(CROP_H), spec.scene_w.max(CROP_W));
        save_pgm(root.join(format!("test/test-{i}.pgm")), &img, PgmEncoding::Binary)?;
        truth.push_str(&format_truth_line(i, &anchors));
        truth.push('\n');
    }
    fs::write(root.join(TRUTH_FILE), truth)?;
    Ok(())
}
