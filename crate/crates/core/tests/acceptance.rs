//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any gated criterion fails.
//!
//! Criterion 8 needs the UIUC car corpus; point `UIUC_ROOT` at a directory
//! in the documented layout to run it (about two hours on one core).

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use jointdet::config::TrainConfig;
use jointdet::dataset::{augment_rotations, load_training_set, split_validation, LabeledCrop};
use jointdet::deformation::default_part_layout;
use jointdet::deformation::DeformationMode;
use jointdet::deformation::{expand_quadratic, part_score, quadratic_basis, summed_map, Map2};
use jointdet::eval::{fppi_samples, miss_rate_curve, DetectionRecord};
use jointdet::image_io::{read_pgm, write_pgm, ChannelStack, GrayImage, PgmEncoding, STACK_H, STACK_W};
use jointdet::network::{grad_check, stack_tensor, Network, CONV1_OUT, FEATURES};
use jointdet::nn::gradcheck::GradCheckOptions;
use jointdet::nn::{avg_pool_boxcar, conv2d_valid, gabor_bank, FilterBank, Tensor3};
use jointdet::trainer::train_all;
use jointdet::visibility::VisibilityMode;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn random_stack(rng: &mut ChaCha8Rng) -> ChannelStack {
    let plane = STACK_H * STACK_W;
    let p: Vec<Vec<f64>> = (0..3).map(|_| (0..plane).map(|_| rng.gen_range(-1.5..1.5)).collect()).collect();
    ChannelStack::from_planes([&p[0], &p[1], &p[2]]).unwrap()
}

fn gradient_integrity() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let net = Network::<f64>::stage1(&mut rng)
        .and_then(|n| n.into_stage2(default_part_layout(), DeformationMode::Quadratic, &mut rng))
        .and_then(|n| n.into_stage3(VisibilityMode::Hierarchical, &mut rng))
        .map_err(err)?;
    let stacks: Vec<ChannelStack> = (0..8).map(|_| random_stack(&mut rng)).collect();
    let refs: Vec<&ChannelStack> = stacks.iter().collect();
    let labels: Vec<f64> = (0..8).map(|i| (i % 2) as f64).collect();
    let report = grad_check(&net, &refs, &labels, &GradCheckOptions::default()).map_err(err)?;
    let elapsed = start.elapsed();
    let worst = report.max_rel_error();
    let detail = format!(
        "max rel error {worst:.2e} over {} scalars in {} groups, {} skipped at ties, {:.1}s",
        report.checked(),
        report.groups.len(),
        report.skipped_ties(),
        elapsed.as_secs_f64()
    );
    ensure(worst < 1e-3 && elapsed < Duration::from_secs(60), detail.clone())?;
    Ok(detail)
}

fn brute_force(m: &Map2<f64>, c: &[f64; 4], anchor: (usize, usize)) -> (f64, (usize, usize)) {
    let mut best = (f64::NEG_INFINITY, (0, 0));
    for x in 0..m.height {
        for y in 0..m.width {
            let (dx, dy) = (x as f64 - anchor.0 as f64, y as f64 - anchor.1 as f64);
            let v = m.get(x, y) + c[0] * (dx * dx) + c[1] * (dy * dy) + c[2] * dx + c[3] * dy;
            if v > best.0 {
                best = (v, (x, y));
            }
        }
    }
    best
}

fn deformation_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst_form: f64 = 0.0;
    for case in 0..1000 {
        let (h, w) = (rng.gen_range(1..20), rng.gen_range(1..8));
        let m = Map2::new(h, w, (0..h * w).map(|_| rng.gen_range(-2.0..2.0)).collect()).map_err(err)?;
        let c = [
            -rng.gen_range(0.001..1.0),
            -rng.gen_range(0.001..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        ];
        let anchor = (rng.gen_range(0..h), rng.gen_range(0..w));
        let basis = quadratic_basis(h, w, anchor).map_err(err)?;
        let got = part_score(&summed_map(&m, &c, &basis).map_err(err)?);
        ensure(got == brute_force(&m, &c, anchor), format!("case {case}: {got:?} differs from enumeration"))?;
        let exp = expand_quadratic(&c, anchor, &m).map_err(err)?;
        let (a, b) = (exp.with_c5().ok_or("degenerate")?, exp.completed_square.ok_or("degenerate")?);
        for (x, y) in a.data.iter().zip(&b.data) {
            worst_form = worst_form.max((x - y).abs());
        }
    }
    ensure(worst_form <= 1e-9, format!("expanded and completed-square forms differ by {worst_form:.2e}"))?;
    Ok(format!("1000/1000 instances match enumeration; forms agree to {worst_form:.1e}"))
}

fn shape_contract() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let input =
        Tensor3::<f64>::new(3, 84, 28, (0..3 * 84 * 28).map(|_| rng.gen_range(-1.0..1.0)).collect()).map_err(err)?;
    let bank: FilterBank<f64> = gabor_bank(64, 9, 9, 3).map_err(err)?;
    let conv = conv2d_valid(&input, &bank).map_err(err)?;
    let pooled = avg_pool_boxcar(&conv, 4, 4).map_err(err)?;
    ensure(
        conv.dims() == (64, 76, 20) && pooled.dims() == (64, 19, 5),
        format!("{:?} -> {:?}", conv.dims(), pooled.dims()),
    )?;
    ensure(CONV1_OUT == (76, 20) && FEATURES == (64, 19, 5), "network constants")?;
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let (c, k, fh, fw) = (rng.gen_range(1..4), rng.gen_range(1..4), rng.gen_range(1..6), rng.gen_range(1..6));
        let (h, w) = (fh + rng.gen_range(0..8), fw + rng.gen_range(0..8));
        let x =
            Tensor3::<f64>::new(c, h, w, (0..c * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect()).map_err(err)?;
        let bank = FilterBank::new(
            k,
            c,
            fh,
            fw,
            (0..k * c * fh * fw).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .map_err(err)?;
        let y = conv2d_valid(&x, &bank).map_err(err)?;
        let (oh, ow) = (h - fh + 1, w - fw + 1);
        for kk in 0..k {
            for r in 0..oh {
                for col in 0..ow {
                    let mut acc = bank.biases[kk];
                    for ch in 0..c {
                        for i in 0..fh {
                            for j in 0..fw {
                                acc += bank.weight(kk, ch, i, j) * x.get(ch, r + i, col + j);
                            }
                        }
                    }
                    worst = worst.max((acc - y.get(kk, r, col)).abs());
                }
            }
        }
    }
    ensure(worst <= 1e-12, format!("convolution differs from triple loop by {worst:.2e}"))?;
    Ok(format!("3x84x28 -> 64x76x20 -> 64x19x5; 50 random instances within {worst:.1e} of the triple loop"))
}

fn metric_oracle() -> Outcome {
    let det = |s: &str, r, c, score| DetectionRecord { scene_id: s.into(), row: r, col: c, score };
    let truths = BTreeMap::from([("A".to_string(), vec![(10, 10), (10, 200)]), ("B".to_string(), vec![(50, 50)])]);
    let dets = [det("A", 10, 12, 0.9), det("B", 0, 300, 0.8), det("A", 12, 205, 0.7), det("B", 90, 90, 0.6)];
    // thresholds 0.9, 0.8, 0.7, 0.6 give (fppi, miss) = (0, 2/3), (1/2, 2/3),
    // (1/2, 1/3), (1, 1/3): seven samples below 1/2 read 2/3, two read 1/3.
    let hand = 16.0 / 27.0;
    let lamr = miss_rate_curve(&dets, &truths, 10, 25).map_err(err)?.lamr;
    ensure(lamr == hand, format!("lamr {lamr} != {hand}"))?;
    for (k, s) in fppi_samples().iter().enumerate() {
        let want = 10f64.powf(-2.0 + 0.25 * k as f64);
        ensure(*s == want, format!("sample {k}: {s} != {want}"))?;
    }
    Ok(format!("fixture lamr = 16/27 = {lamr:.6}; nine samples 0.01..1 exact"))
}

fn augmentation_count() -> Outcome {
    let crops = common::memory_crops(1050, 5);
    let out = augment_rotations(&crops, 10.0, 1.0).map_err(err)?;
    ensure(out.len() == 22050, format!("{} crops", out.len()))?;
    let labels_kept = out.iter().enumerate().all(|(i, c)| c.label == crops[i / 21].label);
    ensure(labels_kept, "augmented label differs from source")?;
    Ok("1050 crops -> 22050 (21 angles), labels preserved".into())
}

fn overfit_sanity() -> Outcome {
    let dir = tempfile::tempdir().map_err(err)?;
    let crops = common::toy_corpus(dir.path(), 25, 25, 1, 6);
    ensure(crops.len() == 50, format!("{} crops", crops.len()))?;
    let outcome = train_all(&crops, &[], &common::overfit_config(), None).map_err(err)?;
    let mut parts = Vec::new();
    let mut prev: Option<f64> = None;
    for s in &outcome.stages {
        parts.push(format!(
            "stage {} acc {:.3} loss {:.4} in {} epochs",
            s.network.stage, s.final_accuracy, s.final_loss, s.epochs_run
        ));
        ensure(s.final_accuracy >= 0.99 && s.epochs_run <= 200, parts.join("; "))?;
        if let Some(p) = prev {
            ensure(s.final_loss <= p + 1e-6, format!("{}; loss rose from {p:.6}", parts.join("; ")))?;
        }
        prev = Some(s.final_loss);
    }
    Ok(parts.join("; "))
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(err)?;
    let crops = common::toy_corpus(&dir.path().join("corpus"), 10, 10, 1, 7);
    let cfg = common::short_config(2);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    train_all(&crops, &[], &cfg, Some(&a)).map_err(err)?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().map_err(err)?;
    pool.install(|| train_all(&crops, &[], &cfg, Some(&b))).map_err(err)?;
    for f in ["stage1.ckpt", "stage2.ckpt", "final.ckpt", "epochs.csv"] {
        let (x, y) = (std::fs::read(a.join(f)).map_err(err)?, std::fs::read(b.join(f)).map_err(err)?);
        ensure(x == y, format!("{f} differs between runs"))?;
    }
    Ok("two 3-stage runs (1 and 3 worker threads) give byte-identical checkpoints".into())
}

/// Fraction of held-out cars classified as non-cars.
fn crop_miss_rate(net: &Network<f32>, crops: &[LabeledCrop]) -> f64 {
    let cars: Vec<&LabeledCrop> = crops.iter().filter(|c| c.label == 1).collect();
    let missed = cars.iter().filter(|c| net.forward(&stack_tensor(&c.stack)).unwrap().y_hat < 0.5).count();
    missed as f64 / cars.len().max(1) as f64
}

fn desk_scale(root: &str) -> Outcome {
    let crops = load_training_set(root).map_err(err)?;
    let cfg = TrainConfig::default();
    let (train, held_out) = split_validation(crops, cfg.val_fraction).map_err(err)?;
    let mut rates = Vec::new();
    for augment in [false, true] {
        let data = if augment {
            augment_rotations(&train, cfg.aug_max_deg, cfg.aug_step_deg).map_err(err)?
        } else {
            train.clone()
        };
        let out = train_all(&data, &held_out, &cfg, None).map_err(err)?;
        rates.push(crop_miss_rate(&out.network, &held_out));
    }
    let detail =
        format!("held-out miss rate {:.1}% without augmentation, {:.1}% with", rates[0] * 100.0, rates[1] * 100.0);
    ensure(rates[1] <= 0.10 && rates[1] < rates[0], detail.clone())?;
    Ok(detail)
}

fn pgm_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for i in 0..100 {
        let (h, w) = (rng.gen_range(1..64), rng.gen_range(1..64));
        let img = GrayImage::new(h, w, (0..h * w).map(|_| rng.gen_range(0..=255) as f64).collect()).map_err(err)?;
        for enc in [PgmEncoding::Ascii, PgmEncoding::Binary] {
            let bytes = write_pgm(&img, enc);
            let back = read_pgm(&bytes).map_err(err)?;
            ensure(back == img && write_pgm(&back, enc) == bytes, format!("image {i} ({enc:?}) did not round-trip"))?;
        }
    }
    Ok("100 random images, P2 and P5, byte-exact".into())
}

fn run(id: u32, name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p.downcast_ref::<String>().cloned().or(p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
    });
    match result {
        Ok(detail) => {
            println!("criterion {id} {name}: PASS ({detail})");
            true
        }
        Err(detail) => {
            println!("criterion {id} {name}: FAIL ({detail})");
            false
        }
    }
}

fn main() {
    let mut ok = true;
    ok &= run(1, "gradient integrity", gradient_integrity);
    ok &= run(2, "deformation oracle", deformation_oracle);
    ok &= run(3, "convolution/pooling shapes", shape_contract);
    ok &= run(4, "metric oracle", metric_oracle);
    ok &= run(5, "augmentation count", augmentation_count);
    ok &= run(6, "overfit sanity", overfit_sanity);
    ok &= run(7, "determinism", determinism);
    match std::env::var("UIUC_ROOT") {
        Ok(root) => {
            // Soft target: reported, never gating.
            run(8, "desk-scale reproduction (soft)", || desk_scale(&root));
        }
        Err(_) => {
            println!("criterion 8 desk-scale reproduction (soft): NOT RUN (UIUC corpus unavailable; set UIUC_ROOT)")
        }
    }
    ok &= run(9, "PGM round trip", pgm_round_trip);
    if !ok {
        std::process::exit(1);
    }
}
