//! Staged training.
//!
//! Stage 1 trains the Gabor-initialized first layer with a linear head.
//! Stage 2 replaces the head with part filters, the deformation layer and a
//! logistic classifier over the part scores. Stage 3 adds visibility
//! reasoning and fine-tunes everything jointly. Each stage starts from the
//! previous stage's parameters.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::TrainConfig;
use crate::dataset::{minibatches, LabeledCrop};
use crate::error::{Error, Result};
use crate::network::{stack_tensor, BatchStats, Network, Stage};
use crate::nn::{ParamSet, Sgd, Tensor3};

const EVAL_CHUNK: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub stage: Stage,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct StageResult {
    pub network: Network<f32>,
    /// Training-set loss of the returned parameters.
    pub final_loss: f64,
    pub final_accuracy: f64,
    pub epochs_run: usize,
    pub log: Vec<EpochRecord>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub network: Network<f32>,
    pub stages: Vec<StageResult>,
}

impl TrainOutcome {
    pub fn log(&self) -> impl Iterator<Item = &EpochRecord> {
        self.stages.iter().flat_map(|s| s.log.iter())
    }
}

/// SplitMix64 step, used to derive independent sub-seeds.
fn mix(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed ^ a.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ b.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn labels_f32(crops: &[LabeledCrop]) -> Vec<f32> {
    crops.iter().map(|c| c.label as f32).collect()
}

/// Loss and accuracy over a whole crop list.
pub fn evaluate_crops(net: &Network<f32>, crops: &[LabeledCrop]) -> Result<BatchStats> {
    if crops.is_empty() {
        return Err(Error::arg("cannot evaluate an empty crop list"));
    }
    let mut loss = 0.0;
    let mut acc = 0.0;
    for chunk in crops.chunks(EVAL_CHUNK) {
        let inputs: Vec<Tensor3<f32>> = chunk.iter().map(|c| stack_tensor(&c.stack)).collect();
        let s = net.evaluate(&inputs, &labels_f32(chunk))?;
        loss += s.loss * chunk.len() as f64;
        acc += s.accuracy * chunk.len() as f64;
    }
    let n = crops.len() as f64;
    let stats = BatchStats { loss: loss / n, accuracy: acc / n };
    if !stats.loss.is_finite() {
        return Err(Error::Divergence(format!("non-finite loss {}", stats.loss)));
    }
    Ok(stats)
}

fn frozen_prefixes(stage: Stage, cfg: &TrainConfig) -> Vec<String> {
    if !cfg.freeze_previous {
        return Vec::new();
    }
    match stage {
        Stage::One => Vec::new(),
        Stage::Two => vec!["conv1.".into()],
        Stage::Three => vec!["conv1.".into(), "part".into()],
    }
}

/// Runs one stage's SGD loop on an already-built network.
pub fn train_stage(
    mut net: Network<f32>,
    train: &[LabeledCrop],
    val: &[LabeledCrop],
    cfg: &TrainConfig,
    previous_loss: Option<f64>,
) -> Result<StageResult> {
    let stage = net.stage;
    let sched = cfg.stages[stage as usize - 1];
    if sched.epochs == 0 {
        return Err(Error::Config(format!("stage {stage} needs at least one epoch")));
    }
    if train.is_empty() {
        return Err(Error::arg("no training crops"));
    }
    let frozen = frozen_prefixes(stage, cfg);
    let conv1_trainable = !frozen.iter().any(|p| p.starts_with("conv1"));
    let mut sgd = Sgd::<f32>::new(sched.lr, sched.momentum)?.with_frozen(frozen);
    let mut log = Vec::new();
    let mut best: Option<(f64, Network<f32>, BatchStats)> = None;
    let mut since_best = 0;
    let mut last = None;
    let mut epochs_run = 0;

    for epoch in 1..=sched.epochs {
        epochs_run = epoch;
        for batch in minibatches(train, cfg.batch_size, mix(cfg.seed, stage as u64, epoch as u64))? {
            let inputs: Vec<Tensor3<f32>> = batch.stacks.iter().map(|s| stack_tensor(s)).collect();
            let labels: Vec<f32> = batch.labels.iter().map(|&l| l as f32).collect();
            let (_, grad) = net.loss_and_grad(&inputs, &labels, conv1_trainable)?;
            sgd.step(&mut net, &grad)?;
        }
        let tr = evaluate_crops(&net, train)?;
        let va = if val.is_empty() { None } else { Some(evaluate_crops(&net, val)?) };
        info!(
            "stage {stage} epoch {epoch}: train loss {:.6} acc {:.4}{}",
            tr.loss,
            tr.accuracy,
            va.map_or(String::new(), |v| format!(", val loss {:.6} acc {:.4}", v.loss, v.accuracy))
        );
        log.push(EpochRecord {
            epoch,
            stage,
            train_loss: tr.loss,
            train_accuracy: tr.accuracy,
            val_loss: va.map(|v| v.loss),
            val_accuracy: va.map(|v| v.accuracy),
        });
        last = Some(tr);

        if let Some(target) = cfg.target_train_accuracy {
            let loss_ok = previous_loss.is_none_or(|p| tr.loss <= p);
            if tr.accuracy >= target && loss_ok {
                break;
            }
        }
        if let Some(v) = va {
            if best.as_ref().is_none_or(|(b, _, _)| v.loss < *b) {
                best = Some((v.loss, net.clone(), tr));
                since_best = 0;
            } else {
                since_best += 1;
                if cfg.patience > 0 && since_best >= cfg.patience {
                    info!("stage {stage}: early stop after {epoch} epochs");
                    break;
                }
            }
        }
    }

    let (network, stats) = match best {
        Some((_, b, s)) if cfg.target_train_accuracy.is_none() => (b, s),
        _ => (net, last.expect("at least one epoch")),
    };
    Ok(StageResult { network, final_loss: stats.loss, final_accuracy: stats.accuracy, epochs_run, log })
}

pub fn train_stage1(train: &[LabeledCrop], val: &[LabeledCrop], cfg: &TrainConfig) -> Result<StageResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, 1, 0));
    train_stage(Network::stage1(&mut rng)?, train, val, cfg, None)
}

pub fn train_stage2(
    stage1: Network<f32>,
    train: &[LabeledCrop],
    val: &[LabeledCrop],
    cfg: &TrainConfig,
    previous_loss: Option<f64>,
) -> Result<StageResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, 2, 0));
    let net = stage1.into_stage2(cfg.parts.clone(), cfg.deformation_mode, &mut rng)?;
    train_stage(net, train, val, cfg, previous_loss)
}

pub fn train_stage3_joint(
    stage2: Network<f32>,
    train: &[LabeledCrop],
    val: &[LabeledCrop],
    cfg: &TrainConfig,
    previous_loss: Option<f64>,
) -> Result<StageResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, 3, 0));
    let net = stage2.into_stage3(cfg.visibility_mode, &mut rng)?;
    train_stage(net, train, val, cfg, previous_loss)
}

/// All three stages. With `out_dir`, writes `stage1.ckpt`, `stage2.ckpt`,
/// `final.ckpt` and `epochs.csv` there.
pub fn train_all(
    train: &[LabeledCrop],
    val: &[LabeledCrop],
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    if let Some(d) = out_dir {
        fs::create_dir_all(d)?;
    }
    let save = |net: &Network<f32>, name: &str| -> Result<()> {
        if let Some(d) = out_dir {
            net.to_checkpoint().save(d.join(name))?;
        }
        Ok(())
    };
    let s1 = train_stage1(train, val, cfg)?;
    save(&s1.network, "stage1.ckpt")?;
    let s2 = train_stage2(s1.network.clone(), train, val, cfg, Some(s1.final_loss))?;
    save(&s2.network, "stage2.ckpt")?;
    let s3 = train_stage3_joint(s2.network.clone(), train, val, cfg, Some(s2.final_loss))?;
    save(&s3.network, "final.ckpt")?;
    let outcome = TrainOutcome { network: s3.network.clone(), stages: vec![s1, s2, s3] };
    if let Some(d) = out_dir {
        write_epoch_csv(d.join("epochs.csv"), outcome.log())?;
    }
    Ok(outcome)
}

pub fn write_epoch_csv<'a>(path: impl AsRef<Path>, records: impl IntoIterator<Item = &'a EpochRecord>) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(f, "epoch,stage,train_loss,val_loss,val_accuracy")?;
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.8}"));
    for r in records {
        writeln!(f, "{},{},{:.8},{},{}", r.epoch, r.stage, r.train_loss, opt(r.val_loss), opt(r.val_accuracy))?;
    }
    f.flush()?;
    Ok(())
}

/// Number of scalars per group whose gradient is exactly zero on the batch.
pub fn dead_parameters(net: &Network<f32>, crops: &[LabeledCrop]) -> Result<Vec<(String, usize)>> {
    let inputs: Vec<Tensor3<f32>> = crops.iter().map(|c| stack_tensor(&c.stack)).collect();
    let (_, grad) = net.loss_and_grad(&inputs, &labels_f32(crops), true)?;
    Ok(grad.params().into_iter().map(|g| (g.name, g.data.iter().filter(|v| **v == 0.0).count())).collect())
}
