//! Flat `key = value` run configuration.
//!
//! Lines are `key = value`; `#` starts a comment. Unknown keys are errors.
//! Command-line overrides go through the same [`RunConfig::set`] call, so
//! the precedence is overrides > file > defaults.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::deformation::{default_part_layout, validate_layout, DeformationMode, PartSpec, NUM_PARTS};
use crate::error::{Error, Result};
use crate::visibility::VisibilityMode;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageSchedule {
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub stages: [StageSchedule; 3],
    pub batch_size: usize,
    pub seed: u64,
    pub augment: bool,
    pub aug_max_deg: f64,
    pub aug_step_deg: f64,
    pub deformation_mode: DeformationMode,
    pub visibility_mode: VisibilityMode,
    pub patience: usize,
    pub val_fraction: f64,
    /// Keep layers from earlier stages fixed while a new stage trains.
    pub freeze_previous: bool,
    /// When set, a stage ends once training accuracy reaches this value and
    /// its training loss is no worse than the previous stage's.
    pub target_train_accuracy: Option<f64>,
    pub parts: Vec<PartSpec>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            stages: [
                StageSchedule { epochs: 20, lr: 0.01, momentum: 0.9 },
                StageSchedule { epochs: 20, lr: 0.01, momentum: 0.9 },
                StageSchedule { epochs: 30, lr: 0.001, momentum: 0.9 },
            ],
            batch_size: 32,
            seed: 0,
            augment: true,
            aug_max_deg: 10.0,
            aug_step_deg: 1.0,
            deformation_mode: DeformationMode::Quadratic,
            visibility_mode: VisibilityMode::Hierarchical,
            patience: 5,
            val_fraction: 0.1,
            freeze_previous: false,
            target_train_accuracy: None,
            parts: default_part_layout(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub stride_r: usize,
    pub stride_c: usize,
    pub nms_radius_r: usize,
    pub nms_radius_c: usize,
    pub tol_r: usize,
    pub tol_c: usize,
    pub threshold: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            stride_r: 4,
            stride_c: 4,
            nms_radius_r: 10,
            nms_radius_c: 25,
            tol_r: 10,
            tol_c: 25,
            threshold: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

/// Every accepted key with a short description.
pub const KEYS: &[(&str, &str)] = &[
    ("seed", "master random seed"),
    ("batch_size", "minibatch size"),
    ("augment", "rotation augmentation on/off"),
    ("aug_max_deg", "largest augmentation angle in degrees"),
    ("aug_step_deg", "augmentation angle step in degrees"),
    ("deformation_mode", "quadratic | learned_map"),
    ("visibility_mode", "hierarchical | logistic"),
    ("patience", "early-stopping patience in epochs (0 disables)"),
    ("val_fraction", "held-out fraction of training sources"),
    ("freeze_previous", "freeze earlier-stage layers while a new stage trains"),
    ("target_train_accuracy", "stop a stage at this training accuracy (none = run all epochs)"),
    ("stage1.epochs", "stage 1 epoch budget"),
    ("stage1.lr", "stage 1 learning rate"),
    ("stage1.momentum", "stage 1 momentum"),
    ("stage2.epochs", "stage 2 epoch budget"),
    ("stage2.lr", "stage 2 learning rate"),
    ("stage2.momentum", "stage 2 momentum"),
    ("stage3.epochs", "stage 3 epoch budget"),
    ("stage3.lr", "stage 3 learning rate"),
    ("stage3.momentum", "stage 3 momentum"),
    ("part.1", "level,f_h,f_w,anchor_row,anchor_col,mirror_of|-"),
    ("part.2", "part 2 geometry"),
    ("part.3", "part 3 geometry"),
    ("part.4", "part 4 geometry"),
    ("part.5", "part 5 geometry"),
    ("part.6", "part 6 geometry"),
    ("part.7", "part 7 geometry"),
    ("part.8", "part 8 geometry"),
    ("eval.stride_r", "sliding-window row stride"),
    ("eval.stride_c", "sliding-window column stride"),
    ("eval.nms_radius_r", "NMS row radius"),
    ("eval.nms_radius_c", "NMS column radius"),
    ("eval.tol_r", "match tolerance in rows"),
    ("eval.tol_c", "match tolerance in columns"),
    ("eval.threshold", "score threshold for detect"),
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean {value:?} for {key}"))),
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let t = &mut self.train;
        let e = &mut self.eval;
        match key {
            "seed" => t.seed = parse(key, value)?,
            "batch_size" => t.batch_size = parse(key, value)?,
            "augment" => t.augment = parse_bool(key, value)?,
            "aug_max_deg" => t.aug_max_deg = parse(key, value)?,
            "aug_step_deg" => t.aug_step_deg = parse(key, value)?,
            "deformation_mode" => t.deformation_mode = value.parse()?,
            "visibility_mode" => t.visibility_mode = value.parse()?,
            "patience" => t.patience = parse(key, value)?,
            "val_fraction" => t.val_fraction = parse(key, value)?,
            "freeze_previous" => t.freeze_previous = parse_bool(key, value)?,
            "target_train_accuracy" => {
                t.target_train_accuracy = if value == "none" { None } else { Some(parse(key, value)?) }
            }
            "eval.stride_r" => e.stride_r = parse(key, value)?,
            "eval.stride_c" => e.stride_c = parse(key, value)?,
            "eval.nms_radius_r" => e.nms_radius_r = parse(key, value)?,
            "eval.nms_radius_c" => e.nms_radius_c = parse(key, value)?,
            "eval.tol_r" => e.tol_r = parse(key, value)?,
            "eval.tol_c" => e.tol_c = parse(key, value)?,
            "eval.threshold" => e.threshold = parse(key, value)?,
            _ => {
                if let Some((stage, field)) = key.strip_prefix("stage").and_then(|r| r.split_once('.')) {
                    let idx = match stage {
                        "1" => 0,
                        "2" => 1,
                        "3" => 2,
                        _ => return Err(Error::Config(format!("unknown key {key:?}"))),
                    };
                    let s = &mut t.stages[idx];
                    match field {
                        "epochs" => s.epochs = parse(key, value)?,
                        "lr" => s.lr = parse(key, value)?,
                        "momentum" => s.momentum = parse(key, value)?,
                        _ => return Err(Error::Config(format!("unknown key {key:?}"))),
                    }
                } else if let Some(id) = key.strip_prefix("part.") {
                    let id: usize = id.parse().map_err(|_| Error::Config(format!("unknown key {key:?}")))?;
                    if !(1..=NUM_PARTS).contains(&id) {
                        return Err(Error::Config(format!("unknown key {key:?}")));
                    }
                    t.parts[id - 1] = PartSpec::parse(id, value)?;
                } else {
                    return Err(Error::Config(format!("unknown key {key:?}")));
                }
            }
        }
        Ok(())
    }

    /// Current value of `key`, formatted as it would be written.
    pub fn get(&self, key: &str) -> Option<String> {
        let t = &self.train;
        let e = &self.eval;
        let v = match key {
            "seed" => t.seed.to_string(),
            "batch_size" => t.batch_size.to_string(),
            "augment" => t.augment.to_string(),
            "aug_max_deg" => t.aug_max_deg.to_string(),
            "aug_step_deg" => t.aug_step_deg.to_string(),
            "deformation_mode" => t.deformation_mode.to_string(),
            "visibility_mode" => t.visibility_mode.to_string(),
            "patience" => t.patience.to_string(),
            "val_fraction" => t.val_fraction.to_string(),
            "freeze_previous" => t.freeze_previous.to_string(),
            "target_train_accuracy" => t.target_train_accuracy.map_or("none".into(), |v| v.to_string()),
            "eval.stride_r" => e.stride_r.to_string(),
            "eval.stride_c" => e.stride_c.to_string(),
            "eval.nms_radius_r" => e.nms_radius_r.to_string(),
            "eval.nms_radius_c" => e.nms_radius_c.to_string(),
            "eval.tol_r" => e.tol_r.to_string(),
            "eval.tol_c" => e.tol_c.to_string(),
            "eval.threshold" => e.threshold.to_string(),
            _ => {
                if let Some((stage, field)) = key.strip_prefix("stage").and_then(|r| r.split_once('.')) {
                    let s = t.stages.get(stage.parse::<usize>().ok()?.checked_sub(1)?)?;
                    match field {
                        "epochs" => s.epochs.to_string(),
                        "lr" => s.lr.to_string(),
                        "momentum" => s.momentum.to_string(),
                        _ => return None,
                    }
                } else {
                    let id: usize = key.strip_prefix("part.")?.parse().ok()?;
                    t.parts.get(id.checked_sub(1)?)?.to_string()
                }
            }
        };
        Some(v)
    }

    /// Applies a config file's lines on top of the current values.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got {raw:?}", i + 1)))?;
            self.set(k.trim(), v.trim()).map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = RunConfig::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    /// `key=value` override as given on the command line.
    pub fn apply_override(&mut self, kv: &str) -> Result<()> {
        let (k, v) = kv.split_once('=').ok_or_else(|| Error::Config(format!("override {kv:?} is not key=value")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.train;
        for (i, s) in t.stages.iter().enumerate() {
            if s.epochs == 0 {
                return Err(Error::Config(format!("stage{}.epochs must be at least 1", i + 1)));
            }
            if !(s.lr > 0.0 && s.lr.is_finite()) {
                return Err(Error::Config(format!("stage{}.lr must be positive", i + 1)));
            }
            if !(0.0..1.0).contains(&s.momentum) {
                return Err(Error::Config(format!("stage{}.momentum must be in [0, 1)", i + 1)));
            }
        }
        if t.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if t.aug_step_deg.is_nan() || t.aug_step_deg <= 0.0 || !(0.0..=10.0).contains(&t.aug_max_deg) {
            return Err(Error::Config("augmentation needs aug_step_deg > 0 and aug_max_deg in [0, 10]".into()));
        }
        if !(0.0..1.0).contains(&t.val_fraction) {
            return Err(Error::Config("val_fraction must be in [0, 1)".into()));
        }
        if let Some(a) = t.target_train_accuracy {
            if !(0.0..=1.0).contains(&a) {
                return Err(Error::Config("target_train_accuracy must be in [0, 1]".into()));
            }
        }
        validate_layout(&t.parts)?;
        let e = &self.eval;
        if e.stride_r == 0 || e.stride_c == 0 {
            return Err(Error::Config("eval strides must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&e.threshold) {
            return Err(Error::Config("eval.threshold must be in [0, 1]".into()));
        }
        Ok(())
    }

    /// Full config in file syntax, one key per line.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, _) in KEYS {
            let _ = writeln!(s, "{k} = {}", self.get(k).unwrap_or_default());
        }
        s
    }
}
