//! Central finite-difference gradient checker.
//!
//! The model under test exposes its scalars through [`GradientProbe`]. For
//! each checked scalar the loss is evaluated at `p ± ε`; if either
//! evaluation takes a different discrete route (e.g. an argmax moves) the
//! scalar sits next to a non-differentiable point and is skipped as a tie.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Loss evaluation plus a signature of every non-smooth routing decision.
#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    pub loss: f64,
    pub route: Vec<u32>,
}

pub trait GradientProbe {
    /// `(name, len)` per parameter group, in a fixed order.
    fn groups(&self) -> Vec<(String, usize)>;
    fn get(&self, group: usize, idx: usize) -> f64;
    fn set(&mut self, group: usize, idx: usize, value: f64);
    fn probe(&self) -> Result<Probe>;
    /// Analytic gradient, one vector per group.
    fn analytic(&self) -> Result<Vec<Vec<f64>>>;
    /// Groups whose every scalar must be checked.
    fn check_all(&self, _group: usize) -> bool {
        false
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    pub epsilon: f64,
    pub samples_per_group: usize,
    pub seed: u64,
    /// Denominator floor for the relative error.
    pub abs_floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions { epsilon: 1e-5, samples_per_group: 20, seed: 0, abs_floor: 1e-6 }
    }
}

#[derive(Debug, Clone)]
pub struct GroupReport {
    pub name: String,
    pub checked: usize,
    pub skipped_ties: usize,
    pub max_rel_error: f64,
    pub worst_index: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub groups: Vec<GroupReport>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.groups.iter().map(|g| g.max_rel_error).fold(0.0, f64::max)
    }

    pub fn checked(&self) -> usize {
        self.groups.iter().map(|g| g.checked).sum()
    }

    pub fn skipped_ties(&self) -> usize {
        self.groups.iter().map(|g| g.skipped_ties).sum()
    }
}

/// `|a - n| / max(|a|, |n|, floor)`
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(floor);
    (analytic - numeric).abs() / denom
}

pub fn grad_check<P: GradientProbe>(model: &mut P, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    if !(1e-6..=1e-3).contains(&opts.epsilon) {
        return Err(Error::arg(format!("epsilon {} outside [1e-6, 1e-3]", opts.epsilon)));
    }
    let groups = model.groups();
    let analytic = model.analytic()?;
    if analytic.len() != groups.len() || analytic.iter().zip(&groups).any(|(a, g)| a.len() != g.1) {
        return Err(Error::Internal("analytic gradient does not match parameter groups".into()));
    }
    let base = model.probe()?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut reports = Vec::with_capacity(groups.len());
    for (gi, (name, len)) in groups.iter().enumerate() {
        let indices: Vec<usize> = if model.check_all(gi) || *len <= opts.samples_per_group {
            (0..*len).collect()
        } else {
            let mut v = sample(&mut rng, *len, opts.samples_per_group).into_vec();
            v.sort_unstable();
            v
        };
        let mut report =
            GroupReport { name: name.clone(), checked: 0, skipped_ties: 0, max_rel_error: 0.0, worst_index: None };
        for idx in indices {
            let orig = model.get(gi, idx);
            model.set(gi, idx, orig + opts.epsilon);
            let plus = model.probe();
            model.set(gi, idx, orig - opts.epsilon);
            let minus = model.probe();
            model.set(gi, idx, orig);
            let (plus, minus) = (plus?, minus?);
            if plus.route != base.route || minus.route != base.route {
                report.skipped_ties += 1;
                continue;
            }
            let numeric = (plus.loss - minus.loss) / (2.0 * opts.epsilon);
            let err = relative_error(analytic[gi][idx], numeric, opts.abs_floor);
            report.checked += 1;
            if err > report.max_rel_error || report.worst_index.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst_index = Some(idx);
            }
        }
        reports.push(report);
    }
    Ok(GradCheckReport { groups: reports })
}
