//! Visibility reasoning over the eight part scores.
//!
//! Hierarchical mode keeps one sigmoid hidden unit per part, arranged by part
//! level. Level-1 units see only their own score; every higher-level unit also
//! sees the previous level's hidden vector:
//!
//! ```text
//! h¹_j   = σ(g_j·s_j + b_j)
//! hˡ⁺¹_j = σ(Σ_i hˡ_i·Wˡ_ij + g_j·s_j + b_j)
//! ŷ      = σ(Σ_j hᴸ_j·r_j + r_b)
//! ```
//!
//! Logistic mode is a plain `ŷ = σ(w·s + b)` head.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::deformation::{PartSpec, NUM_LEVELS};
use crate::error::{Error, Result};
use crate::nn::{sigmoid, uniform_init, xavier_bound, ParamView, ParamViewMut};
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VisibilityMode {
    #[default]
    Hierarchical,
    Logistic,
}

impl fmt::Display for VisibilityMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VisibilityMode::Hierarchical => "hierarchical",
            VisibilityMode::Logistic => "logistic",
        })
    }
}

impl FromStr for VisibilityMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hierarchical" => Ok(VisibilityMode::Hierarchical),
            "logistic" => Ok(VisibilityMode::Logistic),
            _ => Err(Error::Config(format!("unknown visibility mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hierarchy<T> {
    /// Part indices (0-based) on each level, lowest level first.
    pub levels: Vec<Vec<usize>>,
    /// Score-injection weight per part.
    pub gain: Vec<T>,
    /// Hidden-unit bias per part.
    pub bias: Vec<T>,
    /// `inter[l]` is `|level l| × |level l+1|`, row-major.
    pub inter: Vec<Vec<T>>,
    pub readout: Vec<T>,
    pub readout_bias: T,
}

#[derive(Debug, Clone, PartialEq)]
pub enum VisibilityParams<T> {
    Logistic { weight: Vec<T>, bias: T },
    Hierarchical(Hierarchy<T>),
}

#[derive(Debug, Clone)]
pub enum VisibilityCache<T> {
    Logistic { scores: Vec<T>, y_hat: T },
    Hierarchical { scores: Vec<T>, hidden: Vec<Vec<T>>, y_hat: T },
}

impl<T> VisibilityCache<T> {
    pub fn y_hat(&self) -> &T {
        match self {
            VisibilityCache::Logistic { y_hat, .. } | VisibilityCache::Hierarchical { y_hat, .. } => y_hat,
        }
    }
}

/// Part indices grouped by level.
pub fn level_groups(specs: &[PartSpec]) -> Vec<Vec<usize>> {
    (1..=NUM_LEVELS)
        .map(|l| specs.iter().enumerate().filter(|(_, s)| s.level == l).map(|(i, _)| i).collect())
        .filter(|g: &Vec<usize>| !g.is_empty())
        .collect()
}

impl<T: Real> VisibilityParams<T> {
    pub fn logistic<R: Rng + ?Sized>(num_parts: usize, rng: &mut R) -> Self {
        let bound = xavier_bound(num_parts, 1);
        VisibilityParams::Logistic { weight: uniform_init(rng, num_parts, bound), bias: T::zero() }
    }

    pub fn hierarchical<R: Rng + ?Sized>(specs: &[PartSpec], rng: &mut R) -> Result<Self> {
        let levels = level_groups(specs);
        if levels.is_empty() {
            return Err(Error::Config("visibility hierarchy needs at least one level".into()));
        }
        let n = specs.len();
        let gain = uniform_init(rng, n, xavier_bound(1, 1));
        let inter = levels
            .windows(2)
            .map(|w| uniform_init(rng, w[0].len() * w[1].len(), xavier_bound(w[0].len(), w[1].len())))
            .collect();
        let top = levels.last().expect("non-empty").len();
        let readout = uniform_init(rng, top, xavier_bound(top, 1));
        Ok(VisibilityParams::Hierarchical(Hierarchy {
            levels,
            gain,
            bias: vec![T::zero(); n],
            inter,
            readout,
            readout_bias: T::zero(),
        }))
    }

    pub fn mode(&self) -> VisibilityMode {
        match self {
            VisibilityParams::Logistic { .. } => VisibilityMode::Logistic,
            VisibilityParams::Hierarchical(_) => VisibilityMode::Hierarchical,
        }
    }

    pub fn map<U: Real>(&self, f: impl Fn(T) -> U + Copy) -> VisibilityParams<U> {
        let v = |x: &Vec<T>| x.iter().map(|&a| f(a)).collect::<Vec<U>>();
        match self {
            VisibilityParams::Logistic { weight, bias } => {
                VisibilityParams::Logistic { weight: v(weight), bias: f(*bias) }
            }
            VisibilityParams::Hierarchical(h) => VisibilityParams::Hierarchical(Hierarchy {
                levels: h.levels.clone(),
                gain: v(&h.gain),
                bias: v(&h.bias),
                inter: h.inter.iter().map(v).collect(),
                readout: v(&h.readout),
                readout_bias: f(h.readout_bias),
            }),
        }
    }

    pub fn zeros_like(&self) -> Self {
        self.map(|_| T::zero())
    }

    pub fn params(&self) -> Vec<ParamView<'_, T>> {
        match self {
            VisibilityParams::Logistic { weight, bias } => vec![
                ParamView { name: "vis.weight".into(), dims: vec![weight.len()], data: weight },
                ParamView { name: "vis.bias".into(), dims: vec![1], data: std::slice::from_ref(bias) },
            ],
            VisibilityParams::Hierarchical(h) => {
                let mut out = vec![
                    ParamView { name: "vis.gain".into(), dims: vec![h.gain.len()], data: &h.gain[..] },
                    ParamView { name: "vis.bias".into(), dims: vec![h.bias.len()], data: &h.bias[..] },
                ];
                for (l, w) in h.inter.iter().enumerate() {
                    out.push(ParamView {
                        name: format!("vis.inter{}", l + 1),
                        dims: vec![h.levels[l].len(), h.levels[l + 1].len()],
                        data: w,
                    });
                }
                out.push(ParamView { name: "vis.readout".into(), dims: vec![h.readout.len()], data: &h.readout });
                out.push(ParamView {
                    name: "vis.readout_bias".into(),
                    dims: vec![1],
                    data: std::slice::from_ref(&h.readout_bias),
                });
                out
            }
        }
    }

    pub fn params_mut(&mut self) -> Vec<ParamViewMut<'_, T>> {
        match self {
            VisibilityParams::Logistic { weight, bias } => vec![
                ParamViewMut { name: "vis.weight".into(), dims: vec![weight.len()], data: weight },
                ParamViewMut { name: "vis.bias".into(), dims: vec![1], data: std::slice::from_mut(bias) },
            ],
            VisibilityParams::Hierarchical(h) => {
                let dims: Vec<Vec<usize>> = h.levels.windows(2).map(|w| vec![w[0].len(), w[1].len()]).collect();
                let mut out = vec![
                    ParamViewMut { name: "vis.gain".into(), dims: vec![h.gain.len()], data: &mut h.gain[..] },
                    ParamViewMut { name: "vis.bias".into(), dims: vec![h.bias.len()], data: &mut h.bias[..] },
                ];
                for (l, (w, d)) in h.inter.iter_mut().zip(dims).enumerate() {
                    out.push(ParamViewMut { name: format!("vis.inter{}", l + 1), dims: d, data: w });
                }
                out.push(ParamViewMut {
                    name: "vis.readout".into(),
                    dims: vec![h.readout.len()],
                    data: &mut h.readout,
                });
                out.push(ParamViewMut {
                    name: "vis.readout_bias".into(),
                    dims: vec![1],
                    data: std::slice::from_mut(&mut h.readout_bias),
                });
                out
            }
        }
    }
}

/// Output logit and cache; `ŷ = σ(logit)`.
pub fn visibility_logit<T: Real>(scores: &[T], params: &VisibilityParams<T>) -> Result<(T, VisibilityCache<T>)> {
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::Evaluation(format!("part score {} is not finite", i + 1)));
    }
    match params {
        VisibilityParams::Logistic { weight, bias } => {
            if weight.len() != scores.len() {
                return Err(Error::arg(format!("{} scores for {} weights", scores.len(), weight.len())));
            }
            let logit = weight.iter().zip(scores).fold(*bias, |acc, (&w, &s)| acc + w * s);
            let y_hat = sigmoid(logit);
            Ok((logit, VisibilityCache::Logistic { scores: scores.to_vec(), y_hat }))
        }
        VisibilityParams::Hierarchical(h) => {
            if h.gain.len() != scores.len() {
                return Err(Error::arg(format!("{} scores for {} hidden units", scores.len(), h.gain.len())));
            }
            let mut hidden: Vec<Vec<T>> = Vec::with_capacity(h.levels.len());
            for (l, parts) in h.levels.iter().enumerate() {
                let units: Vec<T> = parts
                    .iter()
                    .enumerate()
                    .map(|(j, &p)| {
                        let mut a = h.gain[p] * scores[p] + h.bias[p];
                        if l > 0 {
                            let prev = &hidden[l - 1];
                            let w = &h.inter[l - 1];
                            for (i, &hp) in prev.iter().enumerate() {
                                a = a + hp * w[i * parts.len() + j];
                            }
                        }
                        sigmoid(a)
                    })
                    .collect();
                hidden.push(units);
            }
            let top = hidden.last().expect("at least one level");
            let logit = top.iter().zip(&h.readout).fold(h.readout_bias, |acc, (&a, &r)| acc + a * r);
            let y_hat = sigmoid(logit);
            Ok((logit, VisibilityCache::Hierarchical { scores: scores.to_vec(), hidden, y_hat }))
        }
    }
}

pub fn visibility_forward<T: Real>(scores: &[T], params: &VisibilityParams<T>) -> Result<(T, VisibilityCache<T>)> {
    let (_, cache) = visibility_logit(scores, params)?;
    Ok((*cache.y_hat(), cache))
}

/// Backward pass from the output logit. Accumulates into `grad` and
/// `dscores`.
pub fn visibility_backward_logit<T: Real>(
    dlogit: T,
    cache: &VisibilityCache<T>,
    params: &VisibilityParams<T>,
    grad: &mut VisibilityParams<T>,
    dscores: &mut [T],
) -> Result<()> {
    match (cache, params, grad) {
        (
            VisibilityCache::Logistic { scores, .. },
            VisibilityParams::Logistic { weight, .. },
            VisibilityParams::Logistic { weight: gw, bias: gb },
        ) => {
            for ((g, &s), (&w, ds)) in gw.iter_mut().zip(scores).zip(weight.iter().zip(dscores.iter_mut())) {
                *g = *g + dlogit * s;
                *ds = *ds + dlogit * w;
            }
            *gb = *gb + dlogit;
            Ok(())
        }
        (
            VisibilityCache::Hierarchical { scores, hidden, .. },
            VisibilityParams::Hierarchical(h),
            VisibilityParams::Hierarchical(g),
        ) => {
            let last = h.levels.len() - 1;
            let mut dh: Vec<T> = h.readout.iter().map(|&r| dlogit * r).collect();
            for (gr, &a) in g.readout.iter_mut().zip(&hidden[last]) {
                *gr = *gr + dlogit * a;
            }
            g.readout_bias = g.readout_bias + dlogit;
            for l in (0..=last).rev() {
                let parts = &h.levels[l];
                let mut dprev = if l > 0 { vec![T::zero(); h.levels[l - 1].len()] } else { Vec::new() };
                for (j, &p) in parts.iter().enumerate() {
                    let a = hidden[l][j];
                    let da = dh[j] * a * (T::one() - a);
                    g.gain[p] = g.gain[p] + da * scores[p];
                    g.bias[p] = g.bias[p] + da;
                    dscores[p] = dscores[p] + da * h.gain[p];
                    if l > 0 {
                        let w = &h.inter[l - 1];
                        let gw = &mut g.inter[l - 1];
                        for (i, &hp) in hidden[l - 1].iter().enumerate() {
                            let k = i * parts.len() + j;
                            gw[k] = gw[k] + da * hp;
                            dprev[i] = dprev[i] + da * w[k];
                        }
                    }
                }
                dh = dprev;
            }
            Ok(())
        }
        _ => Err(Error::Internal("visibility cache does not match the parameter mode".into())),
    }
}

/// Gradients of `ŷ`-space upstream `dL/dŷ` with respect to the visibility
/// parameters and the eight scores.
pub fn visibility_backward<T: Real>(
    upstream: T,
    cache: &VisibilityCache<T>,
    params: &VisibilityParams<T>,
) -> Result<(VisibilityParams<T>, Vec<T>)> {
    let y = *cache.y_hat();
    let dlogit = upstream * y * (T::one() - y);
    let mut grad = params.zeros_like();
    let n = match cache {
        VisibilityCache::Logistic { scores, .. } | VisibilityCache::Hierarchical { scores, .. } => scores.len(),
    };
    let mut dscores = vec![T::zero(); n];
    visibility_backward_logit(dlogit, cache, params, &mut grad, &mut dscores)?;
    Ok((grad, dscores))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::deformation::default_part_layout;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn hier(seed: u64) -> VisibilityParams<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = VisibilityParams::hierarchical(&default_part_layout(), &mut rng).unwrap();
        if let VisibilityParams::Hierarchical(h) = &mut p {
            for (i, b) in h.bias.iter_mut().enumerate() {
                *b = 0.1 * i as f64 - 0.3;
            }
            h.readout_bias = 0.2;
        }
        p
    }

    #[test]
    fn default_levels() {
        assert_eq!(level_groups(&default_part_layout()), vec![vec![0, 1, 4, 5], vec![2, 6], vec![3, 7]]);
    }

    #[test]
    fn zero_parameters_give_half() {
        let s = [3.0, -1.0, 0.5, 2.0, 7.0, -4.0, 0.0, 1.0];
        let lg = VisibilityParams::Logistic { weight: vec![0.0; 8], bias: 0.0 };
        assert_eq!(visibility_forward(&s, &lg).unwrap().0, 0.5);
        let h = hier(1).zeros_like();
        let (y, cache) = visibility_forward(&s, &h).unwrap();
        assert_eq!(y, 0.5);
        if let VisibilityCache::Hierarchical { hidden, .. } = cache {
            assert!(hidden.iter().flatten().all(|&a| a == 0.5));
        }
    }

    #[test]
    fn logistic_reference_value() {
        let mut w = vec![0.0; 8];
        w[0] = 1.0;
        let p = VisibilityParams::Logistic { weight: w, bias: 0.0 };
        let mut s = [0.0; 8];
        s[0] = 3.0;
        let (y, _) = visibility_forward(&s, &p).unwrap();
        assert!((y - 1.0 / (1.0 + (-3.0f64).exp())).abs() < 1e-15);
        assert!((y - 0.9526).abs() < 1e-4);
    }

    #[test]
    fn non_finite_score_rejected() {
        let mut s = [0.0; 8];
        s[3] = f64::NAN;
        assert!(matches!(visibility_forward(&s, &hier(2)), Err(Error::Evaluation(_))));
    }

    #[test]
    fn zero_upstream_zero_gradients() {
        let s = [0.3, -1.0, 0.5, 2.0, 0.7, -0.4, 0.0, 1.0];
        let p = hier(3);
        let (_, cache) = visibility_forward(&s, &p).unwrap();
        let (g, ds) = visibility_backward(0.0, &cache, &p).unwrap();
        assert!(g.params().iter().all(|v| v.data.iter().all(|&x| x == 0.0)));
        assert!(ds.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn logistic_score_gradient_identity() {
        let w: Vec<f64> = (0..8).map(|i| 0.1 * i as f64 - 0.35).collect();
        let p = VisibilityParams::Logistic { weight: w.clone(), bias: 0.4 };
        let s = [0.3, -1.0, 0.5, 2.0, 0.7, -0.4, 0.0, 1.0];
        let (y, cache) = visibility_forward(&s, &p).unwrap();
        let up = -1.7;
        let (_, ds) = visibility_backward(up, &cache, &p).unwrap();
        for j in 0..8 {
            assert!((ds[j] - up * y * (1.0 - y) * w[j]).abs() < 1e-15);
        }
    }

    #[test]
    fn mismatched_cache_is_internal_error() {
        let s = [0.0; 8];
        let lg = VisibilityParams::Logistic { weight: vec![0.1; 8], bias: 0.0 };
        let (_, cache) = visibility_forward(&s, &lg).unwrap();
        assert!(matches!(visibility_backward(1.0, &cache, &hier(1)), Err(Error::Internal(_))));
    }

    #[test]
    fn monotone_in_positive_weight() {
        let p = VisibilityParams::Logistic { weight: vec![0.5; 8], bias: -0.2 };
        let mut s = [0.1; 8];
        let (y0, _) = visibility_forward(&s, &p).unwrap();
        s[2] += 0.01;
        let (y1, _) = visibility_forward(&s, &p).unwrap();
        assert!(y1 > y0);
    }

    #[test]
    fn decoupled_hierarchy_is_per_part_logistic() {
        let mut p = hier(9);
        if let VisibilityParams::Hierarchical(h) = &mut p {
            h.inter.iter_mut().for_each(|w| w.iter_mut().for_each(|v| *v = 0.0));
        }
        let s = [0.3, -1.0, 0.5, 2.0, 0.7, -0.4, 0.0, 1.0];
        let (y, cache) = visibility_forward(&s, &p).unwrap();
        let VisibilityParams::Hierarchical(h) = &p else { unreachable!() };
        let VisibilityCache::Hierarchical { hidden, .. } = cache else { unreachable!() };
        for (l, parts) in h.levels.iter().enumerate() {
            for (j, &part) in parts.iter().enumerate() {
                let own = sigmoid(h.gain[part] * s[part] + h.bias[part]);
                assert!((hidden[l][j] - own).abs() < 1e-15);
            }
        }
        let top: f64 = h.levels[2]
            .iter()
            .zip(&h.readout)
            .map(|(&part, &r)| r * sigmoid(h.gain[part] * s[part] + h.bias[part]))
            .sum();
        assert!((y - sigmoid(top + h.readout_bias)).abs() < 1e-15);
    }
}
