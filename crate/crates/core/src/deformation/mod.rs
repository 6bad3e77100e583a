//! Part filters and the deformation layer.
//!
//! Each of the eight part filters is cross-correlated with the pooled
//! 64×19×5 features to give a part detection map `M_p`. The deformation layer
//! adds weighted deformation maps and global-max-pools the sum into the part
//! score `s_p`. Gradients flow only through the argmax cell.

mod layout;
mod maps;

use std::fmt;
use std::str::FromStr;

use rand::Rng;

pub use layout::{default_part_layout, validate_layout, PartSpec, NUM_LEVELS, NUM_PARTS, PART_SPACE};
pub use maps::{
    deformation_backward, expand_quadratic, part_score, quadratic_basis, summed_map, DeformationBasis, Map2,
    QuadraticExpansion, DEGENERATE_COEFF,
};

use crate::error::{Error, Result};
use crate::nn::{conv2d_valid, uniform_init, xavier_bound, FilterBank, ParamView, ParamViewMut, Tensor3};
use crate::real::Real;

/// Initial quadratic coefficients `(c1, c2, c3, c4)`.
pub const INITIAL_COEFFS: [f64; 4] = [-0.05, -0.05, 0.0, 0.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DeformationMode {
    /// Four predefined quadratic maps with learned weights `c1..c4`.
    #[default]
    Quadratic,
    /// A single fully learned deformation map per part (weight fixed to 1).
    LearnedMap,
}

impl fmt::Display for DeformationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DeformationMode::Quadratic => "quadratic",
            DeformationMode::LearnedMap => "learned_map",
        })
    }
}

impl FromStr for DeformationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quadratic" => Ok(DeformationMode::Quadratic),
            "learned_map" => Ok(DeformationMode::LearnedMap),
            _ => Err(Error::Config(format!("unknown deformation mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Deformation<T> {
    Quadratic([T; 4]),
    LearnedMap(Vec<T>),
}

/// Forward record of one part, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct PartForward<T> {
    pub summed: Map2<T>,
    pub score: T,
    pub loc: (usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartModel<T> {
    pub specs: Vec<PartSpec>,
    pub filters: Vec<FilterBank<T>>,
    pub deformations: Vec<Deformation<T>>,
    bases: Vec<DeformationBasis<T>>,
}

fn flip_rows<T: Real>(bank: &FilterBank<T>) -> FilterBank<T> {
    let mut out = bank.clone();
    for c in 0..bank.in_channels {
        for i in 0..bank.f_h {
            for j in 0..bank.f_w {
                let dst = (c * bank.f_h + i) * bank.f_w + j;
                out.weights[dst] = bank.weight(0, c, bank.f_h - 1 - i, j);
            }
        }
    }
    out
}

impl<T: Real> PartModel<T> {
    /// Random part filters; mirrored parts start as row-flipped copies of
    /// their source part.
    pub fn new<R: Rng + ?Sized>(
        specs: Vec<PartSpec>,
        mode: DeformationMode,
        in_channels: usize,
        rng: &mut R,
    ) -> Result<Self> {
        validate_layout(&specs)?;
        let mut filters: Vec<Option<FilterBank<T>>> = vec![None; specs.len()];
        for (i, s) in specs.iter().enumerate().filter(|(_, s)| s.mirror_of.is_none()) {
            let fan_in = in_channels * s.f_h * s.f_w;
            let bound = xavier_bound(fan_in, s.f_h * s.f_w);
            let w = uniform_init(rng, fan_in, bound);
            filters[i] = Some(FilterBank::new(1, in_channels, s.f_h, s.f_w, w, vec![T::zero()])?);
        }
        for (i, s) in specs.iter().enumerate() {
            if let Some(m) = s.mirror_of {
                let src = filters[m - 1].as_ref().expect("mirror source initialized");
                filters[i] = Some(flip_rows(src));
            }
        }
        let deformations = specs
            .iter()
            .map(|s| match mode {
                DeformationMode::Quadratic => Deformation::Quadratic(INITIAL_COEFFS.map(T::of)),
                DeformationMode::LearnedMap => {
                    let (h, w) = s.map_dims();
                    Deformation::LearnedMap(vec![T::zero(); h * w])
                }
            })
            .collect();
        Self::from_parts(specs, filters.into_iter().map(Option::unwrap).collect(), deformations)
    }

    pub fn from_parts(
        specs: Vec<PartSpec>,
        filters: Vec<FilterBank<T>>,
        deformations: Vec<Deformation<T>>,
    ) -> Result<Self> {
        validate_layout(&specs)?;
        if filters.len() != specs.len() || deformations.len() != specs.len() {
            return Err(Error::Config("part model needs one filter and deformation per part".into()));
        }
        let mut bases = Vec::with_capacity(specs.len());
        for ((s, f), d) in specs.iter().zip(&filters).zip(&deformations) {
            if (f.count, f.f_h, f.f_w) != (1, s.f_h, s.f_w) {
                return Err(Error::Config(format!("part {}: filter shape mismatch", s.part_id)));
            }
            let (h, w) = s.map_dims();
            if let Deformation::LearnedMap(m) = d {
                if m.len() != h * w {
                    return Err(Error::Config(format!("part {}: deformation map size", s.part_id)));
                }
            }
            bases.push(quadratic_basis(h, w, s.anchor)?);
        }
        Ok(PartModel { specs, filters, deformations, bases })
    }

    pub fn mode(&self) -> DeformationMode {
        match self.deformations.first() {
            Some(Deformation::LearnedMap(_)) => DeformationMode::LearnedMap,
            _ => DeformationMode::Quadratic,
        }
    }

    pub fn basis(&self, part: usize) -> &DeformationBasis<T> {
        &self.bases[part]
    }

    pub fn zeros_like(&self) -> Self {
        self.map(|_| T::zero())
    }

    pub fn map<U: Real>(&self, f: impl Fn(T) -> U + Copy) -> PartModel<U> {
        PartModel {
            specs: self.specs.clone(),
            filters: self.filters.iter().map(|b| b.map(f)).collect(),
            deformations: self
                .deformations
                .iter()
                .map(|d| match d {
                    Deformation::Quadratic(c) => Deformation::Quadratic(c.map(f)),
                    Deformation::LearnedMap(m) => Deformation::LearnedMap(m.iter().map(|&v| f(v)).collect()),
                })
                .collect(),
            bases: self
                .bases
                .iter()
                .map(|b| DeformationBasis {
                    anchor: b.anchor,
                    maps: b.maps.clone().map(|m| Map2 {
                        height: m.height,
                        width: m.width,
                        data: m.data.iter().map(|&v| U::of(v.as_f64())).collect(),
                    }),
                })
                .collect(),
        }
    }

    /// Projects `c1, c2` onto `≤ 0` so deformation stays a cost.
    pub fn project(&mut self) {
        for d in &mut self.deformations {
            if let Deformation::Quadratic(c) = d {
                c[0] = c[0].min(T::zero());
                c[1] = c[1].min(T::zero());
            }
        }
    }

    pub fn params(&self) -> Vec<ParamView<'_, T>> {
        let mut out = Vec::new();
        for (i, (f, d)) in self.filters.iter().zip(&self.deformations).enumerate() {
            let p = i + 1;
            out.push(ParamView {
                name: format!("part{p}.weight"),
                dims: vec![f.in_channels, f.f_h, f.f_w],
                data: &f.weights,
            });
            out.push(ParamView { name: format!("part{p}.bias"), dims: vec![1], data: &f.biases });
            match d {
                Deformation::Quadratic(c) => {
                    out.push(ParamView { name: format!("part{p}.deform"), dims: vec![4], data: c })
                }
                Deformation::LearnedMap(m) => {
                    let (h, w) = self.specs[i].map_dims();
                    out.push(ParamView { name: format!("part{p}.defmap"), dims: vec![h, w], data: m })
                }
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<ParamViewMut<'_, T>> {
        let mut out = Vec::new();
        for (i, (f, d)) in self.filters.iter_mut().zip(self.deformations.iter_mut()).enumerate() {
            let p = i + 1;
            let dims = vec![f.in_channels, f.f_h, f.f_w];
            out.push(ParamViewMut { name: format!("part{p}.weight"), dims, data: &mut f.weights });
            out.push(ParamViewMut { name: format!("part{p}.bias"), dims: vec![1], data: &mut f.biases });
            match d {
                Deformation::Quadratic(c) => {
                    out.push(ParamViewMut { name: format!("part{p}.deform"), dims: vec![4], data: c })
                }
                Deformation::LearnedMap(m) => {
                    let (h, w) = self.specs[i].map_dims();
                    out.push(ParamViewMut { name: format!("part{p}.defmap"), dims: vec![h, w], data: m })
                }
            }
        }
        out
    }

    fn check_features(features: &Tensor3<T>, in_channels: usize) -> Result<()> {
        let (c, h, w) = features.dims();
        if (h, w) != PART_SPACE || c != in_channels {
            return Err(Error::Config(format!(
                "part filters expect {in_channels}x{}x{} features, got {c}x{h}x{w}",
                PART_SPACE.0, PART_SPACE.1
            )));
        }
        Ok(())
    }

    /// The eight part detection maps `M_p`.
    pub fn detection_maps(&self, features: &Tensor3<T>) -> Result<Vec<Map2<T>>> {
        self.filters
            .iter()
            .map(|f| {
                Self::check_features(features, f.in_channels)?;
                let out = conv2d_valid(features, f)?;
                Map2::new(out.height(), out.width(), out.data().to_vec())
            })
            .collect()
    }

    pub fn summed(&self, part: usize, m: &Map2<T>) -> Result<Map2<T>> {
        match &self.deformations[part] {
            Deformation::Quadratic(c) => summed_map(m, c, &self.bases[part]),
            Deformation::LearnedMap(d) => {
                if d.len() != m.data.len() {
                    return Err(Error::arg("deformation map size mismatch"));
                }
                let data = m.data.iter().zip(d).map(|(&a, &b)| a + b).collect();
                Map2::new(m.height, m.width, data)
            }
        }
    }

    pub fn forward(&self, features: &Tensor3<T>) -> Result<Vec<PartForward<T>>> {
        let maps = self.detection_maps(features)?;
        maps.iter()
            .enumerate()
            .map(|(p, m)| {
                let summed = self.summed(p, m)?;
                let (score, loc) = part_score(&summed);
                Ok(PartForward { summed, score, loc })
            })
            .collect()
    }

    /// Accumulates parameter gradients into `grad` and feature gradients into
    /// `dfeatures`, given `ds_p` for every part.
    pub fn backward(
        &self,
        features: &Tensor3<T>,
        forward: &[PartForward<T>],
        dscores: &[T],
        grad: &mut PartModel<T>,
        dfeatures: &mut Tensor3<T>,
    ) -> Result<()> {
        if forward.len() != self.filters.len() || dscores.len() != self.filters.len() {
            return Err(Error::Internal("part backward: count mismatch".into()));
        }
        let (_, fh_total, fw_total) = features.dims();
        for p in 0..self.filters.len() {
            let ds = dscores[p];
            if ds == T::zero() {
                continue;
            }
            let (lx, ly) = forward[p].loc;
            let (dm, dc) = deformation_backward(ds, (lx, ly), &self.bases[p])?;
            match &mut grad.deformations[p] {
                Deformation::Quadratic(g) => {
                    for n in 0..4 {
                        g[n] = g[n] + dc[n];
                    }
                }
                Deformation::LearnedMap(g) => {
                    for (a, &b) in g.iter_mut().zip(&dm.data) {
                        *a = *a + b;
                    }
                }
            }
            let f = &self.filters[p];
            let gf = &mut grad.filters[p];
            gf.biases[0] = gf.biases[0] + ds;
            let feat = features.data();
            let dfeat = dfeatures.data_mut();
            for c in 0..f.in_channels {
                for i in 0..f.f_h {
                    let frow = (c * fh_total + lx + i) * fw_total + ly;
                    let wrow = (c * f.f_h + i) * f.f_w;
                    for j in 0..f.f_w {
                        gf.weights[wrow + j] = gf.weights[wrow + j] + ds * feat[frow + j];
                        dfeat[frow + j] = dfeat[frow + j] + ds * f.weights[wrow + j];
                    }
                }
            }
        }
        Ok(())
    }
}

pub fn scores<T: Real>(forward: &[PartForward<T>]) -> Vec<T> {
    forward.iter().map(|f| f.score).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model(mode: DeformationMode) -> PartModel<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        PartModel::new(default_part_layout(), mode, 64, &mut rng).unwrap()
    }

    #[test]
    fn detection_map_sizes() {
        let m = model(DeformationMode::Quadratic);
        let feats = Tensor3::<f64>::zeros(64, 19, 5);
        let maps = m.detection_maps(&feats).unwrap();
        assert_eq!(maps[0].dims(), (15, 3));
        assert_eq!(maps[2].dims(), (10, 2));
        assert_eq!(maps[3].dims(), (5, 1));
        assert!(m.detection_maps(&Tensor3::zeros(64, 18, 5)).is_err());
    }

    #[test]
    fn zero_features_give_bias() {
        let mut m = model(DeformationMode::Quadratic);
        m.filters[1].biases[0] = 0.75;
        let maps = m.detection_maps(&Tensor3::zeros(64, 19, 5)).unwrap();
        assert!(maps[1].data.iter().all(|&v| v == 0.75));
    }

    #[test]
    fn mirrored_init() {
        let m = model(DeformationMode::Quadratic);
        let (a, b) = (&m.filters[0], &m.filters[4]);
        assert_eq!(a.weight(0, 3, 0, 2), b.weight(0, 3, 4, 2));
        assert_eq!(a.weight(0, 63, 1, 0), b.weight(0, 63, 3, 0));
    }

    #[test]
    fn projection_clamps_positive_costs() {
        let mut m = model(DeformationMode::Quadratic);
        m.deformations[0] = Deformation::Quadratic([0.3, -0.1, 0.5, 0.5]);
        m.project();
        assert_eq!(m.deformations[0], Deformation::Quadratic([0.0, -0.1, 0.5, 0.5]));
    }

    #[test]
    fn learned_map_mode_groups() {
        let m = model(DeformationMode::LearnedMap);
        let names: Vec<String> = m.params().into_iter().map(|p| p.name).collect();
        assert!(names.contains(&"part4.defmap".to_string()));
        assert!(!names.iter().any(|n| n.ends_with(".deform")));
        assert_eq!(m.mode(), DeformationMode::LearnedMap);
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("learned_map".parse::<DeformationMode>().unwrap(), DeformationMode::LearnedMap);
        assert!("free".parse::<DeformationMode>().is_err());
    }
}
