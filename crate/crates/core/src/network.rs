//! The full detector network and its parameter set.
//!
//! ```text
//! 3×84×28 ─conv 9×9─▶ 64×76×20 ─tanh─▶ ─boxcar 4×4/4─▶ 64×19×5
//!   stage 1: linear head over the pooled features
//!   stage 2: 8 part filters ▶ deformation layer ▶ logistic over s_1..s_8
//!   stage 3: same parts ▶ visibility reasoning
//! ```

use std::fmt;

use rand::Rng;
use rayon::prelude::*;

use crate::deformation::{
    default_part_layout, Deformation, DeformationMode, PartForward, PartModel, PartSpec, NUM_PARTS,
};
use crate::error::{Error, Result};
use crate::image_io::{ChannelStack, STACK_H, STACK_W};
use crate::nn::checkpoint::{Checkpoint, ParamTensor};
use crate::nn::gradcheck::{grad_check as run_grad_check, GradCheckOptions, GradCheckReport, GradientProbe, Probe};
use crate::nn::{
    avg_pool_boxcar, avg_pool_boxcar_backward, bce_logit_grad, bce_loss, conv2d_valid_cols, conv2d_weight_grad,
    gabor_bank, im2col, sigmoid, tanh_inplace, uniform_init, xavier_bound, FilterBank, ParamSet, ParamView,
    ParamViewMut, Tensor3,
};
use crate::real::Real;
use crate::visibility::{
    visibility_backward_logit, visibility_logit, Hierarchy, VisibilityCache, VisibilityMode, VisibilityParams,
};

pub const CONV1_FILTERS: usize = 64;
pub const CONV1_SIZE: usize = 9;
pub const POOL: usize = 4;
pub const CONV1_OUT: (usize, usize) = (STACK_H - CONV1_SIZE + 1, STACK_W - CONV1_SIZE + 1);
pub const FEATURES: (usize, usize, usize) = (CONV1_FILTERS, CONV1_OUT.0 / POOL, CONV1_OUT.1 / POOL);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    One = 1,
    Two = 2,
    Three = 3,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", *self as u8)
    }
}

impl Stage {
    fn parse(s: &str) -> Result<Stage> {
        match s {
            "1" => Ok(Stage::One),
            "2" => Ok(Stage::Two),
            "3" => Ok(Stage::Three),
            _ => Err(Error::Checkpoint(format!("unknown stage {s:?}"))),
        }
    }
}

/// Stage-1 readout: one weight per pooled feature.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearHead<T> {
    pub weight: Vec<T>,
    pub bias: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    pub stage: Stage,
    pub conv1: FilterBank<T>,
    pub head: Option<LinearHead<T>>,
    pub parts: Option<PartModel<T>>,
    pub visibility: Option<VisibilityParams<T>>,
}

/// Everything the backward pass needs from one forward evaluation.
#[derive(Debug, Clone)]
pub struct SampleForward<T> {
    cols: Vec<T>,
    act1: Tensor3<T>,
    pub pooled: Tensor3<T>,
    pub parts: Vec<PartForward<T>>,
    vis: Option<VisibilityCache<T>>,
    pub logit: T,
    pub y_hat: T,
}

impl<T> SampleForward<T> {
    /// Argmax location of every part, flattened.
    pub fn route(&self) -> Vec<u32> {
        self.parts.iter().flat_map(|p| [p.loc.0 as u32, p.loc.1 as u32]).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchStats {
    pub loss: f64,
    pub accuracy: f64,
}

/// Part forwards (empty in stage 1), visibility cache and output logit.
type HeadOutput<T> = (Vec<PartForward<T>>, Option<VisibilityCache<T>>, T);

pub fn stack_tensor<T: Real>(stack: &ChannelStack) -> Tensor3<T> {
    let data = stack.as_slice().iter().map(|&v| T::of(v as f64)).collect();
    Tensor3::new(3, STACK_H, STACK_W, data).expect("stack dims")
}

impl<T: Real> Network<T> {
    /// Gabor-initialized first layer with a random linear head.
    pub fn stage1<R: Rng + ?Sized>(rng: &mut R) -> Result<Self> {
        let conv1 = gabor_bank(CONV1_FILTERS, CONV1_SIZE, CONV1_SIZE, 3)?;
        let n = FEATURES.0 * FEATURES.1 * FEATURES.2;
        let head = LinearHead { weight: uniform_init(rng, n, xavier_bound(n, 1)), bias: T::zero() };
        Ok(Network { stage: Stage::One, conv1, head: Some(head), parts: None, visibility: None })
    }

    /// Drops the stage-1 head and adds part filters, deformation and a
    /// logistic classifier over the part scores.
    pub fn into_stage2<R: Rng + ?Sized>(
        self,
        specs: Vec<PartSpec>,
        mode: DeformationMode,
        rng: &mut R,
    ) -> Result<Self> {
        if self.stage != Stage::One {
            return Err(Error::Config(format!("stage 2 starts from stage 1, not {}", self.stage)));
        }
        let parts = PartModel::new(specs, mode, CONV1_FILTERS, rng)?;
        let visibility = VisibilityParams::logistic(NUM_PARTS, rng);
        Ok(Network {
            stage: Stage::Two,
            conv1: self.conv1,
            head: None,
            parts: Some(parts),
            visibility: Some(visibility),
        })
    }

    /// Adds visibility reasoning. In logistic mode the stage-2 classifier
    /// is kept and fine-tuned.
    pub fn into_stage3<R: Rng + ?Sized>(self, mode: VisibilityMode, rng: &mut R) -> Result<Self> {
        if self.stage != Stage::Two {
            return Err(Error::Config(format!("stage 3 starts from stage 2, not {}", self.stage)));
        }
        let parts = self.parts.expect("stage 2 has parts");
        let visibility = match mode {
            VisibilityMode::Logistic => self.visibility.expect("stage 2 has a classifier"),
            VisibilityMode::Hierarchical => VisibilityParams::hierarchical(&parts.specs, rng)?,
        };
        Ok(Network {
            stage: Stage::Three,
            conv1: self.conv1,
            head: None,
            parts: Some(parts),
            visibility: Some(visibility),
        })
    }

    pub fn map<U: Real>(&self, f: impl Fn(T) -> U + Copy) -> Network<U> {
        Network {
            stage: self.stage,
            conv1: self.conv1.map(f),
            head: self
                .head
                .as_ref()
                .map(|h| LinearHead { weight: h.weight.iter().map(|&v| f(v)).collect(), bias: f(h.bias) }),
            parts: self.parts.as_ref().map(|p| p.map(f)),
            visibility: self.visibility.as_ref().map(|v| v.map(f)),
        }
    }

    pub fn cast<U: Real>(&self) -> Network<U> {
        self.map(|v| U::of(v.as_f64()))
    }

    pub fn zeros_like(&self) -> Self {
        self.map(|_| T::zero())
    }

    pub fn deformation_mode(&self) -> Option<DeformationMode> {
        self.parts.as_ref().map(|p| p.mode())
    }

    pub fn visibility_mode(&self) -> Option<VisibilityMode> {
        self.visibility.as_ref().map(|v| v.mode())
    }

    /// Pooled 64×19×5 features plus the intermediates kept for backward.
    fn features(&self, input: &Tensor3<T>) -> Result<(Vec<T>, Tensor3<T>, Tensor3<T>)> {
        if input.dims() != (3, STACK_H, STACK_W) {
            return Err(Error::arg(format!("network input must be 3x{STACK_H}x{STACK_W}, got {:?}", input.dims())));
        }
        let cols = im2col(input, CONV1_SIZE, CONV1_SIZE);
        let mut act1 = conv2d_valid_cols(&cols, CONV1_OUT.0, CONV1_OUT.1, &self.conv1);
        tanh_inplace(&mut act1);
        let pooled = avg_pool_boxcar(&act1, POOL, POOL)?;
        Ok((cols, act1, pooled))
    }

    fn head_forward(&self, pooled: &Tensor3<T>) -> Result<HeadOutput<T>> {
        match self.stage {
            Stage::One => {
                let head = self.head.as_ref().ok_or_else(|| Error::Internal("stage 1 without head".into()))?;
                let logit = head.weight.iter().zip(pooled.data()).fold(head.bias, |a, (&w, &x)| a + w * x);
                Ok((Vec::new(), None, logit))
            }
            Stage::Two | Stage::Three => {
                let parts = self.parts.as_ref().ok_or_else(|| Error::Internal("missing part model".into()))?;
                let vis = self.visibility.as_ref().ok_or_else(|| Error::Internal("missing classifier".into()))?;
                let fwd = parts.forward(pooled)?;
                let scores: Vec<T> = fwd.iter().map(|p| p.score).collect();
                let (logit, cache) = visibility_logit(&scores, vis)?;
                Ok((fwd, Some(cache), logit))
            }
        }
    }

    pub fn forward(&self, input: &Tensor3<T>) -> Result<SampleForward<T>> {
        let (cols, act1, pooled) = self.features(input)?;
        let (parts, vis, logit) = self.head_forward(&pooled)?;
        Ok(SampleForward { cols, act1, pooled, parts, vis, logit, y_hat: sigmoid(logit) })
    }

    /// Car probability for one window.
    pub fn predict(&self, stack: &ChannelStack) -> Result<T> {
        Ok(self.forward(&stack_tensor(stack))?.y_hat)
    }

    /// Accumulates `∂(dlogit·logit)/∂θ` into `grad`. The first-layer
    /// gradient is skipped when `with_conv1` is false.
    pub fn backward(&self, fwd: &SampleForward<T>, dlogit: T, grad: &mut Network<T>, with_conv1: bool) -> Result<()> {
        let (c, h, w) = FEATURES;
        let mut dpooled = Tensor3::zeros(c, h, w);
        match self.stage {
            Stage::One => {
                let head = self.head.as_ref().ok_or_else(|| Error::Internal("stage 1 without head".into()))?;
                let g = grad.head.as_mut().ok_or_else(|| Error::Internal("gradient shape".into()))?;
                for ((gw, &x), (&wv, d)) in
                    g.weight.iter_mut().zip(fwd.pooled.data()).zip(head.weight.iter().zip(dpooled.data_mut()))
                {
                    *gw = *gw + dlogit * x;
                    *d = dlogit * wv;
                }
                g.bias = g.bias + dlogit;
            }
            Stage::Two | Stage::Three => {
                let parts = self.parts.as_ref().expect("checked in forward");
                let vis = self.visibility.as_ref().expect("checked in forward");
                let cache = fwd.vis.as_ref().ok_or_else(|| Error::Internal("missing visibility cache".into()))?;
                let mut dscores = vec![T::zero(); parts.specs.len()];
                let gvis = grad.visibility.as_mut().ok_or_else(|| Error::Internal("gradient shape".into()))?;
                visibility_backward_logit(dlogit, cache, vis, gvis, &mut dscores)?;
                let gparts = grad.parts.as_mut().ok_or_else(|| Error::Internal("gradient shape".into()))?;
                parts.backward(&fwd.pooled, &fwd.parts, &dscores, gparts, &mut dpooled)?;
            }
        }
        if !with_conv1 {
            return Ok(());
        }
        let mut dz = avg_pool_boxcar_backward(&dpooled, fwd.act1.dims(), POOL, POOL);
        for (d, &a) in dz.data_mut().iter_mut().zip(fwd.act1.data()) {
            *d = *d * (T::one() - a * a);
        }
        conv2d_weight_grad(&fwd.cols, &dz, &mut grad.conv1);
        Ok(())
    }

    /// Mean BCE over the batch and its gradient. Samples are evaluated in
    /// parallel; the gradient is summed in sample order so the result does
    /// not depend on the thread count.
    pub fn loss_and_grad(
        &self,
        inputs: &[Tensor3<T>],
        labels: &[T],
        with_conv1: bool,
    ) -> Result<(BatchStats, Network<T>)> {
        if inputs.is_empty() || inputs.len() != labels.len() {
            return Err(Error::arg("batch must be non-empty with one label per sample"));
        }
        let n = T::of(inputs.len() as f64);
        let per_sample: Vec<Result<(T, bool, Network<T>)>> = inputs
            .par_iter()
            .zip(labels.par_iter())
            .map(|(x, &y)| {
                let fwd = self.forward(x)?;
                let mut g = self.zeros_like();
                self.backward(&fwd, bce_logit_grad(fwd.y_hat, y) / n, &mut g, with_conv1)?;
                let correct = (fwd.y_hat >= T::of(0.5)) == (y >= T::of(0.5));
                Ok((bce_loss(fwd.y_hat, y), correct, g))
            })
            .collect();
        let mut total = self.zeros_like();
        let mut loss = 0.0;
        let mut correct = 0usize;
        for r in per_sample {
            let (l, ok, g) = r?;
            loss += l.as_f64();
            correct += ok as usize;
            total.add_assign(&g);
        }
        let stats = BatchStats { loss: loss / inputs.len() as f64, accuracy: correct as f64 / inputs.len() as f64 };
        if !stats.loss.is_finite() {
            return Err(Error::Divergence(format!("non-finite batch loss {}", stats.loss)));
        }
        Ok((stats, total))
    }

    /// Forward-only loss and accuracy.
    pub fn evaluate(&self, inputs: &[Tensor3<T>], labels: &[T]) -> Result<BatchStats> {
        if inputs.is_empty() || inputs.len() != labels.len() {
            return Err(Error::arg("evaluation set must be non-empty with one label per sample"));
        }
        let outs: Vec<Result<(f64, bool)>> = inputs
            .par_iter()
            .zip(labels.par_iter())
            .map(|(x, &y)| {
                let y_hat = self.forward(x)?.y_hat;
                Ok((bce_loss(y_hat, y).as_f64(), (y_hat >= T::of(0.5)) == (y >= T::of(0.5))))
            })
            .collect();
        let mut loss = 0.0;
        let mut correct = 0usize;
        for o in outs {
            let (l, ok) = o?;
            loss += l;
            correct += ok as usize;
        }
        Ok(BatchStats { loss: loss / inputs.len() as f64, accuracy: correct as f64 / inputs.len() as f64 })
    }

    fn add_assign(&mut self, other: &Network<T>) {
        for (a, b) in self.params_mut().into_iter().zip(other.params()) {
            for (x, &y) in a.data.iter_mut().zip(b.data) {
                *x = *x + y;
            }
        }
    }

    /// Structure implied by checkpoint metadata, all parameters zero.
    fn skeleton(meta: &Checkpoint) -> Result<Self> {
        let get = |k: &str| meta.meta_value(k).ok_or_else(|| Error::Checkpoint(format!("missing metadata {k}")));
        let stage = Stage::parse(get("stage")?)?;
        let conv1 = FilterBank::zeros(CONV1_FILTERS, 3, CONV1_SIZE, CONV1_SIZE);
        if stage == Stage::One {
            let n = FEATURES.0 * FEATURES.1 * FEATURES.2;
            return Ok(Network {
                stage,
                conv1,
                head: Some(LinearHead { weight: vec![T::zero(); n], bias: T::zero() }),
                parts: None,
                visibility: None,
            });
        }
        let specs =
            (1..=NUM_PARTS).map(|p| PartSpec::parse(p, get(&format!("part.{p}"))?)).collect::<Result<Vec<_>>>()?;
        let mode: DeformationMode = get("deformation_mode")?.parse()?;
        let vis_mode: VisibilityMode = get("visibility_mode")?.parse()?;
        let filters = specs.iter().map(|s| FilterBank::zeros(1, CONV1_FILTERS, s.f_h, s.f_w)).collect();
        let deformations = specs
            .iter()
            .map(|s| match mode {
                DeformationMode::Quadratic => Deformation::Quadratic([T::zero(); 4]),
                DeformationMode::LearnedMap => {
                    let (h, w) = s.map_dims();
                    Deformation::LearnedMap(vec![T::zero(); h * w])
                }
            })
            .collect();
        let visibility = match vis_mode {
            VisibilityMode::Logistic => {
                VisibilityParams::Logistic { weight: vec![T::zero(); NUM_PARTS], bias: T::zero() }
            }
            VisibilityMode::Hierarchical => {
                let levels = crate::visibility::level_groups(&specs);
                VisibilityParams::Hierarchical(Hierarchy {
                    inter: levels.windows(2).map(|w| vec![T::zero(); w[0].len() * w[1].len()]).collect(),
                    readout: vec![T::zero(); levels.last().map_or(0, |l| l.len())],
                    levels,
                    gain: vec![T::zero(); NUM_PARTS],
                    bias: vec![T::zero(); NUM_PARTS],
                    readout_bias: T::zero(),
                })
            }
        };
        Ok(Network {
            stage,
            conv1,
            head: None,
            parts: Some(PartModel::from_parts(specs, filters, deformations)?),
            visibility: Some(visibility),
        })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut meta =
            vec![("format".to_string(), "jointdet".to_string()), ("stage".to_string(), self.stage.to_string())];
        if let (Some(parts), Some(vis)) = (&self.parts, &self.visibility) {
            meta.push(("deformation_mode".into(), parts.mode().to_string()));
            meta.push(("visibility_mode".into(), vis.mode().to_string()));
            for s in &parts.specs {
                meta.push((format!("part.{}", s.part_id), s.to_string()));
            }
        }
        let groups = self
            .params()
            .into_iter()
            .map(|v| ParamTensor {
                name: v.name,
                dims: v.dims,
                data: v.data.iter().map(|x| x.as_f64() as f32).collect(),
            })
            .collect();
        Checkpoint { meta, groups }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let mut net = Self::skeleton(ck)?;
        {
            let views = net.params_mut();
            if views.len() != ck.groups.len() {
                return Err(Error::Checkpoint(format!(
                    "checkpoint has {} groups, network expects {}",
                    ck.groups.len(),
                    views.len()
                )));
            }
            for (v, g) in views.into_iter().zip(&ck.groups) {
                if v.name != g.name || v.dims != g.dims {
                    return Err(Error::Checkpoint(format!(
                        "group {} {:?} does not match expected {} {:?}",
                        g.name, g.dims, v.name, v.dims
                    )));
                }
                for (dst, &src) in v.data.iter_mut().zip(&g.data) {
                    *dst = T::of(src as f64);
                }
            }
        }
        Ok(net)
    }
}

impl<T: Real> ParamSet<T> for Network<T> {
    fn params(&self) -> Vec<ParamView<'_, T>> {
        let c = &self.conv1;
        let mut out = vec![
            ParamView {
                name: "conv1.weight".into(),
                dims: vec![c.count, c.in_channels, c.f_h, c.f_w],
                data: &c.weights[..],
            },
            ParamView { name: "conv1.bias".into(), dims: vec![c.count], data: &c.biases[..] },
        ];
        if let Some(h) = &self.head {
            out.push(ParamView {
                name: "head.weight".into(),
                dims: vec![FEATURES.0, FEATURES.1, FEATURES.2],
                data: &h.weight,
            });
            out.push(ParamView { name: "head.bias".into(), dims: vec![1], data: std::slice::from_ref(&h.bias) });
        }
        if let Some(p) = &self.parts {
            out.extend(p.params());
        }
        if let Some(v) = &self.visibility {
            out.extend(v.params());
        }
        out
    }

    fn params_mut(&mut self) -> Vec<ParamViewMut<'_, T>> {
        let c = &mut self.conv1;
        let dims = vec![c.count, c.in_channels, c.f_h, c.f_w];
        let count = c.count;
        let mut out = vec![
            ParamViewMut { name: "conv1.weight".into(), dims, data: &mut c.weights[..] },
            ParamViewMut { name: "conv1.bias".into(), dims: vec![count], data: &mut c.biases[..] },
        ];
        if let Some(h) = &mut self.head {
            out.push(ParamViewMut {
                name: "head.weight".into(),
                dims: vec![FEATURES.0, FEATURES.1, FEATURES.2],
                data: &mut h.weight,
            });
            out.push(ParamViewMut { name: "head.bias".into(), dims: vec![1], data: std::slice::from_mut(&mut h.bias) });
        }
        if let Some(p) = &mut self.parts {
            out.extend(p.params_mut());
        }
        if let Some(v) = &mut self.visibility {
            out.extend(v.params_mut());
        }
        out
    }

    fn project(&mut self) {
        if let Some(p) = &mut self.parts {
            p.project();
        }
    }
}

/// Default stage-2 upgrade with the standard part layout.
pub fn default_stage2<T: Real, R: Rng + ?Sized>(net: Network<T>, rng: &mut R) -> Result<Network<T>> {
    net.into_stage2(default_part_layout(), DeformationMode::Quadratic, rng)
}

/// Finite-difference view of a network on a fixed batch. Pooled features
/// are cached and recomputed only when a first-layer scalar changes.
pub struct NetworkProbe {
    net: Network<f64>,
    inputs: Vec<Tensor3<f64>>,
    labels: Vec<f64>,
    pooled: Vec<Tensor3<f64>>,
    base_conv1: FilterBank<f64>,
    conv1_dirty: bool,
}

impl NetworkProbe {
    pub fn new(net: Network<f64>, inputs: Vec<Tensor3<f64>>, labels: Vec<f64>) -> Result<Self> {
        if inputs.is_empty() || inputs.len() != labels.len() {
            return Err(Error::arg("gradient check needs a non-empty labelled batch"));
        }
        let pooled = inputs.iter().map(|x| net.features(x).map(|f| f.2)).collect::<Result<_>>()?;
        Ok(NetworkProbe { base_conv1: net.conv1.clone(), net, inputs, labels, pooled, conv1_dirty: false })
    }

    pub fn network(&self) -> &Network<f64> {
        &self.net
    }
}

impl GradientProbe for NetworkProbe {
    fn groups(&self) -> Vec<(String, usize)> {
        self.net.params().into_iter().map(|v| (v.name, v.data.len())).collect()
    }

    fn get(&self, group: usize, idx: usize) -> f64 {
        self.net.params()[group].data[idx]
    }

    fn set(&mut self, group: usize, idx: usize, value: f64) {
        let mut views = self.net.params_mut();
        let first_layer = views[group].name.starts_with("conv1.");
        views[group].data[idx] = value;
        if first_layer {
            self.conv1_dirty = self.net.conv1 != self.base_conv1;
        }
    }

    fn probe(&self) -> Result<Probe> {
        let n = self.inputs.len() as f64;
        let mut loss = 0.0;
        let mut route = Vec::new();
        for (i, (x, &y)) in self.inputs.iter().zip(&self.labels).enumerate() {
            let fresh;
            let pooled = if self.conv1_dirty {
                fresh = self.net.features(x)?.2;
                &fresh
            } else {
                &self.pooled[i]
            };
            let (parts, _, logit) = self.net.head_forward(pooled)?;
            loss += bce_loss(sigmoid(logit), y);
            route.extend(parts.iter().flat_map(|p| [p.loc.0 as u32, p.loc.1 as u32]));
        }
        Ok(Probe { loss: loss / n, route })
    }

    fn analytic(&self) -> Result<Vec<Vec<f64>>> {
        let (_, grad) = self.net.loss_and_grad(&self.inputs, &self.labels, true)?;
        Ok(grad.params().into_iter().map(|v| v.data.to_vec()).collect())
    }

    fn check_all(&self, group: usize) -> bool {
        let name = &self.net.params()[group].name;
        name.ends_with(".deform")
    }
}

/// Checks every parameter group of `net` (evaluated in `f64`) against
/// central differences on the given batch.
pub fn grad_check(
    net: &Network<f64>,
    stacks: &[&ChannelStack],
    labels: &[f64],
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let inputs = stacks.iter().map(|s| stack_tensor(s)).collect();
    let mut probe = NetworkProbe::new(net.clone(), inputs, labels.to_vec())?;
    run_grad_check(&mut probe, opts)
}
