use super::ParamSet;
use crate::error::{Error, Result};
use crate::real::Real;

/// SGD with classical momentum: `v ← μ·v − lr·g; p ← p + v`.
#[derive(Debug, Clone)]
pub struct Sgd<T> {
    lr: T,
    momentum: T,
    velocity: Vec<Vec<T>>,
    frozen: Vec<String>,
}

impl<T: Real> Sgd<T> {
    pub fn new(lr: f64, momentum: f64) -> Result<Self> {
        if lr <= 0.0 || !lr.is_finite() {
            return Err(Error::arg(format!("learning rate must be positive, got {lr}")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::arg(format!("momentum must lie in [0, 1), got {momentum}")));
        }
        Ok(Sgd { lr: T::of(lr), momentum: T::of(momentum), velocity: Vec::new(), frozen: Vec::new() })
    }

    /// Groups whose name starts with any of the prefixes are left untouched.
    pub fn with_frozen(mut self, prefixes: Vec<String>) -> Self {
        self.frozen = prefixes;
        self
    }

    fn is_frozen(&self, name: &str) -> bool {
        self.frozen.iter().any(|p| name.starts_with(p.as_str()))
    }

    pub fn step<P: ParamSet<T>>(&mut self, params: &mut P, grads: &P) -> Result<()> {
        let grads = grads.params();
        for g in &grads {
            if let Some(pos) = g.data.iter().position(|v| !v.is_finite()) {
                return Err(Error::Divergence(format!("non-finite gradient in {}[{pos}]", g.name)));
            }
        }
        let mut views = params.params_mut();
        if views.len() != grads.len() {
            return Err(Error::Internal("gradient shape does not match parameters".into()));
        }
        if self.velocity.is_empty() {
            self.velocity = views.iter().map(|v| vec![T::zero(); v.data.len()]).collect();
        }
        for ((p, g), v) in views.iter_mut().zip(&grads).zip(self.velocity.iter_mut()) {
            if p.name != g.name || p.data.len() != g.data.len() || v.len() != p.data.len() {
                return Err(Error::Internal(format!("group mismatch at {}", p.name)));
            }
            if self.frozen.iter().any(|f| p.name.starts_with(f.as_str())) {
                continue;
            }
            for ((w, &d), vel) in p.data.iter_mut().zip(g.data).zip(v.iter_mut()) {
                *vel = self.momentum * *vel - self.lr * d;
                *w = *w + *vel;
            }
        }
        drop(views);
        params.project();
        Ok(())
    }

    pub fn frozen_groups<P: ParamSet<T>>(&self, params: &P) -> Vec<String> {
        params.params().into_iter().map(|v| v.name).filter(|n| self.is_frozen(n)).collect()
    }
}
