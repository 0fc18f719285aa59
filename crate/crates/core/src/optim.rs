//! SGD with momentum, the sharpness-aware two-pass wrapper around it, and
//! the step learning-rate schedule.

use log::warn;

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::{Real, Tensor};

pub const DEFAULT_MOMENTUM: f64 = 0.9;
pub const DEFAULT_RHO: f64 = 0.05;
pub const DEFAULT_LR_STEP: usize = 10;
pub const DEFAULT_LR_DECAY: f64 = 0.1;

/// `base_lr · 0.1^⌊epoch/10⌋`.
pub fn lr_schedule(epoch: usize, base_lr: f64) -> f64 {
    step_lr(epoch, base_lr, DEFAULT_LR_STEP, DEFAULT_LR_DECAY)
}

/// `base_lr · decay^⌊epoch/step⌋`.
pub fn step_lr(epoch: usize, base_lr: f64, step: usize, decay: f64) -> f64 {
    base_lr * decay.powi((epoch / step.max(1)) as i32)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub base_lr: f64,
    pub momentum: f64,
    /// Ascent radius of the sharpness-aware step.
    pub rho: f64,
    pub sam: bool,
    pub lr_step: usize,
    pub lr_decay: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            base_lr: 1e-3,
            momentum: DEFAULT_MOMENTUM,
            rho: DEFAULT_RHO,
            sam: true,
            lr_step: DEFAULT_LR_STEP,
            lr_decay: DEFAULT_LR_DECAY,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        if !(self.rho >= 0.0) {
            return Err(Error::Config(format!("rho {} must be non-negative", self.rho)));
        }
        if !(self.base_lr > 0.0) || !self.base_lr.is_finite() {
            return Err(Error::Config(format!("base_lr {} must be positive", self.base_lr)));
        }
        if self.lr_step == 0 || !(self.lr_decay > 0.0) {
            return Err(Error::Config("lr_step and lr_decay must be positive".into()));
        }
        Ok(())
    }
}

/// Momentum buffers plus the scalar hyperparameters.
#[derive(Debug, Clone)]
pub struct OptimizerState<T> {
    pub config: OptimizerConfig,
    /// One buffer per parameter tensor, zero-initialized.
    pub velocity: Vec<Tensor<T>>,
    pub epoch: usize,
}

/// What one optimizer update did.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome<T> {
    /// Loss at the weights the step started from.
    pub loss: T,
    /// Forward-backward evaluations performed.
    pub passes: usize,
}

impl<T: Real> OptimizerState<T> {
    pub fn new(config: OptimizerConfig, params: &ParamStore<T>) -> Result<Self> {
        config.validate()?;
        let velocity = params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        Ok(OptimizerState { config, velocity, epoch: 0 })
    }

    pub fn lr(&self) -> f64 {
        step_lr(self.epoch, self.config.base_lr, self.config.lr_step, self.config.lr_decay)
    }

    /// `v ← μ·v + g; w ← w − lr·v` for every parameter, using stored grads.
    pub fn sgd_momentum_step(&mut self, params: &mut ParamStore<T>) -> Result<()> {
        if self.velocity.len() != params.len() {
            return Err(Error::Contract(format!(
                "optimizer tracks {} tensors, store has {}",
                self.velocity.len(),
                params.len()
            )));
        }
        let lr = T::lit(self.lr());
        let mu = T::lit(self.config.momentum);
        for (p, v) in params.iter_mut().zip(&mut self.velocity) {
            let g = p
                .grad
                .as_ref()
                .ok_or_else(|| Error::Contract(format!("no gradient for parameter {}", p.name)))?;
            for ((w, vel), &gi) in p.value.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
                *vel = mu * *vel + gi;
                *w -= lr * *vel;
            }
        }
        Ok(())
    }

    /// One update. `objective` must evaluate the loss at the store's current
    /// values and accumulate gradients into it; it is called once for plain
    /// SGD and twice (on the same batch) when SAM is enabled.
    pub fn step(
        &mut self,
        params: &mut ParamStore<T>,
        mut objective: impl FnMut(&mut ParamStore<T>) -> Result<T>,
    ) -> Result<StepOutcome<T>> {
        params.clear_grads();
        let loss = objective(params)?;
        if !self.config.sam {
            self.sgd_momentum_step(params)?;
            return Ok(StepOutcome { loss, passes: 1 });
        }
        let eps = sam_ascent(params, self.config.rho)?;
        let saved = eps.as_ref().map(|_| params.values());
        if let Some(eps) = &eps {
            for (p, e) in params.iter_mut().zip(eps) {
                p.value.add_assign(e)?;
            }
        }
        params.clear_grads();
        objective(params)?;
        if let Some(saved) = saved {
            params.set_values(saved)?;
        }
        self.sgd_momentum_step(params)?;
        Ok(StepOutcome { loss, passes: 2 })
    }
}

/// Global L2 norm of all stored gradients.
pub fn grad_norm<T: Real>(params: &ParamStore<T>) -> Result<f64> {
    let mut sq = 0.0f64;
    for p in params.iter() {
        let g = p
            .grad
            .as_ref()
            .ok_or_else(|| Error::Contract(format!("no gradient for parameter {}", p.name)))?;
        sq += g.data().iter().map(|v| v.to_f64_lossless().powi(2)).sum::<f64>();
    }
    Ok(sq.sqrt())
}

/// Ascent perturbation `ε = ρ·g / ‖g‖₂`, the norm taken jointly over every
/// parameter. Returns `None` (no perturbation) when `ρ = 0` or the gradient
/// vanishes.
pub fn sam_ascent<T: Real>(params: &ParamStore<T>, rho: f64) -> Result<Option<Vec<Tensor<T>>>> {
    let norm = grad_norm(params)?;
    if rho == 0.0 {
        return Ok(None);
    }
    if norm == 0.0 || !norm.is_finite() {
        warn!("gradient norm is {norm}; skipping sharpness-aware perturbation");
        return Ok(None);
    }
    let scale = rho / norm;
    Ok(Some(
        params
            .iter()
            .map(|p| {
                let g = p.grad.as_ref().expect("checked by grad_norm");
                Tensor::from_fn(g.shape(), |i| T::lit(g.data()[i].to_f64_lossless() * scale))
            })
            .collect(),
    ))
}
