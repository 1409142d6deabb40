//! AdamW with global-norm clipping and the warm-up + cosine schedule.

use candle_core::backprop::GradStore;
use candle_core::{Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamStore;

/// Optimiser and schedule settings for one training stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub steps: usize,
    pub batch: usize,
    pub peak_lr: f64,
    pub final_lr: f64,
    pub warmup_fraction: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            batch: 8,
            peak_lr: 1e-4,
            final_lr: 1e-6,
            warmup_fraction: 0.1,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: 1.0,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("optimizer: {m}")));
        if !(self.warmup_fraction > 0.0 && self.warmup_fraction < 1.0) {
            return bad("warmup_fraction must lie in (0, 1)");
        }
        if !(self.final_lr < self.peak_lr) && self.peak_lr != 0.0 {
            return bad("final_lr must be below peak_lr");
        }
        if self.batch == 0 {
            return bad("batch must be positive");
        }
        if !(self.clip_norm > 0.0) {
            return bad("clip_norm must be positive");
        }
        Ok(())
    }

    /// Learning rate applied at `step` (0-based) of this stage.
    pub fn lr_at(&self, step: usize) -> Result<f64> {
        if self.peak_lr == 0.0 {
            return Ok(0.0);
        }
        lr_schedule(step, self.steps, self.peak_lr, self.final_lr, self.warmup_fraction)
    }
}

/// Linear warm-up from 0 to `peak_lr` over the first
/// `warmup_fraction * total_steps` steps, then cosine decay reaching
/// `final_lr` at `total_steps`.
pub fn lr_schedule(
    step: usize,
    total_steps: usize,
    peak_lr: f64,
    final_lr: f64,
    warmup_fraction: f64,
) -> Result<f64> {
    if !(warmup_fraction > 0.0 && warmup_fraction < 1.0) {
        return Err(Error::Config("warmup_fraction must lie in (0, 1)".into()));
    }
    if !(final_lr < peak_lr) {
        return Err(Error::Config("final_lr must be below peak_lr".into()));
    }
    if total_steps == 0 || step > total_steps {
        return Err(Error::Config(format!("step {step} outside 0..={total_steps}")));
    }
    let warmup = warmup_fraction * total_steps as f64;
    let s = step as f64;
    if s <= warmup {
        return Ok(peak_lr * (s / warmup));
    }
    let progress = (s - warmup) / (total_steps as f64 - warmup);
    Ok(final_lr + (peak_lr - final_lr) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
}

/// Scales every gradient so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut GradStore, vars: &[Var], max_norm: f64) -> Result<f64> {
    let mut total = 0.0;
    for v in vars {
        if let Some(g) = grads.get(v.as_tensor()) {
            total += g.sqr()?.sum_all()?.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?;
        }
    }
    let norm = total.sqrt();
    if norm > max_norm {
        let k = max_norm / (norm + 1e-6);
        for v in vars {
            if let Some(g) = grads.remove(v.as_tensor()) {
                grads.insert(v.as_tensor(), (g * k)?);
            }
        }
    }
    Ok(norm)
}

/// Decoupled-weight-decay Adam whose moment estimates can be saved and
/// restored by parameter name.
#[derive(Debug)]
pub struct AdamW {
    slots: Vec<Slot>,
    step_t: usize,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
}

#[derive(Debug)]
struct Slot {
    name: String,
    var: Var,
    m: Tensor,
    v: Tensor,
}

impl AdamW {
    pub fn new(params: &ParamStore, cfg: &OptimConfig) -> Result<Self> {
        let slots = params
            .iter()
            .map(|(name, var)| {
                let z = var.as_tensor().zeros_like()?;
                Ok(Slot {
                    name: name.clone(),
                    var: var.clone(),
                    m: z.clone(),
                    v: z,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            slots,
            step_t: 0,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            weight_decay: cfg.weight_decay,
        })
    }

    pub fn steps_taken(&self) -> usize {
        self.step_t
    }

    pub fn vars(&self) -> Vec<Var> {
        self.slots.iter().map(|s| s.var.clone()).collect()
    }

    pub fn step(&mut self, grads: &GradStore, lr: f64) -> Result<()> {
        self.step_t += 1;
        let b1 = self.beta1;
        let b2 = self.beta2;
        let c1 = 1.0 / (1.0 - b1.powi(self.step_t as i32));
        let c2 = 1.0 / (1.0 - b2.powi(self.step_t as i32));
        for slot in &mut self.slots {
            let Some(g) = grads.get(slot.var.as_tensor()) else {
                continue;
            };
            let g = g.detach();
            let m = ((&slot.m * b1)? + (&g * (1.0 - b1))?)?.detach();
            let v = ((&slot.v * b2)? + (g.sqr()? * (1.0 - b2))?)?.detach();
            let update = ((&m * c1)? / ((&v * c2)?.sqrt()? + self.eps)?)?;
            let theta = (slot.var.as_tensor().detach() * (1.0 - lr * self.weight_decay))?;
            slot.var.set(&(theta - (update * lr)?)?)?;
            slot.m = m;
            slot.v = v;
        }
        Ok(())
    }

    /// Moment tensors as `("m/<name>", ..)` and `("v/<name>", ..)` pairs.
    pub fn state(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::with_capacity(2 * self.slots.len());
        for s in &self.slots {
            out.push((format!("m/{}", s.name), s.m.clone()));
            out.push((format!("v/{}", s.name), s.v.clone()));
        }
        out
    }

    pub fn load_state(&mut self, tensors: &[(String, Tensor)], steps_taken: usize) -> Result<()> {
        for slot in &mut self.slots {
            let find = |key: String| {
                tensors
                    .iter()
                    .find(|(k, _)| *k == key)
                    .map(|(_, t)| t.clone())
                    .ok_or_else(|| Error::Shape(format!("optimizer state lacks {key}")))
            };
            slot.m = find(format!("m/{}", slot.name))?.to_dtype(slot.var.dtype())?;
            slot.v = find(format!("v/{}", slot.name))?.to_dtype(slot.var.dtype())?;
        }
        self.step_t = steps_taken;
        Ok(())
    }
}
