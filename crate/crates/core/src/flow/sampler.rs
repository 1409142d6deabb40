//! Fixed-step Euler integration of a velocity field from t = 0 to t = 1.

use candle_core::Tensor;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::flow::backbone::Backbone;
use crate::flow::condition::ConditionBundle;
use crate::flow::norm::NormStats;
use crate::mel::MelSpectrogram;
use crate::nn;

pub trait VelocityField {
    fn velocity(&self, x: &Tensor, t: f64) -> Result<Tensor>;
}

impl<F> VelocityField for F
where
    F: Fn(&Tensor, f64) -> Result<Tensor>,
{
    fn velocity(&self, x: &Tensor, t: f64) -> Result<Tensor> {
        self(x, t)
    }
}

/// `x <- x + dt * v(x, k * dt)` for `k = 0 .. n_steps`.
pub fn euler_integrate(field: &dyn VelocityField, x0: Tensor, n_steps: usize) -> Result<Tensor> {
    if n_steps < 1 {
        return Err(Error::Config("n_steps must be at least 1".into()));
    }
    let dt = 1.0 / n_steps as f64;
    let mut x = x0;
    for k in 0..n_steps {
        let v = field.velocity(&x, k as f64 * dt)?;
        if v.dims() != x.dims() {
            return Err(Error::Shape(format!("field returned {:?} for {:?}", v.dims(), x.dims())));
        }
        x = (x + (v * dt)?)?;
    }
    Ok(x)
}

/// The trained network under a fixed condition.
pub struct BackboneField<'a> {
    pub backbone: &'a Backbone,
    pub cond: &'a ConditionBundle,
}

impl VelocityField for BackboneField<'_> {
    fn velocity(&self, x: &Tensor, t: f64) -> Result<Tensor> {
        let ts = vec![t; self.cond.batch()];
        Ok(self.backbone.forward(x, &ts, self.cond)?.detach())
    }
}

/// Draws Gaussian noise, integrates the network's field and maps the
/// result back to the log-Mel domain. One spectrogram per batch item.
pub fn euler_sample(
    backbone: &Backbone,
    cond: &ConditionBundle,
    n_steps: usize,
    rng: &mut ChaCha8Rng,
    norm: &NormStats,
    log_floor: f64,
) -> Result<Vec<MelSpectrogram>> {
    let (b, f, m) = (cond.batch(), cond.frames(), backbone.config().n_mels);
    let x0 = nn::gaussian(rng, &[b, f, m], backbone.dtype())?;
    let x1 = euler_integrate(&BackboneField { backbone, cond }, x0, n_steps)?;
    let flat = nn::to_f64_vec(&x1)?;
    (0..b)
        .map(|i| {
            let vals = flat[i * f * m..(i + 1) * f * m]
                .iter()
                .map(|v| norm.denormalize(*v).max(log_floor))
                .collect();
            MelSpectrogram::from_values(vals, f, m, 50.0)
        })
        .collect()
}
