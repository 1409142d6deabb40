//! Linear conditional probability path.

use candle_core::Tensor;
use rand::Rng;

use crate::error::{Error, Result};

/// Uniform draw on `[0, 1)`.
pub fn sample_time<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.random::<f64>()
}

fn same_shape(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::Shape(format!("{:?} vs {:?}", a.dims(), b.dims())));
    }
    Ok(())
}

/// `(1 - t) * x0 + t * x1`.
pub fn interpolate(x0: &Tensor, x1: &Tensor, t: f64) -> Result<Tensor> {
    same_shape(x0, x1)?;
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Data(format!("t = {t} outside [0, 1]")));
    }
    Ok(((x0 * (1.0 - t))? + (x1 * t)?)?)
}

/// Per-item times: `t` has one entry per leading-axis item.
pub fn interpolate_batch(x0: &Tensor, x1: &Tensor, t: &[f64]) -> Result<Tensor> {
    same_shape(x0, x1)?;
    let b = x0.dim(0)?;
    if t.len() != b {
        return Err(Error::Shape(format!("{} times for batch of {b}", t.len())));
    }
    let mut shape = vec![1usize; x0.rank()];
    shape[0] = b;
    let tt = Tensor::from_slice(t, shape.as_slice(), x0.device())?.to_dtype(x0.dtype())?;
    let keep = (1.0 - &tt)?;
    Ok((x0.broadcast_mul(&keep)? + x1.broadcast_mul(&tt)?)?)
}

/// Time derivative of the path: `x1 - x0`.
pub fn velocity_target(x0: &Tensor, x1: &Tensor) -> Result<Tensor> {
    same_shape(x0, x1)?;
    Ok((x1 - x0)?)
}
