use candle_core::Tensor;

use crate::error::{Error, Result};
use crate::flow::mask::{mask_tensor, InfillingMask};

/// Mean squared velocity error over the entries of hidden frames only.
/// Frames outside the masks contribute exactly zero.
pub fn masked_cfm_loss(v_pred: &Tensor, v_target: &Tensor, mask_clean: &[InfillingMask]) -> Result<Tensor> {
    if v_pred.dims() != v_target.dims() {
        return Err(Error::Shape(format!("{:?} vs {:?}", v_pred.dims(), v_target.dims())));
    }
    let (b, f, c) = v_pred.dims3()?;
    if mask_clean.len() != b || mask_clean.iter().any(|m| m.frames() != f) {
        return Err(Error::Shape(format!("masks do not match a {b}x{f} batch")));
    }
    let hidden: usize = mask_clean.iter().map(|m| m.missing_count()).sum();
    if hidden == 0 {
        return Err(Error::Data("no masked frames".into()));
    }
    let w = mask_tensor(mask_clean, v_pred.dtype())?;
    let sq = (v_pred - v_target)?.sqr()?.broadcast_mul(&w)?;
    Ok((sq.sum_all()? / (hidden * c) as f64)?)
}
