//! Conditioning inputs for the velocity network.

use candle_core::{Tensor, D};

use crate::error::{Error, Result};
use crate::flow::mask::{mask_tensor, InfillingMask};
use crate::nn::Linear;

/// Batched conditions, all `[B, F, *]`. Mel streams are already
/// zero-filled at their hidden frames.
#[derive(Debug, Clone)]
pub struct ConditionBundle {
    pub phonetic: Tensor,
    pub phonetic_projected: Tensor,
    pub noisy_mel: Tensor,
    pub clean_mel_context: Tensor,
    pub mask_clean: Vec<InfillingMask>,
    pub mask_noisy: Vec<InfillingMask>,
}

/// Projects the phonetic sequence (never masked) and zero-fills each Mel
/// stream under its mask.
pub fn assemble_condition(
    phonetic: &Tensor,
    noisy_mel: &Tensor,
    clean_mel: &Tensor,
    mask_clean: Vec<InfillingMask>,
    mask_noisy: Vec<InfillingMask>,
    projection: &Linear,
) -> Result<ConditionBundle> {
    let (b, f, _) = phonetic.dims3()?;
    for (name, t) in [("noisy mel", noisy_mel), ("clean mel", clean_mel)] {
        let (tb, tf, _) = t.dims3()?;
        if (tb, tf) != (b, f) {
            return Err(Error::Shape(format!("{name} is {tb}x{tf}, phonetic is {b}x{f}")));
        }
    }
    for m in mask_clean.iter().chain(&mask_noisy) {
        if m.frames() != f {
            return Err(Error::Shape(format!("mask of {} frames for {f} frames", m.frames())));
        }
    }
    if mask_clean.len() != b || mask_noisy.len() != b {
        return Err(Error::Shape("one mask per batch item is required".into()));
    }
    let dtype = noisy_mel.dtype();
    let keep_clean = (1.0 - mask_tensor(&mask_clean, dtype)?)?;
    let keep_noisy = (1.0 - mask_tensor(&mask_noisy, dtype)?)?;
    Ok(ConditionBundle {
        phonetic_projected: projection.forward(phonetic)?,
        phonetic: phonetic.clone(),
        noisy_mel: noisy_mel.broadcast_mul(&keep_noisy)?,
        clean_mel_context: clean_mel.broadcast_mul(&keep_clean)?,
        mask_clean,
        mask_noisy,
    })
}

impl ConditionBundle {
    pub fn batch(&self) -> usize {
        self.mask_clean.len()
    }

    pub fn frames(&self) -> usize {
        self.mask_clean.first().map(|m| m.frames()).unwrap_or(0)
    }

    /// Projected phonetic, noisy Mel, clean context: `[B, F, S + 2M]`.
    pub fn features(&self) -> Result<Tensor> {
        Ok(Tensor::cat(
            &[&self.phonetic_projected, &self.noisy_mel, &self.clean_mel_context],
            D::Minus1,
        )?)
    }

    /// Masked-frame flags, noisy then clean: `[B, F, 2]`.
    pub fn flags(&self) -> Result<Tensor> {
        let dtype = self.noisy_mel.dtype();
        Ok(Tensor::cat(
            &[&mask_tensor(&self.mask_noisy, dtype)?, &mask_tensor(&self.mask_clean, dtype)?],
            D::Minus1,
        )?)
    }
}
