//! Contiguous-span infilling masks.

use candle_core::{DType, Device, Tensor};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-frame flags; `true` marks a hidden frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InfillingMask {
    missing: Vec<bool>,
}

impl InfillingMask {
    pub fn from_flags(missing: Vec<bool>) -> Self {
        Self { missing }
    }

    pub fn all_missing(frames: usize) -> Self {
        Self {
            missing: vec![true; frames],
        }
    }

    pub fn none_missing(frames: usize) -> Self {
        Self {
            missing: vec![false; frames],
        }
    }

    pub fn span(frames: usize, start: usize, len: usize) -> Result<Self> {
        if start + len > frames {
            return Err(Error::Shape(format!("span {start}+{len} exceeds {frames} frames")));
        }
        let mut missing = vec![false; frames];
        missing[start..start + len].iter_mut().for_each(|m| *m = true);
        Ok(Self { missing })
    }

    pub fn frames(&self) -> usize {
        self.missing.len()
    }

    pub fn missing(&self) -> &[bool] {
        &self.missing
    }

    pub fn missing_count(&self) -> usize {
        self.missing.iter().filter(|m| **m).count()
    }

    pub fn ratio(&self) -> f64 {
        self.missing_count() as f64 / self.frames() as f64
    }

    /// `(start, len)` of the hidden frames when they form one interval.
    pub fn bounds(&self) -> Option<(usize, usize)> {
        let first = self.missing.iter().position(|m| *m)?;
        let last = self.missing.iter().rposition(|m| *m)?;
        self.missing[first..=last]
            .iter()
            .all(|m| *m)
            .then_some((first, last + 1 - first))
    }

    pub fn is_contiguous(&self) -> bool {
        self.missing_count() == 0 || self.bounds().is_some()
    }
}

/// Ranges the masking ratio is drawn from, per stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskRanges {
    pub clean: (f64, f64),
    pub noisy: (f64, f64),
}

impl Default for MaskRanges {
    fn default() -> Self {
        Self {
            clean: (0.7, 1.0),
            noisy: (0.5, 1.0),
        }
    }
}

impl MaskRanges {
    pub fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [("clean", self.clean), ("noisy", self.noisy)] {
            if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
                return Err(Error::Config(format!("{name} mask range [{lo}, {hi}] invalid")));
            }
        }
        Ok(())
    }
}

/// One span of `round(frames * r)` frames, `r ~ U[lo, hi]`, start uniform
/// over the valid offsets.
pub fn random_span<R: Rng + ?Sized>(rng: &mut R, frames: usize, range: (f64, f64)) -> Result<InfillingMask> {
    if frames < 2 {
        return Err(Error::Data(format!("masking needs at least 2 frames, got {frames}")));
    }
    let (lo, hi) = range;
    let r = if lo == hi { lo } else { rng.random_range(lo..=hi) };
    let len = ((frames as f64 * r).round() as usize).clamp(1, frames);
    let start = rng.random_range(0..=frames - len);
    InfillingMask::span(frames, start, len)
}

/// Clean-context and noisy-input masks, each from its own child stream.
pub fn build_infilling_masks(
    rng: &mut ChaCha8Rng,
    frames: usize,
    ranges: &MaskRanges,
) -> Result<(InfillingMask, InfillingMask)> {
    ranges.validate()?;
    let mut clean_rng = ChaCha8Rng::seed_from_u64(rng.next_u64());
    let mut noisy_rng = ChaCha8Rng::seed_from_u64(rng.next_u64());
    Ok((
        random_span(&mut clean_rng, frames, ranges.clean)?,
        random_span(&mut noisy_rng, frames, ranges.noisy)?,
    ))
}

/// `[B, F, 1]` tensor with 1 at hidden frames.
pub(crate) fn mask_tensor(masks: &[InfillingMask], dtype: DType) -> Result<Tensor> {
    let f = masks.first().map(|m| m.frames()).unwrap_or(0);
    let mut v = Vec::with_capacity(masks.len() * f);
    for m in masks {
        if m.frames() != f {
            return Err(Error::Shape("masks in a batch differ in length".into()));
        }
        v.extend(m.missing.iter().map(|&x| if x { 1f32 } else { 0f32 }));
    }
    Ok(Tensor::from_vec(v, (masks.len(), f, 1), &Device::Cpu)?.to_dtype(dtype)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forced_full_ratio() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = random_span(&mut rng, 100, (1.0, 1.0)).unwrap();
        assert_eq!(m.missing_count(), 100);
        assert_eq!(m.ratio(), 1.0);
    }

    #[test]
    fn too_few_frames() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(build_infilling_masks(&mut rng, 1, &MaskRanges::default()).is_err());
    }

    #[test]
    fn bounds_and_contiguity() {
        let m = InfillingMask::span(10, 3, 4).unwrap();
        assert_eq!(m.bounds(), Some((3, 4)));
        let g = InfillingMask::from_flags(vec![true, false, true]);
        assert!(!g.is_contiguous());
        assert!(InfillingMask::none_missing(4).is_contiguous());
    }

    #[test]
    fn streams_are_independent_draws() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (a, b) = build_infilling_masks(&mut rng, 200, &MaskRanges { clean: (0.5, 1.0), noisy: (0.5, 1.0) }).unwrap();
        assert_ne!(a, b);
    }
}
