//! Global affine normalisation of log-Mel values.

use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, CheckpointKind};
use crate::error::{Error, Result};
use crate::mel::MelAnalyzer;
use crate::mixture::PairSource;

/// One mean and one standard deviation over all bins and frames.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: f64,
    pub std: f64,
}

impl Default for NormStats {
    fn default() -> Self {
        Self { mean: 0.0, std: 1.0 }
    }
}

impl NormStats {
    pub fn normalize(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }

    pub fn denormalize(&self, v: f64) -> f64 {
        v * self.std + self.mean
    }

    pub fn normalize_all(&self, vs: &[f64]) -> Vec<f64> {
        vs.iter().map(|v| self.normalize(*v)).collect()
    }

    /// Statistics of target log-Mels over `count` items of `source`.
    pub fn estimate(source: &dyn PairSource, count: usize, mel: &MelAnalyzer) -> Result<Self> {
        if count == 0 {
            return Err(Error::Config("normalisation needs at least one pair".into()));
        }
        let (mut n, mut sum, mut sq) = (0usize, 0.0, 0.0);
        for i in 0..count {
            let m = mel.log_mel(&source.pair(i as u64)?.target)?;
            for v in m.values() {
                n += 1;
                sum += v;
                sq += v * v;
            }
        }
        let mean = sum / n as f64;
        let std = (sq / n as f64 - mean * mean).max(0.0).sqrt();
        if !(std > 0.0) {
            return Err(Error::Data("target log-Mel has zero variance".into()));
        }
        Ok(Self { mean, std })
    }

    pub fn to_checkpoint(&self, fingerprint: &str) -> Result<Checkpoint> {
        Checkpoint::new(CheckpointKind::Normalization, 0, fingerprint).with_meta(self)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.kind != CheckpointKind::Normalization {
            return Err(Error::Data(format!("{:?} checkpoint holds no statistics", ck.kind)));
        }
        ck.meta_as()
    }
}
