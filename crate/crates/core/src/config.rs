//! Run configuration: one TOML file enumerating every setting.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::checkpoint::fingerprint_of;
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::flow::{BackboneConfig, FmConfig, MaskRanges};
use crate::mel::MelConfig;
use crate::mixture::MixtureConfig;
use crate::optim::OptimConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Paths {
    pub speech_manifest: PathBuf,
    pub noise_manifest: PathBuf,
    /// Empty means no reverberation.
    pub rir_manifest: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            speech_manifest: "data/speech.txt".into(),
            noise_manifest: "data/noise.txt".into(),
            rir_manifest: "data/rir.txt".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub profile: String,
    pub seed: u64,
    /// Pairs used to estimate the Mel normalisation statistics.
    pub norm_pairs: usize,
    pub griffin_lim_iters: usize,
    /// Refuse inputs that are not at the pipeline rate instead of
    /// resampling them.
    pub strict_sample_rate: bool,
    pub paths: Paths,
    pub mel: MelConfig,
    pub mixture: MixtureConfig,
    pub encoder: EncoderConfig,
    pub pretrain: OptimConfig,
    pub drd: OptimConfig,
    pub backbone: BackboneConfig,
    pub fm: FmConfig,
}

impl RunConfig {
    pub fn desk() -> Self {
        let encoder = EncoderConfig::desk();
        Self {
            profile: "desk".into(),
            seed: 0,
            norm_pairs: 64,
            griffin_lim_iters: 32,
            strict_sample_rate: false,
            paths: Paths::default(),
            mel: MelConfig::default(),
            mixture: MixtureConfig::default(),
            pretrain: OptimConfig {
                steps: 2000,
                batch: 8,
                peak_lr: 1e-3,
                final_lr: 1e-5,
                ..OptimConfig::default()
            },
            drd: OptimConfig {
                steps: 1000,
                batch: 8,
                peak_lr: 5e-4,
                final_lr: 1e-6,
                ..OptimConfig::default()
            },
            backbone: BackboneConfig {
                phonetic_dim: encoder.dim,
                ..BackboneConfig::desk()
            },
            encoder,
            fm: FmConfig {
                optim: OptimConfig {
                    steps: 5000,
                    batch: 8,
                    peak_lr: 5e-4,
                    final_lr: 1e-6,
                    ..OptimConfig::default()
                },
                pool_size: 2000,
                masks: MaskRanges::default(),
                sampling_steps: 8,
                snapshot_every: 1000,
            },
        }
    }

    pub fn paper() -> Self {
        let encoder = EncoderConfig::paper();
        let base = Self::desk();
        Self {
            profile: "paper".into(),
            mixture: MixtureConfig {
                segment_seconds: 4.0,
                ..base.mixture.clone()
            },
            drd: OptimConfig {
                steps: 50_000,
                batch: 20,
                peak_lr: 2e-5,
                final_lr: 1e-6,
                ..OptimConfig::default()
            },
            backbone: BackboneConfig {
                phonetic_dim: encoder.dim,
                ..BackboneConfig::paper()
            },
            encoder,
            fm: FmConfig {
                optim: OptimConfig {
                    steps: 100_000,
                    batch: 32,
                    peak_lr: 1e-4,
                    final_lr: 1e-6,
                    ..OptimConfig::default()
                },
                pool_size: 100_000,
                snapshot_every: 10_000,
                ..base.fm.clone()
            },
            ..base
        }
    }

    /// Smaller flow backbone and budgets that train in minutes on one CPU
    /// core. The acceptance suite runs at this scale.
    pub fn toy() -> Self {
        let base = Self::desk();
        Self {
            profile: "toy".into(),
            pretrain: OptimConfig {
                steps: 300,
                ..base.pretrain.clone()
            },
            drd: OptimConfig {
                steps: 200,
                ..base.drd.clone()
            },
            backbone: BackboneConfig {
                layers: 2,
                hidden: 128,
                ffn: 256,
                ..base.backbone.clone()
            },
            fm: FmConfig {
                optim: OptimConfig {
                    steps: 1500,
                    ..base.fm.optim.clone()
                },
                pool_size: 400,
                snapshot_every: 500,
                ..base.fm.clone()
            },
            ..base
        }
    }

    pub fn profile(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "toy" => Ok(Self::toy()),
            "paper" => Ok(Self::paper()),
            other => Err(Error::Config(format!("unknown profile {other:?} (expected desk, toy or paper)"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.mel.validate()?;
        self.mixture.validate()?;
        self.encoder.validate()?;
        self.backbone.validate()?;
        for (name, o) in [("pretrain", &self.pretrain), ("drd", &self.drd)] {
            o.validate().map_err(|e| Error::Config(format!("[{name}] {e}")))?;
        }
        self.fm.validate().map_err(|e| Error::Config(format!("[fm] {e}")))?;
        if self.backbone.phonetic_dim != self.encoder.dim {
            return Err(Error::Config(format!(
                "backbone.phonetic_dim {} must equal encoder.dim {}",
                self.backbone.phonetic_dim, self.encoder.dim
            )));
        }
        if self.backbone.n_mels != self.mel.n_mels {
            return Err(Error::Config("backbone.n_mels must equal mel.n_mels".into()));
        }
        if self.encoder.framing.hop != self.mel.hop {
            return Err(Error::Config("encoder hop must equal the Mel hop".into()));
        }
        if self.norm_pairs == 0 || self.griffin_lim_iters == 0 {
            return Err(Error::Config("norm_pairs and griffin_lim_iters must be positive".into()));
        }
        Ok(())
    }

    /// Hash of the analysis settings every checkpoint must agree on.
    pub fn data_fingerprint(&self) -> String {
        fingerprint_of(&[&self.mel])
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serialises")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.to_toml()).map_err(|e| Error::io(path, e))
    }

    /// Reads `path`, or writes the named profile there first if it does not
    /// exist yet.
    pub fn load_or_init(path: impl AsRef<Path>, profile: &str) -> Result<Self> {
        let path = path.as_ref();
        if path.exists() {
            return Self::load(path);
        }
        let cfg = Self::profile(profile)?;
        cfg.save(path)?;
        Ok(cfg)
    }

    /// Manifest paths are resolved against `base` when relative.
    pub fn resolve(&self, base: &Path, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base.join(p)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profiles_validate_and_round_trip() {
        for p in ["desk", "toy", "paper"] {
            let c = RunConfig::profile(p).unwrap();
            c.validate().unwrap();
            assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
        }
        assert!(RunConfig::profile("huge").is_err());
    }

    #[test]
    fn invariants_enforced() {
        let mut c = RunConfig::desk();
        c.fm.optim.warmup_fraction = 1.0;
        assert!(c.validate().is_err());
        let mut c = RunConfig::desk();
        c.drd.final_lr = 1.0;
        assert!(c.validate().is_err());
        let mut c = RunConfig::desk();
        c.mixture.snr_low = 20.0;
        assert!(c.validate().is_err());
        let mut c = RunConfig::desk();
        c.mixture.reverb_prob = 1.5;
        assert!(c.validate().is_err());
    }

    #[test]
    fn paper_profile_numbers() {
        let c = RunConfig::paper();
        assert_eq!(c.backbone.layers, 12);
        assert_eq!(c.backbone.heads, 16);
        assert_eq!(c.backbone.hidden, 1024);
        assert_eq!(c.backbone.ffn, 2048);
        assert_eq!(c.fm.optim.peak_lr, 1e-4);
        assert_eq!(c.fm.optim.final_lr, 1e-6);
        assert_eq!(c.fm.optim.warmup_fraction, 0.1);
    }

    #[test]
    fn load_or_init_writes_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.toml");
        let a = RunConfig::load_or_init(&p, "desk").unwrap();
        assert!(p.exists());
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.contains("warmup_fraction"));
        assert_eq!(RunConfig::load(&p).unwrap(), a);
    }
}
