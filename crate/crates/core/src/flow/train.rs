//! Training and inference around the velocity network.

use std::path::Path;

use candle_core::{DType, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::Waveform;
use crate::checkpoint::{Checkpoint, CheckpointKind};
use crate::encoder::{PhoneticEncoder, PhoneticRepresentation};
use crate::error::{Error, Result};
use crate::flow::backbone::{Backbone, BackboneConfig};
use crate::flow::condition::{assemble_condition, ConditionBundle};
use crate::flow::loss::masked_cfm_loss;
use crate::flow::mask::{build_infilling_masks, InfillingMask, MaskRanges};
use crate::flow::norm::NormStats;
use crate::flow::path::{interpolate_batch, sample_time, velocity_target};
use crate::flow::sampler::euler_sample;
use crate::mel::{MelAnalyzer, MelConfig, MelSpectrogram, Vocoder};
use crate::mixture::substream;
use crate::nn::{self, stack_matrices};
use crate::optim::{clip_grad_norm, AdamW, OptimConfig};

/// Model variants compared in the ablation suite.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Distilled encoder features on the noisy input.
    Full,
    /// Features of the encoder before distillation.
    NoisySemantic,
    /// Phonetic condition replaced by zeros.
    NoSemantic,
    /// Clean context always fully hidden, noisy input always visible.
    NoMasking,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Full,
        Variant::NoisySemantic,
        Variant::NoSemantic,
        Variant::NoMasking,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoisySemantic => "noisy_semantic",
            Variant::NoSemantic => "no_semantic",
            Variant::NoMasking => "no_masking",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FmConfig {
    pub optim: OptimConfig,
    /// Number of simulated pairs materialised before training.
    pub pool_size: usize,
    pub masks: MaskRanges,
    pub sampling_steps: usize,
    /// Write a snapshot every this many steps (0 disables).
    pub snapshot_every: usize,
}

impl FmConfig {
    pub fn validate(&self) -> Result<()> {
        self.optim.validate()?;
        self.masks.validate()?;
        if self.pool_size == 0 {
            return Err(Error::Config("pool_size must be positive".into()));
        }
        if self.sampling_steps == 0 {
            return Err(Error::Config("sampling_steps must be positive".into()));
        }
        Ok(())
    }
}

/// A trained (or training) flow model plus everything needed to use it.
#[derive(Debug)]
pub struct FlowModel {
    pub backbone: Backbone,
    pub norm: NormStats,
    pub variant: Variant,
    pub mel: MelConfig,
    pub encoder_checksum: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct FlowMeta {
    backbone: BackboneConfig,
    norm: NormStats,
    variant: Variant,
    mel: MelConfig,
    encoder_checksum: String,
}

impl FlowModel {
    pub fn new(
        cfg: &BackboneConfig,
        norm: NormStats,
        variant: Variant,
        mel: MelConfig,
        encoder_checksum: String,
        seed: u64,
    ) -> Result<Self> {
        if cfg.n_mels != mel.n_mels {
            return Err(Error::Config(format!(
                "backbone expects {} Mel bins, analysis has {}",
                cfg.n_mels, mel.n_mels
            )));
        }
        Ok(Self {
            backbone: Backbone::new(cfg, DType::F32, seed)?,
            norm,
            variant,
            mel,
            encoder_checksum,
        })
    }

    pub fn to_checkpoint(&self, step: usize, fingerprint: &str) -> Result<Checkpoint> {
        let meta = FlowMeta {
            backbone: self.backbone.config().clone(),
            norm: self.norm,
            variant: self.variant,
            mel: self.mel.clone(),
            encoder_checksum: self.encoder_checksum.clone(),
        };
        Ok(Checkpoint::new(CheckpointKind::Flow, step, fingerprint)
            .with_meta(&meta)?
            .with_tensors(self.backbone.params().snapshot()))
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.kind != CheckpointKind::Flow {
            return Err(Error::Data(format!("{:?} checkpoint is not a flow model", ck.kind)));
        }
        let meta: FlowMeta = ck.meta_as()?;
        let model = Self::new(&meta.backbone, meta.norm, meta.variant, meta.mel, meta.encoder_checksum, 0)?;
        model.backbone.params().load_snapshot(&ck.tensors)?;
        Ok(model)
    }

    pub fn load(path: impl AsRef<Path>, fingerprint: &str) -> Result<Self> {
        let ck = Checkpoint::load_kind(path, CheckpointKind::Flow)?;
        ck.require_fingerprint(fingerprint)?;
        Self::from_checkpoint(&ck)
    }

    /// Refuses an encoder other than the one this model was trained with.
    pub fn check_encoder(&self, encoder: &dyn PhoneticEncoder) -> Result<()> {
        let found = encoder.checksum()?;
        if found != self.encoder_checksum {
            return Err(Error::Fingerprint {
                expected: self.encoder_checksum.clone(),
                found,
            });
        }
        Ok(())
    }

    fn phonetic_for(&self, encoder: &dyn PhoneticEncoder, noisy: &Waveform, frames: usize) -> Result<PhoneticRepresentation> {
        if self.variant == Variant::NoSemantic {
            return Ok(PhoneticRepresentation::zeros(frames, self.backbone.config().phonetic_dim));
        }
        let rep = encoder.encode(noisy)?;
        if rep.dim() != self.backbone.config().phonetic_dim {
            return Err(Error::Config(format!(
                "encoder dim {} but backbone expects {}",
                rep.dim(),
                self.backbone.config().phonetic_dim
            )));
        }
        Ok(rep)
    }
}

/// One utterance in the normalised Mel domain with its phonetic features.
#[derive(Debug, Clone)]
pub struct Example {
    pub frames: usize,
    pub clean: Vec<f64>,
    pub noisy: Vec<f64>,
    pub phonetic: Vec<f64>,
}

pub fn prepare_example(
    model: &FlowModel,
    encoder: &dyn PhoneticEncoder,
    mel: &MelAnalyzer,
    noisy: &Waveform,
    target: &Waveform,
) -> Result<Example> {
    let clean_mel = mel.log_mel(target)?;
    let noisy_mel = mel.log_mel(noisy)?;
    if clean_mel.frames() != noisy_mel.frames() {
        return Err(Error::Shape("noisy and target differ in frame count".into()));
    }
    let frames = clean_mel.frames();
    let phon = model.phonetic_for(encoder, noisy, frames)?;
    if phon.frames() != frames {
        return Err(Error::Shape(format!("{} encoder frames for {frames} Mel frames", phon.frames())));
    }
    Ok(Example {
        frames,
        clean: model.norm.normalize_all(clean_mel.values()),
        noisy: model.norm.normalize_all(noisy_mel.values()),
        phonetic: phon.values().to_vec(),
    })
}

struct Batch {
    clean: Tensor,
    cond: ConditionBundle,
    x0: Tensor,
    t: Vec<f64>,
}

fn draw_batch(model: &FlowModel, items: &[&Example], rng: &mut ChaCha8Rng, ranges: &MaskRanges, variant: Variant) -> Result<Batch> {
    let cfg = model.backbone.config();
    let f = items[0].frames;
    if items.iter().any(|e| e.frames != f) {
        return Err(Error::Shape("examples in a batch differ in length".into()));
    }
    let dtype = model.backbone.dtype();
    let m = cfg.n_mels;
    let clean = stack_matrices(&items.iter().map(|e| e.clean.as_slice()).collect::<Vec<_>>(), f, m, dtype)?;
    let noisy = stack_matrices(&items.iter().map(|e| e.noisy.as_slice()).collect::<Vec<_>>(), f, m, dtype)?;
    let phon = stack_matrices(
        &items.iter().map(|e| e.phonetic.as_slice()).collect::<Vec<_>>(),
        f,
        cfg.phonetic_dim,
        dtype,
    )?;
    let mut mask_clean = Vec::with_capacity(items.len());
    let mut mask_noisy = Vec::with_capacity(items.len());
    let mut t = Vec::with_capacity(items.len());
    for _ in items {
        let (c, n) = if variant == Variant::NoMasking {
            (InfillingMask::all_missing(f), InfillingMask::none_missing(f))
        } else {
            build_infilling_masks(rng, f, ranges)?
        };
        mask_clean.push(c);
        mask_noisy.push(n);
        t.push(sample_time(rng));
    }
    let x0 = nn::gaussian(rng, &[items.len(), f, m], dtype)?;
    let cond = assemble_condition(&phon, &noisy, &clean, mask_clean, mask_noisy, model.backbone.semantic_projection())?;
    Ok(Batch { clean, cond, x0, t })
}

fn batch_loss(model: &FlowModel, b: &Batch) -> Result<Tensor> {
    let x_t = interpolate_batch(&b.x0, &b.clean, &b.t)?;
    let v = velocity_target(&b.x0, &b.clean)?;
    let pred = model.backbone.forward(&x_t, &b.t, &b.cond)?;
    masked_cfm_loss(&pred, &v, &b.cond.mask_clean)
}

/// One optimizer update on a batch of examples. Masks, times and noise are
/// drawn from `rng`.
#[allow(clippy::too_many_arguments)]
pub fn train_step(
    model: &FlowModel,
    opt: &mut AdamW,
    items: &[&Example],
    rng: &mut ChaCha8Rng,
    lr: f64,
    ranges: &MaskRanges,
    clip_norm: f64,
) -> Result<f64> {
    let b = draw_batch(model, items, rng, ranges, model.variant)?;
    let loss = batch_loss(model, &b)?;
    let value = nn::scalar(&loss)?;
    if !value.is_finite() {
        return Ok(value);
    }
    let mut grads = loss.backward()?;
    clip_grad_norm(&mut grads, &model.backbone.params().vars(), clip_norm)?;
    opt.step(&grads, lr)?;
    Ok(value)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLog {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
}

/// Runs the configured number of steps over a fixed example pool. Step `s`
/// takes its randomness from a stream keyed by `(seed, s)`.
pub fn train_flow(
    model: &FlowModel,
    pool: &[Example],
    cfg: &FmConfig,
    seed: u64,
    mut on_step: impl FnMut(&StepLog) -> Result<()>,
) -> Result<Vec<StepLog>> {
    cfg.validate()?;
    if pool.is_empty() {
        return Err(Error::Data("empty training pool".into()));
    }
    let mut opt = AdamW::new(model.backbone.params(), &cfg.optim)?;
    let mut log = Vec::with_capacity(cfg.optim.steps);
    for step in 0..cfg.optim.steps {
        let mut rng = substream(seed, 1 << 41 | step as u64);
        let items: Vec<&Example> = (0..cfg.optim.batch)
            .map(|_| &pool[rng.random_range(0..pool.len())])
            .collect();
        let lr = cfg.optim.lr_at(step)?;
        let loss = train_step(model, &mut opt, &items, &mut rng, lr, &cfg.masks, cfg.optim.clip_norm)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite {
                step,
                seed,
                detail: "flow-matching loss".into(),
            });
        }
        let entry = StepLog { step, lr, loss };
        on_step(&entry)?;
        log.push(entry);
        if step % 100 == 0 {
            log::debug!("fm step {step} loss {loss:.4} lr {lr:.2e}");
        }
    }
    Ok(log)
}

/// Mean masked loss over `examples` with standard infilling masks; item
/// `i` uses a stream keyed by `(seed, i)`, so every model sees identical
/// masks, times and noise.
pub fn held_out_loss(model: &FlowModel, examples: &[Example], seed: u64, ranges: &MaskRanges) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::Data("no held-out examples".into()));
    }
    let mut total = 0.0;
    for (i, e) in examples.iter().enumerate() {
        let mut rng = substream(seed, i as u64);
        let b = draw_batch(model, &[e], &mut rng, ranges, Variant::Full)?;
        total += nn::scalar(&batch_loss(model, &b)?.detach())?;
    }
    Ok(total / examples.len() as f64)
}

/// Inference condition: clean context fully hidden, noisy Mel visible.
pub fn inference_condition(model: &FlowModel, noisy_mel: &MelSpectrogram, phonetic: &PhoneticRepresentation) -> Result<ConditionBundle> {
    let f = noisy_mel.frames();
    let dtype = model.backbone.dtype();
    let m = noisy_mel.n_mels();
    let noisy = nn::matrix(&model.norm.normalize_all(noisy_mel.values()), f, m, dtype)?.unsqueeze(0)?;
    let phon = phonetic.to_tensor(dtype)?.unsqueeze(0)?;
    let clean = noisy.zeros_like()?;
    assemble_condition(
        &phon,
        &noisy,
        &clean,
        vec![InfillingMask::all_missing(f)],
        vec![InfillingMask::none_missing(f)],
        model.backbone.semantic_projection(),
    )
}

/// Noisy waveform to enhanced waveform: encode, condition, sample,
/// vocode. Returns the waveform and the generated log-Mel.
pub fn enhance(
    model: &FlowModel,
    encoder: &dyn PhoneticEncoder,
    mel: &MelAnalyzer,
    vocoder: &dyn Vocoder,
    noisy: &Waveform,
    n_steps: usize,
    seed: u64,
) -> Result<(Waveform, MelSpectrogram)> {
    let noisy_mel = mel.log_mel(noisy)?;
    let phon = model.phonetic_for(encoder, noisy, noisy_mel.frames())?;
    let cond = inference_condition(model, &noisy_mel, &phon)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let out = euler_sample(&model.backbone, &cond, n_steps, &mut rng, &model.norm, model.mel.log_floor_value())?
        .remove(0);
    let wav = vocoder.invert(&out, seed)?;
    Ok((wav, out))
}
