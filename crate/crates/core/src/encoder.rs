//! Phonetic encoders: the pluggable interface, a small trainable stand-in
//! for a pretrained speech SSL model, and its masked-frame pretraining.

use std::path::Path;

use candle_core::{DType, Device, Tensor, Var, D};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::audio::Waveform;
use crate::checkpoint::{Checkpoint, CheckpointKind};
use crate::error::{Error, Result};
use crate::mel::{hann_window, hz_to_mel, mel_to_hz, MelAnalyzer, MelConfig};
use crate::mixture::{substream, AudioCorpus};
use crate::nn::{self, FeedForward, Init, LayerNorm, Linear, ParamStore, SelfAttention};
use crate::optim::{clip_grad_norm, AdamW, OptimConfig};

/// Frame-level feature sequence at 50 Hz, `frames x dim`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PhoneticRepresentation {
    values: Vec<f64>,
    frames: usize,
    dim: usize,
    frame_rate: f64,
}

impl PhoneticRepresentation {
    pub fn new(values: Vec<f64>, frames: usize, dim: usize, frame_rate: f64) -> Result<Self> {
        if frames == 0 || dim == 0 || values.len() != frames * dim {
            return Err(Error::Shape(format!(
                "representation of {} values is not {frames} x {dim}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite phonetic representation".into()));
        }
        Ok(Self {
            values,
            frames,
            dim,
            frame_rate,
        })
    }

    pub fn zeros(frames: usize, dim: usize) -> Self {
        Self {
            values: vec![0.0; frames * dim],
            frames,
            dim,
            frame_rate: 50.0,
        }
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn frame_rate(&self) -> f64 {
        self.frame_rate
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, frame: usize) -> &[f64] {
        &self.values[frame * self.dim..(frame + 1) * self.dim]
    }

    pub fn to_tensor(&self, dtype: DType) -> Result<Tensor> {
        nn::matrix(&self.values, self.frames, self.dim, dtype)
    }
}

/// Anything that maps a 16 kHz waveform to a 50 Hz feature sequence.
pub trait PhoneticEncoder: Send + Sync {
    fn dim(&self) -> usize;

    fn frame_rate(&self) -> f64 {
        50.0
    }

    fn encode(&self, wav: &Waveform) -> Result<PhoneticRepresentation>;

    /// Identifies the weights; used to tie checkpoints together.
    fn checksum(&self) -> Result<String>;
}

/// Framing shared by the encoders and kept in step with the Mel analysis:
/// reflect-pad by `hop`, frame `k` centred on sample `k * hop`,
/// `floor(len / hop)` frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Framing {
    pub frame_len: usize,
    pub hop: usize,
    pub min_samples: usize,
}

impl Default for Framing {
    fn default() -> Self {
        Self {
            frame_len: 640,
            hop: 320,
            min_samples: 1280,
        }
    }
}

impl Framing {
    pub fn frames_for(&self, n: usize) -> usize {
        n / self.hop
    }

    /// Returns `frames x frame_len` values.
    pub fn frame(&self, samples: &[f64]) -> Result<(Vec<f64>, usize)> {
        let n = samples.len();
        let pad = self.frame_len / 2;
        if n < self.min_samples.max(pad + 1) {
            return Err(Error::Data(format!("input too short: {n} samples")));
        }
        let mut padded = Vec::with_capacity(n + 2 * pad);
        padded.extend((1..=pad).rev().map(|i| samples[i]));
        padded.extend_from_slice(samples);
        padded.extend((0..pad).map(|i| samples[n - 2 - i]));
        let frames = self.frames_for(n);
        let mut out = Vec::with_capacity(frames * self.frame_len);
        for k in 0..frames {
            let s = k * self.hop + pad - self.frame_len / 2;
            out.extend_from_slice(&padded[s..s + self.frame_len]);
        }
        Ok((out, frames))
    }

    fn batch(&self, wavs: &[&Waveform], dtype: DType) -> Result<(Tensor, usize)> {
        let first = wavs
            .first()
            .ok_or_else(|| Error::Data("empty batch".into()))?
            .len();
        let mut all = Vec::new();
        let mut frames = 0;
        for w in wavs {
            if w.len() != first {
                return Err(Error::Shape("batched waveforms differ in length".into()));
            }
            let (f, n) = self.frame(w.samples())?;
            frames = n;
            all.extend(f);
        }
        let t = Tensor::from_vec(all, (wavs.len(), frames, self.frame_len), &Device::Cpu)?
            .to_dtype(dtype)?;
        Ok((t, frames))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn: usize,
    /// Quadrature filter pairs in the front-end.
    pub filters: usize,
    pub framing: Framing,
    pub mask_fraction: f64,
}

impl EncoderConfig {
    pub fn desk() -> Self {
        Self {
            dim: 64,
            layers: 2,
            heads: 4,
            ffn: 128,
            filters: 64,
            framing: Framing::default(),
            mask_fraction: 0.3,
        }
    }

    pub fn paper() -> Self {
        Self {
            dim: 1024,
            layers: 12,
            heads: 16,
            ffn: 4096,
            filters: 256,
            framing: Framing::default(),
            mask_fraction: 0.3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.heads == 0 || self.dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "encoder dim {} must be a positive multiple of heads {}",
                self.dim, self.heads
            )));
        }
        if self.filters == 0 || self.framing.hop == 0 || self.framing.frame_len < 2 {
            return Err(Error::Config("encoder front-end sizes must be positive".into()));
        }
        if !(self.mask_fraction > 0.0 && self.mask_fraction < 1.0) {
            return Err(Error::Config("mask_fraction must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self::desk()
    }
}

#[derive(Debug, Clone)]
struct Block {
    ln1: LayerNorm,
    attn: SelfAttention,
    ln2: LayerNorm,
    ff: FeedForward,
}

impl Block {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let x = (x + self.attn.forward(&self.ln1.forward(x)?)?)?;
        Ok((&x + self.ff.forward(&self.ln2.forward(&x)?)?)?)
    }
}

/// Learnable quadrature filterbank over 40 ms frames, log energy, then a
/// pre-LN transformer stack. Output is the final layer norm.
#[derive(Debug)]
pub struct ToyEncoder {
    cfg: EncoderConfig,
    store: ParamStore,
    filters: Var,
    proj: Linear,
    blocks: Vec<Block>,
    ln_f: LayerNorm,
    mask_emb: Var,
    head: Linear,
}

impl ToyEncoder {
    /// Fresh weights; `n_mels` sizes the pretraining head.
    pub fn new(cfg: &EncoderConfig, n_mels: usize, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new(DType::F32, seed);
        let filters = store.create(
            "frontend.filters",
            &[cfg.framing.frame_len, 2 * cfg.filters],
            Init::Values(quadrature_init(cfg.framing.frame_len, cfg.filters)),
        )?;
        let proj = Linear::new(&mut store, "frontend.proj", cfg.filters, cfg.dim, true)?;
        let blocks = (0..cfg.layers)
            .map(|i| {
                let p = format!("block{i}");
                Ok(Block {
                    ln1: LayerNorm::new(&mut store, &format!("{p}.ln1"), cfg.dim, true)?,
                    attn: SelfAttention::new(&mut store, &format!("{p}.attn"), cfg.dim, cfg.heads)?,
                    ln2: LayerNorm::new(&mut store, &format!("{p}.ln2"), cfg.dim, true)?,
                    ff: FeedForward::new(&mut store, &format!("{p}.ff"), cfg.dim, cfg.ffn)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let ln_f = LayerNorm::new(&mut store, "final_ln", cfg.dim, true)?;
        let mask_emb = store.create("pretrain.mask_emb", &[cfg.dim], Init::Normal(0.1))?;
        let head = Linear::new(&mut store, "pretrain.head", cfg.dim, n_mels, true)?;
        Ok(Self {
            cfg: cfg.clone(),
            store,
            filters,
            proj,
            blocks,
            ln_f,
            mask_emb,
            head,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn n_mels(&self) -> usize {
        self.head.d_out()
    }

    /// Independent copy with identical weights.
    pub fn duplicate(&self) -> Result<Self> {
        let copy = Self::new(&self.cfg, self.n_mels(), 0)?;
        copy.store.copy_from(&self.store)?;
        Ok(copy)
    }

    /// `frames`: `[B, F, frame_len]`. `masked`: optional per-item frame
    /// spans replaced by the mask embedding.
    fn forward(&self, frames: &Tensor, masked: Option<&[(usize, usize)]>) -> Result<Tensor> {
        let (b, f, l) = frames.dims3()?;
        let k = self.cfg.filters;
        let ab = frames
            .reshape((b * f, l))?
            .matmul(self.filters.as_tensor())?
            .reshape((b, f, 2 * k))?;
        let a = ab.narrow(D::Minus1, 0, k)?;
        let bq = ab.narrow(D::Minus1, k, k)?;
        let energy = (a.sqr()? + bq.sqr()?)?;
        // rough centring of typical log energies
        let feat = (((energy + 1e-6)?.log()? + 7.0)? / 3.0)?;
        let mut h = self.proj.forward(&feat)?;
        if let Some(spans) = masked {
            let mut m = vec![0f32; b * f];
            for (i, &(s, len)) in spans.iter().enumerate() {
                for j in s..s + len {
                    m[i * f + j] = 1.0;
                }
            }
            let m = Tensor::from_vec(m, (b, f, 1), &Device::Cpu)?.to_dtype(h.dtype())?;
            let keep = (1.0 - &m)?;
            h = (h.broadcast_mul(&keep)? + m.broadcast_mul(self.mask_emb.as_tensor())?)?;
        }
        let pos: Vec<f64> = (0..f).map(|i| i as f64).collect();
        let pe = nn::sinusoidal_features(&pos, self.cfg.dim, h.dtype())?;
        h = h.broadcast_add(&pe)?;
        for blk in &self.blocks {
            h = blk.forward(&h)?;
        }
        self.ln_f.forward(&h)
    }

    /// Batched forward with gradients; all waveforms must share a length.
    pub fn forward_waves(&self, wavs: &[&Waveform]) -> Result<Tensor> {
        let (t, _) = self.cfg.framing.batch(wavs, self.store.dtype())?;
        self.forward(&t, None)
    }

    /// Batched evaluation-mode encoding.
    pub fn encode_batch(&self, wavs: &[&Waveform]) -> Result<Vec<PhoneticRepresentation>> {
        let out = self.forward_waves(wavs)?.detach();
        let (b, f, d) = out.dims3()?;
        let flat = nn::to_f64_vec(&out)?;
        (0..b)
            .map(|i| PhoneticRepresentation::new(flat[i * f * d..(i + 1) * f * d].to_vec(), f, d, 50.0))
            .collect()
    }

    pub fn to_checkpoint(&self, step: usize, fingerprint: &str) -> Result<Checkpoint> {
        let meta = EncoderMeta {
            config: self.cfg.clone(),
            n_mels: self.n_mels(),
            dim: self.cfg.dim,
            frame_rate: 50.0,
        };
        Ok(Checkpoint::new(CheckpointKind::Encoder, step, fingerprint)
            .with_meta(&meta)?
            .with_tensors(self.store.snapshot()))
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.kind != CheckpointKind::Encoder && ck.kind != CheckpointKind::TrainingState {
            return Err(Error::Data(format!("{:?} checkpoint is not an encoder", ck.kind)));
        }
        let meta: EncoderMeta = ck.meta_as()?;
        let enc = Self::new(&meta.config, meta.n_mels, 0)?;
        let weights: Vec<_> = if ck.kind == CheckpointKind::TrainingState {
            ck.tensors_with_prefix("param/")
        } else {
            ck.tensors.clone()
        };
        enc.store.load_snapshot(&weights)?;
        Ok(enc)
    }

    pub fn save(&self, path: impl AsRef<Path>, fingerprint: &str) -> Result<()> {
        self.to_checkpoint(0, fingerprint)?.save(path)
    }

    /// Loads an encoder checkpoint, checking its config fingerprint.
    pub fn load(path: impl AsRef<Path>, fingerprint: &str) -> Result<Self> {
        let ck = Checkpoint::load_kind(path, CheckpointKind::Encoder)?;
        ck.require_fingerprint(fingerprint)?;
        Self::from_checkpoint(&ck)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct EncoderMeta {
    pub config: EncoderConfig,
    pub n_mels: usize,
    pub dim: usize,
    pub frame_rate: f64,
}

impl PhoneticEncoder for ToyEncoder {
    fn dim(&self) -> usize {
        self.cfg.dim
    }

    fn encode(&self, wav: &Waveform) -> Result<PhoneticRepresentation> {
        Ok(self.encode_batch(&[wav])?.remove(0))
    }

    fn checksum(&self) -> Result<String> {
        self.store.checksum()
    }
}

/// Hann-windowed cosine/sine pairs at Mel-spaced centre frequencies.
fn quadrature_init(len: usize, pairs: usize) -> Vec<f64> {
    let w = hann_window(len);
    let norm = w.iter().sum::<f64>();
    let (lo, hi) = (hz_to_mel(60.0), hz_to_mel(7600.0));
    let freqs: Vec<f64> = (0..pairs)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (pairs.max(2) - 1) as f64))
        .collect();
    let mut out = vec![0.0; len * 2 * pairs];
    for n in 0..len {
        for (j, f) in freqs.iter().enumerate() {
            let ph = 2.0 * std::f64::consts::PI * f * n as f64 / 16_000.0;
            out[n * 2 * pairs + j] = w[n] * ph.cos() / norm * 8.0;
            out[n * 2 * pairs + pairs + j] = w[n] * ph.sin() / norm * 8.0;
        }
    }
    out
}

/// Framed linear projection with no bias. Odd in its input, which makes it
/// a handy oracle for similarity metrics.
#[derive(Debug, Clone)]
pub struct LinearEncoder {
    framing: Framing,
    weight: Vec<f64>,
    dim: usize,
}

impl LinearEncoder {
    pub fn random(dim: usize, seed: u64) -> Self {
        let framing = Framing::default();
        let mut rng = substream(seed, 0);
        let a = (1.0 / framing.frame_len as f64).sqrt();
        let weight = (0..framing.frame_len * dim).map(|_| rng.random_range(-a..a)).collect();
        Self { framing, weight, dim }
    }
}

impl PhoneticEncoder for LinearEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, wav: &Waveform) -> Result<PhoneticRepresentation> {
        let (frames, n) = self.framing.frame(wav.samples())?;
        let l = self.framing.frame_len;
        let mut out = vec![0.0; n * self.dim];
        for k in 0..n {
            let x = &frames[k * l..(k + 1) * l];
            for (i, xi) in x.iter().enumerate() {
                let w = &self.weight[i * self.dim..(i + 1) * self.dim];
                for (o, wj) in out[k * self.dim..(k + 1) * self.dim].iter_mut().zip(w) {
                    *o += xi * wj;
                }
            }
        }
        PhoneticRepresentation::new(out, n, self.dim, 50.0)
    }

    fn checksum(&self) -> Result<String> {
        let bytes: Vec<u8> = self.weight.iter().flat_map(|v| v.to_le_bytes()).collect();
        Ok(crate::checkpoint::fingerprint_of(&[&bytes]))
    }
}

/// Settings for the masked-frame pretraining run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub optim: OptimConfig,
    pub segment_seconds: f64,
    pub seed: u64,
}

/// Pretrains a [`ToyEncoder`] on dry speech: a contiguous span covering
/// `mask_fraction` of the frames is replaced by a mask embedding and a
/// linear head regresses the standardised log-Mel frames under the span.
/// Returns the encoder and the per-step loss.
pub fn pretrain_toy_encoder(
    corpus: &dyn AudioCorpus,
    enc_cfg: &EncoderConfig,
    mel_cfg: &MelConfig,
    cfg: &PretrainConfig,
) -> Result<(ToyEncoder, Vec<f64>)> {
    if corpus.is_empty() {
        return Err(Error::Data("pretraining corpus is empty".into()));
    }
    cfg.optim.validate()?;
    let enc = ToyEncoder::new(enc_cfg, mel_cfg.n_mels, cfg.seed)?;
    let mel = MelAnalyzer::new(mel_cfg)?;
    let seg = (cfg.segment_seconds * mel_cfg.sample_rate as f64).round() as usize;
    let mut opt = AdamW::new(&enc.store, &cfg.optim)?;
    let vars = enc.store.vars();
    let mut losses = Vec::with_capacity(cfg.optim.steps);

    for step in 0..cfg.optim.steps {
        let mut rng = substream(cfg.seed, 1 << 40 | step as u64);
        let mut wavs = Vec::with_capacity(cfg.optim.batch);
        for _ in 0..cfg.optim.batch {
            let idx = rng.random_range(0..corpus.len());
            let utt = corpus.load(idx)?;
            if utt.len() < seg {
                return Err(Error::Data(format!("utterance {idx} shorter than the segment")));
            }
            let start = rng.random_range(0..=utt.len() - seg);
            wavs.push(utt.slice(start, seg));
        }
        let refs: Vec<&Waveform> = wavs.iter().collect();
        let (frames, f) = enc_cfg.framing.batch(&refs, DType::F32)?;
        let span = ((f as f64 * enc_cfg.mask_fraction).round() as usize).clamp(1, f);
        let spans: Vec<(usize, usize)> = (0..wavs.len())
            .map(|_| (rng.random_range(0..=f - span), span))
            .collect();

        let mut target = Vec::with_capacity(wavs.len() * f * mel_cfg.n_mels);
        let mut weight = vec![0f32; wavs.len() * f];
        for (i, w) in wavs.iter().enumerate() {
            let m = mel.log_mel(w)?;
            let v = m.values();
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64).sqrt() + 1e-3;
            target.extend(v.iter().map(|x| (x - mean) / sd));
            for j in spans[i].0..spans[i].0 + spans[i].1 {
                weight[i * f + j] = 1.0;
            }
        }
        let b = wavs.len();
        let target = Tensor::from_vec(target, (b, f, mel_cfg.n_mels), &Device::Cpu)?.to_dtype(DType::F32)?;
        let weight = Tensor::from_vec(weight, (b, f, 1), &Device::Cpu)?;

        let h = enc.forward(&frames, Some(&spans))?;
        let pred = enc.head.forward(&h)?;
        let sq = (pred - target)?.sqr()?.broadcast_mul(&weight)?;
        let loss = (sq.sum_all()? / (span * b * mel_cfg.n_mels) as f64)?;
        let value = nn::scalar(&loss)?;
        if !value.is_finite() {
            return Err(Error::NonFinite {
                step,
                seed: cfg.seed,
                detail: "encoder pretraining loss".into(),
            });
        }
        let mut grads = loss.backward()?;
        clip_grad_norm(&mut grads, &vars, cfg.optim.clip_norm)?;
        opt.step(&grads, cfg.optim.lr_at(step)?)?;
        losses.push(value);
        if step % 100 == 0 {
            log::debug!("pretrain step {step} loss {value:.4}");
        }
    }
    Ok((enc, losses))
}

/// Mean cosine similarity of matching frames.
pub fn mean_frame_cosine(a: &PhoneticRepresentation, b: &PhoneticRepresentation) -> Result<f64> {
    if a.frames != b.frames || a.dim != b.dim {
        return Err(Error::Shape(format!(
            "{}x{} vs {}x{}",
            a.frames, a.dim, b.frames, b.dim
        )));
    }
    let mut sum = 0.0;
    let mut used = 0usize;
    for k in 0..a.frames {
        let (x, y) = (a.row(k), b.row(k));
        let dot: f64 = x.iter().zip(y).map(|(p, q)| p * q).sum();
        let nx = x.iter().map(|p| p * p).sum::<f64>().sqrt();
        let ny = y.iter().map(|q| q * q).sum::<f64>().sqrt();
        if nx == 0.0 || ny == 0.0 {
            continue;
        }
        sum += dot / (nx * ny);
        used += 1;
    }
    if used == 0 {
        return Err(Error::Data("every frame has a zero-norm representation".into()));
    }
    Ok(sum / used as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mixture::InMemoryCorpus;
    use crate::toy::{toy_utterance, ToySpeaker};

    fn tiny_cfg() -> EncoderConfig {
        EncoderConfig {
            dim: 16,
            layers: 1,
            heads: 2,
            ffn: 32,
            filters: 16,
            ..EncoderConfig::desk()
        }
    }

    #[test]
    fn frame_count_matches_mel() {
        let enc = ToyEncoder::new(&tiny_cfg(), 100, 1).unwrap();
        let mel = MelConfig::default();
        for n in [1280usize, 16_000, 16_001, 32_000, 33_333] {
            let w = Waveform::new(vec![0.01; n], 16_000).unwrap();
            let w = w.scaled(1.0);
            let r = enc.encode(&w).unwrap();
            assert_eq!(r.frames(), mel.frames_for(n), "n = {n}");
            assert_eq!(r.dim(), 16);
        }
    }

    #[test]
    fn too_short_errors() {
        let enc = ToyEncoder::new(&tiny_cfg(), 100, 1).unwrap();
        let w = Waveform::new(vec![0.0; 1000], 16_000).unwrap();
        let e = enc.encode(&w).unwrap_err().to_string();
        assert!(e.contains("too short"), "{e}");
    }

    #[test]
    fn deterministic_and_gain_sensitive() {
        let enc = ToyEncoder::new(&tiny_cfg(), 100, 1).unwrap();
        let w = toy_utterance(ToySpeaker::roster(0), 1.0, 3);
        let a = enc.encode(&w).unwrap();
        assert_eq!(a, enc.encode(&w).unwrap());
        assert_ne!(a, enc.encode(&w.scaled(0.5)).unwrap());
    }

    #[test]
    fn framing_centres_frames_on_hops() {
        let f = Framing::default();
        let x: Vec<f64> = (0..2000).map(|i| i as f64).collect();
        let (frames, n) = f.frame(&x).unwrap();
        assert_eq!(n, 6);
        // frame 2 starts at 2*320 - 320
        assert_eq!(frames[2 * 640], 320.0);
        // frame 0 starts with the reflection x[320], ..., x[1]
        assert_eq!(frames[0], 320.0);
        assert_eq!(frames[319], 1.0);
        assert_eq!(frames[320], 0.0);
    }

    #[test]
    fn linear_encoder_is_odd() {
        let enc = LinearEncoder::random(8, 2);
        let w = toy_utterance(ToySpeaker::roster(1), 1.0, 4);
        let a = enc.encode(&w).unwrap();
        let b = enc.encode(&w.scaled(-1.0)).unwrap();
        assert!((mean_frame_cosine(&a, &b).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let enc = ToyEncoder::new(&tiny_cfg(), 100, 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("enc.ckpt");
        enc.save(&p, "fp").unwrap();
        let back = ToyEncoder::load(&p, "fp").unwrap();
        let w = toy_utterance(ToySpeaker::roster(2), 1.0, 5);
        assert_eq!(enc.encode(&w).unwrap(), back.encode(&w).unwrap());
        assert!(ToyEncoder::load(&p, "other").is_err());
    }

    #[test]
    fn pretraining_reduces_loss() {
        let corpus = InMemoryCorpus::new(
            (0..4)
                .map(|i| toy_utterance(ToySpeaker::roster(i), 3.0, 10 + i as u64))
                .collect(),
        );
        let cfg = PretrainConfig {
            optim: OptimConfig {
                steps: 60,
                batch: 4,
                peak_lr: 2e-3,
                final_lr: 1e-4,
                ..OptimConfig::default()
            },
            segment_seconds: 1.0,
            seed: 3,
        };
        let (_, losses) = pretrain_toy_encoder(&corpus, &tiny_cfg(), &MelConfig::default(), &cfg).unwrap();
        let head: f64 = losses[..5].iter().sum::<f64>() / 5.0;
        let tail: f64 = losses[55..].iter().sum::<f64>() / 5.0;
        assert!(tail < head, "{head} -> {tail}");
    }
}
