//! On-the-fly construction of (noisy, target) training pairs.
//!
//! Every random decision of [`sample_training_pair`] is drawn from its own
//! ChaCha stream derived from the pair seed, so e.g. swapping the RIR corpus
//! never perturbs which speech segment gets picked.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use realfft::RealFftPlanner;
use serde::{Deserialize, Serialize};

use crate::audio::{mean_square, resample, Waveform, PIPELINE_RATE};
use crate::error::{Error, Result};

/// A room impulse response whose direct path is its largest-magnitude tap.
#[derive(Debug, Clone, PartialEq)]
pub struct RoomImpulseResponse {
    taps: Vec<f64>,
    sample_rate: u32,
    direct_path_index: usize,
}

impl RoomImpulseResponse {
    pub fn new(taps: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if taps.iter().any(|t| !t.is_finite()) {
            return Err(Error::Data("non-finite RIR tap".into()));
        }
        let direct_path_index = argmax_abs(&taps)
            .filter(|&i| taps[i] != 0.0)
            .ok_or_else(|| Error::Data("degenerate RIR".into()))?;
        Ok(Self {
            taps,
            sample_rate,
            direct_path_index,
        })
    }

    pub fn from_waveform(wav: &Waveform) -> Result<Self> {
        let wav = resample(wav, PIPELINE_RATE)?;
        Self::new(wav.samples().to_vec(), PIPELINE_RATE)
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn direct_path_index(&self) -> usize {
        self.direct_path_index
    }

    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }
}

fn argmax_abs(xs: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, x) in xs.iter().enumerate() {
        let a = x.abs();
        if best.is_none_or(|(_, b)| a > b) {
            best = Some((i, a));
        }
    }
    best.map(|(i, _)| i)
}

/// Reverberates `dry` and shifts the result so the RIR's direct path lands
/// on lag 0. The output has the same length as `dry`.
pub fn convolve_rir(dry: &Waveform, rir: &RoomImpulseResponse) -> Result<Waveform> {
    if dry.sample_rate() != rir.sample_rate {
        return Err(Error::Data(format!(
            "speech at {} Hz, RIR at {} Hz",
            dry.sample_rate(),
            rir.sample_rate
        )));
    }
    if rir.taps.iter().all(|&t| t == 0.0) {
        return Err(Error::Data("degenerate RIR".into()));
    }
    let full = full_convolution(dry.samples(), &rir.taps)?;
    let d = rir.direct_path_index;
    let out = (0..dry.len())
        .map(|n| full.get(n + d).copied().unwrap_or(0.0))
        .collect();
    Waveform::new(out, dry.sample_rate())
}

fn full_convolution(x: &[f64], h: &[f64]) -> Result<Vec<f64>> {
    if x.is_empty() || h.is_empty() {
        return Ok(Vec::new());
    }
    let out_len = x.len() + h.len() - 1;
    if x.len().min(h.len()) <= 64 {
        let mut y = vec![0.0; out_len];
        for (i, &xi) in x.iter().enumerate() {
            for (j, &hj) in h.iter().enumerate() {
                y[i + j] += xi * hj;
            }
        }
        return Ok(y);
    }
    let n = out_len.next_power_of_two();
    let mut planner = RealFftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let fft_err = |e: realfft::FftError| Error::Data(format!("fft: {e}"));

    let mut a = vec![0.0; n];
    a[..x.len()].copy_from_slice(x);
    let mut fa = fwd.make_output_vec();
    fwd.process(&mut a, &mut fa).map_err(fft_err)?;

    let mut b = vec![0.0; n];
    b[..h.len()].copy_from_slice(h);
    let mut fb = fwd.make_output_vec();
    fwd.process(&mut b, &mut fb).map_err(fft_err)?;

    for (p, q) in fa.iter_mut().zip(&fb) {
        *p *= q;
    }
    fa[0].im = 0.0;
    let last = fa.len() - 1;
    fa[last].im = 0.0;
    let mut y = inv.make_output_vec();
    inv.process(&mut fa, &mut y).map_err(fft_err)?;
    y.truncate(out_len);
    let scale = 1.0 / n as f64;
    y.iter_mut().for_each(|v| *v *= scale);
    Ok(y)
}

/// Number of RIR taps (counted from the direct path) kept by an early window.
pub fn early_window_taps(window_ms: f64, sample_rate: u32) -> usize {
    ((window_ms * sample_rate as f64 / 1000.0).round() as usize).max(1)
}

/// Zeroes every tap at or after `direct_path_index + window` samples. Taps
/// before that point, including everything preceding the direct path, are
/// kept unchanged. The direct path itself always survives.
pub fn truncate_rir_early(rir: &RoomImpulseResponse, window_ms: f64) -> Result<RoomImpulseResponse> {
    if !(window_ms > 0.0) {
        return Err(Error::Config("early window must be positive".into()));
    }
    let keep = rir
        .direct_path_index
        .saturating_add(early_window_taps(window_ms, rir.sample_rate));
    let taps = rir
        .taps
        .iter()
        .enumerate()
        .map(|(i, &t)| if i < keep { t } else { 0.0 })
        .collect();
    Ok(RoomImpulseResponse {
        taps,
        sample_rate: rir.sample_rate,
        direct_path_index: rir.direct_path_index,
    })
}

/// Gain `g` such that `10 log10(P_speech / P_{g * noise}) == snr_db`.
pub fn noise_gain_for_snr(speech: &Waveform, noise: &Waveform, snr_db: f64) -> Result<f64> {
    if speech.len() != noise.len() {
        return Err(Error::Shape(format!(
            "speech has {} samples, noise {}",
            speech.len(),
            noise.len()
        )));
    }
    let ps = speech.power();
    let pn = noise.power();
    if !(ps > 0.0 && pn > 0.0) {
        return Err(Error::Data("degenerate mixing input".into()));
    }
    Ok((ps / (pn * 10f64.powf(snr_db / 10.0))).sqrt())
}

/// `speech + g * noise` with `g` from [`noise_gain_for_snr`].
pub fn mix_at_snr(speech: &Waveform, noise: &Waveform, snr_db: f64) -> Result<Waveform> {
    let g = noise_gain_for_snr(speech, noise, snr_db)?;
    add(speech, &noise.scaled(g))
}

fn add(a: &Waveform, b: &Waveform) -> Result<Waveform> {
    let s = a.samples().iter().zip(b.samples()).map(|(x, y)| x + y).collect();
    Waveform::new(s, a.sample_rate())
}

/// What the regression target contains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetMode {
    /// The source utterance, untouched.
    Dry,
    /// The source convolved with the RIR truncated after the early window.
    EarlyReflection,
}

/// Mixture-simulation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureConfig {
    pub snr_low: f64,
    pub snr_high: f64,
    pub reverb_prob: f64,
    pub target_mode: TargetMode,
    pub early_window_ms: f64,
    pub segment_seconds: f64,
    pub max_retries: usize,
}

impl Default for MixtureConfig {
    fn default() -> Self {
        Self {
            snr_low: -5.0,
            snr_high: 15.0,
            reverb_prob: 0.8,
            target_mode: TargetMode::Dry,
            early_window_ms: 50.0,
            segment_seconds: 2.0,
            max_retries: 10,
        }
    }
}

impl MixtureConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("mixture config: {m}")));
        if !(self.snr_low < self.snr_high) {
            return bad("snr_low must be below snr_high");
        }
        if !(0.0..=1.0).contains(&self.reverb_prob) {
            return bad("reverb_prob must lie in [0, 1]");
        }
        if !(self.early_window_ms > 0.0) {
            return bad("early_window_ms must be positive");
        }
        if !(self.segment_seconds > 0.0) {
            return bad("segment_seconds must be positive");
        }
        Ok(())
    }

    pub fn segment_samples(&self) -> usize {
        (self.segment_seconds * PIPELINE_RATE as f64).round() as usize
    }
}

/// The realised random choices behind one pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub snr_db: f64,
    pub apply_reverb: bool,
    pub target_mode: TargetMode,
    pub early_window_ms: f64,
}

/// A simulated training example.
///
/// `noisy == speech_component + noise_component` sample for sample, and the
/// two components are kept so the realised SNR can be re-measured.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub noisy: Waveform,
    pub target: Waveform,
    pub speech_component: Waveform,
    pub noise_component: Waveform,
    pub spec: MixtureSpec,
    pub seed: u64,
    pub speech_index: usize,
    pub noise_index: usize,
    pub rir_index: Option<usize>,
}

/// Read-only indexed collection of recordings.
pub trait AudioCorpus: Send + Sync {
    fn len(&self) -> usize;
    fn load(&self, index: usize) -> Result<Waveform>;
    fn label(&self, index: usize) -> String {
        format!("#{index}")
    }
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Corpus backed by waveforms held in memory.
#[derive(Debug, Clone, Default)]
pub struct InMemoryCorpus {
    items: Vec<(String, Arc<Waveform>)>,
}

impl InMemoryCorpus {
    pub fn new(items: Vec<Waveform>) -> Self {
        Self {
            items: items
                .into_iter()
                .enumerate()
                .map(|(i, w)| (format!("#{i}"), Arc::new(w)))
                .collect(),
        }
    }

    pub fn with_labels(items: Vec<(String, Waveform)>) -> Self {
        Self {
            items: items.into_iter().map(|(l, w)| (l, Arc::new(w))).collect(),
        }
    }
}

impl AudioCorpus for InMemoryCorpus {
    fn len(&self) -> usize {
        self.items.len()
    }

    fn load(&self, index: usize) -> Result<Waveform> {
        Ok(self.items[index].1.as_ref().clone())
    }

    fn label(&self, index: usize) -> String {
        self.items[index].0.clone()
    }
}

/// Corpus listed in a plain-text manifest, one WAV path per line. Relative
/// paths resolve against the manifest's directory; blank lines and lines
/// starting with `#` are skipped. Files are resampled to 16 kHz on load.
#[derive(Debug, Clone)]
pub struct ManifestCorpus {
    paths: Vec<PathBuf>,
}

impl ManifestCorpus {
    pub fn open(manifest: impl AsRef<Path>) -> Result<Self> {
        let manifest = manifest.as_ref();
        let paths = read_manifest(manifest)?;
        if paths.is_empty() {
            return Err(Error::Data(format!("{} lists no files", manifest.display())));
        }
        Ok(Self { paths })
    }

    pub fn paths(&self) -> &[PathBuf] {
        &self.paths
    }
}

/// Reads a one-path-per-line manifest.
pub fn read_manifest(manifest: &Path) -> Result<Vec<PathBuf>> {
    let text = std::fs::read_to_string(manifest).map_err(|e| Error::io(manifest, e))?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| {
            let p = PathBuf::from(l);
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        })
        .collect())
}

impl AudioCorpus for ManifestCorpus {
    fn len(&self) -> usize {
        self.paths.len()
    }

    fn load(&self, index: usize) -> Result<Waveform> {
        let wav = Waveform::read_wav(&self.paths[index])?;
        resample(&wav, PIPELINE_RATE)
    }

    fn label(&self, index: usize) -> String {
        self.paths[index].display().to_string()
    }
}

/// Independent random stream `stream` of pair `seed`.
pub fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const STREAM_SPEECH: u64 = 1;
const STREAM_NOISE: u64 = 2;
const STREAM_REVERB: u64 = 3;
const STREAM_RIR: u64 = 4;
const STREAM_SNR: u64 = 5;

/// Draws one training pair. Fully determined by `seed`, the corpora and
/// `cfg`.
pub fn sample_training_pair(
    seed: u64,
    speech: &dyn AudioCorpus,
    noise: &dyn AudioCorpus,
    rirs: &dyn AudioCorpus,
    cfg: &MixtureConfig,
) -> Result<TrainingPair> {
    sample_pair(seed, speech, noise, rirs, cfg, None)
}

/// Like [`sample_training_pair`] but mixes at exactly `snr_db`. Used to
/// build fixed-SNR test sets.
pub fn sample_pair_at_snr(
    seed: u64,
    speech: &dyn AudioCorpus,
    noise: &dyn AudioCorpus,
    rirs: &dyn AudioCorpus,
    cfg: &MixtureConfig,
    snr_db: f64,
) -> Result<TrainingPair> {
    if !snr_db.is_finite() {
        return Err(Error::Config(format!("snr {snr_db} is not finite")));
    }
    sample_pair(seed, speech, noise, rirs, cfg, Some(snr_db))
}

fn sample_pair(
    seed: u64,
    speech: &dyn AudioCorpus,
    noise: &dyn AudioCorpus,
    rirs: &dyn AudioCorpus,
    cfg: &MixtureConfig,
    fixed_snr: Option<f64>,
) -> Result<TrainingPair> {
    cfg.validate()?;
    if speech.is_empty() || noise.is_empty() {
        return Err(Error::Data("speech and noise corpora must be non-empty".into()));
    }
    let seg = cfg.segment_samples();

    let mut rng = substream(seed, STREAM_SPEECH);
    let (speech_index, dry) = draw_speech_segment(&mut rng, speech, seg, cfg.max_retries)?;

    let mut rng = substream(seed, STREAM_NOISE);
    let noise_index = rng.random_range(0..noise.len());
    let noise_seg = fit_noise(&mut rng, &noise.load(noise_index)?, seg)?;

    let apply_reverb = !rirs.is_empty() && substream(seed, STREAM_REVERB).random_bool(cfg.reverb_prob);
    let snr_db = match fixed_snr {
        Some(s) => s,
        None => substream(seed, STREAM_SNR).random_range(cfg.snr_low..cfg.snr_high),
    };

    let (rir_index, reverberant, target) = if apply_reverb {
        let idx = substream(seed, STREAM_RIR).random_range(0..rirs.len());
        let rir = RoomImpulseResponse::from_waveform(&rirs.load(idx)?)?;
        let wet = convolve_rir(&dry, &rir)?;
        let target = match cfg.target_mode {
            TargetMode::Dry => dry.clone(),
            TargetMode::EarlyReflection => {
                convolve_rir(&dry, &truncate_rir_early(&rir, cfg.early_window_ms)?)?
            }
        };
        (Some(idx), wet, target)
    } else {
        (None, dry.clone(), dry)
    };

    let g = noise_gain_for_snr(&reverberant, &noise_seg, snr_db)?;
    let mut speech_component = reverberant;
    let mut noise_component = noise_seg.scaled(g);
    let mut noisy = add(&speech_component, &noise_component)?;

    // The target is never rescaled: the dry target must not depend on the
    // RIR draw. Only the input side is attenuated.
    let peak = noisy.peak();
    if peak > 1.0 {
        let k = 1.0 / peak;
        noisy = noisy.scaled(k);
        speech_component = speech_component.scaled(k);
        noise_component = noise_component.scaled(k);
    }

    Ok(TrainingPair {
        noisy,
        target,
        speech_component,
        noise_component,
        spec: MixtureSpec {
            snr_db,
            apply_reverb,
            target_mode: cfg.target_mode,
            early_window_ms: cfg.early_window_ms,
        },
        seed,
        speech_index,
        noise_index,
        rir_index,
    })
}

fn draw_speech_segment(
    rng: &mut ChaCha8Rng,
    corpus: &dyn AudioCorpus,
    seg: usize,
    max_retries: usize,
) -> Result<(usize, Waveform)> {
    for _ in 0..=max_retries {
        let idx = rng.random_range(0..corpus.len());
        let utt = corpus.load(idx)?;
        if utt.len() >= seg {
            let start = rng.random_range(0..=utt.len() - seg);
            return Ok((idx, utt.slice(start, seg)));
        }
    }
    Err(Error::Data(format!(
        "no utterance of at least {seg} samples after {max_retries} retries"
    )))
}

/// Crops long noise at a random offset; tiles short noise from a random
/// circular offset.
fn fit_noise(rng: &mut ChaCha8Rng, noise: &Waveform, seg: usize) -> Result<Waveform> {
    if noise.is_empty() {
        return Err(Error::Data("empty noise recording".into()));
    }
    if noise.len() >= seg {
        let start = rng.random_range(0..=noise.len() - seg);
        return Ok(noise.slice(start, seg));
    }
    let off = rng.random_range(0..noise.len());
    let s = noise.samples();
    let tiled = (0..seg).map(|i| s[(off + i) % s.len()]).collect();
    Waveform::new(tiled, noise.sample_rate())
}

/// Seed for item `index` of a stream rooted at `seed`.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    substream(seed ^ 0x9e37_79b9_7f4a_7c15, index).next_u64()
}

/// Seed derived from a run seed and a string identifier.
pub fn seed_for_id(seed: u64, id: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in id.bytes() {
        h = (h ^ b as u64).wrapping_mul(0x0100_0000_01b3);
    }
    derive_seed(seed, h)
}

/// Indexable supply of training pairs. Item `i` is a pure function of `i`,
/// so any run can be resumed by index.
pub trait PairSource: Send + Sync {
    fn pair(&self, index: u64) -> Result<TrainingPair>;
}

/// Pairs simulated on demand from corpora.
pub struct SimulatedPairs<'a> {
    pub speech: &'a dyn AudioCorpus,
    pub noise: &'a dyn AudioCorpus,
    pub rirs: &'a dyn AudioCorpus,
    pub cfg: MixtureConfig,
    pub seed: u64,
}

impl PairSource for SimulatedPairs<'_> {
    fn pair(&self, index: u64) -> Result<TrainingPair> {
        sample_training_pair(
            derive_seed(self.seed, index),
            self.speech,
            self.noise,
            self.rirs,
            &self.cfg,
        )
    }
}

/// Replaces the noisy side of every pair with its target.
pub struct Noiseless<S>(pub S);

impl<S: PairSource> PairSource for Noiseless<S> {
    fn pair(&self, index: u64) -> Result<TrainingPair> {
        let mut p = self.0.pair(index)?;
        p.noisy = p.target.clone();
        p.speech_component = p.target.clone();
        p.noise_component = Waveform::zeros(p.target.len(), p.target.sample_rate());
        Ok(p)
    }
}

/// Mean-square power ratio in dB.
pub fn power_ratio_db(signal: &[f64], noise: &[f64]) -> f64 {
    10.0 * (mean_square(signal) / mean_square(noise)).log10()
}
