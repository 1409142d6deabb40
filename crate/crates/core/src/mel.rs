//! STFT / log-Mel analysis and Griffin-Lim inversion.
//!
//! Framing convention: the signal is reflection-padded by `n_fft / 2` on both
//! sides and frame `k` is centred on sample `k * hop`. Only the first
//! `floor(len / hop)` frames are kept, so one second at 16 kHz with hop 320
//! gives exactly 50 frames, the same count the phonetic encoder produces.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use realfft::num_complex::Complex;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use serde::{Deserialize, Serialize};

use crate::audio::Waveform;
use crate::error::{Error, Result};

/// Log-Mel analysis parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MelConfig {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub win_length: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub f_min: f64,
    pub f_max: f64,
    /// Clamp applied to Mel magnitudes before the natural log.
    pub log_floor: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            n_fft: 1280,
            win_length: 1280,
            hop: 320,
            n_mels: 100,
            f_min: 0.0,
            f_max: 8000.0,
            log_floor: 1e-5,
        }
    }
}

impl MelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("mel config: {m}")));
        if self.sample_rate == 0 || self.hop == 0 || self.n_fft < 2 || self.n_mels == 0 {
            return bad("sizes must be positive");
        }
        if self.win_length != self.n_fft {
            return bad("win_length must equal n_fft");
        }
        if self.sample_rate as usize % self.hop != 0 {
            return bad("hop must divide the sample rate");
        }
        if !(self.f_min >= 0.0 && self.f_min < self.f_max) {
            return bad("need 0 <= f_min < f_max");
        }
        if self.f_max > self.sample_rate as f64 / 2.0 {
            return bad("f_max above Nyquist");
        }
        if !(self.log_floor > 0.0) {
            return bad("log_floor must be positive");
        }
        Ok(())
    }

    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    pub fn frame_rate(&self) -> f64 {
        self.sample_rate as f64 / self.hop as f64
    }

    /// Number of frames produced for `n_samples` of input.
    pub fn frames_for(&self, n_samples: usize) -> usize {
        n_samples / self.hop
    }

    pub fn log_floor_value(&self) -> f64 {
        self.log_floor.ln()
    }
}

/// A frames x n_mels matrix of natural-log Mel magnitudes, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    values: Vec<f64>,
    frames: usize,
    n_mels: usize,
    frame_rate: f64,
}

impl MelSpectrogram {
    pub fn from_values(values: Vec<f64>, frames: usize, n_mels: usize, frame_rate: f64) -> Result<Self> {
        if values.len() != frames * n_mels {
            return Err(Error::Shape(format!(
                "{} values for a {frames} x {n_mels} spectrogram",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite Mel value".into()));
        }
        Ok(Self {
            values,
            frames,
            n_mels,
            frame_rate,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn n_mels(&self) -> usize {
        self.n_mels
    }

    pub fn frame_rate(&self) -> f64 {
        self.frame_rate
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, frame: usize) -> &[f64] {
        &self.values[frame * self.n_mels..(frame + 1) * self.n_mels]
    }

    pub fn get(&self, frame: usize, mel: usize) -> f64 {
        self.values[frame * self.n_mels + mel]
    }

    /// Keeps the central `frames` rows.
    pub fn center_crop(&self, frames: usize) -> Self {
        if frames >= self.frames {
            return self.clone();
        }
        let start = (self.frames - frames) / 2;
        Self {
            values: self.values[start * self.n_mels..(start + frames) * self.n_mels].to_vec(),
            frames,
            n_mels: self.n_mels,
            frame_rate: self.frame_rate,
        }
    }
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Filter edge frequencies: `n_mels + 2` points equally spaced on the Mel
/// scale. Filter `i` rises from `edges[i]`, peaks at `edges[i + 1]` and falls
/// to zero at `edges[i + 2]`.
pub fn mel_edges(cfg: &MelConfig) -> Vec<f64> {
    let lo = hz_to_mel(cfg.f_min);
    let hi = hz_to_mel(cfg.f_max);
    let n = cfg.n_mels + 1;
    (0..=n)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / n as f64))
        .collect()
}

/// Triangular HTK filterbank, `n_mels x (n_fft/2 + 1)`, row-major, peak 1.
pub fn mel_filterbank(cfg: &MelConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let edges = mel_edges(cfg);
    let n_bins = cfg.n_bins();
    let bin_hz = cfg.sample_rate as f64 / cfg.n_fft as f64;
    let mut fb = vec![0.0; cfg.n_mels * n_bins];
    for m in 0..cfg.n_mels {
        let (l, c, r) = (edges[m], edges[m + 1], edges[m + 2]);
        for k in 0..n_bins {
            let f = k as f64 * bin_hz;
            let w = ((f - l) / (c - l)).min((r - f) / (r - c));
            if w > 0.0 {
                fb[m * n_bins + k] = w;
            }
        }
    }
    Ok(fb)
}

/// Periodic Hann window.
pub fn hann_window(len: usize) -> Vec<f64> {
    (0..len)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / len as f64).cos())
        .collect()
}

/// Short-time Fourier transform with the centred framing convention.
pub struct Stft {
    n_fft: usize,
    hop: usize,
    window: Vec<f64>,
    forward: Arc<dyn RealToComplex<f64>>,
    inverse: Arc<dyn ComplexToReal<f64>>,
}

impl Stft {
    pub fn new(n_fft: usize, hop: usize) -> Self {
        let mut planner = RealFftPlanner::<f64>::new();
        Self {
            n_fft,
            hop,
            window: hann_window(n_fft),
            forward: planner.plan_fft_forward(n_fft),
            inverse: planner.plan_fft_inverse(n_fft),
        }
    }

    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    /// Complex spectra of the first `len / hop` centred frames.
    pub fn analyze(&self, x: &[f64]) -> Result<Vec<Vec<Complex<f64>>>> {
        let pad = self.n_fft / 2;
        if x.len() <= pad {
            return Err(Error::Data("input too short".into()));
        }
        let padded = reflect_pad(x, pad);
        let frames = x.len() / self.hop;
        let mut buf = vec![0.0; self.n_fft];
        let mut scratch = self.forward.make_scratch_vec();
        let mut out = Vec::with_capacity(frames);
        for k in 0..frames {
            let seg = &padded[k * self.hop..k * self.hop + self.n_fft];
            for ((b, s), w) in buf.iter_mut().zip(seg).zip(&self.window) {
                *b = s * w;
            }
            let mut spec = self.forward.make_output_vec();
            self.forward
                .process_with_scratch(&mut buf, &mut spec, &mut scratch)
                .map_err(|e| Error::Data(format!("fft: {e}")))?;
            out.push(spec);
        }
        Ok(out)
    }

    /// Weighted overlap-add inverse producing `frames * hop` samples.
    pub fn synthesize(&self, spectra: &[Vec<Complex<f64>>]) -> Result<Vec<f64>> {
        let frames = spectra.len();
        let pad = self.n_fft / 2;
        let total = frames * self.hop + self.n_fft;
        let mut acc = vec![0.0; total];
        let mut wsum = vec![0.0; total];
        let mut buf = self.inverse.make_input_vec();
        let mut frame = self.inverse.make_output_vec();
        let mut scratch = self.inverse.make_scratch_vec();
        let scale = 1.0 / self.n_fft as f64;
        for (k, spec) in spectra.iter().enumerate() {
            buf.copy_from_slice(spec);
            buf[0].im = 0.0;
            let last = buf.len() - 1;
            buf[last].im = 0.0;
            self.inverse
                .process_with_scratch(&mut buf, &mut frame, &mut scratch)
                .map_err(|e| Error::Data(format!("ifft: {e}")))?;
            let off = k * self.hop;
            for (i, (&y, &w)) in frame.iter().zip(&self.window).enumerate() {
                acc[off + i] += y * scale * w;
                wsum[off + i] += w * w;
            }
        }
        Ok((0..frames * self.hop)
            .map(|i| {
                let w = wsum[i + pad];
                if w > 1e-8 {
                    acc[i + pad] / w
                } else {
                    0.0
                }
            })
            .collect())
    }
}

fn reflect_pad(x: &[f64], pad: usize) -> Vec<f64> {
    let n = x.len();
    let mut out = Vec::with_capacity(n + 2 * pad);
    out.extend((1..=pad).rev().map(|i| x[i]));
    out.extend_from_slice(x);
    out.extend((0..pad).map(|i| x[n - 2 - i]));
    out
}

/// Log-Mel analyzer holding its FFT plans and filterbank.
pub struct MelAnalyzer {
    cfg: MelConfig,
    stft: Stft,
    filterbank: Vec<f64>,
}

impl MelAnalyzer {
    pub fn new(cfg: &MelConfig) -> Result<Self> {
        let filterbank = mel_filterbank(cfg)?;
        Ok(Self {
            cfg: cfg.clone(),
            stft: Stft::new(cfg.n_fft, cfg.hop),
            filterbank,
        })
    }

    pub fn config(&self) -> &MelConfig {
        &self.cfg
    }

    pub fn filterbank(&self) -> &[f64] {
        &self.filterbank
    }

    pub fn log_mel(&self, wav: &Waveform) -> Result<MelSpectrogram> {
        let cfg = &self.cfg;
        if wav.sample_rate() != cfg.sample_rate {
            return Err(Error::Data(format!(
                "log_mel expects {} Hz input, got {} Hz",
                cfg.sample_rate,
                wav.sample_rate()
            )));
        }
        if wav.len() < cfg.n_fft {
            return Err(Error::Data("input too short".into()));
        }
        let spectra = self.stft.analyze(wav.samples())?;
        let mags: Vec<Vec<f64>> = spectra
            .iter()
            .map(|s| s.iter().map(|c| c.norm()).collect())
            .collect();
        self.mel_from_magnitudes(&mags)
    }

    fn mel_from_magnitudes(&self, mags: &[Vec<f64>]) -> Result<MelSpectrogram> {
        let n_bins = self.cfg.n_bins();
        let floor = self.cfg.log_floor;
        let mut values = Vec::with_capacity(mags.len() * self.cfg.n_mels);
        for mag in mags {
            for m in 0..self.cfg.n_mels {
                let row = &self.filterbank[m * n_bins..(m + 1) * n_bins];
                let e: f64 = row.iter().zip(mag).map(|(w, a)| w * a).sum();
                values.push(e.max(floor).ln());
            }
        }
        MelSpectrogram::from_values(values, mags.len(), self.cfg.n_mels, self.cfg.frame_rate())
    }
}

/// Convenience wrapper building a one-shot [`MelAnalyzer`].
pub fn log_mel(wav: &Waveform, cfg: &MelConfig) -> Result<MelSpectrogram> {
    MelAnalyzer::new(cfg)?.log_mel(wav)
}

/// Mel-to-waveform inversion. Implementations must be deterministic for a
/// fixed seed.
pub trait Vocoder: Send + Sync {
    fn invert(&self, mel: &MelSpectrogram, seed: u64) -> Result<Waveform>;
}

/// Griffin-Lim phase reconstruction on top of a filterbank pseudo-inverse.
pub struct GriffinLim {
    cfg: MelConfig,
    stft: Stft,
    pinv: Vec<f64>,
    iters: usize,
}

impl GriffinLim {
    pub fn new(cfg: &MelConfig, iters: usize) -> Result<Self> {
        if iters == 0 {
            return Err(Error::Config("griffin-lim needs at least one iteration".into()));
        }
        let fb = mel_filterbank(cfg)?;
        let n_bins = cfg.n_bins();
        let m = nalgebra::DMatrix::from_row_slice(cfg.n_mels, n_bins, &fb);
        let pinv = m
            .pseudo_inverse(1e-10)
            .map_err(|e| Error::Data(format!("filterbank pseudo-inverse: {e}")))?;
        // store row-major n_bins x n_mels
        let mut flat = Vec::with_capacity(n_bins * cfg.n_mels);
        for r in 0..n_bins {
            for c in 0..cfg.n_mels {
                flat.push(pinv[(r, c)]);
            }
        }
        Ok(Self {
            cfg: cfg.clone(),
            stft: Stft::new(cfg.n_fft, cfg.hop),
            pinv: flat,
            iters,
        })
    }

    /// Linear magnitudes recovered from a log-Mel matrix, clamped at zero.
    fn magnitudes(&self, mel: &MelSpectrogram) -> Vec<Vec<f64>> {
        let n_mels = self.cfg.n_mels;
        let n_bins = self.cfg.n_bins();
        (0..mel.frames())
            .map(|f| {
                let lin: Vec<f64> = mel.row(f).iter().map(|v| v.exp()).collect();
                (0..n_bins)
                    .map(|k| {
                        let row = &self.pinv[k * n_mels..(k + 1) * n_mels];
                        row.iter().zip(&lin).map(|(p, e)| p * e).sum::<f64>().max(0.0)
                    })
                    .collect()
            })
            .collect()
    }

    pub fn invert(&self, mel: &MelSpectrogram, seed: u64) -> Result<Waveform> {
        if mel.n_mels() != self.cfg.n_mels {
            return Err(Error::Shape(format!(
                "mel has {} bins, config expects {}",
                mel.n_mels(),
                self.cfg.n_mels
            )));
        }
        if mel.frames() * self.cfg.hop <= self.cfg.n_fft / 2 {
            return Err(Error::Data("too few frames to invert".into()));
        }
        let mags = self.magnitudes(mel);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut phases: Vec<Vec<Complex<f64>>> = mags
            .iter()
            .map(|m| {
                m.iter()
                    .map(|_| Complex::from_polar(1.0, rng.random_range(0.0..2.0 * PI)))
                    .collect()
            })
            .collect();

        let combine = |phases: &[Vec<Complex<f64>>]| -> Vec<Vec<Complex<f64>>> {
            mags.iter()
                .zip(phases)
                .map(|(m, p)| m.iter().zip(p).map(|(a, u)| u * *a).collect())
                .collect()
        };

        for _ in 0..self.iters {
            let signal = self.stft.synthesize(&combine(&phases))?;
            let spectra = self.stft.analyze(&signal)?;
            for (p, s) in phases.iter_mut().zip(&spectra) {
                for (u, c) in p.iter_mut().zip(s) {
                    let n = c.norm();
                    *u = if n > 1e-12 { c / n } else { Complex::new(1.0, 0.0) };
                }
            }
        }
        let signal = self.stft.synthesize(&combine(&phases))?;
        Waveform::new(signal, self.cfg.sample_rate)
    }
}

impl Vocoder for GriffinLim {
    fn invert(&self, mel: &MelSpectrogram, seed: u64) -> Result<Waveform> {
        GriffinLim::invert(self, mel, seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(freq: f64, secs: f64, amp: f64) -> Waveform {
        let n = (16_000.0 * secs) as usize;
        Waveform::new(
            (0..n)
                .map(|i| amp * (2.0 * PI * freq * i as f64 / 16_000.0).sin())
                .collect(),
            16_000,
        )
        .unwrap()
    }

    #[test]
    fn frame_count_law() {
        let cfg = MelConfig::default();
        for (n, expect) in [(16_000, 50), (32_000, 100), (16_001, 50)] {
            let w = Waveform::zeros(n, 16_000);
            let m = log_mel(&w, &cfg).unwrap();
            assert_eq!(m.frames(), expect);
            assert_eq!(m.frames(), cfg.frames_for(n));
            assert_eq!(m.n_mels(), 100);
        }
    }

    #[test]
    fn silence_clamps_to_floor() {
        let cfg = MelConfig::default();
        let m = log_mel(&Waveform::zeros(16_000, 16_000), &cfg).unwrap();
        assert!(m.values().iter().all(|&v| v == cfg.log_floor.ln()));
    }

    #[test]
    fn wrong_rate_and_short_input_error() {
        let cfg = MelConfig::default();
        assert!(log_mel(&Waveform::zeros(16_000, 8_000), &cfg).is_err());
        let err = log_mel(&Waveform::zeros(1000, 16_000), &cfg).unwrap_err();
        assert!(err.to_string().contains("input too short"));
    }

    #[test]
    fn sinusoid_peaks_at_nearest_filter_center() {
        let cfg = MelConfig::default();
        let m = log_mel(&tone(1000.0, 1.0, 0.5), &cfg).unwrap();
        // independent center computation straight from the HTK formula
        let lo = 0.0f64;
        let hi = 2595.0 * (1.0f64 + 8000.0 / 700.0).log10();
        let centers: Vec<f64> = (1..=100)
            .map(|i| 700.0 * (10f64.powf((lo + (hi - lo) * i as f64 / 101.0) / 2595.0) - 1.0))
            .collect();
        let nearest = (0..100)
            .min_by(|&a, &b| {
                (centers[a] - 1000.0)
                    .abs()
                    .partial_cmp(&(centers[b] - 1000.0).abs())
                    .unwrap()
            })
            .unwrap();
        for f in 0..m.frames() {
            let row = m.row(f);
            let argmax = (0..100)
                .max_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap())
                .unwrap();
            assert_eq!(argmax, nearest, "frame {f}");
        }
    }

    #[test]
    fn filterbank_rows_are_nonempty_and_ordered() {
        let cfg = MelConfig::default();
        let fb = mel_filterbank(&cfg).unwrap();
        let n_bins = cfg.n_bins();
        let support: Vec<(usize, usize)> = (0..cfg.n_mels)
            .map(|m| {
                let row = &fb[m * n_bins..(m + 1) * n_bins];
                assert!(row.iter().all(|&w| w >= 0.0));
                let first = row.iter().position(|&w| w > 0.0).expect("empty filter");
                let last = row.iter().rposition(|&w| w > 0.0).unwrap();
                (first, last)
            })
            .collect();
        for m in 1..support.len() {
            assert!(support[m].0 >= support[m - 1].0);
            assert!(support[m].1 >= support[m - 1].1);
            if m >= 2 {
                // no overlap beyond the immediate neighbour
                assert!(support[m].0 > support[m - 2].1, "filter {m}");
            }
        }
    }

    #[test]
    fn filterbank_sum_positive_inside_band() {
        let cfg = MelConfig::default();
        let fb = mel_filterbank(&cfg).unwrap();
        let n_bins = cfg.n_bins();
        let bin_hz = 16_000.0 / 1280.0;
        // every interior bin falls strictly inside some triangle, so the sum
        // must be positive; check against the independent edge list
        for k in 1..n_bins - 1 {
            let f = k as f64 * bin_hz;
            let total: f64 = (0..cfg.n_mels).map(|m| fb[m * n_bins + k]).sum();
            assert!(total > 0.0, "bin {k} ({f} Hz)");
        }
    }

    #[test]
    fn louder_input_never_lowers_any_entry() {
        let cfg = MelConfig::default();
        let w = tone(440.0, 0.5, 0.1);
        let a = log_mel(&w, &cfg).unwrap();
        let b = log_mel(&w.scaled(3.0), &cfg).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!(y >= x);
        }
    }

    #[test]
    fn stft_roundtrip_reconstructs_interior() {
        let stft = Stft::new(1280, 320);
        let w = tone(523.0, 0.5, 0.3);
        let spec = stft.analyze(w.samples()).unwrap();
        let y = stft.synthesize(&spec).unwrap();
        assert_eq!(y.len(), spec.len() * 320);
        for i in 0..y.len() {
            assert!((y[i] - w.samples()[i]).abs() < 1e-9, "sample {i}");
        }
    }

    #[test]
    fn griffin_lim_recovers_tone_frequency() {
        let cfg = MelConfig::default();
        let m = log_mel(&tone(1000.0, 1.0, 0.5), &cfg).unwrap();
        let gl = GriffinLim::new(&cfg, 64).unwrap();
        let out = gl.invert(&m, 7).unwrap();
        assert_eq!(out.len(), 16_000);
        // peak-pick a full-length spectrum of the interior
        let x = &out.samples()[1600..14400];
        let n = x.len();
        let mut planner = RealFftPlanner::<f64>::new();
        let fft = planner.plan_fft_forward(n);
        let win = hann_window(n);
        let mut buf: Vec<f64> = x.iter().zip(&win).map(|(a, w)| a * w).collect();
        let mut spec = fft.make_output_vec();
        fft.process(&mut buf, &mut spec).unwrap();
        let peak = (0..spec.len())
            .max_by(|&a, &b| spec[a].norm().partial_cmp(&spec[b].norm()).unwrap())
            .unwrap();
        let freq = peak as f64 * 16_000.0 / n as f64;
        // one bin of the 1280-point analysis DFT
        assert!((freq - 1000.0).abs() <= 16_000.0 / 1280.0, "peak {freq}");
    }

    #[test]
    fn griffin_lim_floor_gives_silence() {
        let cfg = MelConfig::default();
        let m = log_mel(&Waveform::zeros(16_000, 16_000), &cfg).unwrap();
        let out = GriffinLim::new(&cfg, 8).unwrap().invert(&m, 1).unwrap();
        assert!(out.power().sqrt() < 1e-3);
    }

    #[test]
    fn griffin_lim_is_deterministic() {
        let cfg = MelConfig::default();
        let m = log_mel(&tone(300.0, 0.5, 0.2), &cfg).unwrap();
        let gl = GriffinLim::new(&cfg, 4).unwrap();
        let a = gl.invert(&m, 11).unwrap();
        let b = gl.invert(&m, 11).unwrap();
        assert_eq!(a.samples(), b.samples());
    }
}
