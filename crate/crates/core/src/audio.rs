//! Waveform container, mono WAV I/O and band-limited resampling.

use std::path::Path;

use crate::error::{Error, Result};

/// Sample rate used everywhere inside the pipeline.
pub const PIPELINE_RATE: u32 = 16_000;

/// A mono sample sequence with its sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    /// Builds a waveform, rejecting a zero rate and non-finite samples.
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Data("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::Data(format!("non-finite sample at index {i}")));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn zeros(len: usize, sample_rate: u32) -> Self {
        Self {
            samples: vec![0.0; len],
            sample_rate,
        }
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Mean square of the samples; zero for an empty waveform.
    pub fn power(&self) -> f64 {
        mean_square(&self.samples)
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, s| m.max(s.abs()))
    }

    pub fn scaled(&self, gain: f64) -> Self {
        Self {
            samples: self.samples.iter().map(|s| s * gain).collect(),
            sample_rate: self.sample_rate,
        }
    }

    /// Samples `start..start + len` as a new waveform.
    pub fn slice(&self, start: usize, len: usize) -> Self {
        Self {
            samples: self.samples[start..start + len].to_vec(),
            sample_rate: self.sample_rate,
        }
    }

    /// Keeps the central `len` samples, dropping the excess evenly from both
    /// ends (one extra sample from the end when the excess is odd).
    pub fn center_crop(&self, len: usize) -> Self {
        if len >= self.len() {
            return self.clone();
        }
        let start = (self.len() - len) / 2;
        self.slice(start, len)
    }

    pub fn read_wav(path: impl AsRef<Path>) -> Result<Self> {
        read_wav(path.as_ref())
    }

    pub fn write_wav(&self, path: impl AsRef<Path>, format: WavFormat) -> Result<()> {
        write_wav(path.as_ref(), self, format)
    }
}

pub(crate) fn mean_square(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().map(|x| x * x).sum::<f64>() / xs.len() as f64
}

/// Sample encoding used when writing WAV files.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WavFormat {
    Pcm16,
    Float32,
}

fn read_wav(path: &Path) -> Result<Waveform> {
    let mut reader = hound::WavReader::open(path)
        .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
    let spec = reader.spec();
    let channels = spec.channels.max(1) as usize;
    let interleaved: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Float => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()?,
        hound::SampleFormat::Int => {
            let scale = (1i64 << (spec.bits_per_sample - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<std::result::Result<_, _>>()?
        }
    };
    let samples = if channels == 1 {
        interleaved
    } else {
        log::warn!(
            "{}: downmixing {channels} channels to mono",
            path.display()
        );
        interleaved
            .chunks_exact(channels)
            .map(|frame| frame.iter().sum::<f64>() / channels as f64)
            .collect()
    };
    Waveform::new(samples, spec.sample_rate)
}

fn write_wav(path: &Path, wav: &Waveform, format: WavFormat) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: wav.sample_rate,
        bits_per_sample: match format {
            WavFormat::Pcm16 => 16,
            WavFormat::Float32 => 32,
        },
        sample_format: match format {
            WavFormat::Pcm16 => hound::SampleFormat::Int,
            WavFormat::Float32 => hound::SampleFormat::Float,
        },
    };
    let mut writer = hound::WavWriter::create(path, spec)?;
    match format {
        WavFormat::Pcm16 => {
            for &s in &wav.samples {
                let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
                writer.write_sample(v)?;
            }
        }
        WavFormat::Float32 => {
            for &s in &wav.samples {
                writer.write_sample(s as f32)?;
            }
        }
    }
    writer.finalize()?;
    Ok(())
}

const SINC_ZERO_CROSSINGS: usize = 32;
const SINC_ROLLOFF: f64 = 0.94;
const KAISER_BETA: f64 = 9.0;

/// Resamples with a Kaiser-windowed sinc interpolator evaluated as a bank of
/// polyphase filters.
///
/// The output holds `ceil(len * target / source)` samples. Out-of-range input
/// samples are treated as zero.
pub fn resample(wav: &Waveform, target_rate: u32) -> Result<Waveform> {
    if target_rate == 0 {
        return Err(Error::Data("target sample rate must be positive".into()));
    }
    if wav.is_empty() {
        return Err(Error::Data("empty waveform".into()));
    }
    if wav.sample_rate == target_rate {
        return Ok(wav.clone());
    }
    let g = gcd(wav.sample_rate as u64, target_rate as u64);
    let up = (target_rate as u64 / g) as usize;
    let down = (wav.sample_rate as u64 / g) as usize;

    // cutoff in cycles per input sample, relative to the input Nyquist
    let cutoff = SINC_ROLLOFF * (up as f64 / down as f64).min(1.0);
    let half = (SINC_ZERO_CROSSINGS as f64 / cutoff).ceil() as isize;

    let bank = PolyphaseBank::new(up, half, cutoff);
    let x = wav.samples();
    let n_out = (x.len() * up).div_ceil(down);
    let mut out = Vec::with_capacity(n_out);
    for j in 0..n_out {
        let pos = j * down;
        let base = (pos / up) as isize;
        let phase = pos % up;
        let taps = bank.phase(phase);
        let mut acc = 0.0;
        // taps[i] weights input sample base - half + i
        let first = base - half;
        let lo = (-first).max(0) as usize;
        let hi = taps.len().min((x.len() as isize - first).max(0) as usize);
        for i in lo..hi {
            acc += taps[i] * x[(first + i as isize) as usize];
        }
        out.push(acc);
    }
    Waveform::new(out, target_rate)
}

struct PolyphaseBank {
    taps_per_phase: usize,
    taps: Vec<f64>,
}

impl PolyphaseBank {
    fn new(phases: usize, half: isize, cutoff: f64) -> Self {
        let taps_per_phase = (2 * half + 1) as usize;
        let mut taps = Vec::with_capacity(phases * taps_per_phase);
        let norm = bessel_i0(KAISER_BETA);
        for p in 0..phases {
            let frac = p as f64 / phases as f64;
            let start = taps.len();
            for i in 0..taps_per_phase {
                // distance from the output instant to input sample (base - half + i)
                let tau = frac + half as f64 - i as f64;
                let r = tau / (half as f64 + 1.0);
                let w = if r.abs() >= 1.0 {
                    0.0
                } else {
                    bessel_i0(KAISER_BETA * (1.0 - r * r).sqrt()) / norm
                };
                taps.push(cutoff * sinc(cutoff * tau) * w);
            }
            let sum: f64 = taps[start..].iter().sum();
            for t in &mut taps[start..] {
                *t /= sum;
            }
        }
        Self {
            taps_per_phase,
            taps,
        }
    }

    fn phase(&self, p: usize) -> &[f64] {
        &self.taps[p * self.taps_per_phase..(p + 1) * self.taps_per_phase]
    }
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..200 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn tone(freq: f64, rate: u32, secs: f64) -> Waveform {
        let n = (rate as f64 * secs) as usize;
        let s = (0..n)
            .map(|i| (2.0 * PI * freq * i as f64 / rate as f64).sin())
            .collect();
        Waveform::new(s, rate).unwrap()
    }

    #[test]
    fn rejects_non_finite() {
        assert!(Waveform::new(vec![0.0, f64::NAN], 16_000).is_err());
        assert!(Waveform::new(vec![0.0], 0).is_err());
    }

    #[test]
    fn same_rate_is_identity() {
        let w = tone(440.0, 16_000, 0.1);
        assert_eq!(resample(&w, 16_000).unwrap(), w);
    }

    #[test]
    fn empty_input_errors() {
        let w = Waveform::new(vec![], 48_000).unwrap();
        let err = resample(&w, 16_000).unwrap_err();
        assert!(err.to_string().contains("empty waveform"));
    }

    #[test]
    fn one_second_48k_gives_16000_samples() {
        let w = tone(1000.0, 48_000, 1.0);
        let r = resample(&w, 16_000).unwrap();
        assert_eq!(r.len(), 16_000);
        assert_eq!(r.sample_rate(), 16_000);
    }

    #[test]
    fn downsampled_sinusoid_matches_analytic_grid() {
        let w = tone(1000.0, 48_000, 1.0);
        let r = resample(&w, 16_000).unwrap();
        let trim = 400;
        let max_err = (trim..r.len() - trim)
            .map(|j| {
                let expect = (2.0 * PI * 1000.0 * j as f64 / 16_000.0).sin();
                (r.samples()[j] - expect).abs()
            })
            .fold(0.0, f64::max);
        assert!(max_err < 1e-3, "max err {max_err}");
    }

    #[test]
    fn upsampled_sinusoid_matches_analytic_grid() {
        let w = tone(440.0, 16_000, 0.5);
        let r = resample(&w, 44_100).unwrap();
        let trim = 2000;
        let max_err = (trim..r.len() - trim)
            .map(|j| {
                let expect = (2.0 * PI * 440.0 * j as f64 / 44_100.0).sin();
                (r.samples()[j] - expect).abs()
            })
            .fold(0.0, f64::max);
        assert!(max_err < 1e-3, "max err {max_err}");
    }

    #[test]
    fn content_above_new_nyquist_is_suppressed() {
        // 12 kHz cannot be represented at 16 kHz and must not alias to 4 kHz
        let w = tone(12_000.0, 48_000, 0.5);
        let r = resample(&w, 16_000).unwrap();
        let core = &r.samples()[500..r.len() - 500];
        assert!(mean_square(core).sqrt() < 1e-3);
    }

    #[test]
    fn wav_roundtrip_float32_is_exact_for_f32_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.wav");
        let w = Waveform::new(vec![0.25, -0.5, 0.125, 0.0], 16_000).unwrap();
        w.write_wav(&path, WavFormat::Float32).unwrap();
        assert_eq!(Waveform::read_wav(&path).unwrap(), w);
    }

    #[test]
    fn wav_roundtrip_pcm16_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.wav");
        let w = tone(300.0, 16_000, 0.05).scaled(0.5);
        w.write_wav(&path, WavFormat::Pcm16).unwrap();
        let r = Waveform::read_wav(&path).unwrap();
        for (a, b) in w.samples().iter().zip(r.samples()) {
            assert!((a - b).abs() < 1.0 / 32000.0);
        }
    }
}
