//! Synthetic stand-ins for speech, noise and RIR corpora.
//!
//! "Speech" here is a harmonic source shaped by a sequence of two-formant
//! vowel envelopes with occasional fricative bursts and pauses. Each speaker
//! has its own pitch range and formant scaling, so utterances differ in both
//! content (the vowel sequence) and identity. Nothing here is meant to sound
//! like speech; it only has to carry time-varying spectral content for the
//! models to recover.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::audio::{Waveform, PIPELINE_RATE};

const SR: f64 = PIPELINE_RATE as f64;

/// Two-formant vowel table (Hz).
const VOWELS: [(f64, f64); 8] = [
    (730.0, 1090.0),
    (270.0, 2290.0),
    (300.0, 870.0),
    (530.0, 1840.0),
    (660.0, 1720.0),
    (490.0, 1350.0),
    (570.0, 840.0),
    (440.0, 1020.0),
];

/// Voice characteristics of one synthetic speaker.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToySpeaker {
    pub f0: f64,
    pub formant_scale: f64,
    pub tilt_db_per_octave: f64,
}

impl ToySpeaker {
    /// A small fixed roster; indices wrap around.
    pub fn roster(index: usize) -> Self {
        const ROSTER: [ToySpeaker; 4] = [
            ToySpeaker { f0: 115.0, formant_scale: 1.0, tilt_db_per_octave: -9.0 },
            ToySpeaker { f0: 210.0, formant_scale: 1.15, tilt_db_per_octave: -7.0 },
            ToySpeaker { f0: 150.0, formant_scale: 1.07, tilt_db_per_octave: -10.0 },
            ToySpeaker { f0: 250.0, formant_scale: 1.22, tilt_db_per_octave: -6.0 },
        ];
        ROSTER[index % ROSTER.len()]
    }
}

#[derive(Debug, Clone, Copy)]
enum Unit {
    Vowel(usize),
    Fricative,
    Pause,
}

/// Synthesises one utterance of roughly `seconds` length.
pub fn toy_utterance(speaker: ToySpeaker, seconds: f64, seed: u64) -> Waveform {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (seconds * SR) as usize;

    // unit sequence with per-sample unit index
    let mut units = Vec::new();
    let mut bounds = Vec::new();
    let mut t = 0usize;
    while t < n {
        let r: f64 = rng.random();
        let (unit, dur) = if r < 0.1 {
            (Unit::Pause, rng.random_range(0.04..0.10))
        } else if r < 0.22 {
            (Unit::Fricative, rng.random_range(0.05..0.12))
        } else {
            (Unit::Vowel(rng.random_range(0..VOWELS.len())), rng.random_range(0.10..0.24))
        };
        let len = ((dur * SR) as usize).max(1);
        units.push(unit);
        bounds.push((t, (t + len).min(n)));
        t += len;
    }

    let vib_rate = rng.random_range(3.0..6.0);
    let drift_rate = rng.random_range(0.3..0.9);
    let drift_phase = rng.random_range(0.0..2.0 * PI);
    let max_h = (7600.0 / (speaker.f0 * 0.85)) as usize;
    let mut phases: Vec<f64> = (0..max_h).map(|_| rng.random_range(0.0..2.0 * PI)).collect();

    // per-sample voiced gain and formants, smoothed over ~15 ms
    let mut voiced = vec![0.0; n];
    let mut fric = vec![0.0; n];
    let mut f1 = vec![0.0; n];
    let mut f2 = vec![0.0; n];
    let mut last = VOWELS[0];
    for (u, &(a, b)) in units.iter().zip(&bounds) {
        for i in a..b {
            match *u {
                Unit::Vowel(v) => {
                    voiced[i] = 1.0;
                    last = VOWELS[v];
                }
                Unit::Fricative => fric[i] = 1.0,
                Unit::Pause => {}
            }
            f1[i] = last.0 * speaker.formant_scale;
            f2[i] = last.1 * speaker.formant_scale;
        }
    }
    let smooth = (0.015 * SR) as usize;
    let voiced = moving_average(&voiced, smooth);
    let fric = moving_average(&fric, smooth);
    let f1 = moving_average(&f1, smooth * 2);
    let f2 = moving_average(&f2, smooth * 2);

    let mut out = vec![0.0; n];
    let control = 16;
    let mut gains = vec![0.0; max_h];
    for (i, o) in out.iter_mut().enumerate() {
        let ts = i as f64 / SR;
        let f0 = speaker.f0
            * (1.0 + 0.06 * (2.0 * PI * drift_rate * ts + drift_phase).sin())
            * (1.0 + 0.01 * (2.0 * PI * vib_rate * ts).sin());
        if i % control == 0 {
            for (h, g) in gains.iter_mut().enumerate() {
                let fh = f0 * (h + 1) as f64;
                *g = if fh < 7800.0 {
                    formant_gain(fh, f1[i], f2[i], speaker.tilt_db_per_octave)
                } else {
                    0.0
                };
            }
        }
        let mut acc = 0.0;
        for (h, p) in phases.iter_mut().enumerate() {
            *p += 2.0 * PI * f0 * (h + 1) as f64 / SR;
            if *p > 2.0 * PI {
                *p -= 2.0 * PI;
            }
            acc += gains[h] * p.sin();
        }
        *o = voiced[i] * acc;
    }

    // fricatives: differentiated white noise (rough high-pass)
    let mut prev = 0.0;
    for (o, f) in out.iter_mut().zip(&fric) {
        let w: f64 = StandardNormal.sample(&mut rng);
        let hp = w - prev;
        prev = w;
        *o += f * 0.08 * hp;
    }

    let rms = (out.iter().map(|x| x * x).sum::<f64>() / n as f64).sqrt().max(1e-9);
    let level = rng.random_range(0.06..0.12);
    for o in &mut out {
        let floor: f64 = StandardNormal.sample(&mut rng);
        *o = *o * level / rms + 1e-4 * floor;
    }
    Waveform::new(out, PIPELINE_RATE).expect("finite synthesis")
}

fn formant_gain(f: f64, f1: f64, f2: f64, tilt: f64) -> f64 {
    let res = |fc: f64, bw: f64| 1.0 / (1.0 + ((f - fc) / bw).powi(2));
    let octaves = (f / 100.0).max(1.0).log2();
    let tilt = 10f64.powf(tilt * octaves / 20.0);
    (res(f1, 90.0) + 0.7 * res(f2, 120.0) + 0.02) * tilt
}

fn moving_average(x: &[f64], width: usize) -> Vec<f64> {
    if width <= 1 {
        return x.to_vec();
    }
    let half = width / 2;
    let mut prefix = vec![0.0; x.len() + 1];
    for (i, v) in x.iter().enumerate() {
        prefix[i + 1] = prefix[i] + v;
    }
    (0..x.len())
        .map(|i| {
            let a = i.saturating_sub(half);
            let b = (i + half + 1).min(x.len());
            (prefix[b] - prefix[a]) / (b - a) as f64
        })
        .collect()
}

/// Kinds of synthetic background noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ToyNoise {
    White,
    Pink,
    Brown,
    Hum,
    Babble,
    Modulated,
}

impl ToyNoise {
    pub const ALL: [ToyNoise; 6] = [
        ToyNoise::White,
        ToyNoise::Pink,
        ToyNoise::Brown,
        ToyNoise::Hum,
        ToyNoise::Babble,
        ToyNoise::Modulated,
    ];
}

/// Synthesises a noise recording with RMS around 0.1.
pub fn toy_noise(kind: ToyNoise, seconds: f64, seed: u64) -> Waveform {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (seconds * SR) as usize;
    let mut white = || -> f64 { StandardNormal.sample(&mut rng) };
    let x: Vec<f64> = match kind {
        ToyNoise::White => (0..n).map(|_| white()).collect(),
        ToyNoise::Pink => {
            // Paul Kellet's economy filter
            let (mut b0, mut b1, mut b2) = (0.0, 0.0, 0.0);
            (0..n)
                .map(|_| {
                    let w = white();
                    b0 = 0.99765 * b0 + w * 0.0990460;
                    b1 = 0.96300 * b1 + w * 0.2965164;
                    b2 = 0.57000 * b2 + w * 1.0526913;
                    b0 + b1 + b2 + w * 0.1848
                })
                .collect()
        }
        ToyNoise::Brown => {
            let mut acc = 0.0;
            (0..n)
                .map(|_| {
                    acc = 0.995 * acc + 0.1 * white();
                    acc
                })
                .collect()
        }
        ToyNoise::Hum => {
            let base = 50.0 + 10.0 * (seed % 2) as f64;
            (0..n)
                .map(|i| {
                    let t = i as f64 / SR;
                    (1..=12)
                        .map(|h| (2.0 * PI * base * h as f64 * t).sin() / h as f64)
                        .sum::<f64>()
                        + 0.05 * white()
                })
                .collect()
        }
        ToyNoise::Babble => {
            let mut acc = vec![0.0; n];
            for k in 0..4u64 {
                let spk = ToySpeaker {
                    f0: 95.0 + 37.0 * k as f64,
                    formant_scale: 0.95 + 0.08 * k as f64,
                    tilt_db_per_octave: -8.0,
                };
                let u = toy_utterance(spk, seconds, seed.wrapping_mul(31).wrapping_add(k));
                for (a, b) in acc.iter_mut().zip(u.samples()) {
                    *a += b;
                }
            }
            acc
        }
        ToyNoise::Modulated => {
            let rate = 2.0 + (seed % 5) as f64;
            let mut prev = 0.0;
            (0..n)
                .map(|i| {
                    let w = white();
                    let band = w + prev;
                    prev = w;
                    let env = 0.55 + 0.45 * (2.0 * PI * rate * i as f64 / SR).sin();
                    band * env
                })
                .collect()
        }
    };
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / n.max(1) as f64).sqrt().max(1e-12);
    Waveform::new(x.iter().map(|v| 0.1 * v / rms).collect(), PIPELINE_RATE)
        .expect("finite synthesis")
}

/// Exponentially decaying white-noise RIR with a unit direct path at
/// `direct_delay` samples. `rt60` is the 60 dB decay time in seconds.
pub fn exponential_rir(seed: u64, rt60: f64, seconds: f64, direct_delay: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = ((seconds * SR) as usize).max(direct_delay + 1);
    let decay = 6.9078 / (rt60 * SR); // ln(1000)
    let mut taps = vec![0.0; n];
    taps[direct_delay] = 1.0;
    for (i, t) in taps.iter_mut().enumerate().skip(direct_delay + 1) {
        let k = (i - direct_delay) as f64;
        let w: f64 = StandardNormal.sample(&mut rng);
        *t = 0.25 * w * (-decay * k).exp();
    }
    // keep the direct path strictly dominant
    let tail_peak = taps[direct_delay + 1..].iter().fold(0.0f64, |m, t| m.max(t.abs()));
    if tail_peak >= 0.9 {
        let s = 0.9 / tail_peak;
        taps[direct_delay + 1..].iter_mut().for_each(|t| *t *= s);
    }
    taps
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn utterances_are_deterministic_and_bounded() {
        let a = toy_utterance(ToySpeaker::roster(0), 1.0, 3);
        let b = toy_utterance(ToySpeaker::roster(0), 1.0, 3);
        assert_eq!(a, b);
        assert_eq!(a.len(), 16_000);
        assert!(a.peak() < 1.0);
        assert!(a.power() > 1e-4);
    }

    #[test]
    fn noises_have_target_level() {
        for (i, k) in ToyNoise::ALL.iter().enumerate() {
            let w = toy_noise(*k, 0.5, i as u64);
            assert!((w.power().sqrt() - 0.1).abs() < 1e-9);
        }
    }

    #[test]
    fn rir_direct_path_dominates() {
        let taps = exponential_rir(5, 1.2, 0.5, 40);
        let idx = taps
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
            .unwrap()
            .0;
        assert_eq!(idx, 40);
    }
}
