//! Proxy objective metrics and report files.
//!
//! None of these are the perceptual or recognition-based scores used in the
//! speech-enhancement literature; they are cheap stand-ins and reports say
//! so.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::audio::Waveform;
use crate::encoder::{mean_frame_cosine, PhoneticEncoder};
use crate::error::{Error, Result};
use crate::mel::{MelAnalyzer, MelSpectrogram};
use crate::mixture::power_ratio_db;

const DB_PER_NEPER: f64 = 20.0 / std::f64::consts::LN_10;

fn same_geometry(a: &MelSpectrogram, b: &MelSpectrogram) -> Result<()> {
    if a.frames() != b.frames() || a.n_mels() != b.n_mels() {
        return Err(Error::Shape(format!(
            "{}x{} vs {}x{}",
            a.frames(),
            a.n_mels(),
            b.frames(),
            b.n_mels()
        )));
    }
    Ok(())
}

/// Log-spectral distance in dB over natural-log Mel spectrograms.
pub fn lsd(reference: &MelSpectrogram, hyp: &MelSpectrogram) -> Result<f64> {
    same_geometry(reference, hyp)?;
    let mut total = 0.0;
    for k in 0..reference.frames() {
        let ms = reference
            .row(k)
            .iter()
            .zip(hyp.row(k))
            .map(|(r, h)| (DB_PER_NEPER * (r - h)).powi(2))
            .sum::<f64>()
            / reference.n_mels() as f64;
        total += ms.sqrt();
    }
    Ok(total / reference.frames() as f64)
}

pub fn mel_mse(reference: &MelSpectrogram, hyp: &MelSpectrogram) -> Result<f64> {
    same_geometry(reference, hyp)?;
    let n = reference.values().len() as f64;
    Ok(reference
        .values()
        .iter()
        .zip(hyp.values())
        .map(|(r, h)| (r - h) * (r - h))
        .sum::<f64>()
        / n)
}

/// Mean per-frame cosine similarity of encoder features. Frames where
/// either vector is zero are skipped.
pub fn semantic_cos(reference: &Waveform, hyp: &Waveform, encoder: &dyn PhoneticEncoder) -> Result<f64> {
    if reference.len() != hyp.len() {
        return Err(Error::Shape(format!(
            "waveforms of {} and {} samples",
            reference.len(),
            hyp.len()
        )));
    }
    mean_frame_cosine(&encoder.encode(reference)?, &encoder.encode(hyp)?)
}

/// `10 log10(P_speech / P_noise)`.
pub fn measure_snr(speech: &Waveform, noise: &Waveform) -> Result<f64> {
    if speech.len() != noise.len() {
        return Err(Error::Shape(format!("{} vs {} samples", speech.len(), noise.len())));
    }
    if speech.power() == 0.0 || noise.power() == 0.0 {
        return Err(Error::Data("zero-power component".into()));
    }
    Ok(power_ratio_db(speech.samples(), noise.samples()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceRecord {
    pub id: String,
    pub lsd_db: f64,
    pub mel_mse: f64,
    pub semantic_cos: f64,
    pub snr_in_db: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

impl Aggregate {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self {
                mean: f64::NAN,
                std: f64::NAN,
                count: 0,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        Self {
            mean,
            std: var.sqrt(),
            count: n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub records: Vec<UtteranceRecord>,
    pub aggregates: BTreeMap<String, Aggregate>,
    pub fingerprint: String,
    /// Utterances whose reference and hypothesis were centre-cropped to a
    /// common length.
    pub center_cropped: Vec<String>,
}

#[derive(Serialize)]
struct AggregateFile<'a> {
    note: &'a str,
    fingerprint: &'a str,
    center_cropped: &'a [String],
    aggregates: &'a BTreeMap<String, Aggregate>,
}

impl MetricReport {
    /// Sorts records by id so aggregates do not depend on input order.
    pub fn new(mut records: Vec<UtteranceRecord>, fingerprint: String, mut center_cropped: Vec<String>) -> Self {
        records.sort_by(|a, b| a.id.cmp(&b.id));
        center_cropped.sort();
        let col = |f: fn(&UtteranceRecord) -> Option<f64>| -> Vec<f64> { records.iter().filter_map(f).collect() };
        let mut aggregates = BTreeMap::new();
        aggregates.insert("lsd_db".to_string(), Aggregate::of(&col(|r| Some(r.lsd_db))));
        aggregates.insert("mel_mse".to_string(), Aggregate::of(&col(|r| Some(r.mel_mse))));
        aggregates.insert("semantic_cos".to_string(), Aggregate::of(&col(|r| Some(r.semantic_cos))));
        aggregates.insert("snr_in_db".to_string(), Aggregate::of(&col(|r| r.snr_in_db)));
        Self {
            records,
            aggregates,
            fingerprint,
            center_cropped,
        }
    }

    pub fn mean(&self, metric: &str) -> Option<f64> {
        self.aggregates.get(metric).map(|a| a.mean)
    }

    /// Writes `records.csv` and `aggregate.json` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut w = csv::Writer::from_path(dir.join("records.csv"))?;
        for r in &self.records {
            w.serialize(r)?;
        }
        if self.records.is_empty() {
            w.write_record(["id", "lsd_db", "mel_mse", "semantic_cos", "snr_in_db"])?;
        }
        w.flush().map_err(|e| Error::io(dir.join("records.csv"), e))?;
        let agg = AggregateFile {
            note: "proxy metrics; not comparable with perceptual or recognition-based scores",
            fingerprint: &self.fingerprint,
            center_cropped: &self.center_cropped,
            aggregates: &self.aggregates,
        };
        let path = dir.join("aggregate.json");
        let text = serde_json::to_string_pretty(&agg).expect("aggregate serialises");
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
        Ok(())
    }

    pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<UtteranceRecord>> {
        let mut r = csv::Reader::from_path(path.as_ref())?;
        Ok(r.deserialize().collect::<std::result::Result<Vec<_>, _>>()?)
    }
}

/// Scores one hypothesis against its reference. Lengths are reconciled by
/// a symmetric centre crop; the flag reports whether that happened.
pub fn score_utterance(
    id: &str,
    reference: &Waveform,
    hyp: &Waveform,
    noisy: Option<&Waveform>,
    mel: &MelAnalyzer,
    encoder: &dyn PhoneticEncoder,
) -> Result<(UtteranceRecord, bool)> {
    let n = reference.len().min(hyp.len());
    let cropped = reference.len() != hyp.len();
    let (r, h) = (reference.center_crop(n), hyp.center_crop(n));
    let (rm, hm) = (mel.log_mel(&r)?, mel.log_mel(&h)?);
    let snr_in_db = match noisy {
        Some(x) if x.len() == reference.len() => {
            let resid: Vec<f64> = x.samples().iter().zip(reference.samples()).map(|(a, b)| a - b).collect();
            let resid = Waveform::new(resid, x.sample_rate())?;
            Some(measure_snr(reference, &resid)?)
        }
        _ => None,
    };
    Ok((
        UtteranceRecord {
            id: id.to_string(),
            lsd_db: lsd(&rm, &hm)?,
            mel_mse: mel_mse(&rm, &hm)?,
            semantic_cos: semantic_cos(&r, &h, encoder)?,
            snr_in_db,
        },
        cropped,
    ))
}

/// One row of an ablation comparison sheet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub variant: String,
    pub metric: String,
    pub value: f64,
    pub delta_vs_baseline: f64,
}

/// Per-metric values and deltas against `baseline` for every variant.
pub fn comparison(
    metrics: &BTreeMap<String, BTreeMap<String, f64>>,
    baseline: &str,
) -> Result<Vec<ComparisonRow>> {
    let base = metrics
        .get(baseline)
        .ok_or_else(|| Error::Data(format!("no baseline variant {baseline:?}")))?;
    let mut rows = Vec::new();
    for (variant, values) in metrics {
        for (metric, value) in values {
            let b = base.get(metric).copied().unwrap_or(f64::NAN);
            rows.push(ComparisonRow {
                variant: variant.clone(),
                metric: metric.clone(),
                value: *value,
                delta_vs_baseline: value - b,
            });
        }
    }
    Ok(rows)
}

pub fn write_comparison(rows: &[ComparisonRow], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path.as_ref(), e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mel(values: Vec<f64>, frames: usize, n: usize) -> MelSpectrogram {
        MelSpectrogram::from_values(values, frames, n, 50.0).unwrap()
    }

    #[test]
    fn constant_offset_laws() {
        let a = mel((0..12).map(|i| i as f64 * 0.1).collect(), 3, 4);
        let b = mel(a.values().iter().map(|v| v + 0.5).collect(), 3, 4);
        assert!((lsd(&a, &b).unwrap() - DB_PER_NEPER * 0.5).abs() < 1e-12);
        assert!((mel_mse(&a, &b).unwrap() - 0.25).abs() < 1e-12);
        assert_eq!(lsd(&a, &a).unwrap(), 0.0);
        assert_eq!(mel_mse(&b, &a).unwrap(), mel_mse(&a, &b).unwrap());
    }

    #[test]
    fn shape_mismatch_errors() {
        let a = mel(vec![0.0; 12], 3, 4);
        let b = mel(vec![0.0; 8], 2, 4);
        assert!(lsd(&a, &b).is_err());
        assert!(mel_mse(&a, &b).is_err());
    }

    #[test]
    fn snr_examples() {
        let s = Waveform::new(vec![0.5, -0.5, 0.5, -0.5], 16_000).unwrap();
        assert!(measure_snr(&s, &s).unwrap().abs() < 1e-12);
        assert!((measure_snr(&s, &s.scaled(0.1)).unwrap() - 20.0).abs() < 1e-9);
        assert!(measure_snr(&s, &Waveform::zeros(4, 16_000)).is_err());
    }

    #[test]
    fn aggregates_ignore_missing_snr() {
        let rec = |id: &str, snr| UtteranceRecord {
            id: id.into(),
            lsd_db: 1.0,
            mel_mse: 2.0,
            semantic_cos: 0.5,
            snr_in_db: snr,
        };
        let r = MetricReport::new(vec![rec("b", Some(3.0)), rec("a", None)], "fp".into(), vec![]);
        assert_eq!(r.records[0].id, "a");
        assert_eq!(r.aggregates["snr_in_db"].count, 1);
        assert_eq!(r.aggregates["lsd_db"].count, 2);
    }

    #[test]
    fn comparison_deltas() {
        let mut m = BTreeMap::new();
        m.insert("full".to_string(), BTreeMap::from([("lsd_db".to_string(), 3.0)]));
        m.insert("no_semantic".to_string(), BTreeMap::from([("lsd_db".to_string(), 4.5)]));
        let rows = comparison(&m, "full").unwrap();
        let r = rows.iter().find(|r| r.variant == "no_semantic").unwrap();
        assert_eq!(r.delta_vs_baseline, 1.5);
        assert!(comparison(&m, "missing").is_err());
    }
}
