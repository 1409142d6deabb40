//! End-to-end commands wiring the modules together. Each `cmd_*` function
//! backs one CLI subcommand and only touches files under the directories it
//! is given.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::audio::{resample, WavFormat, Waveform, PIPELINE_RATE};
use crate::checkpoint::{fingerprint_of, Checkpoint, CheckpointKind};
use crate::config::RunConfig;
use crate::drd::{drd_finetune, DrdState};
use crate::encoder::{pretrain_toy_encoder, PhoneticEncoder, PretrainConfig, ToyEncoder};
use crate::error::{Error, Result};
use crate::flow::{enhance, held_out_loss, prepare_example, train_flow, Example, FlowModel, NormStats, Variant};
use crate::mel::{GriffinLim, MelAnalyzer};
use crate::metrics::{comparison, score_utterance, write_comparison, MetricReport};
use crate::mixture::{
    derive_seed, sample_pair_at_snr, seed_for_id, AudioCorpus, InMemoryCorpus, ManifestCorpus, PairSource,
    SimulatedPairs,
};
use crate::toy::{exponential_rir, toy_noise, toy_utterance, ToyNoise, ToySpeaker};

// Roots of the independent seed streams used by the commands.
const STREAM_NORM: u64 = 11;
const STREAM_DRD: u64 = 12;
const STREAM_FM_POOL: u64 = 13;
const STREAM_FM_TRAIN: u64 = 14;
const STREAM_SIMULATE: u64 = 15;
const STREAM_TEST: u64 = 16;
const STREAM_HELD_OUT: u64 = 17;

pub const PRETRAINED_ENCODER: &str = "encoder_pretrained.ckpt";
pub const DRD_ENCODER: &str = "encoder_drd.ckpt";
pub const DRD_STATE: &str = "drd_state.ckpt";
pub const FLOW_MODEL: &str = "flow.ckpt";
pub const NORM_STATS: &str = "norm.ckpt";

/// Worker threads for per-utterance work, from `DRYFLOW_WORKERS`.
pub fn workers() -> usize {
    std::env::var("DRYFLOW_WORKERS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|n| *n > 0)
        .unwrap_or(1)
}

/// Order-preserving parallel map over scoped threads.
fn parallel_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> Result<R> + Sync) -> Result<Vec<R>> {
    let n = workers().min(items.len()).max(1);
    if n == 1 {
        return items.iter().map(&f).collect();
    }
    let chunk = items.len().div_ceil(n);
    let parts: Vec<Result<Vec<R>>> = std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|c| s.spawn(|| c.iter().map(&f).collect::<Result<Vec<R>>>()))
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    });
    let mut out = Vec::with_capacity(items.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Loads every recording of a corpus into memory.
pub fn preload(corpus: &dyn AudioCorpus) -> Result<InMemoryCorpus> {
    let items = (0..corpus.len())
        .map(|i| Ok((corpus.label(i), corpus.load(i)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(InMemoryCorpus::with_labels(items))
}

/// Speech, noise and RIR corpora named by a config, held in memory.
pub struct Corpora {
    pub speech: InMemoryCorpus,
    pub noise: InMemoryCorpus,
    pub rirs: InMemoryCorpus,
}

impl Corpora {
    pub fn open(cfg: &RunConfig, base: &Path) -> Result<Self> {
        let open = |p: &Path| -> Result<InMemoryCorpus> { preload(&ManifestCorpus::open(cfg.resolve(base, p))?) };
        let rirs = if cfg.paths.rir_manifest.as_os_str().is_empty() {
            InMemoryCorpus::default()
        } else {
            open(&cfg.paths.rir_manifest)?
        };
        Ok(Self {
            speech: open(&cfg.paths.speech_manifest)?,
            noise: open(&cfg.paths.noise_manifest)?,
            rirs,
        })
    }

    pub fn pairs(&self, cfg: &RunConfig, stream: u64) -> SimulatedPairs<'_> {
        SimulatedPairs {
            speech: &self.speech,
            noise: &self.noise,
            rirs: &self.rirs,
            cfg: cfg.mixture.clone(),
            seed: derive_seed(cfg.seed, stream),
        }
    }
}

/// Layout of a synthetic corpus written by [`cmd_make_toy_corpus`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ToyCorpusSpec {
    pub speakers: usize,
    pub utterances_per_speaker: usize,
    pub utterance_seconds: f64,
    pub noises_per_kind: usize,
    pub noise_seconds: f64,
    pub rirs: usize,
    pub test_utterances_per_speaker: usize,
}

impl Default for ToyCorpusSpec {
    fn default() -> Self {
        Self {
            speakers: 4,
            utterances_per_speaker: 12,
            utterance_seconds: 4.0,
            noises_per_kind: 3,
            noise_seconds: 6.0,
            rirs: 12,
            test_utterances_per_speaker: 5,
        }
    }
}

/// Writes harmonic-tone "speakers", synthetic noises and RIRs with
/// manifests: `speech.txt`, `noise.txt`, `rir.txt` for training and
/// `speech_test.txt`, `noise_test.txt` for held-out material.
pub fn cmd_make_toy_corpus(out: &Path, spec: &ToyCorpusSpec, seed: u64) -> Result<()> {
    for sub in ["speech", "noise", "rir", "test"] {
        ensure_dir(&out.join(sub))?;
    }
    let write_list = |name: &str, lines: &[String]| -> Result<()> {
        let p = out.join(name);
        std::fs::write(&p, lines.join("\n") + "\n").map_err(|e| Error::io(&p, e))
    };
    let mut speech = Vec::new();
    let mut speech_test = Vec::new();
    for s in 0..spec.speakers {
        let who = ToySpeaker::roster(s);
        for u in 0..spec.utterances_per_speaker + spec.test_utterances_per_speaker {
            let w = toy_utterance(who, spec.utterance_seconds, derive_seed(seed, (s * 1000 + u) as u64));
            let test = u >= spec.utterances_per_speaker;
            let rel = if test {
                format!("test/spk{s}_utt{u:03}.wav")
            } else {
                format!("speech/spk{s}_utt{u:03}.wav")
            };
            w.write_wav(out.join(&rel), WavFormat::Float32)?;
            if test {
                speech_test.push(rel);
            } else {
                speech.push(rel);
            }
        }
    }
    let mut noise = Vec::new();
    let mut noise_test = Vec::new();
    for (k, kind) in ToyNoise::ALL.iter().enumerate() {
        for i in 0..spec.noises_per_kind + 1 {
            let w = toy_noise(*kind, spec.noise_seconds, derive_seed(seed, (1 << 20) + (k * 100 + i) as u64));
            let test = i == spec.noises_per_kind;
            let rel = if test {
                format!("test/noise{k}_{i}.wav")
            } else {
                format!("noise/noise{k}_{i}.wav")
            };
            w.write_wav(out.join(&rel), WavFormat::Float32)?;
            if test {
                noise_test.push(rel);
            } else {
                noise.push(rel);
            }
        }
    }
    let mut rirs = Vec::new();
    for r in 0..spec.rirs {
        let rt60 = 0.2 + 0.6 * r as f64 / spec.rirs.max(1) as f64;
        let taps = exponential_rir(derive_seed(seed, (1 << 21) + r as u64), rt60, 0.6, 20 + 7 * r);
        let rel = format!("rir/rir{r:02}.wav");
        Waveform::new(taps, PIPELINE_RATE)?.write_wav(out.join(&rel), WavFormat::Float32)?;
        rirs.push(rel);
    }
    write_list("speech.txt", &speech)?;
    write_list("speech_test.txt", &speech_test)?;
    write_list("noise.txt", &noise)?;
    write_list("noise_test.txt", &noise_test)?;
    write_list("rir.txt", &rirs)?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct SimRow {
    id: String,
    seed: u64,
    speech_index: usize,
    noise_index: usize,
    rir_index: Option<usize>,
    snr_db: f64,
    reverb: bool,
    noisy: String,
    target: String,
    noise: String,
}

const SIM_HEADER: [&str; 10] = [
    "id",
    "seed",
    "speech_index",
    "noise_index",
    "rir_index",
    "snr_db",
    "reverb",
    "noisy",
    "target",
    "noise",
];

/// Materialises `count` training pairs as float WAVs plus `metadata.csv`.
pub fn cmd_simulate(cfg: &RunConfig, base: &Path, count: usize, out: &Path) -> Result<PathBuf> {
    cfg.validate()?;
    ensure_dir(out)?;
    let corpora = Corpora::open(cfg, base)?;
    let pairs = corpora.pairs(cfg, STREAM_SIMULATE);
    let meta = out.join("metadata.csv");
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(&meta)?;
    w.write_record(SIM_HEADER)?;
    for i in 0..count {
        let p = pairs.pair(i as u64)?;
        let id = format!("{i:06}");
        let names = [
            format!("{id}_noisy.wav"),
            format!("{id}_target.wav"),
            format!("{id}_noise.wav"),
        ];
        p.noisy.write_wav(out.join(&names[0]), WavFormat::Float32)?;
        p.target.write_wav(out.join(&names[1]), WavFormat::Float32)?;
        p.noise_component.write_wav(out.join(&names[2]), WavFormat::Float32)?;
        let [noisy, target, noise] = names;
        w.serialize(SimRow {
            id,
            seed: p.seed,
            speech_index: p.speech_index,
            noise_index: p.noise_index,
            rir_index: p.rir_index,
            snr_db: p.spec.snr_db,
            reverb: p.spec.apply_reverb,
            noisy,
            target,
            noise,
        })?;
    }
    w.flush().map_err(|e| Error::io(&meta, e))?;
    Ok(meta)
}

fn write_loss_csv(path: &Path, rows: impl Iterator<Item = (usize, f64, f64)>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["step", "lr", "loss"])?;
    for (s, lr, l) in rows {
        w.write_record([s.to_string(), format!("{lr:e}"), format!("{l:e}")])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Masked-frame pretraining of the stand-in speech encoder on dry speech.
pub fn cmd_pretrain(cfg: &RunConfig, base: &Path, out: &Path) -> Result<PathBuf> {
    cfg.validate()?;
    ensure_dir(out)?;
    let corpora = Corpora::open(cfg, base)?;
    let pcfg = PretrainConfig {
        optim: cfg.pretrain.clone(),
        segment_seconds: cfg.mixture.segment_seconds,
        seed: cfg.seed,
    };
    let (enc, losses) = pretrain_toy_encoder(&corpora.speech, &cfg.encoder, &cfg.mel, &pcfg)?;
    write_loss_csv(
        &out.join("pretrain_loss.csv"),
        losses
            .iter()
            .enumerate()
            .map(|(s, l)| (s, cfg.pretrain.lr_at(s).unwrap_or(f64::NAN), *l)),
    )?;
    let path = out.join(PRETRAINED_ENCODER);
    enc.to_checkpoint(cfg.pretrain.steps, &cfg.data_fingerprint())?.save(&path)?;
    Ok(path)
}

fn load_teacher(cfg: &RunConfig, teacher: &Path) -> Result<ToyEncoder> {
    if !teacher.exists() {
        return Err(Error::Data(format!(
            "pretrained encoder {} not found; run `dryflow pretrain` first",
            teacher.display()
        )));
    }
    ToyEncoder::load(teacher, &cfg.data_fingerprint())
}

/// Distils a student from the pretrained teacher. Resumes from
/// `out/drd_state.ckpt` when present. `stop_after` ends the run early
/// (after saving state), which is how an interruption is simulated.
pub fn cmd_train_drd(cfg: &RunConfig, base: &Path, teacher: &Path, out: &Path, stop_after: Option<usize>) -> Result<PathBuf> {
    cfg.validate()?;
    ensure_dir(out)?;
    let fp = cfg.data_fingerprint();
    let teacher = load_teacher(cfg, teacher)?;
    let state_path = out.join(DRD_STATE);
    let state = if state_path.exists() {
        let ck = Checkpoint::load_kind(&state_path, CheckpointKind::TrainingState)?;
        ck.require_fingerprint(&fp)?;
        log::info!("resuming distillation at step {}", ck.step);
        DrdState::from_checkpoint(&ck, teacher)?
    } else {
        DrdState::from_pretrained(teacher, cfg.drd.clone())?
    };
    let corpora = Corpora::open(cfg, base)?;
    let pairs = corpora.pairs(cfg, STREAM_DRD);
    let target = cfg.drd.steps;
    let until = stop_after.map_or(target, |k| k.min(target));
    let todo = until.saturating_sub(state.step);
    let state = drd_finetune(state, &pairs, todo)?;

    state.to_checkpoint(&fp)?.save(&state_path)?;
    write_loss_csv(
        &out.join("drd_loss.csv"),
        state
            .loss_history
            .iter()
            .enumerate()
            .map(|(s, l)| (s, cfg.drd.lr_at(s).unwrap_or(f64::NAN), *l)),
    )?;
    let path = out.join(DRD_ENCODER);
    state.student.to_checkpoint(state.step, &fp)?.save(&path)?;
    Ok(path)
}

/// Normalisation statistics: read from `out/norm.ckpt` or estimated from
/// simulated targets and written there.
pub fn norm_stats(cfg: &RunConfig, corpora: &Corpora, out: &Path) -> Result<NormStats> {
    let path = out.join(NORM_STATS);
    let fp = cfg.data_fingerprint();
    if path.exists() {
        let ck = Checkpoint::load_kind(&path, CheckpointKind::Normalization)?;
        ck.require_fingerprint(&fp)?;
        return NormStats::from_checkpoint(&ck);
    }
    let mel = MelAnalyzer::new(&cfg.mel)?;
    let stats = NormStats::estimate(&corpora.pairs(cfg, STREAM_NORM), cfg.norm_pairs, &mel)?;
    ensure_dir(out)?;
    stats.to_checkpoint(&fp)?.save(&path)?;
    Ok(stats)
}

/// Builds the example pool a flow model trains on.
pub fn build_pool(
    cfg: &RunConfig,
    corpora: &Corpora,
    model: &FlowModel,
    encoder: &dyn PhoneticEncoder,
) -> Result<Vec<Example>> {
    let mel = MelAnalyzer::new(&cfg.mel)?;
    let pairs = corpora.pairs(cfg, STREAM_FM_POOL);
    let idx: Vec<u64> = (0..cfg.fm.pool_size as u64).collect();
    parallel_map(&idx, |&i| {
        let p = pairs.pair(i)?;
        prepare_example(model, encoder, &mel, &p.noisy, &p.target)
    })
}

/// Trains one flow model. `encoder` is the checkpoint whose features
/// condition this variant (the distilled encoder, or the pretrained one
/// for [`Variant::NoisySemantic`]).
pub fn cmd_train_fm(cfg: &RunConfig, base: &Path, encoder: &Path, variant: Variant, out: &Path) -> Result<PathBuf> {
    cfg.validate()?;
    ensure_dir(out)?;
    let fp = cfg.data_fingerprint();
    let enc = ToyEncoder::load(encoder, &fp)?;
    let corpora = Corpora::open(cfg, base)?;
    let norm = norm_stats(cfg, &corpora, out)?;
    let model = FlowModel::new(&cfg.backbone, norm, variant, cfg.mel.clone(), enc.checksum()?, cfg.seed)?;
    let pool = build_pool(cfg, &corpora, &model, &enc)?;

    let loss_path = out.join("fm_loss.csv");
    let mut w = csv::Writer::from_path(&loss_path)?;
    w.write_record(["step", "lr", "loss"])?;
    let every = cfg.fm.snapshot_every;
    train_flow(&model, &pool, &cfg.fm, derive_seed(cfg.seed, STREAM_FM_TRAIN), |s| {
        w.write_record([s.step.to_string(), format!("{:e}", s.lr), format!("{:e}", s.loss)])?;
        if every > 0 && s.step > 0 && s.step % every == 0 {
            model
                .to_checkpoint(s.step, &fp)?
                .save(out.join(format!("flow_step{:06}.ckpt", s.step)))?;
        }
        Ok(())
    })?;
    w.flush().map_err(|e| Error::io(&loss_path, e))?;
    let path = out.join(FLOW_MODEL);
    model.to_checkpoint(cfg.fm.optim.steps, &fp)?.save(&path)?;
    Ok(path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestRow {
    pub id: String,
    pub noisy: PathBuf,
    pub reference: PathBuf,
}

/// Reads an `id,noisy,reference` manifest; relative paths resolve against
/// its directory.
pub fn read_test_manifest(path: &Path) -> Result<Vec<TestRow>> {
    let base = path.parent().unwrap_or(Path::new("."));
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize::<TestRow>()
        .map(|row| {
            let mut row = row?;
            row.noisy = base.join(&row.noisy);
            row.reference = base.join(&row.reference);
            Ok(row)
        })
        .collect()
}

/// Mixes held-out speech and noise at a fixed SNR without reverberation
/// and writes `test.csv` (id, noisy, reference).
pub fn cmd_make_test_set(
    cfg: &RunConfig,
    speech: &Path,
    noise: &Path,
    count: usize,
    snr_db: f64,
    out: &Path,
) -> Result<PathBuf> {
    cfg.validate()?;
    ensure_dir(out)?;
    let speech = preload(&ManifestCorpus::open(speech)?)?;
    let noise = preload(&ManifestCorpus::open(noise)?)?;
    let none = InMemoryCorpus::default();
    let path = out.join("test.csv");
    let mut w = csv::Writer::from_path(&path)?;
    let root = derive_seed(cfg.seed, STREAM_TEST);
    for i in 0..count {
        let p = sample_pair_at_snr(derive_seed(root, i as u64), &speech, &noise, &none, &cfg.mixture, snr_db)?;
        let id = format!("utt{i:04}");
        let (n, r) = (format!("{id}_noisy.wav"), format!("{id}_clean.wav"));
        p.noisy.write_wav(out.join(&n), WavFormat::Float32)?;
        p.target.write_wav(out.join(&r), WavFormat::Float32)?;
        w.serialize(TestRow {
            id,
            noisy: n.into(),
            reference: r.into(),
        })?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

fn read_input(cfg: &RunConfig, path: &Path) -> Result<Waveform> {
    let wav = Waveform::read_wav(path)?;
    if wav.sample_rate() == PIPELINE_RATE {
        return Ok(wav);
    }
    if cfg.strict_sample_rate {
        return Err(Error::Data(format!(
            "{} is sampled at {} Hz, expected {PIPELINE_RATE}",
            path.display(),
            wav.sample_rate()
        )));
    }
    log::warn!("resampling {} from {} Hz", path.display(), wav.sample_rate());
    resample(&wav, PIPELINE_RATE)
}

/// Loads a flow model and its conditioning encoder, checking that both
/// belong to the active configuration and to each other.
pub fn load_model_pair(cfg: &RunConfig, encoder: &Path, flow: &Path) -> Result<(ToyEncoder, FlowModel)> {
    let fp = cfg.data_fingerprint();
    let enc = ToyEncoder::load(encoder, &fp)?;
    let model = FlowModel::load(flow, &fp)?;
    model.check_encoder(&enc)?;
    Ok((enc, model))
}

/// Enhances one WAV file or every row of a test manifest. Writes
/// `<id>_enhanced.wav` files and `enhanced.csv` (id, path).
#[allow(clippy::too_many_arguments)]
pub fn cmd_enhance(
    cfg: &RunConfig,
    encoder: &Path,
    flow: &Path,
    input: &Path,
    out: &Path,
    n_steps: usize,
    seed: u64,
) -> Result<PathBuf> {
    cfg.validate()?;
    ensure_dir(out)?;
    let (enc, model) = load_model_pair(cfg, encoder, flow)?;
    let is_wav = input.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav"));
    let jobs: Vec<(String, PathBuf)> = if is_wav {
        let id = input
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "input".into());
        vec![(id, input.to_path_buf())]
    } else {
        read_test_manifest(input)?.into_iter().map(|r| (r.id, r.noisy)).collect()
    };
    let mel = MelAnalyzer::new(&cfg.mel)?;
    let vocoder = GriffinLim::new(&cfg.mel, cfg.griffin_lim_iters)?;
    let written = parallel_map(&jobs, |(id, path)| {
        let noisy = read_input(cfg, path)?;
        let (wav, _) = enhance(&model, &enc, &mel, &vocoder, &noisy, n_steps, seed_for_id(seed, id))?;
        let name = format!("{id}_enhanced.wav");
        wav.write_wav(out.join(&name), WavFormat::Float32)?;
        Ok((id.clone(), name))
    })?;
    let list = out.join("enhanced.csv");
    let mut w = csv::Writer::from_path(&list)?;
    w.write_record(["id", "path"])?;
    for (id, name) in written {
        w.write_record([id, name])?;
    }
    w.flush().map_err(|e| Error::io(&list, e))?;
    Ok(list)
}

/// Writes an `enhanced.csv` that lists the unprocessed noisy inputs, so
/// the noisy baseline is scored exactly like a model.
pub fn write_passthrough_list(test_manifest: &Path, out: &Path) -> Result<PathBuf> {
    ensure_dir(out)?;
    let rows = read_test_manifest(test_manifest)?;
    let list = out.join("enhanced.csv");
    let mut w = csv::Writer::from_path(&list)?;
    w.write_record(["id", "path"])?;
    for r in rows {
        let p = std::path::absolute(&r.noisy).map_err(|e| Error::io(&r.noisy, e))?;
        w.write_record([r.id, p.to_string_lossy().into_owned()])?;
    }
    w.flush().map_err(|e| Error::io(&list, e))?;
    Ok(list)
}

fn read_enhanced_list(path: &Path) -> Result<Vec<(String, PathBuf)>> {
    let base = path.parent().unwrap_or(Path::new("."));
    let mut r = csv::Reader::from_path(path)?;
    r.records()
        .map(|rec| {
            let rec = rec?;
            let id = rec.get(0).ok_or_else(|| Error::Data("enhanced list row lacks id".into()))?;
            let p = rec.get(1).ok_or_else(|| Error::Data("enhanced list row lacks path".into()))?;
            Ok((id.to_string(), base.join(p)))
        })
        .collect()
}

/// Fingerprint stored in metric reports.
pub fn report_fingerprint(cfg: &RunConfig, norm: &NormStats, metric_encoder: &dyn PhoneticEncoder) -> Result<String> {
    let json = |v: serde_json::Result<serde_json::Value>| v.map_err(|e| Error::Data(e.to_string()));
    Ok(fingerprint_of(&[
        &json(serde_json::to_value(&cfg.mel))?,
        &json(serde_json::to_value(norm))?,
        &serde_json::Value::String(metric_encoder.checksum()?),
    ]))
}

/// Scores enhanced files against a test manifest and writes the report
/// into `out`.
pub fn cmd_evaluate(
    cfg: &RunConfig,
    metric_encoder: &Path,
    enhanced: &Path,
    test_manifest: &Path,
    norm: &NormStats,
    out: &Path,
) -> Result<MetricReport> {
    cfg.validate()?;
    let enc = ToyEncoder::load(metric_encoder, &cfg.data_fingerprint())?;
    let hyps = read_enhanced_list(enhanced)?;
    let refs = read_test_manifest(test_manifest)?;
    if hyps.len() != refs.len() {
        return Err(Error::Data(format!(
            "{} enhanced rows but {} reference rows",
            hyps.len(),
            refs.len()
        )));
    }
    let by_id: BTreeMap<&str, &TestRow> = refs.iter().map(|r| (r.id.as_str(), r)).collect();
    let mel = MelAnalyzer::new(&cfg.mel)?;
    let scored = parallel_map(&hyps, |(id, path)| {
        let row = by_id
            .get(id.as_str())
            .ok_or_else(|| Error::Data(format!("no reference for {id}")))?;
        let reference = read_input(cfg, &row.reference)?;
        let noisy = read_input(cfg, &row.noisy).ok();
        let hyp = read_input(cfg, path)?;
        score_utterance(id, &reference, &hyp, noisy.as_ref(), &mel, &enc)
    })?;
    let cropped = scored.iter().filter(|(_, c)| *c).map(|(r, _)| r.id.clone()).collect();
    let records = scored.into_iter().map(|(r, _)| r).collect();
    let report = MetricReport::new(records, report_fingerprint(cfg, norm, &enc)?, cropped);
    report.write(out)?;
    Ok(report)
}

/// Normalisation statistics from a `norm.ckpt` or a flow checkpoint.
pub fn read_norm(path: &Path) -> Result<NormStats> {
    let ck = Checkpoint::load(path)?;
    match ck.kind {
        CheckpointKind::Normalization => NormStats::from_checkpoint(&ck),
        CheckpointKind::Flow => serde_json::from_value(ck.meta["norm"].clone())
            .map_err(|e| Error::Data(format!("{}: {e}", path.display()))),
        other => Err(Error::Data(format!(
            "{}: a {other:?} checkpoint has no normalisation statistics",
            path.display()
        ))),
    }
}

/// Flow checkpoint and conditioning encoder for one ablation variant.
#[derive(Debug, Clone)]
pub struct VariantModel {
    pub flow: PathBuf,
    pub encoder: PathBuf,
}

/// Enhances and scores the same test utterances with every variant, adds
/// the held-out masked loss, and writes `<variant>/` report directories and
/// `comparison.csv` (deltas against [`Variant::Full`]).
pub fn run_ablation_suite(
    cfg: &RunConfig,
    models: &BTreeMap<Variant, VariantModel>,
    metric_encoder: &Path,
    test_manifest: &Path,
    out: &Path,
) -> Result<BTreeMap<Variant, MetricReport>> {
    cfg.validate()?;
    ensure_dir(out)?;
    let fp = cfg.data_fingerprint();
    let mut norm: Option<NormStats> = None;
    for m in models.values() {
        Checkpoint::load_kind(&m.flow, CheckpointKind::Flow)?.require_fingerprint(&fp)?;
        let n = read_norm(&m.flow)?;
        match norm {
            None => norm = Some(n),
            Some(prev) if prev != n => {
                return Err(Error::Fingerprint {
                    expected: format!("{prev:?}"),
                    found: format!("{n:?}"),
                })
            }
            _ => {}
        }
    }
    let norm = norm.ok_or_else(|| Error::Config("no models to compare".into()))?;
    let tests = read_test_manifest(test_manifest)?;
    let mel = MelAnalyzer::new(&cfg.mel)?;

    let mut reports = BTreeMap::new();
    let mut sheet: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    for (variant, m) in models {
        let dir = out.join(variant.name());
        let list = cmd_enhance(cfg, &m.encoder, &m.flow, test_manifest, &dir, cfg.fm.sampling_steps, cfg.seed)?;
        let report = cmd_evaluate(cfg, metric_encoder, &list, test_manifest, &norm, &dir)?;

        let (enc, model) = load_model_pair(cfg, &m.encoder, &m.flow)?;
        let examples = parallel_map(&tests, |row| {
            let noisy = read_input(cfg, &row.noisy)?;
            let clean = read_input(cfg, &row.reference)?;
            prepare_example(&model, &enc, &mel, &noisy, &clean)
        })?;
        let held = held_out_loss(&model, &examples, derive_seed(cfg.seed, STREAM_HELD_OUT), &cfg.fm.masks)?;

        let mut values: BTreeMap<String, f64> = report
            .aggregates
            .iter()
            .filter(|(k, _)| k.as_str() != "snr_in_db")
            .map(|(k, a)| (k.clone(), a.mean))
            .collect();
        values.insert("held_out_cfm_loss".into(), held);
        sheet.insert(variant.name().to_string(), values);
        reports.insert(*variant, report);
    }
    if sheet.contains_key(Variant::Full.name()) {
        write_comparison(&comparison(&sheet, Variant::Full.name())?, out.join("comparison.csv"))?;
    }
    Ok(reports)
}
