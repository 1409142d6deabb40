//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.
//!
//! Extra arguments act as substring filters on criterion names. Set
//! `DRYFLOW_ACCEPTANCE_DIR` to keep the trained artifacts.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use candle_core::{DType, Device, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dryflow::audio::{Waveform, PIPELINE_RATE};
use dryflow::checkpoint::Checkpoint;
use dryflow::config::RunConfig;
use dryflow::drd::{drd_finetune, DrdState};
use dryflow::encoder::{EncoderConfig, PhoneticEncoder, ToyEncoder};
use dryflow::flow::*;
use dryflow::mel::{MelAnalyzer, MelConfig};
use dryflow::metrics::{measure_snr, MetricReport};
use dryflow::mixture::*;
use dryflow::nn::{gaussian, to_f64_vec};
use dryflow::optim::{lr_schedule, OptimConfig};
use dryflow::pipeline::*;
use dryflow::toy::{exponential_rir, toy_noise, toy_utterance, ToyNoise, ToySpeaker};

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn ok<T, E: std::fmt::Display>(r: Result<T, E>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn randn(seed: u64, shape: &[usize]) -> Tensor {
    gaussian(&mut ChaCha8Rng::seed_from_u64(seed), shape, DType::F64).unwrap()
}

fn vec64(t: &Tensor) -> Vec<f64> {
    to_f64_vec(t).unwrap()
}

// ---------------------------------------------------------------- geometry

fn mel_geometry() -> Check {
    let mel = ok(MelAnalyzer::new(&MelConfig::default()))?;
    let mut seen = Vec::new();
    for (n, want) in [(16_000usize, 50usize), (40_000, 125), (64_000, 200)] {
        let w = ok(Waveform::new((0..n).map(|i| 0.1 * (i as f64 * 0.07).sin()).collect(), 16_000))?;
        let m = ok(mel.log_mel(&w))?;
        ensure!(m.frames() == want && m.n_mels() == 100, "{n} samples gave {}x{}", m.frames(), m.n_mels());
        seen.push(format!("{n}->{}", m.frames()));
    }
    Ok(seen.join(", "))
}

// --------------------------------------------------------------- simulator

fn small_corpora(rir_taps: usize) -> (InMemoryCorpus, InMemoryCorpus, InMemoryCorpus) {
    let speech = (0..3).map(|i| toy_utterance(ToySpeaker::roster(i), 0.5, i as u64)).collect();
    let noise = ToyNoise::ALL.iter().map(|k| toy_noise(*k, 0.3, 1)).collect();
    let rirs = (0..4)
        .map(|i| {
            let taps = exponential_rir(i, 0.3, rir_taps as f64 / PIPELINE_RATE as f64, 5 + i as usize);
            Waveform::new(taps, PIPELINE_RATE).unwrap()
        })
        .collect();
    (InMemoryCorpus::new(speech), InMemoryCorpus::new(noise), InMemoryCorpus::new(rirs))
}

fn simulator_closure() -> Check {
    let (s, n, r) = small_corpora(64);
    let cfg = MixtureConfig {
        segment_seconds: 0.1,
        ..MixtureConfig::default()
    };
    let mut worst: f64 = 0.0;
    for seed in 0..1000u64 {
        let p = ok(sample_training_pair(seed, &s, &n, &r, &cfg))?;
        let got = ok(measure_snr(&p.speech_component, &p.noise_component))?;
        worst = worst.max((got - p.spec.snr_db).abs());
    }
    ensure!(worst <= 1e-6, "max SNR error {worst:e} dB");
    let draws = 10_000u64;
    let mut hits = 0;
    for seed in 0..draws {
        hits += ok(sample_training_pair(seed, &s, &n, &r, &cfg))?.spec.apply_reverb as usize;
    }
    let freq = hits as f64 / draws as f64;
    ensure!((freq - 0.8).abs() <= 0.01, "reverb frequency {freq}");
    Ok(format!("max SNR error {worst:.1e} dB, reverb frequency {freq:.4}"))
}

fn early_reflection() -> Check {
    for (direct, window_ms) in [(0usize, 50.0), (37, 50.0), (5, 12.5)] {
        let mut taps = vec![0.01; 4000];
        taps[direct] = 1.0;
        let rir = ok(RoomImpulseResponse::new(taps.clone(), PIPELINE_RATE))?;
        let early = ok(truncate_rir_early(&rir, window_ms))?;
        let keep = (window_ms * 16.0) as usize;
        let kept = early.taps()[direct..].iter().filter(|x| **x != 0.0).count();
        ensure!(kept == keep, "direct {direct}, {window_ms} ms: kept {kept}, want {keep}");
        ensure!(early.taps()[..direct + keep] == taps[..direct + keep], "early taps altered");
    }
    let (s, n, r1) = small_corpora(300);
    let r2 = InMemoryCorpus::new(
        (0..4)
            .map(|i| Waveform::new(exponential_rir(50 + i, 0.9, 0.05, 11), PIPELINE_RATE).unwrap())
            .collect(),
    );
    let cfg = MixtureConfig {
        reverb_prob: 1.0,
        segment_seconds: 0.25,
        ..MixtureConfig::default()
    };
    for seed in 0..20 {
        let a = ok(sample_training_pair(seed, &s, &n, &r1, &cfg))?;
        let b = ok(sample_training_pair(seed, &s, &n, &r2, &cfg))?;
        ensure!(a.noisy != b.noisy, "RIR draw had no effect on the input");
        ensure!(a.target.samples() == b.target.samples(), "dry target depends on the RIR (seed {seed})");
    }
    Ok("tap counts exact on 3 RIRs; dry target bit-identical over 20 seeds x 2 RIR sets".into())
}

// -------------------------------------------------------------------- flow

fn cfm_math() -> Check {
    let x0 = randn(1, &[2, 9, 5]);
    let x1 = randn(2, &[2, 9, 5]);
    ensure!(vec64(&ok(interpolate(&x0, &x1, 0.0))?) == vec64(&x0), "x_0 != x0");
    ensure!(vec64(&ok(interpolate(&x0, &x1, 1.0))?) == vec64(&x1), "x_1 != x1");

    let v = vec64(&ok(velocity_target(&x0, &x1))?);
    let h = 1e-4;
    let mut worst: f64 = 0.0;
    for t in [0.1, 0.5, 0.77] {
        let up = vec64(&ok(interpolate(&x0, &x1, t + h))?);
        let dn = vec64(&ok(interpolate(&x0, &x1, t - h))?);
        for i in 0..v.len() {
            worst = worst.max(((up[i] - dn[i]) / (2.0 * h) - v[i]).abs());
        }
    }
    ensure!(worst <= 1e-8, "velocity vs finite difference {worst:e}");

    let masks = vec![ok(InfillingMask::span(9, 1, 4))?, ok(InfillingMask::span(9, 5, 4))?];
    let base = ok(ok(masked_cfm_loss(&x0, &x1, &masks))?.to_scalar::<f64>())?;
    let mut moved = vec64(&x0);
    for (b, m) in masks.iter().enumerate() {
        for f in (0..9).filter(|f| !m.missing()[*f]) {
            for c in 0..5 {
                moved[(b * 9 + f) * 5 + c] -= 77.0;
            }
        }
    }
    let moved = ok(Tensor::from_vec(moved, (2, 9, 5), &Device::Cpu))?;
    let again = ok(ok(masked_cfm_loss(&moved, &x1, &masks))?.to_scalar::<f64>())?;
    ensure!(base.to_bits() == again.to_bits(), "visible frames changed the loss");

    let (mut clean, mut noisy) = (0.0, 0.0);
    let n = 10_000;
    for i in 0..n {
        let (c, m) = ok(build_infilling_masks(&mut substream(5, i), 400, &MaskRanges::default()))?;
        ensure!(c.is_contiguous() && m.is_contiguous(), "non-contiguous mask at draw {i}");
        clean += c.ratio();
        noisy += m.ratio();
    }
    let (clean, noisy) = (clean / n as f64, noisy / n as f64);
    ensure!((clean - 0.85).abs() <= 0.01, "clean ratio mean {clean}");
    ensure!((noisy - 0.75).abs() <= 0.01, "noisy ratio mean {noisy}");
    Ok(format!("fd error {worst:.1e}; ratio means {clean:.4}/{noisy:.4}; locality bit-exact"))
}

fn sampler_oracles() -> Check {
    let x0 = randn(3, &[1, 8, 6]);
    let start = vec64(&x0);
    for n in [1, 8] {
        let field = |x: &Tensor, _t: f64| -> dryflow::Result<Tensor> { Ok((x.zeros_like()? + 0.4)?) };
        let out = vec64(&ok(euler_integrate(&field, x0.clone(), n))?);
        let err = out.iter().zip(&start).map(|(a, b)| (a - b - 0.4).abs()).fold(0.0, f64::max);
        ensure!(err <= 1e-6, "constant field, n={n}: {err:e}");
    }
    let decay = |x: &Tensor, _t: f64| -> dryflow::Result<Tensor> { Ok(x.neg()?) };
    let coarse = vec64(&ok(euler_integrate(&decay, x0.clone(), 8))?);
    let fine = vec64(&ok(euler_integrate(&decay, x0, 1024))?);
    let k8 = (7.0f64 / 8.0).powi(8);
    let k1024 = (1.0f64 - 1.0 / 1024.0).powi(1024);
    let mut worst: f64 = 0.0;
    for i in 0..start.len() {
        worst = worst.max((coarse[i] - start[i] * k8).abs());
        worst = worst.max((fine[i] - start[i] * k1024).abs());
    }
    ensure!(worst <= 1e-9, "v = -x iterate error {worst:e}");
    Ok(format!("constant field exact; v = -x error {worst:.1e}"))
}

fn backbone_gradients() -> Check {
    let cfg = BackboneConfig {
        layers: 2,
        heads: 2,
        hidden: 32,
        ffn: 48,
        n_mels: 6,
        phonetic_dim: 5,
        semantic_dim: 8,
        time_dim: 8,
    };
    let net = ok(Backbone::new(&cfg, DType::F64, 3))?;
    ok(net.params().randomize(4, 0.3))?;
    let (b, f) = (2, 7);
    let mut rng = substream(5, 0);
    let (mc, mn): (Vec<_>, Vec<_>) = (0..b)
        .map(|_| build_infilling_masks(&mut rng, f, &MaskRanges::default()).unwrap())
        .unzip();
    let phon = randn(6, &[b, f, cfg.phonetic_dim]);
    let noisy = randn(7, &[b, f, cfg.n_mels]);
    let clean = randn(8, &[b, f, cfg.n_mels]);
    let x = randn(9, &[b, f, cfg.n_mels]);
    let probe = randn(10, &[b, f, cfg.n_mels]);
    let objective = || -> Tensor {
        let cond = assemble_condition(&phon, &noisy, &clean, mc.clone(), mn.clone(), net.semantic_projection()).unwrap();
        net.forward(&x, &[0.3, 0.8], &cond).unwrap().mul(&probe).unwrap().sum_all().unwrap()
    };
    let grads = ok(objective().backward())?;
    let params: Vec<_> = net.params().iter().map(|(k, v)| (k.clone(), v.clone())).collect();
    let mut pick = ChaCha8Rng::seed_from_u64(11);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let (name, var) = &params[pick.random_range(0..params.len())];
        let idx = pick.random_range(0..var.elem_count());
        let g = grads.get(var.as_tensor()).ok_or(format!("no gradient for {name}"))?;
        let analytic = vec64(g)[idx];
        let orig = vec64(var.as_tensor());
        let at = |d: f64| {
            let mut v = orig.clone();
            v[idx] += d;
            var.set(&Tensor::from_vec(v, var.dims(), &Device::Cpu).unwrap()).unwrap();
            objective().to_scalar::<f64>().unwrap()
        };
        let fd = (at(h) - at(-h)) / (2.0 * h);
        ok(var.set(&ok(Tensor::from_vec(orig, var.dims(), &Device::Cpu))?))?;
        let rel = (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-6);
        ensure!(rel <= 1e-4, "{name}[{idx}]: analytic {analytic} vs fd {fd}");
        worst = worst.max(rel);
    }
    Ok(format!("20 parameters, max relative error {worst:.1e}"))
}

// --------------------------------------------------------------------- drd

fn drd_convergence() -> Check {
    let speech = InMemoryCorpus::new(
        (0..8)
            .map(|i| toy_utterance(ToySpeaker::roster(i), 1.5, 100 + i as u64))
            .collect(),
    );
    let noise = InMemoryCorpus::new(ToyNoise::ALL.iter().map(|k| toy_noise(*k, 2.0, 3)).collect());
    let none = InMemoryCorpus::default();
    let pairs = Noiseless(SimulatedPairs {
        speech: &speech,
        noise: &noise,
        rirs: &none,
        cfg: MixtureConfig {
            segment_seconds: 1.0,
            ..MixtureConfig::default()
        },
        seed: 1,
    });
    let cfg = EncoderConfig::desk();
    let teacher = ok(ToyEncoder::new(&cfg, 100, 1))?;
    let before = ok(teacher.checksum())?;
    let student = ok(ToyEncoder::new(&cfg, 100, 2))?;
    let steps = 400;
    let optim = OptimConfig {
        steps,
        batch: 4,
        peak_lr: 2e-3,
        final_lr: 1e-5,
        ..OptimConfig::default()
    };
    let state = ok(drd_finetune(ok(DrdState::new(teacher, student, optim))?, &pairs, steps))?;
    let h = &state.loss_history;
    let first = h[0];
    let last = h[h.len() - 10..].iter().sum::<f64>() / 10.0;
    ensure!(last < 0.1 * first, "loss {first:.4} -> {last:.4}");
    ensure!(ok(state.teacher.checksum())? == before, "teacher weights changed");
    Ok(format!("{steps} steps, loss {first:.4} -> {last:.4} ({:.1}%)", 100.0 * last / first))
}

// ------------------------------------------------------------- end to end

struct Trained {
    root: PathBuf,
    cfg: RunConfig,
    pretrained: PathBuf,
    student: PathBuf,
    test: PathBuf,
    flows: BTreeMap<Variant, PathBuf>,
}

fn work_dir() -> &'static Path {
    static DIR: OnceLock<(Option<tempfile::TempDir>, PathBuf)> = OnceLock::new();
    let (_, p) = DIR.get_or_init(|| match std::env::var_os("DRYFLOW_ACCEPTANCE_DIR") {
        Some(d) => {
            let d = std::path::absolute(d).unwrap();
            std::fs::create_dir_all(&d).unwrap();
            (None, d)
        }
        None => {
            let t = tempfile::tempdir().unwrap();
            let p = t.path().to_path_buf();
            (Some(t), p)
        }
    });
    p
}

fn toy_run_config(data: &Path) -> RunConfig {
    let mut cfg = RunConfig::toy();
    cfg.paths.speech_manifest = data.join("speech.txt");
    cfg.paths.noise_manifest = data.join("noise.txt");
    cfg.paths.rir_manifest = data.join("rir.txt");
    cfg
}

/// Corpus, encoders, test set and flow models for the requested variants.
fn trained(variants: &[Variant]) -> Result<Trained, String> {
    static BASE: OnceLock<Result<Trained, String>> = OnceLock::new();
    let base = BASE.get_or_init(|| {
        let root = work_dir().join("e2e");
        let data = root.join("data");
        ok(cmd_make_toy_corpus(&data, &ToyCorpusSpec::default(), 7))?;
        let cfg = toy_run_config(&data);
        let here = Path::new("/");
        let pretrained = ok(cmd_pretrain(&cfg, here, &root.join("pretrain")))?;
        let student = ok(cmd_train_drd(&cfg, here, &pretrained, &root.join("drd"), None))?;
        let test = ok(cmd_make_test_set(
            &cfg,
            &data.join("speech_test.txt"),
            &data.join("noise_test.txt"),
            50,
            0.0,
            &root.join("test"),
        ))?;
        Ok(Trained {
            root,
            cfg,
            pretrained,
            student,
            test,
            flows: BTreeMap::new(),
        })
    });
    let base = base.as_ref().map_err(|e| e.clone())?;
    static FLOWS: OnceLock<std::sync::Mutex<BTreeMap<Variant, PathBuf>>> = OnceLock::new();
    let flows = FLOWS.get_or_init(Default::default);
    let mut flows = flows.lock().unwrap();
    for &v in variants {
        if flows.contains_key(&v) {
            continue;
        }
        let dir = base.root.join(v.name());
        let enc = encoder_for(base, v);
        let path = ok(cmd_train_fm(&base.cfg, Path::new("/"), &enc, v, &dir))?;
        flows.insert(v, path);
    }
    Ok(Trained {
        root: base.root.clone(),
        cfg: base.cfg.clone(),
        pretrained: base.pretrained.clone(),
        student: base.student.clone(),
        test: base.test.clone(),
        flows: flows.clone(),
    })
}

fn encoder_for(t: &Trained, v: Variant) -> PathBuf {
    if v == Variant::NoisySemantic {
        t.pretrained.clone()
    } else {
        t.student.clone()
    }
}

fn noisy_baseline(t: &Trained) -> Result<MetricReport, String> {
    let dir = t.root.join("noisy_baseline");
    let list = ok(write_passthrough_list(&t.test, &dir))?;
    let norm = ok(read_norm(&t.flows[&Variant::Full]))?;
    ok(cmd_evaluate(&t.cfg, &t.pretrained, &list, &t.test, &norm, &dir))
}

fn end_to_end() -> Check {
    let t = trained(&[Variant::Full])?;
    let dir = t.root.join("enhanced_full");
    let list = ok(cmd_enhance(
        &t.cfg,
        &t.student,
        &t.flows[&Variant::Full],
        &t.test,
        &dir,
        t.cfg.fm.sampling_steps,
        t.cfg.seed,
    ))?;
    let norm = ok(read_norm(&t.flows[&Variant::Full]))?;
    let enhanced = ok(cmd_evaluate(&t.cfg, &t.pretrained, &list, &t.test, &norm, &dir))?;
    let noisy = noisy_baseline(&t)?;
    ensure!(enhanced.records.len() == 50 && noisy.records.len() == 50, "expected 50 utterances");
    let wins = enhanced
        .records
        .iter()
        .zip(&noisy.records)
        .filter(|(e, n)| {
            assert_eq!(e.id, n.id);
            e.lsd_db < n.lsd_db
        })
        .count();
    let cos = |r: &MetricReport| r.records.iter().map(|x| x.semantic_cos).sum::<f64>() / r.records.len() as f64;
    let (ce, cn) = (cos(&enhanced), cos(&noisy));
    let detail = format!(
        "LSD better on {wins}/50; mean LSD {:.2} vs {:.2} dB; semantic_cos {ce:.4} vs {cn:.4}",
        enhanced.mean("lsd_db").unwrap_or(f64::NAN),
        noisy.mean("lsd_db").unwrap_or(f64::NAN)
    );
    ensure!(wins >= 40, "{detail}");
    ensure!(ce > cn, "{detail}");
    Ok(detail)
}

fn ablation_directions() -> Check {
    let variants = [Variant::Full, Variant::NoSemantic, Variant::NoisySemantic];
    let t = trained(&variants)?;
    let models: BTreeMap<Variant, VariantModel> = variants
        .iter()
        .map(|&v| {
            (
                v,
                VariantModel {
                    flow: t.flows[&v].clone(),
                    encoder: encoder_for(&t, v),
                },
            )
        })
        .collect();
    let out = t.root.join("ablation");
    let reports = ok(run_ablation_suite(&t.cfg, &models, &t.pretrained, &t.test, &out))?;
    let sheet = ok(std::fs::read_to_string(out.join("comparison.csv")))?;
    let value = |v: Variant, metric: &str| -> Result<f64, String> {
        sheet
            .lines()
            .map(|l| l.split(',').collect::<Vec<_>>())
            .find(|c| c[0] == v.name() && c[1] == metric)
            .and_then(|c| c[2].parse().ok())
            .ok_or(format!("{} {metric} missing from comparison.csv", v.name()))
    };
    let full_loss = value(Variant::Full, "held_out_cfm_loss")?;
    let full_cos = reports[&Variant::Full].mean("semantic_cos").unwrap_or(f64::NAN);
    let mut parts = vec![format!("full loss {full_loss:.4} cos {full_cos:.4}")];
    for v in [Variant::NoSemantic, Variant::NoisySemantic] {
        let loss = value(v, "held_out_cfm_loss")?;
        let cos = reports[&v].mean("semantic_cos").unwrap_or(f64::NAN);
        parts.push(format!("{} loss {loss:.4} cos {cos:.4}", v.name()));
        ensure!(loss > full_loss, "{}: held-out loss not worse; {}", v.name(), parts.join("; "));
        ensure!(cos < full_cos, "{}: semantic_cos not worse; {}", v.name(), parts.join("; "));
    }
    Ok(parts.join("; "))
}

// ---------------------------------------------------------- reproducibility

fn tiny_config(data: &Path) -> RunConfig {
    let mut cfg = toy_run_config(data);
    cfg.pretrain.steps = 6;
    cfg.pretrain.batch = 2;
    cfg.drd.steps = 6;
    cfg.drd.batch = 2;
    cfg.fm.optim.steps = 6;
    cfg.fm.optim.batch = 2;
    cfg.fm.pool_size = 4;
    cfg.fm.snapshot_every = 0;
    cfg.norm_pairs = 4;
    cfg.griffin_lim_iters = 4;
    cfg
}

fn run_once(dir: &Path) -> Result<(String, String, Vec<Vec<u8>>), String> {
    let data = dir.join("data");
    let spec = ToyCorpusSpec {
        speakers: 2,
        utterances_per_speaker: 3,
        test_utterances_per_speaker: 1,
        noises_per_kind: 1,
        rirs: 2,
        ..ToyCorpusSpec::default()
    };
    ok(cmd_make_toy_corpus(&data, &spec, 3))?;
    let cfg = tiny_config(&data);
    let here = Path::new("/");
    let pre = ok(cmd_pretrain(&cfg, here, &dir.join("pre")))?;
    let drd = ok(cmd_train_drd(&cfg, here, &pre, &dir.join("drd"), None))?;
    let flow = ok(cmd_train_fm(&cfg, here, &drd, Variant::Full, &dir.join("fm")))?;
    let test = ok(cmd_make_test_set(
        &cfg,
        &data.join("speech_test.txt"),
        &data.join("noise_test.txt"),
        2,
        0.0,
        &dir.join("test"),
    ))?;
    let list = ok(cmd_enhance(&cfg, &drd, &flow, &test, &dir.join("enh"), 8, cfg.seed))?;
    let sum = |p: &Path| ok(ok(Checkpoint::load(p))?.weights_checksum());
    let mut wavs = Vec::new();
    for line in ok(std::fs::read_to_string(&list))?.lines().skip(1) {
        let name = line.split(',').nth(1).ok_or("bad enhanced.csv")?;
        wavs.push(ok(std::fs::read(dir.join("enh").join(name)))?);
    }
    Ok((sum(&drd)?, sum(&flow)?, wavs))
}

fn schedule_and_reproducibility() -> Check {
    let (peak, fin) = (5e-4, 1e-6);
    ensure!(ok(lr_schedule(0, 1000, peak, fin, 0.1))? == 0.0, "lr(0) != 0");
    ensure!(ok(lr_schedule(100, 1000, peak, fin, 0.1))? == peak, "lr(warmup end) != peak");
    ensure!(ok(lr_schedule(1000, 1000, peak, fin, 0.1))? == fin, "lr(total) != final");
    let a = run_once(&work_dir().join("repro_a"))?;
    let b = run_once(&work_dir().join("repro_b"))?;
    ensure!(a.0 == b.0, "distilled encoder checksums differ");
    ensure!(a.1 == b.1, "flow checksums differ");
    ensure!(!a.2.is_empty() && a.2 == b.2, "enhanced WAVs differ");
    Ok(format!("lr boundaries exact; checksums and {} WAVs identical across runs", a.2.len()))
}

// -------------------------------------------------------------------- main

fn main() {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let criteria: [(&str, fn() -> Check, Duration); 10] = [
        ("mel_geometry", mel_geometry, Duration::from_secs(1)),
        ("simulator_closure", simulator_closure, Duration::from_secs(60)),
        ("early_reflection_operator", early_reflection, Duration::from_secs(1)),
        ("cfm_math_suite", cfm_math, Duration::from_secs(60)),
        ("sampler_oracles", sampler_oracles, Duration::from_secs(10)),
        ("backbone_gradients", backbone_gradients, Duration::from_secs(60)),
        ("drd_convergence", drd_convergence, Duration::from_secs(600)),
        ("end_to_end_toy_enhancement", end_to_end, Duration::from_secs(2 * 3600)),
        ("ablation_directions", ablation_directions, Duration::from_secs(4 * 3600)),
        ("schedule_and_reproducibility", schedule_and_reproducibility, Duration::from_secs(600)),
    ];
    let mut failed = 0;
    let mut ran = 0;
    for (name, check, budget) in criteria {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let took = start.elapsed();
        let result = match result {
            Ok(d) if took > budget => Err(format!("{d}; took {took:.1?}, budget {budget:?}")),
            r => r,
        };
        match result {
            Ok(detail) => println!("PASS {name}: {detail} [{:.1}s]", took.as_secs_f64()),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail} [{:.1}s]", took.as_secs_f64());
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
