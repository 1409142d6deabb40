use dryflow::checkpoint::Checkpoint;
use dryflow::drd::{drd_finetune, drd_loss, DrdState};
use dryflow::encoder::{EncoderConfig, PhoneticEncoder, ToyEncoder};
use dryflow::mixture::{InMemoryCorpus, MixtureConfig, Noiseless, SimulatedPairs};
use dryflow::optim::OptimConfig;
use dryflow::toy::{toy_noise, toy_utterance, ToyNoise, ToySpeaker};

fn corpora() -> (InMemoryCorpus, InMemoryCorpus) {
    let speech = (0..8)
        .map(|i| toy_utterance(ToySpeaker::roster(i), 1.5, 100 + i as u64))
        .collect();
    let noise = ToyNoise::ALL.iter().map(|k| toy_noise(*k, 2.0, 3)).collect();
    (InMemoryCorpus::new(speech), InMemoryCorpus::new(noise))
}

fn optim(steps: usize) -> OptimConfig {
    OptimConfig {
        steps,
        batch: 4,
        peak_lr: 2e-3,
        final_lr: 1e-5,
        ..OptimConfig::default()
    }
}

fn mixture() -> MixtureConfig {
    MixtureConfig {
        segment_seconds: 1.0,
        ..MixtureConfig::default()
    }
}

#[test]
fn student_converges_to_teacher_on_noiseless_pairs() {
    let (speech, noise) = corpora();
    let none = InMemoryCorpus::default();
    let pairs = Noiseless(SimulatedPairs {
        speech: &speech,
        noise: &noise,
        rirs: &none,
        cfg: mixture(),
        seed: 1,
    });
    let cfg = EncoderConfig::desk();
    let teacher = ToyEncoder::new(&cfg, 100, 1).unwrap();
    let before = teacher.checksum().unwrap();
    let student = ToyEncoder::new(&cfg, 100, 2).unwrap();
    let steps = 400;
    let state = DrdState::new(teacher, student, optim(steps)).unwrap();
    let state = drd_finetune(state, &pairs, steps).unwrap();

    let h = &state.loss_history;
    let first = h[0];
    let last = h[h.len() - 10..].iter().sum::<f64>() / 10.0;
    assert!(last < 0.1 * first, "initial {first}, final {last}");
    assert_eq!(state.teacher.checksum().unwrap(), before);

    // Held-out check with the public loss.
    let w = toy_utterance(ToySpeaker::roster(1), 1.0, 999);
    let l = drd_loss(&state.student.encode(&w).unwrap(), &state.teacher.encode(&w).unwrap()).unwrap();
    assert!(l < 0.1 * first, "held-out {l} vs initial {first}");
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let (speech, noise) = corpora();
    let none = InMemoryCorpus::default();
    let pairs = SimulatedPairs {
        speech: &speech,
        noise: &noise,
        rirs: &none,
        cfg: mixture(),
        seed: 7,
    };
    let cfg = EncoderConfig::desk();
    let teacher = || ToyEncoder::new(&cfg, 100, 4).unwrap();
    let total = 12;

    let straight = drd_finetune(DrdState::from_pretrained(teacher(), optim(total)).unwrap(), &pairs, total).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("state.ckpt");
    let half = drd_finetune(DrdState::from_pretrained(teacher(), optim(total)).unwrap(), &pairs, 5).unwrap();
    half.to_checkpoint("fp").unwrap().save(&path).unwrap();
    drop(half);
    let ck = Checkpoint::load(&path).unwrap();
    let resumed = DrdState::from_checkpoint(&ck, teacher()).unwrap();
    assert_eq!(resumed.step, 5);
    let resumed = drd_finetune(resumed, &pairs, total - 5).unwrap();

    assert_eq!(resumed.loss_history, straight.loss_history);
    assert_eq!(resumed.student.checksum().unwrap(), straight.student.checksum().unwrap());
}

#[test]
fn resuming_with_another_teacher_is_refused() {
    let cfg = EncoderConfig::desk();
    let state = DrdState::from_pretrained(ToyEncoder::new(&cfg, 100, 1).unwrap(), optim(4)).unwrap();
    let ck = state.to_checkpoint("fp").unwrap();
    let other = ToyEncoder::new(&cfg, 100, 2).unwrap();
    assert!(DrdState::from_checkpoint(&ck, other).is_err());
}

#[test]
fn distillation_moves_noisy_features_towards_clean_ones() {
    let (speech, noise) = corpora();
    let none = InMemoryCorpus::default();
    let pairs = SimulatedPairs {
        speech: &speech,
        noise: &noise,
        rirs: &none,
        cfg: mixture(),
        seed: 11,
    };
    let cfg = EncoderConfig::desk();
    let steps = 150;
    let state = DrdState::from_pretrained(ToyEncoder::new(&cfg, 100, 5).unwrap(), optim(steps)).unwrap();
    let state = drd_finetune(state, &pairs, steps).unwrap();
    let h = &state.loss_history;
    let head = h[..10].iter().sum::<f64>() / 10.0;
    let tail = h[h.len() - 10..].iter().sum::<f64>() / 10.0;
    assert!(tail < head, "{head} -> {tail}");
}
