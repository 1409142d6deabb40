use dryflow::audio::{Waveform, PIPELINE_RATE};
use dryflow::flow::{random_span, InfillingMask};
use dryflow::mel::{hz_to_mel, mel_to_hz, MelSpectrogram};
use dryflow::metrics::{lsd, measure_snr, mel_mse};
use dryflow::mixture::{derive_seed, mix_at_snr, substream};
use dryflow::optim::lr_schedule;
use proptest::prelude::*;

fn spectrogram(frames: usize, n_mels: usize) -> impl Strategy<Value = MelSpectrogram> {
    prop::collection::vec(-12.0f64..2.0, frames * n_mels)
        .prop_map(move |v| MelSpectrogram::from_values(v, frames, n_mels, 50.0).unwrap())
}

proptest! {
    #[test]
    fn schedule_stays_between_zero_and_peak(total in 10usize..5000, frac in 0.01f64..0.5, step_frac in 0.0f64..=1.0) {
        let step = (step_frac * total as f64) as usize;
        let lr = lr_schedule(step, total, 3e-4, 1e-6, frac).unwrap();
        prop_assert!((0.0..=3e-4).contains(&lr));
    }

    #[test]
    fn schedule_decays_after_warmup(total in 20usize..2000, frac in 0.05f64..0.5) {
        let start = (frac * total as f64).ceil() as usize;
        let mut prev = f64::INFINITY;
        for s in start..=total {
            let lr = lr_schedule(s, total, 1e-3, 1e-5, frac).unwrap();
            prop_assert!(lr <= prev + 1e-18);
            prev = lr;
        }
    }

    #[test]
    fn lsd_is_a_symmetric_distance((a, b) in (1usize..6, 1usize..8).prop_flat_map(|(f, m)| (spectrogram(f, m), spectrogram(f, m)))) {
        prop_assert_eq!(lsd(&a, &a).unwrap(), 0.0);
        prop_assert_eq!(mel_mse(&a, &a).unwrap(), 0.0);
        let ab = lsd(&a, &b).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - lsd(&b, &a).unwrap()).abs() <= 1e-12);
    }

    #[test]
    fn mixing_hits_any_requested_snr(seed in any::<u64>(), snr in -20.0f64..30.0) {
        let mut rng = substream(seed, 0);
        let draw = |rng: &mut rand_chacha::ChaCha8Rng| {
            use rand::Rng;
            Waveform::new((0..800).map(|_| rng.random_range(-0.5..0.5)).collect(), PIPELINE_RATE).unwrap()
        };
        let speech = draw(&mut rng);
        let noise = draw(&mut rng);
        let noisy = mix_at_snr(&speech, &noise, snr).unwrap();
        let residual: Vec<f64> = noisy.samples().iter().zip(speech.samples()).map(|(y, s)| y - s).collect();
        let residual = Waveform::new(residual, PIPELINE_RATE).unwrap();
        prop_assert!((measure_snr(&speech, &residual).unwrap() - snr).abs() < 1e-6);
    }

    #[test]
    fn spans_respect_their_ratio_range(seed in any::<u64>(), frames in 2usize..600, lo in 0.0f64..0.9) {
        let m: InfillingMask = random_span(&mut substream(seed, 1), frames, (lo, 1.0)).unwrap();
        prop_assert!(m.is_contiguous());
        prop_assert!(m.missing_count() as f64 >= (lo * frames as f64).floor());
        prop_assert!(m.missing_count() <= frames);
    }

    #[test]
    fn mel_scale_round_trips(hz in 0.0f64..8000.0) {
        prop_assert!((mel_to_hz(hz_to_mel(hz)) - hz).abs() < 1e-6);
    }

    #[test]
    fn derived_seeds_separate_indices(seed in any::<u64>(), i in 0u64..1_000_000) {
        prop_assert_eq!(derive_seed(seed, i), derive_seed(seed, i));
        prop_assert_ne!(derive_seed(seed, i), derive_seed(seed, i + 1));
    }
}
