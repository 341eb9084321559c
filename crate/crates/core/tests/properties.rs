use num_complex::Complex64;
use proptest::prelude::*;
use rashvit_core::datasets::{load_archive, save_archive, split, synth_generate, Split, SplitRatios, SynthSpec};
use rashvit_core::sigproc::{featurize, fft, inject_noise, measure_snr, normalize, sliding_window, WINDOW};
use rashvit_core::{NoiseSpec, SignalSegment};

fn naive_dft(x: &[f64]) -> Vec<Complex64> {
    let n = x.len();
    (0..n)
        .map(|k| {
            x.iter()
                .enumerate()
                .map(|(t, &v)| {
                    let a = -2.0 * std::f64::consts::PI * ((k * t) % n) as f64 / n as f64;
                    Complex64::new(v * a.cos(), v * a.sin())
                })
                .sum()
        })
        .collect()
}

fn vec_of(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0f64..10.0, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn fft_is_linear(x in vec_of(64), y in vec_of(64), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let mix: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
        let (fx, fy, fm) = (fft(&x).unwrap(), fft(&y).unwrap(), fft(&mix).unwrap());
        for k in 0..64 {
            let expect = fx[k] * a + fy[k] * b;
            prop_assert!((fm[k] - expect).norm() < 1e-9);
        }
    }

    #[test]
    fn fft_matches_dft_on_small_sizes(exp in 1u32..7, seed in any::<u64>()) {
        let n = 1usize << exp;
        let x: Vec<f64> = (0..n).map(|i| ((i as u64 ^ seed) % 1000) as f64 / 100.0 - 5.0).collect();
        for (a, b) in fft(&x).unwrap().iter().zip(naive_dft(&x)) {
            prop_assert!((a - b).norm() < 1e-9);
        }
    }

    #[test]
    fn real_input_spectrum_is_conjugate_symmetric(x in vec_of(128)) {
        let f = fft(&x).unwrap();
        for k in 1..128 {
            prop_assert!((f[k] - f[128 - k].conj()).norm() < 1e-9);
        }
    }

    #[test]
    fn sliding_window_count(len in 1usize..5000, window in 1usize..600, stride in 1usize..600) {
        let signal: Vec<f64> = (0..len).map(|i| i as f64).collect();
        match sliding_window(&signal, window, stride, 1.0, "s") {
            Ok(w) => {
                prop_assert!(len >= window);
                prop_assert_eq!(w.len(), (len - window) / stride + 1);
                for (i, seg) in w.iter().enumerate() {
                    prop_assert_eq!(seg.samples[0], (i * stride) as f64);
                    prop_assert_eq!(seg.len(), window);
                }
            }
            Err(_) => prop_assert!(len < window),
        }
    }

    #[test]
    fn normalized_segments_have_unit_moments(x in vec_of(256)) {
        let seg = SignalSegment::new(x, 1.0, "p").unwrap();
        let z = normalize(&seg);
        let n = z.len() as f64;
        let mean = z.samples.iter().sum::<f64>() / n;
        let var = z.samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        prop_assert!(mean.abs() < 1e-9);
        prop_assert!((var - 1.0).abs() < 1e-9 || var == 0.0);
    }

    #[test]
    fn injected_noise_hits_the_requested_snr(snr in -20.0f64..20.0, seed in any::<u64>(), x in vec_of(512)) {
        let seg = SignalSegment::new(x, 1.0, "p").unwrap();
        prop_assume!(seg.power() > 1e-6);
        let noisy = inject_noise(&seg, &NoiseSpec::new(snr, seed).unwrap()).unwrap();
        prop_assert!((measure_snr(&seg, &noisy).unwrap() - snr).abs() < 1e-6);
        let again = inject_noise(&seg, &NoiseSpec::new(snr, seed).unwrap()).unwrap();
        prop_assert_eq!(noisy, again);
    }

    #[test]
    fn featurize_is_deterministic_and_packs_the_spectrum(x in vec_of(WINDOW)) {
        let seg = SignalSegment::new(x.clone(), 12_000.0, "p").unwrap();
        let a = featurize(&seg).unwrap();
        prop_assert_eq!(&a, &featurize(&seg).unwrap());
        let f = fft(&x).unwrap();
        let d = a.data.data();
        for k in [0, 1, 777, WINDOW - 1] {
            prop_assert_eq!(d[k], f[k].re);
            prop_assert_eq!(d[WINDOW + k], f[k].im);
        }
    }

    #[test]
    fn split_partitions_each_class(per_class in 3usize..40, classes in 2usize..5, seed in any::<u64>()) {
        let ds = synth_generate(&SynthSpec { segment_len: 16, ..SynthSpec::standard(classes, per_class, 1) }).unwrap();
        let s = split(&ds, SplitRatios::default(), seed).unwrap();
        let mut all: Vec<usize> = Split::ALL.iter().flat_map(|&p| s.indices(p)).collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..ds.len()).collect::<Vec<_>>());
        for k in 0..classes {
            let count = |p| s.indices(p).iter().filter(|&&i| s.labels[i] == k).count();
            prop_assert_eq!(count(Split::Train) + count(Split::Val) + count(Split::Test), per_class);
            prop_assert!(count(Split::Train) >= 1 && count(Split::Val) >= 1 && count(Split::Test) >= 1);
        }
        prop_assert_eq!(s.tags, split(&ds, SplitRatios::default(), seed).unwrap().tags);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn archive_round_trip_is_bit_exact(seed in any::<u64>(), per_class in 1usize..4) {
        let ds = synth_generate(&SynthSpec::standard(3, per_class, seed)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let manifest = save_archive(&ds, dir.path()).unwrap();
        let back = load_archive(&manifest).unwrap();
        prop_assert_eq!(&back.labels, &ds.labels);
        prop_assert_eq!(&back.classes, &ds.classes);
        prop_assert_eq!(back.sample_rate_hz, ds.sample_rate_hz);
        for (a, b) in back.segments.iter().zip(&ds.segments) {
            prop_assert!(a.samples.iter().zip(&b.samples).all(|(p, q)| p.to_bits() == q.to_bits()));
        }
    }
}

#[test]
fn synth_generation_is_seed_deterministic() {
    let a = synth_generate(&SynthSpec::standard(4, 5, 11)).unwrap();
    let b = synth_generate(&SynthSpec::standard(4, 5, 11)).unwrap();
    let c = synth_generate(&SynthSpec::standard(4, 5, 12)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.segments, c.segments);
}
