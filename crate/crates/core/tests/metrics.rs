mod common;

use common::{rng, speechlike};
use dense_core::metrics::{
    evaluate, evaluate_all, sdr, sdri, si_sdr, si_sdri, stoi, Summary, Triple,
};
use dense_core::{Error, Execution};
use proptest::prelude::*;

fn lcg(n: usize, seed: u64) -> Vec<f64> {
    let mut s = seed;
    (0..n)
        .map(|_| {
            s = s
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            (s >> 40) as f64 / (1u64 << 24) as f64 * 2.0 - 1.0
        })
        .collect()
}

fn voice(n: usize, fs: u32) -> Vec<f32> {
    let noise = lcg(n, 7);
    (0..n)
        .map(|i| {
            let t = i as f64 / fs as f64;
            let mut v = 0.0;
            for h in 1..8 {
                v += (2.0 * std::f64::consts::PI * 140.0 * h as f64 * t).sin() / h as f64;
            }
            let env = (2.0 * std::f64::consts::PI * 3.0 * t).sin().max(0.0);
            (0.2 * v * env + 0.01 * noise[i]) as f32
        })
        .collect()
}

fn add_noise(x: &[f32], gain: f64, seed: u64) -> Vec<f32> {
    x.iter()
        .zip(lcg(x.len(), seed))
        .map(|(&a, b)| (a as f64 + gain * b) as f32)
        .collect()
}

// Values produced by the reference Python STOI implementation on the same
// deterministic signals.
const STOI_FIXTURES: [(u32, f64, u64, f64); 12] = [
    (8000, 0.02, 11, 0.6701506600431647),
    (8000, 0.1, 12, 0.5766691982582238),
    (8000, 0.3, 13, 0.5014061384387964),
    (8000, 1.0, 14, 0.40951294041292835),
    (10000, 0.02, 11, 0.6569664766434403),
    (10000, 0.1, 12, 0.5813956720971738),
    (10000, 0.3, 13, 0.5124963356506167),
    (10000, 1.0, 14, 0.4083538760125123),
    (16000, 0.02, 11, 0.6577315613089848),
    (16000, 0.1, 12, 0.6085788742110795),
    (16000, 0.3, 13, 0.5299264184495684),
    (16000, 1.0, 14, 0.44105010011595575),
];

#[test]
fn stoi_matches_reference_implementation() {
    for (fs, gain, seed, expected) in STOI_FIXTURES {
        let x = voice(2 * fs as usize, fs);
        let y = add_noise(&x, gain, seed);
        let got = stoi(&y, &x, fs).unwrap();
        assert!(
            (got - expected).abs() < 1e-3,
            "fs {fs} gain {gain}: {got} vs {expected}"
        );
    }
    let x = voice(16000, 8000);
    let y = add_noise(&x, 0.003, 21);
    assert!((stoi(&y, &x, 8000).unwrap() - 0.9626947386574233).abs() < 1e-3);
}

#[test]
fn stoi_identity_and_bounds() {
    let mut r = rng(1);
    let x = speechlike(16000, &mut r);
    assert!((stoi(&x, &x, 8000).unwrap() - 1.0).abs() < 1e-6);
    let flipped: Vec<f32> = x.iter().map(|v| -2.5 * v).collect();
    assert!((stoi(&flipped, &x, 8000).unwrap() - 1.0).abs() < 1e-6);

    let noise: Vec<f32> = lcg(16000, 99).into_iter().map(|v| v as f32 * 0.1).collect();
    let s = stoi(&noise, &x, 8000).unwrap();
    assert!(s < 0.5 && s > -1.0, "{s}");
}

#[test]
fn stoi_degrades_with_noise() {
    let x = voice(16000, 8000);
    let p: f64 = x.iter().map(|&v| (v as f64).powi(2)).sum::<f64>() / x.len() as f64;
    let mut last = f64::INFINITY;
    for snr in [30.0, 20.0, 10.0, 0.0] {
        // Uniform noise on [-1, 1] has power 1/3.
        let gain = (3.0 * p / 10f64.powf(snr / 10.0)).sqrt();
        let s = stoi(&add_noise(&x, gain, 5), &x, 8000).unwrap();
        if snr == 30.0 {
            assert!(s > 0.9 && s <= 1.0, "{s}");
        }
        assert!(s < last, "snr {snr}: {s} !< {last}");
        last = s;
    }
}

#[test]
fn stoi_errors() {
    let x = voice(16000, 8000);
    assert!(matches!(
        stoi(&x, &x, 44100),
        Err(Error::UnsupportedRate(44100))
    ));
    assert!(matches!(
        stoi(&x[..2000], &x[..2000], 8000),
        Err(Error::SignalTooShort(_))
    ));
    assert!(stoi(&x[..100], &x, 8000).is_err());
}

#[test]
fn sdr_hand_examples() {
    let r = [1.0f32, 0.0, -1.0];
    assert!(sdr(&[1.0, 1.0, -2.0], &r).unwrap().abs() < 1e-6);
    assert!((si_sdr(&[1.0, 1.0, -2.0], &r).unwrap() - 4.771).abs() < 1e-3);
    assert_eq!(sdr(&r, &r).unwrap(), 60.0);
    let mix = [1.0f32, 1.0, -2.0];
    assert_eq!(sdri(&mix, &r, &mix).unwrap(), 0.0);
    assert_eq!(si_sdri(&mix, &r, &mix).unwrap(), 0.0);
    assert!(sdri(&r, &r, &mix).unwrap() > 59.0);
}

#[test]
fn evaluate_and_summary() {
    let x = voice(16000, 8000);
    let mix = add_noise(&x, 0.2, 3);
    let est = add_noise(&x, 0.05, 4);
    let res = evaluate(&est, &x, &mix, 8000).unwrap();
    assert!(res.sdri_db > 10.0 && res.si_sdri_db > 10.0);
    assert!(res.stoi > stoi(&mix, &x, 8000).unwrap());

    let items: Vec<Triple> = vec![
        (est.clone(), x.clone(), mix.clone()),
        (mix.clone(), x.clone(), mix.clone()),
        (x.clone(), x.clone(), mix.clone()),
    ];
    let seq = evaluate_all(&items, 8000, Execution::Sequential).unwrap();
    let par = evaluate_all(&items, 8000, Execution::Parallel).unwrap();
    assert_eq!(seq, par);
    assert_eq!(seq[0], res);
    assert_eq!(seq[1].sdri_db, 0.0);
    let s = Summary::of(&seq).unwrap();
    assert_eq!(s.count, 3);
    assert_eq!(s.median.sdri_db, res.sdri_db);
    assert!(Summary::of(&[]).is_none());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn si_sdr_scale_invariant(seed in any::<u64>(), alpha in 0.01f32..100.0, neg in any::<bool>()) {
        let mut r = rng(seed);
        let x = speechlike(800, &mut r);
        let e = speechlike(800, &mut r);
        let est: Vec<f32> = x.iter().zip(&e).map(|(a, b)| a + 0.3 * b).collect();
        let a = if neg { -alpha } else { alpha };
        let scaled: Vec<f32> = est.iter().map(|v| a * v).collect();
        let base = si_sdr(&est, &x).unwrap();
        prop_assert!((si_sdr(&scaled, &x).unwrap() - base).abs() < 1e-6);
    }

    #[test]
    fn sdr_is_clamped(seed in any::<u64>(), g in 0.0f32..1e-3) {
        let mut r = rng(seed);
        let x = speechlike(400, &mut r);
        let est: Vec<f32> = x.iter().map(|v| v * (1.0 + g)).collect();
        let v = sdr(&est, &x).unwrap();
        prop_assert!((-60.0..=60.0).contains(&v));
    }

    #[test]
    fn stoi_sign_and_scale_invariant(seed in 0u64..1000, scale in 0.1f32..10.0) {
        let x = voice(12000, 8000);
        let y = add_noise(&x, 0.05, seed);
        let scaled: Vec<f32> = y.iter().map(|v| -scale * v).collect();
        let a = stoi(&y, &x, 8000).unwrap();
        let b = stoi(&scaled, &x, 8000).unwrap();
        prop_assert!((a - b).abs() < 1e-5, "{} {}", a, b);
    }
}
