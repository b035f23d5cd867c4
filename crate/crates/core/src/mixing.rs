//! Two-source-plus-noise mixture synthesis at requested SIR and SNR.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Gains applied to the interferer and the noise; the target is unscaled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixGains {
    pub interferer: f64,
    pub noise: f64,
}

/// A synthesized mixture and the gains that produced it. All signals are
/// cropped to the shortest input.
#[derive(Debug, Clone, PartialEq)]
pub struct Mixture {
    pub mixture: Vec<f32>,
    pub target: Vec<f32>,
    pub gains: MixGains,
}

pub(crate) fn power(x: &[f32]) -> f64 {
    x.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>() / x.len().max(1) as f64
}

/// Seeded unit-variance white Gaussian noise.
pub fn white_noise(len: usize, seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len)
        .map(|_| {
            let v: f64 = StandardNormal.sample(&mut rng);
            v as f32
        })
        .collect()
}

/// Mixes `target` with `interferer` scaled to `sir_db` and noise scaled to
/// `snr_db` (both relative to the target). Without a `noise` signal, seeded
/// white noise is used. `snr_db = +inf` disables noise.
pub fn synthesize_mixture(
    target: &[f32],
    interferer: &[f32],
    noise: Option<&[f32]>,
    sir_db: f64,
    snr_db: f64,
    seed: u64,
) -> Result<Mixture> {
    let mut len = target.len().min(interferer.len());
    if let Some(n) = noise {
        len = len.min(n.len());
    }
    if len == 0 {
        return Err(Error::ZeroPower("empty input"));
    }
    let target = &target[..len];
    let interferer = &interferer[..len];
    let pt = power(target);
    if pt == 0.0 {
        return Err(Error::ZeroPower("target"));
    }
    let pi = power(interferer);
    if pi == 0.0 {
        return Err(Error::ZeroPower("interferer"));
    }
    let gi = (pt / (pi * 10f64.powf(sir_db / 10.0))).sqrt();
    let mut mixture: Vec<f32> = target
        .iter()
        .zip(interferer)
        .map(|(&t, &i)| (t as f64 + gi * i as f64) as f32)
        .collect();
    let gn = if snr_db == f64::INFINITY {
        0.0
    } else {
        let generated;
        let n = match noise {
            Some(n) => &n[..len],
            None => {
                generated = white_noise(len, seed);
                &generated[..]
            }
        };
        let pn = power(n);
        if pn == 0.0 {
            return Err(Error::ZeroPower("noise"));
        }
        let gn = (pt / (pn * 10f64.powf(snr_db / 10.0))).sqrt();
        for (m, &v) in mixture.iter_mut().zip(n) {
            *m = (*m as f64 + gn * v as f64) as f32;
        }
        gn
    };
    Ok(Mixture {
        mixture,
        target: target.to_vec(),
        gains: MixGains {
            interferer: gi,
            noise: gn,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sig(seed: u64) -> Vec<f32> {
        white_noise(4000, seed)
    }

    #[test]
    fn equal_power_zero_sir_gives_unit_gain() {
        let t = vec![1.0f32, -1.0, 1.0, -1.0];
        let i = vec![-1.0f32, -1.0, 1.0, 1.0];
        let m = synthesize_mixture(&t, &i, None, 0.0, f64::INFINITY, 0).unwrap();
        assert_eq!(m.gains.interferer, 1.0);
        assert_eq!(m.gains.noise, 0.0);
        assert_eq!(m.mixture, vec![0.0, -2.0, 2.0, 0.0]);
    }

    #[test]
    fn measured_ratios_match_request() {
        let (t, i, n) = (sig(1), sig(2), sig(3));
        for (sir, snr) in [(-5.0, 10.0), (0.0, 20.0), (7.5, 0.0)] {
            let m = synthesize_mixture(&t, &i, Some(&n), sir, snr, 0).unwrap();
            let scaled_i: Vec<f32> = i
                .iter()
                .map(|&v| (m.gains.interferer * v as f64) as f32)
                .collect();
            let scaled_n: Vec<f32> = n
                .iter()
                .map(|&v| (m.gains.noise * v as f64) as f32)
                .collect();
            let got_sir = 10.0 * (power(&t) / power(&scaled_i)).log10();
            let got_snr = 10.0 * (power(&t) / power(&scaled_n)).log10();
            assert!((got_sir - sir).abs() < 0.01);
            assert!((got_snr - snr).abs() < 0.01);
        }
    }

    #[test]
    fn deterministic_and_cropped() {
        let a = synthesize_mixture(&sig(1), &sig(2)[..3000], None, 0.0, 5.0, 9).unwrap();
        let b = synthesize_mixture(&sig(1), &sig(2)[..3000], None, 0.0, 5.0, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.mixture.len(), 3000);
        let c = synthesize_mixture(&sig(1), &sig(2)[..3000], None, 0.0, 5.0, 10).unwrap();
        assert_ne!(a.mixture, c.mixture);
    }

    #[test]
    fn silent_sources_rejected() {
        let z = vec![0.0f32; 10];
        assert!(matches!(
            synthesize_mixture(&z, &sig(1), None, 0.0, 0.0, 0),
            Err(Error::ZeroPower("target"))
        ));
        assert!(matches!(
            synthesize_mixture(&sig(1), &z, None, 0.0, 0.0, 0),
            Err(Error::ZeroPower("interferer"))
        ));
    }
}
