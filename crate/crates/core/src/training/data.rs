//! Synthetic two-talker task.
//!
//! Each toy "speaker" is band-limited Gaussian noise in its own passband,
//! amplitude-modulated at a syllable-like rate. Passbands do not overlap, so
//! an enrollment utterance identifies which band to keep.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mixing::{synthesize_mixture, white_noise};

/// One training or evaluation item.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub mixture: Vec<f32>,
    pub target: Vec<f32>,
    pub enrollment: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub sample_rate: u32,
    pub examples: Vec<Example>,
}

impl Dataset {
    pub fn new(sample_rate: u32, examples: Vec<Example>) -> Self {
        Self {
            sample_rate,
            examples,
        }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Splits off the last `held_out` examples.
    pub fn split(mut self, held_out: usize) -> Result<(Dataset, Dataset)> {
        if held_out >= self.examples.len() {
            return Err(Error::EmptyDataset);
        }
        let tail = self.examples.split_off(self.examples.len() - held_out);
        Ok((self.clone(), Dataset::new(self.sample_rate, tail)))
    }
}

/// Parameters of the synthetic task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToySpec {
    pub sample_rate: u32,
    pub count: usize,
    /// Mixture and target length in samples.
    pub length: usize,
    pub enrollment_length: usize,
    /// Passbands in Hz, one per speaker.
    pub bands: Vec<(f64, f64)>,
    pub sir_range_db: (f64, f64),
    pub snr_db: f64,
}

impl Default for ToySpec {
    fn default() -> Self {
        Self {
            sample_rate: 8000,
            count: 240,
            length: 2000,
            enrollment_length: 2000,
            bands: vec![
                (150.0, 550.0),
                (750.0, 1250.0),
                (1500.0, 2200.0),
                (2500.0, 3400.0),
            ],
            sir_range_db: (-3.0, 3.0),
            snr_db: 30.0,
        }
    }
}

/// An utterance of the speaker with passband `band`.
pub fn toy_utterance(
    band: (f64, f64),
    len: usize,
    fs: u32,
    rng: &mut ChaCha8Rng,
    planner: &mut FftPlanner<f64>,
) -> Vec<f32> {
    let n = len.next_power_of_two();
    let mut buf: Vec<Complex<f64>> = white_noise(n, rng.gen())
        .into_iter()
        .map(|v| Complex::new(v as f64, 0.0))
        .collect();
    planner.plan_fft_forward(n).process(&mut buf);
    for (k, c) in buf.iter_mut().enumerate() {
        let f = k.min(n - k) as f64 * fs as f64 / n as f64;
        if f < band.0 || f > band.1 {
            *c = Complex::new(0.0, 0.0);
        }
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let rate = rng.gen_range(2.0..6.0);
    let phase = rng.gen_range(0.0..std::f64::consts::TAU);
    let mut out: Vec<f64> = buf[..len]
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let t = i as f64 / fs as f64;
            c.re * (0.6 + 0.4 * (std::f64::consts::TAU * rate * t + phase).sin())
        })
        .collect();
    let rms = (out.iter().map(|v| v * v).sum::<f64>() / len as f64).sqrt();
    out.iter_mut().for_each(|v| *v *= 0.1 / rms);
    out.into_iter().map(|v| v as f32).collect()
}

/// Generates `spec.count` mixtures. Target and interferer speakers are drawn
/// without replacement; the enrollment is a fresh utterance of the target.
pub fn toy_dataset(spec: &ToySpec, seed: u64) -> Result<Dataset> {
    if spec.bands.len() < 2 {
        return Err(Error::Config("toy task needs at least two speakers".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut planner = FftPlanner::new();
    let mut examples = Vec::with_capacity(spec.count);
    for _ in 0..spec.count {
        let s = rng.gen_range(0..spec.bands.len());
        let mut i = rng.gen_range(0..spec.bands.len() - 1);
        if i >= s {
            i += 1;
        }
        let fs = spec.sample_rate;
        let target = toy_utterance(spec.bands[s], spec.length, fs, &mut rng, &mut planner);
        let interf = toy_utterance(spec.bands[i], spec.length, fs, &mut rng, &mut planner);
        let enrollment = toy_utterance(
            spec.bands[s],
            spec.enrollment_length,
            fs,
            &mut rng,
            &mut planner,
        );
        let sir = rng.gen_range(spec.sir_range_db.0..=spec.sir_range_db.1);
        let mix = synthesize_mixture(&target, &interf, None, sir, spec.snr_db, rng.gen())?;
        examples.push(Example {
            mixture: mix.mixture,
            target: mix.target,
            enrollment,
        });
    }
    Ok(Dataset::new(spec.sample_rate, examples))
}
