//! Short-time objective intelligibility.
//!
//! Both signals are resampled to 10 kHz, frames where the reference is more
//! than 40 dB below its loudest frame are dropped, and the remaining signal
//! is analysed with 256-sample Hann frames (50% overlap, 512-point FFT)
//! grouped into 15 third-octave bands. The score is the mean correlation of
//! clipped, energy-normalized 30-frame band envelopes.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::resample::resample;
use crate::error::{Error, Result};

const FS: usize = 10_000;
const FRAME: usize = 256;
const HOP: usize = FRAME / 2;
const NFFT: usize = 512;
const BANDS: usize = 15;
const MIN_FREQ: f64 = 150.0;
const SEGMENT: usize = 30;
const BETA_DB: f64 = -15.0;
const DYN_RANGE_DB: f64 = 40.0;
const EPS: f64 = f64::EPSILON;

pub const SUPPORTED_RATES: [u32; 3] = [8000, 10_000, 16_000];

/// Periodic-free Hann window of length `n` (the endpoints of an `n + 2`
/// window are dropped so no tap is zero).
fn hann(n: usize) -> Vec<f64> {
    (1..=n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / (n + 1) as f64).cos())
        .collect()
}

/// Band `[lo, hi)` FFT-bin ranges of the third-octave filterbank.
fn third_octave_bins() -> Vec<(usize, usize)> {
    let bins = NFFT / 2 + 1;
    let freqs: Vec<f64> = (0..bins)
        .map(|i| i as f64 * FS as f64 / NFFT as f64)
        .collect();
    let nearest = |target: f64| {
        let mut best = 0;
        for (i, f) in freqs.iter().enumerate() {
            if (f - target).powi(2) < (freqs[best] - target).powi(2) {
                best = i;
            }
        }
        best
    };
    (0..BANDS)
        .map(|k| {
            let k = k as f64;
            let lo = MIN_FREQ * 2f64.powf((2.0 * k - 1.0) / 6.0);
            let hi = MIN_FREQ * 2f64.powf((2.0 * k + 1.0) / 6.0);
            (nearest(lo), nearest(hi))
        })
        .collect()
}

fn frame_starts(len: usize) -> impl Iterator<Item = usize> {
    // Frames start strictly before `len − FRAME`.
    (0..len.saturating_sub(FRAME)).step_by(HOP)
}

fn remove_silent_frames(x: &[f64], y: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let w = hann(FRAME);
    let starts: Vec<usize> = frame_starts(x.len()).collect();
    let energy: Vec<f64> = starts
        .iter()
        .map(|&s| {
            let e: f64 = (0..FRAME).map(|i| (w[i] * x[s + i]).powi(2)).sum();
            20.0 * (e.sqrt() + EPS).log10()
        })
        .collect();
    let peak = energy.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let kept: Vec<usize> = starts
        .iter()
        .zip(&energy)
        .filter(|(_, &e)| peak - DYN_RANGE_DB - e < 0.0)
        .map(|(&s, _)| s)
        .collect();
    if kept.is_empty() {
        return (Vec::new(), Vec::new());
    }
    let out_len = (kept.len() - 1) * HOP + FRAME;
    let mut xs = vec![0.0; out_len];
    let mut ys = vec![0.0; out_len];
    for (j, &s) in kept.iter().enumerate() {
        for i in 0..FRAME {
            xs[j * HOP + i] += w[i] * x[s + i];
            ys[j * HOP + i] += w[i] * y[s + i];
        }
    }
    (xs, ys)
}

/// Third-octave band magnitudes, `frames × BANDS`.
fn band_envelopes(
    x: &[f64],
    bands: &[(usize, usize)],
    planner: &mut FftPlanner<f64>,
) -> Vec<[f64; BANDS]> {
    let w = hann(FRAME);
    let fft = planner.plan_fft_forward(NFFT);
    let mut buf = vec![Complex::new(0.0, 0.0); NFFT];
    frame_starts(x.len())
        .map(|s| {
            for (i, b) in buf.iter_mut().enumerate() {
                *b = Complex::new(if i < FRAME { w[i] * x[s + i] } else { 0.0 }, 0.0);
            }
            fft.process(&mut buf);
            let mut row = [0.0; BANDS];
            for (r, &(lo, hi)) in row.iter_mut().zip(bands) {
                let p: f64 = buf[lo..hi].iter().map(|c| c.norm_sqr()).sum();
                *r = p.sqrt();
            }
            row
        })
        .collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// STOI of `est` against the clean reference `reference`, both sampled at
/// `fs` Hz.
pub fn stoi(est: &[f32], reference: &[f32], fs: u32) -> Result<f64> {
    if !SUPPORTED_RATES.contains(&fs) {
        return Err(Error::UnsupportedRate(fs));
    }
    if est.len() != reference.len() {
        return Err(crate::error::shape_err(
            "stoi",
            format!(
                "estimate has {} samples, reference {}",
                est.len(),
                reference.len()
            ),
        ));
    }
    let to64 = |v: &[f32]| v.iter().map(|&a| a as f64).collect::<Vec<_>>();
    let (mut x, mut y) = (to64(reference), to64(est));
    if fs as usize != FS {
        x = resample(&x, FS, fs as usize);
        y = resample(&y, FS, fs as usize);
    }
    let (x, y) = remove_silent_frames(&x, &y);
    let bands = third_octave_bins();
    let mut planner = FftPlanner::new();
    let xb = band_envelopes(&x, &bands, &mut planner);
    let yb = band_envelopes(&y, &bands, &mut planner);
    if xb.len() < SEGMENT {
        return Err(Error::SignalTooShort(format!(
            "{} analysis frames after silence removal, need {SEGMENT}",
            xb.len()
        )));
    }

    let clip = 1.0 + 10f64.powf(-BETA_DB / 20.0);
    let segments = xb.len() - SEGMENT + 1;
    let mut total = 0.0;
    let mut xs = [0.0; SEGMENT];
    let mut ys = [0.0; SEGMENT];
    for m in 0..segments {
        for band in 0..BANDS {
            for n in 0..SEGMENT {
                xs[n] = xb[m + n][band];
                ys[n] = yb[m + n][band];
            }
            let scale = norm(&xs) / (norm(&ys) + EPS);
            for n in 0..SEGMENT {
                ys[n] = (ys[n] * scale).min(xs[n] * clip);
            }
            let mx = xs.iter().sum::<f64>() / SEGMENT as f64;
            let my = ys.iter().sum::<f64>() / SEGMENT as f64;
            xs.iter_mut().for_each(|v| *v -= mx);
            ys.iter_mut().for_each(|v| *v -= my);
            let nx = norm(&xs) + EPS;
            let ny = norm(&ys) + EPS;
            total += xs
                .iter()
                .zip(&ys)
                .map(|(a, b)| (a / nx) * (b / ny))
                .sum::<f64>();
        }
    }
    Ok(total / (segments * BANDS) as f64)
}
