//! Rational-ratio polyphase resampling with a Kaiser-windowed sinc filter.
//!
//! The filter design (60 dB rejection, roll-off a tenth of the cutoff,
//! unit-sum taps) and the output alignment follow the Octave `resample`
//! convention that STOI reference implementations use.

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Zeroth-order modified Bessel function of the first kind.
fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..200 {
        term *= q / (k as f64 * k as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// Anti-aliasing filter for upsampling by `up` and downsampling by `down`
/// (already reduced), normalized to unit sum.
fn design_filter(up: usize, down: usize) -> Vec<f64> {
    let rejection_db = 60.0f64;
    let cutoff = 1.0 / (2.0 * up.max(down) as f64);
    let roll_off = cutoff / 10.0;
    let half = ((rejection_db - 8.0) / (28.714 * roll_off)).ceil() as i64;
    let beta = 0.1102 * (rejection_db - 8.7);
    let m = (2 * half) as f64;
    let i0b = bessel_i0(beta);
    let mut h: Vec<f64> = (-half..=half)
        .enumerate()
        .map(|(i, t)| {
            let ideal = 2.0 * up as f64 * cutoff * sinc(2.0 * cutoff * t as f64);
            let r = 2.0 * i as f64 / m - 1.0;
            let w = bessel_i0(beta * (1.0 - r * r).max(0.0).sqrt()) / i0b;
            ideal * w
        })
        .collect();
    let sum: f64 = h.iter().sum();
    h.iter_mut().for_each(|v| *v /= sum);
    h
}

/// Resamples `x` from `from_hz` to `to_hz`.
pub fn resample(x: &[f64], to_hz: usize, from_hz: usize) -> Vec<f64> {
    let g = gcd(to_hz, from_hz);
    let (up, down) = (to_hz / g, from_hz / g);
    if up == down {
        return x.to_vec();
    }
    let mut h = design_filter(up, down);
    h.iter_mut().for_each(|v| *v *= up as f64);
    let half_len = (h.len() - 1) / 2;
    let n_in = x.len();
    let n_out = (n_in * up).div_ceil(down);
    let pre_pad = down - half_len % down;
    let pre_remove = (half_len + pre_pad) / down;
    let mut padded = vec![0.0; pre_pad];
    padded.extend_from_slice(&h);
    let taps = padded.len();
    let mut y = Vec::with_capacity(n_out);
    for j in 0..n_out {
        let idx = (j + pre_remove) * down;
        // Input sample n lands at upsampled position n·up; tap k = idx − n·up.
        let n_hi = (idx / up).min(n_in.saturating_sub(1));
        let mut acc = 0.0;
        let mut n = n_hi as i64;
        while n >= 0 {
            let k = idx - n as usize * up;
            if k >= taps {
                break;
            }
            acc += padded[k] * x[n as usize];
            n -= 1;
        }
        y.push(acc);
    }
    y
}
