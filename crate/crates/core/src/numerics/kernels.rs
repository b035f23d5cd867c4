//! Raw slice kernels shared by the differentiable graph and the streaming
//! engine.
//!
//! Every kernel fixes its accumulation order (bias first, then input channel,
//! then tap) so that a frame computed column-by-column in the streaming path
//! is bit-identical to the same frame computed over a whole utterance.

/// Variance floor for layer normalization.
pub const NORM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: usize,
    pub dilation: usize,
    pub pad_left: usize,
    pub pad_right: usize,
    pub groups: usize,
}

impl ConvSpec {
    /// Stride-1 convolution with `(K-1)·dilation` zeros on the left.
    pub fn causal(kernel: usize, dilation: usize) -> Self {
        Self {
            stride: 1,
            dilation,
            pad_left: (kernel - 1) * dilation,
            pad_right: 0,
            groups: 1,
        }
    }

    /// Unpadded strided convolution, as used by the waveform encoders.
    pub fn valid(stride: usize) -> Self {
        Self {
            stride,
            dilation: 1,
            pad_left: 0,
            pad_right: 0,
            groups: 1,
        }
    }

    /// Stride-1 convolution padded symmetrically (non-causal variant).
    pub fn centered(kernel: usize, dilation: usize) -> Self {
        let total = (kernel - 1) * dilation;
        Self {
            stride: 1,
            dilation,
            pad_left: total / 2,
            pad_right: total - total / 2,
            groups: 1,
        }
    }

    pub fn with_groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    pub fn effective_kernel(&self, kernel: usize) -> usize {
        (kernel - 1) * self.dilation + 1
    }

    /// Output frame count, or `None` when the padded input is shorter than
    /// the effective kernel.
    pub fn output_len(&self, t_in: usize, kernel: usize) -> Option<usize> {
        let padded = t_in + self.pad_left + self.pad_right;
        let k_eff = self.effective_kernel(kernel);
        if padded < k_eff {
            None
        } else {
            Some((padded - k_eff) / self.stride + 1)
        }
    }
}

/// Range of output frames `t` for which `t*stride + offset` lands inside
/// `[0, t_in)`.
fn valid_frames(offset: isize, stride: usize, t_in: usize, t_out: usize) -> std::ops::Range<usize> {
    let s = stride as isize;
    let lo = if offset >= 0 {
        0
    } else {
        ((-offset) + s - 1) / s
    };
    // t*s + offset <= t_in - 1
    let hi_num = t_in as isize - 1 - offset;
    let hi = if hi_num < 0 { 0 } else { hi_num / s + 1 };
    let lo = (lo as usize).min(t_out);
    let hi = (hi as usize).min(t_out);
    lo..hi.max(lo)
}

/// Grouped dilated 1-D convolution over a `cin × t_in` row-major input with
/// weights `cout × (cin/groups) × k`.
#[allow(clippy::too_many_arguments)]
pub fn conv1d_forward(
    x: &[f32],
    cin: usize,
    t_in: usize,
    w: &[f32],
    cout: usize,
    k: usize,
    bias: Option<&[f32]>,
    spec: &ConvSpec,
    t_out: usize,
) -> Vec<f32> {
    let cin_g = cin / spec.groups;
    let cout_g = cout / spec.groups;
    let mut out = vec![0.0f32; cout * t_out];
    for o in 0..cout {
        let g = o / cout_g;
        let row = &mut out[o * t_out..(o + 1) * t_out];
        if let Some(b) = bias {
            row.fill(b[o]);
        }
        for ii in 0..cin_g {
            let i = g * cin_g + ii;
            let xi = &x[i * t_in..(i + 1) * t_in];
            for kk in 0..k {
                let wv = w[(o * cin_g + ii) * k + kk];
                let offset = (kk * spec.dilation) as isize - spec.pad_left as isize;
                for t in valid_frames(offset, spec.stride, t_in, t_out) {
                    let src = (t * spec.stride) as isize + offset;
                    row[t] += wv * xi[src as usize];
                }
            }
        }
    }
    out
}

/// Gradients of [`conv1d_forward`] w.r.t. input, weights and bias.
#[allow(clippy::too_many_arguments)]
pub fn conv1d_backward(
    x: &[f32],
    cin: usize,
    t_in: usize,
    w: &[f32],
    cout: usize,
    k: usize,
    spec: &ConvSpec,
    t_out: usize,
    grad_out: &[f32],
) -> (Vec<f32>, Vec<f32>, Vec<f32>) {
    let cin_g = cin / spec.groups;
    let cout_g = cout / spec.groups;
    let mut dx = vec![0.0f32; cin * t_in];
    let mut dw = vec![0.0f32; w.len()];
    let mut db = vec![0.0f32; cout];
    for o in 0..cout {
        let g = o / cout_g;
        let go = &grad_out[o * t_out..(o + 1) * t_out];
        db[o] = go.iter().sum();
        for ii in 0..cin_g {
            let i = g * cin_g + ii;
            for kk in 0..k {
                let widx = (o * cin_g + ii) * k + kk;
                let wv = w[widx];
                let offset = (kk * spec.dilation) as isize - spec.pad_left as isize;
                let mut acc = 0.0f32;
                for t in valid_frames(offset, spec.stride, t_in, t_out) {
                    let src = ((t * spec.stride) as isize + offset) as usize;
                    acc += go[t] * x[i * t_in + src];
                    dx[i * t_in + src] += go[t] * wv;
                }
                dw[widx] += acc;
            }
        }
    }
    (dx, dw, db)
}

/// Decoder contribution of a single frame: `frame[o*k + kk] = Σ_c x[c]·w[c,o,kk]`.
pub fn transpose_frame(x_col: &[f32], w: &[f32], cout: usize, k: usize, frame: &mut [f32]) {
    for o in 0..cout {
        for kk in 0..k {
            let mut acc = 0.0f32;
            for (c, &xv) in x_col.iter().enumerate() {
                acc += xv * w[(c * cout + o) * k + kk];
            }
            frame[o * k + kk] = acc;
        }
    }
}

/// Transposed 1-D convolution (overlap-add) of a `cin × t` input with weights
/// `cin × cout × k`; output is `cout × ((t-1)·stride + k)`.
pub fn conv_transpose1d_forward(
    x: &[f32],
    cin: usize,
    t: usize,
    w: &[f32],
    cout: usize,
    k: usize,
    stride: usize,
) -> Vec<f32> {
    let t_wave = (t - 1) * stride + k;
    let mut out = vec![0.0f32; cout * t_wave];
    let mut col = vec![0.0f32; cin];
    let mut frame = vec![0.0f32; cout * k];
    for ti in 0..t {
        for c in 0..cin {
            col[c] = x[c * t + ti];
        }
        transpose_frame(&col, w, cout, k, &mut frame);
        for o in 0..cout {
            for kk in 0..k {
                out[o * t_wave + ti * stride + kk] += frame[o * k + kk];
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub fn conv_transpose1d_backward(
    x: &[f32],
    cin: usize,
    t: usize,
    w: &[f32],
    cout: usize,
    k: usize,
    stride: usize,
    grad_out: &[f32],
) -> (Vec<f32>, Vec<f32>) {
    let t_wave = (t - 1) * stride + k;
    let mut dx = vec![0.0f32; cin * t];
    let mut dw = vec![0.0f32; w.len()];
    for c in 0..cin {
        for o in 0..cout {
            let go = &grad_out[o * t_wave..(o + 1) * t_wave];
            for kk in 0..k {
                let widx = (c * cout + o) * k + kk;
                let wv = w[widx];
                let mut acc = 0.0f32;
                for ti in 0..t {
                    let gv = go[ti * stride + kk];
                    acc += x[c * t + ti] * gv;
                    dx[c * t + ti] += wv * gv;
                }
                dw[widx] += acc;
            }
        }
    }
    (dx, dw)
}

/// Running statistics of a cumulative layer norm.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct NormStats {
    pub count: u64,
    pub sum: f64,
    pub sum_sq: f64,
}

impl NormStats {
    /// Folds one frame into the running totals and returns `(mean, 1/std)`.
    pub fn update(&mut self, col: &[f32]) -> (f64, f64) {
        let mut s = 0.0f64;
        let mut sq = 0.0f64;
        for &v in col {
            let v = v as f64;
            s += v;
            sq += v * v;
        }
        self.count += col.len() as u64;
        self.sum += s;
        self.sum_sq += sq;
        self.moments()
    }

    pub fn moments(&self) -> (f64, f64) {
        let n = self.count as f64;
        let mean = self.sum / n;
        let var = (self.sum_sq / n - mean * mean).max(0.0);
        (mean, 1.0 / (var + NORM_EPS).sqrt())
    }
}

/// Normalizes one column in place with precomputed moments.
pub fn normalize_column(col: &mut [f32], mean: f64, inv_std: f64, gain: &[f32], bias: &[f32]) {
    let m = mean as f32;
    let s = inv_std as f32;
    for (c, v) in col.iter_mut().enumerate() {
        *v = gain[c] * ((*v - m) * s) + bias[c];
    }
}

/// Layer norm over a `c × t` input. With `cumulative`, the statistics of frame
/// `t` cover all channels of frames `0..=t`; otherwise every frame uses the
/// statistics of the whole input. Returns the output and per-frame moments.
pub fn layer_norm_forward(
    x: &[f32],
    c: usize,
    t: usize,
    gain: &[f32],
    bias: &[f32],
    cumulative: bool,
) -> (Vec<f32>, Vec<f64>, Vec<f64>) {
    let mut means = Vec::with_capacity(t);
    let mut invs = Vec::with_capacity(t);
    let mut col = vec![0.0f32; c];
    let mut stats = NormStats::default();
    for ti in 0..t {
        for ci in 0..c {
            col[ci] = x[ci * t + ti];
        }
        let (m, s) = stats.update(&col);
        means.push(m);
        invs.push(s);
    }
    if !cumulative {
        let (m, s) = stats.moments();
        means.fill(m);
        invs.fill(s);
    }
    let mut out = vec![0.0f32; c * t];
    for ti in 0..t {
        for ci in 0..c {
            col[ci] = x[ci * t + ti];
        }
        normalize_column(&mut col, means[ti], invs[ti], gain, bias);
        for ci in 0..c {
            out[ci * t + ti] = col[ci];
        }
    }
    (out, means, invs)
}

/// Gradients of [`layer_norm_forward`] w.r.t. input, gain and bias.
#[allow(clippy::too_many_arguments)]
pub fn layer_norm_backward(
    x: &[f32],
    c: usize,
    t: usize,
    gain: &[f32],
    means: &[f64],
    invs: &[f64],
    cumulative: bool,
    grad_out: &[f32],
) -> (Vec<f32>, Vec<f32>, Vec<f32>) {
    let mut dgain = vec![0.0f64; c];
    let mut dbias = vec![0.0f64; c];
    // Per-frame sensitivities of the loss to the frame's mean and variance.
    let mut d_mean = vec![0.0f64; t];
    let mut d_var = vec![0.0f64; t];
    for ti in 0..t {
        let (m, s) = (means[ti], invs[ti]);
        let mut a = 0.0f64;
        let mut b = 0.0f64;
        for ci in 0..c {
            let gy = grad_out[ci * t + ti] as f64;
            let xc = x[ci * t + ti] as f64 - m;
            dgain[ci] += gy * xc * s;
            dbias[ci] += gy;
            let gxh = gy * gain[ci] as f64;
            a += gxh;
            b += gxh * xc;
        }
        d_mean[ti] = -s * a;
        d_var[ti] = -0.5 * b * s * s * s;
    }
    let mut dx = vec![0.0f32; c * t];
    if cumulative {
        // Reverse prefix sums over the frames whose statistics include t'.
        let mut p = 0.0f64;
        let mut q = 0.0f64;
        for ti in (0..t).rev() {
            let n = (c * (ti + 1)) as f64;
            p += (d_mean[ti] - 2.0 * d_var[ti] * means[ti]) / n;
            q += 2.0 * d_var[ti] / n;
            for ci in 0..c {
                let gxh = grad_out[ci * t + ti] as f64 * gain[ci] as f64;
                let xv = x[ci * t + ti] as f64;
                dx[ci * t + ti] = (gxh * invs[ti] + p + xv * q) as f32;
            }
        }
    } else {
        let n = (c * t) as f64;
        let dm: f64 = d_mean.iter().sum();
        let dv: f64 = d_var.iter().sum();
        let p = (dm - 2.0 * dv * means[0]) / n;
        let q = 2.0 * dv / n;
        for ti in 0..t {
            for ci in 0..c {
                let gxh = grad_out[ci * t + ti] as f64 * gain[ci] as f64;
                let xv = x[ci * t + ti] as f64;
                dx[ci * t + ti] = (gxh * invs[ti] + p + xv * q) as f32;
            }
        }
    }
    (
        dx,
        dgain.into_iter().map(|v| v as f32).collect(),
        dbias.into_iter().map(|v| v as f32).collect(),
    )
}

#[inline]
pub fn relu(x: f32) -> f32 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

#[inline]
pub fn prelu(x: f32, alpha: f32) -> f32 {
    if x > 0.0 {
        x
    } else {
        alpha * x
    }
}

#[inline]
pub fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

/// `out[o] = b[o] + Σ_i w[o,i]·x[i]`, the single-frame form of a 1×1 conv.
pub fn pointwise_column(w: &[f32], bias: Option<&[f32]>, x: &[f32], out: &mut [f32]) {
    let cin = x.len();
    for (o, dst) in out.iter_mut().enumerate() {
        let mut acc = bias.map_or(0.0, |b| b[o]);
        let wr = &w[o * cin..(o + 1) * cin];
        for i in 0..cin {
            acc += wr[i] * x[i];
        }
        *dst = acc;
    }
}
