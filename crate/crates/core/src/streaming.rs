//! Frame-level stateful inference.
//!
//! Samples are pushed in arbitrary chunks; every complete analysis frame runs
//! through the encoder, the separator (with cached depthwise history and
//! running cLN statistics) and the overlap-add decoder. A decoder sample is
//! emitted once no later frame overlaps it. In self-feedback mode the emitted
//! samples also go into a delay line that feeds the speech branch.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{shape_err, Error, Result};
use crate::model::{self, Mode};
use crate::numerics::kernels::{self, NormStats};

/// Where the speech branch takes its condition from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamMode {
    /// Baseline network, no speech branch.
    Static,
    /// The engine's own output, delayed by `sample_delay`.
    SelfFeedback,
    /// A caller-supplied, already delayed condition stream (e.g. the delayed
    /// clean target for the oracle upper bound).
    External,
}

impl StreamMode {
    pub fn model_mode(self) -> Mode {
        match self {
            StreamMode::Static => Mode::Static,
            _ => Mode::Dynamic,
        }
    }
}

struct Pointwise {
    w: Vec<f32>,
    b: Option<Vec<f32>>,
}

impl Pointwise {
    fn load(ckpt: &Checkpoint, prefix: &str, bias: bool) -> Result<Self> {
        let w = ckpt.tensor(&format!("{prefix}.weight"))?.data().to_vec();
        let b = if bias {
            Some(ckpt.tensor(&format!("{prefix}.bias"))?.data().to_vec())
        } else {
            None
        };
        Ok(Self { w, b })
    }

    fn apply(&self, x: &[f32], out: &mut [f32]) {
        kernels::pointwise_column(&self.w, self.b.as_deref(), x, out);
    }
}

struct Norm {
    gain: Vec<f32>,
    bias: Vec<f32>,
    stats: NormStats,
}

impl Norm {
    fn load(ckpt: &Checkpoint, prefix: &str) -> Result<Self> {
        Ok(Self {
            gain: ckpt.tensor(&format!("{prefix}.gain"))?.data().to_vec(),
            bias: ckpt.tensor(&format!("{prefix}.bias"))?.data().to_vec(),
            stats: NormStats::default(),
        })
    }

    fn apply(&mut self, col: &mut [f32]) {
        let (m, s) = self.stats.update(col);
        kernels::normalize_column(col, m, s, &self.gain, &self.bias);
    }
}

fn apply_prelu(col: &mut [f32], alpha: &[f32]) {
    for (c, v) in col.iter_mut().enumerate() {
        let a = if alpha.len() == 1 { alpha[0] } else { alpha[c] };
        *v = kernels::prelu(*v, a);
    }
}

/// One residual TCN block with its depthwise history ring.
struct Block {
    inp: Pointwise,
    alpha1: Vec<f32>,
    norm1: Norm,
    dw_w: Vec<f32>,
    dw_b: Vec<f32>,
    taps: usize,
    dilation: usize,
    /// `hidden × span` ring of normalized inputs to the depthwise conv.
    history: Vec<f32>,
    span: usize,
    frame: usize,
    alpha2: Vec<f32>,
    norm2: Norm,
    out: Pointwise,
    h1: Vec<f32>,
    h2: Vec<f32>,
    o: Vec<f32>,
}

impl Block {
    fn load(ckpt: &Checkpoint, prefix: &str, dilation: usize) -> Result<Self> {
        let cfg = &ckpt.config;
        let (h, b, p) = (cfg.hidden_channels, cfg.bottleneck_channels, cfg.tcn_kernel);
        let span = (p - 1) * dilation + 1;
        Ok(Self {
            inp: Pointwise::load(ckpt, &format!("{prefix}.in"), true)?,
            alpha1: ckpt.tensor(&format!("{prefix}.prelu1"))?.data().to_vec(),
            norm1: Norm::load(ckpt, &format!("{prefix}.norm1"))?,
            dw_w: ckpt.tensor(&format!("{prefix}.dw.weight"))?.data().to_vec(),
            dw_b: ckpt.tensor(&format!("{prefix}.dw.bias"))?.data().to_vec(),
            taps: p,
            dilation,
            history: vec![0.0; h * span],
            span,
            frame: 0,
            alpha2: ckpt.tensor(&format!("{prefix}.prelu2"))?.data().to_vec(),
            norm2: Norm::load(ckpt, &format!("{prefix}.norm2"))?,
            out: Pointwise::load(ckpt, &format!("{prefix}.out"), true)?,
            h1: vec![0.0; h],
            h2: vec![0.0; h],
            o: vec![0.0; b],
        })
    }

    fn step(&mut self, x: &mut [f32]) {
        self.inp.apply(x, &mut self.h1);
        apply_prelu(&mut self.h1, &self.alpha1);
        self.norm1.apply(&mut self.h1);
        let span = self.span;
        let slot = self.frame % span;
        for (c, &v) in self.h1.iter().enumerate() {
            self.history[c * span + slot] = v;
        }
        for c in 0..self.h2.len() {
            let mut acc = self.dw_b[c];
            for kk in 0..self.taps {
                let lag = (self.taps - 1 - kk) * self.dilation;
                let s = (self.frame + span - lag) % span;
                acc += self.dw_w[c * self.taps + kk] * self.history[c * span + s];
            }
            self.h2[c] = acc;
        }
        apply_prelu(&mut self.h2, &self.alpha2);
        self.norm2.apply(&mut self.h2);
        self.out.apply(&self.h2, &mut self.o);
        for (xv, ov) in x.iter_mut().zip(&self.o) {
            *xv += ov;
        }
        self.frame += 1;
    }

    fn norm_counts(&self) -> [u64; 2] {
        [self.norm1.stats.count, self.norm2.stats.count]
    }
}

fn encode_frame(w: &[f32], frame: &[f32], out: &mut [f32]) {
    let k = frame.len();
    for (o, dst) in out.iter_mut().enumerate() {
        let mut acc = 0.0f32;
        for kk in 0..k {
            acc += w[o * k + kk] * frame[kk];
        }
        *dst = kernels::relu(acc);
    }
}

/// Speech branch: encoder, projection, blocks and per-frame head.
struct Embedder {
    enc_w: Vec<f32>,
    y: Vec<f32>,
    in_proj: Pointwise,
    h: Vec<f32>,
    blocks: Vec<Block>,
    head: Pointwise,
    out: Vec<f32>,
}

impl Embedder {
    fn load(ckpt: &Checkpoint, prefix: &str, blocks: usize) -> Result<Self> {
        let cfg = &ckpt.config;
        Ok(Self {
            enc_w: ckpt
                .tensor(&format!("{prefix}.encoder.weight"))?
                .data()
                .to_vec(),
            y: vec![0.0; cfg.enc_channels],
            in_proj: Pointwise::load(ckpt, &format!("{prefix}.in_proj"), true)?,
            h: vec![0.0; cfg.bottleneck_channels],
            blocks: (0..blocks)
                .map(|i| {
                    Block::load(
                        ckpt,
                        &format!("{prefix}.block{i}"),
                        1 << (i % cfg.blocks_per_repeat),
                    )
                })
                .collect::<Result<_>>()?,
            head: Pointwise::load(ckpt, &format!("{prefix}.head"), true)?,
            out: vec![0.0; cfg.embed_dim],
        })
    }

    fn step(&mut self, frame: &[f32]) -> &[f32] {
        encode_frame(&self.enc_w, frame, &mut self.y);
        self.in_proj.apply(&self.y, &mut self.h);
        for b in &mut self.blocks {
            b.step(&mut self.h);
        }
        self.head.apply(&self.h, &mut self.out);
        &self.out
    }
}

struct Fusion {
    layer: Pointwise,
    alpha: Vec<f32>,
    stacked: Vec<f32>,
    m: Vec<f32>,
}

/// Counters proving that the fed-back condition only ever reads samples that
/// were already emitted and are at least `sample_delay` samples old.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ConditionAudit {
    pub reads: u64,
    /// Smallest `condition index − output index` over all reads.
    pub min_age: Option<usize>,
    /// Reads of samples not yet emitted or younger than the delay.
    pub violations: u64,
}

/// Per-stream state: caches, running statistics, delay line and the pending
/// overlap-add tail.
pub struct StreamState {
    mode: StreamMode,
    kernel: usize,
    stride: usize,
    delay: usize,
    adapt_after: usize,
    static_embed: Vec<f32>,

    enc_w: Vec<f32>,
    in_norm: Norm,
    bottleneck: Pointwise,
    blocks: Vec<Block>,
    proj: Option<Pointwise>,
    mask: Pointwise,
    dec_w: Vec<f32>,
    branch: Option<(Embedder, Fusion)>,

    frame_buf: Vec<f32>,
    cond_buf: Vec<f32>,
    filled: usize,
    ola: Vec<f32>,
    delay_ring: Vec<f32>,
    emitted: usize,
    frames_processed: usize,
    flushed: bool,
    audit: ConditionAudit,

    y: Vec<f32>,
    h: Vec<f32>,
    emb: Vec<f32>,
    scale: Vec<f32>,
    mvec: Vec<f32>,
    dec_frame: Vec<f32>,
}

impl StreamState {
    /// Precomputes the static embedding of `enrollment` and zeroes every cache.
    pub fn new(ckpt: &Checkpoint, enrollment: &[f32], mode: StreamMode) -> Result<Self> {
        ckpt.validate()?;
        let cfg = &ckpt.config;
        if !cfg.causal {
            return Err(Error::Config("streaming requires a causal network".into()));
        }
        let static_embed = model::auxiliary_embed(enrollment, ckpt)?.into_data();
        let (e, b, n, k) = (
            cfg.enc_channels,
            cfg.bottleneck_channels,
            cfg.embed_dim,
            cfg.kernel,
        );
        let branch = if mode == StreamMode::Static {
            None
        } else {
            let emb = Embedder::load(ckpt, "branch", cfg.speech_branch_blocks)?;
            let fusion = Fusion {
                layer: Pointwise::load(ckpt, "fuse", true)?,
                alpha: ckpt.tensor("fuse.alpha")?.data().to_vec(),
                stacked: vec![0.0; 2 * n],
                m: vec![0.0; n],
            };
            Some((emb, fusion))
        };
        Ok(Self {
            mode,
            kernel: k,
            stride: cfg.stride,
            delay: cfg.sample_delay,
            adapt_after: cfg.adaptation_block_index,
            enc_w: ckpt.tensor("encoder.weight")?.data().to_vec(),
            in_norm: Norm::load(ckpt, "separator.in_norm")?,
            bottleneck: Pointwise::load(ckpt, "separator.bottleneck", true)?,
            blocks: (0..cfg.total_blocks())
                .map(|i| Block::load(ckpt, &format!("separator.block{i}"), cfg.dilation(i)))
                .collect::<Result<_>>()?,
            proj: if n != b {
                Some(Pointwise::load(ckpt, "adapt.proj", false)?)
            } else {
                None
            },
            mask: Pointwise::load(ckpt, "separator.mask", true)?,
            dec_w: ckpt.tensor("decoder.weight")?.data().to_vec(),
            branch,
            frame_buf: vec![0.0; k],
            cond_buf: vec![0.0; k],
            filled: 0,
            ola: vec![0.0; k],
            delay_ring: vec![0.0; cfg.sample_delay + k],
            emitted: 0,
            frames_processed: 0,
            flushed: false,
            audit: ConditionAudit::default(),
            y: vec![0.0; e],
            h: vec![0.0; b],
            emb: static_embed.clone(),
            scale: vec![0.0; b],
            mvec: vec![0.0; e],
            dec_frame: vec![0.0; k],
            static_embed,
        })
    }

    pub fn mode(&self) -> StreamMode {
        self.mode
    }

    pub fn static_embed(&self) -> &[f32] {
        &self.static_embed
    }

    pub fn frames_processed(&self) -> usize {
        self.frames_processed
    }

    pub fn samples_emitted(&self) -> usize {
        self.emitted
    }

    pub fn is_flushed(&self) -> bool {
        self.flushed
    }

    pub fn audit(&self) -> ConditionAudit {
        self.audit
    }

    /// Positions seen by each cLN layer of the separator, input norm first.
    pub fn norm_counts(&self) -> Vec<u64> {
        let mut v = vec![self.in_norm.stats.count];
        v.extend(self.blocks.iter().flat_map(Block::norm_counts));
        v
    }

    /// Pushes mixture samples and returns the samples finalized by them.
    pub fn push(&mut self, samples: &[f32]) -> Result<Vec<f32>> {
        let mut out = Vec::with_capacity(samples.len() + self.stride);
        self.push_into(samples, &mut out)?;
        Ok(out)
    }

    pub fn push_into(&mut self, samples: &[f32], out: &mut Vec<f32>) -> Result<()> {
        if self.mode == StreamMode::External {
            return Err(Error::Config(
                "external-condition streams must use push_with_condition".into(),
            ));
        }
        self.push_inner(samples, None, out)
    }

    /// Pushes mixture samples together with the matching (already delayed)
    /// condition samples of an external-condition stream.
    pub fn push_with_condition(&mut self, samples: &[f32], condition: &[f32]) -> Result<Vec<f32>> {
        if self.mode != StreamMode::External {
            return Err(Error::Config(
                "stream does not take an external condition".into(),
            ));
        }
        if samples.len() != condition.len() {
            return Err(shape_err(
                "stream_push",
                format!(
                    "{} mixture vs {} condition samples",
                    samples.len(),
                    condition.len()
                ),
            ));
        }
        let mut out = Vec::with_capacity(samples.len() + self.stride);
        self.push_inner(samples, Some(condition), &mut out)?;
        Ok(out)
    }

    fn push_inner(
        &mut self,
        samples: &[f32],
        cond: Option<&[f32]>,
        out: &mut Vec<f32>,
    ) -> Result<()> {
        if self.flushed {
            return Err(Error::Flushed);
        }
        let (k, s) = (self.kernel, self.stride);
        for (i, &x) in samples.iter().enumerate() {
            self.frame_buf[self.filled] = x;
            if let Some(c) = cond {
                self.cond_buf[self.filled] = c[i];
            }
            self.filled += 1;
            if self.filled == k {
                self.process_frame(out);
                self.frame_buf.copy_within(s..k, 0);
                self.cond_buf.copy_within(s..k, 0);
                self.filled = k - s;
            }
        }
        Ok(())
    }

    /// Condition sample at absolute index `n`, read from the delay line.
    fn fed_back(&mut self, n: usize) -> f32 {
        self.audit.reads += 1;
        if n < self.delay {
            self.audit.min_age = Some(self.audit.min_age.map_or(self.delay, |a| a.min(self.delay)));
            return 0.0;
        }
        let m = n - self.delay;
        let age = n - m;
        self.audit.min_age = Some(self.audit.min_age.map_or(age, |a| a.min(age)));
        let ring = self.delay_ring.len();
        if m >= self.emitted || age < self.delay || m + ring < self.emitted {
            self.audit.violations += 1;
        }
        self.delay_ring[m % ring]
    }

    fn process_frame(&mut self, out: &mut Vec<f32>) {
        let (k, s) = (self.kernel, self.stride);
        let t = self.frames_processed;

        if self.branch.is_some() {
            if self.mode == StreamMode::SelfFeedback {
                for j in 0..k {
                    self.cond_buf[j] = self.fed_back(t * s + j);
                }
            }
            let (branch, fusion) = self.branch.as_mut().expect("branch present");
            let speech = branch.step(&self.cond_buf);
            let n = self.static_embed.len();
            fusion.stacked[..n].copy_from_slice(&self.static_embed);
            fusion.stacked[n..].copy_from_slice(speech);
            fusion.layer.apply(&fusion.stacked, &mut fusion.m);
            apply_prelu(&mut fusion.m, &fusion.alpha);
            for c in 0..n {
                self.emb[c] = self.static_embed[c] + fusion.m[c];
            }
        }

        encode_frame(&self.enc_w, &self.frame_buf, &mut self.y);
        self.mvec.copy_from_slice(&self.y);
        self.in_norm.apply(&mut self.mvec);
        self.bottleneck.apply(&self.mvec, &mut self.h);
        for (i, block) in self.blocks.iter_mut().enumerate() {
            block.step(&mut self.h);
            if i + 1 == self.adapt_after {
                match &self.proj {
                    Some(p) => p.apply(&self.emb, &mut self.scale),
                    None => self.scale.copy_from_slice(&self.emb),
                }
                for (hv, sv) in self.h.iter_mut().zip(&self.scale) {
                    *hv *= sv;
                }
            }
        }
        self.mask.apply(&self.h, &mut self.mvec);
        for (m, y) in self.mvec.iter_mut().zip(&self.y) {
            *m = y * kernels::sigmoid(*m);
        }
        kernels::transpose_frame(&self.mvec, &self.dec_w, 1, k, &mut self.dec_frame);
        for (acc, v) in self.ola.iter_mut().zip(&self.dec_frame) {
            *acc += v;
        }

        let ring = self.delay_ring.len();
        for j in 0..s {
            let v = self.ola[j];
            out.push(v);
            self.delay_ring[(self.emitted + j) % ring] = v;
        }
        self.emitted += s;
        self.ola.copy_within(s..k, 0);
        self.ola[k - s..].fill(0.0);
        self.frames_processed += 1;
    }

    /// Emits the overlap-add tail of the last frame; the stream is terminal
    /// afterwards.
    pub fn flush(&mut self) -> Result<Vec<f32>> {
        if self.flushed {
            return Err(Error::Flushed);
        }
        self.flushed = true;
        if self.frames_processed == 0 {
            return Ok(Vec::new());
        }
        let tail = self.kernel - self.stride;
        self.emitted += tail;
        Ok(self.ola[..tail].to_vec())
    }
}

/// Creates a self-feedback stream for `enrollment`.
pub fn stream_init(ckpt: &Checkpoint, enrollment: &[f32]) -> Result<StreamState> {
    StreamState::new(ckpt, enrollment, StreamMode::SelfFeedback)
}

/// Runs a whole signal through a fresh stream in chunks of `chunk` samples.
/// `condition` is required for [`StreamMode::External`].
pub fn extract_streaming(
    ckpt: &Checkpoint,
    mixture: &[f32],
    enrollment: &[f32],
    mode: StreamMode,
    condition: Option<&[f32]>,
    chunk: usize,
) -> Result<Vec<f32>> {
    let mut state = StreamState::new(ckpt, enrollment, mode)?;
    let chunk = chunk.max(1);
    let mut out = Vec::with_capacity(mixture.len());
    match (mode, condition) {
        (StreamMode::External, None) => return Err(Error::MissingCondition),
        (StreamMode::External, Some(c)) => {
            if c.len() != mixture.len() {
                return Err(shape_err(
                    "extract_streaming",
                    "condition length differs from mixture",
                ));
            }
            for (m, cc) in mixture.chunks(chunk).zip(c.chunks(chunk)) {
                out.extend(state.push_with_condition(m, cc)?);
            }
        }
        _ => {
            for m in mixture.chunks(chunk) {
                state.push_into(m, &mut out)?;
            }
        }
    }
    out.extend(state.flush()?);
    Ok(out)
}

/// Algorithmic latency and measured real-time factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    /// One hop, `1000·S/fs`.
    pub hop_latency_ms: f64,
    /// One analysis window, `1000·K/fs`.
    pub window_latency_ms: f64,
    /// Wall-clock processing time over audio duration.
    pub rtf: f64,
}

impl LatencyReport {
    pub fn analytic(cfg: &crate::config::ModelConfig) -> (f64, f64) {
        let fs = cfg.sample_rate as f64;
        (
            1000.0 * cfg.stride as f64 / fs,
            1000.0 * cfg.kernel as f64 / fs,
        )
    }
}

/// Streams `duration_s` seconds of synthetic noise through a self-feedback
/// stream in hop-sized chunks and times it.
pub fn measure(ckpt: &Checkpoint, duration_s: f64) -> Result<LatencyReport> {
    if duration_s.is_nan() || duration_s <= 0.0 {
        return Err(Error::Config("duration must be positive".into()));
    }
    let cfg = &ckpt.config;
    let fs = cfg.sample_rate as f64;
    let n = ((duration_s * fs).round() as usize).max(cfg.kernel);
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let normal = Normal::new(0.0f32, 0.1).expect("valid normal");
    let mixture: Vec<f32> = (0..n).map(|_| normal.sample(&mut rng)).collect();
    let enrollment: Vec<f32> = (0..cfg.sample_rate as usize)
        .map(|_| normal.sample(&mut rng))
        .collect();

    let mut state = stream_init(ckpt, &enrollment)?;
    let mut out = Vec::with_capacity(n);
    let start = Instant::now();
    for chunk in mixture.chunks(cfg.stride) {
        state.push_into(chunk, &mut out)?;
    }
    out.extend(state.flush()?);
    let elapsed = start.elapsed().as_secs_f64();
    let (hop, window) = LatencyReport::analytic(cfg);
    Ok(LatencyReport {
        hop_latency_ms: hop,
        window_latency_ms: window,
        rtf: (elapsed / (n as f64 / fs)).max(f64::MIN_POSITIVE),
    })
}
