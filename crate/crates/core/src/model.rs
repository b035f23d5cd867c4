//! The extraction network.
//!
//! The baseline path encodes the mixture, computes a static speaker embedding
//! from the enrollment, estimates a mask with a causal TCN whose activations
//! are multiplied by the embedding after one block, and decodes the masked
//! representation with an overlap-add decoder. In dynamic mode a speech
//! branch embeds the delayed extracted signal frame by frame; the fusion layer
//! adds a learned per-frame correction to the static embedding.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use crate::checkpoint::Checkpoint;
use crate::config::ModelConfig;
use crate::error::{shape_err, Error, Result};
use crate::numerics::{ConvSpec, Graph, Var};
use crate::tensor::Tensor;

/// Conditioning mode of the separator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    /// Static enrollment embedding only.
    Static,
    /// Static embedding fused with the speech-branch embedding of a delayed
    /// condition signal.
    Dynamic,
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "static" => Ok(Mode::Static),
            "dynamic" => Ok(Mode::Dynamic),
            other => Err(format!("unknown mode `{other}` (expected static|dynamic)")),
        }
    }
}

/// Per-frame embeddings, `frames × dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSequence {
    values: Tensor,
}

impl EmbeddingSequence {
    pub fn new(values: Tensor) -> Result<Self> {
        values.dims2()?;
        if !values.all_finite() {
            return Err(shape_err("embedding", "non-finite values"));
        }
        Ok(Self { values })
    }

    /// From the channel-major `dim × frames` layout used inside the graph.
    pub(crate) fn from_channel_major(t: &Tensor) -> Result<Self> {
        Self::new(t.transpose()?)
    }

    pub(crate) fn to_channel_major(&self) -> Result<Tensor> {
        self.values.transpose()
    }

    pub fn frames(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn row(&self, t: usize) -> &[f32] {
        let n = self.dim();
        &self.values.data()[t * n..(t + 1) * n]
    }
}

/// Binds checkpoint tensors to graph leaves, once per name.
pub struct Binder<'a> {
    ckpt: &'a Checkpoint,
    names: HashMap<String, Var>,
}

impl<'a> Binder<'a> {
    pub fn new(ckpt: &'a Checkpoint) -> Self {
        Self {
            ckpt,
            names: HashMap::new(),
        }
    }

    pub fn config(&self) -> &'a ModelConfig {
        &self.ckpt.config
    }

    pub fn get(&mut self, g: &mut Graph, name: &str) -> Result<Var> {
        if let Some(&v) = self.names.get(name) {
            return Ok(v);
        }
        let entry = self.ckpt.entry(name)?;
        let v = g.param(name, entry.tensor.clone(), entry.trainable);
        self.names.insert(name.to_string(), v);
        Ok(v)
    }
}

fn pointwise_conv(g: &mut Graph, p: &mut Binder, prefix: &str, x: Var, bias: bool) -> Result<Var> {
    let w = p.get(g, &format!("{prefix}.weight"))?;
    let b = if bias {
        Some(p.get(g, &format!("{prefix}.bias"))?)
    } else {
        None
    };
    g.conv1d(x, w, b, ConvSpec::valid(1))
}

fn norm(g: &mut Graph, p: &mut Binder, prefix: &str, x: Var, causal: bool) -> Result<Var> {
    let gain = p.get(g, &format!("{prefix}.gain"))?;
    let bias = p.get(g, &format!("{prefix}.bias"))?;
    g.layer_norm(x, gain, bias, causal)
}

/// One residual TCN block: 1×1 → PReLU → norm → depthwise dilated conv →
/// PReLU → norm → 1×1, added to the input.
fn tcn_block(g: &mut Graph, p: &mut Binder, prefix: &str, x: Var, dilation: usize) -> Result<Var> {
    let cfg = p.config();
    let h = pointwise_conv(g, p, &format!("{prefix}.in"), x, true)?;
    let a1 = p.get(g, &format!("{prefix}.prelu1"))?;
    let h = g.prelu(h, a1)?;
    let h = norm(g, p, &format!("{prefix}.norm1"), h, cfg.causal)?;
    let spec = if cfg.causal {
        ConvSpec::causal(cfg.tcn_kernel, dilation)
    } else {
        ConvSpec::centered(cfg.tcn_kernel, dilation)
    }
    .with_groups(cfg.hidden_channels);
    let w = p.get(g, &format!("{prefix}.dw.weight"))?;
    let b = p.get(g, &format!("{prefix}.dw.bias"))?;
    let h = g.conv1d(h, w, Some(b), spec)?;
    let a2 = p.get(g, &format!("{prefix}.prelu2"))?;
    let h = g.prelu(h, a2)?;
    let h = norm(g, p, &format!("{prefix}.norm2"), h, cfg.causal)?;
    let o = pointwise_conv(g, p, &format!("{prefix}.out"), h, true)?;
    g.add(x, o)
}

fn waveform_encoder(g: &mut Graph, p: &mut Binder, prefix: &str, wave: Var) -> Result<Var> {
    let cfg = p.config();
    let len = g.value(wave).dims2()?.1;
    if len < cfg.kernel {
        return Err(Error::TooShort {
            len,
            frame: cfg.kernel,
        });
    }
    let w = p.get(g, &format!("{prefix}.weight"))?;
    let y = g.conv1d(wave, w, None, ConvSpec::valid(cfg.stride))?;
    Ok(g.relu(y))
}

/// Encoder → projection → blocks → per-frame `embed_dim` head (`N × T`).
fn embedder(g: &mut Graph, p: &mut Binder, prefix: &str, wave: Var, blocks: usize) -> Result<Var> {
    let cfg = p.config();
    let y = waveform_encoder(g, p, &format!("{prefix}.encoder"), wave)?;
    let mut h = pointwise_conv(g, p, &format!("{prefix}.in_proj"), y, true)?;
    for i in 0..blocks {
        h = tcn_block(
            g,
            p,
            &format!("{prefix}.block{i}"),
            h,
            1 << (i % cfg.blocks_per_repeat),
        )?;
    }
    pointwise_conv(g, p, &format!("{prefix}.head"), h, true)
}

/// Mixture encoder: valid strided conv and ReLU, `enc_channels × T`.
pub fn encode_graph(g: &mut Graph, p: &mut Binder, mixture: Var) -> Result<Var> {
    waveform_encoder(g, p, "encoder", mixture)
}

/// Static speaker embedding of the enrollment, `N × 1`.
pub fn auxiliary_embed_graph(g: &mut Graph, p: &mut Binder, enrollment: Var) -> Result<Var> {
    let blocks = p.config().aux_blocks;
    let frames = embedder(g, p, "aux", enrollment, blocks)?;
    g.mean_frames(frames)
}

/// Speech-branch embedding of the delayed condition, `N × T`.
pub fn speech_branch_graph(g: &mut Graph, p: &mut Binder, condition: Var) -> Result<Var> {
    let blocks = p.config().speech_branch_blocks;
    embedder(g, p, "branch", condition, blocks)
}

/// Fusion layer: `E[t] = e_c + PReLU(W·[e_c; e_S[t]] + b)`, `N × T`.
pub fn fuse_graph(g: &mut Graph, p: &mut Binder, static_embed: Var, speech: Var) -> Result<Var> {
    let (n, t) = g.value(speech).dims2()?;
    if g.value(static_embed).shape() != [n, 1] {
        return Err(shape_err(
            "fuse_embeddings",
            format!(
                "static {:?} vs speech dim {n}",
                g.value(static_embed).shape()
            ),
        ));
    }
    let repeated = g.repeat_frames(static_embed, t)?;
    let stacked = g.concat_rows(repeated, speech)?;
    let m = pointwise_conv(g, p, "fuse", stacked, true)?;
    let alpha = p.get(g, "fuse.alpha")?;
    let m = g.prelu(m, alpha)?;
    g.add(repeated, m)
}

/// Multiplies `x` (`C × T`) by the per-frame embedding `emb` (`N × T`),
/// projected to `C` channels when `N ≠ C`.
pub fn adaptation_graph(g: &mut Graph, p: &mut Binder, x: Var, emb: Var) -> Result<Var> {
    let (c, t) = g.value(x).dims2()?;
    let (n, te) = g.value(emb).dims2()?;
    if te != t {
        return Err(shape_err(
            "adaptation",
            format!("{te} embedding frames for {t} frames"),
        ));
    }
    let scale = if n == c {
        emb
    } else {
        pointwise_conv(g, p, "adapt.proj", emb, false)?
    };
    g.mul(x, scale)
}

/// Mask estimation, `enc_channels × T` with entries in (0, 1).
pub fn separate_graph(g: &mut Graph, p: &mut Binder, encoded: Var, emb: Var) -> Result<Var> {
    let cfg = p.config();
    let (_, t) = g.value(encoded).dims2()?;
    if g.value(emb).dims2()?.1 != t {
        return Err(shape_err(
            "separate",
            format!(
                "embedding has {} frames, mixture {t}",
                g.value(emb).dims2()?.1
            ),
        ));
    }
    let x = norm(g, p, "separator.in_norm", encoded, cfg.causal)?;
    let mut h = pointwise_conv(g, p, "separator.bottleneck", x, true)?;
    for b in 0..cfg.total_blocks() {
        h = tcn_block(g, p, &format!("separator.block{b}"), h, cfg.dilation(b))?;
        if b + 1 == cfg.adaptation_block_index {
            h = adaptation_graph(g, p, h, emb)?;
        }
    }
    let m = pointwise_conv(g, p, "separator.mask", h, true)?;
    Ok(g.sigmoid(m))
}

/// Overlap-add decoder of the masked representation, `1 × ((T-1)·S + K)`.
pub fn decode_graph(g: &mut Graph, p: &mut Binder, encoded: Var, mask: Var) -> Result<Var> {
    let stride = p.config().stride;
    let masked = g.mul(encoded, mask)?;
    let w = p.get(g, "decoder.weight")?;
    g.conv_transpose1d(masked, w, stride)
}

/// Graph handles of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardVars {
    pub encoded: Var,
    pub static_embed: Var,
    pub speech_embed: Option<Var>,
    /// Embedding fed to the adaptation layer, `N × T`.
    pub embedding: Var,
    pub mask: Var,
    pub output: Var,
}

/// Records a full forward pass on `g`. `condition` must already be delayed
/// and is required in dynamic mode.
pub fn forward_graph(
    g: &mut Graph,
    p: &mut Binder,
    mixture: &[f32],
    enrollment: &[f32],
    condition: Option<&[f32]>,
    mode: Mode,
) -> Result<ForwardVars> {
    let mix = g.constant(Tensor::row(mixture.to_vec())?);
    let enroll = g.constant(Tensor::row(enrollment.to_vec())?);
    let cond = match (mode, condition) {
        (Mode::Dynamic, None) => return Err(Error::MissingCondition),
        (Mode::Dynamic, Some(c)) => {
            if c.len() != mixture.len() {
                return Err(shape_err(
                    "forward",
                    format!(
                        "condition has {} samples, mixture {}",
                        c.len(),
                        mixture.len()
                    ),
                ));
            }
            Some(g.constant(Tensor::row(c.to_vec())?))
        }
        (Mode::Static, _) => None,
    };
    forward_vars(g, p, mix, enroll, cond)
}

/// Like [`forward_graph`] with inputs already on the graph; `condition`
/// selects dynamic mode.
pub fn forward_vars(
    g: &mut Graph,
    p: &mut Binder,
    mixture: Var,
    enrollment: Var,
    condition: Option<Var>,
) -> Result<ForwardVars> {
    let encoded = encode_graph(g, p, mixture)?;
    let static_embed = auxiliary_embed_graph(g, p, enrollment)?;
    let t = g.value(encoded).dims2()?.1;
    let (speech_embed, embedding) = match condition {
        Some(cond) => {
            let s = speech_branch_graph(g, p, cond)?;
            if g.value(s).dims2()?.1 != t {
                return Err(shape_err(
                    "forward",
                    "condition frame grid differs from mixture",
                ));
            }
            (Some(s), fuse_graph(g, p, static_embed, s)?)
        }
        None => (None, g.repeat_frames(static_embed, t)?),
    };
    let mask = separate_graph(g, p, encoded, embedding)?;
    let output = decode_graph(g, p, encoded, mask)?;
    Ok(ForwardVars {
        encoded,
        static_embed,
        speech_embed,
        embedding,
        mask,
        output,
    })
}

fn row_graph(wave: &[f32]) -> Result<(Graph, Var)> {
    let mut g = Graph::new();
    let v = g.constant(Tensor::row(wave.to_vec())?);
    Ok((g, v))
}

/// Encoded mixture, `enc_channels × T` with `T = ⌊(len − K)/S⌋ + 1`.
pub fn encode(mixture: &[f32], ckpt: &Checkpoint) -> Result<Tensor> {
    let (mut g, y) = row_graph(mixture)?;
    let mut p = Binder::new(ckpt);
    let out = encode_graph(&mut g, &mut p, y)?;
    Ok(g.value(out).clone())
}

/// Static speaker embedding `e_c`, shape `1 × N`.
pub fn auxiliary_embed(enrollment: &[f32], ckpt: &Checkpoint) -> Result<Tensor> {
    let (mut g, c) = row_graph(enrollment)?;
    let mut p = Binder::new(ckpt);
    let out = auxiliary_embed_graph(&mut g, &mut p, c)?;
    g.value(out).clone().reshape(vec![1, ckpt.config.embed_dim])
}

/// Speaker embedding supplied to the adaptation layer.
#[derive(Debug, Clone, PartialEq)]
pub enum Conditioning {
    /// One `1 × N` vector broadcast over frames.
    Static(Tensor),
    /// One embedding per frame.
    Dynamic(EmbeddingSequence),
}

impl Conditioning {
    fn channel_major(&self, frames: usize) -> Result<Tensor> {
        match self {
            Conditioning::Static(e) => {
                let n = e.len();
                let mut data = Vec::with_capacity(n * frames);
                for &v in e.data() {
                    data.extend(std::iter::repeat_n(v, frames));
                }
                Tensor::new(vec![n, frames], data)
            }
            Conditioning::Dynamic(seq) => {
                if seq.frames() != frames {
                    return Err(shape_err(
                        "conditioning",
                        format!("{} embedding frames for {frames} frames", seq.frames()),
                    ));
                }
                seq.to_channel_major()
            }
        }
    }
}

/// `out[c,t] = x[c,t]·e[c]` for a static `1 × C` embedding, or
/// `x[c,t]·E[t,c]` for a per-frame one. Embeddings whose width differs from
/// `C` go through the learned projection of `ckpt`.
pub fn adaptation(x: &Tensor, emb: &Conditioning, ckpt: &Checkpoint) -> Result<Tensor> {
    let (_, t) = x.dims2()?;
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let ev = g.constant(emb.channel_major(t)?);
    let mut p = Binder::new(ckpt);
    let out = adaptation_graph(&mut g, &mut p, xv, ev)?;
    Ok(g.value(out).clone())
}

/// Speech-branch embeddings of an already-delayed condition signal whose
/// length must match the mixture's.
pub fn speech_branch(
    condition: &[f32],
    mixture_len: usize,
    ckpt: &Checkpoint,
) -> Result<EmbeddingSequence> {
    if condition.len() != mixture_len {
        return Err(shape_err(
            "speech_branch",
            format!(
                "condition has {} samples, mixture {mixture_len}",
                condition.len()
            ),
        ));
    }
    let (mut g, c) = row_graph(condition)?;
    let mut p = Binder::new(ckpt);
    let out = speech_branch_graph(&mut g, &mut p, c)?;
    EmbeddingSequence::from_channel_major(g.value(out))
}

/// Fused dynamic embedding: `E[t] = e_c + MaskLearn([e_c; e_S[t]])`.
pub fn fuse_embeddings(
    static_embed: &Tensor,
    speech: &EmbeddingSequence,
    ckpt: &Checkpoint,
) -> Result<EmbeddingSequence> {
    if static_embed.len() != speech.dim() {
        return Err(shape_err(
            "fuse_embeddings",
            format!(
                "static dim {} vs speech dim {}",
                static_embed.len(),
                speech.dim()
            ),
        ));
    }
    let mut g = Graph::new();
    let ec = g.constant(static_embed.clone().reshape(vec![speech.dim(), 1])?);
    let es = g.constant(speech.to_channel_major()?);
    let mut p = Binder::new(ckpt);
    let out = fuse_graph(&mut g, &mut p, ec, es)?;
    EmbeddingSequence::from_channel_major(g.value(out))
}

/// Mask `M^S` for an encoded mixture.
pub fn separate(encoded: &Tensor, emb: &Conditioning, ckpt: &Checkpoint) -> Result<Tensor> {
    let (_, t) = encoded.dims2()?;
    let mut g = Graph::new();
    let y = g.constant(encoded.clone());
    let e = g.constant(emb.channel_major(t)?);
    let mut p = Binder::new(ckpt);
    let out = separate_graph(&mut g, &mut p, y, e)?;
    Ok(g.value(out).clone())
}

/// Waveform of `Decoder(Y ⊙ M)`.
pub fn decode(encoded: &Tensor, mask: &Tensor, ckpt: &Checkpoint) -> Result<Vec<f32>> {
    if encoded.shape() != mask.shape() {
        return Err(shape_err(
            "decode",
            format!("{:?} vs {:?}", encoded.shape(), mask.shape()),
        ));
    }
    let mut g = Graph::new();
    let y = g.constant(encoded.clone());
    let m = g.constant(mask.clone());
    let mut p = Binder::new(ckpt);
    let out = decode_graph(&mut g, &mut p, y, m)?;
    Ok(g.value(out).data().to_vec())
}

/// Extracts the target from `mixture`. Dynamic mode needs a delayed
/// `condition` of the mixture's length; conditioning on the delayed true
/// target gives the oracle upper-bound configuration.
pub fn forward(
    mixture: &[f32],
    enrollment: &[f32],
    condition: Option<&[f32]>,
    mode: Mode,
    ckpt: &Checkpoint,
) -> Result<Vec<f32>> {
    let mut g = Graph::new();
    let mut p = Binder::new(ckpt);
    let vars = forward_graph(&mut g, &mut p, mixture, enrollment, condition, mode)?;
    Ok(g.value(vars.output).data().to_vec())
}

/// Static embedding followed by the fused per-frame embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub static_embed: Vec<f32>,
    pub frames: EmbeddingSequence,
}

impl EmbeddingTable {
    /// CSV with header `frame,e0,..,e{N-1}`, a `static` row, then one row per
    /// frame index.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let n = self.static_embed.len();
        let header: Vec<String> = std::iter::once("frame".to_string())
            .chain((0..n).map(|i| format!("e{i}")))
            .collect();
        writeln!(w, "{}", header.join(","))?;
        let fmt = |row: &[f32]| {
            row.iter()
                .map(|v| format!("{v}"))
                .collect::<Vec<_>>()
                .join(",")
        };
        writeln!(w, "static,{}", fmt(&self.static_embed))?;
        for t in 0..self.frames.frames() {
            writeln!(w, "{t},{}", fmt(self.frames.row(t)))?;
        }
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.frames.frames() + 1
    }
}

/// Computes the embedding table of a dynamic forward pass and, when `path` is
/// given, writes it as CSV.
pub fn dump_embeddings(
    mixture: &[f32],
    enrollment: &[f32],
    condition: &[f32],
    ckpt: &Checkpoint,
    path: Option<&Path>,
) -> Result<EmbeddingTable> {
    let mut g = Graph::new();
    let mut p = Binder::new(ckpt);
    let vars = forward_graph(
        &mut g,
        &mut p,
        mixture,
        enrollment,
        Some(condition),
        Mode::Dynamic,
    )?;
    let table = EmbeddingTable {
        static_embed: g.value(vars.static_embed).data().to_vec(),
        frames: EmbeddingSequence::from_channel_major(g.value(vars.embedding))?,
    };
    if let Some(path) = path {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        table.write_csv(f)?;
    }
    Ok(table)
}
