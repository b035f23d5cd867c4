//! Define-by-run computation graph with reverse-mode differentiation.
//!
//! Nodes are appended in evaluation order, so node inputs always reference
//! earlier nodes and a single reverse sweep visits them in topological order.

use std::collections::BTreeMap;

use super::kernels::{self, ConvSpec};
use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;
use crate::training::loss;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
}

#[derive(Debug)]
enum Op {
    Leaf {
        name: Option<String>,
        trainable: bool,
    },
    Conv1d {
        x: Var,
        w: Var,
        b: Option<Var>,
        spec: ConvSpec,
    },
    ConvTranspose1d {
        x: Var,
        w: Var,
        stride: usize,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        cumulative: bool,
        means: Vec<f64>,
        invs: Vec<f64>,
    },
    Act {
        x: Var,
        kind: Activation,
    },
    Prelu {
        x: Var,
        alpha: Var,
    },
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f32),
    Sum(Var),
    RepeatFrames {
        x: Var,
        frames: usize,
    },
    MeanFrames(Var),
    ConcatRows(Var, Var),
    /// Scalar loss with its gradient w.r.t. the estimate precomputed.
    Loss {
        est: Var,
        grad: Vec<f32>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of named trainable leaves.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradients {
    map: BTreeMap<String, Tensor>,
}

impl Gradients {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.map.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.map.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(String::as_str)
    }

    pub fn insert(&mut self, name: impl Into<String>, grad: Tensor) {
        self.map.insert(name.into(), grad);
    }

    /// Accumulates `other` into `self` entry by entry.
    pub fn accumulate(&mut self, other: &Gradients) {
        for (name, g) in &other.map {
            match self.map.get_mut(name) {
                Some(acc) => acc
                    .data_mut()
                    .iter_mut()
                    .zip(g.data())
                    .for_each(|(a, b)| *a += b),
                None => {
                    self.map.insert(name.clone(), g.clone());
                }
            }
        }
    }

    pub fn scale(&mut self, k: f32) {
        for g in self.map.values_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= k);
        }
    }

    /// Euclidean norm over every entry.
    pub fn global_norm(&self) -> f32 {
        self.map
            .values()
            .flat_map(|t| t.data())
            .map(|&v| (v as f64) * (v as f64))
            .sum::<f64>()
            .sqrt() as f32
    }
}

/// Gradients of every leaf reachable from a loss, addressed by [`Var`].
#[derive(Debug)]
pub struct LeafGradients {
    grads: Vec<Option<Vec<f32>>>,
}

impl LeafGradients {
    pub fn get(&self, v: Var) -> Option<&[f32]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(shape_err(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn accumulate(grads: &mut [Option<Vec<f32>>], v: Var, delta: Vec<f32>) {
    match &mut grads[v.0] {
        Some(g) => g.iter_mut().zip(&delta).for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(delta),
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(
            value,
            Op::Leaf {
                name: None,
                trainable: false,
            },
            false,
        )
    }

    /// A named leaf. Only trainable leaves receive gradients.
    pub fn param(&mut self, name: impl Into<String>, value: Tensor, trainable: bool) -> Var {
        self.push(
            value,
            Op::Leaf {
                name: Some(name.into()),
                trainable,
            },
            trainable,
        )
    }

    /// A constant copy of `v`: gradients do not flow back through it.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.constant(value)
    }

    pub fn conv1d(&mut self, x: Var, w: Var, b: Option<Var>, spec: ConvSpec) -> Result<Var> {
        let (cin, t_in) = self.value(x).dims2()?;
        let (cout, cin_g, k) = self.value(w).dims3()?;
        if spec.groups == 0 || cin % spec.groups != 0 || cout % spec.groups != 0 {
            return Err(shape_err(
                "conv1d",
                format!("groups {} vs {cin}->{cout}", spec.groups),
            ));
        }
        if cin_g * spec.groups != cin {
            return Err(shape_err(
                "conv1d",
                format!(
                    "weight expects {} input channels, input has {cin}",
                    cin_g * spec.groups
                ),
            ));
        }
        if spec.stride == 0 || spec.dilation == 0 {
            return Err(shape_err("conv1d", "stride and dilation must be >= 1"));
        }
        if let Some(b) = b {
            if self.value(b).shape() != [cout] {
                return Err(shape_err(
                    "conv1d",
                    format!("bias shape {:?}", self.value(b).shape()),
                ));
            }
        }
        let t_out = spec.output_len(t_in, k).ok_or_else(|| {
            shape_err(
                "conv1d",
                format!("{t_in} frames shorter than kernel extent"),
            )
        })?;
        let out = kernels::conv1d_forward(
            self.value(x).data(),
            cin,
            t_in,
            self.value(w).data(),
            cout,
            k,
            b.map(|b| self.value(b).data()),
            &spec,
            t_out,
        );
        let mut inputs = vec![x, w];
        inputs.extend(b);
        let rg = self.rg(&inputs);
        Ok(self.push(
            Tensor::new(vec![cout, t_out], out)?,
            Op::Conv1d { x, w, b, spec },
            rg,
        ))
    }

    pub fn conv_transpose1d(&mut self, x: Var, w: Var, stride: usize) -> Result<Var> {
        let (cin, t) = self.value(x).dims2()?;
        let (wc, cout, k) = self.value(w).dims3()?;
        if wc != cin {
            return Err(shape_err(
                "conv_transpose1d",
                format!("weight has {wc} inputs, x has {cin}"),
            ));
        }
        if stride == 0 {
            return Err(shape_err("conv_transpose1d", "stride must be >= 1"));
        }
        let out = kernels::conv_transpose1d_forward(
            self.value(x).data(),
            cin,
            t,
            self.value(w).data(),
            cout,
            k,
            stride,
        );
        let rg = self.rg(&[x, w]);
        let len = (t - 1) * stride + k;
        Ok(self.push(
            Tensor::new(vec![cout, len], out)?,
            Op::ConvTranspose1d { x, w, stride },
            rg,
        ))
    }

    /// Cumulative (`cumulative = true`) or global layer norm over a `C × T`
    /// input with per-channel gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, cumulative: bool) -> Result<Var> {
        let (c, t) = self.value(x).dims2()?;
        if self.value(gain).shape() != [c] || self.value(bias).shape() != [c] {
            return Err(shape_err(
                "layer_norm",
                format!("gain/bias must have {c} entries"),
            ));
        }
        let (out, means, invs) = kernels::layer_norm_forward(
            self.value(x).data(),
            c,
            t,
            self.value(gain).data(),
            self.value(bias).data(),
            cumulative,
        );
        let rg = self.rg(&[x, gain, bias]);
        Ok(self.push(
            Tensor::new(vec![c, t], out)?,
            Op::LayerNorm {
                x,
                gain,
                bias,
                cumulative,
                means,
                invs,
            },
            rg,
        ))
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Var {
        let f = match kind {
            Activation::Relu => kernels::relu,
            Activation::Sigmoid => kernels::sigmoid,
        };
        let src = self.value(x);
        let data = src.data().iter().map(|&v| f(v)).collect();
        let value = Tensor::new(src.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(&[x]);
        self.push(value, Op::Act { x, kind }, rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Relu)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Sigmoid)
    }

    /// Parametric ReLU with one slope per row (or a single shared slope).
    pub fn prelu(&mut self, x: Var, alpha: Var) -> Result<Var> {
        let (c, t) = self.value(x).dims2()?;
        let a = self.value(alpha).data();
        if a.len() != c && a.len() != 1 {
            return Err(shape_err(
                "prelu",
                format!("{} slopes for {c} channels", a.len()),
            ));
        }
        let xs = self.value(x).data();
        let mut out = vec![0.0; c * t];
        for ci in 0..c {
            let slope = if a.len() == 1 { a[0] } else { a[ci] };
            for ti in 0..t {
                out[ci * t + ti] = kernels::prelu(xs[ci * t + ti], slope);
            }
        }
        let rg = self.rg(&[x, alpha]);
        Ok(self.push(Tensor::new(vec![c, t], out)?, Op::Prelu { x, alpha }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("add", self.value(a), self.value(b))?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("mul", self.value(a), self.value(b))?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, k: f32) -> Var {
        let src = self.value(a);
        let value = Tensor::new(
            src.shape().to_vec(),
            src.data().iter().map(|v| v * k).collect(),
        )
        .expect("same shape");
        let rg = self.rg(&[a]);
        self.push(value, Op::Scale(a, k), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: f32 = self.value(a).data().iter().sum();
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    /// Broadcasts a `C × 1` column to `C × frames`.
    pub fn repeat_frames(&mut self, x: Var, frames: usize) -> Result<Var> {
        let (c, one) = self.value(x).dims2()?;
        if one != 1 || frames == 0 {
            return Err(shape_err(
                "repeat_frames",
                format!("input {c}x{one}, frames {frames}"),
            ));
        }
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(c * frames);
        for &v in src {
            out.extend(std::iter::repeat_n(v, frames));
        }
        let rg = self.rg(&[x]);
        Ok(self.push(
            Tensor::new(vec![c, frames], out)?,
            Op::RepeatFrames { x, frames },
            rg,
        ))
    }

    /// Averages a `C × T` input over frames into a `C × 1` column.
    pub fn mean_frames(&mut self, x: Var) -> Result<Var> {
        let (c, t) = self.value(x).dims2()?;
        let src = self.value(x).data();
        let out = (0..c)
            .map(|ci| {
                (src[ci * t..(ci + 1) * t]
                    .iter()
                    .map(|&v| v as f64)
                    .sum::<f64>()
                    / t as f64) as f32
            })
            .collect();
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(vec![c, 1], out)?, Op::MeanFrames(x), rg))
    }

    /// Stacks `a` (`C1 × T`) on top of `b` (`C2 × T`).
    pub fn concat_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ca, ta) = self.value(a).dims2()?;
        let (cb, tb) = self.value(b).dims2()?;
        if ta != tb {
            return Err(shape_err("concat_rows", format!("{ta} vs {tb} frames")));
        }
        let mut out = self.value(a).data().to_vec();
        out.extend_from_slice(self.value(b).data());
        let rg = self.rg(&[a, b]);
        Ok(self.push(
            Tensor::new(vec![ca + cb, ta], out)?,
            Op::ConcatRows(a, b),
            rg,
        ))
    }

    /// Negative SNR (dB) of `est` against a constant reference.
    pub fn snr_loss(&mut self, est: Var, reference: &[f32]) -> Result<Var> {
        let (db, grad) = loss::snr_db_with_grad(self.value(est).data(), reference)?;
        let grad = grad.into_iter().map(|g| -g).collect();
        let rg = self.rg(&[est]);
        Ok(self.push(Tensor::scalar(-db as f32), Op::Loss { est, grad }, rg))
    }

    /// Negative SI-SNR (dB) of `est` against a constant reference.
    pub fn si_snr_loss(&mut self, est: Var, reference: &[f32]) -> Result<Var> {
        let (db, grad) = loss::si_snr_db_with_grad(self.value(est).data(), reference)?;
        let grad = grad.into_iter().map(|g| -g).collect();
        let rg = self.rg(&[est]);
        Ok(self.push(Tensor::scalar(-db as f32), Op::Loss { est, grad }, rg))
    }

    fn sweep(&self, loss: Var) -> Result<Vec<Option<Vec<f32>>>> {
        let node = self.nodes.get(loss.0).ok_or(Error::Disconnected(loss.0))?;
        if !node.value.is_scalar() {
            return Err(Error::NonScalarLoss(node.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f32>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                grads[idx] = None;
                continue;
            }
            if matches!(node.op, Op::Leaf { .. }) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(node, &g, &mut grads)?;
        }
        Ok(grads)
    }

    fn backprop_node(&self, node: &Node, g: &[f32], grads: &mut [Option<Vec<f32>>]) -> Result<()> {
        let want = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf { .. } => {}
            Op::Conv1d { x, w, b, spec } => {
                let (cin, t_in) = self.value(*x).dims2()?;
                let (cout, _, k) = self.value(*w).dims3()?;
                let t_out = node.value.dims2()?.1;
                let (dx, dw, db) = kernels::conv1d_backward(
                    self.value(*x).data(),
                    cin,
                    t_in,
                    self.value(*w).data(),
                    cout,
                    k,
                    spec,
                    t_out,
                    g,
                );
                if want(*x) {
                    accumulate(grads, *x, dx);
                }
                if want(*w) {
                    accumulate(grads, *w, dw);
                }
                if let Some(b) = b {
                    if want(*b) {
                        accumulate(grads, *b, db);
                    }
                }
            }
            Op::ConvTranspose1d { x, w, stride } => {
                let (cin, t) = self.value(*x).dims2()?;
                let (_, cout, k) = self.value(*w).dims3()?;
                let (dx, dw) = kernels::conv_transpose1d_backward(
                    self.value(*x).data(),
                    cin,
                    t,
                    self.value(*w).data(),
                    cout,
                    k,
                    *stride,
                    g,
                );
                if want(*x) {
                    accumulate(grads, *x, dx);
                }
                if want(*w) {
                    accumulate(grads, *w, dw);
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                cumulative,
                means,
                invs,
            } => {
                let (c, t) = self.value(*x).dims2()?;
                let (dx, dg, db) = kernels::layer_norm_backward(
                    self.value(*x).data(),
                    c,
                    t,
                    self.value(*gain).data(),
                    means,
                    invs,
                    *cumulative,
                    g,
                );
                if want(*x) {
                    accumulate(grads, *x, dx);
                }
                if want(*gain) {
                    accumulate(grads, *gain, dg);
                }
                if want(*bias) {
                    accumulate(grads, *bias, db);
                }
            }
            Op::Act { x, kind } => {
                let dx = match kind {
                    Activation::Relu => self
                        .value(*x)
                        .data()
                        .iter()
                        .zip(g)
                        .map(|(&v, &gv)| if v > 0.0 { gv } else { 0.0 })
                        .collect(),
                    Activation::Sigmoid => node
                        .value
                        .data()
                        .iter()
                        .zip(g)
                        .map(|(&y, &gv)| gv * y * (1.0 - y))
                        .collect(),
                };
                accumulate(grads, *x, dx);
            }
            Op::Prelu { x, alpha } => {
                let (c, t) = self.value(*x).dims2()?;
                let a = self.value(*alpha).data();
                let xs = self.value(*x).data();
                let mut dx = vec![0.0; c * t];
                let mut da = vec![0.0f32; a.len()];
                for ci in 0..c {
                    let ai = if a.len() == 1 { 0 } else { ci };
                    let mut acc = 0.0f32;
                    for ti in 0..t {
                        let i = ci * t + ti;
                        if xs[i] > 0.0 {
                            dx[i] = g[i];
                        } else {
                            dx[i] = a[ai] * g[i];
                            acc += xs[i] * g[i];
                        }
                    }
                    da[ai] += acc;
                }
                if want(*x) {
                    accumulate(grads, *x, dx);
                }
                if want(*alpha) {
                    accumulate(grads, *alpha, da);
                }
            }
            Op::Add(a, b) => {
                if want(*a) {
                    accumulate(grads, *a, g.to_vec());
                }
                if want(*b) {
                    accumulate(grads, *b, g.to_vec());
                }
            }
            Op::Mul(a, b) => {
                if want(*a) {
                    let d = g
                        .iter()
                        .zip(self.value(*b).data())
                        .map(|(x, y)| x * y)
                        .collect();
                    accumulate(grads, *a, d);
                }
                if want(*b) {
                    let d = g
                        .iter()
                        .zip(self.value(*a).data())
                        .map(|(x, y)| x * y)
                        .collect();
                    accumulate(grads, *b, d);
                }
            }
            Op::Scale(a, k) => accumulate(grads, *a, g.iter().map(|v| v * k).collect()),
            Op::Sum(a) => accumulate(grads, *a, vec![g[0]; self.value(*a).len()]),
            Op::RepeatFrames { x, frames } => {
                let d = g.chunks(*frames).map(|row| row.iter().sum()).collect();
                accumulate(grads, *x, d);
            }
            Op::MeanFrames(x) => {
                let (_, t) = self.value(*x).dims2()?;
                let d = g
                    .iter()
                    .flat_map(|&gv| std::iter::repeat_n(gv / t as f32, t))
                    .collect();
                accumulate(grads, *x, d);
            }
            Op::ConcatRows(a, b) => {
                let na = self.value(*a).len();
                if want(*a) {
                    accumulate(grads, *a, g[..na].to_vec());
                }
                if want(*b) {
                    accumulate(grads, *b, g[na..].to_vec());
                }
            }
            Op::Loss { est, grad } => {
                accumulate(grads, *est, grad.iter().map(|v| v * g[0]).collect());
            }
        }
        Ok(())
    }

    /// Gradients of a scalar loss w.r.t. every named trainable leaf. Frozen
    /// leaves and constants never appear in the result.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let grads = self.sweep(loss)?;
        let mut out = Gradients::default();
        for (idx, g) in grads.into_iter().enumerate() {
            let Some(g) = g else { continue };
            let node = &self.nodes[idx];
            if let Op::Leaf {
                name: Some(name),
                trainable: true,
            } = &node.op
            {
                let t = Tensor::new(node.value.shape().to_vec(), g)?;
                let mut single = Gradients::default();
                single.insert(name.clone(), t);
                out.accumulate(&single);
            }
        }
        Ok(out)
    }

    /// Gradients of a scalar loss w.r.t. every trainable leaf, by node.
    pub fn backward_leaves(&self, loss: Var) -> Result<LeafGradients> {
        let mut grads = self.sweep(loss)?;
        for (idx, g) in grads.iter_mut().enumerate() {
            if !matches!(self.nodes[idx].op, Op::Leaf { .. }) {
                *g = None;
            }
        }
        Ok(LeafGradients { grads })
    }
}
