//! Tensor kernels and reverse-mode differentiation for the operations the
//! extraction network is built from.
//!
//! The free functions here evaluate a single op eagerly. Training code
//! records the same ops on a [`Graph`] instead.

mod graph;
pub mod kernels;

pub use graph::{Activation, Gradients, Graph, LeafGradients, Var};
pub use kernels::{ConvSpec, NORM_EPS};

use crate::error::Result;
use crate::tensor::Tensor;

/// Elementwise nonlinearities.
#[derive(Debug, Clone, PartialEq)]
pub enum Pointwise {
    Relu,
    /// One slope per channel, or a single shared slope.
    Prelu(Vec<f32>),
    Sigmoid,
}

/// 1-D convolution of a `C_in × T` input. Stride-1 convolutions are causal
/// (left-padded with `(K-1)·dilation` zeros); strided ones are unpadded.
pub fn conv1d_causal(
    x: &Tensor,
    w: &Tensor,
    b: Option<&Tensor>,
    dilation: usize,
    stride: usize,
) -> Result<Tensor> {
    let (_, _, k) = w.dims3()?;
    let spec = if stride == 1 {
        ConvSpec::causal(k, dilation.max(1))
    } else {
        ConvSpec {
            dilation,
            ..ConvSpec::valid(stride)
        }
    };
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let wv = g.constant(w.clone());
    let bv = b.map(|b| g.constant(b.clone()));
    let out = g.conv1d(xv, wv, bv, spec)?;
    Ok(g.value(out).clone())
}

/// Overlap-add of `x` (`C_in × T`) with kernels `w` (`C_in × C_out × K`).
pub fn conv_transpose1d(x: &Tensor, w: &Tensor, stride: usize) -> Result<Tensor> {
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let wv = g.constant(w.clone());
    let out = g.conv_transpose1d(xv, wv, stride)?;
    Ok(g.value(out).clone())
}

/// Cumulative layer norm with variance floor [`NORM_EPS`].
pub fn cumulative_layer_norm(x: &Tensor, gain: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let gv = g.constant(gain.clone());
    let bv = g.constant(bias.clone());
    let out = g.layer_norm(xv, gv, bv, true)?;
    Ok(g.value(out).clone())
}

pub fn pointwise(x: &Tensor, kind: &Pointwise) -> Result<Tensor> {
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let out = match kind {
        Pointwise::Relu => g.relu(xv),
        Pointwise::Sigmoid => g.sigmoid(xv),
        Pointwise::Prelu(alpha) => {
            let a = g.constant(Tensor::new(vec![alpha.len()], alpha.clone())?);
            let x2 = if x.rank() == 2 {
                xv
            } else {
                g.constant(x.clone().reshape(vec![1, x.len()])?)
            };
            let y = g.prelu(x2, a)?;
            return g.value(y).clone().reshape(x.shape().to_vec());
        }
    };
    Ok(g.value(out).clone())
}
