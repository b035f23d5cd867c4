#![allow(dead_code)]

use dense_core::checkpoint::{parameter_layout, Checkpoint};
use dense_core::config::ModelConfig;
use dense_core::model::{forward_graph, Binder, Mode};
use dense_core::numerics::{Graph, Var};
use dense_core::tensor::Tensor;
use dense_core::training::{make_ar_condition, LossWeights};
use dense_core::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(n: usize, scale: f32, rng: &mut ChaCha8Rng) -> Vec<f32> {
    (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
}

pub fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), uniform(n, 1.0, rng)).unwrap()
}

/// Tensor whose entries are bounded away from zero, for ops with a kink at 0.
pub fn rand_tensor_off_zero(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m: f32 = rng.gen_range(0.05..1.0);
            if rng.gen::<bool>() {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Amplitude-modulated harmonic signal with a little noise.
pub fn speechlike(len: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let f0: f32 = rng.gen_range(90.0..250.0);
    let am: f32 = rng.gen_range(2.0..6.0);
    let phase: f32 = rng.gen_range(0.0..std::f32::consts::TAU);
    (0..len)
        .map(|n| {
            let t = n as f32 / 8000.0;
            let mut v = 0.0;
            for h in 1..6 {
                v += (2.0 * std::f32::consts::PI * f0 * h as f32 * t + phase * h as f32).sin()
                    / h as f32;
            }
            let env = 0.55 + 0.45 * (2.0 * std::f32::consts::PI * am * t + phase).sin();
            0.1 * v * env + rng.gen_range(-0.005..0.005)
        })
        .collect()
}

/// Relative error `‖a − n‖ / max(‖a‖, ‖n‖)`.
pub fn rel_err(a: &[f64], n: &[f64]) -> f64 {
    let d: f64 = a
        .iter()
        .zip(n)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nn = n.iter().map(|x| x * x).sum::<f64>().sqrt();
    let denom = na.max(nn);
    if denom == 0.0 {
        0.0
    } else {
        d / denom
    }
}

/// Compares the analytic gradient of `Σ c ⊙ f(inputs)` (random `c`) with
/// central differences of step `h`. The numeric loss is accumulated in f64.
pub fn gradcheck<F>(inputs: &[Tensor], f: F, h: f32, seed: u64) -> f64
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |ins: &[Tensor]| -> (Graph, Vec<Var>, Var) {
        let mut g = Graph::new();
        let vars: Vec<Var> = ins
            .iter()
            .enumerate()
            .map(|(i, t)| g.param(format!("in{i}"), t.clone(), true))
            .collect();
        let y = f(&mut g, &vars).unwrap();
        (g, vars, y)
    };
    let (g0, _, y0) = eval(inputs);
    let mut r = rng(seed ^ 0xc0ffee);
    let coef = if g0.value(y0).is_scalar() {
        Tensor::full(g0.value(y0).shape().to_vec(), 1.0)
    } else {
        rand_tensor(g0.value(y0).shape(), &mut r)
    };
    let functional = |g: &Graph, y: Var| -> f64 {
        g.value(y)
            .data()
            .iter()
            .zip(coef.data())
            .map(|(&a, &b)| a as f64 * b as f64)
            .sum()
    };

    let mut g = g0;
    let c = g.constant(coef.clone());
    let prod = g.mul(y0, c).unwrap();
    let loss = g.sum(prod);
    let grads = g.backward(loss).unwrap();

    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    for (i, t) in inputs.iter().enumerate() {
        let ga = grads.get(&format!("in{i}"));
        for j in 0..t.len() {
            analytic.push(ga.map_or(0.0, |g| g.data()[j] as f64));
            let mut ins = inputs.to_vec();
            ins[i].data_mut()[j] = t.data()[j] + h;
            let (gp, _, yp) = eval(&ins);
            ins[i].data_mut()[j] = t.data()[j] - h;
            let (gm, _, ym) = eval(&ins);
            numeric.push((functional(&gp, yp) - functional(&gm, ym)) / (2.0 * h as f64));
        }
    }
    rel_err(&analytic, &numeric)
}

/// Micro-config checkpoint with a randomized fusion layer so every dynamic
/// parameter influences the output.
pub fn micro_dynamic_ckpt(seed: u64) -> Checkpoint {
    let mut ckpt = Checkpoint::init(ModelConfig::micro(), seed).unwrap();
    let mut r = rng(seed + 1);
    for name in ["fuse.weight", "fuse.bias"] {
        let t = ckpt.tensor_mut(name).unwrap();
        let n = t.len();
        t.data_mut().copy_from_slice(&uniform(n, 0.3, &mut r));
    }
    for spec in parameter_layout(&ckpt.config) {
        ckpt.set_trainable(&spec.name, true).unwrap();
    }
    ckpt
}

/// Hybrid loss of a forward pass, evaluated in f64 from the output samples.
pub fn forward_loss(
    ckpt: &Checkpoint,
    mix: &[f32],
    enroll: &[f32],
    cond: Option<&[f32]>,
    target: &[f32],
    w: LossWeights,
) -> f64 {
    let mode = if cond.is_some() {
        Mode::Dynamic
    } else {
        Mode::Static
    };
    let out = dense_core::model::forward(mix, enroll, cond, mode, ckpt).unwrap();
    let snr = dense_core::training::loss::snr_db(&out, &target[..out.len()]).unwrap();
    let si = dense_core::training::loss::si_snr_db(&out, &target[..out.len()]).unwrap();
    -(w.snr as f64) * snr - (w.si_snr as f64) * si
}

/// Analytic parameter gradients of the hybrid loss of one forward pass.
pub fn forward_grads(
    ckpt: &Checkpoint,
    mix: &[f32],
    enroll: &[f32],
    cond: Option<&[f32]>,
    target: &[f32],
    w: LossWeights,
) -> dense_core::numerics::Gradients {
    let mode = if cond.is_some() {
        Mode::Dynamic
    } else {
        Mode::Static
    };
    let mut g = Graph::new();
    let mut p = Binder::new(ckpt);
    let v = forward_graph(&mut g, &mut p, mix, enroll, cond, mode).unwrap();
    let n = g.value(v.output).len();
    let l =
        dense_core::training::loss::hybrid_loss_node(&mut g, v.output, &target[..n], w).unwrap();
    g.backward(l).unwrap()
}

/// A micro-scale utterance triple `(mixture, enrollment, target)` whose
/// length sits on the frame grid.
pub fn micro_example(len: usize, seed: u64) -> (Vec<f32>, Vec<f32>, Vec<f32>) {
    let mut r = rng(seed);
    let target = speechlike(len, &mut r);
    let interf = speechlike(len, &mut r);
    let enroll = speechlike(len, &mut r);
    let mix = target.iter().zip(&interf).map(|(a, b)| a + b).collect();
    (mix, enroll, target)
}

pub fn delayed(x: &[f32], d: usize) -> Vec<f32> {
    make_ar_condition(x, d)
}

/// Streams `mix` through a fresh state using the given chunk sizes
/// (cycled), then flushes.
pub fn stream_with_chunks(
    ckpt: &Checkpoint,
    mix: &[f32],
    enroll: &[f32],
    mode: dense_core::StreamMode,
    chunks: &[usize],
) -> Vec<f32> {
    let mut state = dense_core::StreamState::new(ckpt, enroll, mode).unwrap();
    let mut out = Vec::new();
    let mut pos = 0;
    let mut i = 0;
    while pos < mix.len() {
        let n = chunks[i % chunks.len()].min(mix.len() - pos);
        out.extend(state.push(&mix[pos..pos + n]).unwrap());
        pos += n;
        i += 1;
    }
    out.extend(state.flush().unwrap());
    out
}

/// Offline dynamic forward conditioned on the delayed stream output itself;
/// a self-feedback stream must be a fixed point of this map.
pub fn self_feedback_offline(
    ckpt: &Checkpoint,
    mix: &[f32],
    enroll: &[f32],
    streamed: &[f32],
) -> Vec<f32> {
    let mut padded = streamed.to_vec();
    padded.resize(mix.len(), 0.0);
    let cond = make_ar_condition(&padded, ckpt.config.sample_delay);
    dense_core::model::forward(mix, enroll, Some(&cond), Mode::Dynamic, ckpt).unwrap()
}

pub fn max_abs(a: &[f32], b: &[f32]) -> f32 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f32::max)
}

/// Random chunk schedule: sizes in `1..=max`, plus occasional empty pushes.
pub fn random_chunks(n: usize, max: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut v: Vec<usize> = (0..n)
        .map(|_| {
            if rng.gen_ratio(1, 10) {
                0
            } else {
                rng.gen_range(1..=max)
            }
        })
        .collect();
    v[0] = v[0].max(1);
    v
}
