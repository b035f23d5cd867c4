use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::data::{Dataset, Example};
use super::loss::{hybrid_loss_node, si_snr_db};
use super::optim::Adam;
use super::{make_ar_condition, EpochRecord, TrainConfig, TrainMode, TrainRecord};
use crate::checkpoint::{Checkpoint, Scope};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::model::{forward, forward_graph, forward_vars, Binder, Mode};
use crate::numerics::{ConvSpec, Gradients, Graph, Var};
use crate::streaming::{extract_streaming, StreamMode};
use crate::tensor::Tensor;

/// Conditioning used for one training item.
#[derive(Debug, Clone, Copy)]
pub enum Plan<'a> {
    Static,
    /// Dynamic pass with an already-delayed condition.
    Dynamic(&'a [f32]),
    /// Zero-conditioned pass, then a pass conditioned on the delayed,
    /// detached first-pass estimate.
    Paris {
        weights: (f32, f32),
    },
}

/// Differentiable delay by `delay` samples of a `1 × L` signal.
pub fn shift_graph(g: &mut Graph, x: Var, delay: usize) -> Result<Var> {
    let kernel = g.constant(Tensor::new(vec![1, 1, 2], vec![1.0, 0.0])?);
    g.conv1d(x, kernel, None, ConvSpec::causal(2, delay))
}

/// Loss and parameter gradients of one example.
pub fn item_gradients(
    ckpt: &Checkpoint,
    ex: &Example,
    plan: Plan,
    cfg: &TrainConfig,
) -> Result<(f32, Gradients)> {
    let mut g = Graph::new();
    let mut p = Binder::new(ckpt);
    let weights = cfg.loss_weights();
    let loss = match plan {
        Plan::Static => {
            let v = forward_graph(
                &mut g,
                &mut p,
                &ex.mixture,
                &ex.enrollment,
                None,
                Mode::Static,
            )?;
            hybrid_loss_node(&mut g, v.output, &ex.target, weights)?
        }
        Plan::Dynamic(cond) => {
            let v = forward_graph(
                &mut g,
                &mut p,
                &ex.mixture,
                &ex.enrollment,
                Some(cond),
                Mode::Dynamic,
            )?;
            hybrid_loss_node(&mut g, v.output, &ex.target, weights)?
        }
        Plan::Paris { weights: (w1, w2) } => {
            let mix = g.constant(Tensor::row(ex.mixture.clone())?);
            let enroll = g.constant(Tensor::row(ex.enrollment.clone())?);
            let zero = g.constant(Tensor::zeros(vec![1, ex.mixture.len()]));
            let first = forward_vars(&mut g, &mut p, mix, enroll, Some(zero))?;
            let l1 = hybrid_loss_node(&mut g, first.output, &ex.target, weights)?;
            let est1 = g.detach(first.output);
            let cond = shift_graph(&mut g, est1, ckpt.config.sample_delay)?;
            let second = forward_vars(&mut g, &mut p, mix, enroll, Some(cond))?;
            let l2 = hybrid_loss_node(&mut g, second.output, &ex.target, weights)?;
            let a = g.scale(l1, w1);
            let b = g.scale(l2, w2);
            g.add(a, b)?
        }
    };
    let value = g.value(loss).data()[0];
    Ok((value, g.backward(loss)?))
}

/// Trims every signal to the network's output grid and checks lengths.
fn align(data: &Dataset, ckpt: &Checkpoint) -> Result<Vec<Example>> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let cfg = &ckpt.config;
    if data.sample_rate != cfg.sample_rate {
        return Err(Error::Config(format!(
            "dataset is {} Hz, model expects {} Hz",
            data.sample_rate, cfg.sample_rate
        )));
    }
    data.examples
        .iter()
        .map(|ex| {
            let n = ex.mixture.len().min(ex.target.len());
            let frames = cfg.frames(n).ok_or(Error::TooShort {
                len: n,
                frame: cfg.kernel,
            })?;
            if ex.enrollment.len() < cfg.kernel {
                return Err(Error::TooShort {
                    len: ex.enrollment.len(),
                    frame: cfg.kernel,
                });
            }
            let n = cfg.output_len(frames);
            Ok(Example {
                mixture: ex.mixture[..n].to_vec(),
                target: ex.target[..n].to_vec(),
                enrollment: ex.enrollment.clone(),
            })
        })
        .collect()
}

/// How held-out extraction is conditioned.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Inference {
    Static,
    /// Streaming with the engine's own delayed output as condition.
    SelfConditioned,
    /// Dynamic mode conditioned on the delayed true target.
    Oracle,
}

/// Mean SI-SDR improvement over `data`.
pub fn evaluate_si_sdri(
    ckpt: &Checkpoint,
    data: &Dataset,
    inference: Inference,
    exec: Execution,
) -> Result<f64> {
    let items = align(data, ckpt)?;
    let delay = ckpt.config.sample_delay;
    let scores = exec.map(&items, |ex| -> Result<f64> {
        let est = match inference {
            Inference::Static => forward(&ex.mixture, &ex.enrollment, None, Mode::Static, ckpt)?,
            Inference::Oracle => {
                let cond = make_ar_condition(&ex.target, delay);
                forward(
                    &ex.mixture,
                    &ex.enrollment,
                    Some(&cond),
                    Mode::Dynamic,
                    ckpt,
                )?
            }
            Inference::SelfConditioned => extract_streaming(
                ckpt,
                &ex.mixture,
                &ex.enrollment,
                StreamMode::SelfFeedback,
                None,
                ex.mixture.len(),
            )?,
        };
        Ok(si_snr_db(&est, &ex.target)? - si_snr_db(&ex.mixture, &ex.target)?)
    });
    let scores = scores.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Runs one epoch over `items` in a seeded order; returns the mean loss.
fn run_epoch(
    ckpt: &mut Checkpoint,
    adam: &mut Adam,
    items: &[Example],
    plans: &[Plan],
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(rng);
    let mut total = 0.0f64;
    for batch in order.chunks(cfg.batch_size) {
        let frozen: &Checkpoint = ckpt;
        let results = cfg
            .execution
            .map(batch, |&i| item_gradients(frozen, &items[i], plans[i], cfg));
        let mut grads = Gradients::default();
        for r in results {
            let (loss, g) = r?;
            total += loss as f64;
            grads.accumulate(&g);
        }
        grads.scale(1.0 / batch.len() as f32);
        adam.step(ckpt, &grads)?;
    }
    Ok(total / items.len() as f64)
}

fn prepare(baseline: &Checkpoint, cfg: &TrainConfig) -> Result<Checkpoint> {
    cfg.validate()?;
    let mut ckpt = baseline.clone();
    ckpt.config.sample_delay = cfg.sample_delay;
    ckpt.validate()?;
    match cfg.mode {
        TrainMode::Baseline => {
            ckpt.set_scope_trainable(Scope::Baseline, true);
            ckpt.set_scope_trainable(Scope::Dynamic, false);
        }
        TrainMode::DenseAr | TrainMode::DenseParis => {
            ckpt.set_scope_trainable(Scope::Baseline, !cfg.freeze_baseline);
            ckpt.set_scope_trainable(Scope::Dynamic, true);
        }
    }
    Ok(ckpt)
}

/// Trains the static network; dynamic tensors stay untouched.
pub fn train_baseline(
    train: &Dataset,
    held_out: &Dataset,
    cfg: &TrainConfig,
    init: &Checkpoint,
) -> Result<(Checkpoint, TrainRecord)> {
    let cfg = TrainConfig {
        mode: TrainMode::Baseline,
        ..cfg.clone()
    };
    let mut ckpt = prepare(init, &cfg)?;
    let items = align(train, &ckpt)?;
    let plans = vec![Plan::Static; items.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(cfg.lr);
    let mut record = TrainRecord::default();
    for epoch in 1..=cfg.epochs_per_iteration {
        let loss = run_epoch(&mut ckpt, &mut adam, &items, &plans, &cfg, &mut rng)?;
        let si_sdri = evaluate_si_sdri(&ckpt, held_out, Inference::Static, cfg.execution)?;
        log::info!("baseline epoch {epoch}: loss {loss:.3}, held-out SI-SDRi {si_sdri:.2} dB");
        record.rows.push(EpochRecord {
            iteration: 1,
            epoch,
            loss,
            si_sdri,
        });
    }
    Ok((ckpt, record))
}

/// Iterative autoregressive training of the dynamic branch. Iteration 1
/// conditions on the delayed target; each later iteration first regenerates
/// every training condition from the previous iteration's model.
pub fn train_ar(
    train: &Dataset,
    held_out: &Dataset,
    cfg: &TrainConfig,
    baseline: &Checkpoint,
) -> Result<(Checkpoint, TrainRecord)> {
    let cfg = TrainConfig {
        mode: TrainMode::DenseAr,
        ..cfg.clone()
    };
    let mut ckpt = prepare(baseline, &cfg)?;
    let items = align(train, &ckpt)?;
    let delay = cfg.sample_delay;
    let mut conditions: Vec<Vec<f32>> = items
        .iter()
        .map(|ex| make_ar_condition(&ex.target, delay))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(cfg.lr);
    let mut record = TrainRecord::default();
    let mut previous: Option<f64> = None;
    for iteration in 1..=cfg.iterations {
        if iteration > 1 {
            let model: &Checkpoint = &ckpt;
            let pairs: Vec<(&Example, &Vec<f32>)> = items.iter().zip(&conditions).collect();
            let outputs = cfg.execution.map(&pairs, |(ex, cond)| {
                forward(
                    &ex.mixture,
                    &ex.enrollment,
                    Some(cond),
                    Mode::Dynamic,
                    model,
                )
            });
            conditions = outputs
                .into_iter()
                .map(|o| o.map(|est| make_ar_condition(&est, delay)))
                .collect::<Result<_>>()?;
        }
        let plans: Vec<Plan> = conditions.iter().map(|c| Plan::Dynamic(c)).collect();
        let mut score = f64::NAN;
        for epoch in 1..=cfg.epochs_per_iteration {
            let loss = run_epoch(&mut ckpt, &mut adam, &items, &plans, &cfg, &mut rng)?;
            score = evaluate_si_sdri(&ckpt, held_out, Inference::SelfConditioned, cfg.execution)?;
            log::info!("AR iteration {iteration} epoch {epoch}: loss {loss:.3}, held-out SI-SDRi {score:.2} dB");
            record.rows.push(EpochRecord {
                iteration,
                epoch,
                loss,
                si_sdri: score,
            });
        }
        if let Some(prev) = previous {
            if score - prev < cfg.early_stop_db {
                log::info!("AR training stopped after iteration {iteration}");
                break;
            }
        }
        previous = Some(score);
    }
    Ok((ckpt, record))
}

/// Pseudo-autoregressive training: every step runs a zero-conditioned pass
/// and a pass conditioned on its detached, delayed output, and backpropagates
/// the weighted sum of both losses.
pub fn train_paris(
    train: &Dataset,
    held_out: &Dataset,
    cfg: &TrainConfig,
    baseline: &Checkpoint,
) -> Result<(Checkpoint, TrainRecord)> {
    let cfg = TrainConfig {
        mode: TrainMode::DenseParis,
        ..cfg.clone()
    };
    let mut ckpt = prepare(baseline, &cfg)?;
    let items = align(train, &ckpt)?;
    let plans = vec![
        Plan::Paris {
            weights: cfg.paris_pass_weights
        };
        items.len()
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(cfg.lr);
    let mut record = TrainRecord::default();
    for epoch in 1..=cfg.epochs_per_iteration {
        let loss = run_epoch(&mut ckpt, &mut adam, &items, &plans, &cfg, &mut rng)?;
        let si_sdri = evaluate_si_sdri(&ckpt, held_out, Inference::SelfConditioned, cfg.execution)?;
        log::info!("PARIS epoch {epoch}: loss {loss:.3}, held-out SI-SDRi {si_sdri:.2} dB");
        record.rows.push(EpochRecord {
            iteration: 1,
            epoch,
            loss,
            si_sdri,
        });
    }
    Ok((ckpt, record))
}

/// Dispatches on `cfg.mode`.
pub fn train(
    train_set: &Dataset,
    held_out: &Dataset,
    cfg: &TrainConfig,
    init: &Checkpoint,
) -> Result<(Checkpoint, TrainRecord)> {
    match cfg.mode {
        TrainMode::Baseline => train_baseline(train_set, held_out, cfg, init),
        TrainMode::DenseAr => train_ar(train_set, held_out, cfg, init),
        TrainMode::DenseParis => train_paris(train_set, held_out, cfg, init),
    }
}
