//! End-to-end acceptance criteria. Each criterion prints one PASS/FAIL line;
//! the test fails if any criterion fails.

mod common;

use std::time::{Duration, Instant};

use common::{
    forward_grads, forward_loss, gradcheck, max_abs, micro_dynamic_ckpt, micro_example,
    rand_tensor, rand_tensor_off_zero, random_chunks, rel_err, rng, self_feedback_offline,
    speechlike, stream_with_chunks, uniform,
};
use dense_core::checkpoint::{Checkpoint, Scope};
use dense_core::codec::{self, CodecError};
use dense_core::config::ModelConfig;
use dense_core::metrics::{sdri, si_sdr, stoi};
use dense_core::model::{forward, Mode};
use dense_core::numerics::ConvSpec;
use dense_core::streaming::measure;
use dense_core::training::{
    evaluate_si_sdri, make_ar_condition, toy_dataset, train_ar, train_baseline, Inference,
    LossWeights, ToySpec, TrainConfig, TrainMode,
};
use dense_core::{Execution, StreamMode, StreamState, Tensor};
use rand::Rng;

type Outcome = std::result::Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    };
}

/// Default-config checkpoint with a random fusion layer, so dynamic mode
/// differs from static mode.
fn default_dynamic(seed: u64) -> Checkpoint {
    let mut ckpt = Checkpoint::init(ModelConfig::default(), seed).unwrap();
    let mut r = rng(seed ^ 0x5eed);
    for name in ["fuse.weight", "fuse.bias"] {
        let t = ckpt.tensor_mut(name).unwrap();
        let n = t.len();
        t.data_mut().copy_from_slice(&uniform(n, 0.2, &mut r));
    }
    ckpt
}

fn gradient_suite() -> Outcome {
    const H: f32 = 1e-3;
    let start = Instant::now();
    let mut worst_op = 0.0f64;
    for seed in 0..4u64 {
        let mut r = rng(1000 + seed);
        let c = r.gen_range(2..=6);
        let t = r.gen_range(4..=10);
        let k = r.gen_range(1..=4);
        let x = rand_tensor(&[c, t], &mut r);
        let xo = rand_tensor_off_zero(&[c, t], &mut r);
        let y = rand_tensor(&[c, t], &mut r);
        let w = rand_tensor(&[c, c, k], &mut r);
        let dw = rand_tensor(&[c, 1, k], &mut r);
        let b = rand_tensor(&[c], &mut r);
        let g1 = rand_tensor(&[c], &mut r);
        let col = rand_tensor(&[c, 1], &mut r);
        let wt = rand_tensor(&[c, 2, 4], &mut r);
        let reference = uniform(t, 1.0, &mut r);
        let est = rand_tensor(&[1, t], &mut r);
        let (rf1, rf2) = (reference.clone(), reference.clone());
        let checks = [
            (
                "conv1d causal",
                gradcheck(
                    &[x.clone(), w.clone(), b.clone()],
                    |g, v| g.conv1d(v[0], v[1], Some(v[2]), ConvSpec::causal(k, 2)),
                    H,
                    seed,
                ),
            ),
            (
                "conv1d depthwise",
                gradcheck(
                    &[x.clone(), dw.clone(), b.clone()],
                    |g, v| {
                        g.conv1d(
                            v[0],
                            v[1],
                            Some(v[2]),
                            ConvSpec::causal(k, 3).with_groups(c),
                        )
                    },
                    H,
                    seed,
                ),
            ),
            (
                "conv1d strided",
                gradcheck(
                    &[x.clone(), w.clone()],
                    |g, v| g.conv1d(v[0], v[1], None, ConvSpec::valid(2)),
                    H,
                    seed,
                ),
            ),
            (
                "conv_transpose1d",
                gradcheck(
                    &[x.clone(), wt.clone()],
                    |g, v| g.conv_transpose1d(v[0], v[1], 2),
                    H,
                    seed,
                ),
            ),
            (
                "cumulative norm",
                gradcheck(
                    &[x.clone(), g1.clone(), b.clone()],
                    |g, v| g.layer_norm(v[0], v[1], v[2], true),
                    H,
                    seed,
                ),
            ),
            (
                "global norm",
                gradcheck(
                    &[x.clone(), g1.clone(), b.clone()],
                    |g, v| g.layer_norm(v[0], v[1], v[2], false),
                    H,
                    seed,
                ),
            ),
            (
                "relu",
                gradcheck(std::slice::from_ref(&xo), |g, v| Ok(g.relu(v[0])), H, seed),
            ),
            (
                "prelu",
                gradcheck(
                    &[xo.clone(), g1.clone()],
                    |g, v| g.prelu(v[0], v[1]),
                    H,
                    seed,
                ),
            ),
            (
                "sigmoid",
                gradcheck(
                    std::slice::from_ref(&x),
                    |g, v| Ok(g.sigmoid(v[0])),
                    H,
                    seed,
                ),
            ),
            (
                "add",
                gradcheck(&[x.clone(), y.clone()], |g, v| g.add(v[0], v[1]), H, seed),
            ),
            (
                "mul",
                gradcheck(&[x.clone(), y.clone()], |g, v| g.mul(v[0], v[1]), H, seed),
            ),
            (
                "scale",
                gradcheck(
                    std::slice::from_ref(&x),
                    |g, v| Ok(g.scale(v[0], 0.7)),
                    H,
                    seed,
                ),
            ),
            (
                "sum",
                gradcheck(std::slice::from_ref(&x), |g, v| Ok(g.sum(v[0])), H, seed),
            ),
            (
                "repeat_frames",
                gradcheck(
                    std::slice::from_ref(&col),
                    |g, v| g.repeat_frames(v[0], t),
                    H,
                    seed,
                ),
            ),
            (
                "mean_frames",
                gradcheck(
                    std::slice::from_ref(&x),
                    |g, v| g.mean_frames(v[0]),
                    H,
                    seed,
                ),
            ),
            (
                "concat_rows",
                gradcheck(
                    &[x.clone(), y.clone()],
                    |g, v| g.concat_rows(v[0], v[1]),
                    H,
                    seed,
                ),
            ),
            (
                "snr_loss",
                gradcheck(
                    std::slice::from_ref(&est),
                    move |g, v| g.snr_loss(v[0], &rf1),
                    H,
                    seed,
                ),
            ),
            (
                "si_snr_loss",
                gradcheck(
                    std::slice::from_ref(&est),
                    move |g, v| g.si_snr_loss(v[0], &rf2),
                    H,
                    seed,
                ),
            ),
        ];
        for (name, err) in checks {
            ensure!(err <= 1e-3, "{name} (seed {seed}) rel err {err:.2e}");
            worst_op = worst_op.max(err);
        }
    }

    let mut worst_e2e = 0.0f64;
    for seed in 0..2u64 {
        let ckpt = micro_dynamic_ckpt(1100 + seed);
        let (mix, enroll, target) = micro_example(200, 1200 + seed);
        let cond = make_ar_condition(&target, ckpt.config.sample_delay);
        let w = LossWeights::default();
        let grads = forward_grads(&ckpt, &mix, &enroll, Some(&cond), &target, w);
        let mut r = rng(seed);
        let (mut analytic, mut numeric) = (Vec::new(), Vec::new());
        for name in ckpt.names().map(str::to_string).collect::<Vec<_>>() {
            let n = ckpt.tensor(&name).unwrap().len();
            for _ in 0..2 {
                let j = r.gen_range(0..n);
                let mut p = ckpt.clone();
                p.tensor_mut(&name).unwrap().data_mut()[j] += H;
                let mut m = ckpt.clone();
                m.tensor_mut(&name).unwrap().data_mut()[j] -= H;
                let lp = forward_loss(&p, &mix, &enroll, Some(&cond), &target, w);
                let lm = forward_loss(&m, &mix, &enroll, Some(&cond), &target, w);
                analytic.push(grads.get(&name).map_or(0.0, |g| g.data()[j] as f64));
                numeric.push((lp - lm) / (2.0 * H as f64));
            }
        }
        let err = rel_err(&analytic, &numeric);
        ensure!(err <= 1e-2, "end-to-end (seed {seed}) rel err {err:.2e}");
        worst_e2e = worst_e2e.max(err);
    }
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(60), "took {elapsed:?}");
    Ok(format!(
        "worst per-op rel err {worst_op:.1e}, end-to-end {worst_e2e:.1e}, {:.1}s",
        elapsed.as_secs_f64()
    ))
}

fn streaming_equivalence() -> Outcome {
    let ckpt = default_dynamic(2000);
    let mut r = rng(2001);
    let (mut worst_static, mut worst_dynamic) = (0.0f32, 0.0f32);
    for u in 0..20 {
        let len = r.gen_range(4000..=16000);
        let mix = speechlike(len, &mut r);
        let enroll = speechlike(8000, &mut r);
        let offline = forward(&mix, &enroll, None, Mode::Static, &ckpt).unwrap();
        for c in 0..5 {
            let chunks = match c {
                0 => vec![1],
                1 => vec![len],
                _ => random_chunks(16, 20 * c, &mut r),
            };
            let s = stream_with_chunks(&ckpt, &mix, &enroll, StreamMode::Static, &chunks);
            let err = max_abs(&s, &offline);
            ensure!(err <= 1e-5, "static utterance {u} chunking {c}: {err:.2e}");
            worst_static = worst_static.max(err);
            let d = stream_with_chunks(&ckpt, &mix, &enroll, StreamMode::SelfFeedback, &chunks);
            let fixed = self_feedback_offline(&ckpt, &mix, &enroll, &d);
            let err = max_abs(&d, &fixed);
            ensure!(err <= 1e-4, "dynamic utterance {u} chunking {c}: {err:.2e}");
            worst_dynamic = worst_dynamic.max(err);
        }
    }
    Ok(format!(
        "100 streams per mode, max abs err static {worst_static:.1e}, dynamic {worst_dynamic:.1e}"
    ))
}

fn causality() -> Outcome {
    let base = micro_dynamic_ckpt(3000);
    let mut r = rng(3001);
    let mut violations = 0u64;
    let mut reads = 0u64;
    for trial in 0..1000 {
        let mut ckpt = base.clone();
        ckpt.config.sample_delay = r.gen_range(16..=64);
        let delay = ckpt.config.sample_delay;
        let len = r.gen_range(64..=400);
        let mix = speechlike(len, &mut r);
        let enroll = speechlike(200, &mut r);
        let n = r.gen_range(0..len);
        let bound = if n < 16 { 0 } else { ((n - 16) / 8 + 1) * 8 };
        let mut moved = mix.clone();
        moved[n] += 0.25;
        let chunks = random_chunks(8, 48, &mut r);

        let (a, b) = if trial % 2 == 0 {
            let cond = speechlike(len, &mut r);
            let cond = make_ar_condition(&cond, delay);
            let mode = if trial % 4 == 0 {
                Mode::Static
            } else {
                Mode::Dynamic
            };
            let c = (mode == Mode::Dynamic).then_some(&cond[..]);
            (
                forward(&mix, &enroll, c, mode, &ckpt).unwrap(),
                forward(&moved, &enroll, c, mode, &ckpt).unwrap(),
            )
        } else {
            (
                stream_with_chunks(&ckpt, &mix, &enroll, StreamMode::SelfFeedback, &chunks),
                stream_with_chunks(&ckpt, &moved, &enroll, StreamMode::SelfFeedback, &chunks),
            )
        };
        if a[..bound] != b[..bound] {
            violations += 1;
        }

        let mut s = StreamState::new(&ckpt, &enroll, StreamMode::SelfFeedback).unwrap();
        let mut pos = 0;
        for &c in chunks.iter().cycle() {
            if pos >= len {
                break;
            }
            let c = c.min(len - pos);
            s.push(&mix[pos..pos + c]).unwrap();
            pos += c;
        }
        let audit = s.audit();
        reads += audit.reads;
        violations += audit.violations;
        if audit.min_age.is_some_and(|age| age < delay) {
            violations += 1;
        }
    }
    ensure!(violations == 0, "{violations} violations");
    Ok(format!(
        "1000 trials, {reads} condition reads, 0 violations"
    ))
}

fn residual_identity() -> Outcome {
    let mut ckpt = default_dynamic(4000);
    ckpt.zero_mask_learn().unwrap();
    let mut r = rng(4001);
    for i in 0..10 {
        let len = r.gen_range(800..=8000);
        let mix = speechlike(len, &mut r);
        let enroll = speechlike(4000, &mut r);
        let cond = make_ar_condition(&speechlike(len, &mut r), ckpt.config.sample_delay);
        let s = forward(&mix, &enroll, None, Mode::Static, &ckpt).unwrap();
        let d = forward(&mix, &enroll, Some(&cond), Mode::Dynamic, &ckpt).unwrap();
        ensure!(
            s.iter().zip(&d).all(|(a, b)| a.to_bits() == b.to_bits()) && s.len() == d.len(),
            "input {i} differs"
        );
    }
    Ok("10 inputs bit-identical".into())
}

fn metric_identities() -> Outcome {
    let mut r = rng(5000);
    let x = speechlike(16000, &mut r);
    let e = speechlike(16000, &mut r);
    let est: Vec<f32> = x.iter().zip(&e).map(|(a, b)| a + 0.3 * b).collect();
    let base = si_sdr(&est, &x).unwrap();
    let mut drift = 0.0f64;
    for alpha in [1e-3f32, 0.1, 0.5, 3.0, 1e3] {
        let scaled: Vec<f32> = est.iter().map(|v| alpha * v).collect();
        drift = drift.max((si_sdr(&scaled, &x).unwrap() - base).abs());
    }
    ensure!(drift <= 1e-6, "SI-SDR drift {drift:.2e} dB");
    let mix: Vec<f32> = x.iter().zip(&e).map(|(a, b)| a + b).collect();
    ensure!(sdri(&mix, &x, &mix).unwrap() == 0.0, "SDRi(mix) != 0");
    let hand = si_sdr(&[1.0, 1.0, -2.0], &[1.0, 0.0, -1.0]).unwrap();
    ensure!((hand - 4.771).abs() <= 1e-3, "hand SI-SDR {hand}");
    let s = stoi(&x, &x, 8000).unwrap();
    ensure!((s - 1.0).abs() <= 1e-6, "stoi(x, x) = {s}");
    Ok(format!(
        "SI-SDR drift {drift:.1e} dB, hand example {hand:.4} dB, stoi(x,x) {s:.7}"
    ))
}

struct Trained {
    baseline_in: Checkpoint,
    dense: Checkpoint,
    summary: String,
}

fn toy_training() -> (Outcome, Option<Trained>) {
    let start = Instant::now();
    let data = toy_dataset(&ToySpec::default(), 6000).unwrap();
    let (train, held) = data.split(40).unwrap();
    if train.len() < 200 {
        return (Err(format!("only {} training mixtures", train.len())), None);
    }
    let init = Checkpoint::init(ModelConfig::micro(), 6001).unwrap();
    let cfg = TrainConfig {
        epochs_per_iteration: 30,
        lr: 3e-3,
        seed: 6002,
        ..TrainConfig::default()
    };
    let (baseline, base_rec) = train_baseline(&train, &held, &cfg, &init).unwrap();
    let first = base_rec.rows.first().unwrap().loss;
    let last = base_rec.rows.last().unwrap().loss;
    let cut = (first - last) / first.abs();

    let ar = TrainConfig {
        mode: TrainMode::DenseAr,
        epochs_per_iteration: 10,
        iterations: 1,
        early_stop_db: f64::NEG_INFINITY,
        ..cfg
    };
    let (iter1, rec1) = train_ar(&train, &held, &ar, &baseline).unwrap();
    let exec = Execution::default();
    let oracle = evaluate_si_sdri(&iter1, &held, Inference::Oracle, exec).unwrap();
    let selfc = evaluate_si_sdri(&iter1, &held, Inference::SelfConditioned, exec).unwrap();
    let (dense, rec2) = train_ar(
        &train,
        &held,
        &TrainConfig {
            iterations: 2,
            ..ar
        },
        &baseline,
    )
    .unwrap();
    let it1 = rec1.final_si_sdri(1).unwrap();
    let it2 = rec2.final_si_sdri(2).unwrap();
    let elapsed = start.elapsed();

    let summary = format!(
        "loss {first:.2} -> {last:.2} (drop of {:.0}% of |epoch-1 loss|); oracle {oracle:.2} dB vs self {selfc:.2} dB; \
         AR iteration 1 {it1:.2} dB, iteration 2 {it2:.2} dB; {:.0}s",
        100.0 * cut,
        elapsed.as_secs_f64()
    );
    let mut failures = Vec::new();
    if cut < 0.5 {
        failures.push("(a) loss cut below 50%");
    }
    if oracle < selfc {
        failures.push("(b) oracle below self-conditioned");
    }
    if it2 < it1 - 0.5 {
        failures.push("(c) iteration 2 regressed");
    }
    if elapsed > Duration::from_secs(30 * 60) {
        failures.push("over 30 min");
    }
    let outcome = if failures.is_empty() {
        Ok(summary.clone())
    } else {
        Err(format!("{}: {summary}", failures.join(", ")))
    };
    (
        outcome,
        Some(Trained {
            baseline_in: baseline,
            dense,
            summary,
        }),
    )
}

fn tensor_bytes(ckpt: &Checkpoint, scope: Scope) -> Vec<u8> {
    let mut out = Vec::new();
    for name in ckpt.scope_names(scope) {
        out.extend_from_slice(name.as_bytes());
        for v in ckpt.tensor(&name).unwrap().data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn freeze_contract(trained: Option<&Trained>) -> Outcome {
    let t = trained.ok_or("toy training did not run")?;
    let before = tensor_bytes(&t.baseline_in, Scope::Baseline);
    let after = tensor_bytes(&t.dense, Scope::Baseline);
    let diff = before.iter().zip(&after).filter(|(a, b)| a != b).count()
        + before.len().abs_diff(after.len());
    ensure!(diff == 0, "{diff} baseline-scope bytes differ");
    ensure!(
        tensor_bytes(&t.baseline_in, Scope::Dynamic) != tensor_bytes(&t.dense, Scope::Dynamic),
        "dynamic scope did not train"
    );
    Ok(format!(
        "{} baseline-scope bytes identical after dense training",
        before.len()
    ))
}

fn latency() -> Outcome {
    let ckpt = default_dynamic(8000);
    let report = measure(&ckpt, 2.0).map_err(|e| e.to_string())?;
    ensure!(
        report.hop_latency_ms == 1.0,
        "hop {}",
        report.hop_latency_ms
    );
    ensure!(
        report.window_latency_ms == 2.0,
        "window {}",
        report.window_latency_ms
    );
    ensure!(report.rtf < 1.0, "RTF {}", report.rtf);
    Ok(format!(
        "hop {} ms, window {} ms, RTF {:.3}",
        report.hop_latency_ms, report.window_latency_ms, report.rtf
    ))
}

fn codec_contract() -> Outcome {
    let mut r = rng(9000);
    let mut ckpt = Checkpoint::empty(ModelConfig::default());
    for i in 0..100 {
        let ndim = r.gen_range(1..=3);
        let shape: Vec<usize> = (0..ndim).map(|_| r.gen_range(1..=6)).collect();
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| f32::from_bits(r.gen::<u32>() & 0xff7f_ffff))
            .collect();
        ckpt.insert(
            format!("t{i:03}"),
            Tensor::new(shape, data).unwrap(),
            r.gen(),
        );
    }
    let bytes = codec::encode(&ckpt);
    let back = codec::decode(&bytes).map_err(|e| e.to_string())?;
    ensure!(codec::encode(&back) == bytes, "re-encoding differs");
    for (name, e) in ckpt.iter() {
        let b = back.entry(name).map_err(|e| e.to_string())?;
        ensure!(b.trainable == e.trainable, "{name} flag");
        ensure!(
            b.tensor.shape() == e.tensor.shape()
                && b.tensor
                    .data()
                    .iter()
                    .zip(e.tensor.data())
                    .all(|(x, y)| x.to_bits() == y.to_bits()),
            "{name} not bit-exact"
        );
    }

    let cfg_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let first_dtype = 12 + cfg_len + 4 + 2 + "t000".len();
    let mut magic = bytes.clone();
    magic[..4].copy_from_slice(b"RIFF");
    let mut version = bytes.clone();
    version[4..8].copy_from_slice(&7u32.to_le_bytes());
    let mut dtype = bytes.clone();
    dtype[first_dtype] = 3;
    let mut trailing = bytes.clone();
    trailing.extend_from_slice(&[0, 0]);
    let truncated = &bytes[..bytes.len() - 1];

    let mut partial = Checkpoint::init(ModelConfig::micro(), 9001).unwrap();
    let full = codec::encode(&partial);
    partial = {
        let mut c = Checkpoint::empty(partial.config.clone());
        for (name, e) in partial
            .iter()
            .filter(|(n, _)| n.as_str() != "decoder.weight")
        {
            c.insert(name.clone(), e.tensor.clone(), e.trainable);
        }
        c
    };
    let missing = codec::check_layout(&codec::decode(&codec::encode(&partial)).unwrap());
    ensure!(
        codec::check_layout(&codec::decode(&full).unwrap()).is_ok(),
        "full layout rejected"
    );

    let errors = [
        codec::decode(&magic).err(),
        codec::decode(&version).err(),
        codec::decode(truncated).err(),
        codec::decode(&dtype).err(),
        codec::decode(&trailing).err(),
        missing.err(),
    ];
    let kinds: Vec<String> = errors
        .iter()
        .map(|e| match e {
            Some(CodecError::BadMagic) => "bad-magic".to_string(),
            Some(CodecError::UnsupportedVersion(7)) => "version".to_string(),
            Some(CodecError::Truncated(_)) => "truncated".to_string(),
            Some(CodecError::UnsupportedDtype { dtype: 3, .. }) => "dtype".to_string(),
            Some(CodecError::TrailingBytes(2)) => "trailing".to_string(),
            Some(CodecError::MissingTensor(n)) if n == "decoder.weight" => {
                "missing-tensor".to_string()
            }
            other => format!("unexpected {other:?}"),
        })
        .collect();
    let mut distinct = kinds.clone();
    distinct.sort();
    distinct.dedup();
    ensure!(
        distinct.len() == kinds.len() && kinds.iter().all(|k| !k.starts_with("unexpected")),
        "errors {kinds:?}"
    );
    Ok(format!(
        "100 tensors bit-exact; rejected: {}",
        kinds.join(", ")
    ))
}

/// Written straight to stderr so the lines survive the test harness's output
/// capture.
fn report(line: &str) {
    use std::io::Write;
    let _ = writeln!(std::io::stderr(), "{line}");
}

#[test]
fn acceptance() {
    let mut results: Vec<(&str, Outcome)> = vec![
        ("1 gradient suite", gradient_suite()),
        ("2 streaming equivalence", streaming_equivalence()),
        ("3 causality", causality()),
        ("4 residual identity", residual_identity()),
        ("5 metric identities", metric_identities()),
    ];
    let (toy, trained) = toy_training();
    if let Some(t) = &trained {
        report(&format!("toy training: {}", t.summary));
    }
    results.push(("6 toy training direction", toy));
    results.push(("7 freeze contract", freeze_contract(trained.as_ref())));
    results.push(("8 latency and RTF", latency()));
    results.push(("9 checkpoint codec", codec_contract()));

    let mut failed = 0;
    for (name, outcome) in &results {
        match outcome {
            Ok(detail) => report(&format!("criterion {name}: PASS ({detail})")),
            Err(why) => {
                failed += 1;
                report(&format!("criterion {name}: FAIL ({why})"));
            }
        }
    }
    assert_eq!(failed, 0, "{failed} acceptance criteria failed");
}
