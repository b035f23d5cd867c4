use std::io::Write;
use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use dense_core::audio::{wav_read, wav_write, Encoding, WavFile};
use dense_core::checkpoint::{Checkpoint, Scope};
use dense_core::codec;
use dense_core::config::ModelConfig;
use dense_core::manifest::{Manifest, Record};
use dense_core::metrics::{evaluate, evaluate_all, Summary, Triple};
use dense_core::mixing::synthesize_mixture;
use dense_core::model::{dump_embeddings, forward, Mode};
use dense_core::streaming::{extract_streaming, measure, LatencyReport};
use dense_core::training::{
    evaluate_si_sdri, make_ar_condition, toy_dataset, train, Dataset, Example, Inference, ToySpec,
    TrainConfig, TrainMode,
};
use dense_core::{Execution, StreamMode, StreamState};
use serde_json::json;

use crate::{
    AblateArgs, BenchArgs, Cli, Command, DumpArgs, EvalArgs, ExtractArgs, ExtractMode, InspectArgs,
    MixArgs, StreamArgs, ToyArgs, TrainArgs,
};

pub fn run(cli: Cli) -> Result<()> {
    let exec = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    };
    match cli.command {
        Command::Mix(a) => mix(a),
        Command::Train(a) => train_cmd(a, exec),
        Command::Extract(a) => extract(a),
        Command::Stream(a) => stream(a),
        Command::Eval(a) => eval(a, exec),
        Command::Inspect(a) => inspect(a),
        Command::Bench(a) => bench(a),
        Command::AblateDelay(a) => ablate(a, exec),
        Command::DumpEmb(a) => dump(a),
        Command::Toy(a) => toy(a),
    }
}

fn print_json(v: &serde_json::Value) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, v)?;
    writeln!(out)?;
    Ok(())
}

fn read(path: &Path) -> Result<WavFile> {
    wav_read(path).with_context(|| format!("reading {}", path.display()))
}

fn load_ckpt(path: &Path) -> Result<Checkpoint> {
    codec::load(path).with_context(|| format!("loading {}", path.display()))
}

fn model_config(spec: &str) -> Result<ModelConfig> {
    let cfg = match spec {
        "default" => ModelConfig::default(),
        "micro" => ModelConfig::micro(),
        path => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {path}"))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {path}"))?
        }
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Reads the mixture and enrollment, checking both match the model's rate.
fn inputs(ckpt: &Checkpoint, mixture: &Path, enroll: &Path) -> Result<(Vec<f32>, Vec<f32>)> {
    let m = read(mixture)?;
    let e = read(enroll)?;
    let fs = ckpt.config.sample_rate;
    for (w, p) in [(&m, mixture), (&e, enroll)] {
        if w.sample_rate != fs {
            bail!(
                "{} is {} Hz, the model expects {fs} Hz",
                p.display(),
                w.sample_rate
            );
        }
    }
    Ok((m.samples, e.samples))
}

/// Delayed clean-target condition, padded or cropped to `len`.
fn oracle_condition(path: &Path, len: usize, delay: usize) -> Result<Vec<f32>> {
    let mut target = read(path)?.samples;
    target.resize(len, 0.0);
    Ok(make_ar_condition(&target, delay))
}

fn mix(a: MixArgs) -> Result<()> {
    let t = read(&a.target)?;
    let i = read(&a.interf)?;
    let n = a.noise.as_deref().map(read).transpose()?;
    for w in std::iter::once(&i).chain(n.as_ref()) {
        if w.sample_rate != t.sample_rate {
            bail!(
                "sample rates differ: {} vs {} Hz",
                t.sample_rate,
                w.sample_rate
            );
        }
    }
    let m = synthesize_mixture(
        &t.samples,
        &i.samples,
        n.as_ref().map(|w| &w.samples[..]),
        a.sir,
        a.snr,
        a.seed,
    )?;
    wav_write(
        &a.out,
        &WavFile::new(t.sample_rate, m.mixture.clone()),
        Encoding::Float32,
    )?;
    if let Some(p) = &a.target_out {
        wav_write(
            p,
            &WavFile::new(t.sample_rate, m.target.clone()),
            Encoding::Float32,
        )?;
    }
    print_json(&json!({
        "samples": m.mixture.len(),
        "sample_rate": t.sample_rate,
        "interferer_gain": m.gains.interferer,
        "noise_gain": m.gains.noise,
    }))
}

fn dataset(manifest: &Path) -> Result<Dataset> {
    let m = Manifest::read(manifest).with_context(|| format!("reading {}", manifest.display()))?;
    let utts = m.load()?;
    let Some(fs) = utts.first().map(|u| u.sample_rate) else {
        bail!("manifest {} is empty", manifest.display());
    };
    let examples = utts
        .into_iter()
        .map(|u| Example {
            mixture: u.mixture,
            target: u.target,
            enrollment: u.enrollment,
        })
        .collect();
    Ok(Dataset::new(fs, examples))
}

fn split(data: Dataset, held_out: Option<usize>) -> Result<(Dataset, Dataset)> {
    let n = held_out.unwrap_or((data.len() / 10).max(1));
    if n >= data.len() {
        bail!(
            "held-out split of {n} leaves no training data ({} utterances)",
            data.len()
        );
    }
    Ok(data.split(n)?)
}

fn train_cmd(a: TrainArgs, exec: Execution) -> Result<()> {
    let mode = TrainMode::from(a.mode);
    let init = match (&a.init_ckpt, mode) {
        (Some(p), _) => load_ckpt(p)?,
        (None, TrainMode::Baseline) => Checkpoint::init(model_config(&a.config)?, a.seed)?,
        (None, _) => bail!("dense training needs a trained baseline (--init-ckpt)"),
    };
    let cfg = TrainConfig {
        mode,
        iterations: a.iters,
        epochs_per_iteration: a.epochs,
        sample_delay: a.delay,
        lr: a.lr,
        batch_size: a.batch,
        seed: a.seed,
        freeze_baseline: !a.no_freeze,
        execution: exec,
        ..TrainConfig::default()
    };
    cfg.validate()?;
    let (train_set, held) = split(dataset(&a.manifest)?, a.held_out)?;
    log::info!(
        "training on {} utterances, {} held out",
        train_set.len(),
        held.len()
    );
    let (ckpt, record) = train(&train_set, &held, &cfg, &init)?;
    codec::save(&ckpt, &a.out_ckpt)?;
    if let Some(p) = &a.record {
        let f = std::fs::File::create(p).with_context(|| format!("creating {}", p.display()))?;
        record.write_csv(std::io::BufWriter::new(f))?;
    }
    let last = record.rows.last();
    print_json(&json!({
        "mode": mode,
        "epochs_run": record.rows.len(),
        "iterations_run": record.iterations(),
        "final_loss": last.map(|r| r.loss),
        "final_si_sdri": last.map(|r| r.si_sdri),
        "checkpoint": a.out_ckpt,
    }))
}

fn extract(a: ExtractArgs) -> Result<()> {
    let ckpt = load_ckpt(&a.ckpt)?;
    let (mix, enroll) = inputs(&ckpt, &a.mixture, &a.enroll)?;
    let out = match (a.mode, &a.condition) {
        (ExtractMode::Static, Some(_)) => bail!("--condition only applies to --mode dynamic"),
        (ExtractMode::Static, None) => forward(&mix, &enroll, None, Mode::Static, &ckpt)?,
        (ExtractMode::Dynamic, Some(p)) => {
            let cond = oracle_condition(p, mix.len(), ckpt.config.sample_delay)?;
            forward(&mix, &enroll, Some(&cond), Mode::Dynamic, &ckpt)?
        }
        (ExtractMode::Dynamic, None) => extract_streaming(
            &ckpt,
            &mix,
            &enroll,
            StreamMode::SelfFeedback,
            None,
            ckpt.config.stride,
        )?,
    };
    wav_write(
        &a.out,
        &WavFile::new(ckpt.config.sample_rate, out.clone()),
        Encoding::Float32,
    )?;
    print_json(&json!({ "samples": out.len(), "out": a.out }))
}

fn stream(a: StreamArgs) -> Result<()> {
    if a.chunk == 0 {
        bail!("--chunk must be positive");
    }
    let ckpt = load_ckpt(&a.ckpt)?;
    let (mix, enroll) = inputs(&ckpt, &a.mixture, &a.enroll)?;
    let mode = match a.mode {
        ExtractMode::Static => StreamMode::Static,
        ExtractMode::Dynamic => StreamMode::SelfFeedback,
    };
    let start = Instant::now();
    let mut state = StreamState::new(&ckpt, &enroll, mode)?;
    let mut out = Vec::with_capacity(mix.len());
    for chunk in mix.chunks(a.chunk) {
        state.push_into(chunk, &mut out)?;
    }
    out.extend(state.flush()?);
    let elapsed = start.elapsed().as_secs_f64();
    let fs = ckpt.config.sample_rate as f64;
    let (hop, window) = LatencyReport::analytic(&ckpt.config);
    let report = LatencyReport {
        hop_latency_ms: hop,
        window_latency_ms: window,
        rtf: elapsed / (mix.len() as f64 / fs),
    };
    if let Some(p) = &a.out {
        wav_write(
            p,
            &WavFile::new(ckpt.config.sample_rate, out.clone()),
            Encoding::Float32,
        )?;
    }
    let v = json!({
        "hop_latency_ms": report.hop_latency_ms,
        "window_latency_ms": report.window_latency_ms,
        "rtf": report.rtf,
        "chunk": a.chunk,
        "samples": out.len(),
        "frames": state.frames_processed(),
    });
    if let Some(p) = &a.report {
        std::fs::write(p, serde_json::to_string_pretty(&v)?)?;
    }
    print_json(&v)
}

fn eval(a: EvalArgs, exec: Execution) -> Result<()> {
    if let Some(m) = &a.manifest {
        let manifest = Manifest::read(m).with_context(|| format!("reading {}", m.display()))?;
        let utts = manifest.load()?;
        let Some(fs) = utts.first().map(|u| u.sample_rate) else {
            bail!("manifest {} is empty", m.display());
        };
        let items = utts
            .into_iter()
            .enumerate()
            .map(|(i, u)| match u.estimate {
                Some(e) => Ok((e, u.target, u.mixture)),
                None => bail!("record {} has no estimate", i + 1),
            })
            .collect::<Result<Vec<Triple>>>()?;
        let results = evaluate_all(&items, fs, exec)?;
        let summary = Summary::of(&results).expect("non-empty manifest");
        return print_json(&json!({
            "count": summary.count,
            "mean": summary.mean,
            "median": summary.median,
            "items": results,
        }));
    }
    let (Some(e), Some(r), Some(m)) = (&a.est, &a.reference, &a.mix) else {
        bail!("--est, --ref and --mix are all required without --manifest");
    };
    let (e, r, m) = (read(e)?, read(r)?, read(m)?);
    if e.sample_rate != r.sample_rate || m.sample_rate != r.sample_rate {
        bail!("estimate, reference and mixture must share one sample rate");
    }
    let res = evaluate(&e.samples, &r.samples, &m.samples, r.sample_rate)?;
    print_json(&serde_json::to_value(res)?)
}

fn inspect(a: InspectArgs) -> Result<()> {
    let ckpt = load_ckpt(&a.ckpt)?;
    let count = |scope: Scope| -> usize {
        ckpt.scope_names(scope)
            .iter()
            .map(|n| ckpt.tensor(n).map_or(0, |t| t.len()))
            .sum()
    };
    let tensors: Vec<_> = ckpt
        .iter()
        .map(|(name, e)| {
            json!({
                "name": name,
                "shape": e.tensor.shape(),
                "trainable": e.trainable,
                "scope": match Scope::of(name) {
                    Scope::Baseline => "baseline",
                    Scope::Dynamic => "dynamic",
                },
            })
        })
        .collect();
    let (hop, window) = LatencyReport::analytic(&ckpt.config);
    print_json(&json!({
        "config": ckpt.config,
        "parameters": ckpt.parameter_count(),
        "baseline_parameters": count(Scope::Baseline),
        "dynamic_parameters": count(Scope::Dynamic),
        "hop_latency_ms": hop,
        "window_latency_ms": window,
        "tensors": tensors,
    }))
}

fn bench(a: BenchArgs) -> Result<()> {
    let ckpt = match &a.ckpt {
        Some(p) => load_ckpt(p)?,
        None => Checkpoint::init(model_config(&a.config)?, 0)?,
    };
    let report = measure(&ckpt, a.duration)?;
    print_json(&json!({
        "hop_latency_ms": report.hop_latency_ms,
        "window_latency_ms": report.window_latency_ms,
        "rtf": report.rtf,
        "duration_s": a.duration,
        "parameters": ckpt.parameter_count(),
    }))
}

fn ablate(a: AblateArgs, exec: Execution) -> Result<()> {
    let mode = TrainMode::from(a.mode);
    if mode == TrainMode::Baseline {
        bail!("the delay sweep trains a dense mode");
    }
    let baseline = load_ckpt(&a.init_ckpt)?;
    let (train_set, held) = split(dataset(&a.manifest)?, a.held_out)?;
    let mut rows = Vec::with_capacity(a.delays.len());
    for &delay in &a.delays {
        let cfg = TrainConfig {
            mode,
            iterations: a.iters,
            epochs_per_iteration: a.epochs,
            sample_delay: delay,
            lr: a.lr,
            batch_size: a.batch,
            seed: a.seed,
            execution: exec,
            ..TrainConfig::default()
        };
        cfg.validate()?;
        let (ckpt, _) = train(&train_set, &held, &cfg, &baseline)?;
        let score = evaluate_si_sdri(&ckpt, &held, Inference::SelfConditioned, exec)?;
        log::info!("delay {delay}: held-out SI-SDRi {score:.2} dB");
        rows.push((delay, score));
    }
    let mut out = std::io::stdout().lock();
    writeln!(out, "delay,si_sdri")?;
    for (d, s) in rows {
        writeln!(out, "{d},{s}")?;
    }
    Ok(())
}

fn dump(a: DumpArgs) -> Result<()> {
    let ckpt = load_ckpt(&a.ckpt)?;
    let (mix, enroll) = inputs(&ckpt, &a.mixture, &a.enroll)?;
    let delay = ckpt.config.sample_delay;
    let cond = match &a.condition {
        Some(p) => oracle_condition(p, mix.len(), delay)?,
        None => {
            let mut own = extract_streaming(
                &ckpt,
                &mix,
                &enroll,
                StreamMode::SelfFeedback,
                None,
                ckpt.config.stride,
            )?;
            own.resize(mix.len(), 0.0);
            make_ar_condition(&own, delay)
        }
    };
    let table = dump_embeddings(&mix, &enroll, &cond, &ckpt, None)?;
    match &a.out {
        Some(p) => {
            let f =
                std::fs::File::create(p).with_context(|| format!("creating {}", p.display()))?;
            table.write_csv(std::io::BufWriter::new(f))?;
            print_json(
                &json!({ "frames": table.frames.frames(), "dim": table.frames.dim(), "out": p }),
            )
        }
        None => Ok(table.write_csv(std::io::stdout().lock())?),
    }
}

fn toy(a: ToyArgs) -> Result<()> {
    let spec = ToySpec {
        count: a.count,
        length: a.length,
        enrollment_length: a.length,
        ..ToySpec::default()
    };
    let data = toy_dataset(&spec, a.seed)?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let mut records = Vec::with_capacity(data.len());
    for (i, ex) in data.examples.iter().enumerate() {
        let name = |kind: &str| format!("{i:04}_{kind}.wav");
        for (kind, samples) in [
            ("mix", &ex.mixture),
            ("target", &ex.target),
            ("enroll", &ex.enrollment),
        ] {
            let w = WavFile::new(data.sample_rate, samples.clone());
            wav_write(a.out.join(name(kind)), &w, Encoding::Float32)?;
        }
        records.push(Record {
            mixture: name("mix").into(),
            target: name("target").into(),
            enrollment: name("enroll").into(),
            noise: None,
            estimate: None,
        });
    }
    let manifest = a.out.join("manifest.jsonl");
    Manifest::new(records, &a.out).write(&manifest)?;
    print_json(&json!({
        "utterances": data.len(),
        "sample_rate": data.sample_rate,
        "manifest": manifest,
    }))
}
