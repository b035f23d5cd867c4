//! Losses, optimizer, toy data and the baseline / AR / PARIS schedules.

mod data;
pub mod loss;
mod optim;
mod schedule;

pub use data::{toy_dataset, toy_utterance, Dataset, Example, ToySpec};
pub use loss::{hybrid_loss, si_snr_loss, snr_loss, LossWeights};
pub use optim::{optimizer_step, Adam};
pub use schedule::{
    evaluate_si_sdri, item_gradients, shift_graph, train, train_ar, train_baseline, train_paris,
    Inference, Plan,
};

use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;

/// `out[n] = source[n − delay]`, zero for `n < delay`; same length as
/// `source`.
pub fn make_ar_condition(source: &[f32], delay: usize) -> Vec<f32> {
    let mut out = vec![0.0; source.len()];
    if delay < source.len() {
        out[delay..].copy_from_slice(&source[..source.len() - delay]);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainMode {
    Baseline,
    DenseAr,
    DenseParis,
}

impl FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(TrainMode::Baseline),
            "dense-ar" => Ok(TrainMode::DenseAr),
            "dense-paris" => Ok(TrainMode::DenseParis),
            other => Err(Error::Config(format!("unknown training mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mode: TrainMode,
    /// AR iterations; baseline and PARIS training run a single stage.
    pub iterations: usize,
    pub epochs_per_iteration: usize,
    pub sample_delay: usize,
    pub lr: f32,
    pub batch_size: usize,
    pub snr_weight: f32,
    pub sisnr_weight: f32,
    pub paris_pass_weights: (f32, f32),
    pub seed: u64,
    pub freeze_baseline: bool,
    /// AR training stops once an iteration improves held-out SI-SDRi by
    /// less than this many dB.
    pub early_stop_db: f64,
    #[serde(skip)]
    pub execution: Execution,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: TrainMode::Baseline,
            iterations: 3,
            epochs_per_iteration: 50,
            sample_delay: 16,
            lr: 1e-3,
            batch_size: 8,
            snr_weight: 0.9,
            sisnr_weight: 0.1,
            paris_pass_weights: (0.5, 0.5),
            seed: 0,
            freeze_baseline: true,
            early_stop_db: 0.1,
            execution: Execution::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if (self.snr_weight + self.sisnr_weight - 1.0).abs() > 1e-6 {
            return Err(Error::Config("loss weights must sum to 1".into()));
        }
        if self.iterations == 0 || self.epochs_per_iteration == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "iterations, epochs and batch size must be positive".into(),
            ));
        }
        if self.lr.is_nan() || self.lr <= 0.0 {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        Ok(())
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            snr: self.snr_weight,
            si_snr: self.sisnr_weight,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub iteration: usize,
    pub epoch: usize,
    /// Mean training loss over the epoch's batches.
    pub loss: f64,
    /// Mean held-out SI-SDR improvement after the epoch.
    pub si_sdri: f64,
}

/// Per-epoch training log.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub rows: Vec<EpochRecord>,
}

impl TrainRecord {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "iteration,epoch,loss,si_sdri")?;
        for r in &self.rows {
            writeln!(w, "{},{},{},{}", r.iteration, r.epoch, r.loss, r.si_sdri)?;
        }
        Ok(())
    }

    pub fn iterations(&self) -> usize {
        self.rows.last().map_or(0, |r| r.iteration)
    }

    /// Held-out SI-SDRi after the last epoch of `iteration`.
    pub fn final_si_sdri(&self, iteration: usize) -> Option<f64> {
        self.rows
            .iter()
            .rev()
            .find(|r| r.iteration == iteration)
            .map(|r| r.si_sdri)
    }
}
