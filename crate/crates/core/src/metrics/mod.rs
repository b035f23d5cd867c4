//! Extraction quality measures: SDR, SI-SDR, their improvements over the
//! mixture, and STOI.

mod resample;
mod sdr;
mod stoi;

pub use resample::resample;
pub use sdr::{sdr, si_sdr};
pub use stoi::{stoi, SUPPORTED_RATES};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::exec::Execution;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub sdr_db: f64,
    pub sdri_db: f64,
    pub si_sdr_db: f64,
    pub si_sdri_db: f64,
    pub stoi: f64,
}

/// SDR improvement of `est` over `mix`.
pub fn sdri(est: &[f32], reference: &[f32], mix: &[f32]) -> Result<f64> {
    Ok(sdr(est, reference)? - sdr(mix, reference)?)
}

pub fn si_sdri(est: &[f32], reference: &[f32], mix: &[f32]) -> Result<f64> {
    Ok(si_sdr(est, reference)? - si_sdr(mix, reference)?)
}

/// All metrics for one utterance. Signals are trimmed to the shortest.
pub fn evaluate(est: &[f32], reference: &[f32], mix: &[f32], fs: u32) -> Result<EvalResult> {
    let n = est.len().min(reference.len()).min(mix.len());
    let (est, reference, mix) = (&est[..n], &reference[..n], &mix[..n]);
    let sdr_db = sdr(est, reference)?;
    let si_sdr_db = si_sdr(est, reference)?;
    Ok(EvalResult {
        sdr_db,
        sdri_db: sdr_db - sdr(mix, reference)?,
        si_sdr_db,
        si_sdri_db: si_sdr_db - si_sdr(mix, reference)?,
        stoi: stoi(est, reference, fs)?,
    })
}

/// Mean and median of each field over a set of utterances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub mean: EvalResult,
    pub median: EvalResult,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

impl Summary {
    /// Returns `None` for an empty slice.
    pub fn of(results: &[EvalResult]) -> Option<Self> {
        if results.is_empty() {
            return None;
        }
        let field = |f: fn(&EvalResult) -> f64| results.iter().map(f).collect::<Vec<_>>();
        let mean = |v: Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
        let columns: [fn(&EvalResult) -> f64; 5] = [
            |r| r.sdr_db,
            |r| r.sdri_db,
            |r| r.si_sdr_db,
            |r| r.si_sdri_db,
            |r| r.stoi,
        ];
        let build = |agg: &dyn Fn(Vec<f64>) -> f64| {
            let v: Vec<f64> = columns.iter().map(|c| agg(field(*c))).collect();
            EvalResult {
                sdr_db: v[0],
                sdri_db: v[1],
                si_sdr_db: v[2],
                si_sdri_db: v[3],
                stoi: v[4],
            }
        };
        Some(Summary {
            count: results.len(),
            mean: build(&mean),
            median: build(&median),
        })
    }
}

/// One utterance to score: `(estimate, reference, mixture)`.
pub type Triple = (Vec<f32>, Vec<f32>, Vec<f32>);

/// Scores every triple, in input order.
pub fn evaluate_all(items: &[Triple], fs: u32, exec: Execution) -> Result<Vec<EvalResult>> {
    exec.map(items, |(e, r, m)| evaluate(e, r, m, fs))
        .into_iter()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(len: usize, f: f32, seed: u32) -> Vec<f32> {
        (0..len)
            .map(|n| {
                let t = n as f32 / 8000.0;
                (2.0 * std::f32::consts::PI * f * t).sin()
                    * (1.0 + 0.5 * (6.0 * t + seed as f32).sin())
            })
            .collect()
    }

    #[test]
    fn improvement_over_itself_is_zero() {
        let r = tone(8000, 440.0, 0);
        let m: Vec<f32> = r
            .iter()
            .zip(tone(8000, 910.0, 1))
            .map(|(a, b)| a + b)
            .collect();
        let res = evaluate(&m, &r, &m, 8000).unwrap();
        assert_eq!(res.sdri_db, 0.0);
        assert_eq!(res.si_sdri_db, 0.0);
        let res = evaluate(&r, &r, &m, 8000).unwrap();
        assert_eq!(res.sdri_db, 60.0 - sdr(&m, &r).unwrap());
        assert!((res.stoi - 1.0).abs() < 1e-6);
    }

    #[test]
    fn summary_mean_and_median() {
        let mk = |v: f64| EvalResult {
            sdr_db: v,
            sdri_db: v,
            si_sdr_db: v,
            si_sdri_db: v,
            stoi: v,
        };
        let s = Summary::of(&[mk(1.0), mk(2.0), mk(9.0)]).unwrap();
        assert_eq!(s.count, 3);
        assert_eq!(s.mean.sdr_db, 4.0);
        assert_eq!(s.median.stoi, 2.0);
        let s = Summary::of(&[mk(1.0), mk(2.0)]).unwrap();
        assert_eq!(s.median.si_sdri_db, 1.5);
        assert!(Summary::of(&[]).is_none());
    }
}
