//! Signal-level ratios in dB and the losses built from them.
//!
//! Ratios are evaluated in `f64` and clamped to ±[`CLAMP_DB`]; the gradient
//! is zero wherever the clamp is active.

use crate::error::{Error, Result};
use crate::numerics::{Graph, Var};

pub const CLAMP_DB: f64 = 60.0;
/// Added to noise energies so that a perfect estimate stays finite. SI-SNR
/// scales it by the estimate's energy.
pub const EPS_NUM: f64 = 1e-8;

const DB_PER_NEPER: f64 = 10.0 / std::f64::consts::LN_10;

fn check_len(est: &[f32], reference: &[f32]) -> Result<()> {
    if est.len() != reference.len() || est.is_empty() {
        return Err(crate::error::shape_err(
            "ratio",
            format!(
                "estimate has {} samples, reference {}",
                est.len(),
                reference.len()
            ),
        ));
    }
    Ok(())
}

fn clamp_db(db: f64) -> (f64, bool) {
    if db.is_nan() || db <= -CLAMP_DB {
        (-CLAMP_DB, true)
    } else if db >= CLAMP_DB {
        (CLAMP_DB, true)
    } else {
        (db, false)
    }
}

/// `10·log10(‖ref‖² / (‖ref − est‖² + ε))` and its gradient w.r.t. `est`.
pub fn snr_db_with_grad(est: &[f32], reference: &[f32]) -> Result<(f64, Vec<f32>)> {
    check_len(est, reference)?;
    let power: f64 = reference.iter().map(|&r| (r as f64) * (r as f64)).sum();
    if power == 0.0 {
        return Err(Error::ZeroReference);
    }
    let noise: f64 = est
        .iter()
        .zip(reference)
        .map(|(&e, &r)| {
            let d = r as f64 - e as f64;
            d * d
        })
        .sum();
    let (db, clamped) = clamp_db(10.0 * (power / (noise + EPS_NUM)).log10());
    let grad = if clamped {
        vec![0.0; est.len()]
    } else {
        let k = -2.0 * DB_PER_NEPER / (noise + EPS_NUM);
        est.iter()
            .zip(reference)
            .map(|(&e, &r)| (k * (e as f64 - r as f64)) as f32)
            .collect()
    };
    Ok((db, grad))
}

pub fn snr_db(est: &[f32], reference: &[f32]) -> Result<f64> {
    snr_db_with_grad(est, reference).map(|(v, _)| v)
}

fn centered(x: &[f32]) -> Vec<f64> {
    let mean = x.iter().map(|&v| v as f64).sum::<f64>() / x.len() as f64;
    x.iter().map(|&v| v as f64 - mean).collect()
}

/// Scale-invariant SNR in dB and its gradient w.r.t. `est`. Both signals are
/// zero-meaned; the target component is the projection of the estimate onto
/// the reference.
pub fn si_snr_db_with_grad(est: &[f32], reference: &[f32]) -> Result<(f64, Vec<f32>)> {
    check_len(est, reference)?;
    let e = centered(est);
    let r = centered(reference);
    let r_energy: f64 = r.iter().map(|v| v * v).sum();
    let raw_energy: f64 = reference.iter().map(|&v| (v as f64) * (v as f64)).sum();
    if r_energy <= 1e-12 * raw_energy || r_energy == 0.0 {
        return Err(Error::ConstantReference);
    }
    let dot: f64 = e.iter().zip(&r).map(|(a, b)| a * b).sum();
    let alpha = dot / r_energy;
    let target: Vec<f64> = r.iter().map(|v| alpha * v).collect();
    let noise: Vec<f64> = e.iter().zip(&target).map(|(a, s)| a - s).collect();
    let s_energy: f64 = target.iter().map(|v| v * v).sum();
    let n_energy: f64 = noise.iter().map(|v| v * v).sum();
    // ε is taken relative to the estimate's energy so the ratio stays
    // exactly invariant to rescaling the estimate.
    let denom = (1.0 + EPS_NUM) * n_energy + EPS_NUM * s_energy;
    let ratio = s_energy / denom;
    let (db, clamped) = if ratio > 0.0 && ratio.is_finite() {
        clamp_db(10.0 * ratio.log10())
    } else if ratio > 0.0 {
        (CLAMP_DB, true)
    } else {
        (-CLAMP_DB, true)
    };
    if clamped {
        return Ok((db, vec![0.0; est.len()]));
    }
    let mut g: Vec<f64> = target
        .iter()
        .zip(&noise)
        .map(|(s, n)| {
            DB_PER_NEPER
                * (2.0 * s / s_energy - (2.0 * (1.0 + EPS_NUM) * n + 2.0 * EPS_NUM * s) / denom)
        })
        .collect();
    let mean = g.iter().sum::<f64>() / g.len() as f64;
    g.iter_mut().for_each(|v| *v -= mean);
    Ok((db, g.into_iter().map(|v| v as f32).collect()))
}

pub fn si_snr_db(est: &[f32], reference: &[f32]) -> Result<f64> {
    si_snr_db_with_grad(est, reference).map(|(v, _)| v)
}

/// Negative SNR in dB, clamped to ±60.
pub fn snr_loss(est: &[f32], reference: &[f32]) -> Result<f32> {
    Ok(-snr_db(est, reference)? as f32)
}

/// Negative SI-SNR in dB, clamped to ±60.
pub fn si_snr_loss(est: &[f32], reference: &[f32]) -> Result<f32> {
    Ok(-si_snr_db(est, reference)? as f32)
}

/// Weights of the SNR / SI-SNR mixture.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub snr: f32,
    pub si_snr: f32,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            snr: 0.9,
            si_snr: 0.1,
        }
    }
}

pub fn hybrid_loss(est: &[f32], reference: &[f32], weights: LossWeights) -> Result<f32> {
    let mut total = 0.0f32;
    if weights.snr != 0.0 {
        total += weights.snr * snr_loss(est, reference)?;
    }
    if weights.si_snr != 0.0 {
        total += weights.si_snr * si_snr_loss(est, reference)?;
    }
    Ok(total)
}

/// Records the hybrid loss of `est` against a constant reference on `g`.
pub fn hybrid_loss_node(
    g: &mut Graph,
    est: Var,
    reference: &[f32],
    weights: LossWeights,
) -> Result<Var> {
    let snr = g.snr_loss(est, reference)?;
    let si = g.si_snr_loss(est, reference)?;
    let a = g.scale(snr, weights.snr);
    let b = g.scale(si, weights.si_snr);
    g.add(a, b)
}
