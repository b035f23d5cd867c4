use crate::error::Result;
use crate::training::loss;

/// `10·log10(‖ref‖² / ‖ref − est‖²)` in dB, clamped to ±60. Plain energy
/// ratio without a distortion-filter projection.
pub fn sdr(est: &[f32], reference: &[f32]) -> Result<f64> {
    loss::snr_db(est, reference)
}

/// Scale-invariant SDR in dB, clamped to ±60.
pub fn si_sdr(est: &[f32], reference: &[f32]) -> Result<f64> {
    loss::si_snr_db(est, reference)
}
