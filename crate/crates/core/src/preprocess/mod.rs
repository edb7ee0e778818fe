//! Signal conditioning ahead of tokenization, applied in a fixed order:
//! resample to 250 Hz, wavelet denoise, per-lead z-score.

mod wavelet;

use std::f64::consts::PI;

pub use wavelet::{coeff_len, dwt, dwt_step, idwt, idwt_step, WaveletBank, WaveletCoeffs};

use crate::data::EcgRecord;
use crate::error::{Error, Result};

pub const TARGET_RATE_HZ: u32 = 250;
pub const DENOISE_LEVELS: usize = 9;
/// Details zeroed by [`wavelet_denoise`], 1-based (`D1`, `D2`); the deepest
/// approximation is zeroed too.
pub const REMOVED_DETAILS: [usize; 2] = [1, 2];
pub const RESAMPLE_TAPS: usize = 31;
/// Cutoff in cycles per input sample, half the input Nyquist.
pub const RESAMPLE_CUTOFF: f64 = 0.25;
/// Leads whose population σ falls below this are treated as flat.
pub const FLAT_SIGMA: f64 = 1e-12;

/// Hamming-windowed sinc low-pass normalized to unit DC gain.
pub fn halfband_taps() -> Vec<f64> {
    let m = (RESAMPLE_TAPS - 1) as f64;
    let mut h: Vec<f64> = (0..RESAMPLE_TAPS)
        .map(|n| {
            let t = n as f64 - m / 2.0;
            let sinc = if t == 0.0 {
                2.0 * RESAMPLE_CUTOFF
            } else {
                (2.0 * PI * RESAMPLE_CUTOFF * t).sin() / (PI * t)
            };
            let window = 0.54 - 0.46 * (2.0 * PI * n as f64 / m).cos();
            sinc * window
        })
        .collect();
    let sum: f64 = h.iter().sum();
    h.iter_mut().for_each(|v| *v /= sum);
    h
}

/// Zero-phase low-pass then keep every second sample.
pub fn decimate_by_two(x: &[f64]) -> Vec<f64> {
    let h = halfband_taps();
    let half = (h.len() / 2) as isize;
    (0..x.len().div_ceil(2))
        .map(|k| {
            let centre = 2 * k as isize;
            h.iter()
                .enumerate()
                .map(|(j, w)| w * x[wavelet::symmetric_index(centre + j as isize - half, x.len())])
                .sum()
        })
        .collect()
}

/// Brings a 250 or 500 Hz record to 250 Hz.
pub fn resample_to_250(record: &EcgRecord) -> Result<EcgRecord> {
    match record.sample_rate_hz {
        TARGET_RATE_HZ => Ok(record.clone()),
        500 => {
            let samples: Vec<f64> = record.lead_iter().flat_map(decimate_by_two).collect();
            EcgRecord::new(record.leads(), samples, TARGET_RATE_HZ, record.label, record.id.clone())
        }
        other => Err(Error::UnsupportedRate(other)),
    }
}

/// 9-level db6 decomposition with `A9`, `D1` and `D2` zeroed before
/// reconstruction. Length is preserved.
pub fn wavelet_denoise(signal: &[f64]) -> Result<Vec<f64>> {
    let bank = WaveletBank::db6();
    let mut coeffs = dwt(signal, &bank, DENOISE_LEVELS)?;
    coeffs.approx.iter_mut().for_each(|v| *v = 0.0);
    for level in REMOVED_DETAILS {
        coeffs.details[level - 1].iter_mut().for_each(|v| *v = 0.0);
    }
    idwt(&coeffs, &bank)
}

/// A z-scored lead; `flat` is set when σ was too small to divide by, in
/// which case `values` are all zero.
#[derive(Clone, Debug, PartialEq)]
pub struct ZScore {
    pub values: Vec<f64>,
    pub flat: bool,
}

/// `(x − μ)/σ` with population σ.
pub fn zscore(signal: &[f64]) -> ZScore {
    let n = signal.len() as f64;
    let mean = signal.iter().sum::<f64>() / n;
    let sigma = (signal.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    if !(sigma >= FLAT_SIGMA) {
        return ZScore {
            values: vec![0.0; signal.len()],
            flat: true,
        };
    }
    ZScore {
        values: signal.iter().map(|v| (v - mean) / sigma).collect(),
        flat: false,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Preprocessed {
    pub record: EcgRecord,
    /// Indices of leads that were flat after denoising.
    pub flat_leads: Vec<usize>,
}

/// Full conditioning of one 12-lead record.
pub fn preprocess_record(record: &EcgRecord) -> Result<Preprocessed> {
    record.ensure_standard()?;
    let resampled = resample_to_250(record)?;
    let mut samples = Vec::with_capacity(resampled.samples().len());
    let mut flat_leads = Vec::new();
    for (i, lead) in resampled.lead_iter().enumerate() {
        let z = zscore(&wavelet_denoise(lead)?);
        if z.flat {
            flat_leads.push(i);
        }
        samples.extend(z.values);
    }
    Ok(Preprocessed {
        record: EcgRecord::new(resampled.leads(), samples, TARGET_RATE_HZ, record.label, record.id.clone())?,
        flat_leads,
    })
}
