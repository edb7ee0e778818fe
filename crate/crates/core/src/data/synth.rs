//! Seeded 12-lead surrogate ECGs whose classes differ in rhythm and beat
//! morphology.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::record::{EcgRecord, STANDARD_LEADS};
use crate::error::{Error, Result};

pub const MIN_CLASSES: usize = 2;
pub const MAX_CLASSES: usize = 8;
pub const BASE_RATES_BPM: [f64; 4] = [50.0, 75.0, 120.0, 95.0];
pub const RATE_JITTER_BPM: f64 = 3.0;
pub const NOISE_SIGMA: f64 = 0.05;
pub const DRIFT_HZ: f64 = 0.2;
pub const DRIFT_AMPLITUDE: f64 = 0.3;
pub const MAINS_HZ: f64 = 50.0;
pub const MAINS_AMPLITUDE: f64 = 0.1;

/// Gaussian bump `amp·exp(−(t − center)²/(2σ²))`, times in seconds
/// relative to the R peak.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Bump {
    amp: f64,
    center: f64,
    sigma: f64,
}

/// Beat template and rhythm of one class.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassProfile {
    pub rate_bpm: f64,
    pub has_p_wave: bool,
    /// Multiplier on Q, R and S widths.
    pub qrs_widening: f64,
    pub t_amplitude: f64,
}

impl ClassProfile {
    /// Classes cycle through the four base rates; past the first four the
    /// QRS is widened so every (rate, QRS width) pair stays unique.
    pub fn for_class(c: usize) -> Self {
        let wide = c == 3 || (4..7).contains(&c);
        Self {
            rate_bpm: BASE_RATES_BPM[c % 4],
            has_p_wave: c != 2,
            qrs_widening: if wide { 2.0 } else { 1.0 },
            t_amplitude: 0.3 + 0.05 * (c % 3) as f64,
        }
    }

    fn bumps(&self, rr: f64) -> Vec<Bump> {
        let w = self.qrs_widening;
        let mut out = vec![
            Bump { amp: -0.12, center: -0.025 * w, sigma: 0.008 * w },
            Bump { amp: 1.0, center: 0.0, sigma: 0.01 * w },
            Bump { amp: -0.25, center: 0.025 * w, sigma: 0.008 * w },
            Bump { amp: self.t_amplitude, center: 0.3 * rr.sqrt(), sigma: 0.04 },
        ];
        if self.has_p_wave {
            out.push(Bump { amp: 0.15, center: -0.2, sigma: 0.025 });
        }
        out
    }
}

/// Generates `per_class` records of each of `class_count` classes, class by
/// class. Samples are rounded to `f32` so files round-trip exactly.
pub fn generate_synthetic(
    class_count: usize,
    per_class: usize,
    length: usize,
    rate_hz: u32,
    seed: u64,
) -> Result<Vec<EcgRecord>> {
    if !(MIN_CLASSES..=MAX_CLASSES).contains(&class_count) {
        return Err(Error::InvalidArgument(format!(
            "class_count {class_count} outside {MIN_CLASSES}..={MAX_CLASSES}"
        )));
    }
    if rate_hz == 0 {
        return Err(Error::InvalidArgument("rate_hz must be positive".into()));
    }
    let min = 4 * rate_hz as usize;
    if length < min {
        return Err(Error::TooShort { len: length, min });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(class_count * per_class);
    for c in 0..class_count {
        let profile = ClassProfile::for_class(c);
        for k in 0..per_class {
            let samples = synth_record(&profile, length, f64::from(rate_hz), &mut rng);
            let record = EcgRecord::new(STANDARD_LEADS, samples, rate_hz, c, format!("syn_c{c}_{k:04}"))?;
            out.push(record.quantized());
        }
    }
    Ok(out)
}

fn synth_record(profile: &ClassProfile, length: usize, fs: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let bpm = profile.rate_bpm + rng.random_range(-RATE_JITTER_BPM..=RATE_JITTER_BPM);
    let rr = 60.0 / bpm;
    let bumps = profile.bumps(rr);
    let duration = length as f64 / fs;

    // Beat times start one beat before the record so the left edge is covered.
    let mut beats = Vec::new();
    let mut t = rng.random_range(0.0..rr) - rr;
    while t < duration + rr {
        beats.push(t + rng.random_range(-0.02..=0.02) * rr);
        t += rr;
    }
    let reach = 0.6_f64.max(0.3 * rr.sqrt() + 0.2);
    let mut clean = vec![0.0; length];
    for &beat in &beats {
        let lo = (((beat - reach) * fs).floor().max(0.0)) as usize;
        let hi = (((beat + reach) * fs).ceil().max(0.0) as usize).min(length);
        for (i, v) in clean.iter_mut().enumerate().take(hi).skip(lo) {
            let dt = i as f64 / fs - beat;
            *v += bumps
                .iter()
                .map(|b| b.amp * (-(dt - b.center).powi(2) / (2.0 * b.sigma * b.sigma)).exp())
                .sum::<f64>();
        }
    }

    let noise = Normal::new(0.0, NOISE_SIGMA).expect("positive sigma");
    let mut samples = Vec::with_capacity(STANDARD_LEADS * length);
    for _ in 0..STANDARD_LEADS {
        let gain = rng.random_range(0.5..=1.5);
        let drift_phase = rng.random_range(0.0..TAU);
        let mains_phase = rng.random_range(0.0..TAU);
        for (i, &v) in clean.iter().enumerate() {
            let t = i as f64 / fs;
            samples.push(
                gain * v
                    + noise.sample(rng)
                    + DRIFT_AMPLITUDE * (TAU * DRIFT_HZ * t + drift_phase).sin()
                    + MAINS_AMPLITUDE * (TAU * MAINS_HZ * t + mains_phase).sin(),
            );
        }
    }
    samples
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn determinism() {
        let a = generate_synthetic(4, 2, 1000, 250, 11).unwrap();
        let b = generate_synthetic(4, 2, 1000, 250, 11).unwrap();
        let bytes = |v: &[EcgRecord]| v.iter().flat_map(|r| r.to_bytes()).collect::<Vec<_>>();
        assert_eq!(bytes(&a), bytes(&b));
        assert_ne!(bytes(&a), bytes(&generate_synthetic(4, 2, 1000, 250, 12).unwrap()));
        assert_eq!(a.len(), 8);
        assert_eq!(a[7].label, 3);
    }

    #[test]
    fn argument_checks() {
        assert!(generate_synthetic(1, 1, 1000, 250, 0).is_err());
        assert!(generate_synthetic(9, 1, 1000, 250, 0).is_err());
        assert!(matches!(generate_synthetic(2, 1, 999, 250, 0), Err(Error::TooShort { min: 1000, .. })));
    }

    #[test]
    fn profiles_unique() {
        let keys: Vec<_> = (0..MAX_CLASSES)
            .map(|c| {
                let p = ClassProfile::for_class(c);
                (p.rate_bpm as u32, p.qrs_widening as u32, p.has_p_wave)
            })
            .collect();
        for i in 0..keys.len() {
            for j in i + 1..keys.len() {
                assert_ne!((keys[i].0, keys[i].1), (keys[j].0, keys[j].1), "classes {i} and {j}");
            }
        }
    }
}
