//! Single-record inference latency.

use std::fmt;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::EcgRecord;
use crate::error::{Error, Result};
use crate::model::{batch_tensor, S2m2Ecg};
use crate::numerics::Tensor;

pub const DEFAULT_WARMUP: usize = 10;
pub const DEFAULT_REPEATS: usize = 100;

#[derive(Clone, Debug, PartialEq)]
pub struct LatencyReport {
    pub repeats: usize,
    pub min_ms: f64,
    pub mean_ms: f64,
    /// Nearest-rank 95th percentile.
    pub p95_ms: f64,
    /// Peak resident set size of the process, where the OS reports it.
    pub peak_rss_kib: Option<u64>,
}

impl fmt::Display for LatencyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "repeats={} min_ms={:.3} mean_ms={:.3} p95_ms={:.3}",
            self.repeats, self.min_ms, self.mean_ms, self.p95_ms
        )?;
        match self.peak_rss_kib {
            Some(k) => write!(f, " peak_rss_kib={k}"),
            None => write!(f, " peak_rss_kib=unknown"),
        }
    }
}

/// Seeded standard-normal record shaped for `model`, standing in for a
/// preprocessed (z-scored) signal.
pub fn random_record(model: &S2m2Ecg, seed: u64) -> Result<EcgRecord> {
    let cfg = model.config();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..cfg.leads * cfg.signal_len).map(|_| StandardNormal.sample(&mut rng)).collect();
    EcgRecord::new(cfg.leads, samples, 250, 0, "bench")
}

/// Times `repeats` single-record eval forwards after `warmup` discarded
/// ones.
pub fn bench_latency(model: &S2m2Ecg, record: &EcgRecord, warmup: usize, repeats: usize) -> Result<LatencyReport> {
    if repeats == 0 {
        return Err(Error::InvalidArgument("repeats must be at least 1".into()));
    }
    let input: Tensor = batch_tensor(&[record])?;
    for _ in 0..warmup {
        model.logits(&input)?;
    }
    let mut times = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let start = Instant::now();
        std::hint::black_box(model.logits(std::hint::black_box(&input))?);
        times.push(start.elapsed().as_secs_f64() * 1e3);
    }
    times.sort_by(f64::total_cmp);
    let rank = ((0.95 * repeats as f64).ceil() as usize).max(1);
    Ok(LatencyReport {
        repeats,
        min_ms: times[0],
        mean_ms: times.iter().sum::<f64>() / repeats as f64,
        p95_ms: times[rank - 1],
        peak_rss_kib: peak_rss_kib(),
    })
}

/// `VmHWM` from `/proc/self/status`.
pub fn peak_rss_kib() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    line.split_whitespace().nth(1)?.parse().ok()
}
