//! Randomized serialization round trips for records and models.

#![allow(dead_code)]

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use s2m2ecg::data::{read_record, write_record, EcgRecord};
use s2m2ecg::model::{load_model, save_model, FusionMode, LayerReadout, ModelConfig, S2m2Ecg};
use s2m2ecg::numerics::Discretization;
use s2m2ecg::ssm::DirectionCombine;
use s2m2ecg::tokenize::ClsPolicy;

fn bits(x: &[f64]) -> Vec<u64> {
    x.iter().map(|v| v.to_bits()).collect()
}

/// Record samples are stored as f32, so the generator draws f32 values.
pub fn random_record(rng: &mut ChaCha8Rng, id: &str) -> EcgRecord {
    let leads = rng.random_range(1..14);
    let len = rng.random_range(1..400);
    let samples = (0..leads * len)
        .map(|_| f64::from(rng.sample::<f32, _>(StandardNormal) * 3.0))
        .collect();
    let rate = rng.random_range(1..2000);
    let label = rng.random_range(0..10);
    EcgRecord::new(leads, samples, rate, label, id).unwrap()
}

/// Count of records in `n` random trials that fail to come back bit-exact
/// through a file in `dir`.
pub fn record_failures(n: usize, seed: u64, dir: &Path) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .filter(|i| {
            let id = format!("r{i}");
            let r = random_record(&mut rng, &id);
            let path = dir.join(format!("{id}.s2m2"));
            write_record(&r, &path).unwrap();
            let back = read_record(&path).unwrap();
            back != r || bits(back.samples()) != bits(r.samples())
        })
        .count()
}

fn pick<T: Copy>(rng: &mut ChaCha8Rng, options: &[T]) -> T {
    options[rng.random_range(0..options.len())]
}

/// A small valid configuration with every switch drawn at random.
pub fn random_config(rng: &mut ChaCha8Rng) -> ModelConfig {
    loop {
        let patch_len = rng.random_range(2..12);
        let cfg = ModelConfig {
            patch_len,
            step: rng.random_range(1..=patch_len),
            depth: rng.random_range(1..3),
            dim: 2 * rng.random_range(4..7),
            state_n: rng.random_range(1..4),
            classes: rng.random_range(2..9),
            bidirectional: rng.random_bool(0.5),
            multi_branch: rng.random_bool(0.5),
            fusion: pick(rng, &[FusionMode::Full, FusionMode::ConcatOnly]),
            cls_policy: pick(rng, &[ClsPolicy::BothEnds, ClsPolicy::StartOnly]),
            direction_combine: pick(rng, &[DirectionCombine::Sum, DirectionCombine::Concat]),
            layer_readout: pick(rng, &[LayerReadout::Last, LayerReadout::Sum]),
            discretization: pick(rng, &[Discretization::Simplified, Discretization::ExactZoh]),
            conv_kernel: rng.random_range(1..5),
            head_dim: rng.random_range(1..5),
            signal_len: rng.random_range(patch_len..4 * patch_len),
            ..ModelConfig::default()
        };
        if cfg.validate().is_ok() {
            return cfg;
        }
    }
}

/// Count of models in `n` random trials whose configuration, weights or
/// normalization buffers change through a file in `dir`.
pub fn model_failures(n: usize, seed: u64, dir: &Path) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let path = dir.join("model.bin");
    (0..n)
        .filter(|_| {
            let cfg = random_config(&mut rng);
            let mut m = S2m2Ecg::new(cfg, rng.random()).unwrap();
            let ids: Vec<_> = m.params().ids().collect();
            for id in ids {
                for v in m.params_mut().data_mut(id) {
                    *v = rng.sample::<f64, _>(StandardNormal);
                }
            }
            for v in m.running_stats_mut().mean.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            for v in m.running_stats_mut().var.iter_mut() {
                *v = rng.random_range(1e-3..5.0);
            }
            save_model(&m, &path).unwrap();
            let back = load_model(&path).unwrap();
            let same_params = m
                .params()
                .iter()
                .zip(back.params().iter())
                .all(|((_, na, a), (_, nb, b))| na == nb && a.shape() == b.shape() && bits(a.data()) == bits(b.data()));
            let same_stats = bits(&m.running_stats().mean) == bits(&back.running_stats().mean)
                && bits(&m.running_stats().var) == bits(&back.running_stats().var);
            !(back.config() == m.config() && same_params && same_stats)
        })
        .count()
}
