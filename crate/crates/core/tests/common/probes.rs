//! Scan/kernel equivalence and perturbation probes of scan direction,
//! shared by the SSM tests and the acceptance runner.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use s2m2ecg::numerics::{ops, Discretization, ScanInputs, Tensor};
use s2m2ecg::ssm::{discretize, kernel_apply, selective_scan, ssm_kernel};

fn rand_t(rng: &mut ChaCha8Rng, shape: Vec<usize>, lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi)).unwrap()
}

/// Repeats a row `times` times: `[w] -> [times, w]`.
fn tile(row: &Tensor, times: usize) -> Tensor {
    let data = (0..times).flat_map(|_| row.data().iter().copied()).collect();
    Tensor::new(vec![times, row.len()], data).unwrap()
}

fn transpose(t: &Tensor) -> Tensor {
    let (r, c) = (t.shape()[0], t.shape()[1]);
    Tensor::from_fn(vec![c, r], |i| t.data()[(i % r) * c + i / r]).unwrap()
}

/// Largest gap, over `trials` random time-invariant systems at length `m`,
/// between the reference scan, the fused scan and the kernel convolution.
pub fn scan_kernel_gap(m: usize, trials: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ m as u64);
    let mut worst = 0.0f64;
    for trial in 0..trials {
        let dim = rng.random_range(1..5);
        let state = rng.random_range(1..9);
        let mode = if trial % 2 == 0 { Discretization::Simplified } else { Discretization::ExactZoh };
        let a = rand_t(&mut rng, vec![dim, state], -2.0, -0.05);
        let dt_row = rand_t(&mut rng, vec![dim], 0.01, 0.5);
        let b_row = rand_t(&mut rng, vec![state], -1.0, 1.0);
        let c_row = rand_t(&mut rng, vec![state], -1.0, 1.0);
        let skip = rand_t(&mut rng, vec![dim], -1.0, 1.0);
        let x = rand_t(&mut rng, vec![dim, m], -1.0, 1.0);

        let disc = discretize(&tile(&dt_row, m), &a, &tile(&b_row, m), mode).unwrap();
        let scanned = selective_scan(&disc.a_bar, &disc.b_bar, &tile(&c_row, m), &x, &skip).unwrap();

        let step = dim * state;
        let a0 = Tensor::new(vec![dim, state], disc.a_bar.data()[..step].to_vec()).unwrap();
        let b0 = Tensor::new(vec![dim, state], disc.b_bar.data()[..step].to_vec()).unwrap();
        let kernel = ssm_kernel(&a0, &b0, &c_row, m).unwrap();
        let convolved = kernel_apply(&kernel, &x, Some(&skip)).unwrap();
        worst = worst.max(scanned.max_abs_diff(&convolved));

        // The fused kernel takes [batch, time, dim] layouts.
        let xt = transpose(&x).reshape(vec![1, m, dim]).unwrap();
        let fused = ops::selective_scan_fused(
            ScanInputs {
                x: &xt,
                delta: &tile(&dt_row, m).reshape(vec![1, m, dim]).unwrap(),
                a: &a,
                b: &tile(&b_row, m).reshape(vec![1, m, state]).unwrap(),
                c: &tile(&c_row, m).reshape(vec![1, m, state]).unwrap(),
                skip: &skip,
            },
            mode,
        )
        .unwrap();
        let fused = transpose(&fused.reshape(vec![m, dim]).unwrap());
        worst = worst.max(fused.max_abs_diff(&convolved));
    }
    worst
}

/// Which way information flows through a sequence map.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Flow {
    /// Outputs before the perturbed token never change.
    Causal,
    /// Outputs after the perturbed token never change.
    AntiCausal,
    /// Outputs on both sides of an interior perturbation change.
    Both,
}

/// Perturbs one random token per trial of a `[1, time, dim]` input and
/// counts trials whose output change contradicts `flow`. The perturbed
/// token itself must always change the output at its own position.
pub fn flow_violations(
    time: usize,
    dim: usize,
    trials: usize,
    seed: u64,
    flow: Flow,
    f: impl Fn(&Tensor) -> Tensor,
) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut violations = 0;
    for _ in 0..trials {
        let x = rand_t(&mut rng, vec![1, time, dim], -1.0, 1.0);
        let k = rng.random_range(1..time - 1);
        let mut data = x.data().to_vec();
        for v in &mut data[k * dim..(k + 1) * dim] {
            *v += rng.random_range(0.5..1.5);
        }
        let xp = Tensor::new(x.shape().to_vec(), data).unwrap();
        let (y, yp) = (f(&x), f(&xp));
        let moved = |t: usize| {
            let r = t * dim..(t + 1) * dim;
            y.data()[r.clone()].iter().zip(&yp.data()[r]).any(|(a, b)| a != b)
        };
        let before = (0..k).any(moved);
        let after = (k + 1..time).any(moved);
        let ok = moved(k)
            && match flow {
                Flow::Causal => !before && after,
                Flow::AntiCausal => before && !after,
                Flow::Both => before && after,
            };
        if !ok {
            violations += 1;
        }
    }
    violations
}
