//! Central finite differences checked against the tape's reverse sweep.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use s2m2ecg::numerics::{Backend, Graph, ParamId, ParamStore, Tensor, Var};

pub const STEP: f64 = 1e-5;

/// `‖a − n‖ / max(‖a‖, ‖n‖)` over one gradient tensor; both zero gives 0.
pub fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    let scale = norm(analytic).max(norm(numeric));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

pub fn random_tensor(shape: &[usize], lo: f64, hi: f64, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(lo..hi)).unwrap()
}

/// `Σ y ⊙ R` for a fixed random `R`, so every output element carries a
/// distinct weight into the scalar loss.
pub fn project(g: &mut Graph, y: Var, seed: u64) -> Var {
    let shape = g.value(y).shape().to_vec();
    let r = g.constant(random_tensor(&shape, -1.0, 1.0, seed ^ 0x5eed));
    let prod = g.mul(&y, &r).unwrap();
    g.sum_all(&prod).unwrap()
}

/// Worst relative error over `inputs` for a scalar function built on the
/// tape from one leaf per input.
pub fn check_inputs(inputs: &[Tensor], f: impl Fn(&mut Graph, &[Var]) -> Var) -> f64 {
    let mut g = Graph::new();
    let leaves: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let loss = f(&mut g, &leaves);
    let grads = g.backward(loss).unwrap();

    let eval = |ins: &[Tensor]| {
        let mut g = Graph::new();
        let leaves: Vec<Var> = ins.iter().map(|t| g.leaf(t.clone())).collect();
        let loss = f(&mut g, &leaves);
        g.value(loss).data()[0]
    };
    let mut worst = 0.0f64;
    for (i, leaf) in leaves.iter().enumerate() {
        let analytic = grads.get_or_zeros(*leaf);
        let mut numeric = vec![0.0; inputs[i].len()];
        for (j, slot) in numeric.iter_mut().enumerate() {
            let mut shifted = inputs.to_vec();
            let base = inputs[i].data()[j];
            let mut bump = |v: f64| {
                let mut data = inputs[i].data().to_vec();
                data[j] = v;
                shifted[i] = Tensor::new(inputs[i].shape().to_vec(), data).unwrap();
                eval(&shifted)
            };
            *slot = (bump(base + STEP) - bump(base - STEP)) / (2.0 * STEP);
        }
        worst = worst.max(rel_err(analytic.data(), &numeric));
    }
    worst
}

/// Relative error per parameter tensor for a loss built from `store`, using
/// at most `per_tensor` randomly chosen entries of each tensor.
pub fn check_params(
    store: &ParamStore,
    per_tensor: usize,
    seed: u64,
    f: impl Fn(&mut Graph, &ParamStore) -> Var,
) -> Vec<(String, f64)> {
    let mut g = Graph::new();
    let loss = f(&mut g, store);
    let grads = g.backward(loss).unwrap();
    let bound: Vec<(ParamId, Var)> = g.bound_params().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut work = store.clone();
    let mut out = Vec::new();
    for (id, var) in bound {
        let analytic = grads.get_or_zeros(var);
        let n = analytic.len();
        let picks: Vec<usize> = if n <= per_tensor {
            (0..n).collect()
        } else {
            (0..per_tensor).map(|_| rng.random_range(0..n)).collect()
        };
        let mut a = Vec::with_capacity(picks.len());
        let mut num = Vec::with_capacity(picks.len());
        for &j in &picks {
            let base = store.get(id).data()[j];
            let mut at = |v: f64| {
                work.data_mut(id)[j] = v;
                let mut g = Graph::new();
                let loss = f(&mut g, &work);
                g.value(loss).data()[0]
            };
            let d = (at(base + STEP) - at(base - STEP)) / (2.0 * STEP);
            work.data_mut(id)[j] = base;
            a.push(analytic.data()[j]);
            num.push(d);
        }
        out.push((store.name(id).to_string(), rel_err(&a, &num)));
    }
    out
}
