//! One finite-difference case per differentiable primitive, shared by the
//! gradient tests and the acceptance runner.

#![allow(dead_code)]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::fd::{check_inputs, check_params, project, random_tensor};
use s2m2ecg::model::{batch_tensor, Mode, ModelConfig, S2m2Ecg};
use s2m2ecg::numerics::{Backend, BatchNormMode, Discretization, Graph, ScanInputs, Unary};
use s2m2ecg::numerics::{ParamStore, Tensor, Var};
use s2m2ecg::ssm::{bidirectional_block, mamba_block, BiBlockParams, BlockConfig, Direction};


fn one(g: &mut Graph, v: &[Var], seed: u64, op: impl Fn(&mut Graph, &[Var]) -> Var) -> Var {
    let y = op(g, v);
    project(g, y, seed)
}

/// Relative error of every primitive, by name, at the random point
/// numbered `point`.
pub fn primitive_errors(point: u64) -> Vec<(&'static str, f64)> {
    let at = |seed: u64| seed + 1000 * point;
    let r = |shape: &[usize], seed: u64| random_tensor(shape, -1.0, 1.0, at(seed));
    let positive = |shape: &[usize], seed: u64| random_tensor(shape, 0.05, 0.6, at(seed));
    let mut out = Vec::new();
    let mut case = |name: &'static str, inputs: Vec<Tensor>, op: &dyn Fn(&mut Graph, &[Var]) -> Var| {
        out.push((name, check_inputs(&inputs, |g, v| one(g, v, at(name.len() as u64), op))));
    };

    case("matmul", vec![r(&[2, 3, 4], 1), r(&[4, 5], 2)], &|g, v| g.matmul(&v[0], &v[1]).unwrap());
    case("add", vec![r(&[3, 4], 3), r(&[3, 4], 4)], &|g, v| g.add(&v[0], &v[1]).unwrap());
    case("mul", vec![r(&[3, 4], 5), r(&[3, 4], 6)], &|g, v| g.mul(&v[0], &v[1]).unwrap());
    case("scale", vec![r(&[5], 7)], &|g, v| g.scale(&v[0], -1.7).unwrap());
    case("add_broadcast", vec![r(&[2, 3, 4], 8), r(&[3, 4], 9)], &|g, v| {
        g.add_broadcast(&v[0], &v[1]).unwrap()
    });
    case("mul_prefix", vec![r(&[3, 2, 4], 10), r(&[3], 11)], &|g, v| g.mul_prefix(&v[0], &v[1]).unwrap());
    for (name, kind) in [
        ("silu", Unary::Silu),
        ("softplus", Unary::Softplus),
        ("sigmoid", Unary::Sigmoid),
        ("exp", Unary::Exp),
        ("neg", Unary::Neg),
    ] {
        case(name, vec![random_tensor(&[4, 3], -3.0, 3.0, at(12))], &move |g, v| g.unary(&v[0], kind).unwrap());
    }
    case("layer_norm", vec![r(&[2, 3, 5], 13), r(&[5], 14), r(&[5], 15)], &|g, v| {
        g.layer_norm(&v[0], &v[1], &v[2]).unwrap()
    });
    case("batch_norm_train", vec![r(&[4, 3], 16), r(&[3], 17), r(&[3], 18)], &|g, v| {
        g.batch_norm(&v[0], &v[1], &v[2], BatchNormMode::Train).unwrap().0
    });
    case("batch_norm_eval", vec![r(&[4, 3], 19), r(&[3], 20), r(&[3], 21)], &|g, v| {
        let mode = BatchNormMode::Eval { mean: &[0.1, -0.2, 0.3], var: &[0.5, 1.5, 2.0] };
        g.batch_norm(&v[0], &v[1], &v[2], mode).unwrap().0
    });
    case("causal_conv", vec![r(&[2, 6, 3], 22), r(&[3, 4], 23)], &|g, v| g.causal_conv(&v[0], &v[1]).unwrap());
    for (name, mode) in [
        ("selective_scan_simplified", Discretization::Simplified),
        ("selective_scan_exact_zoh", Discretization::ExactZoh),
    ] {
        let (b, t, d, n) = (2, 5, 3, 2);
        let inputs = vec![
            r(&[b, t, d], 24),
            positive(&[b, t, d], 25),
            random_tensor(&[d, n], -1.5, -0.2, at(26)),
            r(&[b, t, n], 27),
            r(&[b, t, n], 28),
            r(&[d], 29),
        ];
        case(name, inputs, &move |g, v| {
            let s = ScanInputs { x: &v[0], delta: &v[1], a: &v[2], b: &v[3], c: &v[4], skip: &v[5] };
            g.selective_scan(s, mode).unwrap()
        });
    }
    case("reverse_time", vec![r(&[2, 4, 3], 30)], &|g, v| g.reverse_time(&v[0]).unwrap());
    case("concat_last", vec![r(&[2, 3], 31), r(&[2, 2], 32)], &|g, v| g.concat_last(&[v[0], v[1]]).unwrap());
    case("wrap_tokens", vec![r(&[2, 3, 4], 33), r(&[4], 34), r(&[4], 35)], &|g, v| {
        g.wrap_tokens(&v[0], &v[1], Some(&v[2])).unwrap()
    });
    case("take_rows", vec![r(&[6, 3], 36)], &|g, v| g.take_rows(&v[0], 4).unwrap());
    case("mean_time", vec![r(&[2, 5, 3], 37)], &|g, v| g.mean_time(&v[0]).unwrap());
    case("sample_mean", vec![r(&[3, 2, 4], 38)], &|g, v| g.sample_mean(&v[0]).unwrap());
    case("stack_columns", vec![r(&[3], 39), r(&[3], 40)], &|g, v| g.stack_columns(&[v[0], v[1]]).unwrap());
    case("column", vec![r(&[3, 4], 41)], &|g, v| g.column(&v[0], 2).unwrap());
    case("mean_all", vec![r(&[3, 4], 42)], &|g, v| g.mean_all(&v[0]).unwrap());
    case("cross_entropy", vec![random_tensor(&[4, 3], -2.0, 2.0, at(43))], &|g, v| {
        g.cross_entropy(&v[0], &[0, 2, 1, 2]).unwrap()
    });
    out
}

/// Config used for the end-to-end check: one block of width 8, state 2,
/// and four non-overlapping windows per lead.
pub fn tiny_e2e_config() -> ModelConfig {
    ModelConfig {
        depth: 1,
        dim: 8,
        state_n: 2,
        patch_len: 8,
        step: 8,
        signal_len: 32,
        head_dim: 4,
        ..ModelConfig::default()
    }
}

/// Worst relative error over all parameter tensors of the tiny model with
/// a training-mode cross-entropy loss.
pub fn end_to_end_errors(per_tensor: usize) -> Vec<(String, f64)> {
    let cfg = tiny_e2e_config();
    let mut model = S2m2Ecg::new(cfg.clone(), 5).unwrap();
    // Step sizes near 1 so the state matrix moves the loss by more than the
    // finite-difference rounding floor.
    let dt_ids: Vec<_> = model
        .params()
        .iter()
        .filter(|(_, name, _)| name.ends_with(".dt_bias"))
        .map(|(id, _, t)| (id, t.len()))
        .collect();
    for (k, (id, n)) in dt_ids.into_iter().enumerate() {
        model.params_mut().replace(id, random_tensor(&[n], 0.0, 1.0, 200 + k as u64));
    }
    let records: Vec<_> = (0..3)
        .map(|i| {
            let samples = random_tensor(&[12 * cfg.signal_len], -1.0, 1.0, 100 + i).into_data();
            s2m2ecg::data::EcgRecord::new(12, samples, 250, i as usize % cfg.classes, format!("r{i}")).unwrap()
        })
        .collect();
    let refs: Vec<_> = records.iter().collect();
    let batch = batch_tensor(&refs).unwrap();
    let labels: Vec<usize> = records.iter().map(|r| r.label).collect();
    check_params(model.params(), per_tensor, 9, |g, store| {
        let mut m = model.clone();
        *m.params_mut() = store.clone();
        let out = m.forward(g, &batch, Mode::Train).unwrap();
        g.cross_entropy(&out.logits, &labels).unwrap()
    })
}

/// Parameter and input gradients of one bidirectional block, plus the input
/// gradient of a single-direction block, with step sizes near 1.
pub fn block_errors(seed: u64) -> Vec<(String, f64)> {
    let cfg = BlockConfig::new(6, 3);
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = BiBlockParams::init(&mut store, "blk", &cfg, &mut rng);
    for (k, dir) in [&p.forward, p.reverse.as_ref().unwrap()].into_iter().enumerate() {
        store.replace(dir.dt_bias, random_tensor(&[cfg.dim], 0.0, 1.0, seed + k as u64));
    }
    let tokens = random_tensor(&[2, 7, cfg.dim], -1.0, 1.0, seed + 10);
    let mut out = check_params(&store, 6, seed, |g, s| {
        let x = g.constant(tokens.clone());
        let y = bidirectional_block(g, s, &x, &p, &cfg).unwrap();
        project(g, y, seed)
    });
    let input = check_inputs(std::slice::from_ref(&tokens), |g, v| {
        let y = bidirectional_block(g, &store, &v[0], &p, &cfg).unwrap();
        project(g, y, seed)
    });
    out.push(("bidirectional_block input".into(), input));
    for (name, dir, params) in [
        ("mamba_block forward input", Direction::Forward, &p.forward),
        ("mamba_block reverse input", Direction::Reverse, p.reverse.as_ref().unwrap()),
    ] {
        let err = check_inputs(std::slice::from_ref(&tokens), |g, v| {
            let y = mamba_block(g, &store, &v[0], &p.shared, params, dir, cfg.discretization).unwrap();
            project(g, y, seed)
        });
        out.push((name.into(), err));
    }
    out
}
