mod common {
    pub mod fd;
}

use std::sync::Arc;

use common::fd::{project, random_tensor};
use s2m2ecg::data::EcgRecord;
use s2m2ecg::model::{
    batch_tensor, load_model, param_count, save_model, FusionMode, Mode, ModelConfig, S2m2Ecg,
};
use s2m2ecg::numerics::{Eager, Graph, Tensor};
use s2m2ecg::Error;

fn small() -> ModelConfig {
    ModelConfig {
        depth: 1,
        dim: 8,
        state_n: 4,
        patch_len: 50,
        step: 25,
        signal_len: 500,
        head_dim: 8,
        ..ModelConfig::default()
    }
}

fn record(cfg: &ModelConfig, seed: u64) -> EcgRecord {
    let samples = random_tensor(&[12 * cfg.signal_len], -1.0, 1.0, seed).into_data();
    EcgRecord::new(12, samples, 250, (seed % 4) as usize, format!("r{seed}")).unwrap()
}

fn batch_of(cfg: &ModelConfig, seeds: &[u64]) -> Tensor {
    let recs: Vec<_> = seeds.iter().map(|&s| record(cfg, s)).collect();
    batch_tensor(&recs.iter().collect::<Vec<_>>()).unwrap()
}

/// Row `i` of a `[rows, cols]` tensor.
fn row(t: &Tensor, i: usize) -> &[f64] {
    let c = t.shape()[1];
    &t.data()[i * c..(i + 1) * c]
}

#[test]
fn logits_shape_and_softmax() {
    let cfg = small();
    let model = S2m2Ecg::new(cfg.clone(), 1).unwrap();
    let recs: Vec<_> = (0..3).map(|s| record(&cfg, s)).collect();
    let probs = model.predict_proba(&recs.iter().collect::<Vec<_>>()).unwrap();
    assert_eq!(probs.shape(), &[3, cfg.classes]);
    for i in 0..3 {
        let sum: f64 = row(&probs, i).iter().sum();
        assert!((sum - 1.0).abs() < 1e-9, "row {i} sums to {sum}");
    }
}

#[test]
fn batch_of_one_matches_batch_of_eight() {
    let cfg = small();
    let model = S2m2Ecg::new(cfg.clone(), 2).unwrap();
    let seeds: Vec<u64> = (10..18).collect();
    let full = model.logits(&batch_of(&cfg, &seeds)).unwrap();
    for (i, &s) in seeds.iter().enumerate() {
        let single = model.logits(&batch_of(&cfg, &[s])).unwrap();
        for (a, b) in single.data().iter().zip(row(&full, i)) {
            assert!((a - b).abs() < 1e-10, "record {i}: {a} vs {b}");
        }
    }
}

#[test]
fn duplicate_rows_and_repeated_calls_agree() {
    let cfg = small();
    let model = S2m2Ecg::new(cfg.clone(), 3).unwrap();
    let batch = batch_of(&cfg, &[5, 5, 6]);
    let a = model.logits(&batch).unwrap();
    assert_eq!(row(&a, 0), row(&a, 1));
    assert_ne!(row(&a, 0), row(&a, 2));
    assert_eq!(a, model.logits(&batch).unwrap());
}

#[test]
fn permuting_leads_changes_logits() {
    let cfg = small();
    let model = S2m2Ecg::new(cfg.clone(), 4).unwrap();
    let r = record(&cfg, 7);
    let mut leads: Vec<Vec<f64>> = r.lead_iter().map(<[f64]>::to_vec).collect();
    leads.swap(0, 5);
    let swapped = EcgRecord::from_leads(leads, 250, r.label, "swapped").unwrap();
    let a = model.logits(&batch_tensor(&[&r]).unwrap()).unwrap();
    let b = model.logits(&batch_tensor(&[&swapped]).unwrap()).unwrap();
    assert!(a.max_abs_diff(&b) > 1e-6, "swapping leads left logits unchanged");
}

#[test]
fn identical_input_leads_give_distinct_branch_features() {
    let cfg = small();
    let model = S2m2Ecg::new(cfg.clone(), 5).unwrap();
    let lead = random_tensor(&[cfg.signal_len], -1.0, 1.0, 8).into_data();
    let r = EcgRecord::from_leads(vec![lead; 12], 250, 0, "same").unwrap();
    let batch = batch_tensor(&[&r]).unwrap();
    let f0 = model.branch_forward(&mut Eager, &batch, 0).unwrap();
    let f1 = model.branch_forward(&mut Eager, &batch, 1).unwrap();
    assert!(f0.max_abs_diff(&f1) > 1e-6);

    let shared = S2m2Ecg::new(ModelConfig { multi_branch: false, ..cfg }, 5).unwrap();
    let g0 = shared.branch_forward(&mut Eager, &batch, 0).unwrap();
    let g1 = shared.branch_forward(&mut Eager, &batch, 1).unwrap();
    assert_eq!(g0, g1);
}

fn lead_maps(cfg: &ModelConfig, batch: usize, seed: u64) -> Vec<Arc<Tensor>> {
    let t = cfg.total_tokens();
    (0..12)
        .map(|i| Arc::new(random_tensor(&[batch, t, cfg.dim], -2.0, 2.0, seed + i)))
        .collect()
}

#[test]
fn se_weights_in_open_unit_interval() {
    let cfg = small();
    let model = S2m2Ecg::new(cfg.clone(), 6).unwrap();
    let (out, w) = model.lead_fusion(&mut Eager, &lead_maps(&cfg, 3, 40)).unwrap();
    let w = w.unwrap();
    assert_eq!(w.shape(), &[3, 12]);
    assert!(w.data().iter().all(|&v| v > 0.0 && v < 1.0));
    assert_eq!(out.len(), 12);
    assert_eq!(out[0].shape(), &[3, cfg.total_tokens(), cfg.dim]);
    assert!(matches!(model.lead_fusion(&mut Eager, &lead_maps(&cfg, 1, 1)[..11]), Err(Error::Shape { .. })));
}

#[test]
fn se_weights_equal_for_identical_leads_under_symmetric_excitation() {
    let cfg = small();
    let mut model = S2m2Ecg::new(cfg.clone(), 7).unwrap();
    // The excitation map is learned per lead; symmetry of the output needs
    // symmetric expansion weights.
    let ids: Vec<_> = model
        .params()
        .iter()
        .filter(|(_, n, _)| *n == "fusion.se_w2" || *n == "fusion.se_b2")
        .map(|(id, n, t)| (id, n.to_string(), t.shape().to_vec()))
        .collect();
    for (id, name, shape) in ids {
        let v = if name.ends_with("w2") { 0.7 } else { -0.1 };
        model.params_mut().replace(id, Tensor::full(shape, v));
    }
    let one = lead_maps(&cfg, 2, 50).swap_remove(0);
    let (_, w) = model.lead_fusion(&mut Eager, &vec![one; 12]).unwrap();
    let w = w.unwrap();
    for b in 0..2 {
        let r = row(&w, b);
        assert!(r.iter().all(|&v| v == r[0]), "{r:?}");
    }
}

#[test]
fn zeroing_one_lead_leaves_other_leads_content() {
    let cfg = small();
    let model = S2m2Ecg::new(cfg.clone(), 8).unwrap();
    let maps = lead_maps(&cfg, 1, 60);
    let mut zeroed = maps.clone();
    zeroed[3] = Arc::new(Tensor::zeros(maps[3].shape().to_vec()));
    let (a, wa) = model.lead_fusion(&mut Eager, &maps).unwrap();
    let (b, wb) = model.lead_fusion(&mut Eager, &zeroed).unwrap();
    let (wa, wb) = (wa.unwrap(), wb.unwrap());
    assert!((wa.data()[3] - wb.data()[3]).abs() > 1e-9);
    for j in (0..12).filter(|&j| j != 3) {
        // Undo each lead's scale to recover its pre-scaling content.
        let pa: Vec<f64> = a[j].data().iter().map(|v| v / wa.data()[j]).collect();
        let pb: Vec<f64> = b[j].data().iter().map(|v| v / wb.data()[j]).collect();
        let diff = pa.iter().zip(&pb).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-12, "lead {j} content moved by {diff}");
    }
}

#[test]
fn concat_only_skips_fusion() {
    let cfg = ModelConfig { fusion: FusionMode::ConcatOnly, ..small() };
    let model = S2m2Ecg::new(cfg.clone(), 9).unwrap();
    let maps = lead_maps(&cfg, 2, 70);
    let (out, w) = model.lead_fusion(&mut Eager, &maps).unwrap();
    assert!(w.is_none());
    assert_eq!(out, maps);
    let f = model.forward(&mut Eager, &batch_of(&cfg, &[1, 2]), Mode::Eval).unwrap();
    assert!(f.se_weights.is_none());
}

#[test]
fn zero_signal_with_zero_output_projection_is_identity_on_tokens() {
    let cfg = ModelConfig { depth: 2, ..small() };
    let mut model = S2m2Ecg::new(cfg.clone(), 10).unwrap();
    let outs: Vec<_> = model
        .params()
        .iter()
        .filter(|(_, n, _)| n.ends_with(".out_w") || n.ends_with(".out_b"))
        .map(|(id, _, t)| (id, t.shape().to_vec()))
        .collect();
    for (id, shape) in outs {
        model.params_mut().replace(id, Tensor::zeros(shape));
    }
    let bias = random_tensor(&[cfg.dim], -1.0, 1.0, 11);
    let eb = model.branch(4).embed_b;
    model.params_mut().replace(eb, bias.clone());

    let zero = EcgRecord::new(12, vec![0.0; 12 * cfg.signal_len], 250, 0, "z").unwrap();
    let batch = batch_tensor(&[&zero]).unwrap();
    let feats = model.branch_forward(&mut Eager, &batch, 4).unwrap();

    // Hand-built trace: CLS or embedding bias, plus the positional row.
    let br = model.branch(4);
    let p = model.params();
    let (pos, start, end) = (p.get(br.pos), p.get(br.cls_start), p.get(br.cls_end.unwrap()));
    let t = cfg.total_tokens();
    let d = cfg.dim;
    for k in 0..t {
        let base = if k == 0 {
            start.data()
        } else if k == t - 1 {
            end.data()
        } else {
            bias.data()
        };
        for j in 0..d {
            let expect = base[j] + pos.data()[k * d + j];
            assert!((feats.data()[k * d + j] - expect).abs() < 1e-15, "token {k} dim {j}");
        }
    }
    // Layer norm inside each block sees these tokens; its output is
    // zero-mean per token.
    let normed = s2m2ecg::numerics::layer_norm(&feats, &Tensor::full(vec![d], 1.0), &Tensor::zeros(vec![d])).unwrap();
    for tok in normed.data().chunks(d) {
        assert!(tok.iter().sum::<f64>().abs() / (d as f64) < 1e-12);
    }
}

#[test]
fn branch_parameters_ignore_other_leads() {
    let cfg = small();
    let model = S2m2Ecg::new(cfg.clone(), 12).unwrap();
    let grads_for = |seed_for_lead3: u64| {
        let r = record(&cfg, 20);
        let mut leads: Vec<Vec<f64>> = r.lead_iter().map(<[f64]>::to_vec).collect();
        leads[3] = random_tensor(&[cfg.signal_len], -1.0, 1.0, seed_for_lead3).into_data();
        let r = EcgRecord::from_leads(leads, 250, 0, "p").unwrap();
        let batch = batch_tensor(&[&r]).unwrap();
        let mut g = Graph::new();
        let f = model.branch_forward(&mut g, &batch, 0).unwrap();
        let loss = project(&mut g, f, 1);
        let grads = g.backward(loss).unwrap();
        g.bound_params()
            .map(|(id, v)| (model.params().name(id).to_string(), grads.get_or_zeros(v)))
            .collect::<Vec<_>>()
    };
    let a = grads_for(30);
    let b = grads_for(31);
    assert!(a.iter().all(|(n, _)| n.starts_with("lead0.")));
    assert_eq!(a, b);
}

fn branch_scalars(model: &S2m2Ecg, prefix: &str) -> usize {
    model
        .params()
        .iter()
        .filter(|(_, n, _)| n.starts_with(prefix))
        .map(|(_, _, t)| t.len())
        .sum()
}

#[test]
fn param_count_arithmetic() {
    for base in [small(), ModelConfig::tiny(), ModelConfig { bidirectional: false, ..small() }] {
        let built = S2m2Ecg::new(base.clone(), 0).unwrap();
        assert_eq!(param_count(&base), built.param_count());

        let d1 = ModelConfig { depth: 1, ..base.clone() };
        let d2 = ModelConfig { depth: 2, ..base.clone() };
        let d3 = ModelConfig { depth: 3, ..base.clone() };
        let step = param_count(&d2) - param_count(&d1);
        assert_eq!(param_count(&d3) - param_count(&d2), step);
        let one_block = branch_scalars(&S2m2Ecg::new(d1.clone(), 0).unwrap(), "lead0.block0.");
        assert_eq!(step, 12 * one_block);

        let single = ModelConfig { multi_branch: false, ..base.clone() };
        let branch = branch_scalars(&built, "lead0.");
        assert_eq!(param_count(&base) - param_count(&single), 11 * branch);
    }
}

#[test]
fn save_load_is_bit_exact() {
    let cfg = small();
    let mut model = S2m2Ecg::new(cfg.clone(), 13).unwrap();
    model.running_stats_mut().mean.iter_mut().for_each(|m| *m = 0.25);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.bin");
    save_model(&model, &path).unwrap();
    let back = load_model(&path).unwrap();
    assert_eq!(back.config(), model.config());
    assert_eq!(back.to_bytes(), model.to_bytes());
    let batch = batch_of(&cfg, &[3, 4]);
    let (a, b) = (model.logits(&batch).unwrap(), back.logits(&batch).unwrap());
    assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn corrupt_or_mismatched_files_are_typed_errors() {
    let cfg = small();
    let model = S2m2Ecg::new(cfg.clone(), 14).unwrap();
    let mut bytes = model.to_bytes();
    bytes[0] = b'X';
    assert!(matches!(S2m2Ecg::from_bytes(&bytes), Err(Error::Format { offset: 0, .. })));
    let short = &model.to_bytes()[..100];
    assert!(matches!(S2m2Ecg::from_bytes(short), Err(Error::Format { .. })));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.bin");
    save_model(&model, &path).unwrap();
    let mut wider = S2m2Ecg::new(ModelConfig { dim: 16, ..cfg }, 0).unwrap();
    match wider.load_weights(&path) {
        Err(Error::ParamShape { name, expected, found }) => {
            assert_eq!(name, "lead0.embed_w");
            assert_eq!(expected, vec![50, 16]);
            assert_eq!(found, vec![50, 8]);
        }
        other => panic!("expected a shape error, got {other:?}"),
    }
}
