mod common {
    pub mod fd;
}

use common::fd::random_tensor;
use proptest::prelude::*;
use s2m2ecg::numerics::{depthwise_causal_conv1d, kernels, ops, Discretization, ScanInputs, Tensor};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn conv_never_reads_the_future(
        seed in 0u64..10_000,
        channels in 1usize..4,
        time in 2usize..20,
        k in 1usize..6,
        cut in 0usize..19,
    ) {
        let t = cut % (time - 1);
        let x = random_tensor(&[channels, time], -1.0, 1.0, seed);
        let kernel = random_tensor(&[channels, k], -1.0, 1.0, seed + 1);
        let mut data = x.data().to_vec();
        for c in 0..channels {
            for v in &mut data[c * time + t + 1..(c + 1) * time] {
                *v += 1.0;
            }
        }
        let xp = Tensor::new(vec![channels, time], data).unwrap();
        let (y, yp) = (depthwise_causal_conv1d(&x, &kernel).unwrap(), depthwise_causal_conv1d(&xp, &kernel).unwrap());
        for c in 0..channels {
            for s in 0..=t {
                prop_assert_eq!(y.data()[c * time + s], yp.data()[c * time + s]);
            }
        }
    }

    #[test]
    fn fast_exp_tracks_libm(x in -700.0f64..700.0) {
        let (a, b) = (kernels::exp_fast(x), x.exp());
        prop_assert!(((a - b) / b).abs() < 1e-15, "{x}: {a} vs {b}");
    }
}

#[test]
fn ops_are_bit_deterministic() {
    let (b, t, d, n) = (2, 30, 5, 4);
    let run = || {
        let x = random_tensor(&[b, t, d], -1.0, 1.0, 1);
        let w = random_tensor(&[d, 7], -1.0, 1.0, 2);
        let s = ops::selective_scan_fused(
            ScanInputs {
                x: &x,
                delta: &random_tensor(&[b, t, d], 0.01, 0.5, 3),
                a: &random_tensor(&[d, n], -1.0, -0.1, 4),
                b: &random_tensor(&[b, t, n], -1.0, 1.0, 5),
                c: &random_tensor(&[b, t, n], -1.0, 1.0, 6),
                skip: &random_tensor(&[d], -1.0, 1.0, 7),
            },
            Discretization::ExactZoh,
        )
        .unwrap();
        let m = ops::matmul(&x, &w).unwrap();
        let l = ops::layer_norm(&x, &Tensor::full(vec![d], 1.0), &Tensor::zeros(vec![d])).unwrap();
        [s, m, l]
    };
    let (a, c) = (run(), run());
    for (u, v) in a.iter().zip(&c) {
        assert!(u.data().iter().zip(v.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
    }
}
