//! Records a small computation on the tape, runs the backward pass and
//! compares one gradient entry with a central difference.
//!
//! cargo run --example autodiff

use s2m2ecg::numerics::{Backend, Graph, Tensor, Unary};

fn loss(x: &Tensor, w: &Tensor) -> s2m2ecg::Result<(f64, Graph, [s2m2ecg::numerics::Var; 3])> {
    let mut g = Graph::new();
    let xv = g.leaf(x.clone());
    let wv = g.leaf(w.clone());
    let h = g.matmul(&xv, &wv)?;
    let a = g.unary(&h, Unary::Silu)?;
    let out = g.mean_all(&a)?;
    Ok((g.value(out).data()[0], g, [xv, wv, out]))
}

fn main() -> s2m2ecg::Result<()> {
    let x = Tensor::from_fn(vec![3, 4], |i| (i as f64 * 0.37).sin())?;
    let w = Tensor::from_fn(vec![4, 2], |i| (i as f64 * 0.91).cos())?;
    let (value, g, [_, wv, out]) = loss(&x, &w)?;
    let grads = g.backward(out)?;
    let dw = grads.get_or_zeros(wv);
    println!("loss = {value:.6}");
    println!("dL/dw = {:?}", dw.data());

    let h = 1e-6;
    let bump = |d: f64| -> s2m2ecg::Result<f64> {
        let mut data = w.data().to_vec();
        data[5] += d;
        Ok(loss(&x, &Tensor::new(vec![4, 2], data)?)?.0)
    };
    let numeric = (bump(h)? - bump(-h)?) / (2.0 * h);
    println!("dL/dw[5]: tape {:.9}, central difference {numeric:.9}", dw.data()[5]);
    Ok(())
}
