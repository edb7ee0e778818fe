//! Discretizes a small state space system, runs the selective scan and
//! checks it against the equivalent convolution kernel.
//!
//! cargo run --example ssm_scan

use s2m2ecg::numerics::{Discretization, Tensor};
use s2m2ecg::ssm::{discretize, kernel_apply, selective_scan, ssm_kernel};

fn main() -> s2m2ecg::Result<()> {
    let (dim, state, time) = (2, 3, 16);
    let a = Tensor::new(vec![dim, state], vec![-0.5, -1.0, -2.0, -0.3, -0.8, -1.5])?;
    // Constant step size and input maps make the system time-invariant.
    let delta = Tensor::full(vec![time, dim], 0.1);
    let b_row = [0.4, -0.2, 0.7];
    let c_row = [1.0, 0.5, -0.3];
    let b = Tensor::from_fn(vec![time, state], |i| b_row[i % state])?;
    let c = Tensor::from_fn(vec![time, state], |i| c_row[i % state])?;
    let skip = Tensor::new(vec![dim], vec![0.1, -0.2])?;
    let x = Tensor::from_fn(vec![dim, time], |i| ((i * 7) % 5) as f64 - 2.0)?;

    for mode in [Discretization::Simplified, Discretization::ExactZoh] {
        let disc = discretize(&delta, &a, &b, mode)?;
        let y = selective_scan(&disc.a_bar, &disc.b_bar, &c, &x, &skip)?;

        let step = dim * state;
        let a0 = Tensor::new(vec![dim, state], disc.a_bar.data()[..step].to_vec())?;
        let b0 = Tensor::new(vec![dim, state], disc.b_bar.data()[..step].to_vec())?;
        let kernel = ssm_kernel(&a0, &b0, &Tensor::new(vec![state], c_row.to_vec())?, time)?;
        let conv = kernel_apply(&kernel, &x, Some(&skip))?;
        println!("{mode}: y[0, ..4] = {:?}", &y.data()[..4]);
        println!("{mode}: scan vs kernel max |diff| = {:.2e}", y.max_abs_diff(&conv));
    }
    Ok(())
}
