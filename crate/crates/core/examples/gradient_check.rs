//! Finite-difference check of a conv → BiGRU → mean pipeline on random
//! inputs.
//!
//! `cargo run --release --example gradient_check`

use rand::Rng as _;
use sisrafnet::rng::rng_for;
use sisrafnet::tensor::{finite_diff_check, Tensor};

fn rand_tensor(seed: u64, shape: &[usize]) -> Tensor {
    let mut rng = rng_for(seed, &[]);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect()).unwrap()
}

fn main() -> sisrafnet::Result<()> {
    let (c, h, w, hid) = (3, 6, 2, 4);
    let conv_w = rand_tensor(1, &[c, 1, 3, 3]);
    let conv_b = rand_tensor(2, &[c]);
    // per direction: W_z, W_r, W_h (hid×in), U_z, U_r, U_h (hid×hid), b_z, b_r, b_h
    let d = c * w;
    let shapes: [&[usize]; 9] = [
        &[hid, d],
        &[hid, d],
        &[hid, d],
        &[hid, hid],
        &[hid, hid],
        &[hid, hid],
        &[hid],
        &[hid],
        &[hid],
    ];
    let gru: Vec<Tensor> = (0..18)
        .map(|i| rand_tensor(10 + i as u64, shapes[i % 9]))
        .collect();
    let x = rand_tensor(0, &[1, 1, h, w]);
    let err = finite_diff_check(
        |g, x| {
            let (cw, cb) = (g.leaf(&conv_w), g.leaf(&conv_b));
            let y = g.conv2d(x, cw, cb)?;
            let y = g.tanh(y);
            let y = g.permute(y, &[0, 2, 1, 3])?;
            let y = g.reshape(y, &[1, h, d])?;
            let p: Vec<_> = gru.iter().map(|t| g.leaf(t)).collect();
            let y = g.bigru(y, &p)?;
            let y = g.mul(y, y)?;
            Ok(g.mean(y))
        },
        &x,
        1e-5,
    )?;
    println!("max relative gradient error w.r.t. the input: {err:.2e}");
    Ok(())
}
