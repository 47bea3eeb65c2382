//! Naive-loop reference implementations and the gradient-check sweep shared
//! by the integration tests and the acceptance harness.
#![allow(dead_code)]

use num_complex::Complex64;
use rand::Rng as _;
use sisrafnet::channel::{kmh_to_mps, ChannelProfile, ChannelRealization, ComplexGrid, SimConfig};
use sisrafnet::model::{Model, ModelConfig};
use sisrafnet::nn::{bigru_unrolled, gru_step, BiGru, Conv2d, Dense, Layer, RecurrenceAxis};
use sisrafnet::rng::{rng_for, Rng};
use sisrafnet::tensor::{finite_diff_check_at, finite_diff_report, Activation, Graph, Tensor, Var};
use sisrafnet::train::mse_loss;

pub fn rand_vec(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

pub fn rand_tensor(rng: &mut Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, rand_vec(rng, n)).unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "length mismatch");
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// `[m×k]·[k×n]`, textbook triple loop.
pub fn naive_matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut s = 0.0;
            for t in 0..k {
                s += a[i * k + t] * b[t * n + j];
            }
            c[i * n + j] = s;
        }
    }
    c
}

/// Same-padded cross-correlation of one `[ci×h×w]` image, six nested loops.
#[allow(clippy::too_many_arguments)]
pub fn naive_conv(
    x: &[f64],
    w: &[f64],
    b: &[f64],
    ci: usize,
    co: usize,
    h: usize,
    wd: usize,
    k: usize,
) -> Vec<f64> {
    let p = (k / 2) as isize;
    let mut y = vec![0.0; co * h * wd];
    for o in 0..co {
        for i in 0..h {
            for j in 0..wd {
                let mut s = b[o];
                for c in 0..ci {
                    for u in 0..k {
                        for v in 0..k {
                            let (ii, jj) =
                                (i as isize + u as isize - p, j as isize + v as isize - p);
                            if ii < 0 || jj < 0 || ii >= h as isize || jj >= wd as isize {
                                continue;
                            }
                            s += w[((o * ci + c) * k + u) * k + v]
                                * x[(c * h + ii as usize) * wd + jj as usize];
                        }
                    }
                }
                y[(o * h + i) * wd + j] = s;
            }
        }
    }
    y
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn mat_vec(m: &[f64], v: &[f64], rows: usize) -> Vec<f64> {
    let cols = v.len();
    (0..rows)
        .map(|r| (0..cols).map(|c| m[r * cols + c] * v[c]).sum())
        .collect()
}

/// One GRU step with scalar loops. `p` holds `W_z, W_r, W_h, U_z, U_r, U_h,
/// b_z, b_r, b_h` as flat row-major arrays.
pub fn naive_gru_step(p: &[Vec<f64>], x: &[f64], h_prev: &[f64]) -> Vec<f64> {
    let hd = h_prev.len();
    let (wz, wr, wh) = (
        mat_vec(&p[0], x, hd),
        mat_vec(&p[1], x, hd),
        mat_vec(&p[2], x, hd),
    );
    let (uz, ur) = (mat_vec(&p[3], h_prev, hd), mat_vec(&p[4], h_prev, hd));
    let z: Vec<f64> = (0..hd).map(|i| sigmoid(wz[i] + uz[i] + p[6][i])).collect();
    let r: Vec<f64> = (0..hd).map(|i| sigmoid(wr[i] + ur[i] + p[7][i])).collect();
    let rh: Vec<f64> = (0..hd).map(|i| r[i] * h_prev[i]).collect();
    let uh = mat_vec(&p[5], &rh, hd);
    (0..hd)
        .map(|i| {
            let c = (wh[i] + uh[i] + p[8][i]).tanh();
            (1.0 - z[i]) * h_prev[i] + z[i] * c
        })
        .collect()
}

/// Bidirectional scan of `[steps×d]`, returning `[steps×2h]` with the
/// forward state first.
pub fn naive_bigru(p: &[Vec<f64>], x: &[f64], steps: usize, hidden: usize) -> Vec<f64> {
    let d = x.len() / steps;
    let mut out = vec![0.0; steps * 2 * hidden];
    let mut h = vec![0.0; hidden];
    for f in 0..steps {
        h = naive_gru_step(&p[..9], &x[f * d..(f + 1) * d], &h);
        out[f * 2 * hidden..f * 2 * hidden + hidden].copy_from_slice(&h);
    }
    let mut h = vec![0.0; hidden];
    for f in (0..steps).rev() {
        h = naive_gru_step(&p[9..], &x[f * d..(f + 1) * d], &h);
        out[f * 2 * hidden + hidden..(f + 1) * 2 * hidden].copy_from_slice(&h);
    }
    out
}

/// Random parameters for both directions: shapes and flat data.
pub fn rand_gru_params(rng: &mut Rng, input: usize, hidden: usize, scale: f64) -> Vec<Tensor> {
    let shapes = [
        vec![hidden, input],
        vec![hidden, input],
        vec![hidden, input],
        vec![hidden, hidden],
        vec![hidden, hidden],
        vec![hidden, hidden],
        vec![hidden],
        vec![hidden],
        vec![hidden],
    ];
    (0..2)
        .flat_map(|_| shapes.clone())
        .map(|s| {
            let n = s.iter().product();
            Tensor::new(
                &s,
                rand_vec(rng, n).into_iter().map(|v| v * scale).collect(),
            )
            .unwrap()
        })
        .collect()
}

/// Worst deviation of each engine kernel from its naive oracle over
/// `instances` random small problems.
pub struct OracleReport {
    pub matmul: f64,
    pub conv2d: f64,
    pub gru_step: f64,
    pub bigru_naive: f64,
    pub bigru_unrolled: f64,
}

pub fn oracle_sweep(instances: usize, seed: u64) -> OracleReport {
    let mut r = OracleReport {
        matmul: 0.0,
        conv2d: 0.0,
        gru_step: 0.0,
        bigru_naive: 0.0,
        bigru_unrolled: 0.0,
    };
    for i in 0..instances {
        let mut rng = rng_for(seed, &[i as u64]);

        let (m, k, n) = (
            rng.gen_range(1..9),
            rng.gen_range(1..9),
            rng.gen_range(1..9),
        );
        let (a, b) = (
            rand_tensor(&mut rng, &[m, k]),
            rand_tensor(&mut rng, &[k, n]),
        );
        let mut g = Graph::new();
        let (av, bv) = (g.leaf(&a), g.leaf(&b));
        let c = g.matmul(av, bv).unwrap();
        r.matmul = r.matmul.max(max_abs_diff(
            g.value(c),
            &naive_matmul(a.data(), b.data(), m, k, n),
        ));

        let (ci, co) = (rng.gen_range(1..4), rng.gen_range(1..4));
        let (h, w) = (rng.gen_range(1..7), rng.gen_range(1..7));
        let kk = [1, 3, 5][rng.gen_range(0..3)];
        let batch = rng.gen_range(1..3);
        let x = rand_tensor(&mut rng, &[batch, ci, h, w]);
        let wt = rand_tensor(&mut rng, &[co, ci, kk, kk]);
        let bt = rand_tensor(&mut rng, &[co]);
        let mut g = Graph::new();
        let (xv, wv, bv) = (g.leaf(&x), g.leaf(&wt), g.leaf(&bt));
        let y = g.conv2d(xv, wv, bv).unwrap();
        let img = ci * h * w;
        let expect: Vec<f64> = (0..batch)
            .flat_map(|nb| {
                naive_conv(
                    &x.data()[nb * img..(nb + 1) * img],
                    wt.data(),
                    bt.data(),
                    ci,
                    co,
                    h,
                    w,
                    kk,
                )
            })
            .collect();
        r.conv2d = r.conv2d.max(max_abs_diff(g.value(y), &expect));

        let (d, hd) = (rng.gen_range(1..6), rng.gen_range(1..6));
        let p = rand_gru_params(&mut rng, d, hd, 1.0);
        let x = rand_tensor(&mut rng, &[d]);
        let h0 = rand_tensor(&mut rng, &[hd]);
        let mut g = Graph::new();
        let pv: Vec<Var> = p[..9].iter().map(|t| g.leaf(t)).collect();
        let (xv, hv) = (g.leaf(&x), g.leaf(&h0));
        let hn = gru_step(&mut g, &pv, xv, hv).unwrap();
        let flat: Vec<Vec<f64>> = p.iter().map(|t| t.data().to_vec()).collect();
        r.gru_step = r.gru_step.max(max_abs_diff(
            g.value(hn),
            &naive_gru_step(&flat[..9], x.data(), h0.data()),
        ));

        let steps = rng.gen_range(1..8);
        let batch = rng.gen_range(1..3);
        let x = rand_tensor(&mut rng, &[batch, steps, d]);
        let mut g = Graph::new();
        let pv: Vec<Var> = p.iter().map(|t| g.leaf(t)).collect();
        let xv = g.leaf(&x);
        let y = g.bigru(xv, &pv).unwrap();
        let per = steps * d;
        let naive: Vec<f64> = (0..batch)
            .flat_map(|nb| naive_bigru(&flat, &x.data()[nb * per..(nb + 1) * per], steps, hd))
            .collect();
        r.bigru_naive = r.bigru_naive.max(max_abs_diff(g.value(y), &naive));
        let fused = g.value(y).to_vec();
        for nb in 0..batch {
            let mut g = Graph::new();
            let pv: Vec<Var> = p.iter().map(|t| g.leaf(t)).collect();
            let xs = Tensor::new(&[steps, d], x.data()[nb * per..(nb + 1) * per].to_vec()).unwrap();
            let xv = g.leaf(&xs);
            let u = bigru_unrolled(&mut g, &pv, xv).unwrap();
            let out = steps * 2 * hd;
            r.bigru_unrolled = r
                .bigru_unrolled
                .max(max_abs_diff(g.value(u), &fused[nb * out..(nb + 1) * out]));
        }
    }
    r
}

/// `Σ c ⊙ y` with fixed random weights `c`, so every output element
/// contributes a distinct gradient.
pub fn weighted_sum(g: &mut Graph, y: Var, seed: u64) -> Var {
    let shape = g.shape(y).to_vec();
    let n = shape.iter().product();
    let c = rand_vec(&mut rng_for(seed, &[0xC0]), n);
    let cv = g.constant(&shape, c).unwrap();
    let m = g.mul(y, cv).unwrap();
    g.sum(m)
}

/// Values bounded away from zero so ReLU kinks never sit inside a
/// finite-difference stencil.
pub fn away_from_zero(t: &Tensor) -> Tensor {
    let d = t
        .data()
        .iter()
        .map(|&v| v.signum() * (0.2 + v.abs()))
        .collect();
    Tensor::new(t.shape(), d).unwrap()
}

pub const FD_STEP: f64 = 1e-5;

/// Name, worst relative error, entries compared, entries skipped at a kink.
pub type GradResult = (String, f64, usize, usize);

fn check(
    name: &str,
    x: &Tensor,
    f: impl Fn(&mut Graph, Var) -> sisrafnet::Result<Var>,
) -> GradResult {
    let idx: Vec<usize> = (0..x.len()).collect();
    (
        name.to_string(),
        finite_diff_check_at(f, x, FD_STEP, &idx).unwrap(),
        x.len(),
        0,
    )
}

/// Kink-aware check on `n` evenly spread entries of `x`; returns the worst
/// error and the number of entries whose stencil crossed a ReLU kink.
fn check_sampled(
    name: &str,
    x: &Tensor,
    n: usize,
    f: impl Fn(&mut Graph, Var) -> sisrafnet::Result<Var>,
) -> GradResult {
    let stride = (x.len() / n.max(1)).max(1);
    let idx: Vec<usize> = (0..x.len()).step_by(stride).collect();
    let r = finite_diff_report(f, x, FD_STEP, &idx).unwrap();
    (name.to_string(), r.max_rel_err, r.checked, r.kink_skipped)
}

/// Reduced end-to-end model: 16 pilot rows to 32 sub-carriers, GRU width 8.
pub fn reduced_model_config() -> ModelConfig {
    ModelConfig {
        input_freq: 16,
        input_sym: 2,
        output_freq: 32,
        output_sym: 4,
        front_channels: vec![4, 4, 4, 4, 4, 4, 4, 4],
        kernel: 3,
        gru_hidden: 8,
        head_channels: 3,
        tail_channels: vec![4, 3, 1],
    }
}

/// Redraws weights as uniform with variance `2/fan_in` and biases in
/// ±0.1, so activations keep unit scale through the ReLU stack and every
/// parameter has a gradient well above finite-difference round-off.
pub fn redraw_for_fd(model: &mut Model, rng: &mut Rng) {
    for t in model.params_mut() {
        let scale = match t.shape() {
            [_] => 0.1,
            s => (6.0 / s[1..].iter().product::<usize>() as f64).sqrt(),
        };
        let d: Vec<f64> = rand_vec(rng, t.len())
            .into_iter()
            .map(|v| scale * v)
            .collect();
        t.data_mut().copy_from_slice(&d);
    }
}

/// Relative finite-difference error of every graph op, every layer type and
/// the reduced model (input and every parameter tensor).
pub fn gradient_sweep(seed: u64) -> Vec<GradResult> {
    let mut rng = rng_for(seed, &[0x6EAD]);
    let mut out = Vec::new();
    let a = rand_tensor(&mut rng, &[3, 4]);
    let b = rand_tensor(&mut rng, &[4, 2]);
    let v4 = rand_tensor(&mut rng, &[4]);
    let other = rand_tensor(&mut rng, &[3, 4]);

    out.push(check("matmul/lhs", &a, |g, x| {
        let bv = g.leaf(&b);
        let y = g.matmul(x, bv)?;
        Ok(weighted_sum(g, y, 1))
    }));
    out.push(check("matmul/rhs", &b, |g, x| {
        let av = g.leaf(&a);
        let y = g.matmul(av, x)?;
        Ok(weighted_sum(g, y, 2))
    }));
    out.push(check("matmul/vector", &v4, |g, x| {
        let av = g.leaf(&a);
        let y = g.matmul(av, x)?;
        Ok(weighted_sum(g, y, 3))
    }));
    out.push(check("transpose", &a, |g, x| {
        let y = g.transpose(x)?;
        Ok(weighted_sum(g, y, 4))
    }));
    out.push(check("add", &a, |g, x| {
        let o = g.leaf(&other);
        let y = g.add(x, o)?;
        let y2 = g.mul(y, y)?;
        Ok(weighted_sum(g, y2, 5))
    }));
    out.push(check("sub", &a, |g, x| {
        let o = g.leaf(&other);
        let y = g.sub(o, x)?;
        let y2 = g.mul(y, y)?;
        Ok(weighted_sum(g, y2, 6))
    }));
    out.push(check("mul", &a, |g, x| {
        let o = g.leaf(&other);
        let y = g.mul(x, o)?;
        let y = g.mul(y, x)?;
        Ok(weighted_sum(g, y, 7))
    }));
    out.push(check("bias_add/input", &a, |g, x| {
        let bv = g.leaf(&v4);
        let y = g.bias_add(x, bv)?;
        let y = g.mul(y, y)?;
        Ok(weighted_sum(g, y, 8))
    }));
    out.push(check("bias_add/bias", &v4, |g, x| {
        let av = g.leaf(&a);
        let y = g.bias_add(av, x)?;
        let y = g.mul(y, y)?;
        Ok(weighted_sum(g, y, 9))
    }));
    out.push(check("affine", &a, |g, x| {
        let y = g.affine(x, -2.5, 0.3);
        let y = g.mul(y, y)?;
        Ok(weighted_sum(g, y, 10))
    }));
    let a_safe = away_from_zero(&a);
    for (name, act) in [
        ("relu", Activation::Relu),
        ("sigmoid", Activation::Sigmoid),
        ("tanh", Activation::Tanh),
        ("identity", Activation::Identity),
    ] {
        out.push(check(name, &a_safe, move |g, x| {
            let y = g.activation(x, act);
            Ok(weighted_sum(g, y, 11))
        }));
    }
    let cx = rand_tensor(&mut rng, &[2, 2, 5, 4]);
    let cw = rand_tensor(&mut rng, &[3, 2, 3, 3]);
    let cb = rand_tensor(&mut rng, &[3]);
    out.push(check("conv2d/input", &cx, |g, x| {
        let (w, b) = (g.leaf(&cw), g.leaf(&cb));
        let y = g.conv2d(x, w, b)?;
        Ok(weighted_sum(g, y, 12))
    }));
    out.push(check("conv2d/weight", &cw, |g, x| {
        let (xv, b) = (g.leaf(&cx), g.leaf(&cb));
        let y = g.conv2d(xv, x, b)?;
        Ok(weighted_sum(g, y, 13))
    }));
    out.push(check("conv2d/bias", &cb, |g, x| {
        let (xv, w) = (g.leaf(&cx), g.leaf(&cw));
        let y = g.conv2d(xv, w, x)?;
        Ok(weighted_sum(g, y, 14))
    }));
    let t3 = rand_tensor(&mut rng, &[2, 3, 4]);
    out.push(check("reshape", &t3, |g, x| {
        let y = g.reshape(x, &[6, 4])?;
        let m = g.leaf(&b);
        let y = g.matmul(y, m)?;
        Ok(weighted_sum(g, y, 15))
    }));
    out.push(check("permute", &t3, |g, x| {
        let y = g.permute(x, &[2, 0, 1])?;
        let y = g.reshape(y, &[4, 6])?;
        let y = g.mul(y, y)?;
        Ok(weighted_sum(g, y, 16))
    }));
    out.push(check("concat", &a, |g, x| {
        let o = g.leaf(&other);
        let y = g.concat(&[x, o, x])?;
        let y = g.mul(y, y)?;
        Ok(weighted_sum(g, y, 17))
    }));
    out.push(check("stack", &a, |g, x| {
        let o = g.leaf(&other);
        let y = g.stack(&[o, x, x])?;
        let y = g.mul(y, y)?;
        Ok(weighted_sum(g, y, 18))
    }));
    out.push(check("row", &a, |g, x| {
        let r0 = g.row(x, 2)?;
        let r1 = g.row(x, 0)?;
        let y = g.mul(r0, r1)?;
        Ok(weighted_sum(g, y, 19))
    }));
    out.push(check("sum", &a, |g, x| {
        let y = g.mul(x, x)?;
        Ok(g.sum(y))
    }));
    out.push(check("mean", &a, |g, x| {
        let y = g.mul(x, x)?;
        let y = g.mul(y, x)?;
        Ok(g.mean(y))
    }));

    let (d, hd, steps) = (3, 4, 5);
    let gp = rand_gru_params(&mut rng, d, hd, 0.8);
    let gx = rand_tensor(&mut rng, &[2, steps, d]);
    out.push(check("bigru/input", &gx, |g, x| {
        let pv: Vec<Var> = gp.iter().map(|t| g.leaf(t)).collect();
        let y = g.bigru(x, &pv)?;
        Ok(weighted_sum(g, y, 20))
    }));
    for k in 0..gp.len() {
        out.push(check(&format!("bigru/param{k}"), &gp[k], |g, x| {
            let mut pv: Vec<Var> = gp.iter().map(|t| g.leaf(t)).collect();
            pv[k] = x;
            let xv = g.leaf(&gx);
            let y = g.bigru(xv, &pv)?;
            Ok(weighted_sum(g, y, 21))
        }));
    }
    let h0 = rand_tensor(&mut rng, &[hd]);
    let x1 = rand_tensor(&mut rng, &[d]);
    out.push(check("gru_step/state", &h0, |g, h| {
        let pv: Vec<Var> = gp[..9].iter().map(|t| g.leaf(t)).collect();
        let xv = g.leaf(&x1);
        let y = gru_step(g, &pv, xv, h)?;
        Ok(weighted_sum(g, y, 22))
    }));

    // Layers.
    let conv = Conv2d::new(2, 3, 3, Activation::Tanh, 5).unwrap();
    out.push(check("layer/conv2d", &cx, |g, x| {
        let p = conv.bind(g);
        let y = conv.forward(g, x, &p)?;
        Ok(weighted_sum(g, y, 23))
    }));
    let dense = Dense::new(4, 3, Activation::Sigmoid, 6).unwrap();
    out.push(check("layer/dense", &other, |g, x| {
        let p = dense.bind(g);
        let y = dense.forward(g, x, &p)?;
        Ok(weighted_sum(g, y, 24))
    }));
    for (name, axis) in [
        ("layer/bigru_height", RecurrenceAxis::Height),
        ("layer/bigru_width", RecurrenceAxis::Width),
    ] {
        let (c, h, w) = (2, 5, 3);
        let input = if axis == RecurrenceAxis::Height {
            c * w
        } else {
            c * h
        };
        let gru = BiGru::new(input, 3, axis, 7).unwrap();
        let fx = rand_tensor(&mut rng, &[2, c, h, w]);
        out.push(check(name, &fx, |g, x| {
            let p = gru.bind(g);
            let y = gru.forward_map(g, x, &p)?;
            Ok(weighted_sum(g, y, 25))
        }));
    }

    // Reduced end-to-end model under the training loss: input and a spread
    // of entries of every parameter tensor.
    let mut model = Model::build(reduced_model_config(), seed).unwrap();
    redraw_for_fd(&mut model, &mut rng);
    let c = model.config().clone();
    let mx = rand_tensor(&mut rng, &[2, 1, c.input_freq, c.input_sym]);
    let target = rand_tensor(&mut rng, &[2, 1, c.output_freq, c.output_sym]);
    out.push(check_sampled("model/input", &mx, mx.len(), |g, x| {
        let p = model.bind(g);
        let y = model.forward(g, x, &p)?;
        let t = g.leaf(&target);
        mse_loss(g, y, t)
    }));
    let params: Vec<Tensor> = model.params().into_iter().cloned().collect();
    for (k, pt) in params.iter().enumerate() {
        out.push(check_sampled(&format!("model/param{k}"), pt, 12, |g, x| {
            let mut p = model.bind(g);
            p[k] = x;
            let xv = g.leaf(&mx);
            let y = model.forward(g, xv, &p)?;
            let t = g.leaf(&target);
            mse_loss(g, y, t)
        }));
    }
    out
}

/// Training loss of the reduced model against a random target, checked by
/// central differences at `count` randomly chosen parameter entries whose
/// stencil stays on one linear piece of every ReLU. Returns the worst error
/// and how many draws were set aside at a kink.
pub fn model_loss_check(seed: u64, count: usize) -> (f64, usize) {
    let mut rng = rng_for(seed, &[0x1055]);
    let mut model = Model::build(reduced_model_config(), seed).unwrap();
    redraw_for_fd(&mut model, &mut rng);
    let c = model.config().clone();
    let x = rand_tensor(&mut rng, &[3, 1, c.input_freq, c.input_sym]);
    let t = rand_tensor(&mut rng, &[3, 1, c.output_freq, c.output_sym]);
    let loss = |m: &Model| -> (f64, Vec<bool>, Vec<Vec<f64>>) {
        let mut g = Graph::new();
        let p = m.bind(&mut g);
        let (xv, tv) = (g.leaf(&x), g.leaf(&t));
        let y = m.forward(&mut g, xv, &p).unwrap();
        let l = mse_loss(&mut g, y, tv).unwrap();
        let value = g.value(l)[0];
        let pattern = g.relu_pattern();
        g.backward(l).unwrap();
        (
            value,
            pattern,
            p.iter()
                .map(|&v| g.grad(v).map(<[f64]>::to_vec).unwrap_or_default())
                .collect(),
        )
    };
    let (_, base, ad) = loss(&model);
    let sizes: Vec<usize> = model.params().iter().map(|t| t.len()).collect();
    let total: usize = sizes.iter().sum();
    let (mut worst, mut checked, mut skipped) = (0.0f64, 0, 0);
    while checked < count {
        let mut flat = rng.gen_range(0..total);
        let mut k = 0;
        while flat >= sizes[k] {
            flat -= sizes[k];
            k += 1;
        }
        let orig = model.params()[k].data()[flat];
        model.params_mut()[k].data_mut()[flat] = orig + FD_STEP;
        let (up, p_up, _) = loss(&model);
        model.params_mut()[k].data_mut()[flat] = orig - FD_STEP;
        let (down, p_down, _) = loss(&model);
        model.params_mut()[k].data_mut()[flat] = orig;
        if p_up != base || p_down != base {
            skipped += 1;
            continue;
        }
        let fd = (up - down) / (2.0 * FD_STEP);
        let a = ad[k][flat];
        worst = worst.max((a - fd).abs() / (a.abs() + fd.abs()).max(1e-8));
        checked += 1;
    }
    (worst, skipped)
}

/// Grid of 32 sub-carriers × 14 symbols, small enough for many trainings.
pub fn tiny_sim_config() -> sisrafnet::channel::SimConfig {
    sisrafnet::channel::SimConfig {
        subcarriers: 32,
        slots_per_realization: 4,
        ..Default::default()
    }
}

/// Model for P1 on the tiny grid.
pub fn tiny_model_config() -> ModelConfig {
    ModelConfig {
        output_sym: 14,
        ..reduced_model_config()
    }
}

/// Two realizations per standard setting for training, one for validation.
pub fn tiny_train_data(seed: u64) -> sisrafnet::train::TrainData {
    use sisrafnet::channel::{ChannelRealization, ChannelSetting};
    let base = tiny_sim_config();
    let mut data = sisrafnet::train::TrainData::default();
    for (i, s) in ChannelSetting::standard_grid().iter().enumerate() {
        let profile = s.profile.profile().unwrap();
        for r in 0..3u64 {
            let cfg = s.sim_config(&base, seed.wrapping_mul(1000) + 10 * i as u64 + r);
            let slots = ChannelRealization::generate(&profile, &cfg).unwrap().slots;
            if r < 2 {
                data.train.extend(slots);
            } else {
                data.val.extend(slots);
            }
        }
    }
    data
}

/// Operation count written out layer by layer from the architecture:
/// convs `2·cells·Cin·Cout·k²`, dense `2·rows·in·out`, BiGRU per step and
/// direction `3·2·(H·D + H·H + H)` for the gate affines plus 8 elementwise
/// ops per unit.
pub fn hand_flops(c: &ModelConfig) -> (u64, u64) {
    let k2 = (c.kernel * c.kernel) as u64;
    let pilot_cells = (c.input_freq * c.input_sym) as u64;
    let grid_cells = (c.output_freq * c.output_sym) as u64;
    let chain = |first: usize, chans: &[usize]| -> u64 {
        let mut prev = first as u64;
        let mut s = 0;
        for &ch in chans {
            s += prev * ch as u64;
            prev = ch as u64;
        }
        s
    };
    let front_macs = pilot_cells * k2 * chain(1, &c.front_channels);
    let tail_macs = grid_cells * k2 * chain(c.head_channels, &c.tail_channels);
    let h = c.gru_hidden as u64;
    let steps = c.input_freq as u64;
    let d1 = (*c.front_channels.last().unwrap() * c.input_sym) as u64;
    let d2 = 2 * h;
    let gru_macs = |d: u64| steps * 2 * 3 * (h * d + h * h);
    let gru_flops = |d: u64| steps * 2 * (3 * 2 * (h * d + h * h + h) + 8 * h);
    let head_out = ((c.output_freq / c.input_freq) * c.output_sym * c.head_channels) as u64;
    let dense_macs = steps * d2 * head_out;
    let macs = front_macs + tail_macs + gru_macs(d1) + gru_macs(d2) + dense_macs;
    let flops = 2 * (front_macs + tail_macs + dense_macs) + gru_flops(d1) + gru_flops(d2);
    (macs, flops)
}

pub fn realization(
    profile: &ChannelProfile,
    ds: f64,
    kmh: f64,
    slots: usize,
    seed: u64,
) -> ChannelRealization {
    let cfg = SimConfig {
        delay_spread_s: ds,
        velocity_mps: kmh_to_mps(kmh),
        slots_per_realization: slots,
        seed,
        ..SimConfig::default()
    };
    ChannelRealization::generate(profile, &cfg).unwrap()
}

/// `|Σ a·conj(b)| / √(Σ|a|² Σ|b|²)` over paired entries.
pub fn corr(pairs: impl Iterator<Item = (Complex64, Complex64)>) -> f64 {
    let (mut c, mut ea, mut eb) = (Complex64::new(0.0, 0.0), 0.0, 0.0);
    for (a, b) in pairs {
        c += a * b.conj();
        ea += a.norm_sqr();
        eb += b.norm_sqr();
    }
    c.norm() / (ea * eb).sqrt()
}

pub fn freq_corr(g: &ComplexGrid, lag: usize) -> f64 {
    corr(
        (0..g.rows() - lag)
            .flat_map(|k| (0..g.cols()).map(move |t| (g.get(k, t), g.get(k + lag, t)))),
    )
}

pub fn slot_corr(r: &ChannelRealization) -> f64 {
    let n = r.slots.len() - 1;
    (0..n)
        .map(|s| {
            corr(
                r.slots[s]
                    .data()
                    .iter()
                    .copied()
                    .zip(r.slots[s + 1].data().iter().copied()),
            )
        })
        .sum::<f64>()
        / n as f64
}

/// Worst deviation of two equal static taps from `|H(f)|² = 1 + cos(2π f τ)`
/// and of `|H|` at the null bin, over a few null positions.
pub fn two_tap_error() -> f64 {
    use sisrafnet::channel::{freq_response, PathDraw};
    let p = ChannelProfile::custom(vec![0.0, 1.0], vec![0.5, 0.5]).unwrap();
    let mut worst: f64 = 0.0;
    for null_bin in [5usize, 10, 37] {
        let base = SimConfig::default();
        let tau = 1.0 / (2.0 * null_bin as f64 * base.subcarrier_spacing_hz);
        let cfg = SimConfig {
            delay_spread_s: tau,
            ..base
        };
        let g = freq_response(&p, &cfg, &PathDraw::static_paths(&p), 0);
        for k in 0..g.rows() {
            let f = k as f64 * cfg.subcarrier_spacing_hz;
            let want = 1.0 + (2.0 * std::f64::consts::PI * f * tau).cos();
            for t in 0..g.cols() {
                worst = worst.max((g.get(k, t).norm_sqr() - want).abs());
            }
        }
        worst = worst.max(g.get(null_bin, 0).norm());
    }
    worst
}

/// Mean lag-8 frequency correlation over `seeds` matched realizations.
pub fn mean_freq_corr(profile: &ChannelProfile, ds: f64, seeds: u64) -> f64 {
    (0..seeds)
        .map(|s| freq_corr(&realization(profile, ds, 3.0, 1, s).slots[0], 8))
        .sum::<f64>()
        / seeds as f64
}

/// Mean slot-to-slot correlation over `seeds` matched realizations.
pub fn mean_slot_corr(profile: &ChannelProfile, kmh: f64, seeds: u64) -> f64 {
    (0..seeds)
        .map(|s| slot_corr(&realization(profile, 300e-9, kmh, 4, s)))
        .sum::<f64>()
        / seeds as f64
}
