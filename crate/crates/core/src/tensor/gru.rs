//! Fused bidirectional GRU with hand-derived backpropagation through time.
//!
//! Gate convention, per direction and step:
//!
//! ```text
//! z  = σ(W_z x + U_z h_prev + b_z)
//! r  = σ(W_r x + U_r h_prev + b_r)
//! h̃  = tanh(W_h x + U_h (r ⊙ h_prev) + b_h)
//! h  = (1 − z) ⊙ h_prev + z ⊙ h̃
//! ```
//!
//! The forward direction scans positions `0..F`, the backward direction
//! `F−1..=0`; both start from a zero state.

use super::graph::{Graph, Var};
use super::kernels::{gemm, sigmoid, Mat};
use crate::error::{Error, Result};

/// `W_z, W_r, W_h, U_z, U_r, U_h, b_z, b_r, b_h`.
pub const GRU_PARAMS_PER_DIRECTION: usize = 9;

#[derive(Default)]
struct DirCache {
    z: Vec<f64>,
    r: Vec<f64>,
    hc: Vec<f64>,
    h: Vec<f64>,
}

pub(crate) struct BiGruNode {
    x: Var,
    params: Vec<Var>,
    batch: usize,
    steps: usize,
    input: usize,
    hidden: usize,
    cache: [DirCache; 2],
}

impl BiGruNode {
    pub fn inputs(&self) -> Vec<Var> {
        let mut v = vec![self.x];
        v.extend_from_slice(&self.params);
        v
    }

    fn step_order(&self, dir: usize) -> Box<dyn Iterator<Item = usize>> {
        if dir == 0 {
            Box::new(0..self.steps)
        } else {
            Box::new((0..self.steps).rev())
        }
    }

    /// Position whose state feeds step `f` in direction `dir`, if any.
    fn prev_pos(&self, dir: usize, f: usize) -> Option<usize> {
        if dir == 0 {
            f.checked_sub(1)
        } else if f + 1 < self.steps {
            Some(f + 1)
        } else {
            None
        }
    }
}

fn check_param_shapes(g: &Graph, params: &[Var], input: usize) -> Result<usize> {
    if params.len() != 2 * GRU_PARAMS_PER_DIRECTION {
        return Err(Error::Config(format!(
            "bigru expects {} parameter tensors, got {}",
            2 * GRU_PARAMS_PER_DIRECTION,
            params.len()
        )));
    }
    let hidden = g.shape(params[0])[0];
    for dir in 0..2 {
        let p = &params[dir * GRU_PARAMS_PER_DIRECTION..(dir + 1) * GRU_PARAMS_PER_DIRECTION];
        let expected: [&[usize]; 9] = [
            &[hidden, input],
            &[hidden, input],
            &[hidden, input],
            &[hidden, hidden],
            &[hidden, hidden],
            &[hidden, hidden],
            &[hidden],
            &[hidden],
            &[hidden],
        ];
        for (v, want) in p.iter().zip(expected) {
            if g.shape(*v) != want {
                return Err(Error::Config(format!(
                    "bigru parameter shape {:?}, expected {:?} (hidden {hidden}, input {input})",
                    g.shape(*v),
                    want
                )));
            }
        }
    }
    Ok(hidden)
}

pub(crate) fn forward(
    g: &Graph,
    x: Var,
    params: &[Var],
) -> Result<(Vec<usize>, Vec<f64>, BiGruNode)> {
    let sx = g.shape(x).to_vec();
    let (batch, steps, input, batched) = match sx[..] {
        [f, d] => (1, f, d, false),
        [b, f, d] => (b, f, d, true),
        _ => {
            return Err(Error::Shape {
                op: "bigru",
                lhs: sx,
                rhs: vec![],
            })
        }
    };
    let hidden = check_param_shapes(g, params, input)?;
    let mut node = BiGruNode {
        x,
        params: params.to_vec(),
        batch,
        steps,
        input,
        hidden,
        cache: Default::default(),
    };
    let (bf, h2) = (batch * steps, 2 * hidden);
    let xv = g.value(x);
    let mut out = vec![0.0; bf * h2];

    for dir in 0..2 {
        let p = |i: usize| g.value(params[dir * GRU_PARAMS_PER_DIRECTION + i]);
        let mut xg = [
            vec![0.0; bf * hidden],
            vec![0.0; bf * hidden],
            vec![0.0; bf * hidden],
        ];
        for (gate, buf) in xg.iter_mut().enumerate() {
            gemm(
                1.0,
                Mat::new(xv, bf, input),
                Mat::t(p(gate), hidden, input),
                0.0,
                buf,
            );
        }
        let cache = &mut node.cache[dir];
        cache.z = vec![0.0; bf * hidden];
        cache.r = vec![0.0; bf * hidden];
        cache.hc = vec![0.0; bf * hidden];
        cache.h = vec![0.0; bf * hidden];

        let mut h_prev = vec![0.0; batch * hidden];
        let mut az = vec![0.0; batch * hidden];
        let mut ar = vec![0.0; batch * hidden];
        let mut ah = vec![0.0; batch * hidden];
        let mut rh = vec![0.0; batch * hidden];
        let order: Vec<usize> = if dir == 0 {
            (0..steps).collect()
        } else {
            (0..steps).rev().collect()
        };
        for f in order {
            for b in 0..batch {
                let row = (b * steps + f) * hidden;
                for j in 0..hidden {
                    az[b * hidden + j] = xg[0][row + j] + p(6)[j];
                    ar[b * hidden + j] = xg[1][row + j] + p(7)[j];
                    ah[b * hidden + j] = xg[2][row + j] + p(8)[j];
                }
            }
            gemm(
                1.0,
                Mat::new(&h_prev, batch, hidden),
                Mat::t(p(3), hidden, hidden),
                1.0,
                &mut az,
            );
            gemm(
                1.0,
                Mat::new(&h_prev, batch, hidden),
                Mat::t(p(4), hidden, hidden),
                1.0,
                &mut ar,
            );
            for i in 0..batch * hidden {
                az[i] = sigmoid(az[i]);
                ar[i] = sigmoid(ar[i]);
                rh[i] = ar[i] * h_prev[i];
            }
            gemm(
                1.0,
                Mat::new(&rh, batch, hidden),
                Mat::t(p(5), hidden, hidden),
                1.0,
                &mut ah,
            );
            for b in 0..batch {
                let row = (b * steps + f) * hidden;
                for j in 0..hidden {
                    let i = b * hidden + j;
                    let (z, hc) = (az[i], ah[i].tanh());
                    let h = (1.0 - z) * h_prev[i] + z * hc;
                    cache.z[row + j] = z;
                    cache.r[row + j] = ar[i];
                    cache.hc[row + j] = hc;
                    cache.h[row + j] = h;
                    out[(b * steps + f) * h2 + dir * hidden + j] = h;
                    h_prev[i] = h;
                }
            }
        }
    }
    let shape = if batched {
        vec![batch, steps, h2]
    } else {
        vec![steps, h2]
    };
    Ok((shape, out, node))
}

pub(crate) fn backward(g: &Graph, node: &BiGruNode, gout: &[f64]) -> Vec<(Var, Vec<f64>)> {
    let (batch, steps, input, hidden) = (node.batch, node.steps, node.input, node.hidden);
    let (bf, h2, bh) = (batch * steps, 2 * hidden, batch * hidden);
    let xv = g.value(node.x);
    let mut dx = vec![0.0; bf * input];
    let mut grads = Vec::with_capacity(19);

    for dir in 0..2 {
        let base = dir * GRU_PARAMS_PER_DIRECTION;
        let p = |i: usize| g.value(node.params[base + i]);
        let c = &node.cache[dir];
        let mut dxg = [
            vec![0.0; bf * hidden],
            vec![0.0; bf * hidden],
            vec![0.0; bf * hidden],
        ];
        let mut du = [
            vec![0.0; hidden * hidden],
            vec![0.0; hidden * hidden],
            vec![0.0; hidden * hidden],
        ];
        let mut dh_carry = vec![0.0; bh];
        let mut hp = vec![0.0; bh];
        let mut rh = vec![0.0; bh];
        let (mut daz, mut dar, mut dah) = (vec![0.0; bh], vec![0.0; bh], vec![0.0; bh]);
        let mut drh = vec![0.0; bh];
        let mut dhp = vec![0.0; bh];
        let order: Vec<usize> = node.step_order(dir).collect();
        for &f in order.iter().rev() {
            let prev = node.prev_pos(dir, f);
            for b in 0..batch {
                let row = (b * steps + f) * hidden;
                for j in 0..hidden {
                    let i = b * hidden + j;
                    let hprev = prev.map_or(0.0, |q| c.h[(b * steps + q) * hidden + j]);
                    let (z, r, hc) = (c.z[row + j], c.r[row + j], c.hc[row + j]);
                    let dh = gout[(b * steps + f) * h2 + dir * hidden + j] + dh_carry[i];
                    let dz = dh * (hc - hprev);
                    let dhc = dh * z;
                    hp[i] = hprev;
                    rh[i] = r * hprev;
                    dhp[i] = dh * (1.0 - z);
                    dah[i] = dhc * (1.0 - hc * hc);
                    daz[i] = dz * z * (1.0 - z);
                }
            }
            gemm(
                1.0,
                Mat::t(&dah, batch, hidden),
                Mat::new(&rh, batch, hidden),
                1.0,
                &mut du[2],
            );
            gemm(
                1.0,
                Mat::new(&dah, batch, hidden),
                Mat::new(p(5), hidden, hidden),
                0.0,
                &mut drh,
            );
            for b in 0..batch {
                let row = (b * steps + f) * hidden;
                for j in 0..hidden {
                    let i = b * hidden + j;
                    let r = c.r[row + j];
                    let dr = drh[i] * hp[i];
                    dhp[i] += drh[i] * r;
                    dar[i] = dr * r * (1.0 - r);
                    dxg[0][row + j] = daz[i];
                    dxg[1][row + j] = dar[i];
                    dxg[2][row + j] = dah[i];
                }
            }
            gemm(
                1.0,
                Mat::t(&daz, batch, hidden),
                Mat::new(&hp, batch, hidden),
                1.0,
                &mut du[0],
            );
            gemm(
                1.0,
                Mat::t(&dar, batch, hidden),
                Mat::new(&hp, batch, hidden),
                1.0,
                &mut du[1],
            );
            gemm(
                1.0,
                Mat::new(&daz, batch, hidden),
                Mat::new(p(3), hidden, hidden),
                1.0,
                &mut dhp,
            );
            gemm(
                1.0,
                Mat::new(&dar, batch, hidden),
                Mat::new(p(4), hidden, hidden),
                1.0,
                &mut dhp,
            );
            std::mem::swap(&mut dh_carry, &mut dhp);
        }
        for gate in 0..3 {
            let mut dw = vec![0.0; hidden * input];
            gemm(
                1.0,
                Mat::t(&dxg[gate], bf, hidden),
                Mat::new(xv, bf, input),
                0.0,
                &mut dw,
            );
            gemm(
                1.0,
                Mat::new(&dxg[gate], bf, hidden),
                Mat::new(p(gate), hidden, input),
                1.0,
                &mut dx,
            );
            let mut db = vec![0.0; hidden];
            for row in dxg[gate].chunks(hidden) {
                db.iter_mut().zip(row).for_each(|(a, b)| *a += b);
            }
            grads.push((node.params[base + gate], dw));
            grads.push((node.params[base + 6 + gate], db));
        }
        for (gate, d) in du.into_iter().enumerate() {
            grads.push((node.params[base + 3 + gate], d));
        }
    }
    grads.push((node.x, dx));
    grads
}
