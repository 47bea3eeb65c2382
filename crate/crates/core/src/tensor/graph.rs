use super::gru::{self, BiGruNode};
use super::kernels::{self, gemm, ConvGeom, Mat};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

/// Elementwise nonlinearities with registered derivatives.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
    Tanh,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => kernels::sigmoid(x),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the activation output `y`.
    /// Relu at exactly 0 has derivative 0.
    fn deriv_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

pub(crate) enum Op {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        m: usize,
        k: usize,
        n: usize,
    },
    Transpose {
        a: Var,
        rows: usize,
        cols: usize,
    },
    Add {
        a: Var,
        b: Var,
    },
    Sub {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    BiasAdd {
        a: Var,
        bias: Var,
    },
    Affine {
        a: Var,
        scale: f64,
    },
    Act {
        a: Var,
        act: Activation,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        geom: ConvGeom,
        batch: usize,
    },
    Reshape {
        a: Var,
    },
    Permute {
        a: Var,
        perm: Vec<usize>,
    },
    Concat {
        parts: Vec<Var>,
    },
    Stack {
        parts: Vec<Var>,
    },
    Row {
        a: Var,
        index: usize,
    },
    Sum {
        a: Var,
    },
    Mean {
        a: Var,
    },
    BiGru(Box<BiGruNode>),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul { .. } => "matmul",
            Op::Transpose { .. } => "transpose",
            Op::Add { .. } => "add",
            Op::Sub { .. } => "sub",
            Op::Mul { .. } => "mul",
            Op::BiasAdd { .. } => "bias_add",
            Op::Affine { .. } => "affine",
            Op::Act { .. } => "activation",
            Op::Conv2d { .. } => "conv2d",
            Op::Reshape { .. } => "reshape",
            Op::Permute { .. } => "permute",
            Op::Concat { .. } => "concat",
            Op::Stack { .. } => "stack",
            Op::Row { .. } => "row",
            Op::Sum { .. } => "sum",
            Op::Mean { .. } => "mean",
            Op::BiGru(_) => "bigru",
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul { a, b, .. } | Op::Add { a, b } | Op::Sub { a, b } | Op::Mul { a, b } => {
                vec![*a, *b]
            }
            Op::BiasAdd { a, bias } => vec![*a, *bias],
            Op::Transpose { a, .. }
            | Op::Affine { a, .. }
            | Op::Act { a, .. }
            | Op::Reshape { a }
            | Op::Permute { a, .. }
            | Op::Row { a, .. }
            | Op::Sum { a }
            | Op::Mean { a } => vec![*a],
            Op::Conv2d { x, w, b, .. } => vec![*x, *w, *b],
            Op::Concat { parts } | Op::Stack { parts } => parts.clone(),
            Op::BiGru(node) => node.inputs(),
        }
    }
}

pub(crate) struct Node {
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
    pub op: Op,
    pub requires_grad: bool,
}

/// Tape of executed operations for one forward pass.
///
/// Nodes are appended in execution order, so the tape is topologically
/// sorted by construction.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    /// First op that turned finite inputs into a non-finite value (debug builds).
    nonfinite_origin: Option<&'static str>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    /// In debug builds, fails if any op produced NaN/Inf from finite inputs.
    /// Release builds skip the scan and always succeed.
    pub fn check_finite(&self) -> Result<()> {
        match self.nonfinite_origin {
            Some(op) => Err(Error::Numeric(format!(
                "{op} produced a non-finite value from finite inputs"
            ))),
            None => Ok(()),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a tensor as a leaf; it is differentiated iff `requires_grad` is set.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push_raw(
            t.shape().to_vec(),
            t.data().to_vec(),
            Op::Leaf,
            t.requires_grad(),
        )
    }

    pub fn constant(&mut self, shape: &[usize], data: Vec<f64>) -> Result<Var> {
        let t = Tensor::new(shape, data)?;
        Ok(self.push_raw(t.shape.clone(), t.data, Op::Leaf, false))
    }

    /// Active flag of every ReLU output element on the tape, in tape order.
    /// Two forward passes of the same function took the same linear piece
    /// iff their patterns are equal.
    pub fn relu_pattern(&self) -> Vec<bool> {
        self.nodes
            .iter()
            .filter(|n| {
                matches!(
                    n.op,
                    Op::Act {
                        act: Activation::Relu,
                        ..
                    }
                )
            })
            .flat_map(|n| n.value.iter().map(|&y| y > 0.0))
            .collect()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor::new(&n.shape, n.value.clone()).expect("graph node shape is consistent")
    }

    fn push_raw(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, requires_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op) -> Var {
        let inputs = op.inputs();
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        if cfg!(debug_assertions) {
            let inputs_finite = inputs
                .iter()
                .all(|v| self.nodes[v.0].value.iter().all(|x| x.is_finite()));
            if inputs_finite
                && self.nonfinite_origin.is_none()
                && !value.iter().all(|x| x.is_finite())
            {
                self.nonfinite_origin = Some(op.name());
            }
        }
        self.push_raw(shape, value, op, requires_grad)
    }

    /// `a [m×k] · b [k×n]`, or `a [m×k] · b [k]` giving `[m]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let shape_err = || Error::Shape {
            op: "matmul",
            lhs: sa.clone(),
            rhs: sb.clone(),
        };
        if sa.len() != 2 {
            return Err(shape_err());
        }
        let (m, k) = (sa[0], sa[1]);
        let (n, out_shape) = match sb.as_slice() {
            [kb] if *kb == k => (1, vec![m]),
            [kb, n] if *kb == k => (*n, vec![m, *n]),
            _ => return Err(shape_err()),
        };
        let mut out = vec![0.0; m * n];
        gemm(
            1.0,
            Mat::new(self.value(a), m, k),
            Mat::new(self.value(b), k, n),
            0.0,
            &mut out,
        );
        Ok(self.push(out_shape, out, Op::MatMul { a, b, m, k, n }))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a).to_vec();
        let [rows, cols] = s[..] else {
            return Err(Error::Shape {
                op: "transpose",
                lhs: s,
                rhs: vec![],
            });
        };
        let src = self.value(a);
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                out[c * rows + r] = src[r * cols + c];
            }
        }
        Ok(self.push(vec![cols, rows], out, Op::Transpose { a, rows, cols }))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<Vec<usize>> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::Shape {
                op,
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        Ok(sa.to_vec())
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        self.value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.same_shape("add", a, b)?;
        let out = self.zip_with(a, b, |x, y| x + y);
        Ok(self.push(shape, out, Op::Add { a, b }))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.same_shape("sub", a, b)?;
        let out = self.zip_with(a, b, |x, y| x - y);
        Ok(self.push(shape, out, Op::Sub { a, b }))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.same_shape("mul", a, b)?;
        let out = self.zip_with(a, b, |x, y| x * y);
        Ok(self.push(shape, out, Op::Mul { a, b }))
    }

    /// Adds `bias [n]` to every length-`n` row along the last axis of `a`.
    pub fn bias_add(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(bias).to_vec());
        if sb.len() != 1 || sa.last() != Some(&sb[0]) {
            return Err(Error::Shape {
                op: "bias_add",
                lhs: sa,
                rhs: sb,
            });
        }
        let n = sb[0];
        let bv = self.value(bias);
        let out: Vec<f64> = self
            .value(a)
            .iter()
            .enumerate()
            .map(|(i, &x)| x + bv[i % n])
            .collect();
        Ok(self.push(sa, out, Op::BiasAdd { a, bias }))
    }

    /// `scale · a + shift`.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let out = self.value(a).iter().map(|&x| scale * x + shift).collect();
        let shape = self.shape(a).to_vec();
        self.push(shape, out, Op::Affine { a, scale })
    }

    pub fn activation(&mut self, a: Var, act: Activation) -> Var {
        let out = self.value(a).iter().map(|&x| act.apply(x)).collect();
        let shape = self.shape(a).to_vec();
        self.push(shape, out, Op::Act { a, act })
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.activation(a, Activation::Relu)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.activation(a, Activation::Sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.activation(a, Activation::Tanh)
    }

    /// Same-padded cross-correlation plus per-channel bias.
    ///
    /// `x` is `[C_in×H×W]` or batched `[N×C_in×H×W]`; `w` is
    /// `[C_out×C_in×kh×kw]` with odd `kh`, `kw`; `b` is `[C_out]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (sx, sw, sb) = (
            self.shape(x).to_vec(),
            self.shape(w).to_vec(),
            self.shape(b).to_vec(),
        );
        let [c_out, c_in, kh, kw] = sw[..] else {
            return Err(Error::Shape {
                op: "conv2d",
                lhs: sx,
                rhs: sw,
            });
        };
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::Config(format!(
                "conv2d kernel {kh}×{kw} must have odd sizes for same padding"
            )));
        }
        let (batch, c, h, wd, batched) = match sx[..] {
            [c, h, wd] => (1, c, h, wd, false),
            [n, c, h, wd] => (n, c, h, wd, true),
            _ => {
                return Err(Error::Shape {
                    op: "conv2d",
                    lhs: sx,
                    rhs: sw,
                })
            }
        };
        if c != c_in || sb != [c_out] {
            return Err(Error::Shape {
                op: "conv2d",
                lhs: sx,
                rhs: sw,
            });
        }
        let geom = ConvGeom {
            c_in,
            c_out,
            h,
            w: wd,
            kh,
            kw,
        };
        let hw = geom.hw();
        let mut out = vec![0.0; batch * c_out * hw];
        let mut col = vec![0.0; geom.col_rows() * hw];
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        for n in 0..batch {
            kernels::im2col(&xv[n * c_in * hw..(n + 1) * c_in * hw], &geom, &mut col);
            let y = &mut out[n * c_out * hw..(n + 1) * c_out * hw];
            for (co, row) in y.chunks_mut(hw).enumerate() {
                row.fill(bv[co]);
            }
            gemm(
                1.0,
                Mat::new(wv, c_out, geom.col_rows()),
                Mat::new(&col, geom.col_rows(), hw),
                1.0,
                y,
            );
        }
        let shape = if batched {
            vec![batch, c_out, h, wd]
        } else {
            vec![c_out, h, wd]
        };
        Ok(self.push(
            shape,
            out,
            Op::Conv2d {
                x,
                w,
                b,
                geom,
                batch,
            },
        ))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        if shape.is_empty()
            || shape.contains(&0)
            || shape.iter().product::<usize>() != self.value(a).len()
        {
            return Err(Error::Shape {
                op: "reshape",
                lhs: self.shape(a).to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let value = self.value(a).to_vec();
        Ok(self.push(shape.to_vec(), value, Op::Reshape { a }))
    }

    /// Axis permutation: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Result<Var> {
        let s = self.shape(a).to_vec();
        let mut seen = vec![false; s.len()];
        let valid = perm.len() == s.len()
            && perm
                .iter()
                .all(|&p| p < s.len() && !std::mem::replace(&mut seen[p], true));
        if !valid {
            return Err(Error::Shape {
                op: "permute",
                lhs: s,
                rhs: perm.to_vec(),
            });
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| s[p]).collect();
        let mut out = vec![0.0; self.value(a).len()];
        let src = self.value(a);
        for_each_permuted(&s, perm, |o, i| out[o] = src[i]);
        Ok(self.push(
            out_shape,
            out,
            Op::Permute {
                a,
                perm: perm.to_vec(),
            },
        ))
    }

    /// Concatenation along the last axis; leading dimensions must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
        let lead = {
            let s = self.shape(*first);
            s[..s.len() - 1].to_vec()
        };
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s[..s.len() - 1] != lead[..] {
                return Err(Error::Shape {
                    op: "concat",
                    lhs: self.shape(*first).to_vec(),
                    rhs: s.to_vec(),
                });
            }
            widths.push(*s.last().unwrap());
        }
        let rows: usize = lead.iter().product();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p)[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        Ok(self.push(
            shape,
            out,
            Op::Concat {
                parts: parts.to_vec(),
            },
        ))
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("stack of zero tensors".into()))?;
        let s0 = self.shape(*first).to_vec();
        let mut out = Vec::with_capacity(parts.len() * self.value(*first).len());
        for &p in parts {
            if self.shape(p) != s0 {
                return Err(Error::Shape {
                    op: "stack",
                    lhs: s0,
                    rhs: self.shape(p).to_vec(),
                });
            }
            out.extend_from_slice(self.value(p));
        }
        let mut shape = vec![parts.len()];
        shape.extend(s0);
        Ok(self.push(
            shape,
            out,
            Op::Stack {
                parts: parts.to_vec(),
            },
        ))
    }

    /// Row `index` of a 2-D tensor as a vector.
    pub fn row(&mut self, a: Var, index: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        match s[..] {
            [rows, cols] if index < rows => {
                let value = self.value(a)[index * cols..(index + 1) * cols].to_vec();
                Ok(self.push(vec![cols], value, Op::Row { a, index }))
            }
            _ => Err(Error::Shape {
                op: "row",
                lhs: s,
                rhs: vec![index],
            }),
        }
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().sum();
        self.push(vec![1], vec![s], Op::Sum { a })
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let m = v.iter().sum::<f64>() / v.len() as f64;
        self.push(vec![1], vec![m], Op::Mean { a })
    }

    /// Fused bidirectional GRU over the second-to-last axis.
    ///
    /// `x` is `[F×D]` or `[B×F×D]`; `params` holds the forward direction's
    /// `W_z, W_r, W_h, U_z, U_r, U_h, b_z, b_r, b_h` followed by the backward
    /// direction's. Output is `[.., F, 2·hidden]` with the forward state first.
    pub fn bigru(&mut self, x: Var, params: &[Var]) -> Result<Var> {
        let (shape, value, node) = gru::forward(self, x, params)?;
        Ok(self.push(shape, value, Op::BiGru(Box::new(node))))
    }

    /// Reverse pass from a scalar `loss`. Gradients accumulate across
    /// fan-out; each tape node is visited once. Returns the number of nodes
    /// whose backward rule ran.
    pub fn backward(&mut self, loss: Var) -> Result<usize> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[loss.0] = Some(vec![1.0]);
        let mut visited = 0;
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            visited += 1;
            self.backprop_node(i, &g)?;
            self.grads[i] = Some(g);
        }
        Ok(visited)
    }

    /// Gradient of the last `backward` loss w.r.t. `v`, if `v` was reached.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Adds the gradient at `v` into `t.grad` (no-op if `v` was not reached).
    pub fn accumulate_into(&self, v: Var, t: &mut Tensor) -> Result<()> {
        match self.grad(v) {
            Some(g) => t.accumulate_grad(g),
            None => Ok(()),
        }
    }

    fn send(&mut self, to: Var, f: impl FnOnce(&mut [f64])) {
        if !self.nodes[to.0].requires_grad {
            return;
        }
        let n = self.nodes[to.0].value.len();
        let slot = self.grads[to.0].get_or_insert_with(|| vec![0.0; n]);
        f(slot);
    }

    fn send_scaled(&mut self, to: Var, g: &[f64], scale: f64) {
        self.send(to, |acc| {
            acc.iter_mut().zip(g).for_each(|(a, &d)| *a += scale * d)
        });
    }

    fn backprop_node(&mut self, i: usize, g: &[f64]) -> Result<()> {
        // Temporarily move the op out so input values can be read while
        // gradient slots are mutated.
        let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            &Op::MatMul { a, b, m, k, n } => {
                if self.nodes[a.0].requires_grad {
                    let mut da = vec![0.0; m * k];
                    gemm(
                        1.0,
                        Mat::new(g, m, n),
                        Mat::t(self.value(b), k, n),
                        0.0,
                        &mut da,
                    );
                    self.send_scaled(a, &da, 1.0);
                }
                if self.nodes[b.0].requires_grad {
                    let mut db = vec![0.0; k * n];
                    gemm(
                        1.0,
                        Mat::t(self.value(a), m, k),
                        Mat::new(g, m, n),
                        0.0,
                        &mut db,
                    );
                    self.send_scaled(b, &db, 1.0);
                }
            }
            &Op::Transpose { a, rows, cols } => self.send(a, |acc| {
                for r in 0..rows {
                    for c in 0..cols {
                        acc[r * cols + c] += g[c * rows + r];
                    }
                }
            }),
            &Op::Add { a, b } => {
                self.send_scaled(a, g, 1.0);
                self.send_scaled(b, g, 1.0);
            }
            &Op::Sub { a, b } => {
                self.send_scaled(a, g, 1.0);
                self.send_scaled(b, g, -1.0);
            }
            &Op::Mul { a, b } => {
                let da: Vec<f64> = g.iter().zip(self.value(b)).map(|(d, y)| d * y).collect();
                let db: Vec<f64> = g.iter().zip(self.value(a)).map(|(d, x)| d * x).collect();
                self.send_scaled(a, &da, 1.0);
                self.send_scaled(b, &db, 1.0);
            }
            &Op::BiasAdd { a, bias } => {
                self.send_scaled(a, g, 1.0);
                let n = self.value(bias).len();
                self.send(bias, |acc| {
                    for (j, d) in g.iter().enumerate() {
                        acc[j % n] += d;
                    }
                });
            }
            &Op::Affine { a, scale } => self.send_scaled(a, g, scale),
            &Op::Act { a, act } => {
                let y = &self.nodes[i].value;
                let da: Vec<f64> = g
                    .iter()
                    .zip(y)
                    .map(|(d, &y)| d * act.deriv_from_output(y))
                    .collect();
                self.send_scaled(a, &da, 1.0);
            }
            &Op::Conv2d {
                x,
                w,
                b,
                geom,
                batch,
            } => self.conv2d_backward(x, w, b, geom, batch, g),
            &Op::Reshape { a } => self.send_scaled(a, g, 1.0),
            Op::Permute { a, perm } => {
                let s = self.shape(*a).to_vec();
                self.send(*a, |acc| for_each_permuted(&s, perm, |o, i| acc[i] += g[o]));
            }
            Op::Concat { parts } => {
                let widths: Vec<usize> = parts
                    .iter()
                    .map(|p| *self.shape(*p).last().unwrap())
                    .collect();
                let total: usize = widths.iter().sum();
                let rows = g.len() / total;
                let mut off = 0;
                for (&p, &w) in parts.iter().zip(&widths) {
                    self.send(p, |acc| {
                        for r in 0..rows {
                            for j in 0..w {
                                acc[r * w + j] += g[r * total + off + j];
                            }
                        }
                    });
                    off += w;
                }
            }
            Op::Stack { parts } => {
                let n = g.len() / parts.len();
                for (k, &p) in parts.iter().enumerate() {
                    self.send_scaled(p, &g[k * n..(k + 1) * n], 1.0);
                }
            }
            &Op::Row { a, index } => {
                let cols = g.len();
                self.send(a, |acc| {
                    acc[index * cols..(index + 1) * cols]
                        .iter_mut()
                        .zip(g)
                        .for_each(|(a, d)| *a += d)
                });
            }
            &Op::Sum { a } => {
                let d = g[0];
                self.send(a, |acc| acc.iter_mut().for_each(|v| *v += d));
            }
            &Op::Mean { a } => {
                let d = g[0] / self.value(a).len() as f64;
                self.send(a, |acc| acc.iter_mut().for_each(|v| *v += d));
            }
            Op::BiGru(node) => {
                let grads = gru::backward(self, node, g);
                for (v, gv) in grads {
                    self.send_scaled(v, &gv, 1.0);
                }
            }
        }
        self.nodes[i].op = op;
        Ok(())
    }

    fn conv2d_backward(&mut self, x: Var, w: Var, b: Var, geom: ConvGeom, batch: usize, g: &[f64]) {
        let hw = geom.hw();
        let rows = geom.col_rows();
        let need_x = self.nodes[x.0].requires_grad;
        let need_w = self.nodes[w.0].requires_grad;
        let mut dw = vec![0.0; geom.c_out * rows];
        let mut dx = if need_x {
            vec![0.0; batch * geom.c_in * hw]
        } else {
            Vec::new()
        };
        let mut col = vec![0.0; rows * hw];
        let mut dcol = vec![0.0; rows * hw];
        let (xv, wv) = (self.value(x), self.value(w));
        for n in 0..batch {
            let gy = &g[n * geom.c_out * hw..(n + 1) * geom.c_out * hw];
            if need_w {
                kernels::im2col(
                    &xv[n * geom.c_in * hw..(n + 1) * geom.c_in * hw],
                    &geom,
                    &mut col,
                );
                gemm(
                    1.0,
                    Mat::new(gy, geom.c_out, hw),
                    Mat::t(&col, rows, hw),
                    1.0,
                    &mut dw,
                );
            }
            if need_x {
                gemm(
                    1.0,
                    Mat::t(wv, geom.c_out, rows),
                    Mat::new(gy, geom.c_out, hw),
                    0.0,
                    &mut dcol,
                );
                kernels::col2im_add(
                    &dcol,
                    &geom,
                    &mut dx[n * geom.c_in * hw..(n + 1) * geom.c_in * hw],
                );
            }
        }
        let mut db = vec![0.0; geom.c_out];
        for n in 0..batch {
            for (co, d) in db.iter_mut().enumerate() {
                let off = (n * geom.c_out + co) * hw;
                *d += g[off..off + hw].iter().sum::<f64>();
            }
        }
        if need_x {
            self.send_scaled(x, &dx, 1.0);
        }
        if need_w {
            self.send_scaled(w, &dw, 1.0);
        }
        self.send_scaled(b, &db, 1.0);
    }
}

/// Calls `f(out_offset, in_offset)` for every element of the permutation of
/// an input of shape `shape` by `perm`, in output order.
fn for_each_permuted(shape: &[usize], perm: &[usize], mut f: impl FnMut(usize, usize)) {
    let nd = shape.len();
    let mut in_strides = vec![1usize; nd];
    for d in (0..nd.saturating_sub(1)).rev() {
        in_strides[d] = in_strides[d + 1] * shape[d + 1];
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let total: usize = shape.iter().product();
    let mut idx = vec![0usize; nd];
    let mut in_off = 0usize;
    for o in 0..total {
        f(o, in_off);
        for d in (0..nd).rev() {
            idx[d] += 1;
            in_off += strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            in_off -= strides[d] * out_shape[d];
            idx[d] = 0;
        }
    }
}
