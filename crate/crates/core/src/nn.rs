//! Parameterized layers: same-padded Conv2D, Dense, and a bidirectional GRU
//! that scans a designated axis of a feature map.

use rand::SeedableRng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, Rng};
use crate::tensor::{Activation, Graph, Tensor, Var, GRU_PARAMS_PER_DIRECTION};

/// Elementwise operations per hidden unit per GRU step beyond the matrix
/// products: three gate nonlinearities, `r ⊙ h`, `1 − z`, `(1 − z) ⊙ h`,
/// `z ⊙ h̃` and the final sum.
pub const GRU_ELEMENTWISE_FLOPS_PER_UNIT: u64 = 8;

/// Axis of a `[C×H×W]` feature map that a recurrent layer scans.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecurrenceAxis {
    /// Rows (sub-carriers, for channel grids).
    Height,
    /// Columns (OFDM symbols).
    Width,
}

/// Multiply-accumulate and floating-point operation counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopCount {
    pub macs: u64,
    pub flops: u64,
}

impl std::ops::Add for FlopCount {
    type Output = FlopCount;
    fn add(self, o: FlopCount) -> FlopCount {
        FlopCount {
            macs: self.macs + o.macs,
            flops: self.flops + o.flops,
        }
    }
}

impl std::iter::Sum for FlopCount {
    fn sum<I: Iterator<Item = FlopCount>>(iter: I) -> Self {
        iter.fold(FlopCount::default(), |a, b| a + b)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LayerSpec {
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        activation: Activation,
    },
    Dense {
        inputs: usize,
        outputs: usize,
        activation: Activation,
    },
    /// Gate nonlinearities are internal to the cell.
    BiGru { input: usize, hidden: usize },
}

impl LayerSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => {
                if kernel % 2 == 0 {
                    return Err(Error::Config(format!("conv kernel {kernel} must be odd")));
                }
                in_channels > 0 && out_channels > 0
            }
            LayerSpec::Dense {
                inputs, outputs, ..
            } => inputs > 0 && outputs > 0,
            LayerSpec::BiGru { input, hidden } => input > 0 && hidden > 0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("zero-sized layer {self:?}")))
        }
    }

    /// Input feature size and output feature size, for stack compatibility.
    pub fn io_features(&self) -> (usize, usize) {
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                ..
            } => (in_channels, out_channels),
            LayerSpec::Dense {
                inputs, outputs, ..
            } => (inputs, outputs),
            LayerSpec::BiGru { input, hidden } => (input, 2 * hidden),
        }
    }

    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => vec![
                vec![out_channels, in_channels, kernel, kernel],
                vec![out_channels],
            ],
            LayerSpec::Dense {
                inputs, outputs, ..
            } => vec![vec![outputs, inputs], vec![outputs]],
            LayerSpec::BiGru { input, hidden } => {
                let dir = [
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
                dir.iter().chain(dir.iter()).cloned().collect()
            }
        }
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes()
            .iter()
            .map(|s| s.iter().product::<usize>())
            .sum()
    }

    /// Operation count when applied at `positions` sites: spatial cells for
    /// a conv, rows for a dense layer, sequence steps for a BiGRU.
    pub fn flops(&self, positions: usize) -> FlopCount {
        let p = positions as u64;
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => {
                let macs = p * (in_channels * out_channels * kernel * kernel) as u64;
                FlopCount {
                    macs,
                    flops: 2 * macs,
                }
            }
            LayerSpec::Dense {
                inputs, outputs, ..
            } => {
                let macs = p * (inputs * outputs) as u64;
                FlopCount {
                    macs,
                    flops: 2 * macs,
                }
            }
            LayerSpec::BiGru { input, hidden } => {
                let (d, h) = (input as u64, hidden as u64);
                let per_gate = h * d + h * h;
                let macs = p * 2 * 3 * per_gate;
                let affine = p * 2 * 3 * (per_gate + h) * 2;
                let elementwise = p * 2 * GRU_ELEMENTWISE_FLOPS_PER_UNIT * h;
                FlopCount {
                    macs,
                    flops: affine + elementwise,
                }
            }
        }
    }

    /// Glorot-uniform weights, zero biases; deterministic in `seed`.
    pub fn init_params(&self, seed: u64) -> Result<Vec<Tensor>> {
        self.validate()?;
        let mut rng = Rng::seed_from_u64(seed);
        let (fan_in, fan_out) = match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => (
                in_channels * kernel * kernel,
                out_channels * kernel * kernel,
            ),
            LayerSpec::Dense {
                inputs, outputs, ..
            } => (inputs, outputs),
            LayerSpec::BiGru { .. } => (0, 0),
        };
        self.param_shapes()
            .into_iter()
            .map(|shape| {
                let n: usize = shape.iter().product();
                let data = if shape.len() == 1 {
                    vec![0.0; n]
                } else {
                    let (fi, fo) = match self {
                        // each GRU matrix is [hidden × in] with its own fans
                        LayerSpec::BiGru { .. } => (shape[1], shape[0]),
                        _ => (fan_in, fan_out),
                    };
                    let a = glorot_bound(fi, fo);
                    let dist = Uniform::new(-a, a);
                    (0..n).map(|_| dist.sample(&mut rng)).collect()
                };
                Tensor::param(&shape, data)
            })
            .collect()
    }
}

pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Common surface of all layers.
pub trait Layer {
    fn spec(&self) -> LayerSpec;
    fn params(&self) -> Vec<&Tensor>;
    fn params_mut(&mut self) -> Vec<&mut Tensor>;

    /// Records every parameter as a leaf on `g`, in `params()` order.
    fn bind(&self, g: &mut Graph) -> Vec<Var> {
        self.params().into_iter().map(|t| g.leaf(t)).collect()
    }
}

fn take_params(spec: &LayerSpec, params: Vec<Tensor>) -> Result<Vec<Tensor>> {
    let shapes = spec.param_shapes();
    if params.len() != shapes.len()
        || params
            .iter()
            .zip(&shapes)
            .any(|(t, s)| t.shape() != s.as_slice())
    {
        return Err(Error::Config(format!(
            "parameter tensors do not match layer {spec:?}"
        )));
    }
    Ok(params)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d {
    pub weight: Tensor,
    pub bias: Tensor,
    pub activation: Activation,
}

impl Conv2d {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        activation: Activation,
        seed: u64,
    ) -> Result<Self> {
        let spec = LayerSpec::Conv2d {
            in_channels,
            out_channels,
            kernel,
            activation,
        };
        Self::from_params(activation, spec.init_params(seed)?)
    }

    pub fn from_params(activation: Activation, params: Vec<Tensor>) -> Result<Self> {
        let [weight, bias]: [Tensor; 2] = params
            .try_into()
            .map_err(|_| Error::Config("conv2d takes weight and bias".into()))?;
        let s = weight.shape().to_vec();
        let spec = match s[..] {
            [o, i, k, k2] if k == k2 => LayerSpec::Conv2d {
                in_channels: i,
                out_channels: o,
                kernel: k,
                activation,
            },
            _ => return Err(Error::Config(format!("conv2d weight shape {s:?}"))),
        };
        let [weight, bias]: [Tensor; 2] =
            take_params(&spec, vec![weight, bias])?.try_into().unwrap();
        Ok(Conv2d {
            weight: weight.with_requires_grad(true),
            bias: bias.with_requires_grad(true),
            activation,
        })
    }

    /// `x` is `[C×H×W]` or `[N×C×H×W]`; `p` are this layer's bound parameters.
    pub fn forward(&self, g: &mut Graph, x: Var, p: &[Var]) -> Result<Var> {
        let y = g.conv2d(x, p[0], p[1])?;
        Ok(g.activation(y, self.activation))
    }
}

impl Layer for Conv2d {
    fn spec(&self) -> LayerSpec {
        let s = self.weight.shape();
        LayerSpec::Conv2d {
            in_channels: s[1],
            out_channels: s[0],
            kernel: s[2],
            activation: self.activation,
        }
    }
    fn params(&self) -> Vec<&Tensor> {
        vec![&self.weight, &self.bias]
    }
    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Affine map `W·x + b`, `W` stored as `[outputs × inputs]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
    pub activation: Activation,
}

impl Dense {
    pub fn new(inputs: usize, outputs: usize, activation: Activation, seed: u64) -> Result<Self> {
        let spec = LayerSpec::Dense {
            inputs,
            outputs,
            activation,
        };
        Self::from_params(activation, spec.init_params(seed)?)
    }

    pub fn from_params(activation: Activation, params: Vec<Tensor>) -> Result<Self> {
        let [weight, bias]: [Tensor; 2] = params
            .try_into()
            .map_err(|_| Error::Config("dense takes weight and bias".into()))?;
        let s = weight.shape().to_vec();
        let spec = match s[..] {
            [o, i] => LayerSpec::Dense {
                inputs: i,
                outputs: o,
                activation,
            },
            _ => return Err(Error::Config(format!("dense weight shape {s:?}"))),
        };
        let [weight, bias]: [Tensor; 2] =
            take_params(&spec, vec![weight, bias])?.try_into().unwrap();
        Ok(Dense {
            weight: weight.with_requires_grad(true),
            bias: bias.with_requires_grad(true),
            activation,
        })
    }

    /// `x` is a vector `[inputs]` or a row batch `[rows × inputs]`.
    pub fn forward(&self, g: &mut Graph, x: Var, p: &[Var]) -> Result<Var> {
        let inputs = self.weight.shape()[1];
        let y = match g.shape(x) {
            [n] if *n == inputs => g.matmul(p[0], x)?,
            [_, n] if *n == inputs => {
                let wt = g.transpose(p[0])?;
                g.matmul(x, wt)?
            }
            s => {
                return Err(Error::Config(format!(
                    "dense layer expects {inputs} input features, got shape {s:?}"
                )))
            }
        };
        let y = g.bias_add(y, p[1])?;
        Ok(g.activation(y, self.activation))
    }
}

impl Layer for Dense {
    fn spec(&self) -> LayerSpec {
        let s = self.weight.shape();
        LayerSpec::Dense {
            inputs: s[1],
            outputs: s[0],
            activation: self.activation,
        }
    }
    fn params(&self) -> Vec<&Tensor> {
        vec![&self.weight, &self.bias]
    }
    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// One scan direction of a GRU.
#[derive(Clone, Debug, PartialEq)]
pub struct GruDirection {
    pub w_z: Tensor,
    pub w_r: Tensor,
    pub w_h: Tensor,
    pub u_z: Tensor,
    pub u_r: Tensor,
    pub u_h: Tensor,
    pub b_z: Tensor,
    pub b_r: Tensor,
    pub b_h: Tensor,
}

impl GruDirection {
    fn from_vec(v: Vec<Tensor>) -> Self {
        let [w_z, w_r, w_h, u_z, u_r, u_h, b_z, b_r, b_h]: [Tensor; 9] =
            v.try_into().expect("nine GRU tensors");
        GruDirection {
            w_z,
            w_r,
            w_h,
            u_z,
            u_r,
            u_h,
            b_z,
            b_r,
            b_h,
        }
    }

    pub fn tensors(&self) -> [&Tensor; 9] {
        [
            &self.w_z, &self.w_r, &self.w_h, &self.u_z, &self.u_r, &self.u_h, &self.b_z, &self.b_r,
            &self.b_h,
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Tensor; 9] {
        [
            &mut self.w_z,
            &mut self.w_r,
            &mut self.w_h,
            &mut self.u_z,
            &mut self.u_r,
            &mut self.u_h,
            &mut self.b_z,
            &mut self.b_r,
            &mut self.b_h,
        ]
    }

    pub fn hidden(&self) -> usize {
        self.w_z.shape()[0]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GruParams {
    pub forward: GruDirection,
    pub backward: GruDirection,
}

impl GruParams {
    pub fn init(input: usize, hidden: usize, seed: u64) -> Result<Self> {
        Self::from_tensors(LayerSpec::BiGru { input, hidden }.init_params(seed)?)
    }

    /// Forward direction's nine tensors then the backward direction's.
    pub fn from_tensors(tensors: Vec<Tensor>) -> Result<Self> {
        let first = tensors
            .first()
            .ok_or_else(|| Error::Config("empty GRU parameter list".into()))?;
        let s = first.shape().to_vec();
        let [hidden, input] = s[..] else {
            return Err(Error::Config(format!("GRU W_z shape {s:?}")));
        };
        let spec = LayerSpec::BiGru { input, hidden };
        let mut v = take_params(&spec, tensors)?;
        for t in &v {
            if !t.all_finite() {
                return Err(Error::Config("GRU parameters must be finite".into()));
            }
        }
        let bwd = v.split_off(GRU_PARAMS_PER_DIRECTION);
        let with_grad =
            |v: Vec<Tensor>| v.into_iter().map(|t| t.with_requires_grad(true)).collect();
        Ok(GruParams {
            forward: GruDirection::from_vec(with_grad(v)),
            backward: GruDirection::from_vec(with_grad(bwd)),
        })
    }

    /// Same cell with the two directions exchanged.
    pub fn swapped(&self) -> Self {
        GruParams {
            forward: self.backward.clone(),
            backward: self.forward.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BiGru {
    pub params: GruParams,
    pub axis: RecurrenceAxis,
}

impl BiGru {
    pub fn new(input: usize, hidden: usize, axis: RecurrenceAxis, seed: u64) -> Result<Self> {
        Ok(BiGru {
            params: GruParams::init(input, hidden, seed)?,
            axis,
        })
    }

    pub fn hidden(&self) -> usize {
        self.params.forward.hidden()
    }

    /// Scans a sequence `[F×D]` or `[B×F×D]`, returning `[.., F, 2·hidden]`.
    pub fn forward_seq(&self, g: &mut Graph, x: Var, p: &[Var]) -> Result<Var> {
        g.bigru(x, p)
    }

    /// Scans the configured axis of `[N×C×H×W]` features. Each step sees the
    /// `C·(other axis)` slice at that position; output is `[N×L×2·hidden]`
    /// where `L` is the length of the scanned axis.
    pub fn forward_map(&self, g: &mut Graph, x: Var, p: &[Var]) -> Result<Var> {
        let s = g.shape(x).to_vec();
        let [n, c, h, w] = s[..] else {
            return Err(Error::Shape {
                op: "bigru_map",
                lhs: s,
                rhs: vec![],
            });
        };
        let seq = match self.axis {
            RecurrenceAxis::Height => {
                let t = g.permute(x, &[0, 2, 1, 3])?;
                g.reshape(t, &[n, h, c * w])?
            }
            RecurrenceAxis::Width => {
                let t = g.permute(x, &[0, 3, 1, 2])?;
                g.reshape(t, &[n, w, c * h])?
            }
        };
        g.bigru(seq, p)
    }
}

impl Layer for BiGru {
    fn spec(&self) -> LayerSpec {
        LayerSpec::BiGru {
            input: self.params.forward.w_z.shape()[1],
            hidden: self.hidden(),
        }
    }
    fn params(&self) -> Vec<&Tensor> {
        let p = &self.params;
        p.forward
            .tensors()
            .into_iter()
            .chain(p.backward.tensors())
            .collect()
    }
    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let p = &mut self.params;
        p.forward
            .tensors_mut()
            .into_iter()
            .chain(p.backward.tensors_mut())
            .collect()
    }
}

/// One GRU step built from primitive graph ops.
///
/// `p` are one direction's `W_z, W_r, W_h, U_z, U_r, U_h, b_z, b_r, b_h`;
/// `x_t` is `[input]` and `h_prev` is `[hidden]`.
pub fn gru_step(g: &mut Graph, p: &[Var], x_t: Var, h_prev: Var) -> Result<Var> {
    if p.len() != GRU_PARAMS_PER_DIRECTION {
        return Err(Error::Config(format!(
            "gru_step takes 9 tensors, got {}",
            p.len()
        )));
    }
    let hidden = g.shape(p[0])[0];
    if g.shape(h_prev) != [hidden] {
        return Err(Error::Config(format!(
            "hidden state shape {:?}, expected [{hidden}]",
            g.shape(h_prev)
        )));
    }
    let gate = |g: &mut Graph, w: Var, u: Var, b: Var, h: Var| -> Result<Var> {
        let wx = g.matmul(w, x_t).map_err(config_err)?;
        let uh = g.matmul(u, h).map_err(config_err)?;
        let s = g.add(wx, uh)?;
        g.add(s, b).map_err(config_err)
    };
    let az = gate(g, p[0], p[3], p[6], h_prev)?;
    let z = g.sigmoid(az);
    let ar = gate(g, p[1], p[4], p[7], h_prev)?;
    let r = g.sigmoid(ar);
    let rh = g.mul(r, h_prev)?;
    let ah = gate(g, p[2], p[5], p[8], rh)?;
    let hc = g.tanh(ah);
    let one_minus_z = g.affine(z, -1.0, 1.0);
    let keep = g.mul(one_minus_z, h_prev)?;
    let update = g.mul(z, hc)?;
    g.add(keep, update)
}

fn config_err(e: Error) -> Error {
    match e {
        Error::Shape { op, lhs, rhs } => Error::Config(format!(
            "GRU dimension mismatch in {op}: {lhs:?} vs {rhs:?}"
        )),
        other => other,
    }
}

/// Bidirectional scan over `[F×D]` unrolled into [`gru_step`] calls.
/// Equivalent to the fused [`Graph::bigru`].
pub fn bigru_unrolled(g: &mut Graph, p: &[Var], x: Var) -> Result<Var> {
    let steps = g.shape(x)[0];
    let hidden = g.shape(p[0])[0];
    let (fwd_p, bwd_p) = p.split_at(GRU_PARAMS_PER_DIRECTION);
    let rows: Vec<Var> = (0..steps).map(|f| g.row(x, f)).collect::<Result<_>>()?;

    let zero = g.constant(&[hidden], vec![0.0; hidden])?;
    let mut fwd = Vec::with_capacity(steps);
    let mut h = zero;
    for &row in &rows {
        h = gru_step(g, fwd_p, row, h)?;
        fwd.push(h);
    }
    let mut bwd = vec![zero; steps];
    let mut h = zero;
    for f in (0..steps).rev() {
        h = gru_step(g, bwd_p, rows[f], h)?;
        bwd[f] = h;
    }
    let out_rows: Vec<Var> = fwd
        .into_iter()
        .zip(bwd)
        .map(|(a, b)| g.concat(&[a, b]))
        .collect::<Result<_>>()?;
    g.stack(&out_rows)
}

/// Derives the per-layer seed used by model builders.
pub fn layer_seed(model_seed: u64, layer_index: usize) -> u64 {
    derive_seed(model_seed, &[0x4C41_5945, layer_index as u64])
}
