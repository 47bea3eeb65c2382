//! The SisRafNet estimator: a CNN front-end on the pilot least-squares grid,
//! two bidirectional GRU layers scanning across sub-carriers, a per-sub-carrier
//! dense up-projection and a CNN tail on the full slot grid.
//!
//! The network maps one real component (real or imaginary part) of an
//! `input_freq × input_sym` pilot estimate to the same component of the
//! `output_freq × output_sym` channel. One model serves both components.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_file, BinReader, BinWriter};
use crate::nn::{layer_seed, BiGru, Conv2d, Dense, FlopCount, Layer, LayerSpec, RecurrenceAxis};
use crate::tensor::{Activation, Graph, Tensor, Var};

const MODEL_MAGIC: &[u8; 4] = b"SRFN";
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub input_freq: usize,
    pub input_sym: usize,
    pub output_freq: usize,
    pub output_sym: usize,
    pub front_channels: Vec<usize>,
    pub kernel: usize,
    pub gru_hidden: usize,
    pub head_channels: usize,
    pub tail_channels: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_freq: 120,
            input_sym: 2,
            output_freq: 240,
            output_sym: 14,
            front_channels: vec![16, 32, 32, 64, 64, 32, 32, 16],
            kernel: 3,
            gru_hidden: 96,
            head_channels: 4,
            tail_channels: vec![16, 8, 1],
        }
    }
}

/// Number of front convolutions.
pub const FRONT_LAYERS: usize = 8;
/// Number of tail convolutions.
pub const TAIL_LAYERS: usize = 3;

impl ModelConfig {
    /// Same architecture sized for a given pilot grid.
    pub fn for_pilot_grid(input_freq: usize, input_sym: usize) -> Self {
        ModelConfig {
            input_freq,
            input_sym,
            ..ModelConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.front_channels.len() != FRONT_LAYERS {
            return err(format!(
                "front_channels must list {FRONT_LAYERS} layers, got {}",
                self.front_channels.len()
            ));
        }
        if self.tail_channels.len() != TAIL_LAYERS || self.tail_channels.last() != Some(&1) {
            return err(format!(
                "tail_channels must list {TAIL_LAYERS} layers ending in 1, got {:?}",
                self.tail_channels
            ));
        }
        if self.kernel % 2 == 0 {
            return err(format!("kernel {} must be odd", self.kernel));
        }
        let sizes = [
            self.input_freq,
            self.input_sym,
            self.output_freq,
            self.output_sym,
            self.kernel,
            self.gru_hidden,
            self.head_channels,
        ];
        if sizes.contains(&0) || self.front_channels.contains(&0) || self.tail_channels.contains(&0)
        {
            return err("all model dimensions must be positive".into());
        }
        if self.output_freq % self.input_freq != 0 {
            return err(format!(
                "output_freq {} must be a multiple of input_freq {}",
                self.output_freq, self.input_freq
            ));
        }
        Ok(())
    }

    /// Output sub-carrier rows emitted by the dense head per input row.
    pub fn upsample(&self) -> usize {
        self.output_freq / self.input_freq
    }

    fn head_outputs(&self) -> usize {
        self.upsample() * self.output_sym * self.head_channels
    }

    /// Every layer of the stack with the number of positions it is applied at.
    pub fn layer_plan(&self) -> Vec<(LayerSpec, usize)> {
        let mut plan = Vec::new();
        let front_positions = self.input_freq * self.input_sym;
        let mut c_in = 1;
        for &c in &self.front_channels {
            plan.push((
                LayerSpec::Conv2d {
                    in_channels: c_in,
                    out_channels: c,
                    kernel: self.kernel,
                    activation: Activation::Relu,
                },
                front_positions,
            ));
            c_in = c;
        }
        let mut gru_in = c_in * self.input_sym;
        for _ in 0..2 {
            plan.push((
                LayerSpec::BiGru {
                    input: gru_in,
                    hidden: self.gru_hidden,
                },
                self.input_freq,
            ));
            gru_in = 2 * self.gru_hidden;
        }
        plan.push((
            LayerSpec::Dense {
                inputs: gru_in,
                outputs: self.head_outputs(),
                activation: Activation::Identity,
            },
            self.input_freq,
        ));
        let tail_positions = self.output_freq * self.output_sym;
        let mut c_in = self.head_channels;
        for (i, &c) in self.tail_channels.iter().enumerate() {
            let activation = if i + 1 < TAIL_LAYERS {
                Activation::Relu
            } else {
                Activation::Identity
            };
            plan.push((
                LayerSpec::Conv2d {
                    in_channels: c_in,
                    out_channels: c,
                    kernel: self.kernel,
                    activation,
                },
                tail_positions,
            ));
            c_in = c;
        }
        plan
    }

    pub fn param_count(&self) -> usize {
        self.layer_plan().iter().map(|(s, _)| s.param_count()).sum()
    }
}

/// Closed-form operation count of one single-component forward pass.
pub fn flop_count(config: &ModelConfig) -> FlopCount {
    config.layer_plan().iter().map(|(s, p)| s.flops(*p)).sum()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    config: ModelConfig,
    norm_scale: f64,
    front: Vec<Conv2d>,
    gru: Vec<BiGru>,
    head: Dense,
    tail: Vec<Conv2d>,
}

impl Model {
    pub fn build(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let plan = config.layer_plan();
        let mut front = Vec::new();
        let mut gru = Vec::new();
        let mut head = None;
        let mut tail = Vec::new();
        for (i, (spec, _)) in plan.iter().enumerate() {
            let params = spec.init_params(layer_seed(seed, i))?;
            match *spec {
                LayerSpec::Conv2d { activation, .. } => {
                    let conv = Conv2d::from_params(activation, params)?;
                    if head.is_none() {
                        front.push(conv);
                    } else {
                        tail.push(conv);
                    }
                }
                LayerSpec::BiGru { .. } => gru.push(BiGru {
                    params: crate::nn::GruParams::from_tensors(params)?,
                    axis: RecurrenceAxis::Height,
                }),
                LayerSpec::Dense { activation, .. } => {
                    head = Some(Dense::from_params(activation, params)?)
                }
            }
        }
        Ok(Model {
            config,
            norm_scale: 1.0,
            front,
            gru,
            head: head.expect("plan has a dense head"),
            tail,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Scalar that inputs are divided by (and outputs multiplied by).
    pub fn norm_scale(&self) -> f64 {
        self.norm_scale
    }

    pub fn set_norm_scale(&mut self, s: f64) -> Result<()> {
        if !(s.is_finite() && s > 0.0) {
            return Err(Error::Config(format!(
                "normalization scale {s} must be positive"
            )));
        }
        self.norm_scale = s;
        Ok(())
    }

    fn layers(&self) -> Vec<&dyn Layer> {
        let mut v: Vec<&dyn Layer> = Vec::new();
        v.extend(self.front.iter().map(|l| l as &dyn Layer));
        v.extend(self.gru.iter().map(|l| l as &dyn Layer));
        v.push(&self.head);
        v.extend(self.tail.iter().map(|l| l as &dyn Layer));
        v
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers().into_iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v: Vec<&mut Tensor> = Vec::new();
        for l in &mut self.front {
            v.extend(l.params_mut());
        }
        for l in &mut self.gru {
            v.extend(l.params_mut());
        }
        v.extend(self.head.params_mut());
        for l in &mut self.tail {
            v.extend(l.params_mut());
        }
        v
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    /// Records every parameter on `g` in `params()` order.
    pub fn bind(&self, g: &mut Graph) -> Vec<Var> {
        self.params().into_iter().map(|t| g.leaf(t)).collect()
    }

    /// Forward pass on normalized inputs `[N×1×input_freq×input_sym]`,
    /// producing normalized outputs `[N×1×output_freq×output_sym]`.
    pub fn forward(&self, g: &mut Graph, x: Var, p: &[Var]) -> Result<Var> {
        let c = &self.config;
        let n = match g.shape(x) {
            [n, 1, f, s] if *f == c.input_freq && *s == c.input_sym => *n,
            s => {
                return Err(Error::Contract(format!(
                    "model input shape {s:?}, expected [N, 1, {}, {}]",
                    c.input_freq, c.input_sym
                )))
            }
        };
        let mut off = 0;
        let mut next = |k: usize| {
            let s = &p[off..off + k];
            off += k;
            s
        };
        let mut h = x;
        for conv in &self.front {
            h = conv.forward(g, h, next(2))?;
        }
        for gru in &self.gru {
            h = if g.shape(h).len() == 4 {
                gru.forward_map(g, h, next(18))?
            } else {
                gru.forward_seq(g, h, next(18))?
            };
        }
        // [N, F, 2H] → per-row dense → [N, F, up, S, C_head] → [N, C_head, F·up, S]
        let h2 = 2 * c.gru_hidden;
        let rows = g.reshape(h, &[n * c.input_freq, h2])?;
        let d = self.head.forward(g, rows, next(2))?;
        let d = g.reshape(
            d,
            &[n, c.input_freq, c.upsample(), c.output_sym, c.head_channels],
        )?;
        let d = g.permute(d, &[0, 4, 1, 2, 3])?;
        let mut h = g.reshape(d, &[n, c.head_channels, c.output_freq, c.output_sym])?;
        for conv in &self.tail {
            h = conv.forward(g, h, next(2))?;
        }
        debug_assert_eq!(off, p.len());
        Ok(h)
    }

    fn input_len(&self) -> usize {
        self.config.input_freq * self.config.input_sym
    }

    /// Runs the network on a batch of raw (unnormalized) component grids.
    pub fn predict_batch(&self, inputs: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
        if inputs.is_empty() {
            return Ok(Vec::new());
        }
        let c = &self.config;
        let len = self.input_len();
        let mut flat = Vec::with_capacity(inputs.len() * len);
        for x in inputs {
            if x.len() != len {
                return Err(Error::Contract(format!(
                    "pilot grid has {} values, expected {}×{}",
                    x.len(),
                    c.input_freq,
                    c.input_sym
                )));
            }
            flat.extend(x.iter().map(|v| v / self.norm_scale));
        }
        let mut g = Graph::new();
        let x = g.constant(&[inputs.len(), 1, c.input_freq, c.input_sym], flat)?;
        let p = self.bind(&mut g);
        let y = self.forward(&mut g, x, &p)?;
        g.check_finite()?;
        let out_len = c.output_freq * c.output_sym;
        Ok(g.value(y)
            .chunks(out_len)
            .map(|ch| ch.iter().map(|v| v * self.norm_scale).collect())
            .collect())
    }

    /// Estimates one real component of the full grid from the same component
    /// of the pilot estimate. Stateless: identical inputs give identical outputs.
    pub fn predict(&self, ls_grid: &Tensor) -> Result<Tensor> {
        let c = &self.config;
        if ls_grid.shape() != [c.input_freq, c.input_sym] {
            return Err(Error::Contract(format!(
                "predict input shape {:?}, expected [{}, {}]",
                ls_grid.shape(),
                c.input_freq,
                c.input_sym
            )));
        }
        let out = self.predict_batch(&[ls_grid.data()])?.pop().unwrap();
        Tensor::new(&[c.output_freq, c.output_sym], out)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = BinWriter::with_header(MODEL_MAGIC, MODEL_FORMAT_VERSION);
        w.bytes(serde_json::to_string(&self.config)?.as_bytes());
        w.f64(self.norm_scale);
        let params = self.params();
        w.u32(params.len() as u32);
        for t in params {
            w.tensor(t.shape(), t.data());
        }
        Ok(w.into_bytes())
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = BinReader::open(bytes, path, MODEL_MAGIC, MODEL_FORMAT_VERSION)?;
        let config: ModelConfig = serde_json::from_slice(r.bytes()?)
            .map_err(|e| Error::format(path, format!("config record: {e}")))?;
        config
            .validate()
            .map_err(|e| Error::format(path, e.to_string()))?;
        let norm = r.f64()?;
        let mut model = Model::build(config, 0)?;
        model
            .set_norm_scale(norm)
            .map_err(|e| Error::format(path, e.to_string()))?;
        let count = r.u32()? as usize;
        let mut params = model.params_mut();
        if count != params.len() {
            return Err(Error::format(
                path,
                format!("{count} parameter tensors, expected {}", params.len()),
            ));
        }
        for t in params.iter_mut() {
            let (shape, data) = r.tensor()?;
            if shape != t.shape() {
                return Err(Error::format(
                    path,
                    format!("parameter shape {shape:?}, expected {:?}", t.shape()),
                ));
            }
            t.data_mut().copy_from_slice(&data);
        }
        r.finish()?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Model::from_bytes(&read_file(path)?, path)
    }

    pub fn zero_grad(&mut self) {
        for t in self.params_mut() {
            t.zero_grad();
        }
    }
}
