//! Frequency–time channel grids from a simplified cluster-delay-line model.
//!
//! Each cluster is a single ray with a fixed (profile-defined) delay, a random
//! phase and a random Doppler direction. The angular structure of the full
//! model is dropped, which is exact for a single-antenna link up to the
//! intra-cluster Doppler spread. Channels are produced directly per resource
//! element; there is no waveform simulation.

mod dataset;
mod pilots;
mod profile;

pub use dataset::{
    generate_dataset, split, ChannelSetting, Dataset, DatasetManifest, RealizationEntry, Split,
    DATASET_SCHEMA_VERSION,
};
pub use pilots::{ls_at_pilots, PilotObservation, PilotPattern};
pub use profile::{ChannelProfile, ProfileKind};

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Propagation speed used for Doppler shifts, m/s.
pub const SPEED_OF_LIGHT: f64 = 3.0e8;

pub fn kmh_to_mps(kmh: f64) -> f64 {
    kmh / 3.6
}

/// Maximum Doppler shift `v·f_c/c` in Hz.
pub fn max_doppler_hz(velocity_mps: f64, carrier_hz: f64) -> f64 {
    velocity_mps * carrier_hz / SPEED_OF_LIGHT
}

/// `rows × cols` complex grid, row-major. For channel grids rows are
/// sub-carriers and columns are OFDM symbols.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexGrid {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl ComplexGrid {
    pub fn new(rows: usize, cols: usize, data: Vec<Complex64>) -> Result<Self> {
        if rows == 0 || cols == 0 || rows * cols != data.len() {
            return Err(Error::Shape {
                op: "complex_grid",
                lhs: vec![rows, cols],
                rhs: vec![data.len()],
            });
        }
        Ok(ComplexGrid { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        ComplexGrid {
            rows,
            cols,
            data: vec![Complex64::new(0.0, 0.0); rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        ComplexGrid { rows, cols, data }
    }

    /// Assembles a grid from separate real and imaginary planes.
    pub fn from_parts(rows: usize, cols: usize, re: &[f64], im: &[f64]) -> Result<Self> {
        if re.len() != im.len() {
            return Err(Error::Shape {
                op: "complex_grid",
                lhs: vec![re.len()],
                rhs: vec![im.len()],
            });
        }
        let data = re
            .iter()
            .zip(im)
            .map(|(&a, &b)| Complex64::new(a, b))
            .collect();
        ComplexGrid::new(rows, cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.rows, self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> Complex64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: Complex64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn real_part(&self) -> Vec<f64> {
        self.data.iter().map(|c| c.re).collect()
    }

    pub fn imag_part(&self) -> Vec<f64> {
        self.data.iter().map(|c| c.im).collect()
    }

    /// Squared Frobenius norm.
    pub fn energy(&self) -> f64 {
        self.data.iter().map(|c| c.norm_sqr()).sum()
    }

    /// Mean `|h|²` over all elements.
    pub fn mean_power(&self) -> f64 {
        self.energy() / self.data.len() as f64
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|c| *c *= s);
    }

    pub fn is_finite(&self) -> bool {
        self.data
            .iter()
            .all(|c| c.re.is_finite() && c.im.is_finite())
    }
}

/// Parameters of one channel setting plus the shared slot numerology.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub carrier_hz: f64,
    pub subcarriers: usize,
    pub subcarrier_spacing_hz: f64,
    pub symbols_per_slot: usize,
    pub delay_spread_s: f64,
    pub velocity_mps: f64,
    pub slots_per_realization: usize,
    /// Cyclic-prefix overhead folded into the symbol duration.
    pub cp_overhead: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            carrier_hz: 3.5e9,
            subcarriers: 240,
            subcarrier_spacing_hz: 30e3,
            symbols_per_slot: 14,
            delay_spread_s: 30e-9,
            velocity_mps: kmh_to_mps(3.0),
            slots_per_realization: 100,
            cp_overhead: 0.07,
            seed: 1,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = self.carrier_hz > 0.0
            && self.subcarrier_spacing_hz > 0.0
            && self.delay_spread_s > 0.0
            && self.velocity_mps >= 0.0
            && self.cp_overhead >= 0.0
            && self.subcarriers > 0
            && self.symbols_per_slot > 0
            && self.slots_per_realization > 0;
        if !positive {
            return Err(Error::Config(format!(
                "simulation parameters must be positive: {self:?}"
            )));
        }
        let bandwidth = self.subcarriers as f64 * self.subcarrier_spacing_hz;
        if bandwidth >= 0.1 * self.carrier_hz {
            return Err(Error::Config(format!(
                "occupied bandwidth {bandwidth} Hz is not small against carrier {} Hz",
                self.carrier_hz
            )));
        }
        Ok(())
    }

    /// OFDM symbol duration including cyclic prefix.
    pub fn symbol_duration_s(&self) -> f64 {
        (1.0 + self.cp_overhead) / self.subcarrier_spacing_hz
    }

    pub fn max_doppler_hz(&self) -> f64 {
        max_doppler_hz(self.velocity_mps, self.carrier_hz)
    }
}

/// Per-realization random path state; it persists across all slots.
#[derive(Clone, Debug, PartialEq)]
pub struct PathDraw {
    pub phases: Vec<f64>,
    pub doppler_cos: Vec<f64>,
    pub los_phase: f64,
    pub los_doppler_cos: f64,
}

impl PathDraw {
    pub fn sample(profile: &ChannelProfile, rng: &mut Rng) -> Self {
        let n = profile.cluster_delays.len();
        let mut phases = Vec::with_capacity(n);
        let mut doppler_cos = Vec::with_capacity(n);
        for _ in 0..n {
            phases.push(rng.gen_range(0.0..2.0 * PI));
            doppler_cos.push(rng.gen_range(0.0..2.0 * PI).cos());
        }
        let los_phase = rng.gen_range(0.0..2.0 * PI);
        let los_doppler_cos = rng.gen_range(0.0..2.0 * PI).cos();
        PathDraw {
            phases,
            doppler_cos,
            los_phase,
            los_doppler_cos,
        }
    }

    /// Zero phases and no Doppler; handy for deterministic checks.
    pub fn static_paths(profile: &ChannelProfile) -> Self {
        let n = profile.cluster_delays.len();
        PathDraw {
            phases: vec![0.0; n],
            doppler_cos: vec![0.0; n],
            los_phase: 0.0,
            los_doppler_cos: 0.0,
        }
    }
}

/// Ground-truth `K × N_s` grid of slot `slot`:
///
/// `H[k, i] = Σ_n √P_n · exp(j(φ_n + 2π f_{d,n} t_{s,i} − 2π f_k τ_n))`
///
/// with `f_k = k·Δf`, `τ_n = d_n · delay_spread`, `f_{d,n} = f_d cos θ_n`,
/// `t_{s,i} = (s·N_s + i)·T_sym`. A LOS profile mixes a specular ray with
/// the diffuse sum using Rician weights `√(K/(K+1))` and `√(1/(K+1))`.
pub fn freq_response(
    profile: &ChannelProfile,
    config: &SimConfig,
    draw: &PathDraw,
    slot: usize,
) -> ComplexGrid {
    let (k_count, n_sym) = (config.subcarriers, config.symbols_per_slot);
    let t_sym = config.symbol_duration_s();
    let fd = config.max_doppler_hz();
    let t0 = (slot * n_sym) as f64 * t_sym;
    let (w_los, w_diffuse) = if profile.has_los {
        let k = profile.los_k_factor;
        ((k / (k + 1.0)).sqrt(), (1.0 / (k + 1.0)).sqrt())
    } else {
        (0.0, 1.0)
    };
    let mut grid = ComplexGrid::zeros(k_count, n_sym);
    let mut freq_term = vec![Complex64::new(0.0, 0.0); k_count];
    let mut time_term = vec![Complex64::new(0.0, 0.0); n_sym];
    for (n, (&d, &p)) in profile
        .cluster_delays
        .iter()
        .zip(&profile.cluster_powers)
        .enumerate()
    {
        let tau = d * config.delay_spread_s;
        let amp = w_diffuse * p.sqrt();
        for (k, ft) in freq_term.iter_mut().enumerate() {
            let f = k as f64 * config.subcarrier_spacing_hz;
            *ft = Complex64::from_polar(1.0, -2.0 * PI * f * tau);
        }
        let fdn = fd * draw.doppler_cos[n];
        for (i, tt) in time_term.iter_mut().enumerate() {
            let t = t0 + i as f64 * t_sym;
            *tt = Complex64::from_polar(amp, draw.phases[n] + 2.0 * PI * fdn * t);
        }
        for k in 0..k_count {
            let row = &mut grid.data[k * n_sym..(k + 1) * n_sym];
            for (v, tt) in row.iter_mut().zip(&time_term) {
                *v += freq_term[k] * tt;
            }
        }
    }
    if profile.has_los {
        let fdl = fd * draw.los_doppler_cos;
        for i in 0..n_sym {
            let t = t0 + i as f64 * t_sym;
            let los = Complex64::from_polar(w_los, draw.los_phase + 2.0 * PI * fdl * t);
            for k in 0..k_count {
                grid.data[k * n_sym + i] += los;
            }
        }
    }
    grid
}

/// A sequence of consecutive ground-truth slots from one path draw.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelRealization {
    pub config: SimConfig,
    pub profile: ProfileKind,
    pub slots: Vec<ComplexGrid>,
}

impl ChannelRealization {
    /// Draws paths from `config.seed`, renders every slot and rescales the
    /// realization to unit mean power.
    pub fn generate(profile: &ChannelProfile, config: &SimConfig) -> Result<Self> {
        config.validate()?;
        profile.validate()?;
        let mut rng = crate::rng::rng_for(config.seed, &[0x5041_5448]);
        let draw = PathDraw::sample(profile, &mut rng);
        let mut slots: Vec<ComplexGrid> = (0..config.slots_per_realization)
            .map(|s| freq_response(profile, config, &draw, s))
            .collect();
        let power = slots.iter().map(|g| g.mean_power()).sum::<f64>() / slots.len() as f64;
        if !(power > 0.0 && power.is_finite()) {
            return Err(Error::Numeric(format!("realization power {power}")));
        }
        let s = power.sqrt().recip();
        slots.iter_mut().for_each(|g| g.scale(s));
        Ok(ChannelRealization {
            config: config.clone(),
            profile: profile.kind,
            slots,
        })
    }

    pub fn mean_power(&self) -> f64 {
        self.slots.iter().map(|g| g.mean_power()).sum::<f64>() / self.slots.len() as f64
    }
}

/// Noise variance for a target SNR relative to the mean power of `grid`.
pub fn noise_variance(grid: &ComplexGrid, snr_db: f64) -> f64 {
    if snr_db == f64::INFINITY {
        0.0
    } else {
        grid.mean_power() / 10f64.powf(snr_db / 10.0)
    }
}

/// Adds i.i.d. `CN(0, σ²)` noise with `σ² = mean(|Y|²) / 10^(snr/10)`.
/// `snr_db = +∞` returns the input unchanged. Returns the grid and `σ²`.
pub fn add_noise(grid: &ComplexGrid, snr_db: f64, rng: &mut Rng) -> (ComplexGrid, f64) {
    let sigma2 = noise_variance(grid, snr_db);
    let mut out = grid.clone();
    if sigma2 > 0.0 {
        let sd = (sigma2 / 2.0).sqrt();
        for v in out.data.iter_mut() {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            *v += Complex64::new(sd * re, sd * im);
        }
    }
    (out, sigma2)
}
