use num_complex::Complex64;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::ComplexGrid;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Pilots occupy the Cartesian product `freq_indices × sym_indices`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PilotPattern {
    pub name: String,
    pub freq_indices: Vec<usize>,
    pub sym_indices: Vec<usize>,
}

impl PilotPattern {
    pub fn new(name: impl Into<String>, freq_indices: Vec<usize>, sym_indices: Vec<usize>) -> Self {
        PilotPattern {
            name: name.into(),
            freq_indices,
            sym_indices,
        }
    }

    fn strided(name: &str, subcarriers: usize, step: usize, syms: &[usize]) -> Self {
        PilotPattern::new(
            name,
            (0..subcarriers).step_by(step).collect(),
            syms.to_vec(),
        )
    }

    /// Named layouts on a `subcarriers × 14` slot.
    ///
    /// | name | sub-carriers | symbols |
    /// |------|--------------|---------|
    /// | P1 | every 2nd | 2, 11 |
    /// | P2 | every 4th | 2, 11 |
    /// | P3 | every 2nd | 2 |
    /// | P4 | every 4th | 2, 5, 8, 11 |
    /// | P5 | every 3rd | 2, 11 |
    pub fn standard(name: &str, subcarriers: usize) -> Result<Self> {
        Ok(match name.to_ascii_uppercase().as_str() {
            "P1" => Self::strided("P1", subcarriers, 2, &[2, 11]),
            "P2" => Self::strided("P2", subcarriers, 4, &[2, 11]),
            "P3" => Self::strided("P3", subcarriers, 2, &[2]),
            "P4" => Self::strided("P4", subcarriers, 4, &[2, 5, 8, 11]),
            "P5" => Self::strided("P5", subcarriers, 3, &[2, 11]),
            _ => return Err(Error::Config(format!("unknown pilot pattern {name:?}"))),
        })
    }

    pub fn p1() -> Self {
        Self::standard("P1", 240).expect("P1 exists")
    }

    pub fn all_standard(subcarriers: usize) -> Vec<Self> {
        ["P1", "P2", "P3", "P4", "P5"]
            .iter()
            .map(|n| Self::standard(n, subcarriers).expect("known name"))
            .collect()
    }

    /// Every resource element is a pilot.
    pub fn full(rows: usize, cols: usize) -> Self {
        PilotPattern::new("full", (0..rows).collect(), (0..cols).collect())
    }

    pub fn rows(&self) -> usize {
        self.freq_indices.len()
    }

    pub fn cols(&self) -> usize {
        self.sym_indices.len()
    }

    pub fn count(&self) -> usize {
        self.rows() * self.cols()
    }

    pub fn validate(&self, subcarriers: usize, symbols: usize) -> Result<()> {
        let ok = |ix: &[usize], n: usize| {
            !ix.is_empty() && ix.iter().all(|&i| i < n) && ix.windows(2).all(|w| w[0] < w[1])
        };
        if !ok(&self.freq_indices, subcarriers) || !ok(&self.sym_indices, symbols) {
            return Err(Error::Config(format!(
                "pilot pattern {} does not fit a {subcarriers}×{symbols} grid (indices must be non-empty, ascending, in range)",
                self.name
            )));
        }
        Ok(())
    }

    /// Flat row-major indices into a `K × symbols` grid, in pilot-grid order.
    pub fn flat_indices(&self, symbols: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.count());
        for &k in &self.freq_indices {
            for &i in &self.sym_indices {
                out.push(k * symbols + i);
            }
        }
        out
    }

    /// The pilot sub-grid of `grid`.
    pub fn extract(&self, grid: &ComplexGrid) -> ComplexGrid {
        ComplexGrid::from_fn(self.rows(), self.cols(), |r, c| {
            grid.get(self.freq_indices[r], self.sym_indices[c])
        })
    }
}

/// LS estimates on the pilot sub-grid together with the noise they carry.
#[derive(Clone, Debug, PartialEq)]
pub struct PilotObservation {
    pub grid: ComplexGrid,
    pub sigma2: f64,
    pub snr_db: f64,
}

fn qpsk(rng: &mut Rng) -> Complex64 {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let re = if rng.gen::<bool>() { s } else { -s };
    let im = if rng.gen::<bool>() { s } else { -s };
    Complex64::new(re, im)
}

/// Transmits unit-modulus QPSK pilots through `h`, adds `CN(0, σ²)` with
/// `σ² = mean(|Y|²)/10^(snr/10)` over the pilot cells, and returns `Y/X`.
pub fn ls_at_pilots(
    h: &ComplexGrid,
    pattern: &PilotPattern,
    snr_db: f64,
    rng: &mut Rng,
) -> Result<PilotObservation> {
    pattern.validate(h.rows(), h.cols())?;
    let hp = pattern.extract(h);
    let x: Vec<Complex64> = (0..hp.data().len()).map(|_| qpsk(rng)).collect();
    let y: Vec<Complex64> = hp.data().iter().zip(&x).map(|(h, x)| h * x).collect();
    let y = ComplexGrid::new(hp.rows(), hp.cols(), y)?;
    let sigma2 = super::noise_variance(&y, snr_db);
    let sd = (sigma2 / 2.0).sqrt();
    let est = y
        .data()
        .iter()
        .zip(&x)
        .map(|(y, x)| {
            let y = if sigma2 > 0.0 {
                let re: f64 = StandardNormal.sample(rng);
                let im: f64 = StandardNormal.sample(rng);
                y + Complex64::new(sd * re, sd * im)
            } else {
                *y
            };
            // |x| = 1, so y/x = y·conj(x)
            y * x.conj()
        })
        .collect();
    Ok(PilotObservation {
        grid: ComplexGrid::new(hp.rows(), hp.cols(), est)?,
        sigma2,
        snr_db,
    })
}
