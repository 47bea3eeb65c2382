//! Non-learned baselines: bilinear interpolation of the pilot LS estimates
//! and LMMSE with empirical full-grid correlation.

use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::channel::{ComplexGrid, PilotPattern};
use crate::error::{Error, Result};
use crate::io::{read_file, BinReader, BinWriter};
use crate::tensor::kernels::{gemm, Mat};

/// For each target index, the two bracketing pilot positions and the weight
/// on the upper one. Beyond the outermost pilots the nearest value is held.
fn axis_weights(pilots: &[usize], n: usize) -> Vec<(usize, usize, f64)> {
    (0..n)
        .map(|t| {
            let hi = pilots.partition_point(|&p| p < t);
            if hi == 0 {
                (0, 0, 0.0)
            } else if hi == pilots.len() {
                (hi - 1, hi - 1, 0.0)
            } else if pilots[hi] == t {
                (hi, hi, 0.0)
            } else {
                let (a, b) = (pilots[hi - 1], pilots[hi]);
                (hi - 1, hi, (t - a) as f64 / (b - a) as f64)
            }
        })
        .collect()
}

/// Bilinear interpolation of a pilot LS grid onto the full `k × ns` grid.
/// An axis with a single pilot line is held constant along that axis.
pub fn ls_interpolate(
    pilots: &ComplexGrid,
    pattern: &PilotPattern,
    k: usize,
    ns: usize,
) -> Result<ComplexGrid> {
    pattern.validate(k, ns)?;
    if pilots.shape() != [pattern.rows(), pattern.cols()] {
        return Err(Error::Shape {
            op: "ls_interpolate",
            lhs: pilots.shape().to_vec(),
            rhs: vec![pattern.rows(), pattern.cols()],
        });
    }
    let wf = axis_weights(&pattern.freq_indices, k);
    let wt = axis_weights(&pattern.sym_indices, ns);
    Ok(ComplexGrid::from_fn(k, ns, |r, c| {
        let (r0, r1, a) = wf[r];
        let (c0, c1, b) = wt[c];
        pilots.get(r0, c0) * ((1.0 - a) * (1.0 - b))
            + pilots.get(r1, c0) * (a * (1.0 - b))
            + pilots.get(r0, c1) * ((1.0 - a) * b)
            + pilots.get(r1, c1) * (a * b)
    }))
}

/// Empirical second-order statistics for one pilot pattern.
///
/// `r_hp[i, j] = E[h_i · conj(p_j)]` over flattened full grids `h` and pilot
/// vectors `p`; `r_pp` is the pilot auto-correlation.
#[derive(Clone, Debug, PartialEq)]
pub struct LmmseStats {
    pub pattern: PilotPattern,
    pub subcarriers: usize,
    pub symbols: usize,
    pub r_hp: DMatrix<Complex64>,
    pub r_pp: DMatrix<Complex64>,
    pub estimated_from: usize,
}

const STATS_MAGIC: &[u8; 4] = b"SRLM";
const STATS_VERSION: u32 = 1;
/// Grids folded into one GEMM when accumulating correlations.
const FIT_CHUNK: usize = 128;

fn hermitize(m: &mut DMatrix<Complex64>) {
    let n = m.nrows();
    for i in 0..n {
        m[(i, i)].im = 0.0;
        for j in i + 1..n {
            let v = (m[(i, j)] + m[(j, i)].conj()) * 0.5;
            m[(i, j)] = v;
            m[(j, i)] = v.conj();
        }
    }
}

impl LmmseStats {
    /// Sample correlations over `grids`, which must all be `k × ns`.
    pub fn fit<'a>(
        grids: impl IntoIterator<Item = &'a ComplexGrid>,
        pattern: &PilotPattern,
    ) -> Result<Self> {
        let grids: Vec<&ComplexGrid> = grids.into_iter().collect();
        let first = grids
            .first()
            .ok_or_else(|| Error::Data("LMMSE fit needs at least one grid".into()))?;
        let [k, ns] = first.shape();
        pattern.validate(k, ns)?;
        let (d, p) = (k * ns, pattern.count());
        if grids.len() < p {
            log::warn!(
                "fitting {p}×{p} pilot correlation from only {} grids; relying on the ridge",
                grids.len()
            );
        }
        let flat = pattern.flat_indices(ns);
        // real and imaginary parts of R_hp and R_pp, row-major
        let (mut hp_re, mut hp_im) = (vec![0.0; d * p], vec![0.0; d * p]);
        let (mut pp_re, mut pp_im) = (vec![0.0; p * p], vec![0.0; p * p]);
        for chunk in grids.chunks(FIT_CHUNK) {
            let n = chunk.len();
            let (mut hr, mut hi) = (Vec::with_capacity(n * d), Vec::with_capacity(n * d));
            let (mut pr, mut pi) = (Vec::with_capacity(n * p), Vec::with_capacity(n * p));
            for g in chunk {
                if g.shape() != [k, ns] {
                    return Err(Error::Shape {
                        op: "fit_lmmse",
                        lhs: g.shape().to_vec(),
                        rhs: vec![k, ns],
                    });
                }
                hr.extend(g.data().iter().map(|c| c.re));
                hi.extend(g.data().iter().map(|c| c.im));
                pr.extend(flat.iter().map(|&j| g.data()[j].re));
                pi.extend(flat.iter().map(|&j| g.data()[j].im));
            }
            // (Hr + jHi)ᵀ (Pr − jPi) = (HrᵀPr + HiᵀPi) + j(HiᵀPr − HrᵀPi)
            gemm(1.0, Mat::t(&hr, n, d), Mat::new(&pr, n, p), 1.0, &mut hp_re);
            gemm(1.0, Mat::t(&hi, n, d), Mat::new(&pi, n, p), 1.0, &mut hp_re);
            gemm(1.0, Mat::t(&hi, n, d), Mat::new(&pr, n, p), 1.0, &mut hp_im);
            gemm(
                -1.0,
                Mat::t(&hr, n, d),
                Mat::new(&pi, n, p),
                1.0,
                &mut hp_im,
            );
            gemm(1.0, Mat::t(&pr, n, p), Mat::new(&pr, n, p), 1.0, &mut pp_re);
            gemm(1.0, Mat::t(&pi, n, p), Mat::new(&pi, n, p), 1.0, &mut pp_re);
            gemm(1.0, Mat::t(&pi, n, p), Mat::new(&pr, n, p), 1.0, &mut pp_im);
            gemm(
                -1.0,
                Mat::t(&pr, n, p),
                Mat::new(&pi, n, p),
                1.0,
                &mut pp_im,
            );
        }
        let inv = 1.0 / grids.len() as f64;
        let assemble = |re: &[f64], im: &[f64], rows: usize, cols: usize| {
            DMatrix::from_fn(rows, cols, |i, j| {
                Complex64::new(re[i * cols + j], im[i * cols + j]) * inv
            })
        };
        let r_hp = assemble(&hp_re, &hp_im, d, p);
        let mut r_pp = assemble(&pp_re, &pp_im, p, p);
        hermitize(&mut r_pp);
        Ok(LmmseStats {
            pattern: pattern.clone(),
            subcarriers: k,
            symbols: ns,
            r_hp,
            r_pp,
            estimated_from: grids.len(),
        })
    }

    /// Statistics supplied directly, e.g. from a known covariance.
    pub fn from_parts(
        pattern: PilotPattern,
        subcarriers: usize,
        symbols: usize,
        r_hp: DMatrix<Complex64>,
        mut r_pp: DMatrix<Complex64>,
    ) -> Result<Self> {
        pattern.validate(subcarriers, symbols)?;
        let (d, p) = (subcarriers * symbols, pattern.count());
        if r_hp.shape() != (d, p) || r_pp.shape() != (p, p) {
            return Err(Error::Shape {
                op: "lmmse_stats",
                lhs: vec![r_hp.nrows(), r_hp.ncols(), r_pp.nrows(), r_pp.ncols()],
                rhs: vec![d, p, p, p],
            });
        }
        hermitize(&mut r_pp);
        Ok(LmmseStats {
            pattern,
            subcarriers,
            symbols,
            r_hp,
            r_pp,
            estimated_from: 0,
        })
    }

    /// Diagonal loading added on top of `σ²`: `1e-6 · trace(R_pp) / |P|`.
    pub fn ridge(&self) -> f64 {
        let p = self.r_pp.nrows();
        1e-6 * self.r_pp.trace().re / p as f64
    }

    fn check_pilots(&self, pilot_ls: &[Complex64], sigma2: f64) -> Result<()> {
        if pilot_ls.len() != self.pattern.count() {
            return Err(Error::Shape {
                op: "lmmse_estimate",
                lhs: vec![pilot_ls.len()],
                rhs: vec![self.pattern.count()],
            });
        }
        if !(sigma2 >= 0.0) {
            return Err(Error::Contract(format!(
                "noise variance {sigma2} must be ≥ 0"
            )));
        }
        Ok(())
    }

    fn to_grid(&self, h: DVector<Complex64>) -> Result<ComplexGrid> {
        ComplexGrid::new(self.subcarriers, self.symbols, h.as_slice().to_vec())
    }

    /// `ĥ = R_hp (R_pp + (σ² + ridge) I)⁻¹ h̃_p` through a Cholesky solve.
    /// `pilot_ls` is in pilot-grid (frequency-major) order.
    pub fn estimate(&self, pilot_ls: &[Complex64], sigma2: f64) -> Result<ComplexGrid> {
        self.check_pilots(pilot_ls, sigma2)?;
        let p = self.r_pp.nrows();
        let load = Complex64::new(sigma2 + self.ridge(), 0.0);
        let a = &self.r_pp + DMatrix::from_diagonal_element(p, p, load);
        // complex Cholesky happily takes square roots of negative pivots,
        // so definiteness is judged from the factor's diagonal
        let chol = Cholesky::new(a.clone())
            .filter(|c| c.l_dirty().diagonal().iter().all(|d| d.re > 0.0 && d.im.abs() <= 1e-12 * d.re))
            .ok_or_else(|| {
            let eig = SymmetricEigen::new(a).eigenvalues;
            let (lo, hi) = eig.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &e| (l.min(e), h.max(e)));
            Error::Numeric(format!(
                "LMMSE system is not positive definite: eigenvalues in [{lo:e}, {hi:e}], condition number {:e}",
                hi / lo.abs()
            ))
        })?;
        let w = chol.solve(&DVector::from_column_slice(pilot_ls));
        self.to_grid(&self.r_hp * w)
    }

    /// Precomputes an eigen-decomposition so repeated estimates with varying
    /// `σ²` cost two matrix–vector products.
    pub fn filter(&self) -> Result<LmmseFilter> {
        let eig = SymmetricEigen::new(self.r_pp.clone());
        let lambda: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        let ridge = self.ridge();
        if let Some(&lo) = lambda.iter().min_by(|a, b| a.total_cmp(b)) {
            if lo + ridge <= 0.0 {
                return Err(Error::Numeric(format!(
                    "pilot correlation has eigenvalue {lo:e} below the ridge {ridge:e}"
                )));
            }
        }
        let u = eig.eigenvectors;
        Ok(LmmseFilter {
            g: &self.r_hp * &u,
            u_h: u.adjoint(),
            lambda,
            ridge,
            subcarriers: self.subcarriers,
            symbols: self.symbols,
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = BinWriter::with_header(STATS_MAGIC, STATS_VERSION);
        w.bytes(serde_json::to_string(&self.pattern)?.as_bytes());
        w.u32(self.subcarriers as u32);
        w.u32(self.symbols as u32);
        w.u32(self.estimated_from as u32);
        for m in [&self.r_hp, &self.r_pp] {
            // nalgebra is column-major; store row-major like every other tensor
            let t = m.transpose();
            let re: Vec<f64> = t.iter().map(|c| c.re).collect();
            let im: Vec<f64> = t.iter().map(|c| c.im).collect();
            w.tensor(&[m.nrows(), m.ncols()], &re);
            w.tensor(&[m.nrows(), m.ncols()], &im);
        }
        Ok(w.into_bytes())
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = BinReader::open(bytes, path, STATS_MAGIC, STATS_VERSION)?;
        let pattern: PilotPattern = serde_json::from_slice(r.bytes()?)
            .map_err(|e| Error::format(path, format!("pattern record: {e}")))?;
        let k = r.u32()? as usize;
        let ns = r.u32()? as usize;
        let estimated_from = r.u32()? as usize;
        let mut mats = Vec::with_capacity(2);
        for _ in 0..2 {
            let (s_re, re) = r.tensor()?;
            let (s_im, im) = r.tensor()?;
            if s_re.len() != 2 || s_re != s_im {
                return Err(Error::format(
                    path,
                    format!("matrix shapes {s_re:?} / {s_im:?}"),
                ));
            }
            let cols = s_re[1];
            mats.push(DMatrix::from_fn(s_re[0], cols, |i, j| {
                Complex64::new(re[i * cols + j], im[i * cols + j])
            }));
        }
        r.finish()?;
        let r_pp = mats.pop().unwrap();
        let r_hp = mats.pop().unwrap();
        let mut s = LmmseStats::from_parts(pattern, k, ns, r_hp, r_pp)
            .map_err(|e| Error::format(path, e.to_string()))?;
        s.estimated_from = estimated_from;
        Ok(s)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?, path)
    }
}

/// `ĥ = R_hp (R_pp + (σ² + ridge) I)⁻¹ h̃_p` through the Cholesky route.
pub fn lmmse_estimate(
    stats: &LmmseStats,
    pilot_ls: &[Complex64],
    sigma2: f64,
) -> Result<ComplexGrid> {
    stats.estimate(pilot_ls, sigma2)
}

/// LMMSE with `R_pp = U Λ Uᴴ` factored once:
/// `ĥ = (R_hp U) diag(1/(λ + σ² + ridge)) Uᴴ h̃_p`.
#[derive(Clone, Debug)]
pub struct LmmseFilter {
    g: DMatrix<Complex64>,
    u_h: DMatrix<Complex64>,
    lambda: Vec<f64>,
    ridge: f64,
    subcarriers: usize,
    symbols: usize,
}

impl LmmseFilter {
    pub fn estimate(&self, pilot_ls: &[Complex64], sigma2: f64) -> Result<ComplexGrid> {
        if pilot_ls.len() != self.lambda.len() {
            return Err(Error::Shape {
                op: "lmmse_estimate",
                lhs: vec![pilot_ls.len()],
                rhs: vec![self.lambda.len()],
            });
        }
        if !(sigma2 >= 0.0) {
            return Err(Error::Contract(format!(
                "noise variance {sigma2} must be ≥ 0"
            )));
        }
        let mut c = &self.u_h * DVector::from_column_slice(pilot_ls);
        for (v, &l) in c.iter_mut().zip(&self.lambda) {
            *v /= l + sigma2 + self.ridge;
        }
        let h = &self.g * c;
        ComplexGrid::new(self.subcarriers, self.symbols, h.as_slice().to_vec())
    }
}
