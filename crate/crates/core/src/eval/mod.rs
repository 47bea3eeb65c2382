//! NMSE evaluation of channel estimators on paired noisy-pilot draws.
//!
//! All estimators in one sweep see the same pilot observations: the draws
//! are made once per (SNR, slot) from a fixed seed and then handed to every
//! estimator. A hash of each SNR's draws is stored in the report metadata.

mod bench;
mod report;
mod studies;

pub use bench::{bench, BenchReport};
pub use report::{
    emit_report, read_json, write_csv, write_json, write_svg, EvalReport, ReportFormat, ReportMeta,
    SnrPoint,
};
pub use studies::{
    generalization_matrix, sweep_center_frequency, sweep_pilot_configs, GeneralizationMatrix,
    PilotSweepEntry, ALTERNATE_CARRIER_HZ,
};

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::channel::{ls_at_pilots, ComplexGrid, PilotObservation, PilotPattern};
use crate::classical::{ls_interpolate, LmmseFilter, LmmseStats};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::rng::rng_for;

/// SNR points of the standard test range.
pub const TEST_SNRS_DB: [f64; 6] = [-5.0, 0.0, 5.0, 10.0, 15.0, 20.0];

/// Slots handed to an estimator per call.
const EVAL_CHUNK: usize = 32;

/// `‖ĥ − h‖²_F / ‖h‖²_F`.
pub fn nmse(h_hat: &ComplexGrid, h: &ComplexGrid) -> Result<f64> {
    if h_hat.shape() != h.shape() {
        return Err(Error::Shape {
            op: "nmse",
            lhs: h_hat.shape().to_vec(),
            rhs: h.shape().to_vec(),
        });
    }
    let den = h.energy();
    if !(den > 0.0) {
        return Err(Error::Contract(
            "NMSE against an all-zero channel is undefined".into(),
        ));
    }
    let num: f64 = h_hat
        .data()
        .iter()
        .zip(h.data())
        .map(|(a, b)| (a - b).norm_sqr())
        .sum();
    Ok(num / den)
}

pub fn to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

/// One slot to estimate: the noisy pilot LS grid plus the ground truth,
/// which only genie-aided estimators may read.
#[derive(Clone, Copy, Debug)]
pub struct EvalCase<'a> {
    pub pilots: &'a PilotObservation,
    pub pattern: &'a PilotPattern,
    truth: &'a ComplexGrid,
}

impl<'a> EvalCase<'a> {
    pub fn new(
        pilots: &'a PilotObservation,
        pattern: &'a PilotPattern,
        truth: &'a ComplexGrid,
    ) -> Self {
        EvalCase {
            pilots,
            pattern,
            truth,
        }
    }

    pub fn grid_shape(&self) -> [usize; 2] {
        self.truth.shape()
    }

    /// Ground truth; reading it makes an estimator an oracle.
    pub fn genie_truth(&self) -> &'a ComplexGrid {
        self.truth
    }
}

/// Maps a noisy pilot observation to a full-grid estimate.
pub trait Estimator: Sync {
    fn name(&self) -> String;

    fn estimate(&self, case: &EvalCase<'_>) -> Result<ComplexGrid>;

    fn estimate_batch(&self, cases: &[EvalCase<'_>]) -> Result<Vec<ComplexGrid>> {
        cases.iter().map(|c| self.estimate(c)).collect()
    }

    /// Hash of the artifact behind the estimator (model file, fitted stats).
    fn artifact_hash(&self) -> Option<String> {
        None
    }
}

/// Returns the ground truth.
pub struct OracleEstimator;

impl Estimator for OracleEstimator {
    fn name(&self) -> String {
        "oracle".into()
    }

    fn estimate(&self, case: &EvalCase<'_>) -> Result<ComplexGrid> {
        Ok(case.genie_truth().clone())
    }
}

pub struct LsEstimator;

impl Estimator for LsEstimator {
    fn name(&self) -> String {
        "ls".into()
    }

    fn estimate(&self, case: &EvalCase<'_>) -> Result<ComplexGrid> {
        let [k, ns] = case.grid_shape();
        ls_interpolate(&case.pilots.grid, case.pattern, k, ns)
    }
}

/// LMMSE with the per-slot genie noise variance.
pub struct LmmseEstimator {
    pattern: PilotPattern,
    filter: LmmseFilter,
    hash: String,
}

impl LmmseEstimator {
    pub fn new(stats: &LmmseStats) -> Result<Self> {
        Ok(LmmseEstimator {
            pattern: stats.pattern.clone(),
            filter: stats.filter()?,
            hash: crate::io::sha256_hex(&stats.to_bytes()?),
        })
    }
}

impl Estimator for LmmseEstimator {
    fn name(&self) -> String {
        "lmmse".into()
    }

    fn estimate(&self, case: &EvalCase<'_>) -> Result<ComplexGrid> {
        if *case.pattern != self.pattern {
            return Err(Error::Contract(format!(
                "LMMSE statistics were fitted for pilot pattern {}, not {}",
                self.pattern.name, case.pattern.name
            )));
        }
        self.filter
            .estimate(case.pilots.grid.data(), case.pilots.sigma2)
    }

    fn artifact_hash(&self) -> Option<String> {
        Some(self.hash.clone())
    }
}

/// The learned estimator; real and imaginary parts go through the same
/// network as separate samples and are recombined.
pub struct NetEstimator<'a> {
    model: &'a Model,
    name: String,
    hash: Option<String>,
}

impl<'a> NetEstimator<'a> {
    pub fn new(model: &'a Model) -> Self {
        NetEstimator {
            model,
            name: "sisrafnet".into(),
            hash: None,
        }
    }

    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn with_hash(mut self, hash: String) -> Self {
        self.hash = Some(hash);
        self
    }

    fn check(&self, case: &EvalCase<'_>) -> Result<()> {
        let c = self.model.config();
        let p = case.pattern;
        if [p.rows(), p.cols()] != [c.input_freq, c.input_sym]
            || case.grid_shape() != [c.output_freq, c.output_sym]
        {
            return Err(Error::Contract(format!(
                "pilot pattern {} ({}×{}) on a {:?} grid does not match model input {}×{} / output {}×{}",
                p.name,
                p.rows(),
                p.cols(),
                case.grid_shape(),
                c.input_freq,
                c.input_sym,
                c.output_freq,
                c.output_sym
            )));
        }
        Ok(())
    }
}

impl Estimator for NetEstimator<'_> {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn estimate(&self, case: &EvalCase<'_>) -> Result<ComplexGrid> {
        Ok(self
            .estimate_batch(std::slice::from_ref(case))?
            .pop()
            .unwrap())
    }

    fn estimate_batch(&self, cases: &[EvalCase<'_>]) -> Result<Vec<ComplexGrid>> {
        let parts: Vec<[Vec<f64>; 2]> = cases
            .iter()
            .map(|c| {
                self.check(c)?;
                Ok([c.pilots.grid.real_part(), c.pilots.grid.imag_part()])
            })
            .collect::<Result<_>>()?;
        let inputs: Vec<&[f64]> = parts
            .iter()
            .flat_map(|p| [p[0].as_slice(), p[1].as_slice()])
            .collect();
        let out = self.model.predict_batch(&inputs)?;
        let c = self.model.config();
        out.chunks(2)
            .map(|ri| ComplexGrid::from_parts(c.output_freq, c.output_sym, &ri[0], &ri[1]))
            .collect()
    }

    fn artifact_hash(&self) -> Option<String> {
        self.hash.clone()
    }
}

/// Seeded noisy pilots for every slot at one SNR. The stream depends only on
/// `(seed, snr, slot index)`, not on the pattern or the estimators.
pub fn draw_pilots(
    slots: &[ComplexGrid],
    pattern: &PilotPattern,
    snr_db: f64,
    seed: u64,
) -> Result<Vec<PilotObservation>> {
    slots
        .iter()
        .enumerate()
        .map(|(j, h)| {
            ls_at_pilots(
                h,
                pattern,
                snr_db,
                &mut rng_for(seed, &[snr_db.to_bits(), j as u64]),
            )
        })
        .collect()
}

pub fn draw_hash(draws: &[PilotObservation]) -> String {
    let mut h = Sha256::new();
    for d in draws {
        h.update(d.sigma2.to_le_bytes());
        for v in d.grid.data() {
            h.update(v.re.to_le_bytes());
            h.update(v.im.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

/// Mean per-slot NMSE of one estimator on pre-drawn pilots.
pub fn mean_nmse(
    est: &dyn Estimator,
    slots: &[ComplexGrid],
    draws: &[PilotObservation],
    pattern: &PilotPattern,
) -> Result<f64> {
    if slots.is_empty() || slots.len() != draws.len() {
        return Err(Error::Contract(format!(
            "{} slots vs {} pilot draws",
            slots.len(),
            draws.len()
        )));
    }
    let per_chunk: Vec<Vec<f64>> = slots
        .par_chunks(EVAL_CHUNK)
        .zip(draws.par_chunks(EVAL_CHUNK))
        .map(|(hs, ds)| {
            let cases: Vec<EvalCase> = hs
                .iter()
                .zip(ds)
                .map(|(h, d)| EvalCase::new(d, pattern, h))
                .collect();
            let est = est.estimate_batch(&cases)?;
            est.iter()
                .zip(hs)
                .map(|(e, h)| nmse(e, h))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    // ordered reduction keeps the result independent of scheduling
    let all: Vec<f64> = per_chunk.into_iter().flatten().collect();
    Ok(all.iter().sum::<f64>() / all.len() as f64)
}

/// NMSE-vs-SNR for every estimator on identical draws; one report each.
pub fn sweep_snr(
    estimators: &[&dyn Estimator],
    slots: &[ComplexGrid],
    snrs_db: &[f64],
    pattern: &PilotPattern,
    seed: u64,
    meta: &ReportMeta,
) -> Result<Vec<EvalReport>> {
    let mut reports: Vec<EvalReport> = estimators
        .iter()
        .map(|e| {
            let mut m = meta.clone();
            m.pilot_pattern = pattern.name.clone();
            m.eval_seed = seed;
            m.model_hash = e.artifact_hash();
            EvalReport::new(e.name(), m)
        })
        .collect();
    for &snr in snrs_db {
        let draws = draw_pilots(slots, pattern, snr, seed)?;
        let hash = draw_hash(&draws);
        for (e, r) in estimators.iter().zip(reports.iter_mut()) {
            let v = mean_nmse(*e, slots, &draws, pattern)?;
            r.push_point(snr, v, slots.len());
            r.meta.draw_hashes.push(hash.clone());
        }
    }
    Ok(reports)
}

/// Average over SNR points of the NMSE in dB: the validation metric.
pub fn mean_nmse_db(
    est: &dyn Estimator,
    slots: &[ComplexGrid],
    snrs_db: &[f64],
    pattern: &PilotPattern,
    seed: u64,
) -> Result<f64> {
    let mut acc = 0.0;
    for &snr in snrs_db {
        let draws = draw_pilots(slots, pattern, snr, seed)?;
        acc += to_db(mean_nmse(est, slots, &draws, pattern)?);
    }
    Ok(acc / snrs_db.len() as f64)
}
