use serde::{Deserialize, Serialize};

use super::{sweep_snr, Estimator, EvalReport, NetEstimator, ReportMeta};
use crate::channel::{ComplexGrid, PilotPattern};
use crate::error::{Error, Result};
use crate::model::Model;

/// Second carrier for the center-frequency study.
pub const ALTERNATE_CARRIER_HZ: f64 = 2.6e9;

/// NMSE curves of every trained model on every test set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneralizationMatrix {
    pub train_sets: Vec<String>,
    pub test_sets: Vec<String>,
    /// `reports[i][j]`: model `i` on test set `j`.
    pub reports: Vec<Vec<EvalReport>>,
}

impl GeneralizationMatrix {
    pub fn mean_db(&self, train: usize, test: usize) -> f64 {
        self.reports[train][test].mean_nmse_db()
    }

    pub fn entry(&self, train: &str, test: &str) -> Option<&EvalReport> {
        let i = self.train_sets.iter().position(|t| t == train)?;
        let j = self.test_sets.iter().position(|t| t == test)?;
        Some(&self.reports[i][j])
    }
}

fn cross_evaluate(
    models: &[(&str, &Model)],
    tests: &[(&str, &[ComplexGrid])],
    snrs_db: &[f64],
    pattern: &PilotPattern,
    seed: u64,
    meta: &ReportMeta,
) -> Result<GeneralizationMatrix> {
    if models.is_empty() || tests.is_empty() {
        return Err(Error::Config(
            "cross evaluation needs models and test sets".into(),
        ));
    }
    let mut reports = vec![Vec::with_capacity(tests.len()); models.len()];
    for (name_j, slots) in tests {
        let ests: Vec<NetEstimator> = models
            .iter()
            .map(|(n, m)| NetEstimator::new(m).named(*n))
            .collect();
        let refs: Vec<&dyn Estimator> = ests.iter().map(|e| e as &dyn Estimator).collect();
        let m = meta.clone().note("test_set", name_j);
        for (i, r) in sweep_snr(&refs, slots, snrs_db, pattern, seed, &m)?
            .into_iter()
            .enumerate()
        {
            reports[i].push(r);
        }
    }
    Ok(GeneralizationMatrix {
        train_sets: models.iter().map(|m| m.0.to_string()).collect(),
        test_sets: tests.iter().map(|t| t.0.to_string()).collect(),
        reports,
    })
}

/// Models trained on channel-model subsets (e.g. CDL-A only, CDL-D only,
/// combined) evaluated on each test subset with shared pilot draws.
pub fn generalization_matrix(
    models: &[(&str, &Model)],
    tests: &[(&str, &[ComplexGrid])],
    snrs_db: &[f64],
    pattern: &PilotPattern,
    seed: u64,
    meta: &ReportMeta,
) -> Result<GeneralizationMatrix> {
    cross_evaluate(models, tests, snrs_db, pattern, seed, meta)
}

/// Models trained at different carriers evaluated on test sets generated at
/// each carrier; the diagonal is in-distribution.
pub fn sweep_center_frequency(
    models: &[(&str, &Model)],
    tests: &[(&str, &[ComplexGrid])],
    snrs_db: &[f64],
    pattern: &PilotPattern,
    seed: u64,
    meta: &ReportMeta,
) -> Result<GeneralizationMatrix> {
    cross_evaluate(models, tests, snrs_db, pattern, seed, meta)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PilotSweepEntry {
    pub pattern: String,
    pub pilots: usize,
    pub report: EvalReport,
}

/// Every estimator of each pattern at one SNR. Estimators are grouped by
/// pattern because learned ones are sized for a specific pilot grid.
pub fn sweep_pilot_configs(
    groups: &[(PilotPattern, Vec<&dyn Estimator>)],
    slots: &[ComplexGrid],
    snr_db: f64,
    seed: u64,
    meta: &ReportMeta,
) -> Result<Vec<PilotSweepEntry>> {
    let mut out = Vec::new();
    for (pattern, ests) in groups {
        for report in sweep_snr(ests, slots, &[snr_db], pattern, seed, meta)? {
            out.push(PilotSweepEntry {
                pattern: pattern.name.clone(),
                pilots: pattern.count(),
                report,
            });
        }
    }
    Ok(out)
}
