//! LS and LMMSE for every standard pilot pattern at one SNR.
//!
//! `cargo run --release --example pilot_configs [snr_db]`

mod shared;

use sisrafnet::channel::PilotPattern;
use sisrafnet::classical::LmmseStats;
use sisrafnet::eval::{sweep_pilot_configs, Estimator, LmmseEstimator, LsEstimator, ReportMeta};

fn main() -> sisrafnet::Result<()> {
    let snr: f64 = std::env::args()
        .nth(1)
        .map_or(10.0, |s| s.parse().expect("SNR in dB"));
    let (data, test) = shared::channels(&shared::sim(), shared::all, 6);
    let patterns = PilotPattern::all_standard(shared::SUBCARRIERS);
    let filters = patterns
        .iter()
        .map(|p| LmmseEstimator::new(&LmmseStats::fit(&data.train, p)?))
        .collect::<sisrafnet::Result<Vec<_>>>()?;
    let groups: Vec<(PilotPattern, Vec<&dyn Estimator>)> = patterns
        .iter()
        .zip(&filters)
        .map(|(p, f)| (p.clone(), vec![&LsEstimator as &dyn Estimator, f]))
        .collect();
    for e in sweep_pilot_configs(&groups, &test, snr, 8, &ReportMeta::default())? {
        println!(
            "{} ({:>3} pilots) {:<6} {:7.2} dB",
            e.pattern, e.pilots, e.report.estimator, e.report.points[0].nmse_db
        );
    }
    Ok(())
}
