//! LS, LMMSE, genie and a briefly trained network over the test SNRs, with
//! CSV and SVG reports.
//!
//! `cargo run --release --example snr_sweep`

mod shared;

use sisrafnet::channel::PilotPattern;
use sisrafnet::classical::LmmseStats;
use sisrafnet::eval::{
    emit_report, sweep_snr, LmmseEstimator, LsEstimator, NetEstimator, OracleEstimator,
    ReportFormat, ReportMeta, TEST_SNRS_DB,
};
use sisrafnet::model::Model;
use sisrafnet::train::{train, TrainControl};

fn main() -> sisrafnet::Result<()> {
    let (data, test) = shared::channels(&shared::sim(), shared::all, 2);
    let p1 = PilotPattern::standard("P1", shared::SUBCARRIERS)?;
    let lmmse = LmmseEstimator::new(&LmmseStats::fit(&data.train, &p1)?)?;
    let model = train(
        Model::build(shared::narrow_model(p1.rows(), p1.cols()), 1)?,
        &data,
        &shared::quick_train(&[0.0, 10.0, 15.0], 4),
        TrainControl::default(),
    )?
    .model;
    let net = NetEstimator::new(&model);
    let reports = sweep_snr(
        &[&LsEstimator, &lmmse, &net, &OracleEstimator],
        &test,
        &TEST_SNRS_DB,
        &p1,
        11,
        &ReportMeta::new("example", "in-memory"),
    )?;
    print!("{:<10}", "SNR dB");
    for s in TEST_SNRS_DB {
        print!("{s:>8}");
    }
    println!();
    for r in &reports {
        print!("{:<10}", r.estimator);
        for p in &r.points {
            print!("{:>8.2}", p.nmse_db);
        }
        println!();
    }
    let dir = std::env::temp_dir();
    for f in [ReportFormat::Csv, ReportFormat::Svg] {
        println!(
            "wrote {}",
            emit_report(&reports, f, &dir, "srf_example_sweep")?.display()
        );
    }
    Ok(())
}
