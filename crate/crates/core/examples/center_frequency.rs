//! Models trained at 3.5 GHz and 2.6 GHz, each tested at both carriers.
//!
//! `cargo run --release --example center_frequency`

mod shared;

use sisrafnet::channel::{PilotPattern, SimConfig};
use sisrafnet::eval::{sweep_center_frequency, ReportMeta, ALTERNATE_CARRIER_HZ, TEST_SNRS_DB};
use sisrafnet::model::Model;
use sisrafnet::train::{train, TrainControl};

fn main() -> sisrafnet::Result<()> {
    let cfg = shared::quick_train(&[0.0, 10.0, 15.0], 4);
    let mut models = Vec::new();
    let mut tests = Vec::new();
    for carrier in [3.5e9, ALTERNATE_CARRIER_HZ] {
        let sim = SimConfig {
            carrier_hz: carrier,
            ..shared::sim()
        };
        let (data, test) = shared::channels(&sim, shared::all, 9);
        models.push(
            train(
                Model::build(shared::narrow_model(24, 2), 1)?,
                &data,
                &cfg,
                TrainControl::default(),
            )?
            .model,
        );
        tests.push(test);
    }
    let names = ["3.5 GHz", "2.6 GHz"];
    let g = sweep_center_frequency(
        &[(names[0], &models[0]), (names[1], &models[1])],
        &[(names[0], &tests[0]), (names[1], &tests[1])],
        &TEST_SNRS_DB,
        &PilotPattern::standard("P1", shared::SUBCARRIERS)?,
        3,
        &ReportMeta::default(),
    )?;
    println!("mean NMSE dB   test {}  test {}", names[0], names[1]);
    for (i, n) in names.iter().enumerate() {
        println!(
            "train {n:<8} {:>12.2}  {:>12.2}",
            g.mean_db(i, 0),
            g.mean_db(i, 1)
        );
    }
    Ok(())
}
