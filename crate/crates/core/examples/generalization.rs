//! Models trained on CDL-A only, CDL-D only and both, each tested on both
//! profiles.
//!
//! `cargo run --release --example generalization`

mod shared;

use sisrafnet::channel::{PilotPattern, ProfileKind};
use sisrafnet::eval::{generalization_matrix, ReportMeta, TEST_SNRS_DB};
use sisrafnet::model::Model;
use sisrafnet::train::{train, TrainControl};

fn main() -> sisrafnet::Result<()> {
    let sim = shared::sim();
    let (data_a, test_a) = shared::channels(&sim, |p| p == ProfileKind::CdlA, 4);
    let (data_d, test_d) = shared::channels(&sim, |p| p == ProfileKind::CdlD, 4);
    let mut both = data_a.clone();
    both.train.extend(data_d.train.iter().cloned());
    both.val.extend(data_d.val.iter().cloned());
    let cfg = shared::quick_train(&[0.0, 10.0, 15.0], 4);
    let fit = |d| -> sisrafnet::Result<Model> {
        Ok(train(
            Model::build(shared::narrow_model(24, 2), 1)?,
            d,
            &cfg,
            TrainControl::default(),
        )?
        .model)
    };
    let (ma, md, mb) = (fit(&data_a)?, fit(&data_d)?, fit(&both)?);
    let p1 = PilotPattern::standard("P1", shared::SUBCARRIERS)?;
    let g = generalization_matrix(
        &[("CDL-A", &ma), ("CDL-D", &md), ("combined", &mb)],
        &[("CDL-A", &test_a), ("CDL-D", &test_d)],
        &TEST_SNRS_DB,
        &p1,
        5,
        &ReportMeta::default(),
    )?;
    println!("mean NMSE dB   test CDL-A  test CDL-D");
    for (i, name) in g.train_sets.iter().enumerate() {
        println!(
            "{name:<14} {:>10.2}  {:>10.2}",
            g.mean_db(i, 0),
            g.mean_db(i, 1)
        );
    }
    Ok(())
}
