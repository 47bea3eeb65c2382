//! Greedy search for a three-SNR training mixture, each candidate scored by
//! a short training run's best validation NMSE.
//!
//! `cargo run --release --example snr_boost`

mod shared;

use sisrafnet::eval::TEST_SNRS_DB;
use sisrafnet::model::Model;
use sisrafnet::train::{boost_candidate_config, snr_boost_search, train, TrainControl};

fn main() -> sisrafnet::Result<()> {
    let (data, _) = shared::channels(&shared::sim(), shared::all, 3);
    let base = shared::quick_train(&TEST_SNRS_DB, 8);
    let r = snr_boost_search(&TEST_SNRS_DB, 3, |set| {
        let cfg = boost_candidate_config(&base, set);
        let score = train(
            Model::build(shared::narrow_model(24, 2), 1)?,
            &data,
            &cfg,
            TrainControl::default(),
        )?
        .history
        .best_val_nmse_db();
        println!("  {set:?} -> {score:.2} dB");
        Ok(score)
    })?;
    for (k, s) in r.per_step_scores.iter().enumerate() {
        println!("step {}: {:?} at {s:.2} dB", k + 1, &r.chosen_set_db[..=k]);
    }
    Ok(())
}
