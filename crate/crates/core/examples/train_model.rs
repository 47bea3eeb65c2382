//! Trains a narrow estimator and reports validation NMSE per epoch.
//!
//! `cargo run --release --example train_model`

mod shared;

use sisrafnet::model::Model;
use sisrafnet::train::{train, TrainControl};

fn main() -> sisrafnet::Result<()> {
    let (data, _) = shared::channels(&shared::sim(), shared::all, 1);
    let cfg = shared::quick_train(&[0.0, 10.0, 15.0], 6);
    let out = train(
        Model::build(shared::narrow_model(24, 2), 1)?,
        &data,
        &cfg,
        TrainControl::default(),
    )?;
    for r in &out.history.records {
        println!(
            "epoch {:>2}  train mse {:.5}  val {:6.2} dB  {:.1} s",
            r.epoch, r.train_mse, r.val_nmse_db, r.wall_seconds
        );
    }
    println!(
        "stopped: {:?}, best epoch {}",
        out.history.stop, out.history.best_epoch
    );
    let path = std::env::temp_dir().join("srf-example.srfn");
    out.model.save(&path)?;
    println!("saved {}", path.display());
    Ok(())
}
