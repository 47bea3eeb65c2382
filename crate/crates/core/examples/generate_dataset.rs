//! Renders a small dataset over the eight standard channel settings and
//! prints the split and per-setting channel power.
//!
//! `cargo run --release --example generate_dataset [out_dir]`

use sisrafnet::channel::{generate_dataset, ChannelSetting, SimConfig};

fn main() -> sisrafnet::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(std::path::PathBuf::from)
        .unwrap_or_else(|| {
            std::env::temp_dir().join(format!("srf-example-{}", std::process::id()))
        });
    let cfg = SimConfig {
        subcarriers: 48,
        slots_per_realization: 4,
        seed: 7,
        ..SimConfig::default()
    };
    let ds = generate_dataset(&ChannelSetting::standard_grid(), 10, &cfg, &out, 0)?;
    let sp = ds.split();
    println!("{} realizations in {}", ds.len(), out.display());
    println!("hash {}", ds.hash());
    println!(
        "split train/val/test = {}/{}/{}",
        sp.train.len(),
        sp.val.len(),
        sp.test.len()
    );
    for s in ChannelSetting::standard_grid() {
        let ids = ds.filter(&(0..ds.len()).collect::<Vec<_>>(), |x| *x == s);
        let power: f64 = ds
            .load_many(&ids)?
            .iter()
            .map(|r| r.mean_power())
            .sum::<f64>()
            / ids.len() as f64;
        println!("{:<22} mean |H|^2 {power:.4}", s.label());
    }
    Ok(())
}
