//! Single-slot latency, FLOPs and parameter count of the default model.
//!
//! `cargo run --release --example bench`

use sisrafnet::eval::bench;
use sisrafnet::model::{Model, ModelConfig};

fn main() -> sisrafnet::Result<()> {
    let r = bench(&Model::build(ModelConfig::default(), 1)?, 5, 30)?;
    println!(
        "median {:.2} ms, p95 {:.2} ms over {} runs",
        r.median_ms, r.p95_ms, r.iters
    );
    println!(
        "{:.1} MFLOP per component, {} parameters, {} slot(s) of memory",
        r.mega_flops, r.params, r.mem_slots
    );
    Ok(())
}
