use std::time::Instant;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{flop_count, Model};
use crate::rng::rng_for;

/// Single-slot inference cost of a model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub iters: usize,
    pub median_ms: f64,
    pub p95_ms: f64,
    /// Floating-point operations of one component pass, in millions.
    pub mega_flops: f64,
    /// Slots the estimator must hold to produce one estimate.
    pub mem_slots: usize,
    pub params: usize,
}

/// Times `n_iters` single-slot predictions (real and imaginary component
/// together) after `n_warmup` untimed ones.
pub fn bench(model: &Model, n_warmup: usize, n_iters: usize) -> Result<BenchReport> {
    if n_iters < 30 {
        return Err(Error::Config(format!(
            "bench needs at least 30 iterations, got {n_iters}"
        )));
    }
    let c = model.config();
    let mut rng = rng_for(0xBE7C, &[]);
    let n = c.input_freq * c.input_sym;
    let re: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let im: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let inputs = [re.as_slice(), im.as_slice()];
    for _ in 0..n_warmup {
        model.predict_batch(&inputs)?;
    }
    let mut ms = Vec::with_capacity(n_iters);
    for _ in 0..n_iters {
        let t = Instant::now();
        std::hint::black_box(model.predict_batch(std::hint::black_box(&inputs))?);
        ms.push(t.elapsed().as_secs_f64() * 1e3);
    }
    ms.sort_by(f64::total_cmp);
    let q = |f: f64| ms[((ms.len() - 1) as f64 * f).round() as usize];
    Ok(BenchReport {
        iters: n_iters,
        median_ms: q(0.5),
        p95_ms: q(0.95),
        mega_flops: flop_count(c).flops as f64 / 1e6,
        mem_slots: 1,
        params: model.param_count(),
    })
}
