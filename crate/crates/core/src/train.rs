//! MSE/Adam training on pilot-LS → full-grid pairs with SNR-mixture
//! sampling, early stopping on validation NMSE, and the greedy SNR-Boost
//! search over training-SNR sets.

use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::channel::{ls_at_pilots, ComplexGrid, Dataset, PilotPattern};
use crate::error::{Error, Result};
use crate::eval::{mean_nmse_db, NetEstimator, TEST_SNRS_DB};
use crate::model::Model;
use crate::rng::{rng_for, Rng};
use crate::tensor::{Graph, Tensor, Var};

pub const DEFAULT_SNR_MIXTURE_DB: [f64; 3] = [0.0, 10.0, 15.0];

const EPOCH_STREAM: u64 = 0x45504f43;
const VAL_STREAM: u64 = 0x56414c;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub snr_mixture_db: Vec<f64>,
    pub batch_size: usize,
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub max_epochs: usize,
    /// Epochs without validation improvement tolerated before stopping.
    pub patience: usize,
    pub seed: u64,
    pub pilot_pattern: String,
    pub val_snrs_db: Vec<f64>,
    /// Validate on every n-th validation slot.
    pub val_slot_stride: usize,
    /// Wall-clock cap; no epoch is started that would be expected to overrun it.
    pub time_budget_s: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            snr_mixture_db: DEFAULT_SNR_MIXTURE_DB.to_vec(),
            batch_size: 32,
            lr: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            max_epochs: 20,
            patience: 4,
            seed: 1,
            pilot_pattern: "P1".into(),
            val_snrs_db: TEST_SNRS_DB.to_vec(),
            val_slot_stride: 1,
            time_budget_s: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.snr_mixture_db.is_empty() || self.snr_mixture_db.iter().any(|s| s.is_nan()) {
            return bad(format!(
                "SNR mixture {:?} must be non-empty",
                self.snr_mixture_db
            ));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!(
                "learning rate {} must be finite and non-negative",
                self.lr
            ));
        }
        for b in [self.adam_beta1, self.adam_beta2] {
            if !(0.0 < b && b < 1.0) {
                return bad(format!("Adam beta {b} must lie in (0, 1)"));
            }
        }
        if !(self.adam_eps > 0.0)
            || self.batch_size == 0
            || self.max_epochs == 0
            || self.val_slot_stride == 0
        {
            return bad(
                "adam_eps, batch_size, max_epochs and val_slot_stride must be positive".into(),
            );
        }
        if self.val_snrs_db.is_empty() {
            return bad("validation SNR list is empty".into());
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }
}

/// Expands `"all"` to the full test range, otherwise parses a comma list.
pub fn parse_snr_list(s: &str) -> Result<Vec<f64>> {
    if s.trim().eq_ignore_ascii_case("all") {
        return Ok(TEST_SNRS_DB.to_vec());
    }
    s.split(',')
        .map(|t| {
            let t = t.trim();
            if t.eq_ignore_ascii_case("inf") {
                return Ok(f64::INFINITY);
            }
            t.parse::<f64>()
                .map_err(|_| Error::Config(format!("bad SNR value {t:?} in {s:?}")))
        })
        .collect()
}

/// Mean of squared differences over all elements.
pub fn mse_loss(g: &mut Graph, pred: Var, target: Var) -> Result<Var> {
    if g.shape(pred) != g.shape(target) {
        return Err(Error::Contract(format!(
            "mse_loss shapes differ: {:?} vs {:?}",
            g.shape(pred),
            g.shape(target)
        )));
    }
    let d = g.sub(pred, target)?;
    let sq = g.mul(d, d)?;
    Ok(g.mean(sq))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

/// Bias-corrected Adam state for an ordered list of parameter tensors.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    pub t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &[&Tensor]) -> Self {
        Adam {
            config,
            t: 0,
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    pub fn first_moment(&self, i: usize) -> &[f64] {
        &self.m[i]
    }

    pub fn second_moment(&self, i: usize) -> &[f64] {
        &self.v[i]
    }

    /// Applies one update from each tensor's accumulated gradient; a tensor
    /// without a gradient is treated as having a zero one.
    pub fn step(&mut self, params: &mut [&mut Tensor]) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(Error::Contract(format!(
                "optimizer tracks {} tensors, got {}",
                self.m.len(),
                params.len()
            )));
        }
        self.t += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            if p.len() != m.len() {
                return Err(Error::Contract(
                    "parameter size changed under the optimizer".into(),
                ));
            }
            let grad = p
                .grad()
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; m.len()]);
            let data = p.data_mut();
            for i in 0..data.len() {
                let g = grad[i];
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                data[i] -= c.lr * mh / (vh.sqrt() + c.eps);
            }
        }
        Ok(())
    }
}

/// Real and imaginary training pairs cut from one slot with one noise draw.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub snr_db: f64,
    /// `[real, imag]` pilot LS grids, row-major `pilot rows × pilot cols`.
    pub inputs: [Vec<f64>; 2],
    /// `[real, imag]` ground truth, row-major `K × N_s`.
    pub targets: [Vec<f64>; 2],
}

/// Draws an SNR uniformly from `mixture_db` and simulates the pilots.
pub fn make_sample(
    h: &ComplexGrid,
    pattern: &PilotPattern,
    mixture_db: &[f64],
    rng: &mut Rng,
) -> Result<Sample> {
    if mixture_db.is_empty() {
        return Err(Error::Config("empty SNR mixture".into()));
    }
    let snr_db = mixture_db[rng.gen_range(0..mixture_db.len())];
    let obs = ls_at_pilots(h, pattern, snr_db, rng)?;
    Ok(Sample {
        snr_db,
        inputs: [obs.grid.real_part(), obs.grid.imag_part()],
        targets: [h.real_part(), h.imag_part()],
    })
}

/// Training and validation slots held in memory.
#[derive(Clone, Debug, Default)]
pub struct TrainData {
    pub train: Vec<ComplexGrid>,
    pub val: Vec<ComplexGrid>,
}

impl TrainData {
    pub fn from_dataset(ds: &Dataset, train_ids: &[usize], val_ids: &[usize]) -> Result<Self> {
        let slots = |ids: &[usize]| -> Result<Vec<ComplexGrid>> {
            Ok(ds
                .load_many(ids)?
                .into_iter()
                .flat_map(|r| r.slots)
                .collect())
        };
        Ok(TrainData {
            train: slots(train_ids)?,
            val: slots(val_ids)?,
        })
    }

    /// RMS of `|H|` at the pilot cells of the training grids.
    pub fn pilot_rms(&self, pattern: &PilotPattern) -> f64 {
        let (mut e, mut n) = (0.0, 0);
        for g in &self.train {
            for k in &pattern.freq_indices {
                for i in &pattern.sym_indices {
                    e += g.get(*k, *i).norm_sqr();
                    n += 1;
                }
            }
        }
        (e / n as f64).sqrt()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_nmse_db: f64,
    pub lr: f64,
    pub wall_seconds: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxEpochs,
    EarlyStop,
    TimeBudget,
    Interrupted,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
    /// Index into `records` of the returned checkpoint.
    pub best_epoch: usize,
    pub stop: StopReason,
}

impl TrainHistory {
    pub fn best_val_nmse_db(&self) -> f64 {
        self.records[self.best_epoch].val_nmse_db
    }

    /// Columns `epoch, train_mse, val_nmse_db, lr, wall_seconds`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
        for r in &self.records {
            w.serialize(r)
                .map_err(|e| Error::format(path, e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

pub struct TrainOutcome {
    pub model: Model,
    pub history: TrainHistory,
}

/// Optional hooks into a running training.
#[derive(Default)]
pub struct TrainControl<'a> {
    /// Checked between batches; when set the run stops with the best checkpoint.
    pub interrupt: Option<&'a AtomicBool>,
    /// Called after every epoch with the record and the current best model.
    pub on_epoch: Option<Box<dyn FnMut(&EpochRecord, &Model) -> Result<()> + 'a>>,
}

fn pattern_for(cfg: &TrainConfig, model: &Model, k: usize) -> Result<PilotPattern> {
    let p = PilotPattern::standard(&cfg.pilot_pattern, k)?;
    let c = model.config();
    if [p.rows(), p.cols()] != [c.input_freq, c.input_sym] {
        return Err(Error::Config(format!(
            "pilot pattern {} gives a {}×{} grid but the model expects {}×{}",
            p.name,
            p.rows(),
            p.cols(),
            c.input_freq,
            c.input_sym
        )));
    }
    Ok(p)
}

/// Validation NMSE in dB, averaged with equal weight over `cfg.val_snrs_db`.
pub fn validation_nmse_db(
    model: &Model,
    val: &[ComplexGrid],
    pattern: &PilotPattern,
    cfg: &TrainConfig,
) -> Result<f64> {
    let slots: Vec<ComplexGrid> = val.iter().step_by(cfg.val_slot_stride).cloned().collect();
    mean_nmse_db(
        &NetEstimator::new(model),
        &slots,
        &cfg.val_snrs_db,
        pattern,
        rng_for(cfg.seed, &[VAL_STREAM]).gen(),
    )
}

fn run_batch(model: &mut Model, adam: &mut Adam, batch: &[(&[f64], &[f64])]) -> Result<f64> {
    let c = model.config().clone();
    let s = model.norm_scale();
    let n = batch.len();
    let x: Vec<f64> = batch
        .iter()
        .flat_map(|(x, _)| x.iter().map(|v| v / s))
        .collect();
    let y: Vec<f64> = batch
        .iter()
        .flat_map(|(_, y)| y.iter().map(|v| v / s))
        .collect();
    let mut g = Graph::new();
    let xv = g.constant(&[n, 1, c.input_freq, c.input_sym], x)?;
    let yv = g.constant(&[n, 1, c.output_freq, c.output_sym], y)?;
    let p = model.bind(&mut g);
    let out = model.forward(&mut g, xv, &p)?;
    let loss = mse_loss(&mut g, out, yv)?;
    let value = g.value(loss)[0];
    if !value.is_finite() {
        if let Err(e) = g.check_finite() {
            log::warn!("{e}");
        }
        return Ok(value);
    }
    g.backward(loss)?;
    model.zero_grad();
    let mut params = model.params_mut();
    for (t, v) in params.iter_mut().zip(&p) {
        g.accumulate_into(*v, t)?;
    }
    adam.step(&mut params)?;
    Ok(value * s * s)
}

/// Trains `model` and returns the checkpoint with the best validation NMSE.
///
/// Each epoch visits every training slot once in a seeded order, drawing a
/// fresh SNR and noise realization per slot. Training stops after
/// `max_epochs`, after more than `patience` consecutive epochs without a
/// validation improvement, at the time budget, or on interrupt. A non-finite
/// loss aborts with [`Error::Diverged`] carrying the last finite parameters.
pub fn train(
    mut model: Model,
    data: &TrainData,
    cfg: &TrainConfig,
    mut control: TrainControl<'_>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let first = data
        .train
        .first()
        .ok_or_else(|| Error::Data("no training slots".into()))?;
    if data.val.is_empty() {
        return Err(Error::Data("no validation slots".into()));
    }
    let pattern = pattern_for(cfg, &model, first.rows())?;
    model.set_norm_scale(data.pilot_rms(&pattern))?;
    let mut adam = Adam::new(cfg.adam(), &model.params());
    let start = Instant::now();
    let mut records = Vec::new();
    let mut best: Option<(f64, usize, Model)> = None;
    let mut since_best = 0;
    let mut stop = StopReason::MaxEpochs;
    let interrupted = |c: &TrainControl| c.interrupt.is_some_and(|f| f.load(Ordering::Relaxed));

    'epochs: for epoch in 0..cfg.max_epochs {
        if let (Some(budget), Some(last)) = (cfg.time_budget_s, records.last()) {
            let last: &EpochRecord = last;
            let per_epoch = last.wall_seconds / (epoch as f64);
            if start.elapsed().as_secs_f64() + per_epoch > budget {
                stop = StopReason::TimeBudget;
                break;
            }
        }
        let mut rng = rng_for(cfg.seed, &[EPOCH_STREAM, epoch as u64]);
        let mut order: Vec<usize> = (0..data.train.len()).collect();
        order.shuffle(&mut rng);
        let samples = order
            .iter()
            .map(|&i| make_sample(&data.train[i], &pattern, &cfg.snr_mixture_db, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let pairs: Vec<(&[f64], &[f64])> = samples
            .iter()
            .flat_map(|s| (0..2).map(move |c| (s.inputs[c].as_slice(), s.targets[c].as_slice())))
            .collect();
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for batch in pairs.chunks(cfg.batch_size) {
            if interrupted(&control) {
                stop = StopReason::Interrupted;
                break 'epochs;
            }
            let before = model.clone();
            let loss = run_batch(&mut model, &mut adam, batch)?;
            if !loss.is_finite() || !model.params().iter().all(|t| t.all_finite()) {
                return Err(Error::Diverged {
                    epoch,
                    checkpoint: Box::new(before),
                });
            }
            loss_sum += loss;
            batches += 1;
        }
        let val = match validation_nmse_db(&model, &data.val, &pattern, cfg) {
            Err(Error::Numeric(e)) => {
                log::warn!("{e}");
                f64::NAN
            }
            v => v?,
        };
        if !val.is_finite() && val != f64::NEG_INFINITY {
            return Err(Error::Diverged {
                epoch,
                checkpoint: Box::new(model),
            });
        }
        let rec = EpochRecord {
            epoch,
            train_mse: loss_sum / batches as f64,
            val_nmse_db: val,
            lr: cfg.lr,
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: train_mse {:.5e} val_nmse {:.3} dB ({:.0} s)",
            rec.train_mse,
            val,
            rec.wall_seconds
        );
        records.push(rec.clone());
        if best.as_ref().is_none_or(|b| val < b.0) {
            best = Some((val, epoch, model.clone()));
            since_best = 0;
        } else {
            since_best += 1;
        }
        if let Some(cb) = control.on_epoch.as_mut() {
            cb(&rec, &best.as_ref().unwrap().2)?;
        }
        if since_best > cfg.patience {
            stop = StopReason::EarlyStop;
            break;
        }
    }
    match best {
        Some((_, best_epoch, best_model)) => Ok(TrainOutcome {
            model: best_model,
            history: TrainHistory {
                records,
                best_epoch,
                stop,
            },
        }),
        None if stop == StopReason::Interrupted => Err(Error::Interrupted),
        None => Err(Error::Data(
            "training finished without a completed epoch".into(),
        )),
    }
}

/// Greedy SNR-set search outcome.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnrBoostResult {
    pub candidate_pool_db: Vec<f64>,
    pub chosen_set_db: Vec<f64>,
    /// Validation NMSE (dB) after each greedy addition.
    pub per_step_scores: Vec<f64>,
    /// Every `(candidate, score)` tried at each step.
    pub step_candidates: Vec<Vec<(f64, f64)>>,
}

/// Starting from the empty set, repeatedly adds the pool SNR whose inclusion
/// gives the lowest `score` (lower is better), breaking ties toward the
/// lower SNR, until `budget` SNRs are chosen.
pub fn snr_boost_search(
    pool_db: &[f64],
    budget: usize,
    mut score: impl FnMut(&[f64]) -> Result<f64>,
) -> Result<SnrBoostResult> {
    if budget > pool_db.len() {
        return Err(Error::Config(format!(
            "budget {budget} exceeds the pool of {} SNRs",
            pool_db.len()
        )));
    }
    let mut pool = pool_db.to_vec();
    pool.sort_by(f64::total_cmp);
    pool.dedup();
    let mut chosen: Vec<f64> = Vec::new();
    let mut per_step_scores = Vec::new();
    let mut step_candidates = Vec::new();
    for _ in 0..budget {
        let mut tried = Vec::new();
        for &c in pool.iter().filter(|c| !chosen.contains(c)) {
            let mut set = chosen.clone();
            set.push(c);
            tried.push((c, score(&set)?));
        }
        let &(snr, s) = tried
            .iter()
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.total_cmp(&b.0)))
            .ok_or_else(|| Error::Config("SNR pool exhausted".into()))?;
        chosen.push(snr);
        per_step_scores.push(s);
        step_candidates.push(tried);
    }
    Ok(SnrBoostResult {
        candidate_pool_db: pool,
        chosen_set_db: chosen,
        per_step_scores,
        step_candidates,
    })
}

/// Training config for one SNR-Boost candidate: the given mixture and a
/// quarter of the epoch budget.
pub fn boost_candidate_config(base: &TrainConfig, mixture_db: &[f64]) -> TrainConfig {
    TrainConfig {
        snr_mixture_db: mixture_db.to_vec(),
        max_epochs: base.max_epochs.div_ceil(4),
        time_budget_s: base.time_budget_s.map(|t| t / 4.0),
        ..base.clone()
    }
}
