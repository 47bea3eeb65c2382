//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Criteria 1–3 and 7–9 always run. The training criteria 4–6 need about
//! two hours on one core and run only with `SRF_ACCEPTANCE_FULL=1`;
//! otherwise they print SKIP. `SRF_ACCEPTANCE_DIR` keeps the desk dataset
//! between runs.

mod common;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use common::*;
use serde_json::json;
use sisrafnet::channel::{
    generate_dataset, ChannelProfile, ChannelSetting, ComplexGrid, Dataset, PilotPattern,
    ProfileKind, SimConfig,
};
use sisrafnet::classical::LmmseStats;
use sisrafnet::eval::{
    generalization_matrix, sweep_snr, EvalReport, LmmseEstimator, LsEstimator, NetEstimator,
    ReportMeta, TEST_SNRS_DB,
};
use sisrafnet::model::{flop_count, Model, ModelConfig};
use sisrafnet::rng::rng_for;
use sisrafnet::train::{
    boost_candidate_config, snr_boost_search, train, TrainConfig, TrainControl, TrainData,
};

const FD_TOL: f64 = 1e-4;
const C1_BUDGET_S: f64 = 60.0;
const ORACLE_TOL: f64 = 1e-12;
const ORACLE_INSTANCES: usize = 150;
const C2_BUDGET_S: f64 = 30.0;
const TWO_TAP_TOL: f64 = 1e-9;
const MATCHED_SEEDS: u64 = 50;
const C3_BUDGET_S: f64 = 120.0;
const C4_TRAIN_BUDGET_S: f64 = 1800.0;
const C4_NET_MARGIN_DB: f64 = 1.0;
const C4_LMMSE_MARGIN_DB: f64 = 2.0;
/// One inversion of at most this size is tolerated in the NMSE-vs-SNR curve.
const MONOTONE_SLACK_DB: f64 = 0.3;
const C5_GAP_DB: f64 = 1.0;
const C5_GREEDY_TOL_DB: f64 = 1.5;
const C5_MAX_DESK_TRAININGS: f64 = 6.0;
const C6_TIE_DB: f64 = 0.1;
const MFLOP_RANGE: (f64, f64) = (100.0, 2000.0);
const EVAL_SEED: u64 = 2024;

struct Outcome {
    id: &'static str,
    title: &'static str,
    status: Status,
    detail: String,
    lines: Vec<String>,
}

#[derive(PartialEq)]
enum Status {
    Pass,
    Fail,
    Skip,
}

impl Outcome {
    fn new(id: &'static str, title: &'static str, pass: bool, detail: String) -> Self {
        let status = if pass { Status::Pass } else { Status::Fail };
        Outcome {
            id,
            title,
            status,
            detail,
            lines: Vec::new(),
        }
    }

    fn with_lines(mut self, lines: Vec<String>) -> Self {
        self.lines = lines;
        self
    }

    fn print(&self) {
        let tag = match self.status {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Skip => "SKIP",
        };
        println!("{} {:<34} {tag}  {}", self.id, self.title, self.detail);
        for l in &self.lines {
            println!("     {l}");
        }
    }
}

fn c1_gradients() -> Outcome {
    let t = Instant::now();
    let sweep = gradient_sweep(3);
    let worst_layer = sweep.iter().map(|r| r.1).fold(0.0, f64::max);
    let unchecked = sweep.iter().filter(|r| r.2 == 0).count();
    let (checked, skipped) = sweep.iter().fold((0, 0), |a, r| (a.0 + r.2, a.1 + r.3));
    let (worst_model, kinks) = model_loss_check(0, 20);
    let secs = t.elapsed().as_secs_f64();
    let pass = worst_layer < FD_TOL && worst_model < FD_TOL && unchecked == 0 && secs < C1_BUDGET_S;
    Outcome::new(
        "C1",
        "gradient correctness",
        pass,
        format!(
            "max rel err {worst_layer:.2e} over {} ops/layers/tensors, reduced-model loss {worst_model:.2e} (tol {FD_TOL:e}); {secs:.1} s < {C1_BUDGET_S} s",
            sweep.len()
        ),
    )
    .with_lines(vec![format!("{checked} entries checked, {} skipped at ReLU kinks", skipped + kinks)])
}

fn c2_oracles() -> Outcome {
    let t = Instant::now();
    let r = oracle_sweep(ORACLE_INSTANCES, 11);
    let secs = t.elapsed().as_secs_f64();
    let worst = [
        r.matmul,
        r.conv2d,
        r.gru_step,
        r.bigru_naive,
        r.bigru_unrolled,
    ]
    .into_iter()
    .fold(0.0, f64::max);
    Outcome::new(
        "C2",
        "oracle equivalence",
        worst < ORACLE_TOL && secs < C2_BUDGET_S,
        format!("max abs diff {worst:.2e} < {ORACLE_TOL:e} on {ORACLE_INSTANCES} instances; {secs:.1} s < {C2_BUDGET_S} s"),
    )
    .with_lines(vec![format!(
        "matmul {:.1e}  conv2d {:.1e}  gru_step {:.1e}  bigru/loops {:.1e}  bigru/unrolled {:.1e}",
        r.matmul, r.conv2d, r.gru_step, r.bigru_naive, r.bigru_unrolled
    )])
}

fn c3_channel() -> Outcome {
    let t = Instant::now();
    let null = two_tap_error();
    let mut ok = null < TWO_TAP_TOL;
    let mut lines = Vec::new();
    for p in [ChannelProfile::cdl_a(), ChannelProfile::cdl_d()] {
        let (f30, f300) = (
            mean_freq_corr(&p, 30e-9, MATCHED_SEEDS),
            mean_freq_corr(&p, 300e-9, MATCHED_SEEDS),
        );
        let (v3, v30) = (
            mean_slot_corr(&p, 3.0, MATCHED_SEEDS),
            mean_slot_corr(&p, 30.0, MATCHED_SEEDS),
        );
        ok &= f30 > f300 && v3 > v30;
        lines.push(format!(
            "{}: lag-8 freq corr 30 ns {f30:.3} > 300 ns {f300:.3}; slot corr 3 km/h {v3:.3} > 30 km/h {v30:.3}",
            p.kind.name()
        ));
    }
    let secs = t.elapsed().as_secs_f64();
    Outcome::new(
        "C3",
        "channel physics",
        ok && secs < C3_BUDGET_S,
        format!("two-tap error {null:.1e} < {TWO_TAP_TOL:e}; orderings on {MATCHED_SEEDS} seeds; {secs:.1} s < {C3_BUDGET_S} s"),
    )
    .with_lines(lines)
}

fn c7_stateless() -> Outcome {
    let mut ok = true;
    for cfg in [ModelConfig::default(), reduced_model_config()] {
        let m = Model::build(cfg.clone(), 7).unwrap();
        let mut rng = rng_for(7, &[]);
        let x = rand_tensor(&mut rng, &[cfg.input_freq, cfg.input_sym]);
        let other = rand_tensor(&mut rng, &[cfg.input_freq, cfg.input_sym]);
        let first = m.predict(&x).unwrap();
        let _ = m.predict(&other).unwrap();
        let second = m.predict(&x).unwrap();
        let batched = m.predict_batch(&[other.data(), x.data()]).unwrap();
        ok &= first.data() == second.data() && batched[1] == first.data();
    }
    Outcome::new(
        "C7",
        "single-slot contract",
        ok,
        "repeated predict calls bit-identical, interleaved and batched, default and reduced models"
            .into(),
    )
}

fn c8_flops() -> Outcome {
    let half = ModelConfig {
        front_channels: vec![8, 16, 16, 32, 32, 16, 16, 8],
        gru_hidden: 48,
        tail_channels: vec![8, 4, 1],
        ..ModelConfig::default()
    };
    let mut ok = true;
    let mut lines = Vec::new();
    for (name, c) in [
        ("default", ModelConfig::default()),
        ("half-width", half),
        ("reduced", reduced_model_config()),
    ] {
        let f = flop_count(&c);
        let hand = hand_flops(&c);
        ok &= (f.macs, f.flops) == hand;
        lines.push(format!(
            "{name}: counter {} FLOPs / {} MACs, closed form {} / {}",
            f.flops, f.macs, hand.1, hand.0
        ));
    }
    let mflops = flop_count(&ModelConfig::default()).flops as f64 / 1e6;
    ok &= (MFLOP_RANGE.0..=MFLOP_RANGE.1).contains(&mflops);
    Outcome::new(
        "C8",
        "FLOP accounting",
        ok,
        format!(
            "3 specs exact; default {mflops:.1} MFLOP in [{}, {}]",
            MFLOP_RANGE.0, MFLOP_RANGE.1
        ),
    )
    .with_lines(lines)
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file() && p.file_name().unwrap() != "run_manifest.json")
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&p).unwrap(),
            )
        })
        .collect()
}

/// Runs generate → train → eval through the `srf` binary.
fn cli_pipeline(
    root: &Path,
    config: &Path,
    tag: &str,
) -> Result<(PathBuf, PathBuf, PathBuf), String> {
    let (data, model, eval) = (
        root.join(format!("data{tag}")),
        root.join(format!("m{tag}.srfn")),
        root.join(format!("eval{tag}")),
    );
    let steps: [Vec<&str>; 3] = [
        vec!["generate", "--out", data.to_str().unwrap(), "--seed", "7"],
        vec![
            "train",
            "--data",
            data.to_str().unwrap(),
            "--out",
            model.to_str().unwrap(),
            "--seed",
            "7",
        ],
        vec![
            "eval",
            "--data",
            data.to_str().unwrap(),
            "--model",
            model.to_str().unwrap(),
            "--out",
            eval.to_str().unwrap(),
            "--seed",
            "7",
        ],
    ];
    for args in steps {
        let o = Command::new(env!("CARGO_BIN_EXE_srf"))
            .env_remove("SRF_SEED")
            .env("RUST_LOG", "warn")
            .arg("--config")
            .arg(config)
            .args(&args)
            .output()
            .map_err(|e| e.to_string())?;
        if !o.status.success() {
            return Err(format!(
                "{} failed: {}",
                args[0],
                String::from_utf8_lossy(&o.stderr)
            ));
        }
    }
    Ok((data, model, eval))
}

fn c9_determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("config.json");
    let cfg = json!({
        "sim": { "subcarriers": 48, "slots_per_realization": 4 },
        "realizations_per_setting": 10,
        "model": {
            "input_freq": 24, "input_sym": 2, "output_freq": 48, "output_sym": 14,
            "front_channels": [4, 4, 4, 4, 4, 4, 4, 4], "kernel": 3, "gru_hidden": 8,
            "head_channels": 3, "tail_channels": [4, 3, 1]
        },
        "train": { "batch_size": 16, "lr": 0.003, "max_epochs": 2 }
    });
    std::fs::write(&config, cfg.to_string()).unwrap();
    let runs = (
        cli_pipeline(tmp.path(), &config, "1"),
        cli_pipeline(tmp.path(), &config, "2"),
    );
    let (a, b) = match runs {
        (Ok(a), Ok(b)) => (a, b),
        (Err(e), _) | (_, Err(e)) => return Outcome::new("C9", "determinism", false, e),
    };
    let same_data = snapshot(&a.0) == snapshot(&b.0);
    let same_model = std::fs::read(&a.1).unwrap() == std::fs::read(&b.1).unwrap();
    let (ea, eb) = (snapshot(&a.2), snapshot(&b.2));
    let same_reports = ea == eb && ea.keys().any(|k| k.ends_with(".csv"));
    Outcome::new(
        "C9",
        "determinism",
        same_data && same_model && same_reports,
        format!(
            "two generate/train/eval runs: dataset {} files {}, model {}, reports {}",
            snapshot(&a.0).len(),
            if same_data { "identical" } else { "DIFFER" },
            if same_model { "identical" } else { "DIFFERS" },
            if same_reports { "identical" } else { "DIFFER" }
        ),
    )
}

/// Desk dataset (8 settings × 10 realizations × 20 slots) held in memory.
struct Desk {
    _tmp: Option<tempfile::TempDir>,
    data: TrainData,
    data_a: TrainData,
    data_d: TrainData,
    test: Vec<ComplexGrid>,
    test_a: Vec<ComplexGrid>,
    test_d: Vec<ComplexGrid>,
}

fn slots(ds: &Dataset, ids: &[usize]) -> Vec<ComplexGrid> {
    ds.load_many(ids)
        .unwrap()
        .into_iter()
        .flat_map(|r| r.slots)
        .collect()
}

impl Desk {
    fn load() -> Self {
        let (tmp, dir) = match std::env::var_os("SRF_ACCEPTANCE_DIR") {
            Some(d) => (None, PathBuf::from(d).join("desk")),
            None => {
                let t = tempfile::tempdir().unwrap();
                let d = t.path().join("desk");
                (Some(t), d)
            }
        };
        let ds = if dir.join("manifest.json").exists() {
            Dataset::open(&dir).unwrap()
        } else {
            let cfg = SimConfig {
                slots_per_realization: 20,
                seed: 1,
                ..SimConfig::default()
            };
            generate_dataset(&ChannelSetting::standard_grid(), 10, &cfg, &dir, 0).unwrap()
        };
        let sp = ds.split().clone();
        let only = |k: ProfileKind| move |s: &ChannelSetting| s.profile == k;
        let subset = |k: ProfileKind| TrainData {
            train: slots(&ds, &ds.filter(&sp.train, only(k))),
            val: slots(&ds, &ds.filter(&sp.val, only(k))),
        };
        Desk {
            data: TrainData {
                train: slots(&ds, &sp.train),
                val: slots(&ds, &sp.val),
            },
            data_a: subset(ProfileKind::CdlA),
            data_d: subset(ProfileKind::CdlD),
            test: slots(&ds, &sp.test),
            test_a: slots(&ds, &ds.filter(&sp.test, only(ProfileKind::CdlA))),
            test_d: slots(&ds, &ds.filter(&sp.test, only(ProfileKind::CdlD))),
            _tmp: tmp,
        }
    }
}

fn desk_train_config(mixture: &[f64], epochs: usize) -> TrainConfig {
    TrainConfig {
        snr_mixture_db: mixture.to_vec(),
        lr: 3e-3,
        batch_size: 32,
        max_epochs: epochs,
        patience: epochs,
        val_slot_stride: 4,
        ..TrainConfig::default()
    }
}

fn half_width() -> ModelConfig {
    ModelConfig {
        front_channels: vec![8, 16, 16, 32, 32, 16, 16, 8],
        gru_hidden: 48,
        tail_channels: vec![8, 4, 1],
        ..ModelConfig::default()
    }
}

fn fit(mc: &ModelConfig, data: &TrainData, cfg: &TrainConfig) -> Model {
    let t = Instant::now();
    let out = train(
        Model::build(mc.clone(), 1).unwrap(),
        data,
        cfg,
        TrainControl::default(),
    )
    .unwrap();
    eprintln!(
        "  trained {:?} for {} epochs in {:.0} s (best val {:.2} dB)",
        cfg.snr_mixture_db,
        out.history.records.len(),
        t.elapsed().as_secs_f64(),
        out.history.best_val_nmse_db()
    );
    out.model
}

fn test_curve(model: &Model, test: &[ComplexGrid]) -> EvalReport {
    let net = NetEstimator::new(model);
    sweep_snr(
        &[&net],
        test,
        &TEST_SNRS_DB,
        &PilotPattern::p1(),
        EVAL_SEED,
        &ReportMeta::default(),
    )
    .unwrap()
    .remove(0)
}

fn curve_text(r: &EvalReport) -> String {
    r.points
        .iter()
        .map(|p| format!("{:+.0}:{:.2}", p.snr_db, p.nmse_db))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Non-increasing in SNR up to one rise of at most `MONOTONE_SLACK_DB`.
fn monotone(r: &EvalReport) -> bool {
    let rises: Vec<f64> = r
        .points
        .windows(2)
        .map(|w| w[1].nmse_db - w[0].nmse_db)
        .filter(|d| *d > 0.0)
        .collect();
    rises.is_empty() || (rises.len() == 1 && rises[0] <= MONOTONE_SLACK_DB)
}

fn c4_ordering(desk: &Desk) -> (Outcome, Outcome, f64) {
    let cfg = TrainConfig {
        time_budget_s: Some(C4_TRAIN_BUDGET_S),
        ..desk_train_config(&[0.0, 10.0, 15.0], 20)
    };
    let t = Instant::now();
    let model = fit(&ModelConfig::default(), &desk.data, &cfg);
    let train_s = t.elapsed().as_secs_f64();
    let p1 = PilotPattern::p1();
    let lmmse = LmmseEstimator::new(&LmmseStats::fit(&desk.data.train, &p1).unwrap()).unwrap();
    let net = NetEstimator::new(&model);
    let r = sweep_snr(
        &[&LsEstimator, &lmmse, &net],
        &desk.test,
        &TEST_SNRS_DB,
        &p1,
        EVAL_SEED,
        &ReportMeta::default(),
    )
    .unwrap();
    let at = |i: usize, s: f64| r[i].nmse_db_at(s).unwrap();
    let mut ok = train_s <= C4_TRAIN_BUDGET_S;
    let mut failures = Vec::new();
    for s in [10.0, 15.0, 20.0] {
        let (ls, lm, nn) = (at(0, s), at(1, s), at(2, s));
        if !(nn <= lm - C4_NET_MARGIN_DB) {
            failures.push(format!(
                "{s} dB: net {nn:.2} > LMMSE−1 {:.2}",
                lm - C4_NET_MARGIN_DB
            ));
        }
        if !(lm - C4_NET_MARGIN_DB <= ls - C4_LMMSE_MARGIN_DB) {
            failures.push(format!(
                "{s} dB: LMMSE−1 {:.2} > LS−2 {:.2}",
                lm - C4_NET_MARGIN_DB,
                ls - C4_LMMSE_MARGIN_DB
            ));
        }
    }
    for s in [-5.0, 0.0] {
        let (lm, nn) = (at(1, s), at(2, s));
        if !(nn <= lm) {
            failures.push(format!("{s} dB: net {nn:.2} > LMMSE {lm:.2}"));
        }
    }
    ok &= failures.is_empty();
    let mut lines: Vec<String> = r
        .iter()
        .map(|x| format!("{:<9} {}", x.estimator, curve_text(x)))
        .collect();
    lines.extend(failures);
    let c4 = Outcome::new(
        "C4",
        "estimator ordering",
        ok,
        format!(
            "default model, {{0,10,15}} dB mixture, trained {train_s:.0} s ≤ {C4_TRAIN_BUDGET_S} s"
        ),
    )
    .with_lines(lines);
    let mono = Outcome::new(
        "C4m",
        "{0,10,15} curve monotone in SNR",
        monotone(&r[2]),
        format!("at most one rise ≤ {MONOTONE_SLACK_DB} dB"),
    );
    (c4, mono, train_s)
}

fn c5_snr_mix(desk: &Desk, desk_training_s: f64) -> (Outcome, Model) {
    const EPOCHS: usize = 12;
    let mc = half_width();
    let t = Instant::now();
    let m0 = fit(
        &mc,
        &desk.data,
        &desk_train_config(&[0.0, 10.0, 15.0], EPOCHS),
    );
    let hi = fit(
        &mc,
        &desk.data,
        &desk_train_config(&[5.0, 10.0, 15.0, 20.0], EPOCHS),
    );
    let lo = fit(&mc, &desk.data, &desk_train_config(&[0.0], EPOCHS));
    let base = desk_train_config(&TEST_SNRS_DB, EPOCHS);
    let boost = snr_boost_search(&TEST_SNRS_DB, 3, |set| {
        let cfg = boost_candidate_config(&base, set);
        train(
            Model::build(mc.clone(), 1)?,
            &desk.data,
            &cfg,
            TrainControl::default(),
        )
        .map(|o| o.history.best_val_nmse_db())
    })
    .unwrap();
    let greedy = fit(
        &mc,
        &desk.data,
        &desk_train_config(&boost.chosen_set_db, EPOCHS),
    );
    let all = fit(&mc, &desk.data, &base);
    let secs = t.elapsed().as_secs_f64();

    let (r0, rhi, rlo, rg, rall) = (
        test_curve(&m0, &desk.test),
        test_curve(&hi, &desk.test),
        test_curve(&lo, &desk.test),
        test_curve(&greedy, &desk.test),
        test_curve(&all, &desk.test),
    );
    let gap_low = rhi.nmse_db_at(-5.0).unwrap() - r0.nmse_db_at(-5.0).unwrap();
    let gap_high = rlo.nmse_db_at(20.0).unwrap() - r0.nmse_db_at(20.0).unwrap();
    let greedy_gap = rg.mean_nmse_db() - rall.mean_nmse_db();
    let budget = C5_MAX_DESK_TRAININGS * desk_training_s;
    let ok = gap_low >= C5_GAP_DB
        && gap_high >= C5_GAP_DB
        && greedy_gap.abs() <= C5_GREEDY_TOL_DB
        && secs <= budget;
    let lines = vec![
        format!("{{0,10,15}}     {}", curve_text(&r0)),
        format!("{{5,10,15,20}}  {}", curve_text(&rhi)),
        format!("{{0}}           {}", curve_text(&rlo)),
        format!("greedy {:?}  {}", boost.chosen_set_db, curve_text(&rg)),
        format!("all SNRs       {}", curve_text(&rall)),
        format!("≥5 dB model at −5 dB: {gap_low:+.2} dB vs {{0,10,15}} (need ≥ +{C5_GAP_DB})"),
        format!("0 dB model at 20 dB: {gap_high:+.2} dB vs {{0,10,15}} (need ≥ +{C5_GAP_DB})"),
        format!("greedy − all-SNR mean: {greedy_gap:+.2} dB (need |·| ≤ {C5_GREEDY_TOL_DB})"),
        format!(
            "greedy step scores {:?}",
            boost
                .per_step_scores
                .iter()
                .map(|s| (s * 100.0).round() / 100.0)
                .collect::<Vec<_>>()
        ),
    ];
    let out = Outcome::new(
        "C5",
        "SNR-mix behaviour",
        ok,
        format!(
            "half-width model, {EPOCHS} epochs; study took {secs:.0} s = {:.2} desk trainings ≤ {C5_MAX_DESK_TRAININGS}",
            secs / desk_training_s
        ),
    )
    .with_lines(lines);
    (out, m0)
}

fn c6_generalization(desk: &Desk, combined: &Model) -> Outcome {
    const EPOCHS: usize = 12;
    let mc = half_width();
    let ma = fit(
        &mc,
        &desk.data_a,
        &desk_train_config(&[0.0, 10.0, 15.0], EPOCHS),
    );
    let md = fit(
        &mc,
        &desk.data_d,
        &desk_train_config(&[0.0, 10.0, 15.0], EPOCHS),
    );
    let g = generalization_matrix(
        &[("CDL-A", &ma), ("CDL-D", &md), ("combined", combined)],
        &[("CDL-A", &desk.test_a), ("CDL-D", &desk.test_d)],
        &TEST_SNRS_DB,
        &PilotPattern::p1(),
        EVAL_SEED,
        &ReportMeta::default(),
    )
    .unwrap();
    let m = |i: usize, j: usize| g.mean_db(i, j);
    // each test set: the model trained on it vs the one trained on the other profile
    let in_a = m(0, 0) <= m(1, 0) + C6_TIE_DB;
    let in_d = m(1, 1) <= m(0, 1) + C6_TIE_DB;
    let d_generalizes = m(1, 0) < m(0, 1);
    let mut lines = Vec::new();
    for (i, tr) in g.train_sets.iter().enumerate() {
        lines.push(format!(
            "trained {tr:<8} on CDL-A {:7.2} dB   on CDL-D {:7.2} dB",
            m(i, 0),
            m(i, 1)
        ));
    }
    lines.push(format!(
        "CDL-A test: in-dist {:.2} vs cross {:.2}; CDL-D test: in-dist {:.2} vs cross {:.2}",
        m(0, 0),
        m(1, 0),
        m(1, 1),
        m(0, 1)
    ));
    lines.push(format!(
        "CDL-D model on CDL-A {:.2} < CDL-A model on CDL-D {:.2}",
        m(1, 0),
        m(0, 1)
    ));
    lines.push(format!(
        "row view: CDL-A model A {:.2} vs D {:.2}; CDL-D model D {:.2} vs A {:.2}",
        m(0, 0),
        m(0, 1),
        m(1, 1),
        m(1, 0)
    ));
    Outcome::new(
        "C6",
        "generalization matrix",
        in_a && in_d && d_generalizes,
        format!(
            "mean NMSE over {} SNRs, tie tolerance {C6_TIE_DB} dB",
            TEST_SNRS_DB.len()
        ),
    )
    .with_lines(lines)
}

fn skipped(id: &'static str, title: &'static str) -> Outcome {
    Outcome {
        id,
        title,
        status: Status::Skip,
        detail: "needs desk-scale training; set SRF_ACCEPTANCE_FULL=1".into(),
        lines: Vec::new(),
    }
}

fn main() {
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let full = std::env::var("SRF_ACCEPTANCE_FULL").is_ok_and(|v| v == "1");
    let mut all = Vec::new();
    let mut run = |o: Outcome| {
        o.print();
        all.push(o.status);
    };
    run(c1_gradients());
    run(c2_oracles());
    run(c3_channel());
    if full {
        let desk = Desk::load();
        let (c4, mono, desk_s) = c4_ordering(&desk);
        run(c4);
        run(mono);
        let (c5, combined) = c5_snr_mix(&desk, desk_s);
        run(c5);
        run(c6_generalization(&desk, &combined));
    } else {
        run(skipped("C4", "estimator ordering"));
        run(skipped("C5", "SNR-mix behaviour"));
        run(skipped("C6", "generalization matrix"));
    }
    run(c7_stateless());
    run(c8_flops());
    run(c9_determinism());
    let fails = all.iter().filter(|s| **s == Status::Fail).count();
    let passes = all.iter().filter(|s| **s == Status::Pass).count();
    let skips = all.len() - fails - passes;
    println!("acceptance: {passes} passed, {fails} failed, {skips} skipped");
    if fails > 0 {
        std::process::exit(1);
    }
}
