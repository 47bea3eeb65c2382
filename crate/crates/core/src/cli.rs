//! The `srf` command line: dataset generation, training, evaluation sweeps,
//! SNR-Boost search and benchmarking. Every command writes a run manifest
//! before starting and rewrites it with the final status.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::channel::{
    generate_dataset, ChannelSetting, ComplexGrid, Dataset, PilotPattern, ProfileKind, SimConfig,
};
use crate::classical::LmmseStats;
use crate::error::{Error, Result};
use crate::eval::{
    bench, emit_report, generalization_matrix, sweep_center_frequency, sweep_pilot_configs,
    sweep_snr, Estimator, LmmseEstimator, LsEstimator, NetEstimator, ReportFormat, ReportMeta,
};
use crate::io;
use crate::model::{Model, ModelConfig};
use crate::train::{
    boost_candidate_config, parse_snr_list, snr_boost_search, train, TrainConfig, TrainControl,
    TrainData,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;
pub const EXIT_INTERRUPTED: i32 = 130;

/// Master seed when neither `SRF_SEED`, a config file nor `--seed` sets one.
pub const DEFAULT_SEED: u64 = 1;

#[derive(Parser, Debug)]
#[command(
    name = "srf",
    version,
    about = "Single-slot OFDM channel estimation with frequency recurrence"
)]
pub struct Cli {
    /// Worker threads for generation and evaluation (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// JSON config with optional `sim`, `train` and `model` sections, or a run manifest.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Simulate channel realizations into a dataset directory.
    Generate(GenerateArgs),
    /// Train a model on a dataset.
    Train(TrainArgs),
    /// NMSE-vs-SNR of LS, LMMSE and a trained model.
    Eval(EvalArgs),
    /// One model per pilot pattern at a fixed SNR.
    SweepPilots(SweepPilotsArgs),
    /// Cross-carrier generalization.
    SweepGenfreq(SweepGenfreqArgs),
    /// Cross-channel-model generalization.
    SweepGenmodel(SweepGenmodelArgs),
    /// Greedy search for a small set of training SNRs.
    Boost(BoostArgs),
    /// Single-slot inference latency and FLOPs.
    Bench(BenchArgs),
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// 10 realizations × 20 slots per setting instead of 100 × 100.
    #[arg(long)]
    pub desk: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub realizations: Option<usize>,
    #[arg(long)]
    pub slots: Option<usize>,
    #[arg(long)]
    pub carrier_hz: Option<f64>,
    /// all, cdl-a or cdl-d
    #[arg(long)]
    pub profiles: Option<String>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Model file to write; history and manifest go next to it.
    #[arg(long)]
    pub out: PathBuf,
    /// Comma list of training SNRs in dB, or `all`.
    #[arg(long)]
    pub snr_mix: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub pattern: Option<String>,
    /// Restrict training and validation to one channel profile.
    #[arg(long)]
    pub profiles: Option<String>,
    #[arg(long)]
    pub time_budget_s: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, default_value = "ls,lmmse,sisrafnet")]
    pub estimators: String,
    #[arg(long, default_value = "all")]
    pub snrs: String,
    #[arg(long, default_value = "P1")]
    pub pattern: String,
    #[arg(long)]
    pub profiles: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
    /// Reuse (or create) fitted LMMSE statistics at this path.
    #[arg(long)]
    pub lmmse_cache: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct SweepPilotsArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// `PATTERN=model` pairs, e.g. `P1=p1.srfn,P2=p2.srfn`.
    #[arg(long, value_delimiter = ',')]
    pub models: Vec<String>,
    #[arg(long, default_value_t = 10.0, allow_negative_numbers = true)]
    pub snr: f64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct SweepGenfreqArgs {
    /// Dataset at the reference carrier.
    #[arg(long)]
    pub data: PathBuf,
    /// Dataset at the alternate carrier.
    #[arg(long)]
    pub alt_data: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub alt_model: PathBuf,
    #[arg(long, default_value = "all")]
    pub snrs: String,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct SweepGenmodelArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model_a: PathBuf,
    #[arg(long)]
    pub model_d: PathBuf,
    #[arg(long)]
    pub model_all: PathBuf,
    #[arg(long, default_value = "all")]
    pub snrs: String,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct BoostArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "all", allow_hyphen_values = true)]
    pub pool: String,
    #[arg(long, default_value_t = 3)]
    pub budget: usize,
    /// Full-training epoch budget; candidates get a quarter of it.
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// Model file; a freshly initialized model of the configured size otherwise.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    pub iters: usize,
    #[arg(long, default_value_t = 5)]
    pub warmup: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Effective configuration of a run, as read from a config file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FileConfig {
    pub sim: Option<SimConfig>,
    pub train: Option<TrainConfig>,
    pub model: Option<ModelConfig>,
    pub seed: Option<u64>,
    pub profiles: Option<String>,
    pub realizations_per_setting: Option<usize>,
}

impl FileConfig {
    /// Reads a config file; a run manifest is accepted through its `config` field.
    pub fn load(path: &Path) -> Result<Self> {
        let v: Value = io::read_json(path)?;
        let v = match v.get("config") {
            Some(inner) if v.get("command").is_some() => inner.clone(),
            _ => v,
        };
        serde_json::from_value(v).map_err(|e| Error::format(path, e.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Completed,
    Aborted,
    Failed,
}

/// Record of one command invocation, sufficient to re-run it.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub config: Value,
    pub seed: u64,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub tool_version: String,
    pub started_unix_s: f64,
    pub ended_unix_s: Option<f64>,
    pub status: RunStatus,
    pub error: Option<String>,
    pub extra: Value,
}

fn now_unix() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

impl RunManifest {
    fn start(
        command: &str,
        config: Value,
        seed: u64,
        inputs: &[&Path],
        path: &Path,
    ) -> Result<Self> {
        let m = RunManifest {
            command: command.into(),
            argv: std::env::args().collect(),
            config,
            seed,
            inputs: inputs.iter().map(|p| p.display().to_string()).collect(),
            outputs: Vec::new(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            started_unix_s: now_unix(),
            ended_unix_s: None,
            status: RunStatus::Running,
            error: None,
            extra: Value::Null,
        };
        m.write(path)?;
        Ok(m)
    }

    fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            io::ensure_dir(dir)?;
        }
        io::write_json(path, self)
    }

    fn finish(&mut self, path: &Path, status: RunStatus, error: Option<String>) -> Result<()> {
        self.status = status;
        self.error = error;
        self.ended_unix_s = Some(now_unix());
        self.write(path)
    }
}

/// Exit code for an error, following the documented convention.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_USAGE,
        Error::Numeric(_) | Error::Diverged { .. } => EXIT_NUMERIC,
        Error::Interrupted => EXIT_INTERRUPTED,
        Error::Shape { .. }
        | Error::Contract(_)
        | Error::Io { .. }
        | Error::Format { .. }
        | Error::Data(_)
        | Error::Json(_) => EXIT_DATA,
    }
}

fn resolve_seed(flag: Option<u64>, file: &FileConfig) -> Result<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    if let Some(s) = file.seed {
        return Ok(s);
    }
    match std::env::var("SRF_SEED") {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("SRF_SEED={v:?} is not an unsigned integer"))),
        Err(_) => Ok(DEFAULT_SEED),
    }
}

/// `--profiles` if given, else the config file's, else all profiles.
fn resolve_profiles(flag: &Option<String>, file: &FileConfig) -> String {
    flag.clone()
        .or_else(|| file.profiles.clone())
        .unwrap_or_else(|| "all".into())
}

fn profile_filter(s: &str) -> Result<Option<ProfileKind>> {
    if s.eq_ignore_ascii_case("all") {
        Ok(None)
    } else {
        s.parse().map(Some)
    }
}

fn keep(filter: Option<ProfileKind>) -> impl Fn(&ChannelSetting) -> bool {
    move |s| filter.is_none_or(|p| s.profile == p)
}

fn load_slots(ds: &Dataset, ids: &[usize]) -> Result<Vec<ComplexGrid>> {
    Ok(ds
        .load_many(ids)?
        .into_iter()
        .flat_map(|r| r.slots)
        .collect())
}

fn load_model(path: &Path) -> Result<(Model, String)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok((Model::from_bytes(&bytes, path)?, io::sha256_hex(&bytes)))
}

fn parse_snrs(s: &str) -> Result<Vec<f64>> {
    parse_snr_list(s)
}

/// Runs one parsed command, returning the process exit code.
pub fn run(cli: Cli) -> i32 {
    if let Some(j) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global()
        {
            log::warn!("could not size the worker pool: {e}");
        }
    }
    let file = match cli.config.as_deref().map(FileConfig::load).transpose() {
        Ok(f) => f.unwrap_or_default(),
        Err(e) => {
            eprintln!("error: {e}");
            return exit_code(&e);
        }
    };
    let result = match cli.command {
        Command::Generate(a) => cmd_generate(a, &file),
        Command::Train(a) => cmd_train(a, &file),
        Command::Eval(a) => cmd_eval(a, &file),
        Command::SweepPilots(a) => cmd_sweep_pilots(a, &file),
        Command::SweepGenfreq(a) => cmd_sweep_genfreq(a, &file),
        Command::SweepGenmodel(a) => cmd_sweep_genmodel(a, &file),
        Command::Boost(a) => cmd_boost(a, &file),
        Command::Bench(a) => cmd_bench(a, &file),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Parses `std::env::args` and runs; clap usage errors exit with code 2.
pub fn main() -> i32 {
    match Cli::try_parse() {
        Ok(cli) => run(cli),
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            code
        }
    }
}

/// Runs `body` between a `running` and a final manifest write.
fn with_manifest<T>(
    mut m: RunManifest,
    path: &Path,
    body: impl FnOnce(&mut RunManifest) -> Result<T>,
) -> Result<T> {
    let r = body(&mut m);
    let status = match &r {
        Ok(_) => RunStatus::Completed,
        Err(Error::Interrupted) => RunStatus::Aborted,
        Err(_) => RunStatus::Failed,
    };
    m.finish(path, status, r.as_ref().err().map(|e| e.to_string()))?;
    r
}

fn cmd_generate(a: GenerateArgs, file: &FileConfig) -> Result<()> {
    let out = a
        .out
        .ok_or_else(|| Error::Config("generate needs --out <DIR>".into()))?;
    let seed = resolve_seed(a.seed, file)?;
    let mut sim = file.sim.clone().unwrap_or_default();
    let (mut reals, slots) = if a.desk {
        (10, 20)
    } else {
        (
            file.realizations_per_setting.unwrap_or(100),
            sim.slots_per_realization,
        )
    };
    if let Some(r) = a.realizations {
        reals = r;
    }
    sim.slots_per_realization = a.slots.unwrap_or(slots);
    if let Some(c) = a.carrier_hz {
        sim.carrier_hz = c;
    }
    sim.seed = seed;
    let profiles = resolve_profiles(&a.profiles, file);
    let filter = profile_filter(&profiles)?;
    let settings: Vec<ChannelSetting> = ChannelSetting::standard_grid()
        .into_iter()
        .filter(keep(filter))
        .collect();
    let config = json!({
        "sim": sim,
        "seed": seed,
        "realizations_per_setting": reals,
        "profiles": profiles,
        "settings": settings,
    });
    let mpath = out.join("run_manifest.json");
    if out.join("manifest.json").exists() {
        return Err(Error::Config(format!(
            "{} already holds a dataset",
            out.display()
        )));
    }
    let m = RunManifest::start("generate", config, seed, &[], &mpath)?;
    with_manifest(m, &mpath, |m| {
        let ds = generate_dataset(&settings, reals, &sim, &out, 0)?;
        m.outputs
            .push(out.join("manifest.json").display().to_string());
        m.extra = json!({ "dataset_hash": ds.hash(), "realizations": ds.len() });
        println!(
            "{} realizations written to {} (hash {})",
            ds.len(),
            out.display(),
            ds.hash()
        );
        Ok(())
    })
}

fn train_config(a: &TrainArgs, file: &FileConfig, seed: u64) -> Result<TrainConfig> {
    let mut c = file.train.clone().unwrap_or_default();
    c.seed = seed;
    if let Some(s) = &a.snr_mix {
        c.snr_mixture_db = parse_snrs(s)?;
    }
    if let Some(v) = a.epochs {
        c.max_epochs = v;
    }
    if let Some(v) = a.patience {
        c.patience = v;
    }
    if let Some(v) = a.lr {
        c.lr = v;
    }
    if let Some(v) = a.batch_size {
        c.batch_size = v;
    }
    if let Some(v) = &a.pattern {
        c.pilot_pattern = v.clone();
    }
    if a.time_budget_s.is_some() {
        c.time_budget_s = a.time_budget_s;
    }
    c.validate()?;
    Ok(c)
}

fn model_config_for(file: &FileConfig, pattern: &PilotPattern, k: usize, ns: usize) -> ModelConfig {
    let base = file.model.clone().unwrap_or_default();
    ModelConfig {
        input_freq: pattern.rows(),
        input_sym: pattern.cols(),
        output_freq: k,
        output_sym: ns,
        ..base
    }
}

fn cmd_train(a: TrainArgs, file: &FileConfig) -> Result<()> {
    let seed = resolve_seed(a.seed, file)?;
    let cfg = train_config(&a, file, seed)?;
    let ds = Dataset::open(&a.data)?;
    let base = &ds.manifest().base_config;
    let pattern = PilotPattern::standard(&cfg.pilot_pattern, base.subcarriers)?;
    let mcfg = model_config_for(file, &pattern, base.subcarriers, base.symbols_per_slot);
    let profiles = resolve_profiles(&a.profiles, file);
    let filter = profile_filter(&profiles)?;
    let mpath = a.out.with_extension("manifest.json");
    let hist = a.out.with_extension("history.csv");
    let config = json!({ "train": cfg, "model": mcfg, "seed": seed, "profiles": profiles });
    let mut m = RunManifest::start("train", config, seed, &[&a.data], &mpath)?;
    m.extra = json!({ "dataset_hash": ds.hash() });
    m.write(&mpath)?;

    let stop = Arc::new(AtomicBool::new(false));
    {
        let stop = stop.clone();
        if let Err(e) = ctrlc::set_handler(move || stop.store(true, Ordering::SeqCst)) {
            log::warn!("no interrupt handler: {e}");
        }
    }
    with_manifest(m, &mpath, |m| {
        let sp = ds.split();
        let data = TrainData::from_dataset(
            &ds,
            &ds.filter(&sp.train, keep(filter)),
            &ds.filter(&sp.val, keep(filter)),
        )?;
        let model = Model::build(mcfg.clone(), seed)?;
        let out_path = a.out.clone();
        let control = TrainControl {
            interrupt: Some(&stop),
            on_epoch: Some(Box::new(move |_, best: &Model| best.save(&out_path))),
        };
        let outcome = match train(model, &data, &cfg, control) {
            Err(Error::Diverged { epoch, checkpoint }) => {
                checkpoint.save(&a.out)?;
                return Err(Error::Diverged { epoch, checkpoint });
            }
            r => r?,
        };
        outcome.model.save(&a.out)?;
        outcome.history.write_csv(&hist)?;
        m.outputs = vec![a.out.display().to_string(), hist.display().to_string()];
        m.extra["model_hash"] = json!(io::file_sha256(&a.out)?);
        m.extra["best_epoch"] = json!(outcome.history.best_epoch);
        m.extra["best_val_nmse_db"] = json!(outcome.history.best_val_nmse_db());
        m.extra["stop"] = json!(outcome.history.stop);
        println!(
            "best val NMSE {:.3} dB at epoch {}; model written to {}",
            outcome.history.best_val_nmse_db(),
            outcome.history.best_epoch,
            a.out.display()
        );
        if outcome.history.stop == crate::train::StopReason::Interrupted {
            return Err(Error::Interrupted);
        }
        Ok(())
    })
}

fn lmmse_for(
    ds: &Dataset,
    pattern: &PilotPattern,
    train_ids: &[usize],
    cache: Option<&Path>,
) -> Result<LmmseEstimator> {
    if let Some(p) = cache.filter(|p| p.exists()) {
        let s = LmmseStats::load(p)?;
        if s.pattern != *pattern {
            return Err(Error::Contract(format!(
                "cached LMMSE statistics {} are for pattern {}, not {}",
                p.display(),
                s.pattern.name,
                pattern.name
            )));
        }
        return LmmseEstimator::new(&s);
    }
    let grids = load_slots(ds, train_ids)?;
    let s = LmmseStats::fit(&grids, pattern)?;
    if let Some(p) = cache {
        s.save(p)?;
    }
    LmmseEstimator::new(&s)
}

fn emit_all(
    reports: &[crate::eval::EvalReport],
    dir: &Path,
    stem: &str,
    m: &mut RunManifest,
) -> Result<()> {
    for f in [ReportFormat::Csv, ReportFormat::Json, ReportFormat::Svg] {
        let p = emit_report(reports, f, dir, stem)?;
        println!("wrote {}", p.display());
        m.outputs.push(p.display().to_string());
    }
    Ok(())
}

fn run_id(command: &str, seed: u64) -> String {
    format!("{command}-s{seed}")
}

fn cmd_eval(a: EvalArgs, file: &FileConfig) -> Result<()> {
    let seed = resolve_seed(a.seed, file)?;
    let ds = Dataset::open(&a.data)?;
    let k = ds.manifest().base_config.subcarriers;
    let pattern = PilotPattern::standard(&a.pattern, k)?;
    let snrs = parse_snrs(&a.snrs)?;
    let names: Vec<String> = a
        .estimators
        .split(',')
        .map(|s| s.trim().to_ascii_lowercase())
        .collect();
    let profiles = resolve_profiles(&a.profiles, file);
    let filter = profile_filter(&profiles)?;
    let mpath = a.out.join("run_manifest.json");
    let config = json!({ "estimators": names, "snrs_db": snrs, "pattern": pattern, "profiles": profiles, "seed": seed });
    let mut inputs = vec![a.data.as_path()];
    if let Some(p) = &a.model {
        inputs.push(p);
    }
    let m = RunManifest::start("eval", config, seed, &inputs, &mpath)?;
    with_manifest(m, &mpath, |m| {
        let sp = ds.split();
        let test = load_slots(&ds, &ds.filter(&sp.test, keep(filter)))?;
        let model = match &a.model {
            Some(p) => Some(load_model(p)?),
            None => None,
        };
        let mut ests: Vec<Box<dyn Estimator + '_>> = Vec::new();
        for n in &names {
            match n.as_str() {
                "ls" => ests.push(Box::new(LsEstimator)),
                "lmmse" => ests.push(Box::new(lmmse_for(
                    &ds,
                    &pattern,
                    &ds.filter(&sp.train, keep(filter)),
                    a.lmmse_cache.as_deref(),
                )?)),
                "sisrafnet" => {
                    let (model, hash) = model.as_ref().ok_or_else(|| {
                        Error::Config("the sisrafnet estimator needs --model".into())
                    })?;
                    ests.push(Box::new(NetEstimator::new(model).with_hash(hash.clone())));
                }
                "oracle" => ests.push(Box::new(crate::eval::OracleEstimator)),
                other => return Err(Error::Config(format!("unknown estimator {other:?}"))),
            }
        }
        let refs: Vec<&dyn Estimator> = ests.iter().map(|e| e.as_ref()).collect();
        let meta = ReportMeta::new(run_id("eval", seed), ds.hash());
        let reports = sweep_snr(&refs, &test, &snrs, &pattern, seed, &meta)?;
        for r in &reports {
            println!("{:>10}: {}", r.estimator, fmt_points(r));
        }
        emit_all(&reports, &a.out, "eval", m)
    })
}

fn fmt_points(r: &crate::eval::EvalReport) -> String {
    r.points
        .iter()
        .map(|p| format!("{}dB→{:.2}", p.snr_db, p.nmse_db))
        .collect::<Vec<_>>()
        .join("  ")
}

fn cmd_sweep_pilots(a: SweepPilotsArgs, file: &FileConfig) -> Result<()> {
    let seed = resolve_seed(a.seed, file)?;
    let ds = Dataset::open(&a.data)?;
    let k = ds.manifest().base_config.subcarriers;
    let mut pairs = Vec::new();
    for spec in &a.models {
        let (name, path) = spec
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected PATTERN=model, got {spec:?}")))?;
        pairs.push((PilotPattern::standard(name, k)?, PathBuf::from(path)));
    }
    if pairs.is_empty() {
        return Err(Error::Config(
            "sweep-pilots needs --models P1=...,P2=...".into(),
        ));
    }
    let mpath = a.out.join("run_manifest.json");
    let config = json!({ "snr_db": a.snr, "models": a.models, "seed": seed });
    let m = RunManifest::start("sweep-pilots", config, seed, &[&a.data], &mpath)?;
    with_manifest(m, &mpath, |m| {
        let sp = ds.split();
        let test = load_slots(&ds, &sp.test)?;
        let train_ids = &sp.train;
        let mut models = Vec::new();
        let mut lmmse = Vec::new();
        for (p, path) in &pairs {
            models.push(load_model(path)?);
            lmmse.push(lmmse_for(&ds, p, train_ids, None)?);
        }
        let nets: Vec<NetEstimator> = models
            .iter()
            .map(|(mo, h)| NetEstimator::new(mo).with_hash(h.clone()))
            .collect();
        let groups: Vec<(PilotPattern, Vec<&dyn Estimator>)> = pairs
            .iter()
            .enumerate()
            .map(|(i, (p, _))| {
                (
                    p.clone(),
                    vec![&LsEstimator as &dyn Estimator, &lmmse[i], &nets[i]],
                )
            })
            .collect();
        let meta = ReportMeta::new(run_id("sweep-pilots", seed), ds.hash());
        let entries = sweep_pilot_configs(&groups, &test, a.snr, seed, &meta)?;
        for e in &entries {
            println!(
                "{:>4} ({:>3} pilots) {:>10}: {:.2} dB",
                e.pattern, e.pilots, e.report.estimator, e.report.points[0].nmse_db
            );
        }
        let path = a.out.join(format!(
            "sweep_pilots_{}.json",
            run_id("sweep-pilots", seed)
        ));
        io::write_json(&path, &entries)?;
        m.outputs.push(path.display().to_string());
        let mut csv = csv::Writer::from_path(a.out.join("sweep_pilots.csv"))
            .map_err(|e| Error::Data(e.to_string()))?;
        csv.write_record(["pattern", "pilots", "estimator", "snr_db", "nmse_db"])
            .map_err(|e| Error::Data(e.to_string()))?;
        for e in &entries {
            csv.write_record([
                e.pattern.clone(),
                e.pilots.to_string(),
                e.report.estimator.clone(),
                a.snr.to_string(),
                format!("{:.6}", e.report.points[0].nmse_db),
            ])
            .map_err(|e| Error::Data(e.to_string()))?;
        }
        csv.flush()
            .map_err(|e| Error::io(a.out.join("sweep_pilots.csv"), e))?;
        m.outputs
            .push(a.out.join("sweep_pilots.csv").display().to_string());
        Ok(())
    })
}

fn cmd_sweep_genfreq(a: SweepGenfreqArgs, file: &FileConfig) -> Result<()> {
    let seed = resolve_seed(a.seed, file)?;
    let snrs = parse_snrs(&a.snrs)?;
    let ds = Dataset::open(&a.data)?;
    let alt = Dataset::open(&a.alt_data)?;
    let mpath = a.out.join("run_manifest.json");
    let config = json!({ "snrs_db": snrs, "seed": seed });
    let m = RunManifest::start(
        "sweep-genfreq",
        config,
        seed,
        &[&a.data, &a.alt_data, &a.model, &a.alt_model],
        &mpath,
    )?;
    with_manifest(m, &mpath, |m| {
        let (m0, _) = load_model(&a.model)?;
        let (m1, _) = load_model(&a.alt_model)?;
        let t0 = load_slots(&ds, &ds.split().test)?;
        let t1 = load_slots(&alt, &alt.split().test)?;
        let f = |d: &Dataset| format!("{:.2}GHz", d.manifest().base_config.carrier_hz / 1e9);
        let (n0, n1) = (f(&ds), f(&alt));
        let pattern = PilotPattern::standard("P1", ds.manifest().base_config.subcarriers)?;
        let meta = ReportMeta::new(run_id("sweep-genfreq", seed), ds.hash())
            .note("alt_dataset_hash", alt.hash());
        let mat = sweep_center_frequency(
            &[(&format!("train@{n0}"), &m0), (&format!("train@{n1}"), &m1)],
            &[(&n0, &t0), (&n1, &t1)],
            &snrs,
            &pattern,
            seed,
            &meta,
        )?;
        print_matrix(&mat);
        let path = a.out.join(format!(
            "sweep_genfreq_{}.json",
            run_id("sweep-genfreq", seed)
        ));
        io::write_json(&path, &mat)?;
        m.outputs.push(path.display().to_string());
        let flat: Vec<_> = mat.reports.iter().flatten().cloned().collect();
        let svg = a.out.join("sweep_genfreq.svg");
        crate::eval::write_svg(&flat, "center frequency", &svg)?;
        m.outputs.push(svg.display().to_string());
        Ok(())
    })
}

fn print_matrix(mat: &crate::eval::GeneralizationMatrix) {
    for (i, tr) in mat.train_sets.iter().enumerate() {
        for (j, te) in mat.test_sets.iter().enumerate() {
            println!("{tr:>14} on {te:>8}: {}", fmt_points(&mat.reports[i][j]));
        }
    }
}

fn cmd_sweep_genmodel(a: SweepGenmodelArgs, file: &FileConfig) -> Result<()> {
    let seed = resolve_seed(a.seed, file)?;
    let snrs = parse_snrs(&a.snrs)?;
    let ds = Dataset::open(&a.data)?;
    let mpath = a.out.join("run_manifest.json");
    let m = RunManifest::start(
        "sweep-genmodel",
        json!({ "snrs_db": snrs, "seed": seed }),
        seed,
        &[&a.data, &a.model_a, &a.model_d, &a.model_all],
        &mpath,
    )?;
    with_manifest(m, &mpath, |m| {
        let (ma, _) = load_model(&a.model_a)?;
        let (md, _) = load_model(&a.model_d)?;
        let (mall, _) = load_model(&a.model_all)?;
        let test = &ds.split().test;
        let ta = load_slots(&ds, &ds.filter(test, keep(Some(ProfileKind::CdlA))))?;
        let td = load_slots(&ds, &ds.filter(test, keep(Some(ProfileKind::CdlD))))?;
        let pattern = PilotPattern::standard("P1", ds.manifest().base_config.subcarriers)?;
        let meta = ReportMeta::new(run_id("sweep-genmodel", seed), ds.hash());
        let mat = generalization_matrix(
            &[("CDL-A", &ma), ("CDL-D", &md), ("combined", &mall)],
            &[("CDL-A", &ta), ("CDL-D", &td)],
            &snrs,
            &pattern,
            seed,
            &meta,
        )?;
        print_matrix(&mat);
        let path = a.out.join(format!(
            "sweep_genmodel_{}.json",
            run_id("sweep-genmodel", seed)
        ));
        io::write_json(&path, &mat)?;
        m.outputs.push(path.display().to_string());
        Ok(())
    })
}

fn cmd_boost(a: BoostArgs, file: &FileConfig) -> Result<()> {
    let seed = resolve_seed(a.seed, file)?;
    let pool = parse_snrs(&a.pool)?;
    let mut base = file.train.clone().unwrap_or_default();
    base.seed = seed;
    if let Some(e) = a.epochs {
        base.max_epochs = e;
    }
    base.validate()?;
    let ds = Dataset::open(&a.data)?;
    let k = ds.manifest().base_config.subcarriers;
    let pattern = PilotPattern::standard(&base.pilot_pattern, k)?;
    let mcfg = model_config_for(
        file,
        &pattern,
        k,
        ds.manifest().base_config.symbols_per_slot,
    );
    let mpath = a.out.with_extension("manifest.json");
    let config =
        json!({ "train": base, "model": mcfg, "pool_db": pool, "budget": a.budget, "seed": seed });
    let m = RunManifest::start("boost", config, seed, &[&a.data], &mpath)?;
    with_manifest(m, &mpath, |m| {
        let sp = ds.split();
        let data = TrainData::from_dataset(&ds, &sp.train, &sp.val)?;
        let result = snr_boost_search(&pool, a.budget, |set| {
            let cfg = boost_candidate_config(&base, set);
            let out = train(
                Model::build(mcfg.clone(), seed)?,
                &data,
                &cfg,
                TrainControl::default(),
            )?;
            let s = out.history.best_val_nmse_db();
            println!("candidate {set:?}: {s:.3} dB");
            Ok(s)
        })?;
        println!(
            "chosen {:?} scores {:?}",
            result.chosen_set_db, result.per_step_scores
        );
        io::write_json(&a.out, &result)?;
        m.outputs.push(a.out.display().to_string());
        Ok(())
    })
}

fn cmd_bench(a: BenchArgs, file: &FileConfig) -> Result<()> {
    let model = match &a.model {
        Some(p) => load_model(p)?.0,
        None => Model::build(file.model.clone().unwrap_or_default(), DEFAULT_SEED)?,
    };
    let r = bench(&model, a.warmup, a.iters)?;
    let text = serde_json::to_string_pretty(&r)?;
    println!("{text}");
    if let Some(out) = &a.out {
        io::write_json(out, &r)?;
    }
    Ok(())
}
