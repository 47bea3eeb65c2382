use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    kmh_to_mps, ChannelProfile, ChannelRealization, ComplexGrid, PilotPattern, ProfileKind,
    SimConfig,
};
use crate::error::{Error, Result};
use crate::io::{self, BinReader, BinWriter};
use crate::rng::{derive_seed, rng_for};

pub const DATASET_SCHEMA_VERSION: u32 = 1;
const REALIZATION_MAGIC: &[u8; 4] = b"SRFD";
const REALIZATION_VERSION: u32 = 1;
const MANIFEST: &str = "manifest.json";

/// One (profile, delay spread, velocity) combination.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelSetting {
    pub profile: ProfileKind,
    pub delay_spread_s: f64,
    pub velocity_mps: f64,
}

impl ChannelSetting {
    pub fn new(profile: ProfileKind, delay_spread_s: f64, velocity_mps: f64) -> Self {
        ChannelSetting {
            profile,
            delay_spread_s,
            velocity_mps,
        }
    }

    /// CDL-A/CDL-D × {30, 300} ns × {3, 30} km/h.
    pub fn standard_grid() -> Vec<Self> {
        let mut out = Vec::with_capacity(8);
        for profile in [ProfileKind::CdlA, ProfileKind::CdlD] {
            for ds in [30e-9, 300e-9] {
                for kmh in [3.0, 30.0] {
                    out.push(ChannelSetting::new(profile, ds, kmh_to_mps(kmh)));
                }
            }
        }
        out
    }

    pub fn label(&self) -> String {
        format!(
            "{}/{:.0}ns/{:.0}kmh",
            self.profile.name(),
            self.delay_spread_s * 1e9,
            self.velocity_mps * 3.6
        )
    }

    pub fn sim_config(&self, base: &SimConfig, seed: u64) -> SimConfig {
        SimConfig {
            delay_spread_s: self.delay_spread_s,
            velocity_mps: self.velocity_mps,
            seed,
            ..base.clone()
        }
    }

    fn channel_profile(&self) -> Result<ChannelProfile> {
        self.profile
            .profile()
            .ok_or_else(|| Error::Config("datasets need a tabulated profile".into()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RealizationEntry {
    pub setting: usize,
    pub index: usize,
    pub seed: u64,
    pub file: String,
    pub sha256: String,
}

/// Realization-level partition; values index `DatasetManifest::files`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub master_seed: u64,
    pub base_config: SimConfig,
    pub settings: Vec<ChannelSetting>,
    pub realizations_per_setting: usize,
    pub files: Vec<RealizationEntry>,
    pub pilot_patterns: Vec<PilotPattern>,
    pub split_fractions: [f64; 3],
    pub split: Split,
}

/// Splits each setting's realizations separately so every partition sees
/// every setting. Rounds the val/test counts and gives the rest to train.
pub fn split(manifest: &DatasetManifest, fractions: [f64; 3], seed: u64) -> Result<Split> {
    if fractions.iter().any(|&f| !(0.0..=1.0).contains(&f))
        || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9
    {
        return Err(Error::Config(format!(
            "split fractions {fractions:?} must be in [0,1] and sum to 1"
        )));
    }
    let mut out = Split::default();
    for s in 0..manifest.settings.len() {
        let mut ids: Vec<usize> = manifest
            .files
            .iter()
            .enumerate()
            .filter(|(_, e)| e.setting == s)
            .map(|(i, _)| i)
            .collect();
        let n = ids.len();
        let n_val = (n as f64 * fractions[1]).round() as usize;
        let n_test = (n as f64 * fractions[2]).round() as usize;
        if n_val == 0 || n_test == 0 || n_val + n_test >= n {
            return Err(Error::Data(format!(
                "setting {s} has {n} realizations, too few for non-empty {fractions:?} splits"
            )));
        }
        ids.shuffle(&mut rng_for(seed, &[0x53504c54, s as u64]));
        out.test.extend_from_slice(&ids[..n_test]);
        out.val.extend_from_slice(&ids[n_test..n_test + n_val]);
        out.train.extend_from_slice(&ids[n_test + n_val..]);
    }
    out.train.sort_unstable();
    out.val.sort_unstable();
    out.test.sort_unstable();
    Ok(out)
}

fn encode_realization(r: &ChannelRealization) -> Vec<u8> {
    let c = &r.config;
    let mut w = BinWriter::with_header(REALIZATION_MAGIC, REALIZATION_VERSION);
    w.u32(c.subcarriers as u32);
    w.u32(c.symbols_per_slot as u32);
    w.u32(r.slots.len() as u32);
    for g in &r.slots {
        for v in g.data() {
            w.f32(v.re as f32);
            w.f32(v.im as f32);
        }
    }
    w.into_bytes()
}

fn decode_realization(bytes: &[u8], path: &Path) -> Result<(usize, usize, Vec<ComplexGrid>)> {
    let mut r = BinReader::open(bytes, path, REALIZATION_MAGIC, REALIZATION_VERSION)?;
    let k = r.u32()? as usize;
    let ns = r.u32()? as usize;
    let n_slots = r.u32()? as usize;
    if k == 0 || ns == 0 || n_slots == 0 {
        return Err(Error::format(
            path,
            format!("empty realization {k}×{ns}×{n_slots}"),
        ));
    }
    let mut slots = Vec::with_capacity(n_slots);
    for _ in 0..n_slots {
        let mut data = Vec::with_capacity(k * ns);
        for _ in 0..k * ns {
            let re = r.f32()? as f64;
            let im = r.f32()? as f64;
            data.push(Complex64::new(re, im));
        }
        slots.push(ComplexGrid::new(k, ns, data)?);
    }
    r.finish()?;
    Ok((k, ns, slots))
}

fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

/// Renders `realizations_per_setting` realizations of every setting into
/// `out_dir` and writes the manifest last. `config.seed` is the master seed;
/// `jobs = 0` uses all cores. Output bytes do not depend on `jobs`.
pub fn generate_dataset(
    settings: &[ChannelSetting],
    realizations_per_setting: usize,
    config: &SimConfig,
    out_dir: &Path,
    jobs: usize,
) -> Result<Dataset> {
    config.validate()?;
    if settings.is_empty() || realizations_per_setting == 0 {
        return Err(Error::Config(
            "need at least one setting and one realization".into(),
        ));
    }
    if out_dir.join(MANIFEST).exists() {
        return Err(Error::Config(format!(
            "{} already holds a dataset; choose a fresh directory",
            out_dir.display()
        )));
    }
    io::ensure_dir(out_dir)?;
    let jobs_list: Vec<(usize, usize)> = (0..settings.len())
        .flat_map(|s| (0..realizations_per_setting).map(move |r| (s, r)))
        .collect();
    let master = config.seed;
    let files = thread_pool(jobs)?.install(|| {
        jobs_list
            .par_iter()
            .map(|&(s, r)| {
                let setting = &settings[s];
                let seed = derive_seed(master, &[s as u64, r as u64]);
                let real = ChannelRealization::generate(
                    &setting.channel_profile()?,
                    &setting.sim_config(config, seed),
                )?;
                let bytes = encode_realization(&real);
                let file = format!("s{s:02}_r{r:04}.srfd");
                let path = out_dir.join(&file);
                std::fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
                Ok(RealizationEntry {
                    setting: s,
                    index: r,
                    seed,
                    file,
                    sha256: io::sha256_hex(&bytes),
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let fractions = [0.8, 0.1, 0.1];
    let mut manifest = DatasetManifest {
        schema_version: DATASET_SCHEMA_VERSION,
        master_seed: master,
        base_config: config.clone(),
        settings: settings.to_vec(),
        realizations_per_setting,
        files,
        pilot_patterns: PilotPattern::all_standard(config.subcarriers),
        split_fractions: fractions,
        split: Split::default(),
    };
    manifest.split = split(&manifest, fractions, master)?;
    io::write_json(&out_dir.join(MANIFEST), &manifest)?;
    Dataset::open(out_dir)
}

/// A dataset directory with its parsed manifest.
#[derive(Clone, Debug)]
pub struct Dataset {
    dir: PathBuf,
    manifest: DatasetManifest,
    hash: String,
}

impl Dataset {
    pub fn open(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let bytes = io::read_file(&path)?;
        let manifest: DatasetManifest =
            serde_json::from_slice(&bytes).map_err(|e| Error::format(&path, e.to_string()))?;
        if manifest.schema_version != DATASET_SCHEMA_VERSION {
            return Err(Error::format(
                &path,
                format!(
                    "dataset schema {} is not supported (expected {DATASET_SCHEMA_VERSION})",
                    manifest.schema_version
                ),
            ));
        }
        if manifest
            .files
            .iter()
            .any(|e| e.setting >= manifest.settings.len())
        {
            return Err(Error::format(
                &path,
                "file entry refers to an unknown setting",
            ));
        }
        Ok(Dataset {
            dir: dir.to_path_buf(),
            manifest,
            hash: io::sha256_hex(&bytes),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }

    /// sha256 of `manifest.json`; it covers every file through their hashes.
    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub fn split(&self) -> &Split {
        &self.manifest.split
    }

    pub fn len(&self) -> usize {
        self.manifest.files.len()
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.files.is_empty()
    }

    pub fn setting_of(&self, idx: usize) -> &ChannelSetting {
        &self.manifest.settings[self.manifest.files[idx].setting]
    }

    /// Keeps the entries of `ids` whose setting satisfies `keep`.
    pub fn filter(&self, ids: &[usize], keep: impl Fn(&ChannelSetting) -> bool) -> Vec<usize> {
        ids.iter()
            .copied()
            .filter(|&i| keep(self.setting_of(i)))
            .collect()
    }

    pub fn load(&self, idx: usize) -> Result<ChannelRealization> {
        let entry = self.manifest.files.get(idx).ok_or_else(|| {
            Error::Data(format!("realization {idx} out of range ({})", self.len()))
        })?;
        let path = self.dir.join(&entry.file);
        let bytes = io::read_file(&path)?;
        let actual = io::sha256_hex(&bytes);
        if actual != entry.sha256 {
            return Err(Error::format(
                &path,
                format!(
                    "content hash {actual} does not match manifest entry {}",
                    entry.sha256
                ),
            ));
        }
        let (k, ns, slots) = decode_realization(&bytes, &path)?;
        let setting = &self.manifest.settings[entry.setting];
        let config = setting.sim_config(&self.manifest.base_config, entry.seed);
        if k != config.subcarriers || ns != config.symbols_per_slot {
            return Err(Error::format(
                &path,
                format!("grid {k}×{ns} disagrees with the manifest"),
            ));
        }
        Ok(ChannelRealization {
            config,
            profile: setting.profile,
            slots,
        })
    }

    pub fn load_many(&self, ids: &[usize]) -> Result<Vec<ChannelRealization>> {
        ids.iter().map(|&i| self.load(i)).collect()
    }
}
