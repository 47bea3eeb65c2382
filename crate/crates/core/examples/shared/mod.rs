//! Small in-memory channels and a narrow model so the examples finish in
//! seconds.
#![allow(dead_code)]

use sisrafnet::channel::{ChannelRealization, ChannelSetting, ComplexGrid, ProfileKind, SimConfig};
use sisrafnet::model::ModelConfig;
use sisrafnet::train::{TrainConfig, TrainData};

pub const SUBCARRIERS: usize = 48;

pub fn sim() -> SimConfig {
    SimConfig {
        subcarriers: SUBCARRIERS,
        slots_per_realization: 8,
        ..SimConfig::default()
    }
}

/// Four realizations per setting for training, one for validation, one for test.
pub fn channels(
    base: &SimConfig,
    keep: impl Fn(ProfileKind) -> bool,
    seed: u64,
) -> (TrainData, Vec<ComplexGrid>) {
    let mut d = TrainData::default();
    let mut test = Vec::new();
    for (i, s) in ChannelSetting::standard_grid().iter().enumerate() {
        if !keep(s.profile) {
            continue;
        }
        for r in 0..6u64 {
            let cfg = s.sim_config(base, seed * 10_000 + 100 * i as u64 + r);
            let slots = ChannelRealization::generate(&s.profile.profile().unwrap(), &cfg)
                .unwrap()
                .slots;
            match r {
                0..=3 => d.train.extend(slots),
                4 => d.val.extend(slots),
                _ => test.extend(slots),
            }
        }
    }
    (d, test)
}

pub fn all(_: ProfileKind) -> bool {
    true
}

/// Same layout as the default model with fewer channels, sized for `rows`×`cols` pilots.
pub fn narrow_model(rows: usize, cols: usize) -> ModelConfig {
    ModelConfig {
        input_freq: rows,
        input_sym: cols,
        output_freq: SUBCARRIERS,
        front_channels: vec![8; 8],
        gru_hidden: 16,
        tail_channels: vec![8, 4, 1],
        ..ModelConfig::default()
    }
}

pub fn quick_train(mixture: &[f64], epochs: usize) -> TrainConfig {
    TrainConfig {
        snr_mixture_db: mixture.to_vec(),
        batch_size: 16,
        lr: 3e-3,
        max_epochs: epochs,
        patience: epochs,
        ..TrainConfig::default()
    }
}
