use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ProfileKind {
    #[serde(rename = "CDL-A")]
    CdlA,
    #[serde(rename = "CDL-D")]
    CdlD,
    #[serde(rename = "custom")]
    Custom,
}

impl ProfileKind {
    pub fn name(self) -> &'static str {
        match self {
            ProfileKind::CdlA => "CDL-A",
            ProfileKind::CdlD => "CDL-D",
            ProfileKind::Custom => "custom",
        }
    }

    pub fn profile(self) -> Option<ChannelProfile> {
        match self {
            ProfileKind::CdlA => Some(ChannelProfile::cdl_a()),
            ProfileKind::CdlD => Some(ChannelProfile::cdl_d()),
            ProfileKind::Custom => None,
        }
    }
}

impl std::str::FromStr for ProfileKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "CDL-A" | "A" => Ok(ProfileKind::CdlA),
            "CDL-D" | "D" => Ok(ProfileKind::CdlD),
            _ => Err(Error::Config(format!("unknown channel profile {s:?}"))),
        }
    }
}

// 3GPP TR 38.901, Table 7.7.1-1 (CDL-A): normalized delay, power in dB.
const CDL_A: [(f64, f64); 23] = [
    (0.0000, -13.4),
    (0.3819, 0.0),
    (0.4025, -2.2),
    (0.5868, -4.0),
    (0.4610, -6.0),
    (0.5375, -8.2),
    (0.6708, -9.9),
    (0.5750, -10.5),
    (0.7618, -7.5),
    (1.5375, -15.9),
    (1.8978, -6.6),
    (2.2242, -16.7),
    (2.1718, -12.4),
    (2.4942, -15.2),
    (2.5119, -10.8),
    (3.0582, -11.3),
    (4.0810, -12.7),
    (4.4579, -16.2),
    (4.5695, -18.3),
    (4.7966, -18.9),
    (5.0066, -16.6),
    (5.3043, -19.9),
    (9.6586, -29.7),
];

// 3GPP TR 38.901, Table 7.7.1-4 (CDL-D), diffuse clusters only; the
// specular first-cluster component is carried by the K-factor.
const CDL_D: [(f64, f64); 13] = [
    (0.0, -13.5),
    (0.035, -18.8),
    (0.612, -21.0),
    (1.363, -22.8),
    (1.405, -17.9),
    (1.804, -20.1),
    (2.596, -21.9),
    (1.775, -22.9),
    (4.042, -27.8),
    (7.937, -23.6),
    (9.424, -24.8),
    (9.708, -30.0),
    (12.525, -27.7),
];

const CDL_D_K_FACTOR_DB: f64 = 13.7;

/// Cluster delays (normalized to the delay spread) and linear powers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelProfile {
    pub kind: ProfileKind,
    pub cluster_delays: Vec<f64>,
    pub cluster_powers: Vec<f64>,
    pub has_los: bool,
    /// Linear Rician K-factor; ignored without a LOS ray.
    pub los_k_factor: f64,
}

impl ChannelProfile {
    fn from_table(kind: ProfileKind, table: &[(f64, f64)], k_factor_db: Option<f64>) -> Self {
        let mut rows = table.to_vec();
        rows.sort_by(|a, b| a.0.total_cmp(&b.0));
        let lin: Vec<f64> = rows.iter().map(|r| 10f64.powf(r.1 / 10.0)).collect();
        let total: f64 = lin.iter().sum();
        ChannelProfile {
            kind,
            cluster_delays: rows.iter().map(|r| r.0).collect(),
            cluster_powers: lin.iter().map(|p| p / total).collect(),
            has_los: k_factor_db.is_some(),
            los_k_factor: k_factor_db.map_or(0.0, |k| 10f64.powf(k / 10.0)),
        }
    }

    pub fn cdl_a() -> Self {
        Self::from_table(ProfileKind::CdlA, &CDL_A, None)
    }

    pub fn cdl_d() -> Self {
        Self::from_table(ProfileKind::CdlD, &CDL_D, Some(CDL_D_K_FACTOR_DB))
    }

    /// NLOS profile from explicit delays and linear powers.
    pub fn custom(cluster_delays: Vec<f64>, cluster_powers: Vec<f64>) -> Result<Self> {
        let p = ChannelProfile {
            kind: ProfileKind::Custom,
            cluster_delays,
            cluster_powers,
            has_los: false,
            los_k_factor: 0.0,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.cluster_delays;
        let p = &self.cluster_powers;
        if d.is_empty() || d.len() != p.len() {
            return Err(Error::Config(format!(
                "profile needs matching non-empty delay/power lists, got {} and {}",
                d.len(),
                p.len()
            )));
        }
        if d[0] != 0.0 || d.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Config(
                "cluster delays must be ascending from 0".into(),
            ));
        }
        if p.iter().any(|&x| !(x >= 0.0)) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(
                "cluster powers must be non-negative and sum to 1".into(),
            ));
        }
        if self.has_los && !(self.los_k_factor > 0.0) {
            return Err(Error::Config(
                "LOS profile needs a positive K-factor".into(),
            ));
        }
        Ok(())
    }

    /// RMS delay of the diffuse clusters in units of the delay spread.
    pub fn normalized_rms_delay(&self) -> f64 {
        let m1: f64 = self
            .cluster_delays
            .iter()
            .zip(&self.cluster_powers)
            .map(|(d, p)| d * p)
            .sum();
        let m2: f64 = self
            .cluster_delays
            .iter()
            .zip(&self.cluster_powers)
            .map(|(d, p)| d * d * p)
            .sum();
        (m2 - m1 * m1).max(0.0).sqrt()
    }
}
