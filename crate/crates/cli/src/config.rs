//! File schemas for single runs and sweeps. Transmit power is given in dBW;
//! everything else not listed as required falls back to the standard
//! operating point.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use mgmc_core::ccp::CcpConfig;
use mgmc_core::criteria::Criterion;
use mgmc_core::system::{dbw_to_watts, ChannelSet, DcFunctionSpec, SystemConfig};
use serde::{Deserialize, Serialize};

/// Environment override for the base seed.
pub const SEED_ENV: &str = "MGMC_SEED";
/// Environment override for the output directory.
pub const OUT_ENV: &str = "MGMC_OUT";

/// A scalar applied to every group, or one value per group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerGroup {
    All(f64),
    Each(Vec<f64>),
}

impl PerGroup {
    fn expand(&self, g: usize) -> Vec<f64> {
        match self {
            PerGroup::All(v) => vec![*v; g],
            PerGroup::Each(v) => v.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "G")]
    pub g: usize,
    #[serde(rename = "P_T_dBW")]
    pub p_t_dbw: f64,
    /// QoS thresholds, bits/s/Hz.
    pub eps: PerGroup,
    #[serde(rename = "B", default = "one")]
    pub bandwidth: f64,
    #[serde(default = "one")]
    pub sigma2: f64,
    #[serde(default)]
    pub psi: Option<PerGroup>,
    #[serde(rename = "P0", default = "default_p0")]
    pub p0: f64,
    #[serde(default = "default_rho")]
    pub rho: f64,
    #[serde(rename = "Pi_coeff", default = "default_pi")]
    pub pi_coeff: f64,
    #[serde(default)]
    pub power_fn: DcFunctionSpec,
    /// Defaults to every user wanting every message.
    #[serde(default)]
    pub interest_mask: Option<Vec<Vec<bool>>>,
}

fn one() -> f64 {
    1.0
}
fn default_p0() -> f64 {
    16.0
}
fn default_rho() -> f64 {
    0.2
}
fn default_pi() -> f64 {
    2.4
}

impl SystemSpec {
    pub fn build(&self) -> Result<SystemConfig> {
        let cfg = SystemConfig {
            m: self.m,
            n: self.n,
            g: self.g,
            bandwidth: self.bandwidth,
            sigma2: self.sigma2,
            p_t: dbw_to_watts(self.p_t_dbw),
            eps: self.eps.expand(self.g),
            psi: self.psi.as_ref().map_or_else(|| vec![1.0; self.g], |p| p.expand(self.g)),
            p0: self.p0,
            rho: self.rho,
            pi_coeff: self.pi_coeff,
            power_fn: self.power_fn,
            interest_mask: self
                .interest_mask
                .clone()
                .unwrap_or_else(|| vec![vec![true; self.g]; self.n]),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Input of `solve`, `oracle`, `gen-channels` and `check`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunFile {
    #[serde(default)]
    pub seed: u64,
    pub system: SystemSpec,
    #[serde(default)]
    pub ccp: CcpConfig,
    /// Channel JSON to use instead of drawing from `seed`.
    #[serde(default)]
    pub channels: Option<PathBuf>,
}

impl RunFile {
    /// Channels from the referenced file (relative to `base`), else drawn
    /// from `seed`.
    pub fn channels(&self, cfg: &SystemConfig, seed: u64, base: &Path) -> Result<ChannelSet> {
        let h = match &self.channels {
            Some(p) => {
                let p = base.join(p);
                let text = std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
            }
            None => mgmc_core::system::generate_channels(cfg, seed)?,
        };
        h.check_against(cfg)?;
        Ok(h)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Axis {
    N,
    M,
    #[serde(rename = "P_T_dBW")]
    PtDbw,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::N => "N",
            Axis::M => "M",
            Axis::PtDbw => "P_T_dBW",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxis {
    pub axis: Axis,
    pub values: Vec<f64>,
}

/// Input of `sweep`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub system: SystemSpec,
    pub sweep: SweepAxis,
    pub realizations: usize,
    #[serde(default = "all_criteria")]
    pub criteria: Vec<Criterion>,
    /// Realization `r` uses seed `seed + r`.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    /// Overrides shared by every criterion; `criterion` itself is ignored.
    #[serde(default)]
    pub ccp: Option<CcpConfig>,
}

fn all_criteria() -> Vec<Criterion> {
    Criterion::ALL.to_vec()
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.sweep.values.is_empty() {
            bail!("sweep.values: must not be empty");
        }
        if self.realizations == 0 {
            bail!("realizations: must be at least 1");
        }
        if self.criteria.is_empty() {
            bail!("criteria: must not be empty");
        }
        for &v in &self.sweep.values {
            self.system_at(v).with_context(|| format!("sweep value {v}"))?;
        }
        Ok(())
    }

    /// The base system with the swept axis set to `v`.
    pub fn system_at(&self, v: f64) -> Result<SystemConfig> {
        let mut s = self.system.clone();
        let count = |v: f64| -> Result<usize> {
            if v < 1.0 || v.fract() != 0.0 {
                bail!("{} must be a positive integer, got {v}", self.sweep.axis.name());
            }
            Ok(v as usize)
        };
        match self.sweep.axis {
            Axis::N => {
                if s.interest_mask.is_some() {
                    bail!("system.interest_mask: cannot be given when sweeping N");
                }
                s.n = count(v)?;
            }
            Axis::M => s.m = count(v)?,
            Axis::PtDbw => s.p_t_dbw = v,
        }
        s.build()
    }

    pub fn ccp_for(&self, c: Criterion) -> CcpConfig {
        match &self.ccp {
            Some(base) => CcpConfig {
                criterion: c,
                ..base.clone()
            },
            None => CcpConfig::for_criterion(c),
        }
    }
}

/// Reads and parses a TOML file, naming the offending field on failure.
pub fn load<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).map_err(|e| anyhow::anyhow!("{}: {}", path.display(), e.to_string().trim_end()))
}

/// Flag, then environment, then file value.
pub fn resolve_seed(flag: Option<u64>, file: u64) -> Result<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v.parse().with_context(|| format!("{SEED_ENV}={v} is not an unsigned integer")),
        Err(_) => Ok(file),
    }
}

/// Flag, then environment, then file value, then `fallback`.
pub fn resolve_out(flag: Option<PathBuf>, file: Option<PathBuf>, fallback: &str) -> PathBuf {
    flag.or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .or(file)
        .unwrap_or_else(|| PathBuf::from(fallback))
}

#[cfg(test)]
mod tests {
    use super::*;

    const RUN: &str = r#"
seed = 3
[system]
M = 2
N = 4
G = 3
P_T_dBW = 10.0
eps = 1.0
[ccp]
criterion = "EE"
"#;

    #[test]
    fn run_file_defaults() {
        let f: RunFile = toml::from_str(RUN).unwrap();
        let cfg = f.system.build().unwrap();
        assert_eq!(cfg, SystemConfig::standard(2, 4, 3, 10.0, 1.0));
        assert_eq!(f.ccp.criterion, Criterion::Ee);
        assert_eq!(f.ccp.max_iters, 100);
    }

    #[test]
    fn missing_power_is_named() {
        let text = RUN.replace("P_T_dBW = 10.0\n", "");
        let err = toml::from_str::<RunFile>(&text).unwrap_err().to_string();
        assert!(err.contains("P_T_dBW"), "{err}");
    }

    #[test]
    fn per_group_thresholds() {
        let text = RUN.replace("eps = 1.0", "eps = [0.5, 1.0, 2.0]");
        let f: RunFile = toml::from_str(&text).unwrap();
        assert_eq!(f.system.build().unwrap().eps, vec![0.5, 1.0, 2.0]);
        let bad = RUN.replace("eps = 1.0", "eps = [0.5]");
        let f: RunFile = toml::from_str(&bad).unwrap();
        assert!(f.system.build().is_err());
    }

    #[test]
    fn sweep_axis_substitution() {
        let text = r#"
realizations = 2
[system]
M = 3
N = 8
G = 4
P_T_dBW = 20.0
eps = 1.0
[sweep]
axis = "N"
values = [8, 10, 12]
"#;
        let spec: ExperimentSpec = toml::from_str(text).unwrap();
        spec.validate().unwrap();
        assert_eq!(spec.system_at(10.0).unwrap().n, 10);
        assert!(spec.system_at(2.0).is_err());
        assert!(spec.system_at(8.5).is_err());
        assert_eq!(spec.criteria, Criterion::ALL.to_vec());
    }
}
