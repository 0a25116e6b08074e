//! Run configuration, read from TOML. Every field has a desk-scale default.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::crowd::{CohortParams, SplitFractions, XorParams};
use crate::dgp::{Exp1WorldConfig, Exp3World};
use crate::error::{Error, Result};
use crate::oracle::{sha256_hex, GridSpec};
use crate::poly::{CapMap, SelectGrids};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleConfig {
    pub n_qmc: usize,
    pub grid: GridSpec,
    pub seed: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            n_qmc: 1 << 16,
            grid: GridSpec::default(),
            seed: 20_240_601,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Exp1Config {
    pub h: Vec<f64>,
    pub n: Vec<usize>,
    pub seeds: Vec<u64>,
    pub world_seed: u64,
    pub world: Exp1WorldConfig,
    /// Any of `poly`, `poly_cv`, `buckets`, `nw`.
    pub methods: Vec<String>,
    pub ridge_mults: Vec<f64>,
    pub caps: CapMap,
    pub oracle: OracleConfig,
}

impl Default for Exp1Config {
    fn default() -> Self {
        Self {
            h: vec![1.0 / 16.0],
            n: vec![500, 1_000, 2_000, 5_000, 10_000, 20_000],
            seeds: (0..5).collect(),
            world_seed: 1,
            world: Exp1WorldConfig::default(),
            methods: vec!["poly".into(), "buckets".into(), "nw".into()],
            ridge_mults: SelectGrids::default_ridges(),
            caps: CapMap::default(),
            oracle: OracleConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Exp2Config {
    pub h: f64,
    pub n_cal: usize,
    pub n_eval: usize,
    pub seeds: Vec<u64>,
    pub world_seed: u64,
    pub world: Exp1WorldConfig,
    pub degree: usize,
    pub bins: usize,
    pub points_per_seed: usize,
    pub oracle: OracleConfig,
}

impl Default for Exp2Config {
    fn default() -> Self {
        Self {
            h: 1.0 / 64.0,
            n_cal: 20_000,
            n_eval: 20_000,
            seeds: (0..5).collect(),
            world_seed: 0,
            world: Exp1WorldConfig::undertrained(),
            degree: 12,
            bins: 50,
            points_per_seed: 2_000,
            oracle: OracleConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Exp3Config {
    pub repeats: usize,
    pub seed: u64,
    pub n_cal: usize,
    pub n_eval: usize,
    pub degree_1d: usize,
    pub degree_2d: usize,
    pub ridge_mult: f64,
    pub world: Exp3World,
}

impl Default for Exp3Config {
    fn default() -> Self {
        Self {
            repeats: 50,
            seed: 0,
            n_cal: 3_000,
            n_eval: 8_000,
            degree_1d: 6,
            degree_2d: 4,
            ridge_mult: 1e-4,
            world: Exp3World::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Exp4Config {
    pub repeats: usize,
    pub seed: u64,
    /// Votes CSV `task_id,worker_id,response`; the synthetic table is used when absent.
    pub dataset: Option<PathBuf>,
    pub gold: Option<PathBuf>,
    /// Use the synthetic vote table; required when no dataset is given.
    pub surrogate: bool,
    pub target_class: String,
    pub surrogate_tasks: usize,
    pub surrogate_votes: u32,
    pub surrogate_seed: u64,
    pub lambda: f64,
    pub budgets: Vec<f64>,
    pub cohorts: CohortParams,
    pub xor: XorParams,
    pub split: SplitFractions,
}

impl Default for Exp4Config {
    fn default() -> Self {
        Self {
            repeats: 200,
            seed: 0,
            dataset: None,
            gold: None,
            surrogate: false,
            target_class: "1".into(),
            surrogate_tasks: 300,
            surrogate_votes: 20,
            surrogate_seed: 123,
            lambda: 1e-3,
            budgets: vec![0.02, 0.05, 0.1, 0.15, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0],
            cohorts: CohortParams::default(),
            xor: XorParams::default(),
            split: SplitFractions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PropertiesConfig {
    pub seed: u64,
    pub roundtrip_draws: usize,
    pub ks_draws: usize,
    pub sandwich_draws: usize,
    pub lp_every: usize,
    pub gap_draws: usize,
    pub oracle: OracleConfig,
}

impl Default for PropertiesConfig {
    fn default() -> Self {
        Self {
            seed: 11,
            roundtrip_draws: 100_000,
            ks_draws: 100_000,
            sandwich_draws: 100_000,
            lp_every: 100,
            gap_draws: 10_000_000,
            oracle: OracleConfig::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub out_dir: Option<PathBuf>,
    pub exp1: Exp1Config,
    pub exp2: Exp2Config,
    pub exp3: Exp3Config,
    pub exp4: Exp4Config,
    pub properties: PropertiesConfig,
}

impl RunConfig {
    pub fn from_toml(s: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.exp1.h.iter().any(|&h| !(h > 0.0)) || !(self.exp2.h > 0.0) {
            return bad("bandwidths must be positive");
        }
        if self.exp1.n.is_empty() || self.exp1.n.contains(&0) {
            return bad("exp1.n must be non-empty and positive");
        }
        if self.exp1.seeds.is_empty() || self.exp2.seeds.is_empty() {
            return bad("seed lists must be non-empty");
        }
        for m in &self.exp1.methods {
            if !["poly", "poly_cv", "buckets", "nw"].contains(&m.as_str()) {
                return Err(Error::Config(format!("unknown exp1 method {m}")));
            }
        }
        if self.exp4.budgets.iter().any(|&f| !(f > 0.0 && f <= 1.0)) {
            return bad("exp4 budgets must lie in (0, 1]");
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON rendering.
    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serialises").as_bytes())
    }
}
