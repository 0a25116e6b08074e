use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::oracle::sha256_hex;

/// Version of the CSV headers below, recorded in every manifest.
pub const SCHEMA_VERSION: &str = "1";

pub const EXP1_RUNS: &str = "seed,n,h,method,estimate,truth,abs_error,degree,constant";
pub const EXP1_SUMMARY: &str = "method,h,n,mean_abs_error,ci90_lo,ci90_hi,seeds,slope";
pub const EXP2_POINTS: &str = "seed,m_pert,v_pert,v_recal,v_true";
pub const EXP2_SUMMARY: &str = "seed,pearson_raw,pearson_recal,ce2_raw,ce2_recal,ce2_recal_binned";
pub const EXP3_GAIN: &str = "method,tau,mean,lo,hi";
pub const EXP4_YIELD: &str = "method,budget,yield,seed";
pub const EXP4_SUMMARY: &str = "method,budget,mean,lo,hi";
pub const EXP4_LIFT: &str = "method,win_fraction,auc_mean,auc_lift_mean,auc_lift_lo,auc_lift_hi";

/// Write `header` and `rows` verbatim; values use shortest round-trip formatting.
pub fn write_csv(path: &Path, header: &str, rows: &[String]) -> Result<()> {
    let mut s = String::with_capacity(64 * (rows.len() + 1));
    s.push_str(header);
    s.push('\n');
    for r in rows {
        s.push_str(r);
        s.push('\n');
    }
    fs::write(path, s)?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputFile {
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub experiment: String,
    pub schema_version: String,
    pub code_version: String,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub outputs: Vec<OutputFile>,
}

impl Manifest {
    pub fn new(experiment: &str, config_hash: &str, seeds: Vec<u64>) -> Self {
        Self {
            experiment: experiment.to_string(),
            schema_version: SCHEMA_VERSION.to_string(),
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: config_hash.to_string(),
            seeds,
            outputs: Vec::new(),
        }
    }

    pub fn record(&mut self, dir: &Path, name: &str) -> Result<PathBuf> {
        let p = dir.join(name);
        let bytes = fs::read(&p)?;
        self.outputs.push(OutputFile {
            path: name.to_string(),
            sha256: sha256_hex(&bytes),
        });
        Ok(p)
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let p = dir.join(format!("{}_manifest.json", self.experiment));
        fs::write(&p, serde_json::to_string_pretty(self)?)?;
        Ok(p)
    }
}
