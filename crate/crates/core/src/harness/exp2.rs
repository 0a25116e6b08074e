//! Recalibration experiment with a weakly informative predictor.

use serde::{Deserialize, Serialize};

use super::config::Exp2Config;
use super::stats::pearson;
use crate::dgp::{derive_seed, sample_exp1, Exp1World};
use crate::error::Result;
use crate::estimate::{ce2_of_recalibrated, pointwise_ce2, Recalibrator};
use crate::oracle::{build_world_surface, conditional_variance_at};
use crate::poly::{fit_ridge_targets, BasisSpec, Target};
use crate::score::Score2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Exp2Seed {
    pub seed: u64,
    pub pearson_raw: f64,
    pub pearson_recal: f64,
    pub ce2_raw: f64,
    pub ce2_recal: f64,
    pub ce2_recal_binned: f64,
}

impl Exp2Seed {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.seed, self.pearson_raw, self.pearson_recal, self.ce2_raw, self.ce2_recal, self.ce2_recal_binned
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Exp2Point {
    pub seed: u64,
    pub m_pert: f64,
    pub v_pert: f64,
    pub v_recal: f64,
    pub v_true: f64,
}

impl Exp2Point {
    pub fn csv(&self) -> String {
        format!("{},{},{},{},{}", self.seed, self.m_pert, self.v_pert, self.v_recal, self.v_true)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Exp2Result {
    pub seeds: Vec<Exp2Seed>,
    pub points: Vec<Exp2Point>,
}

const CAL: u64 = 1;
const EVAL: u64 = 2;

pub fn run_exp2(cfg: &Exp2Config) -> Result<Exp2Result> {
    let world = Exp1World::new(&cfg.world, cfg.world_seed)?;
    let truth = build_world_surface(&world, cfg.h, cfg.oracle.n_qmc, cfg.oracle.grid, cfg.oracle.seed)?;
    let basis = BasisSpec::square(cfg.degree);
    let mut seeds = Vec::new();
    let mut points = Vec::new();
    for &seed in &cfg.seeds {
        let cal = sample_exp1(&world, cfg.n_cal, cfg.h, derive_seed(seed, CAL))?.batch;
        let fits = fit_ridge_targets(basis, &cal, &[Target::First, Target::Second], 0.0)?;
        let mut it = fits.into_iter();
        let r = Recalibrator::from_fits(it.next().expect("two fits"), it.next().expect("two fits"));
        let eval: Vec<Score2> = sample_exp1(&world, cfg.n_eval, cfg.h, derive_seed(seed, EVAL))?
            .batch
            .records
            .iter()
            .map(|rec| rec.score)
            .collect();
        let recal: Vec<Score2> = eval.iter().map(|&s| r.recalibrate(s)).collect::<Result<_>>()?;
        let v_true: Vec<f64> = eval.iter().map(|&s| conditional_variance_at(&truth, s)).collect();
        let v_raw: Vec<f64> = eval.iter().map(|s| s.sigma2).collect();
        let v_rec: Vec<f64> = recal.iter().map(|s| s.sigma2).collect();
        seeds.push(Exp2Seed {
            seed,
            pearson_raw: pearson(&v_raw, &v_true),
            pearson_recal: pearson(&v_rec, &v_true),
            ce2_raw: pointwise_ce2(Ok, &truth, &eval)?,
            ce2_recal: pointwise_ce2(|s| r.recalibrate(s), &truth, &eval)?,
            ce2_recal_binned: ce2_of_recalibrated(&r, &truth, &eval, cfg.bins)?,
        });
        for k in 0..cfg.points_per_seed.min(eval.len()) {
            points.push(Exp2Point {
                seed,
                m_pert: eval[k].m,
                v_pert: v_raw[k],
                v_recal: v_rec[k],
                v_true: v_true[k],
            });
        }
    }
    Ok(Exp2Result { seeds, points })
}
