//! Rate experiment: estimated versus oracle perturbed CE2 across n.

use serde::{Deserialize, Serialize};

use super::config::Exp1Config;
use super::stats;
use crate::baselines::{fit_buckets, tune_constant, BaselineKind, NwRegressor};
use crate::dgp::{derive_seed, sample_exp1, Exp1World};
use crate::error::Result;
use crate::estimate::{ce2_plugin_with, PolyPair};
use crate::oracle::{build_world_surface, ce2_pert};
use crate::poly::{schedule, select_model, SelectGrids, SelectMode};
use crate::score::SnapshotBatch;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Exp1Row {
    pub seed: u64,
    pub n: usize,
    pub h: f64,
    pub method: String,
    pub estimate: f64,
    pub truth: f64,
    pub abs_error: f64,
    pub degree: Option<usize>,
    pub constant: Option<f64>,
}

impl Exp1Row {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.seed,
            self.n,
            self.h,
            self.method,
            self.estimate,
            self.truth,
            self.abs_error,
            self.degree.map(|d| d.to_string()).unwrap_or_default(),
            self.constant.map(|c| c.to_string()).unwrap_or_default()
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatePoint {
    pub n: usize,
    pub mean_abs_error: f64,
    pub ci90: (f64, f64),
    pub seeds: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateSummary {
    pub method: String,
    pub h: f64,
    pub points: Vec<RatePoint>,
    pub slope: f64,
}

impl RateSummary {
    pub fn csv_rows(&self) -> Vec<String> {
        self.points
            .iter()
            .map(|p| {
                format!(
                    "{},{},{},{},{},{},{},{}",
                    self.method, self.h, p.n, p.mean_abs_error, p.ci90.0, p.ci90.1, p.seeds, self.slope
                )
            })
            .collect()
    }

    pub fn error_at(&self, n: usize) -> Option<f64> {
        self.points.iter().find(|p| p.n == n).map(|p| p.mean_abs_error)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Exp1Result {
    pub truth: Vec<(f64, f64)>,
    pub rows: Vec<Exp1Row>,
    pub summary: Vec<RateSummary>,
}

impl Exp1Result {
    pub fn summary_for(&self, method: &str, h: f64) -> Option<&RateSummary> {
        self.summary.iter().find(|s| s.method == method && s.h == h)
    }
}

const TRAIN: u64 = 1;
const HYPER: u64 = 2;
const VALID: u64 = 3;

fn split(world: &Exp1World, n: usize, h: f64, seed: u64, tag: u64) -> Result<SnapshotBatch> {
    Ok(sample_exp1(world, n, h, derive_seed(seed, tag))?.batch)
}

pub fn run_exp1(cfg: &Exp1Config) -> Result<Exp1Result> {
    let world = Exp1World::new(&cfg.world, cfg.world_seed)?;
    let n_max = *cfg.n.iter().max().expect("validated non-empty");
    let mut rows = Vec::new();
    let mut truths = Vec::new();
    for &h in &cfg.h {
        let surface = build_world_surface(&world, h, cfg.oracle.n_qmc, cfg.oracle.grid, cfg.oracle.seed)?;
        let truth = ce2_pert(&surface)?;
        truths.push((h, truth));
        for &seed in &cfg.seeds {
            let seed_h = derive_seed(seed, h.to_bits());
            let train_all = split(&world, n_max, h, seed_h, TRAIN)?;
            let hyper_all = split(&world, n_max, h, seed_h, HYPER)?;
            let valid_all = split(&world, n_max, h, seed_h, VALID)?;
            for &n in &cfg.n {
                let train = train_all.prefix(n);
                let hyper = hyper_all.prefix(n);
                let valid = valid_all.prefix(n);
                let mut push = |method: &str, estimate: f64, degree, constant| {
                    rows.push(Exp1Row {
                        seed,
                        n,
                        h,
                        method: method.to_string(),
                        estimate,
                        truth,
                        abs_error: (estimate - truth).abs(),
                        degree,
                        constant,
                    })
                };
                for method in &cfg.methods {
                    match method.as_str() {
                        "poly" | "poly_cv" => {
                            let sched = schedule(h, n, &cfg.caps)?;
                            let grids = SelectGrids {
                                degrees: sched.candidates.clone(),
                                ridge_mults: cfg.ridge_mults.clone(),
                            };
                            let sel = if method == "poly" {
                                select_model(&train, Some(&hyper), SelectMode::Heldout, &grids)?
                            } else {
                                select_model(&train, None, SelectMode::Cv, &grids)?
                            };
                            let pair = PolyPair {
                                fit1: sel.fit1,
                                fit2: sel.fit2,
                            };
                            let rep = ce2_plugin_with(&pair, &valid)?;
                            push(method, rep.ce2, Some(sel.degree), None);
                        }
                        "buckets" => {
                            let c = tune_constant(&train, &hyper, BaselineKind::Buckets, h)?.constant;
                            let g = fit_buckets(&train, h, c)?;
                            push(method, ce2_plugin_with(&g, &valid)?.ce2, None, Some(c));
                        }
                        "nw" => {
                            let c = tune_constant(&train, &hyper, BaselineKind::Nw, h)?.constant;
                            let r = NwRegressor::fit(&train, h, c)?;
                            push(method, ce2_plugin_with(&r, &valid)?.ce2, None, Some(c));
                        }
                        _ => unreachable!("methods are validated"),
                    }
                }
            }
        }
    }
    let summary = summarise(cfg, &rows);
    Ok(Exp1Result {
        truth: truths,
        rows,
        summary,
    })
}

pub fn summarise(cfg: &Exp1Config, rows: &[Exp1Row]) -> Vec<RateSummary> {
    let mut out = Vec::new();
    for &h in &cfg.h {
        for method in &cfg.methods {
            let mut ns = cfg.n.clone();
            ns.sort_unstable();
            let points: Vec<RatePoint> = ns
                .iter()
                .map(|&n| {
                    let errs: Vec<f64> = rows
                        .iter()
                        .filter(|r| r.h == h && r.n == n && &r.method == method)
                        .map(|r| r.abs_error)
                        .collect();
                    RatePoint {
                        n,
                        mean_abs_error: stats::mean(&errs),
                        ci90: stats::t_band(&errs, 0.9),
                        seeds: errs.len(),
                    }
                })
                .collect();
            let xs: Vec<f64> = points.iter().map(|p| p.n as f64).collect();
            let ys: Vec<f64> = points.iter().map(|p| p.mean_abs_error).collect();
            out.push(RateSummary {
                method: method.clone(),
                h,
                slope: stats::loglog_slope(&xs, &ys),
                points,
            });
        }
    }
    out
}
