//! Audit-yield comparison on crowd-vote tasks.

use std::fs::File;

use serde::{Deserialize, Serialize};

use super::config::Exp4Config;
use super::stats::{mean, sem_band, trapezoid};
use crate::crowd::{
    attach_gold, audit_yield, build_cohorts, ingest_votes, method_scores, partition, synthetic_votes, xor_scores,
    VoteTable, METHODS,
};
use crate::dgp::{derive_seed, rng};
use crate::error::{Error, Result};

/// Budget at which win fractions are reported.
pub const WIN_BUDGET: f64 = 0.05;
pub const REFERENCE: &str = "second_2d";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct YieldRow {
    pub method: String,
    pub budget: f64,
    pub value: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct YieldSummary {
    pub method: String,
    pub budget: f64,
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lift {
    pub method: String,
    /// Share of repeats where the reference method's yield at `WIN_BUDGET` is strictly higher.
    pub win_fraction: f64,
    pub auc_mean: f64,
    pub auc_lift_mean: f64,
    pub auc_lift_lo: f64,
    pub auc_lift_hi: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Exp4Result {
    pub source: String,
    pub rows: Vec<YieldRow>,
    pub summary: Vec<YieldSummary>,
    pub lifts: Vec<Lift>,
}

impl Exp4Result {
    pub fn mean_yield(&self, method: &str, budget: f64) -> Option<f64> {
        self.summary
            .iter()
            .find(|s| s.method == method && (s.budget - budget).abs() < 1e-12)
            .map(|s| s.mean)
    }

    pub fn lift(&self, method: &str) -> Option<&Lift> {
        self.lifts.iter().find(|l| l.method == method)
    }
}

pub fn load_votes(cfg: &Exp4Config) -> Result<(VoteTable, String)> {
    match &cfg.dataset {
        Some(path) if !cfg.surrogate => {
            let mut vt = ingest_votes(File::open(path)?, &cfg.target_class)?;
            if let Some(g) = &cfg.gold {
                attach_gold(&mut vt, File::open(g)?)?;
            }
            Ok((vt, path.display().to_string()))
        }
        None if !cfg.surrogate => Err(Error::Config(
            "exp4 needs a votes CSV (`dataset`, --dataset PATH) or the synthetic table (`surrogate = true`, --surrogate)".into(),
        )),
        _ => {
            let mut r = rng(cfg.surrogate_seed);
            let vt = synthetic_votes(cfg.surrogate_tasks, cfg.surrogate_votes, &mut r)?;
            Ok((vt, "synthetic".to_string()))
        }
    }
}

pub fn run_exp4(cfg: &Exp4Config) -> Result<Exp4Result> {
    let (vt, source) = load_votes(cfg)?;
    run_exp4_on(cfg, &vt, source)
}

pub fn run_exp4_on(cfg: &Exp4Config, vt: &VoteTable, source: String) -> Result<Exp4Result> {
    let mut budgets = cfg.budgets.clone();
    if !budgets.iter().any(|&b| (b - WIN_BUDGET).abs() < 1e-12) {
        budgets.push(WIN_BUDGET);
    }
    budgets.sort_by(f64::total_cmp);
    // yields[method][repeat][budget]
    let mut yields = vec![Vec::with_capacity(cfg.repeats); METHODS.len()];
    let mut rows = Vec::new();
    for rep in 0..cfg.repeats {
        let seed = derive_seed(cfg.seed, rep as u64);
        let mut r = rng(seed);
        let mut items = build_cohorts(vt, cfg.cohorts, &mut r)?;
        xor_scores(&mut items, cfg.xor, &mut r)?;
        let (_sel, cal, ev) = partition(items.len(), cfg.split, &mut r);
        let cal: Vec<_> = cal.iter().map(|&i| &items[i]).collect();
        let ev: Vec<_> = ev.iter().map(|&i| &items[i]).collect();
        let thetas: Vec<f64> = ev.iter().map(|it| it.theta).collect();
        let keys: Vec<&str> = ev.iter().map(|it| it.task_id.as_str()).collect();
        for (k, (name, scores)) in method_scores(&cal, &ev, cfg.lambda)?.into_iter().enumerate() {
            let ys: Vec<f64> = budgets
                .iter()
                .map(|&f| audit_yield(&scores, &thetas, &keys, f))
                .collect::<Result<_>>()?;
            for (&f, &y) in budgets.iter().zip(&ys) {
                rows.push(YieldRow {
                    method: name.to_string(),
                    budget: f,
                    value: y,
                    seed,
                });
            }
            yields[k].push(ys);
        }
    }
    let mut summary = Vec::new();
    for (k, name) in METHODS.iter().enumerate() {
        for (b, &f) in budgets.iter().enumerate() {
            let col: Vec<f64> = yields[k].iter().map(|r| r[b]).collect();
            let (lo, hi) = sem_band(&col);
            summary.push(YieldSummary {
                method: name.to_string(),
                budget: f,
                mean: mean(&col),
                lo,
                hi,
            });
        }
    }
    let wi = budgets.iter().position(|&b| (b - WIN_BUDGET).abs() < 1e-12).expect("inserted above");
    let refk = METHODS.iter().position(|&m| m == REFERENCE).expect("reference method listed");
    let auc = |k: usize| -> Vec<f64> { yields[k].iter().map(|ys| trapezoid(&budgets, ys)).collect() };
    let ref_auc = auc(refk);
    let lifts = METHODS
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let a = auc(k);
            let lift: Vec<f64> = ref_auc.iter().zip(&a).map(|(r, x)| r - x).collect();
            let wins = yields[refk]
                .iter()
                .zip(&yields[k])
                .filter(|(r, x)| r[wi] > x[wi])
                .count();
            let (lo, hi) = sem_band(&lift);
            Lift {
                method: name.to_string(),
                win_fraction: wins as f64 / cfg.repeats.max(1) as f64,
                auc_mean: mean(&a),
                auc_lift_mean: mean(&lift),
                auc_lift_lo: lo,
                auc_lift_hi: hi,
            }
        })
        .collect();
    Ok(Exp4Result {
        source,
        rows,
        summary,
        lifts,
    })
}

impl YieldRow {
    pub fn csv(&self) -> String {
        format!("{},{},{},{}", self.method, self.budget, self.value, self.seed)
    }
}

impl YieldSummary {
    pub fn csv(&self) -> String {
        format!("{},{},{},{},{}", self.method, self.budget, self.mean, self.lo, self.hi)
    }
}

impl Lift {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.method, self.win_fraction, self.auc_mean, self.auc_lift_mean, self.auc_lift_lo, self.auc_lift_hi
        )
    }
}
