//! Referral decisions driven by the predicted epistemic gain.

use serde::{Deserialize, Serialize};

use super::config::Exp3Config;
use super::stats::sem_band;
use crate::dgp::{derive_seed, gain_curve, referral_gain, sample_exp3, tau_grid};
use crate::error::Result;
use crate::poly::{fit_ridge_targets, BasisSpec, PolyFit, Target};
use crate::score::{project_moments, MomentPair, Score2};

pub const EXP3_METHODS: [&str; 7] = [
    "raw_m",
    "raw_mv",
    "first_1d",
    "first_2d",
    "second_1d",
    "second_2d",
    "oracle",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GainCurve {
    pub method: String,
    pub mean: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Exp3Result {
    pub taus: Vec<f64>,
    pub curves: Vec<GainCurve>,
}

impl Exp3Result {
    pub fn curve(&self, method: &str) -> Option<&GainCurve> {
        self.curves.iter().find(|c| c.method == method)
    }

    pub fn tau_index(&self, tau: f64) -> usize {
        self.taus
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - tau).abs().total_cmp(&(b.1 - tau).abs()))
            .map(|(i, _)| i)
            .unwrap_or(0)
    }

    pub fn csv_rows(&self) -> Vec<String> {
        let mut rows = Vec::new();
        for c in &self.curves {
            for (k, &tau) in self.taus.iter().enumerate() {
                rows.push(format!("{},{},{},{},{}", c.method, tau, c.mean[k], c.lo[k], c.hi[k]));
            }
        }
        rows
    }
}

fn predicted_gain(p: MomentPair, cost: f64) -> Result<f64> {
    let q = project_moments(p)?;
    Ok(2.0 * q.eta2 - 2.0 * q.eta1 + 0.5 - cost)
}

fn pair(fits: &[PolyFit], s: Score2, second: bool) -> MomentPair {
    let e1 = fits[0].predict(s);
    let e2 = if second { fits[1].predict(s) } else { e1 * e1 };
    MomentPair::new(e1, e2)
}

/// Per-method scores for one repeat.
fn repeat_scores(cfg: &Exp3Config, seed: u64) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let (cal, ev) = sample_exp3(&cfg.world, cfg.n_cal, cfg.n_eval, seed)?;
    let c = cfg.world.cost;
    let both = [Target::First, Target::Second];
    let f1 = fit_ridge_targets(BasisSpec::mean_only(cfg.degree_1d), &cal.batch, &both, cfg.ridge_mult)?;
    let f2 = fit_ridge_targets(BasisSpec::square(cfg.degree_2d), &cal.batch, &both, cfg.ridge_mult)?;
    let scores: Vec<Score2> = ev.batch.records.iter().map(|r| r.score).collect();
    let mut out = vec![Vec::with_capacity(scores.len()); EXP3_METHODS.len()];
    for (k, &s) in scores.iter().enumerate() {
        out[0].push(referral_gain(s.m, c));
        out[1].push(predicted_gain(MomentPair::new(s.m, s.m * s.m + s.sigma2), c)?);
        out[2].push(predicted_gain(pair(&f1, s, false), c)?);
        out[3].push(predicted_gain(pair(&f2, s, false), c)?);
        out[4].push(predicted_gain(pair(&f1, s, true), c)?);
        out[5].push(predicted_gain(pair(&f2, s, true), c)?);
        out[6].push(referral_gain(ev.theta[k], c));
    }
    Ok((ev.theta, out))
}

pub fn run_exp3(cfg: &Exp3Config) -> Result<Exp3Result> {
    let taus = tau_grid();
    let mut per_method: Vec<Vec<Vec<f64>>> = vec![Vec::new(); EXP3_METHODS.len()];
    for rep in 0..cfg.repeats {
        let (theta, scores) = repeat_scores(cfg, derive_seed(cfg.seed, rep as u64))?;
        for (acc, s) in per_method.iter_mut().zip(&scores) {
            acc.push(gain_curve(s, &theta, cfg.world.cost, &taus));
        }
    }
    let curves = EXP3_METHODS
        .iter()
        .zip(&per_method)
        .map(|(name, reps)| {
            let mut c = GainCurve {
                method: name.to_string(),
                mean: Vec::new(),
                lo: Vec::new(),
                hi: Vec::new(),
            };
            for k in 0..taus.len() {
                let col: Vec<f64> = reps.iter().map(|r| r[k]).collect();
                let (lo, hi) = sem_band(&col);
                c.mean.push(super::stats::mean(&col));
                c.lo.push(lo);
                c.hi.push(hi);
            }
            c
        })
        .collect();
    Ok(Exp3Result { taus, curves })
}
