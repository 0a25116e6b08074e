//! Plug-in calibration-error estimators and second-order Platt scaling.

use serde::{Deserialize, Serialize};

use crate::baselines::{BucketGrid, NwRegressor};
use crate::error::{Error, Result};
use crate::poly::{PolyFit, Target};
use crate::score::{project_moments, MomentPair, Score2, SnapshotBatch, V_MAX};

/// Anything that yields estimates of `(eta1, eta2)` at a score.
pub trait MomentModel {
    fn moments(&self, s: Score2) -> (f64, f64);
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolyPair {
    pub fit1: PolyFit,
    pub fit2: PolyFit,
}

impl MomentModel for PolyPair {
    fn moments(&self, s: Score2) -> (f64, f64) {
        (self.fit1.predict(s), self.fit2.predict(s))
    }
}

impl MomentModel for BucketGrid {
    fn moments(&self, s: Score2) -> (f64, f64) {
        (
            crate::baselines::predict_buckets(self, s, Target::First),
            crate::baselines::predict_buckets(self, s, Target::Second),
        )
    }
}

impl MomentModel for NwRegressor {
    fn moments(&self, s: Score2) -> (f64, f64) {
        self.predict_both(s)
            .expect("regressor built from a non-empty batch")
    }
}

impl<M: MomentModel + ?Sized> MomentModel for &M {
    fn moments(&self, s: Score2) -> (f64, f64) {
        (**self).moments(s)
    }
}

/// Neumaier-compensated running sum.
#[derive(Clone, Copy, Debug, Default)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CeReport {
    pub n: usize,
    pub h: Option<f64>,
    pub degree: Option<usize>,
    pub term_first: f64,
    pub term_second: f64,
    pub ce2: f64,
    pub seed: u64,
}

impl CeReport {
    pub const CSV_HEADER: &'static str = "n,h,degree,term_first,term_second,ce2,seed";

    pub fn csv_row(&self) -> String {
        let opt = |v: Option<String>| v.unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{}",
            self.n,
            opt(self.h.map(|h| h.to_string())),
            opt(self.degree.map(|d| d.to_string())),
            self.term_first,
            self.term_second,
            self.ce2,
            self.seed
        )
    }
}

/// Empirical plug-in estimate over `eval` for any moment model.
pub fn ce2_plugin_with<M: MomentModel>(model: &M, eval: &SnapshotBatch) -> Result<CeReport> {
    eval.ensure_non_empty()?;
    let mut t1 = KahanSum::default();
    let mut t2 = KahanSum::default();
    for r in &eval.records {
        let (e1, e2) = model.moments(r.score);
        let m = r.score.m;
        t1.add((e1 - m).abs());
        t2.add((e2 - (m * m + r.score.sigma2)).abs());
    }
    let n = eval.len() as f64;
    let (a, b) = (t1.value() / n, t2.value() / n);
    Ok(CeReport {
        n: eval.len(),
        h: None,
        degree: None,
        term_first: a,
        term_second: b,
        ce2: a + b,
        seed: eval.seed,
    })
}

pub fn ce2_plugin(fit1: &PolyFit, fit2: &PolyFit, eval: &SnapshotBatch) -> Result<CeReport> {
    let pair = PolyPair {
        fit1: fit1.clone(),
        fit2: fit2.clone(),
    };
    let mut rep = ce2_plugin_with(&pair, eval)?;
    rep.degree = Some(fit1.basis.degree_m);
    Ok(rep)
}

/// First-order plug-in: mean `|eta_hat(m) - m|` for a mean-only fit.
pub fn ce1_plugin(fit1d: &PolyFit, eval: &[(f64, u8)]) -> Result<f64> {
    if eval.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let mut acc = KahanSum::default();
    for &(m, _) in eval {
        acc.add((fit1d.predict(Score2 { m, sigma2: 0.0 }) - m).abs());
    }
    Ok(acc.value() / eval.len() as f64)
}

/// Second-order Platt map `s -> (eta1_hat, max(0, eta2_hat - eta1_hat^2))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Recalibrator<M> {
    pub model: M,
}

impl Recalibrator<PolyPair> {
    pub fn from_fits(fit1: PolyFit, fit2: PolyFit) -> Self {
        Self {
            model: PolyPair { fit1, fit2 },
        }
    }
}

impl<M: MomentModel> Recalibrator<M> {
    pub fn new(model: M) -> Self {
        Self { model }
    }

    pub fn recalibrate(&self, s: Score2) -> Result<Score2> {
        let (e1, e2) = self.model.moments(s);
        let p = project_moments(MomentPair::new(e1, e2))?;
        Ok(Score2 {
            m: p.eta1,
            sigma2: (p.eta2 - p.eta1 * p.eta1).clamp(0.0, V_MAX),
        })
    }
}

pub fn recalibrate<M: MomentModel>(r: &Recalibrator<M>, s: Score2) -> Result<Score2> {
    r.recalibrate(s)
}

/// Pointwise second-order error of a predictor against true moments at the
/// same perturbed scores: mean of `|eta1 - m'| + |eta2 - m'^2 - v'|`.
pub fn pointwise_ce2<T: MomentModel>(
    predict: impl Fn(Score2) -> Result<Score2>,
    truth: &T,
    eval: &[Score2],
) -> Result<f64> {
    if eval.is_empty() {
        return Err(Error::Empty("evaluation scores"));
    }
    let mut acc = KahanSum::default();
    for &s in eval {
        let p = predict(s)?;
        let (e1, e2) = truth.moments(s);
        acc.add((e1 - p.m).abs() + (e2 - p.m * p.m - p.sigma2).abs());
    }
    Ok(acc.value() / eval.len() as f64)
}

/// Groups `idx` into quantile bins of `key`; equal keys share a bin.
fn quantile_groups(idx: &mut [usize], key: impl Fn(usize) -> f64, bins: usize) -> Vec<Vec<usize>> {
    idx.sort_by(|&a, &b| key(a).total_cmp(&key(b)));
    let n = idx.len();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut start = 0;
    for k in 1..=bins {
        let mut end = (k * n) / bins;
        if end <= start {
            continue;
        }
        while end < n && key(idx[end]) == key(idx[end - 1]) {
            end += 1;
        }
        groups.push(idx[start..end].to_vec());
        start = end;
        if start >= n {
            break;
        }
    }
    if start < n {
        groups.push(idx[start..].to_vec());
    }
    groups
}

/// Second-order error of the recalibrated predictor, conditioning on its
/// level sets through nested quantile bins (first on `m'`, then `v'`).
pub fn ce2_of_recalibrated<M: MomentModel, T: MomentModel>(
    r: &Recalibrator<M>,
    truth: &T,
    eval: &[Score2],
    bins: usize,
) -> Result<f64> {
    if eval.is_empty() {
        return Err(Error::Empty("evaluation scores"));
    }
    if bins == 0 {
        return Err(Error::Empty("bin count"));
    }
    let mapped: Vec<Score2> = eval.iter().map(|&s| r.recalibrate(s)).collect::<Result<_>>()?;
    let true_m: Vec<(f64, f64)> = eval.iter().map(|&s| truth.moments(s)).collect();
    let mut idx: Vec<usize> = (0..eval.len()).collect();
    let mut acc = KahanSum::default();
    for mut g in quantile_groups(&mut idx, |i| mapped[i].m, bins) {
        for cell in quantile_groups(&mut g, |i| mapped[i].sigma2, bins) {
            let k = cell.len() as f64;
            let e1 = cell.iter().map(|&i| true_m[i].0).sum::<f64>() / k;
            let e2 = cell.iter().map(|&i| true_m[i].1).sum::<f64>() / k;
            for &i in &cell {
                let p = mapped[i];
                acc.add((e1 - p.m).abs() + (e2 - p.m * p.m - p.sigma2).abs());
            }
        }
    }
    Ok(acc.value() / eval.len() as f64)
}
