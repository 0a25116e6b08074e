//! Numerical property suites over the core modules.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::PropertiesConfig;
use super::stats::{ks_critical_one, ks_statistic, slope};
use crate::baselines::{fit_buckets, predict_buckets, NwRegressor, NW_TRUNCATION};
use crate::dgp::{derive_seed, rng, sample_exp1, Exp1World, Exp1WorldConfig};
use crate::error::Result;
use crate::estimate::{ce2_plugin_with, MomentModel};
use crate::oracle::{build_world_surface, lower_bound_gap, TruthSurface};
use crate::poly::{chebyshev_eval_1d, chebyshev_lsq_1d, Target};
use crate::score::{project_moments, MomentPair, Score2, SnapshotBatch, M_MAX, V_MAX};
use crate::sech::SechKernel;
use crate::wasserstein::{sandwich_check, snapshot_dist_from_moments, transport_lp, w1_threeatom};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropertyCheck {
    pub name: String,
    pub passed: bool,
    /// Worst observed value of the checked quantity.
    pub worst: f64,
    pub tolerance: f64,
    pub cases: usize,
}

impl PropertyCheck {
    fn new(name: &str, worst: f64, tolerance: f64, cases: usize) -> Self {
        Self {
            name: name.to_string(),
            passed: worst <= tolerance,
            worst,
            tolerance,
            cases,
        }
    }
}

const HS: [f64; 3] = [1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0];

fn random_kernel(r: &mut impl Rng) -> Result<SechKernel> {
    let h = HS[r.random_range(0..HS.len())];
    if r.random::<bool>() {
        SechKernel::mean_axis(h)
    } else {
        SechKernel::variance_axis(h)
    }
}

pub fn sampler_roundtrip(draws: usize, seed: u64) -> Result<PropertyCheck> {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..draws {
        let k = random_kernel(&mut r)?;
        let s = k.lo + (k.hi - k.lo) * r.random::<f64>();
        let u = r.random::<f64>();
        let t = k.sample(s, u)?;
        worst = worst.max((k.cdf(s, t)? - u).abs());
    }
    Ok(PropertyCheck::new("sampler_cdf_roundtrip", worst, 1e-9, draws))
}

/// KS statistic of the sampler against its own CDF, scaled by the 0.01 critical value.
pub fn sampler_ks(draws: usize, seed: u64) -> Result<PropertyCheck> {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    let mut cases = 0;
    for h in HS {
        for (k, s) in [
            (SechKernel::mean_axis(h)?, 0.5),
            (SechKernel::mean_axis(h)?, 0.98),
            (SechKernel::variance_axis(h)?, 0.01),
            (SechKernel::variance_axis(h)?, 0.2),
        ] {
            let xs: Vec<f64> = (0..draws)
                .map(|_| k.sample(s, r.random::<f64>()))
                .collect::<Result<_>>()?;
            let d = ks_statistic(&xs, |t| k.cdf(s, t).expect("in range"));
            worst = worst.max(d / ks_critical_one(draws));
            cases += 1;
        }
    }
    Ok(PropertyCheck::new("sampler_ks_0.01", worst, 1.0, cases))
}

pub fn projection_idempotence(draws: usize, seed: u64) -> Result<PropertyCheck> {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..draws {
        let p = MomentPair::new(r.random_range(-0.5..1.5), r.random_range(-0.5..1.5));
        let a = project_moments(p)?;
        let b = project_moments(a)?;
        let bad = if a.is_admissible() { 0.0 } else { 1.0 };
        worst = worst.max((a.eta1 - b.eta1).abs() + (a.eta2 - b.eta2).abs() + bad);
    }
    Ok(PropertyCheck::new("projection_idempotence", worst, 0.0, draws))
}

/// Largest violation of `eta1^2 <= eta2 <= eta1` over valid nodes.
pub fn surface_admissibility(ts: &TruthSurface) -> PropertyCheck {
    let mut worst = 0.0f64;
    let mut cases = 0;
    for k in 0..ts.eta1.len() {
        if !ts.valid[k] {
            continue;
        }
        let (a, b) = (ts.eta1[k], ts.eta2[k]);
        let v = (a * a - b).max(b - a).max(-a).max(a - 1.0).max(0.0);
        worst = worst.max(v);
        cases += 1;
    }
    PropertyCheck::new("oracle_admissibility", worst, 1e-12, cases)
}

/// `eta1 (1 - eta1) = aleatoric + (eta2 - eta1^2)` at random valid nodes.
pub fn decomposition_identity(ts: &TruthSurface, points: usize, seed: u64) -> PropertyCheck {
    let mut r = rng(seed);
    let valid: Vec<usize> = (0..ts.valid.len()).filter(|&k| ts.valid[k]).collect();
    let mut worst = 0.0f64;
    for _ in 0..points {
        let k = valid[r.random_range(0..valid.len())];
        let (a, b) = (ts.eta1[k], ts.eta2[k]);
        worst = worst.max((a * (1.0 - a) - ts.aleatoric[k] - (b - a * a)).abs());
    }
    PropertyCheck::new("variance_decomposition", worst, 1e-6, points)
}

pub fn sandwich_suite(draws: usize, lp_every: usize, seed: u64) -> Result<(PropertyCheck, PropertyCheck)> {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    let mut lp_worst = 0.0f64;
    let mut lp_cases = 0;
    let admissible = |r: &mut rand_chacha::ChaCha8Rng| {
        let mu1: f64 = r.random();
        let mu2 = mu1 * mu1 + (mu1 - mu1 * mu1) * r.random::<f64>();
        (mu1, mu2)
    };
    for k in 0..draws {
        let (mu1, mu2) = admissible(&mut r);
        let (m, q2) = admissible(&mut r);
        let s = sandwich_check(mu1, mu2, m, q2)?;
        let d = s.delta1 + s.delta2;
        let viol = (d - 1.5 * s.w1).max(1.5 * s.w1 - 3.0 * d).max(0.0);
        let flag = if s.lower_ok && s.upper_ok { 0.0 } else { 1.0 };
        worst = worst.max(viol + flag);
        if lp_every > 0 && k % lp_every == 0 {
            let p = snapshot_dist_from_moments(mu1, mu2)?;
            let q = snapshot_dist_from_moments(m, q2)?;
            lp_worst = lp_worst.max((transport_lp(&p, &q) - w1_threeatom(&p, &q)).abs());
            lp_cases += 1;
        }
    }
    Ok((
        PropertyCheck::new("sandwich_inequality", worst, 1e-12, draws),
        PropertyCheck::new("sandwich_lp_crosscheck", lp_worst, 1e-9, lp_cases),
    ))
}

/// Relative gap between the plug-in estimate and a plain loop over the batch.
pub fn ce_hand_sum<M: MomentModel>(model: &M, eval: &SnapshotBatch) -> Result<PropertyCheck> {
    let rep = ce2_plugin_with(model, eval)?;
    let mut total = 0.0;
    for r in &eval.records {
        let (e1, e2) = model.moments(r.score);
        let (m, v) = (r.score.m, r.score.sigma2);
        total += (e1 - m).abs() + (e2 - m * m - v).abs();
    }
    let naive = total / eval.len() as f64;
    let worst = (rep.ce2 - naive).abs() / naive.abs().max(1e-300);
    Ok(PropertyCheck::new("ce_hand_sum", worst, 1e-12, eval.len()))
}

fn naive_bucket(train: &SnapshotBatch, k: usize, s: Score2) -> (f64, f64) {
    let cell = |x: Score2| {
        let i = ((x.m / M_MAX * k as f64).floor() as usize).min(k - 1);
        let j = ((x.sigma2 / V_MAX * k as f64).floor() as usize).min(k - 1);
        (i, j)
    };
    let target = cell(s);
    let (mut n, mut a, mut b) = (0.0, 0.0, 0.0);
    for r in &train.records {
        if cell(r.score) == target {
            n += 1.0;
            a += r.y1 as f64;
            b += r.product as f64;
        }
    }
    if n > 0.0 {
        return (a / n, b / n);
    }
    let nn = train.len() as f64;
    (
        train.records.iter().map(|r| r.y1 as f64).sum::<f64>() / nn,
        train.records.iter().map(|r| r.product as f64).sum::<f64>() / nn,
    )
}

fn naive_nw(train: &SnapshotBatch, bw: f64, s: Score2) -> (f64, f64) {
    let pos = |x: Score2| (x.m / M_MAX, x.sigma2 / V_MAX);
    let (u, w) = pos(s);
    let radius = NW_TRUNCATION * bw;
    let (mut sw, mut a, mut b) = (0.0, 0.0, 0.0);
    let mut nearest = (f64::INFINITY, 0.0, 0.0);
    for r in &train.records {
        let (pu, pw) = pos(r.score);
        let d2 = (pu - u).powi(2) + (pw - w).powi(2);
        if d2 < nearest.0 {
            nearest = (d2, r.y1 as f64, r.product as f64);
        }
        if d2.sqrt() <= radius {
            let kk = (-d2 / (2.0 * bw * bw)).exp();
            sw += kk;
            a += kk * r.y1 as f64;
            b += kk * r.product as f64;
        }
    }
    if sw > 0.0 {
        (a / sw, b / sw)
    } else {
        (nearest.1, nearest.2)
    }
}

/// Buckets and Nadaraya-Watson predictions against brute-force recomputation.
pub fn baseline_naive(train: &SnapshotBatch, eval: &[Score2], h: f64) -> Result<PropertyCheck> {
    let mut worst = 0.0f64;
    for c in [0.5, 2.0] {
        let g = fit_buckets(train, h, c)?;
        let nw = NwRegressor::fit(train, h, c)?;
        for &s in eval {
            let (a, b) = naive_bucket(train, g.k_per_axis, s);
            worst = worst
                .max((predict_buckets(&g, s, Target::First) - a).abs())
                .max((predict_buckets(&g, s, Target::Second) - b).abs());
            let (a, b) = naive_nw(train, nw.bandwidth, s);
            let (x, y) = nw.predict_both(s)?;
            worst = worst.max((x - a).abs()).max((y - b).abs());
        }
    }
    Ok(PropertyCheck::new("baseline_naive_equivalence", worst, 1e-12, 2 * eval.len()))
}

/// Shortfall `eps/2 - 3 se - gap` of the two-point gap, worst over `h`;
/// non-positive when the bound holds.
pub fn lower_bound_suite(draws: usize, seed: u64) -> Result<PropertyCheck> {
    let eps = 1.0 / 16.0;
    let mut worst = f64::NEG_INFINITY;
    for h in [1.0 / 16.0, 1.0 / 64.0] {
        let (gap, se) = lower_bound_gap(h, eps, draws, seed)?;
        worst = worst.max(eps / 2.0 - 3.0 * se - gap);
    }
    Ok(PropertyCheck::new("lower_bound_gap", worst, 0.0, 2))
}

/// Sup-errors on a uniform grid of least-squares Chebyshev fits to the
/// normalised kernel `t -> k_h(t | s)` on `[0, 1]`, one per degree.
pub fn kernel_fit_errors(h: f64, s: f64, degrees: &[usize], grid_points: usize) -> Result<Vec<f64>> {
    let k = SechKernel::mean_axis(h)?;
    let ts: Vec<f64> = (0..grid_points).map(|i| i as f64 / (grid_points - 1) as f64).collect();
    let xs: Vec<f64> = ts.iter().map(|t| 2.0 * t - 1.0).collect();
    let fs: Vec<f64> = ts.iter().map(|&t| k.density(s, t)).collect::<Result<_>>()?;
    degrees
        .iter()
        .map(|&l| {
            let c = chebyshev_lsq_1d(&xs, &fs, l)?;
            Ok(xs
                .iter()
                .zip(&fs)
                .map(|(&x, f)| (chebyshev_eval_1d(&c, x) - f).abs())
                .fold(0.0, f64::max))
        })
        .collect()
}

/// Least-squares slope of `ln(sup-error)` against degree.
pub fn bernstein_slope(h: f64, s: f64, degrees: &[usize]) -> Result<f64> {
    let errs = kernel_fit_errors(h, s, degrees, 4001)?;
    let ls: Vec<f64> = degrees.iter().map(|&l| l as f64).collect();
    let logs: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
    Ok(slope(&ls, &logs))
}

/// Every suite at the configured scale.
pub fn run_properties(cfg: &PropertiesConfig) -> Result<Vec<PropertyCheck>> {
    let s = |k| derive_seed(cfg.seed, k);
    let mut out = vec![
        sampler_roundtrip(cfg.roundtrip_draws, s(1))?,
        sampler_ks(cfg.ks_draws, s(2))?,
        projection_idempotence(cfg.roundtrip_draws, s(3))?,
    ];
    let world = Exp1World::new(&Exp1WorldConfig::default(), 1)?;
    for h in [1.0 / 16.0, 1.0 / 64.0] {
        let ts = build_world_surface(&world, h, cfg.oracle.n_qmc, cfg.oracle.grid, cfg.oracle.seed)?;
        let tag = format!("_h1/{}", (1.0 / h).round());
        for mut c in [surface_admissibility(&ts), decomposition_identity(&ts, 100, s(4))] {
            c.name.push_str(&tag);
            out.push(c);
        }
    }
    let (a, b) = sandwich_suite(cfg.sandwich_draws, cfg.lp_every, s(5))?;
    out.push(a);
    out.push(b);
    let h = 1.0 / 16.0;
    let train = sample_exp1(&world, 2_000, h, s(6))?.batch;
    let eval = sample_exp1(&world, 500, h, s(7))?.batch;
    let ts = build_world_surface(&world, h, 1 << 12, cfg.oracle.grid, cfg.oracle.seed)?;
    out.push(ce_hand_sum(&ts, &eval)?);
    let scores: Vec<Score2> = eval.records.iter().map(|r| r.score).collect();
    out.push(baseline_naive(&train, &scores, h)?);
    out.push(lower_bound_suite(cfg.gap_draws, s(8))?);
    Ok(out)
}
