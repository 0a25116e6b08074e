//! Synthetic data-generating processes.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal as StatNormal};

use crate::error::{Error, Result};
use crate::qmc::Sobol;
use crate::score::{Score2, Snapshot2, SnapshotBatch, V_MAX};
use crate::sech::SechKernel;

pub const DIM: usize = 4;
pub type Vec4 = [f64; DIM];

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent child seed for a named stream.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ splitmix64(stream.wrapping_add(0xA5A5_A5A5)))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn dot(a: &Vec4, b: &Vec4) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normal4(r: &mut impl Rng, sd: f64) -> Vec4 {
    let mut v = [0.0; DIM];
    for x in v.iter_mut() {
        *x = sd * r.sample::<f64, _>(StandardNormal);
    }
    v
}

fn unit(v: Vec4) -> Vec4 {
    let n = dot(&v, &v).sqrt();
    v.map(|x| x / n)
}

/// Uniform in the open interval (0, 1).
pub fn open01(r: &mut impl Rng) -> f64 {
    loop {
        let u: f64 = r.random();
        if u > 0.0 {
            return u;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Quality {
    Good,
    Undertrained,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Exp1WorldConfig {
    pub components: usize,
    pub center_sd: f64,
    pub weight_var: f64,
    pub quality: Quality,
    /// Good mode: spread of the emulated ensemble around `f*`.
    pub noise_scale: f64,
    pub members: usize,
    pub fourier_features: usize,
    /// Undertrained mode: perturbation of the weight vector.
    pub weight_noise: f64,
    pub fold_alpha: f64,
    pub fold_offset: f64,
    pub var_kappa: f64,
    pub var_scale: f64,
}

impl Default for Exp1WorldConfig {
    fn default() -> Self {
        Self {
            components: 10,
            center_sd: 1.5,
            weight_var: 0.5,
            quality: Quality::Good,
            noise_scale: 0.5,
            members: 5,
            fourier_features: 8,
            weight_noise: 0.3,
            fold_alpha: 1.0,
            fold_offset: 2.0,
            var_kappa: 1.0,
            var_scale: 0.05,
        }
    }
}

impl Exp1WorldConfig {
    pub fn undertrained() -> Self {
        Self {
            quality: Quality::Undertrained,
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Member {
    pub delta: Vec4,
    pub omegas: Vec<Vec4>,
    pub phases: Vec<f64>,
    pub amps: Vec<f64>,
}

impl Member {
    fn wiggle(&self, x: &Vec4) -> f64 {
        let r = self.omegas.len().max(1) as f64;
        let s: f64 = self
            .omegas
            .iter()
            .zip(&self.phases)
            .zip(&self.amps)
            .map(|((o, p), a)| a * (dot(o, x) + p).cos())
            .sum();
        dot(&self.delta, x) + (2.0 / r).sqrt() * s
    }
}

/// Surrogate for a trained predictor, fixed once per world seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Predictor {
    /// Emulated ensemble: member logits `w.x + noise * wiggle_k(x)`.
    Ensemble { members: Vec<Member>, noise: f64 },
    /// Weakly informative: `m` folds the true index, `sigma2` follows an
    /// orthogonal direction unrelated to the true conditional variance.
    Folded {
        w_hat: Vec4,
        v: Vec4,
        alpha: f64,
        offset: f64,
        kappa: f64,
        scale: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Exp1World {
    pub centers: Vec<Vec4>,
    pub w: Vec4,
    pub predictor: Predictor,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Exp1Sample {
    pub batch: SnapshotBatch,
    pub raw: Vec<Score2>,
    pub fstar: Vec<f64>,
}

impl Exp1World {
    pub fn new(cfg: &Exp1WorldConfig, seed: u64) -> Result<Self> {
        if cfg.components == 0 || cfg.members < 2 {
            return Err(Error::Config("need at least one component and two members".into()));
        }
        let mut r = rng(seed);
        let centers = (0..cfg.components).map(|_| normal4(&mut r, cfg.center_sd)).collect();
        let w = normal4(&mut r, cfg.weight_var.sqrt());
        let predictor = match cfg.quality {
            Quality::Good => Predictor::Ensemble {
                members: (0..cfg.members)
                    .map(|_| Member {
                        delta: normal4(&mut r, 0.5),
                        omegas: (0..cfg.fourier_features).map(|_| normal4(&mut r, 0.5)).collect(),
                        phases: (0..cfg.fourier_features).map(|_| 2.0 * PI * r.random::<f64>()).collect(),
                        amps: (0..cfg.fourier_features).map(|_| r.sample(StandardNormal)).collect(),
                    })
                    .collect(),
                noise: cfg.noise_scale,
            },
            Quality::Undertrained => {
                let noise = normal4(&mut r, cfg.weight_noise);
                let w_hat = std::array::from_fn(|i| w[i] + noise[i]);
                let wn = unit(w);
                let mut v = normal4(&mut r, 1.0);
                let proj = dot(&v, &wn);
                for i in 0..DIM {
                    v[i] -= proj * wn[i];
                }
                Predictor::Folded {
                    w_hat,
                    v: unit(v),
                    alpha: cfg.fold_alpha,
                    offset: cfg.fold_offset,
                    kappa: cfg.var_kappa,
                    scale: cfg.var_scale,
                }
            }
        };
        Ok(Self {
            centers,
            w,
            predictor,
            seed,
        })
    }

    pub fn fstar(&self, x: &Vec4) -> f64 {
        logistic(dot(&self.w, x))
    }

    /// Feasible raw score of the surrogate predictor at `x`.
    pub fn predict(&self, x: &Vec4) -> Score2 {
        match &self.predictor {
            Predictor::Ensemble { members, noise } => {
                let base = dot(&self.w, x);
                let ps: Vec<f64> = members
                    .iter()
                    .map(|mb| logistic(base + noise * mb.wiggle(x)))
                    .collect();
                let k = ps.len() as f64;
                // Centred on the first member so identical members give that value exactly.
                let m = ps[0] + ps.iter().map(|p| p - ps[0]).sum::<f64>() / k;
                let var = ps.iter().map(|p| (p - m).powi(2)).sum::<f64>() / (k - 1.0);
                Score2::feasible_clamped(m, var)
            }
            Predictor::Folded {
                w_hat,
                v,
                alpha,
                offset,
                kappa,
                scale,
            } => {
                let m = logistic(alpha * (dot(w_hat, x).abs() - offset));
                let t = logistic(kappa * dot(v, x));
                Score2::feasible_clamped(m, (scale * t).min(V_MAX))
            }
        }
    }

    pub fn draw_x(&self, r: &mut impl Rng) -> Vec4 {
        let c = &self.centers[r.random_range(0..self.centers.len())];
        let z = normal4(r, 1.0);
        std::array::from_fn(|i| c[i] + z[i])
    }

    /// `(raw score, f*)` pairs from a scrambled Sobol sample of the mixture.
    pub fn qmc_points(&self, n: usize, seed: u64) -> Result<Vec<(Score2, f64)>> {
        let sobol = Sobol::scrambled(1 + DIM, seed)?;
        let std = StatNormal::standard();
        let k = self.centers.len();
        let mut u = [0.0; 1 + DIM];
        Ok((0..n as u32)
            .map(|i| {
                sobol.point(i, &mut u);
                let c = &self.centers[((u[0] * k as f64) as usize).min(k - 1)];
                let x: Vec4 = std::array::from_fn(|d| c[d] + std.inverse_cdf(u[1 + d]));
                (self.predict(&x), self.fstar(&x))
            })
            .collect())
    }
}

/// Draw `n` perturbed 2-snapshots; raw scores and `f*` are kept for oracles.
pub fn sample_exp1(world: &Exp1World, n: usize, h: f64, seed: u64) -> Result<Exp1Sample> {
    let km = SechKernel::mean_axis(h)?;
    let kv = SechKernel::variance_axis(h)?;
    let mut r = rng(seed);
    let mut records = Vec::with_capacity(n);
    let mut raw = Vec::with_capacity(n);
    let mut fstar = Vec::with_capacity(n);
    for _ in 0..n {
        let x = world.draw_x(&mut r);
        let p = world.fstar(&x);
        let s = world.predict(&x);
        let pert = Score2 {
            m: km.sample_unchecked(s.m, open01(&mut r)),
            sigma2: kv.sample_unchecked(s.sigma2, open01(&mut r)),
        };
        let y1 = (r.random::<f64>() < p) as u8;
        let y2 = (r.random::<f64>() < p) as u8;
        records.push(Snapshot2::new(pert, y1, y2));
        raw.push(s);
        fstar.push(p);
    }
    Ok(Exp1Sample {
        batch: SnapshotBatch::new(records, seed),
        raw,
        fstar,
    })
}

pub fn ensemble_predictor(world: &Exp1World, x: &Vec4) -> Score2 {
    world.predict(x)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupSpec {
    pub weight: f64,
    pub m: (f64, f64),
    pub sigma2: (f64, f64),
    /// Mixture of `(mean, sd)` components for theta, chosen uniformly.
    pub theta: [(f64, f64); 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Exp3World {
    pub groups: Vec<GroupSpec>,
    pub cost: f64,
    pub borderline: (f64, f64),
}

impl Default for Exp3World {
    fn default() -> Self {
        let single = |mu: f64, sd: f64| [(mu, sd), (mu, sd)];
        Self {
            groups: vec![
                GroupSpec {
                    weight: 0.25,
                    m: (0.08, 0.03),
                    sigma2: (0.005, 0.001),
                    theta: single(0.08, 0.03),
                },
                GroupSpec {
                    weight: 0.25,
                    m: (0.92, 0.03),
                    sigma2: (0.005, 0.001),
                    theta: single(0.92, 0.03),
                },
                GroupSpec {
                    weight: 0.35,
                    m: (0.5, 0.035),
                    sigma2: (0.01, 0.002),
                    theta: single(0.5, 0.04),
                },
                GroupSpec {
                    weight: 0.15,
                    m: (0.5, 0.035),
                    sigma2: (0.06, 0.01),
                    theta: [(0.12, 0.03), (0.88, 0.03)],
                },
            ],
            cost: 0.06,
            borderline: (0.35, 0.65),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Exp3Cohort {
    pub batch: SnapshotBatch,
    pub theta: Vec<f64>,
    pub group: Vec<usize>,
    /// Number of pre-filter draws that produced this cohort.
    pub drawn: usize,
}

impl Exp3World {
    fn draw(&self, n: usize, r: &mut impl Rng) -> Result<Exp3Cohort> {
        let total: f64 = self.groups.iter().map(|g| g.weight).sum();
        let nd = |mu: f64, sd: f64| Normal::new(mu, sd).map_err(|e| Error::Config(e.to_string()));
        let mut records = Vec::new();
        let mut theta = Vec::new();
        let mut group = Vec::new();
        for _ in 0..n {
            let mut u = r.random::<f64>() * total;
            let mut gi = self.groups.len() - 1;
            for (k, g) in self.groups.iter().enumerate() {
                if u < g.weight {
                    gi = k;
                    break;
                }
                u -= g.weight;
            }
            let g = &self.groups[gi];
            let m = nd(g.m.0, g.m.1)?.sample(r).clamp(0.0, 1.0);
            let v = nd(g.sigma2.0, g.sigma2.1)?.sample(r).clamp(0.0, V_MAX);
            let comp = g.theta[r.random_range(0..2)];
            let t = nd(comp.0, comp.1)?.sample(r).clamp(0.0, 1.0);
            let y1 = (r.random::<f64>() < t) as u8;
            let y2 = (r.random::<f64>() < t) as u8;
            if m >= self.borderline.0 && m <= self.borderline.1 {
                records.push(Snapshot2::new(Score2 { m, sigma2: v }, y1, y2));
                theta.push(t);
                group.push(gi);
            }
        }
        Ok(Exp3Cohort {
            batch: SnapshotBatch::new(records, 0),
            theta,
            group,
            drawn: n,
        })
    }
}

/// Calibration and evaluation cohorts, each filtered to the borderline band.
pub fn sample_exp3(
    world: &Exp3World,
    n_cal: usize,
    n_eval: usize,
    seed: u64,
) -> Result<(Exp3Cohort, Exp3Cohort)> {
    let mut r = rng(seed);
    let mut cal = world.draw(n_cal, &mut r)?;
    let mut ev = world.draw(n_eval, &mut r)?;
    cal.batch.seed = seed;
    ev.batch.seed = seed;
    Ok((cal, ev))
}

pub fn referral_gain(theta: f64, cost: f64) -> f64 {
    2.0 * theta * theta - 2.0 * theta + 0.5 - cost
}

/// Realised gain per 100 patients for each threshold: refer when `score >= tau`.
pub fn gain_curve(scores: &[f64], thetas: &[f64], cost: f64, taus: &[f64]) -> Vec<f64> {
    let n = scores.len().max(1) as f64;
    taus.iter()
        .map(|&tau| {
            100.0
                * scores
                    .iter()
                    .zip(thetas)
                    .filter(|(s, _)| **s >= tau)
                    .map(|(_, &t)| referral_gain(t, cost))
                    .sum::<f64>()
                / n
        })
        .collect()
}

pub fn tau_grid() -> Vec<f64> {
    (0..71).map(|i| -0.05 + 0.35 * i as f64 / 70.0).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoPointWorld {
    pub b: u8,
    pub p: f64,
}

pub const P0: f64 = 1.0 / 16.0;

impl TwoPointWorld {
    pub fn new(b: u8, epsilon: f64) -> Self {
        Self {
            b,
            p: if b == 0 { P0 } else { P0 + epsilon },
        }
    }

    pub fn predictor() -> Score2 {
        Score2 { m: 1.0, sigma2: 0.0 }
    }
}

/// Perturbed scores depend only on `(seed, h)`, never on `b`.
pub fn sample_twopoint(world: &TwoPointWorld, n: usize, h: f64, seed: u64) -> Result<SnapshotBatch> {
    let km = SechKernel::mean_axis(h)?;
    let kv = SechKernel::variance_axis(h)?;
    let mut rs = rng(derive_seed(seed, 1));
    let mut ry = rng(derive_seed(seed, 2));
    let s = TwoPointWorld::predictor();
    let records = (0..n)
        .map(|_| {
            let pert = Score2 {
                m: km.sample_unchecked(s.m, open01(&mut rs)),
                sigma2: kv.sample_unchecked(s.sigma2, open01(&mut rs)),
            };
            let y1 = (ry.random::<f64>() < world.p) as u8;
            let y2 = (ry.random::<f64>() < world.p) as u8;
            Snapshot2::new(pert, y1, y2)
        })
        .collect();
    Ok(SnapshotBatch::new(records, seed))
}
