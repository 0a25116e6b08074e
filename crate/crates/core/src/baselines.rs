//! Nonparametric baselines: 2D bucketing and Nadaraya–Watson regression.
//!
//! Both work on the rescaled square where `sigma2` is multiplied by 4.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::poly::Target;
use crate::score::{Score2, SnapshotBatch};

pub const CONSTANT_GRID: [f64; 6] = [0.25, 0.5, 1.0, 2.0, 4.0, 8.0];
pub const NW_TRUNCATION: f64 = 5.0;

fn rescale(s: Score2) -> (f64, f64) {
    (s.m, 4.0 * s.sigma2)
}

pub fn bucket_count(n: usize, h: f64, c: f64) -> usize {
    let k = (c * (n as f64 / (h * h)).sqrt().sqrt()).ceil();
    k.clamp(2.0, 200.0) as usize
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BucketGrid {
    pub k_per_axis: usize,
    /// Row-major `K x K`, first index along `m`.
    pub cell_means_y1: Vec<f64>,
    pub cell_means_prod: Vec<f64>,
    pub cell_counts: Vec<usize>,
    pub global_y1: f64,
    pub global_prod: f64,
}

impl BucketGrid {
    fn cell(&self, s: Score2) -> usize {
        let k = self.k_per_axis;
        let (u, w) = rescale(s);
        let i = ((u * k as f64) as usize).min(k - 1);
        let j = ((w * k as f64) as usize).min(k - 1);
        i * k + j
    }

    pub fn is_empty_cell(&self, s: Score2) -> bool {
        self.cell_counts[self.cell(s)] == 0
    }
}

pub fn fit_buckets(batch: &SnapshotBatch, h: f64, c: f64) -> Result<BucketGrid> {
    batch.ensure_non_empty()?;
    let k = bucket_count(batch.len(), h, c);
    let mut g = BucketGrid {
        k_per_axis: k,
        cell_means_y1: vec![0.0; k * k],
        cell_means_prod: vec![0.0; k * k],
        cell_counts: vec![0; k * k],
        global_y1: 0.0,
        global_prod: 0.0,
    };
    for r in &batch.records {
        let c = g.cell(r.score);
        g.cell_counts[c] += 1;
        g.cell_means_y1[c] += r.y1 as f64;
        g.cell_means_prod[c] += r.product as f64;
        g.global_y1 += r.y1 as f64;
        g.global_prod += r.product as f64;
    }
    for c in 0..k * k {
        if g.cell_counts[c] > 0 {
            g.cell_means_y1[c] /= g.cell_counts[c] as f64;
            g.cell_means_prod[c] /= g.cell_counts[c] as f64;
        }
    }
    g.global_y1 /= batch.len() as f64;
    g.global_prod /= batch.len() as f64;
    Ok(g)
}

pub fn predict_buckets(g: &BucketGrid, s: Score2, target: Target) -> f64 {
    let c = g.cell(s);
    match (g.cell_counts[c], target) {
        (0, Target::First) => g.global_y1,
        (0, Target::Second) => g.global_prod,
        (_, Target::First) => g.cell_means_y1[c],
        (_, Target::Second) => g.cell_means_prod[c],
    }
}

pub fn nw_bandwidth(n: usize, h: f64, c: f64) -> f64 {
    c * h.sqrt() * (n as f64).powf(-0.25)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NwRegressor {
    pub bandwidth: f64,
    /// `(u, w, y1, product)` sorted by `u`.
    pub points: Vec<(f64, f64, f64, f64)>,
}

impl NwRegressor {
    pub fn new(batch: &SnapshotBatch, bandwidth: f64) -> Result<Self> {
        batch.ensure_non_empty()?;
        let mut points: Vec<_> = batch
            .records
            .iter()
            .map(|r| {
                let (u, w) = rescale(r.score);
                (u, w, r.y1 as f64, r.product as f64)
            })
            .collect();
        points.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        Ok(Self { bandwidth, points })
    }

    pub fn fit(batch: &SnapshotBatch, h: f64, c: f64) -> Result<Self> {
        Self::new(batch, nw_bandwidth(batch.len(), h, c))
    }

    pub fn truncation(&self) -> f64 {
        NW_TRUNCATION * self.bandwidth
    }

    /// Both targets at once: `(eta1_hat, eta2_hat)`.
    pub fn predict_both(&self, s: Score2) -> Result<(f64, f64)> {
        if self.points.is_empty() {
            return Err(Error::Empty("Nadaraya–Watson regressor"));
        }
        let (u, w) = rescale(s);
        let r = self.truncation();
        let r2 = r * r;
        let inv = 1.0 / (2.0 * self.bandwidth * self.bandwidth);
        let start = self.points.partition_point(|p| p.0 < u - r);
        let (mut sw, mut s1, mut s2) = (0.0, 0.0, 0.0);
        for p in &self.points[start..] {
            if p.0 > u + r {
                break;
            }
            let d2 = (p.0 - u).powi(2) + (p.1 - w).powi(2);
            if d2 <= r2 {
                let k = (-d2 * inv).exp();
                sw += k;
                s1 += k * p.2;
                s2 += k * p.3;
            }
        }
        if sw > 0.0 {
            return Ok((s1 / sw, s2 / sw));
        }
        let nearest = self
            .points
            .iter()
            .min_by(|a, b| {
                let da = (a.0 - u).powi(2) + (a.1 - w).powi(2);
                let db = (b.0 - u).powi(2) + (b.1 - w).powi(2);
                da.total_cmp(&db)
            })
            .expect("non-empty");
        Ok((nearest.2, nearest.3))
    }
}

pub fn predict_nw(r: &NwRegressor, s: Score2, target: Target) -> Result<f64> {
    let (a, b) = r.predict_both(s)?;
    Ok(match target {
        Target::First => a,
        Target::Second => b,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineKind {
    Buckets,
    Nw,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tuned {
    pub constant: f64,
    /// `(constant, summed held-out loss)` for every evaluated candidate.
    pub losses: Vec<(f64, f64)>,
    pub extended: bool,
}

fn heldout_loss(
    train: &SnapshotBatch,
    hyper: &SnapshotBatch,
    kind: BaselineKind,
    h: f64,
    c: f64,
) -> Result<f64> {
    let mut loss = 0.0;
    match kind {
        BaselineKind::Buckets => {
            let g = fit_buckets(train, h, c)?;
            for r in &hyper.records {
                loss += (predict_buckets(&g, r.score, Target::First) - r.y1 as f64).powi(2);
                loss += (predict_buckets(&g, r.score, Target::Second) - r.product as f64).powi(2);
            }
        }
        BaselineKind::Nw => {
            let nw = NwRegressor::fit(train, h, c)?;
            for r in &hyper.records {
                let (a, b) = nw.predict_both(r.score)?;
                loss += (a - r.y1 as f64).powi(2) + (b - r.product as f64).powi(2);
            }
        }
    }
    Ok(loss / hyper.len() as f64)
}

/// One constant shared by both regressions, chosen on the held-out batch.
pub fn tune_constant(
    train: &SnapshotBatch,
    hyper: &SnapshotBatch,
    kind: BaselineKind,
    h: f64,
) -> Result<Tuned> {
    train.ensure_non_empty()?;
    hyper.ensure_non_empty()?;
    let mut losses = Vec::new();
    for &c in &CONSTANT_GRID {
        losses.push((c, heldout_loss(train, hyper, kind, h, c)?));
    }
    let argmin = |ls: &[(f64, f64)]| {
        let mut best = 0;
        for (i, l) in ls.iter().enumerate() {
            if l.1 < ls[best].1 || (l.1 == ls[best].1 && l.0 < ls[best].0) {
                best = i;
            }
        }
        best
    };
    let mut extended = false;
    if kind == BaselineKind::Buckets {
        let b = argmin(&losses);
        let extra = if b == 0 {
            Some(CONSTANT_GRID[0] / 2.0)
        } else if b == CONSTANT_GRID.len() - 1 {
            Some(CONSTANT_GRID[CONSTANT_GRID.len() - 1] * 2.0)
        } else {
            None
        };
        if let Some(c) = extra {
            losses.push((c, heldout_loss(train, hyper, kind, h, c)?));
            extended = true;
        }
    }
    let best = argmin(&losses);
    Ok(Tuned {
        constant: losses[best].0,
        losses,
        extended,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::score::Snapshot2;

    fn rec(m: f64, v: f64, y1: u8, y2: u8) -> Snapshot2 {
        Snapshot2::new(Score2::new(m, v).unwrap(), y1, y2)
    }

    #[test]
    fn bucket_count_examples() {
        assert_eq!(bucket_count(1, 1.0 / 16.0, 1.0), 4);
        assert_eq!(bucket_count(1, 1.0 / 16.0, 0.25), 2);
        assert_eq!(bucket_count(10_000, 1.0 / 16.0, 1.0), 40);
        assert_eq!(bucket_count(1, 1.0, 0.25), 2);
        assert_eq!(bucket_count(1_000_000_000, 1.0 / 64.0, 8.0), 200);
    }

    #[test]
    fn single_record_grid() {
        let b = SnapshotBatch::new(vec![rec(0.3, 0.1, 1, 1)], 0);
        let g = fit_buckets(&b, 1.0, 0.25).unwrap();
        assert_eq!(g.k_per_axis, 2);
        assert_eq!(g.cell_counts.iter().sum::<usize>(), 1);
        assert_eq!(predict_buckets(&g, Score2::new(0.9, 0.2).unwrap(), Target::First), 1.0);
    }

    #[test]
    fn two_record_cell_mean() {
        let b = SnapshotBatch::new(vec![rec(0.1, 0.01, 0, 0), rec(0.11, 0.011, 1, 0)], 0);
        let g = fit_buckets(&b, 1.0, 0.25).unwrap();
        assert_eq!(predict_buckets(&g, Score2::new(0.12, 0.0).unwrap(), Target::First), 0.5);
    }

    #[test]
    fn nw_single_and_symmetric() {
        let b = SnapshotBatch::new(vec![rec(0.4, 0.1, 1, 0)], 0);
        let nw = NwRegressor::new(&b, 0.01).unwrap();
        assert_eq!(predict_nw(&nw, Score2::new(0.9, 0.0).unwrap(), Target::First).unwrap(), 1.0);
        let b = SnapshotBatch::new(vec![rec(0.4, 0.1, 1, 1), rec(0.6, 0.1, 0, 0)], 0);
        let nw = NwRegressor::new(&b, 0.1).unwrap();
        let p = predict_nw(&nw, Score2::new(0.5, 0.1).unwrap(), Target::Second).unwrap();
        assert!((p - 0.5).abs() < 1e-12);
    }

    #[test]
    fn empty_regressor_errors() {
        let nw = NwRegressor {
            bandwidth: 0.1,
            points: vec![],
        };
        assert!(nw.predict_both(Score2::new(0.5, 0.1).unwrap()).is_err());
    }
}
