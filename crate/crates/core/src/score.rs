//! Scores, moment pairs and 2-snapshot records.

use serde::{Deserialize, Serialize};

use crate::error::{check_range, Error, Result};

pub const M_MAX: f64 = 1.0;
pub const V_MAX: f64 = 0.25;
pub const FEASIBILITY_TOL: f64 = 1e-12;

/// A point `(m, sigma2)` of the rectangle `[0,1] x [0,1/4]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Score2 {
    pub m: f64,
    pub sigma2: f64,
}

impl Score2 {
    pub fn new(m: f64, sigma2: f64) -> Result<Self> {
        check_range("m", m, 0.0, M_MAX)?;
        check_range("sigma2", sigma2, 0.0, V_MAX)?;
        Ok(Self { m, sigma2 })
    }

    /// Clamp both coordinates into the rectangle.
    pub fn clamped(m: f64, sigma2: f64) -> Self {
        Self {
            m: m.clamp(0.0, M_MAX),
            sigma2: sigma2.clamp(0.0, V_MAX),
        }
    }

    /// Clamp into the rectangle and then cap `sigma2` at `m(1-m)`.
    pub fn feasible_clamped(m: f64, sigma2: f64) -> Self {
        let m = m.clamp(0.0, M_MAX);
        Self {
            m,
            sigma2: sigma2.clamp(0.0, m * (1.0 - m)),
        }
    }

    pub fn is_feasible(&self) -> bool {
        is_feasible(*self)
    }
}

pub fn is_feasible(s: Score2) -> bool {
    s.sigma2 <= s.m * (1.0 - s.m) + FEASIBILITY_TOL
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentPair {
    pub eta1: f64,
    pub eta2: f64,
}

impl MomentPair {
    pub fn new(eta1: f64, eta2: f64) -> Self {
        Self { eta1, eta2 }
    }

    pub fn is_admissible(&self) -> bool {
        (0.0..=1.0).contains(&self.eta1)
            && self.eta2 >= self.eta1 * self.eta1
            && self.eta2 <= self.eta1
    }
}

/// Clip `eta1` to `[0,1]`, then `eta2` to `[eta1^2, eta1]`.
pub fn project_moments(p: MomentPair) -> Result<MomentPair> {
    if !p.eta1.is_finite() || !p.eta2.is_finite() {
        return Err(Error::NonFinite(p.eta1, p.eta2));
    }
    let eta1 = p.eta1.clamp(0.0, 1.0);
    let eta2 = p.eta2.clamp(eta1 * eta1, eta1);
    Ok(MomentPair { eta1, eta2 })
}

pub fn epistemic_variance(p: MomentPair) -> f64 {
    (p.eta2 - p.eta1 * p.eta1).clamp(0.0, V_MAX)
}

/// Perturbed score plus two conditionally iid binary labels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snapshot2 {
    pub score: Score2,
    pub y1: u8,
    pub y2: u8,
    pub product: u8,
}

impl Snapshot2 {
    pub fn new(score: Score2, y1: u8, y2: u8) -> Self {
        debug_assert!(y1 <= 1 && y2 <= 1);
        Self {
            score,
            y1,
            y2,
            product: y1 * y2,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SnapshotBatch {
    pub records: Vec<Snapshot2>,
    pub seed: u64,
}

impl SnapshotBatch {
    pub fn new(records: Vec<Snapshot2>, seed: u64) -> Self {
        Self { records, seed }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// The first `n` records, keeping the seed. Used for coupled n-curves.
    pub fn prefix(&self, n: usize) -> SnapshotBatch {
        SnapshotBatch {
            records: self.records[..n.min(self.records.len())].to_vec(),
            seed: self.seed,
        }
    }

    pub fn ensure_non_empty(&self) -> Result<()> {
        if self.records.is_empty() {
            Err(Error::Empty("snapshot batch"))
        } else {
            Ok(())
        }
    }
}
