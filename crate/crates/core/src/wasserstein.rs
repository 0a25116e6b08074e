//! Reconciliation of the moment-based error with a Wasserstein distance on
//! the symmetrised 2-snapshot space `{0, 1/2, 1}`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const TOL: f64 = 1e-12;

/// Ground metric on `{0, 1/2, 1}`: neighbours at distance 1, ends at 2.
pub const GROUND: [[f64; 3]; 3] = [[0.0, 1.0, 2.0], [1.0, 0.0, 1.0], [2.0, 1.0, 0.0]];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnapshotDist3 {
    pub q0: f64,
    pub qhalf: f64,
    pub q1: f64,
}

impl SnapshotDist3 {
    pub fn new(q0: f64, qhalf: f64, q1: f64) -> Result<Self> {
        let ok = [q0, qhalf, q1].iter().all(|&q| q >= -TOL && q.is_finite());
        if !ok || ((q0 + qhalf + q1) - 1.0).abs() > TOL {
            return Err(Error::Domain {
                what: "snapshot distribution total",
                value: q0 + qhalf + q1,
                lo: 1.0,
                hi: 1.0,
            });
        }
        Ok(Self { q0, qhalf, q1 })
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.q0, self.qhalf, self.q1]
    }
}

pub fn snapshot_dist_from_moments(mu1: f64, mu2: f64) -> Result<SnapshotDist3> {
    let admissible = (0.0..=1.0).contains(&mu1) && mu2 >= mu1 * mu1 - TOL && mu2 <= mu1 + TOL;
    if !admissible {
        return Err(Error::Inadmissible(mu1, mu2));
    }
    let q1 = mu2;
    let qhalf = 2.0 * (mu1 - mu2);
    let q0 = 1.0 - 2.0 * mu1 + mu2;
    Ok(SnapshotDist3 {
        q0: q0.max(0.0),
        qhalf: qhalf.max(0.0),
        q1: q1.max(0.0),
    })
}

pub fn w1_threeatom(p: &SnapshotDist3, q: &SnapshotDist3) -> f64 {
    (p.q0 - q.q0).abs() + (p.q1 - q.q1).abs()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sandwich {
    pub delta1: f64,
    pub delta2: f64,
    pub w1: f64,
    pub lower_ok: bool,
    pub upper_ok: bool,
}

/// Checks `d1 + d2 <= 1.5 W1 <= 3 (d1 + d2)` for one level set.
pub fn sandwich_check(mu1: f64, mu2: f64, m: f64, v: f64) -> Result<Sandwich> {
    let p = snapshot_dist_from_moments(mu1, mu2)?;
    let q = snapshot_dist_from_moments(m, v)?;
    let w1 = w1_threeatom(&p, &q);
    let delta1 = (mu1 - m).abs();
    let delta2 = (mu2 - v).abs();
    let d = delta1 + delta2;
    Ok(Sandwich {
        delta1,
        delta2,
        w1,
        lower_ok: d <= 1.5 * w1 + TOL,
        upper_ok: 1.5 * w1 <= 3.0 * d + TOL,
    })
}

/// Exact optimal transport on three atoms by enumerating basic solutions.
///
/// A basic feasible plan is supported on a spanning tree of the bipartite
/// supply/demand graph (5 of the 9 cells); its flows follow by peeling
/// leaves, and the optimum is attained at one of these vertices.
pub fn transport_lp(p: &SnapshotDist3, q: &SnapshotDist3) -> f64 {
    let (a, b) = (p.as_array(), q.as_array());
    let mut best = f64::INFINITY;
    for mask in 0u32..(1 << 9) {
        if mask.count_ones() != 5 {
            continue;
        }
        if let Some(flow) = tree_flows(mask, &a, &b) {
            let cost: f64 = (0..9).map(|c| flow[c] * GROUND[c / 3][c % 3]).sum();
            best = best.min(cost);
        }
    }
    best
}

fn tree_flows(mask: u32, a: &[f64; 3], b: &[f64; 3]) -> Option<[f64; 9]> {
    let mut rem = [a[0], a[1], a[2], b[0], b[1], b[2]];
    let mut open: Vec<usize> = (0..9).filter(|c| mask >> c & 1 == 1).collect();
    let mut flow = [0.0; 9];
    let ends = |c: usize| (c / 3, 3 + c % 3);
    while !open.is_empty() {
        let mut degree = [0usize; 6];
        for &c in &open {
            let (r, k) = ends(c);
            degree[r] += 1;
            degree[k] += 1;
        }
        let leaf = (0..6).find(|&v| degree[v] == 1)?;
        let pos = open.iter().position(|&c| {
            let (r, k) = ends(c);
            r == leaf || k == leaf
        })?;
        let c = open.swap_remove(pos);
        let (r, k) = ends(c);
        let f = rem[leaf];
        if f < -TOL {
            return None;
        }
        flow[c] = f;
        rem[r] -= f;
        rem[k] -= f;
    }
    if rem.iter().all(|x| x.abs() <= 1e-10) {
        Some(flow)
    } else {
        None
    }
}
