//! Ground-truth surfaces for the perturbed predictor.
//!
//! Raw `(score, f*)` points are deposited bilinearly on a tensor grid and
//! smoothed along each axis with the discretised sech kernel. The smoothed
//! fields give `eta1`, `eta2` and the perturbed-score law on the grid.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dgp::{derive_seed, open01, rng, Exp1World, P0};
use crate::error::{Error, Result};
use crate::estimate::MomentModel;
use crate::score::{Score2, M_MAX, V_MAX};
use crate::sech::{kernel_matrix, trapezoid_weights, uniform_grid, SechKernel};

pub const INVALID_MASS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    pub n_m: usize,
    pub n_v: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { n_m: 1025, n_v: 257 }
    }
}

/// Gridded truth. Node fields are row-major with the mean axis first.
#[derive(Clone, Debug, PartialEq)]
pub struct TruthSurface {
    pub grid_m: Vec<f64>,
    pub grid_v: Vec<f64>,
    /// Deposited weight per node before smoothing.
    pub mass: Vec<f64>,
    /// Perturbed-score probability per node, summing to one.
    pub prob: Vec<f64>,
    /// `prob` divided by the trapezoid cell weight.
    pub density: Vec<f64>,
    pub eta1: Vec<f64>,
    pub eta2: Vec<f64>,
    /// Smoothed `E[f*(1 - f*) | s]`, deposited as its own field.
    pub aleatoric: Vec<f64>,
    pub valid: Vec<bool>,
    pub h: f64,
    pub n_qmc: usize,
    pub seed: u64,
}

fn locate(x: f64, hi: f64, n: usize) -> (usize, f64) {
    let f = (x / hi).clamp(0.0, 1.0) * (n - 1) as f64;
    let i = (f as usize).min(n - 2);
    (i, f - i as f64)
}

impl TruthSurface {
    pub fn n_m(&self) -> usize {
        self.grid_m.len()
    }

    pub fn n_v(&self) -> usize {
        self.grid_v.len()
    }

    pub fn idx(&self, i: usize, j: usize) -> usize {
        i * self.n_v() + j
    }

    /// Bilinear interpolation of a node field.
    pub fn interpolate(&self, field: &[f64], s: Score2) -> f64 {
        let (i, a) = locate(s.m, M_MAX, self.n_m());
        let (j, b) = locate(s.sigma2, V_MAX, self.n_v());
        let f = |ii, jj| field[self.idx(ii, jj)];
        f(i, j) * (1.0 - a) * (1.0 - b)
            + f(i + 1, j) * a * (1.0 - b)
            + f(i, j + 1) * (1.0 - a) * b
            + f(i + 1, j + 1) * a * b
    }

    pub fn epistemic(&self) -> Vec<f64> {
        self.eta1
            .iter()
            .zip(&self.eta2)
            .map(|(a, b)| (b - a * a).clamp(0.0, V_MAX))
            .collect()
    }

    /// Probability mass of the perturbed mean below each `grid_m` node (inclusive).
    pub fn marginal_cdf_m(&self) -> Vec<f64> {
        let mut acc = 0.0;
        (0..self.n_m())
            .map(|i| {
                acc += (0..self.n_v()).map(|j| self.prob[self.idx(i, j)]).sum::<f64>();
                acc
            })
            .collect()
    }

    pub fn trapezoid_integral(&self, field: &[f64]) -> f64 {
        let wm = trapezoid_weights(&self.grid_m);
        let wv = trapezoid_weights(&self.grid_v);
        let mut acc = 0.0;
        for (i, a) in wm.iter().enumerate() {
            for (j, b) in wv.iter().enumerate() {
                acc += a * b * field[self.idx(i, j)];
            }
        }
        acc
    }
}

impl MomentModel for TruthSurface {
    fn moments(&self, s: Score2) -> (f64, f64) {
        (self.interpolate(&self.eta1, s), self.interpolate(&self.eta2, s))
    }
}

/// Deposit `(1, p, p^2, p(1-p))` at raw scores and smooth with the kernel.
pub fn build_surface(points: &[(Score2, f64)], grid: GridSpec, h: f64, seed: u64) -> Result<TruthSurface> {
    if grid.n_m < 2 || grid.n_v < 2 {
        return Err(Error::GridMismatch("grids need at least 2 nodes per axis".into()));
    }
    if points.is_empty() {
        return Err(Error::ZeroMass);
    }
    let (nm, nv) = (grid.n_m, grid.n_v);
    let mut fields: Vec<DMatrix<f64>> = (0..4).map(|_| DMatrix::zeros(nm, nv)).collect();
    for &(s, p) in points {
        let (i, a) = locate(s.m, M_MAX, nm);
        let (j, b) = locate(s.sigma2, V_MAX, nv);
        let vals = [1.0, p, p * p, p * (1.0 - p)];
        for (di, dj, w) in [
            (0, 0, (1.0 - a) * (1.0 - b)),
            (1, 0, a * (1.0 - b)),
            (0, 1, (1.0 - a) * b),
            (1, 1, a * b),
        ] {
            for (f, v) in fields.iter_mut().zip(vals) {
                f[(i + di, j + dj)] += w * v;
            }
        }
    }
    let grid_m = uniform_grid(0.0, M_MAX, nm);
    let grid_v = uniform_grid(0.0, V_MAX, nv);
    let km = kernel_matrix(&SechKernel::mean_axis(h)?, &grid_m)?;
    let kv = kernel_matrix(&SechKernel::variance_axis(h)?, &grid_v)?;
    let km_t = DMatrix::from_row_slice(nm, nm, &km.weights).transpose();
    let kv = DMatrix::from_row_slice(nv, nv, &kv.weights);
    let smoothed: Vec<DMatrix<f64>> = fields.iter().map(|f| &km_t * f * &kv).collect();

    let mass_total: f64 = fields[0].sum();
    if !(mass_total > 0.0) {
        return Err(Error::ZeroMass);
    }
    let s_total: f64 = smoothed[0].sum();
    let global1 = fields[1].sum() / mass_total;
    let global2 = fields[2].sum() / mass_total;
    let globala = fields[3].sum() / mass_total;
    let wm = trapezoid_weights(&grid_m);
    let wv = trapezoid_weights(&grid_v);

    let n = nm * nv;
    let mut ts = TruthSurface {
        grid_m,
        grid_v,
        mass: vec![0.0; n],
        prob: vec![0.0; n],
        density: vec![0.0; n],
        eta1: vec![0.0; n],
        eta2: vec![0.0; n],
        aleatoric: vec![0.0; n],
        valid: vec![false; n],
        h,
        n_qmc: points.len(),
        seed,
    };
    for i in 0..nm {
        for j in 0..nv {
            let k = i * nv + j;
            let s1 = smoothed[0][(i, j)];
            let p = s1 / s_total;
            ts.mass[k] = fields[0][(i, j)];
            ts.prob[k] = p;
            ts.density[k] = p / (wm[i] * wv[j]);
            if p > INVALID_MASS {
                ts.valid[k] = true;
                ts.eta1[k] = smoothed[1][(i, j)] / s1;
                ts.eta2[k] = smoothed[2][(i, j)] / s1;
                ts.aleatoric[k] = smoothed[3][(i, j)] / s1;
            } else {
                ts.eta1[k] = global1;
                ts.eta2[k] = global2;
                ts.aleatoric[k] = globala;
            }
        }
    }
    Ok(ts)
}

/// Surface for an Experiment 1/2 world from `n_qmc` scrambled Sobol points.
pub fn build_world_surface(world: &Exp1World, h: f64, n_qmc: usize, grid: GridSpec, seed: u64) -> Result<TruthSurface> {
    let pts = world.qmc_points(n_qmc, seed)?;
    build_surface(&pts, grid, h, seed)
}

/// Perturbed second-order calibration error read off the surface.
pub fn ce2_pert(ts: &TruthSurface) -> Result<f64> {
    let n = ts.n_m() * ts.n_v();
    if ts.prob.len() != n || ts.eta1.len() != n || ts.eta2.len() != n {
        return Err(Error::GridMismatch(format!(
            "fields of length {} for a {} x {} grid",
            ts.prob.len(),
            ts.n_m(),
            ts.n_v()
        )));
    }
    let mut acc = crate::estimate::KahanSum::default();
    for i in 0..ts.n_m() {
        let m = ts.grid_m[i];
        for j in 0..ts.n_v() {
            let k = ts.idx(i, j);
            if ts.valid[k] {
                let v = ts.grid_v[j];
                acc.add(ts.prob[k] * ((ts.eta1[k] - m).abs() + (ts.eta2[k] - m * m - v).abs()));
            }
        }
    }
    Ok(acc.value())
}

pub fn conditional_variance_at(ts: &TruthSurface, s: Score2) -> f64 {
    let (i, a) = locate(s.m, M_MAX, ts.n_m());
    let (j, b) = locate(s.sigma2, V_MAX, ts.n_v());
    let f = |ii, jj| {
        let k = ts.idx(ii, jj);
        ts.eta2[k] - ts.eta1[k] * ts.eta1[k]
    };
    let v = f(i, j) * (1.0 - a) * (1.0 - b)
        + f(i + 1, j) * a * (1.0 - b)
        + f(i, j + 1) * (1.0 - a) * b
        + f(i + 1, j + 1) * a * b;
    v.clamp(0.0, V_MAX)
}

/// Per-sample pointwise loss of the constant predictor `(1, 0)` when `f* = p`.
fn boundary_loss(p: f64, m: f64, v: f64) -> f64 {
    (p - m).abs() + (p * p - m * m - v).abs()
}

fn mean_se(sum: f64, sum2: f64, n: usize) -> (f64, f64) {
    let nf = n as f64;
    let mean = sum / nf;
    let var = (sum2 / nf - mean * mean).max(0.0) * nf / (nf - 1.0).max(1.0);
    (mean, (var / nf).sqrt())
}

/// Direct Monte Carlo of `phi(p) + psi(p)` for the boundary predictor.
pub fn boundary_ce2_mc(p: f64, h: f64, n_mc: usize, seed: u64) -> Result<(f64, f64)> {
    let km = SechKernel::mean_axis(h)?;
    let kv = SechKernel::variance_axis(h)?;
    let mut r = rng(seed);
    let (mut s, mut s2) = (0.0, 0.0);
    for _ in 0..n_mc {
        let m = km.sample_unchecked(1.0, open01(&mut r));
        let v = kv.sample_unchecked(0.0, open01(&mut r));
        let l = boundary_loss(p, m, v);
        s += l;
        s2 += l * l;
    }
    Ok(mean_se(s, s2, n_mc))
}

/// Gap `CE2pert(P0) - CE2pert(P1)` with common random numbers.
pub fn lower_bound_gap(h: f64, epsilon: f64, n_mc: usize, seed: u64) -> Result<(f64, f64)> {
    if !(epsilon > 0.0 && epsilon <= P0) {
        return Err(Error::Domain {
            what: "epsilon",
            value: epsilon,
            lo: 0.0,
            hi: P0,
        });
    }
    let km = SechKernel::mean_axis(h)?;
    let kv = SechKernel::variance_axis(h)?;
    let mut r = rng(derive_seed(seed, 7));
    let (p0, p1) = (P0, P0 + epsilon);
    let (mut s, mut s2) = (0.0, 0.0);
    for _ in 0..n_mc {
        let m = km.sample_unchecked(1.0, open01(&mut r));
        let v = kv.sample_unchecked(0.0, open01(&mut r));
        let d = boundary_loss(p0, m, v) - boundary_loss(p1, m, v);
        s += d;
        s2 += d * d;
    }
    Ok(mean_se(s, s2, n_mc))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurfaceSidecar {
    pub n_m: usize,
    pub n_v: usize,
    pub h: f64,
    pub n_qmc: usize,
    pub seed: u64,
    pub fields: Vec<String>,
    pub checksum: String,
}

const FIELDS: [&str; 8] = [
    "grid_m", "grid_v", "mass", "prob", "density", "eta1", "eta2", "aleatoric",
];

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn sidecar_path(bin: &Path) -> PathBuf {
    bin.with_extension("json")
}

/// Little-endian `f64` dump of all fields plus a JSON sidecar with a SHA-256.
pub fn save_surface(ts: &TruthSurface, path: &Path) -> Result<SurfaceSidecar> {
    let mut bytes = Vec::new();
    let all: [&[f64]; 8] = [
        &ts.grid_m, &ts.grid_v, &ts.mass, &ts.prob, &ts.density, &ts.eta1, &ts.eta2, &ts.aleatoric,
    ];
    for f in all {
        for v in f {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    bytes.extend(ts.valid.iter().map(|&b| b as u8));
    let sidecar = SurfaceSidecar {
        n_m: ts.n_m(),
        n_v: ts.n_v(),
        h: ts.h,
        n_qmc: ts.n_qmc,
        seed: ts.seed,
        fields: FIELDS.iter().map(|s| s.to_string()).chain(["valid".to_string()]).collect(),
        checksum: sha256_hex(&bytes),
    };
    fs::File::create(path)?.write_all(&bytes)?;
    fs::write(sidecar_path(path), serde_json::to_string_pretty(&sidecar)?)?;
    Ok(sidecar)
}

pub fn load_surface(path: &Path) -> Result<TruthSurface> {
    let sidecar: SurfaceSidecar = serde_json::from_str(&fs::read_to_string(sidecar_path(path))?)?;
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    if sha256_hex(&bytes) != sidecar.checksum {
        return Err(Error::Checksum(path.display().to_string()));
    }
    let (nm, nv) = (sidecar.n_m, sidecar.n_v);
    let n = nm * nv;
    let expected = 8 * (nm + nv + 6 * n) + n;
    if bytes.len() != expected {
        return Err(Error::GridMismatch(format!("{} bytes, expected {expected}", bytes.len())));
    }
    let mut off = 0;
    let mut take = |len: usize| -> Vec<f64> {
        let out = bytes[off..off + 8 * len]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        off += 8 * len;
        out
    };
    let grid_m = take(nm);
    let grid_v = take(nv);
    let mass = take(n);
    let prob = take(n);
    let density = take(n);
    let eta1 = take(n);
    let eta2 = take(n);
    let aleatoric = take(n);
    let valid = bytes[bytes.len() - n..].iter().map(|&b| b == 1).collect();
    Ok(TruthSurface {
        grid_m,
        grid_v,
        mass,
        prob,
        density,
        eta1,
        eta2,
        aleatoric,
        valid,
        h: sidecar.h,
        n_qmc: sidecar.n_qmc,
        seed: sidecar.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> GridSpec {
        GridSpec { n_m: 65, n_v: 17 }
    }

    #[test]
    fn constant_world_is_vacuous() {
        let p = 1.0 / 16.0;
        let pts = vec![(Score2 { m: 1.0, sigma2: 0.0 }, p); 10];
        let ts = build_surface(&pts, small(), 1.0 / 16.0, 0).unwrap();
        assert_eq!(ts.mass.iter().sum::<f64>(), 10.0);
        for k in 0..ts.eta1.len() {
            assert!((ts.eta1[k] - p).abs() < 1e-14);
            assert!((ts.eta2[k] - p * p).abs() < 1e-14);
        }
        assert!(conditional_variance_at(&ts, Score2 { m: 0.7, sigma2: 0.1 }) < 1e-14);
    }

    #[test]
    fn two_subpopulations_give_quarter_variance() {
        let s = Score2 { m: 0.5, sigma2: 0.1 };
        let pts = vec![(s, 0.0), (s, 1.0)];
        let ts = build_surface(&pts, small(), 0.1, 0).unwrap();
        assert!((conditional_variance_at(&ts, Score2 { m: 0.4, sigma2: 0.2 }) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn empty_points_rejected() {
        assert!(matches!(build_surface(&[], small(), 0.1, 0), Err(Error::ZeroMass)));
    }

    #[test]
    fn bad_epsilon_rejected() {
        assert!(lower_bound_gap(0.1, 0.2, 10, 0).is_err());
    }
}
