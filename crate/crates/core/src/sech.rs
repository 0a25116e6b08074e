//! Truncated sech perturbation kernel.
//!
//! The density on `[lo, hi]` centred at `s` is `sech((t - s) / h) / Z(s, h)`.
//! Everything is expressed through the Gudermannian `G(x) = atan(sinh x)`,
//! so the CDF and its inverse are closed form and truncation is exact.

use serde::{Deserialize, Serialize};

use crate::error::{check_range, Error, Result};
use crate::score::{Score2, M_MAX, V_MAX};

/// `G(x) = atan(sinh x)`, the antiderivative of sech vanishing at 0.
pub fn gd(x: f64) -> f64 {
    x.sinh().atan()
}

/// Inverse Gudermannian on `(-pi/2, pi/2)`.
///
/// `asinh(tan y)` equals `2 atanh(tan(y / 2))` but keeps full precision
/// close to the poles, where `tan(y / 2)` approaches 1.
pub fn gd_inv(y: f64) -> f64 {
    y.tan().asinh()
}

pub fn sech(x: f64) -> f64 {
    let a = x.abs();
    if a > 700.0 {
        0.0
    } else {
        let e = (-a).exp();
        2.0 * e / (1.0 + e * e)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SechKernel {
    pub h: f64,
    pub lo: f64,
    pub hi: f64,
}

impl SechKernel {
    pub fn new(h: f64, lo: f64, hi: f64) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::Domain {
                what: "h",
                value: h,
                lo: 0.0,
                hi: f64::INFINITY,
            });
        }
        if !(hi > lo) {
            return Err(Error::Domain {
                what: "hi",
                value: hi,
                lo,
                hi: f64::INFINITY,
            });
        }
        Ok(Self { h, lo, hi })
    }

    /// Kernel on the mean axis `[0, 1]`.
    pub fn mean_axis(h: f64) -> Result<Self> {
        Self::new(h, 0.0, M_MAX)
    }

    /// Kernel on the variance axis `[0, 1/4]`, same bandwidth.
    pub fn variance_axis(h: f64) -> Result<Self> {
        Self::new(h, 0.0, V_MAX)
    }

    fn g_bounds(&self, s: f64) -> (f64, f64) {
        (gd((self.lo - s) / self.h), gd((self.hi - s) / self.h))
    }

    pub fn normalizer(&self, s: f64) -> Result<f64> {
        check_range("s", s, self.lo, self.hi)?;
        let (ga, gb) = self.g_bounds(s);
        Ok(self.h * (gb - ga))
    }

    pub fn density(&self, s: f64, t: f64) -> Result<f64> {
        let z = self.normalizer(s)?;
        check_range("t", t, self.lo, self.hi)?;
        Ok(sech((t - s) / self.h) / z)
    }

    pub fn cdf(&self, s: f64, t: f64) -> Result<f64> {
        check_range("s", s, self.lo, self.hi)?;
        check_range("t", t, self.lo, self.hi)?;
        let (ga, gb) = self.g_bounds(s);
        let v = (gd((t - s) / self.h) - ga) / (gb - ga);
        Ok(v.clamp(0.0, 1.0))
    }

    /// Inverse-CDF draw for a supplied uniform `u` in `(0, 1)`.
    pub fn sample(&self, s: f64, u: f64) -> Result<f64> {
        check_range("s", s, self.lo, self.hi)?;
        if !(u > 0.0 && u < 1.0) {
            return Err(Error::Domain {
                what: "u",
                value: u,
                lo: 0.0,
                hi: 1.0,
            });
        }
        Ok(self.sample_unchecked(s, u))
    }

    pub(crate) fn sample_unchecked(&self, s: f64, u: f64) -> f64 {
        let (ga, gb) = self.g_bounds(s);
        let t = s + self.h * gd_inv(ga + u * (gb - ga));
        t.clamp(self.lo, self.hi)
    }
}

/// Independent per-coordinate perturbation of a score.
pub fn perturb_score(
    km: &SechKernel,
    kv: &SechKernel,
    s: Score2,
    u1: f64,
    u2: f64,
) -> Result<Score2> {
    Ok(Score2 {
        m: km.sample(s.m, u1)?,
        sigma2: kv.sample(s.sigma2, u2)?,
    })
}

/// Row-stochastic discretisation of the kernel on a node grid.
///
/// Row `i` holds the trapezoid-weighted density `k_h(grid[j] | grid[i])`,
/// renormalised to sum to one.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelMatrix {
    pub grid: Vec<f64>,
    /// Row-major `n x n`.
    pub weights: Vec<f64>,
}

impl KernelMatrix {
    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.grid.len();
        &self.weights[i * n..(i + 1) * n]
    }

    /// `out[i] = sum_j K[i][j] f[j]`: the kernel average of `f` around node `i`.
    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        (0..self.len())
            .map(|i| self.row(i).iter().zip(f).map(|(w, x)| w * x).sum())
            .collect()
    }
}

pub fn trapezoid_weights(grid: &[f64]) -> Vec<f64> {
    let n = grid.len();
    let mut w = vec![0.0; n];
    for j in 0..n.saturating_sub(1) {
        let d = 0.5 * (grid[j + 1] - grid[j]);
        w[j] += d;
        w[j + 1] += d;
    }
    w
}

pub fn uniform_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let step = (hi - lo) / (n - 1) as f64;
    (0..n)
        .map(|i| if i + 1 == n { hi } else { lo + step * i as f64 })
        .collect()
}

pub fn kernel_matrix(k: &SechKernel, grid: &[f64]) -> Result<KernelMatrix> {
    let n = grid.len();
    if n < 2 {
        return Err(Error::Empty("kernel grid (need at least 2 nodes)"));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::GridMismatch("grid must be strictly increasing".into()));
    }
    let tw = trapezoid_weights(grid);
    let mut weights = vec![0.0; n * n];
    for (i, row) in weights.chunks_mut(n).enumerate() {
        let s = grid[i];
        let mut total = 0.0;
        for (j, w) in row.iter_mut().enumerate() {
            *w = tw[j] * sech((grid[j] - s) / k.h);
            total += *w;
        }
        for w in row.iter_mut() {
            *w /= total;
        }
    }
    Ok(KernelMatrix {
        grid: grid.to_vec(),
        weights,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn gd_values() {
        assert_eq!(gd(0.0), 0.0);
        assert_abs_diff_eq!(gd(8.0), 1.570_125_4, epsilon = 1e-7);
        assert_abs_diff_eq!(gd(-3.0), -gd(3.0), epsilon = 1e-15);
        assert_abs_diff_eq!(gd_inv(gd(2.5)), 2.5, epsilon = 1e-12);
    }

    #[test]
    fn sech_matches_definition() {
        for &x in &[0.0, 0.3, -2.0, 15.0] {
            assert_abs_diff_eq!(sech(x), 1.0 / f64::cosh(x), epsilon = 1e-15);
        }
    }

    #[test]
    fn normalizer_limits() {
        let k = SechKernel::new(1e3, 0.0, 1.0).unwrap();
        assert_abs_diff_eq!(k.normalizer(0.5).unwrap(), 1.0, epsilon = 1e-4);
        let k = SechKernel::mean_axis(1.0 / 16.0).unwrap();
        assert!(k.normalizer(1.5).is_err());
    }

    #[test]
    fn symmetric_centre() {
        let k = SechKernel::mean_axis(1.0 / 16.0).unwrap();
        assert_abs_diff_eq!(k.cdf(0.5, 0.5).unwrap(), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(k.sample(0.5, 0.5).unwrap(), 0.5, epsilon = 1e-15);
        assert_eq!(k.cdf(0.3, 0.0).unwrap(), 0.0);
        assert_eq!(k.cdf(0.3, 1.0).unwrap(), 1.0);
    }

    #[test]
    fn sample_rejects_bad_uniform() {
        let k = SechKernel::mean_axis(0.1).unwrap();
        assert!(k.sample(0.5, 0.0).is_err());
        assert!(k.sample(0.5, 1.0).is_err());
        assert!(k.sample(0.5, 0.999_999).unwrap() <= 1.0);
    }

    #[test]
    fn kernel_matrix_rows() {
        let k = SechKernel::mean_axis(0.2).unwrap();
        let km = kernel_matrix(&k, &[0.0, 1.0]).unwrap();
        for i in 0..2 {
            assert_abs_diff_eq!(km.row(i).iter().sum::<f64>(), 1.0, epsilon = 1e-14);
        }
        let km = kernel_matrix(&k, &uniform_grid(0.0, 1.0, 65)).unwrap();
        for v in km.apply(&vec![1.0; 65]) {
            assert_abs_diff_eq!(v, 1.0, epsilon = 1e-12);
        }
        assert!(kernel_matrix(&k, &[0.5]).is_err());
    }
}
