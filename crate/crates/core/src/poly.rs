//! Tensor-Chebyshev features, ridge fits of the calibration functions,
//! the analytic degree schedule and model selection.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_range, Error, Result};
use crate::score::{Score2, Snapshot2, SnapshotBatch, M_MAX, V_MAX};

pub const RIDGE_FLOOR: f64 = 1e-12;
pub const DEGREE_FLOOR: usize = 4;

/// `T_0(x) .. T_deg(x)` by the three-term recurrence.
pub fn chebyshev_values(x: f64, out: &mut [f64]) {
    if out.is_empty() {
        return;
    }
    out[0] = 1.0;
    if out.len() > 1 {
        out[1] = x;
    }
    for k in 2..out.len() {
        out[k] = 2.0 * x * out[k - 1] - out[k - 2];
    }
}

#[inline]
pub fn map_m(m: f64) -> f64 {
    2.0 * m - 1.0
}

#[inline]
pub fn map_v(v: f64) -> f64 {
    8.0 * v - 1.0
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BasisSpec {
    pub degree_m: usize,
    pub degree_v: usize,
}

impl BasisSpec {
    pub fn square(l: usize) -> Self {
        Self {
            degree_m: l,
            degree_v: l,
        }
    }

    /// Mean-only basis, used for first-order (1D) calibration.
    pub fn mean_only(l: usize) -> Self {
        Self {
            degree_m: l,
            degree_v: 0,
        }
    }

    pub fn dim(&self) -> usize {
        (self.degree_m + 1) * (self.degree_v + 1)
    }

    pub fn features(&self, s: Score2) -> Result<Vec<f64>> {
        check_range("m", s.m, 0.0, M_MAX)?;
        check_range("sigma2", s.sigma2, 0.0, V_MAX)?;
        let mut out = vec![0.0; self.dim()];
        self.fill(s, &mut out);
        Ok(out)
    }

    /// Row-major over `(i, j)` with `i` the mean-axis index.
    pub fn fill(&self, s: Score2, out: &mut [f64]) {
        let mut tm = vec![0.0; self.degree_m + 1];
        let mut tv = vec![0.0; self.degree_v + 1];
        chebyshev_values(map_m(s.m), &mut tm);
        chebyshev_values(map_v(s.sigma2), &mut tv);
        let w = self.degree_v + 1;
        for (i, a) in tm.iter().enumerate() {
            for (j, b) in tv.iter().enumerate() {
                out[i * w + j] = a * b;
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    First,
    Second,
}

impl Target {
    pub fn value(&self, r: &Snapshot2) -> f64 {
        match self {
            Target::First => r.y1 as f64,
            Target::Second => r.product as f64,
        }
    }
}

/// A fitted tensor polynomial, clipped to `[0,1]` at evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolyFit {
    pub basis: BasisSpec,
    pub domain: [[f64; 2]; 2],
    /// Absolute ridge penalty applied to the mean-normalised Gram matrix.
    pub ridge: f64,
    pub ridge_mult: f64,
    pub coeffs: Vec<f64>,
}

impl PolyFit {
    pub fn new(basis: BasisSpec, coeffs: Vec<f64>, ridge: f64, ridge_mult: f64) -> Self {
        Self {
            basis,
            domain: [[0.0, M_MAX], [0.0, V_MAX]],
            ridge,
            ridge_mult,
            coeffs,
        }
    }

    pub fn predict_raw(&self, s: Score2) -> f64 {
        let lm = self.basis.degree_m;
        let lv = self.basis.degree_v;
        let mut tm = vec![0.0; lm + 1];
        let mut tv = vec![0.0; lv + 1];
        chebyshev_values(map_m(s.m), &mut tm);
        chebyshev_values(map_v(s.sigma2), &mut tv);
        let mut acc = 0.0;
        for (i, a) in tm.iter().enumerate() {
            let row = &self.coeffs[i * (lv + 1)..(i + 1) * (lv + 1)];
            let inner: f64 = row.iter().zip(&tv).map(|(c, b)| c * b).sum();
            acc += a * inner;
        }
        acc
    }

    pub fn predict(&self, s: Score2) -> f64 {
        self.predict_raw(s).clamp(0.0, 1.0)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let fit: PolyFit = serde_json::from_str(s)?;
        if fit.coeffs.len() != fit.basis.dim() {
            return Err(Error::Config(format!(
                "coefficient count {} does not match basis dimension {}",
                fit.coeffs.len(),
                fit.basis.dim()
            )));
        }
        Ok(fit)
    }
}

pub fn theta_of(h: f64) -> Result<f64> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::Domain {
            what: "h",
            value: h,
            lo: 0.0,
            hi: f64::INFINITY,
        });
    }
    let a = h * PI;
    Ok(a + (a * a + 1.0).sqrt())
}

/// Approximation bound `B_theta * theta^-l` with `B_theta = 2 / (theta - 1)`.
pub fn bernstein_bound(h: f64, l: usize) -> Result<f64> {
    let t = theta_of(h)?;
    Ok(2.0 / (t - 1.0) * t.powi(-(l as i32)))
}

/// Per-bandwidth degree caps, interpolated linearly in `1/h` between entries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CapMap {
    pub entries: Vec<(f64, usize)>,
}

impl Default for CapMap {
    fn default() -> Self {
        Self {
            entries: vec![(1.0 / 16.0, 44), (1.0 / 64.0, 88)],
        }
    }
}

impl CapMap {
    pub fn cap_for(&self, h: f64) -> usize {
        let mut pts: Vec<(f64, f64)> = self
            .entries
            .iter()
            .map(|&(hh, c)| (1.0 / hh, c as f64))
            .collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let x = 1.0 / h;
        if let Some(p) = pts.iter().find(|p| (p.0 - x).abs() <= 1e-9 * x) {
            return p.1 as usize;
        }
        match pts.len() {
            0 => DEGREE_FLOOR,
            1 => pts[0].1 as usize,
            n => {
                let k = pts
                    .windows(2)
                    .position(|w| x <= w[1].0)
                    .unwrap_or(n - 2);
                let (x0, y0) = pts[k];
                let (x1, y1) = pts[k + 1];
                let y = y0 + (y1 - y0) * (x - x0) / (x1 - x0);
                (y.round().max(DEGREE_FLOOR as f64)) as usize
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegreeSchedule {
    pub h: f64,
    pub n: usize,
    pub theta: f64,
    pub l_rate: usize,
    pub l_cap: usize,
    pub l_final: usize,
    pub candidates: Vec<usize>,
}

pub fn schedule(h: f64, n: usize, caps: &CapMap) -> Result<DegreeSchedule> {
    if n == 0 {
        return Err(Error::Empty("sample (n must be at least 1)"));
    }
    let theta = theta_of(h)?;
    let l_rate = (2.0 * (n as f64).ln() / theta.ln()).ceil() as usize;
    let l_cap = caps.cap_for(h);
    let l_final = l_rate.min(l_cap).max(DEGREE_FLOOR);
    Ok(DegreeSchedule {
        h,
        n,
        theta,
        l_rate,
        l_cap,
        l_final,
        candidates: halving_candidates(l_final),
    })
}

/// `l, l/2, l/4, ...` floored at [`DEGREE_FLOOR`], without repeats.
pub fn halving_candidates(l: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut k = l;
    loop {
        let c = k.max(DEGREE_FLOOR);
        if out.last() != Some(&c) {
            out.push(c);
        }
        if k <= DEGREE_FLOOR {
            break;
        }
        k /= 2;
    }
    out
}

/// Per-record Chebyshev values up to a maximum degree on both axes.
#[derive(Clone, Debug)]
pub(crate) struct ChebTable {
    pub lmax: usize,
    pub tm: Vec<f64>,
    pub tv: Vec<f64>,
}

impl ChebTable {
    pub fn new(scores: impl Iterator<Item = Score2>, lmax: usize) -> Self {
        let mut tm = Vec::new();
        let mut tv = Vec::new();
        let mut buf = vec![0.0; lmax + 1];
        for s in scores {
            chebyshev_values(map_m(s.m), &mut buf);
            tm.extend_from_slice(&buf);
            chebyshev_values(map_v(s.sigma2), &mut buf);
            tv.extend_from_slice(&buf);
        }
        Self { lmax, tm, tv }
    }

    fn row_m(&self, r: usize) -> &[f64] {
        &self.tm[r * (self.lmax + 1)..(r + 1) * (self.lmax + 1)]
    }

    fn row_v(&self, r: usize) -> &[f64] {
        &self.tv[r * (self.lmax + 1)..(r + 1) * (self.lmax + 1)]
    }

    /// Design matrix for `basis` over rows `rows`.
    pub fn design(&self, basis: BasisSpec, rows: &[usize]) -> DMatrix<f64> {
        let w = basis.degree_v + 1;
        let mut x = DMatrix::zeros(rows.len(), basis.dim());
        for (k, &r) in rows.iter().enumerate() {
            let a = self.row_m(r);
            let b = self.row_v(r);
            for i in 0..=basis.degree_m {
                for j in 0..w {
                    x[(k, i * w + j)] = a[i] * b[j];
                }
            }
        }
        x
    }

    pub fn predict(&self, basis: BasisSpec, coeffs: &[f64], r: usize) -> f64 {
        let a = self.row_m(r);
        let b = self.row_v(r);
        let w = basis.degree_v + 1;
        let mut acc = 0.0;
        for i in 0..=basis.degree_m {
            let row = &coeffs[i * w..(i + 1) * w];
            acc += a[i] * row.iter().zip(b).map(|(c, t)| c * t).sum::<f64>();
        }
        acc
    }
}

fn solve_spd(mut a: DMatrix<f64>, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let backup = a.clone();
    if let Some(ch) = nalgebra::Cholesky::new(std::mem::replace(&mut a, DMatrix::zeros(0, 0))) {
        return Ok(ch.solve(rhs));
    }
    backup
        .lu()
        .solve(rhs)
        .ok_or_else(|| Error::Singular(format!("{} x {} system", rhs.nrows(), rhs.nrows())))
}

/// Sufficient statistics of a ridge problem at one degree.
///
/// Holds either the mean Gram matrix (primal) or the `n x n` kernel (dual)
/// together with the right-hand sides for both targets.
pub(crate) enum Normal {
    Primal {
        gram: DMatrix<f64>,
        rhs: DMatrix<f64>,
    },
    Dual {
        x: DMatrix<f64>,
        kernel: DMatrix<f64>,
        y: DMatrix<f64>,
    },
}

impl Normal {
    pub fn trace_per_dim(&self, d: usize) -> f64 {
        match self {
            Normal::Primal { gram, .. } => gram.trace() / d as f64,
            // tr(X^T X / n) = tr(X X^T) / n
            Normal::Dual { kernel, .. } => kernel.trace() / (kernel.nrows() as f64 * d as f64),
        }
    }

    /// Coefficients (one column per target) for absolute ridge `lambda`.
    pub fn solve(&self, lambda: f64) -> Result<DMatrix<f64>> {
        match self {
            Normal::Primal { gram, rhs } => {
                let mut a = gram.clone();
                for i in 0..a.nrows() {
                    a[(i, i)] += lambda;
                }
                solve_spd(a, rhs)
            }
            Normal::Dual { x, kernel, y } => {
                let n = kernel.nrows();
                let mut a = kernel.clone();
                for i in 0..n {
                    a[(i, i)] += n as f64 * lambda;
                }
                let alpha = solve_spd(a, y)?;
                Ok(x.transpose() * alpha)
            }
        }
    }
}

fn targets(batch: &SnapshotBatch, rows: &[usize], which: &[Target]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), which.len(), |k, t| {
        which[t].value(&batch.records[rows[k]])
    })
}

const GRAM_CHUNK: usize = 2048;

/// Mean Gram matrix and mean `X^T y` assembled in row chunks.
fn gram_chunked(
    table: &ChebTable,
    basis: BasisSpec,
    rows: &[usize],
    y: &DMatrix<f64>,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let d = basis.dim();
    let mut g = DMatrix::zeros(d, d);
    let mut r = DMatrix::zeros(d, y.ncols());
    for (c, chunk) in rows.chunks(GRAM_CHUNK).enumerate() {
        let x = table.design(basis, chunk);
        let xt = x.transpose();
        g += &xt * &x;
        let yc = y.rows(c * GRAM_CHUNK, chunk.len());
        r += &xt * yc;
    }
    let n = rows.len() as f64;
    (g / n, r / n)
}

pub(crate) fn normal_equations(
    table: &ChebTable,
    basis: BasisSpec,
    rows: &[usize],
    y: &DMatrix<f64>,
) -> Normal {
    let d = basis.dim();
    if d > rows.len() {
        let x = table.design(basis, rows);
        let kernel = &x * x.transpose();
        Normal::Dual {
            x,
            kernel,
            y: y.clone(),
        }
    } else {
        let (gram, rhs) = gram_chunked(table, basis, rows, y);
        Normal::Primal { gram, rhs }
    }
}

/// Extract the lower-degree primal problem from a higher-degree one.
fn sub_primal(gram: &DMatrix<f64>, rhs: &DMatrix<f64>, big: BasisSpec, small: BasisSpec) -> Normal {
    let wb = big.degree_v + 1;
    let idx: Vec<usize> = (0..=small.degree_m)
        .flat_map(|i| (0..=small.degree_v).map(move |j| i * wb + j))
        .collect();
    let d = idx.len();
    let g = DMatrix::from_fn(d, d, |a, b| gram[(idx[a], idx[b])]);
    let r = DMatrix::from_fn(d, rhs.ncols(), |a, t| rhs[(idx[a], t)]);
    Normal::Primal { gram: g, rhs: r }
}

/// Ridge fit of one target. `lambda = (ridge_mult + 1e-12) * tr(G) / d`
/// with `G` the mean Gram matrix; dual form whenever `d > n`.
pub fn fit_ridge(
    basis: BasisSpec,
    batch: &SnapshotBatch,
    target: Target,
    ridge_mult: f64,
) -> Result<PolyFit> {
    let mut fits = fit_ridge_targets(basis, batch, &[target], ridge_mult)?;
    Ok(fits.remove(0))
}

/// Ridge fits sharing one factorisation across several targets.
pub fn fit_ridge_targets(
    basis: BasisSpec,
    batch: &SnapshotBatch,
    which: &[Target],
    ridge_mult: f64,
) -> Result<Vec<PolyFit>> {
    batch.ensure_non_empty()?;
    let lmax = basis.degree_m.max(basis.degree_v);
    let table = ChebTable::new(batch.records.iter().map(|r| r.score), lmax);
    let rows: Vec<usize> = (0..batch.len()).collect();
    let y = targets(batch, &rows, which);
    let ne = normal_equations(&table, basis, &rows, &y);
    let lambda = (ridge_mult + RIDGE_FLOOR) * ne.trace_per_dim(basis.dim());
    let beta = ne.solve(lambda)?;
    Ok((0..which.len())
        .map(|t| PolyFit::new(basis, beta.column(t).iter().copied().collect(), lambda, ridge_mult))
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectMode {
    Heldout,
    Cv,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectGrids {
    pub degrees: Vec<usize>,
    pub ridge_mults: Vec<f64>,
}

impl SelectGrids {
    pub fn default_ridges() -> Vec<f64> {
        (0..=6).map(|k| 10f64.powi(k - 6)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub fit1: PolyFit,
    pub fit2: PolyFit,
    pub degree: usize,
    /// Validation loss of each regression at the chosen configuration.
    pub loss1: f64,
    pub loss2: f64,
}

const FOLDS: usize = 5;

/// Squared-error losses `loss[degree][ridge][target]` of every candidate.
fn candidate_losses(
    table: &ChebTable,
    fit_rows: &[usize],
    y_fit: &DMatrix<f64>,
    eval_table: &ChebTable,
    eval_rows: &[usize],
    y_eval: &DMatrix<f64>,
    degrees: &[usize],
    ridges: &[f64],
) -> Result<Vec<Vec<[f64; 2]>>> {
    let top = *degrees.iter().max().unwrap();
    let top_basis = BasisSpec::square(top);
    let top_primal = if top_basis.dim() <= fit_rows.len() {
        Some(gram_chunked(table, top_basis, fit_rows, y_fit))
    } else {
        None
    };
    let mut out = Vec::with_capacity(degrees.len());
    for &l in degrees {
        let basis = BasisSpec::square(l);
        let ne = match (&top_primal, basis.dim() <= fit_rows.len()) {
            (Some((g, r)), _) => sub_primal(g, r, top_basis, basis),
            (None, _) => normal_equations(table, basis, fit_rows, y_fit),
        };
        let tpd = ne.trace_per_dim(basis.dim());
        let mut per_ridge = Vec::with_capacity(ridges.len());
        for &mult in ridges {
            let beta = ne.solve((mult + RIDGE_FLOOR) * tpd)?;
            let mut loss = [0.0; 2];
            for (k, &r) in eval_rows.iter().enumerate() {
                for (t, l) in loss.iter_mut().enumerate() {
                    let c = beta.column(t);
                    let p = eval_table.predict(basis, c.as_slice(), r).clamp(0.0, 1.0);
                    let e = p - y_eval[(k, t)];
                    *l += e * e;
                }
            }
            per_ridge.push([loss[0] / eval_rows.len() as f64, loss[1] / eval_rows.len() as f64]);
        }
        out.push(per_ridge);
    }
    Ok(out)
}

/// Choose one degree for both regressions (summed loss) and a ridge per
/// regression; ties go to the smaller degree, then the smaller ridge.
pub fn select_model(
    train: &SnapshotBatch,
    hyper: Option<&SnapshotBatch>,
    mode: SelectMode,
    grids: &SelectGrids,
) -> Result<Selection> {
    if grids.degrees.is_empty() || grids.ridge_mults.is_empty() {
        return Err(Error::Empty("candidate grid"));
    }
    train.ensure_non_empty()?;
    let mut degrees = grids.degrees.clone();
    degrees.sort_unstable();
    degrees.dedup();
    let mut ridges = grids.ridge_mults.clone();
    ridges.sort_by(f64::total_cmp);
    ridges.dedup();
    let top = *degrees.last().unwrap();
    let both = [Target::First, Target::Second];

    let table = ChebTable::new(train.records.iter().map(|r| r.score), top);
    let all: Vec<usize> = (0..train.len()).collect();
    let y_train = targets(train, &all, &both);

    let losses = match mode {
        SelectMode::Heldout => {
            let hyper = hyper.ok_or(Error::Empty("hyper batch"))?;
            hyper.ensure_non_empty()?;
            let ht = ChebTable::new(hyper.records.iter().map(|r| r.score), top);
            let hrows: Vec<usize> = (0..hyper.len()).collect();
            let y_h = targets(hyper, &hrows, &both);
            candidate_losses(&table, &all, &y_train, &ht, &hrows, &y_h, &degrees, &ridges)?
        }
        SelectMode::Cv => {
            let n = train.len();
            if n < FOLDS {
                return Err(Error::Empty("training batch too small for 5-fold CV"));
            }
            let mut acc = vec![vec![[0.0; 2]; ridges.len()]; degrees.len()];
            for f in 0..FOLDS {
                let held: Vec<usize> = all.iter().copied().filter(|r| r % FOLDS == f).collect();
                let kept: Vec<usize> = all.iter().copied().filter(|r| r % FOLDS != f).collect();
                let y_fit = targets(train, &kept, &both);
                let l = candidate_losses(&table, &kept, &y_fit, &table, &held, &y_train_rows(&y_train, &held), &degrees, &ridges)?;
                for (a, b) in acc.iter_mut().zip(&l) {
                    for (x, y) in a.iter_mut().zip(b) {
                        x[0] += y[0] * held.len() as f64 / n as f64;
                        x[1] += y[1] * held.len() as f64 / n as f64;
                    }
                }
            }
            acc
        }
    };

    let best_for = |per_ridge: &Vec<[f64; 2]>, t: usize| -> (usize, f64) {
        let mut best = (0, per_ridge[0][t]);
        for (k, l) in per_ridge.iter().enumerate().skip(1) {
            if l[t] < best.1 {
                best = (k, l[t]);
            }
        }
        best
    };
    let mut chosen = (0usize, f64::INFINITY);
    for (di, per_ridge) in losses.iter().enumerate() {
        let total = best_for(per_ridge, 0).1 + best_for(per_ridge, 1).1;
        if total < chosen.1 {
            chosen = (di, total);
        }
    }
    let di = chosen.0;
    let (r1, loss1) = best_for(&losses[di], 0);
    let (r2, loss2) = best_for(&losses[di], 1);
    let basis = BasisSpec::square(degrees[di]);
    let fit1 = fit_ridge(basis, train, Target::First, ridges[r1])?;
    let fit2 = fit_ridge(basis, train, Target::Second, ridges[r2])?;
    Ok(Selection {
        fit1,
        fit2,
        degree: degrees[di],
        loss1,
        loss2,
    })
}

fn y_train_rows(y: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), y.ncols(), |k, t| y[(rows[k], t)])
}

/// Least-squares Chebyshev fit of degree `l` to samples `(x_k, f_k)` on
/// `[-1, 1]`, returning the coefficient vector.
pub fn chebyshev_lsq_1d(xs: &[f64], fs: &[f64], l: usize) -> Result<Vec<f64>> {
    let mut x = DMatrix::zeros(xs.len(), l + 1);
    let mut buf = vec![0.0; l + 1];
    for (r, &xr) in xs.iter().enumerate() {
        chebyshev_values(xr, &mut buf);
        for (c, v) in buf.iter().enumerate() {
            x[(r, c)] = *v;
        }
    }
    let y = DVector::from_column_slice(fs);
    let svd = x.svd(true, true);
    let beta = svd
        .solve(&y, 1e-14)
        .map_err(|e| Error::Singular(e.to_string()))?;
    Ok(beta.iter().copied().collect())
}

pub fn chebyshev_eval_1d(coeffs: &[f64], x: f64) -> f64 {
    let mut buf = vec![0.0; coeffs.len()];
    chebyshev_values(x, &mut buf);
    coeffs.iter().zip(&buf).map(|(c, t)| c * t).sum()
}
