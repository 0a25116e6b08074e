//! Crowdsourced audit pipeline: vote ingestion, cohorts, XOR scores,
//! all-pairs moment labels and audit yield.

use std::collections::{BTreeMap, HashMap};
use std::io::Read;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Beta, Binomial, Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::score::{project_moments, MomentPair};

pub const MIN_VOTES: u32 = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskVotes {
    pub task_id: String,
    pub a: u32,
    pub n: u32,
    pub gold: Option<String>,
}

impl TaskVotes {
    pub fn p_hat(&self) -> f64 {
        self.a as f64 / self.n as f64
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VoteTable {
    pub tasks: Vec<TaskVotes>,
}

#[derive(Debug, Deserialize)]
struct VoteRow {
    task_id: String,
    #[allow(dead_code)]
    worker_id: String,
    response: String,
}

#[derive(Debug, Deserialize)]
struct GoldRow {
    task_id: String,
    gold: String,
}

/// Count one-vs-rest votes for `target_class`; tasks below `MIN_VOTES` are dropped.
pub fn ingest_votes<R: Read>(votes: R, target_class: &str) -> Result<VoteTable> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(votes);
    let mut counts: BTreeMap<String, (u32, u32)> = BTreeMap::new();
    for (k, row) in rdr.deserialize::<VoteRow>().enumerate() {
        let row = row.map_err(|e| Error::MalformedRow {
            row: k + 2,
            msg: e.to_string(),
        })?;
        let c = counts.entry(row.task_id).or_insert((0, 0));
        c.0 += (row.response == target_class) as u32;
        c.1 += 1;
    }
    let tasks: Vec<TaskVotes> = counts
        .into_iter()
        .filter(|(_, (_, n))| *n >= MIN_VOTES)
        .map(|(task_id, (a, n))| TaskVotes {
            task_id,
            a,
            n,
            gold: None,
        })
        .collect();
    if tasks.is_empty() {
        return Err(Error::Empty("vote table after filtering"));
    }
    Ok(VoteTable { tasks })
}

pub fn attach_gold<R: Read>(vt: &mut VoteTable, gold: R) -> Result<()> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(gold);
    let mut map = HashMap::new();
    for (k, row) in rdr.deserialize::<GoldRow>().enumerate() {
        let row = row.map_err(|e| Error::MalformedRow {
            row: k + 2,
            msg: e.to_string(),
        })?;
        map.insert(row.task_id, row.gold);
    }
    for t in &mut vt.tasks {
        t.gold = map.get(&t.task_id).cloned();
    }
    Ok(())
}

/// Synthetic stand-in with the real table's shape: a share of ambiguous
/// tasks with rates in `[0.3, 0.7]`, the rest near-unanimous.
pub fn synthetic_votes(n_tasks: usize, n_votes: u32, r: &mut impl Rng) -> Result<VoteTable> {
    let beta = Beta::new(0.6, 12.0).map_err(|e| Error::Config(e.to_string()))?;
    let tasks = (0..n_tasks)
        .map(|i| {
            let rate: f64 = if r.random::<f64>() < 0.45 {
                r.random_range(0.3..0.7)
            } else if r.random::<bool>() {
                beta.sample(r)
            } else {
                1.0 - beta.sample(r)
            };
            let a = Binomial::new(n_votes as u64, rate)
                .map_err(|e| Error::Config(e.to_string()))?
                .sample(r) as u32;
            Ok(TaskVotes {
                task_id: format!("t{i:04}"),
                a,
                n: n_votes,
                gold: None,
            })
        })
        .collect::<Result<_>>()?;
    Ok(VoteTable { tasks })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Cohort {
    Aleatoric,
    Hidden,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditItem {
    pub task_id: String,
    pub cohort: Cohort,
    pub p_hat: f64,
    pub prov: u8,
    pub theta: f64,
    /// Votes agreeing with the provisional label, and total votes.
    pub agree: u32,
    pub n: u32,
    pub m: f64,
    pub s: f64,
}

impl AuditItem {
    pub fn l1(&self) -> f64 {
        self.agree as f64 / self.n as f64
    }

    pub fn l2(&self) -> f64 {
        let (a, n) = (self.agree as f64, self.n as f64);
        a * (a - 1.0) / (n * (n - 1.0))
    }
}

pub fn theta_of(p_hat: f64, prov: u8) -> f64 {
    if prov == 1 {
        p_hat
    } else {
        1.0 - p_hat
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CohortParams {
    pub ale_width: f64,
    pub extreme_thr: f64,
}

impl Default for CohortParams {
    fn default() -> Self {
        Self {
            ale_width: 0.22,
            extreme_thr: 0.12,
        }
    }
}

/// Balanced cohorts with provisional labels and agreement rates.
pub fn build_cohorts(vt: &VoteTable, params: CohortParams, r: &mut impl Rng) -> Result<Vec<AuditItem>> {
    if vt.tasks.is_empty() {
        return Err(Error::Empty("vote table"));
    }
    let mut ale: Vec<&TaskVotes> = vt
        .tasks
        .iter()
        .filter(|t| (t.p_hat() - 0.5).abs() <= params.ale_width)
        .collect();
    let mut hid: Vec<&TaskVotes> = vt
        .tasks
        .iter()
        .filter(|t| t.p_hat() <= params.extreme_thr || t.p_hat() >= 1.0 - params.extreme_thr)
        .collect();
    if ale.is_empty() || hid.is_empty() {
        return Err(Error::Empty("cohort"));
    }
    let k = ale.len().min(hid.len());
    ale.shuffle(r);
    hid.shuffle(r);
    ale.truncate(k);
    hid.truncate(k);
    let item = |t: &TaskVotes, cohort, prov: u8| AuditItem {
        task_id: t.task_id.clone(),
        cohort,
        p_hat: t.p_hat(),
        prov,
        theta: theta_of(t.p_hat(), prov),
        agree: if prov == 1 { t.a } else { t.n - t.a },
        n: t.n,
        m: 0.0,
        s: 0.0,
    };
    let mut out: Vec<AuditItem> = ale
        .iter()
        .map(|t| item(t, Cohort::Aleatoric, r.random::<bool>() as u8))
        .collect();
    let mut majority_half: Vec<bool> = (0..k).map(|i| i < k / 2).collect();
    majority_half.shuffle(r);
    for (t, keep_majority) in hid.iter().zip(majority_half) {
        let majority = (t.p_hat() >= 0.5) as u8;
        let prov = if keep_majority { majority } else { 1 - majority };
        out.push(item(t, Cohort::Hidden, prov));
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct XorParams {
    pub s_gap: f64,
    pub sigma_m: f64,
    pub sigma_s: f64,
}

impl Default for XorParams {
    fn default() -> Self {
        Self {
            s_gap: 0.35,
            sigma_m: 0.06,
            sigma_s: 0.08,
        }
    }
}

/// Cohort-aligned XOR pattern: identical marginals, cohort visible only jointly.
pub fn xor_scores(items: &mut [AuditItem], params: XorParams, r: &mut impl Rng) -> Result<()> {
    let lo = 0.5 - params.s_gap / 2.0;
    let hi = 0.5 + params.s_gap / 2.0;
    let noise = |sd: f64| Normal::new(0.0, sd).map_err(|e| Error::Config(e.to_string()));
    let (nm, ns) = (noise(params.sigma_m)?, noise(params.sigma_s)?);
    for it in items.iter_mut() {
        let b = r.random::<bool>();
        let is_ale = it.cohort == Cohort::Aleatoric;
        let m = if b { hi } else { lo };
        let s = if is_ale == b { hi } else { lo };
        it.m = (m + nm.sample(r)).clamp(0.0, 1.0);
        it.s = (s + ns.sample(r)).clamp(0.0, 1.0);
    }
    Ok(())
}

pub fn disagreement(theta: f64) -> f64 {
    2.0 * theta * (1.0 - theta)
}

/// Order of items by descending score, ties broken by `keys` ascending.
pub fn ranking(scores: &[f64], keys: &[&str]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then_with(|| keys[a].cmp(keys[b])));
    idx
}

/// `100 * mean g(theta)` over the top `ceil(f n)` items.
pub fn audit_yield(scores: &[f64], thetas: &[f64], keys: &[&str], f: f64) -> Result<f64> {
    if !(f > 0.0 && f <= 1.0) {
        return Err(Error::Domain {
            what: "budget fraction",
            value: f,
            lo: 0.0,
            hi: 1.0,
        });
    }
    if scores.is_empty() {
        return Err(Error::Empty("evaluation items"));
    }
    let top = ((f * scores.len() as f64).ceil() as usize).clamp(1, scores.len());
    let order = ranking(scores, keys);
    Ok(100.0 * order[..top].iter().map(|&i| disagreement(thetas[i])).sum::<f64>() / top as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMap {
    /// `1, m, .., m^4`.
    Mean,
    /// Monomials `m^i s^j` with `i + j <= 3`.
    Joint,
}

impl FeatureMap {
    pub fn features(&self, m: f64, s: f64) -> Vec<f64> {
        match self {
            FeatureMap::Mean => (0..=4).map(|i| m.powi(i)).collect(),
            FeatureMap::Joint => (0..=3)
                .flat_map(|i| (0..=3 - i).map(move |j| m.powi(i) * s.powi(j)))
                .collect(),
        }
    }
}

/// Moment calibrator for the audit task: ridge with an absolute penalty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentCalibrator {
    pub map: FeatureMap,
    pub beta1: Vec<f64>,
    pub beta2: Vec<f64>,
}

impl MomentCalibrator {
    pub fn fit(map: FeatureMap, items: &[&AuditItem], lambda: f64) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::Empty("calibration items"));
        }
        let rows: Vec<Vec<f64>> = items.iter().map(|it| map.features(it.m, it.s)).collect();
        let d = rows[0].len();
        let n = items.len() as f64;
        let x = DMatrix::from_fn(items.len(), d, |r, c| rows[r][c]);
        let mut g = x.transpose() * &x / n;
        for i in 0..d {
            g[(i, i)] += lambda;
        }
        let y = DMatrix::from_fn(items.len(), 2, |r, c| if c == 0 { items[r].l1() } else { items[r].l2() });
        let rhs = x.transpose() * y / n;
        let sol = g
            .cholesky()
            .ok_or_else(|| Error::Singular("audit calibrator".into()))?
            .solve(&rhs);
        Ok(Self {
            map,
            beta1: sol.column(0).iter().copied().collect(),
            beta2: sol.column(1).iter().copied().collect(),
        })
    }

    /// Clipped and projected `(eta1, eta2)`.
    pub fn predict(&self, m: f64, s: f64) -> Result<MomentPair> {
        let f = DVector::from_vec(self.map.features(m, s));
        let e1 = f.dot(&DVector::from_column_slice(&self.beta1));
        let e2 = f.dot(&DVector::from_column_slice(&self.beta2));
        project_moments(MomentPair::new(e1, e2))
    }
}

pub const METHODS: [&str; 8] = [
    "raw_m",
    "raw_s",
    "raw_1ms",
    "first_1d",
    "second_1d",
    "first_2d",
    "second_2d",
    "oracle",
];

/// Baselines that see only one coordinate or the mean-only calibrator.
pub const ONE_D_BASELINES: [&str; 5] = ["raw_m", "raw_s", "raw_1ms", "first_1d", "second_1d"];

/// Ranking scores of all eight methods for the evaluation items.
pub fn method_scores(
    cal: &[&AuditItem],
    eval: &[&AuditItem],
    lambda: f64,
) -> Result<Vec<(&'static str, Vec<f64>)>> {
    let c1 = MomentCalibrator::fit(FeatureMap::Mean, cal, lambda)?;
    let c2 = MomentCalibrator::fit(FeatureMap::Joint, cal, lambda)?;
    let p1: Vec<MomentPair> = eval.iter().map(|it| c1.predict(it.m, it.s)).collect::<Result<_>>()?;
    let p2: Vec<MomentPair> = eval.iter().map(|it| c2.predict(it.m, it.s)).collect::<Result<_>>()?;
    let first = |p: &[MomentPair]| p.iter().map(|q| 2.0 * q.eta1 * (1.0 - q.eta1)).collect();
    let second = |p: &[MomentPair]| p.iter().map(|q| 2.0 * q.eta1 - 2.0 * q.eta2).collect();
    Ok(vec![
        ("raw_m", eval.iter().map(|it| 2.0 * it.m * (1.0 - it.m)).collect()),
        ("raw_s", eval.iter().map(|it| it.s).collect()),
        ("raw_1ms", eval.iter().map(|it| 1.0 - it.s).collect()),
        ("first_1d", first(&p1)),
        ("second_1d", second(&p1)),
        ("first_2d", first(&p2)),
        ("second_2d", second(&p2)),
        ("oracle", eval.iter().map(|it| disagreement(it.theta)).collect()),
    ])
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub selection: f64,
    pub calibration: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            selection: 0.25,
            calibration: 0.35,
        }
    }
}

/// Disjoint `(selection, calibration, evaluation)` index sets.
pub fn partition(n: usize, fr: SplitFractions, r: &mut impl Rng) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(r);
    let ns = (fr.selection * n as f64) as usize;
    let nc = (fr.calibration * n as f64) as usize;
    let ev = idx.split_off(ns + nc);
    let cal = idx.split_off(ns);
    (idx, cal, ev)
}
