//! Acceptance checks at the documented desk scale.
//!
//! Prints one `PASS`/`FAIL`/`SKIP` line per criterion. The process exits
//! non-zero on a failure only when `SECHCAL_ACCEPTANCE_STRICT=1`, so known
//! shortfalls stay visible without breaking the workspace build.
//!
//! `SECHCAL_EXP4_DATASET` (and optionally `SECHCAL_EXP4_GOLD`) point the
//! audit check at the real vote table.

use std::time::Instant;

use sechcal::crowd::ONE_D_BASELINES;
use sechcal::harness::config::{Exp1Config, Exp2Config, Exp3Config, Exp4Config, OracleConfig, PropertiesConfig};
use sechcal::harness::exp1::run_exp1;
use sechcal::harness::exp2::run_exp2;
use sechcal::harness::exp3::run_exp3;
use sechcal::harness::exp4::{run_exp4, REFERENCE, WIN_BUDGET};
use sechcal::harness::properties::{bernstein_slope, run_properties};
use sechcal::oracle::{boundary_ce2_mc, build_surface, build_world_surface, ce2_pert, lower_bound_gap};
use sechcal::dgp::{Exp1World, Exp1WorldConfig};
use sechcal::poly::theta_of;
use sechcal::Score2;

struct Report {
    failed: Vec<String>,
}

impl Report {
    fn line(&mut self, name: &str, ok: bool, detail: String) {
        println!("{} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
        if !ok {
            self.failed.push(name.to_string());
        }
    }

    fn skip(&self, name: &str, why: &str) {
        println!("SKIP {name}: {why}");
    }

    fn error(&mut self, name: &str, e: sechcal::Error) {
        self.line(name, false, format!("error: {e}"));
    }
}

fn rate_check(rep: &mut Report) {
    let cfg = Exp1Config::default();
    let t = Instant::now();
    let res = match run_exp1(&cfg) {
        Ok(r) => r,
        Err(e) => return rep.error("rate", e),
    };
    let mins = t.elapsed().as_secs_f64() / 60.0;
    let h = cfg.h[0];
    let get = |m: &str| res.summary_for(m, h).expect("method summarised");
    let (poly, buckets, nw) = (get("poly"), get("buckets"), get("nw"));
    rep.line("rate.poly_slope", poly.slope <= -0.5, format!("slope {:.3} <= -0.5", poly.slope));
    for s in [buckets, nw] {
        let ok = (-0.6..=-0.25).contains(&s.slope);
        rep.line(&format!("rate.{}_slope", s.method), ok, format!("slope {:.3} in [-0.6, -0.25]", s.slope));
    }
    let e = |s: &sechcal::harness::exp1::RateSummary| s.error_at(20_000).expect("n=2e4 in grid");
    let (ep, eb, en) = (e(poly), e(buckets), e(nw));
    rep.line(
        "rate.poly_beats_baselines_at_2e4",
        ep < eb && ep < en,
        format!("poly {ep:.2e}, buckets {eb:.2e}, nw {en:.2e}"),
    );
    rep.line("rate.runtime", mins < 30.0, format!("{mins:.1} min < 30"));
}

fn oracle_fidelity(rep: &mut Report) {
    let world = Exp1World::new(&Exp1WorldConfig::default(), 1).expect("world");
    let oc = OracleConfig::default();
    let h = 1.0 / 16.0;
    let build = |seed| build_world_surface(&world, h, 1 << 16, oc.grid, seed).and_then(|ts| ce2_pert(&ts));
    match (build(101), build(202)) {
        (Ok(a), Ok(b)) => rep.line(
            "oracle.replicates",
            (a - b).abs() <= 2e-4,
            format!("|{a:.6} - {b:.6}| = {:.2e} <= 2e-4", (a - b).abs()),
        ),
        (Err(e), _) | (_, Err(e)) => rep.error("oracle.replicates", e),
    }
    let p = 1.0 / 16.0;
    let pts = [(Score2 { m: 1.0, sigma2: 0.0 }, p)];
    let grid = build_surface(&pts, oc.grid, h, 0).and_then(|ts| ce2_pert(&ts));
    let mc = boundary_ce2_mc(p, h, 10_000_000, 5);
    match (grid, mc) {
        (Ok(g), Ok((m, se))) => rep.line(
            "oracle.boundary_mc",
            (g - m).abs() <= 3.0 * se,
            format!("grid {g:.6}, mc {m:.6} (se {se:.1e}), |diff| {:.2e} <= {:.2e}", (g - m).abs(), 3.0 * se),
        ),
        (Err(e), _) | (_, Err(e)) => rep.error("oracle.boundary_mc", e),
    }
}

fn lower_bound(rep: &mut Report) {
    let eps = 1.0 / 16.0;
    for (h, name) in [(1.0 / 16.0, "lower_bound.h1/16"), (1.0 / 64.0, "lower_bound.h1/64")] {
        match lower_bound_gap(h, eps, 10_000_000, 3) {
            Ok((gap, se)) => {
                let need = eps / 2.0 - 3.0 * se;
                rep.line(name, gap >= need, format!("gap {gap:.5} >= {need:.5}"));
            }
            Err(e) => rep.error(name, e),
        }
    }
}

fn bernstein(rep: &mut Report) {
    let ls: Vec<usize> = (4..=40).collect();
    for (h, name) in [(1.0 / 16.0, "bernstein.h1/16"), (1.0 / 64.0, "bernstein.h1/64")] {
        let bound = -theta_of(h).expect("theta").ln() + 0.02;
        match bernstein_slope(h, 0.5, &ls) {
            Ok(s) => rep.line(name, s <= bound, format!("slope {s:.4} <= {bound:.4}")),
            Err(e) => rep.error(name, e),
        }
    }
}

fn recalibration(rep: &mut Report) {
    let cfg = Exp2Config::default();
    let res = match run_exp2(&cfg) {
        Ok(r) => r,
        Err(e) => return rep.error("recalibration", e),
    };
    let all = |f: &dyn Fn(&sechcal::harness::exp2::Exp2Seed) -> bool| res.seeds.iter().all(f);
    let fmt = |f: &dyn Fn(&sechcal::harness::exp2::Exp2Seed) -> f64| {
        res.seeds.iter().map(|s| format!("{:.3}", f(s))).collect::<Vec<_>>().join(" ")
    };
    rep.line("recalibration.seed_count", res.seeds.len() >= 5, format!("{} seeds >= 5", res.seeds.len()));
    rep.line(
        "recalibration.raw_pearson",
        all(&|s| s.pearson_raw < 0.3),
        format!("[{}] < 0.3", fmt(&|s| s.pearson_raw)),
    );
    rep.line(
        "recalibration.recal_pearson",
        all(&|s| s.pearson_recal > 0.6),
        format!("[{}] > 0.6", fmt(&|s| s.pearson_recal)),
    );
    rep.line(
        "recalibration.ce2_drop",
        all(&|s| s.ce2_raw >= 0.3 && s.ce2_recal_binned < 0.08),
        format!("raw [{}] >= 0.3, recalibrated [{}] < 0.08", fmt(&|s| s.ce2_raw), fmt(&|s| s.ce2_recal_binned)),
    );
}

fn decision_utility(rep: &mut Report) {
    let res = match run_exp3(&Exp3Config::default()) {
        Ok(r) => r,
        Err(e) => return rep.error("decision", e),
    };
    let curve = |m: &str| res.curve(m).expect("method present");
    let oracle = &curve("oracle").mean;
    let second = &curve("second_2d").mean;
    let (k, gap) = (0..res.taus.len())
        .map(|k| (k, (second[k] - oracle[k]).abs() / oracle[k].abs()))
        .fold((0, 0.0), |a, b| if b.1 > a.1 { b } else { a });
    rep.line(
        "decision.second_2d_tracks_oracle",
        gap <= 0.15,
        format!("worst relative gap {:.3} at tau {:.3} <= 0.15", gap, res.taus[k]),
    );
    let raw = &curve("raw_mv").mean;
    let (g0, g6) = (raw[res.tau_index(0.0)], raw[res.tau_index(0.06)]);
    rep.line(
        "decision.raw_plugin_collapse",
        g6 < 0.5 * g0,
        format!("gain(0.06) {g6:.3} < 0.5 * gain(0) {:.3}", 0.5 * g0),
    );
    let mut worst = (String::new(), 0.0, 0.0);
    for m in ["raw_m", "first_1d", "second_1d"] {
        let c = &curve(m).mean;
        for (k, &tau) in res.taus.iter().enumerate() {
            if tau >= 0.02 - 1e-12 {
                let ratio = c[k] / oracle[k];
                if ratio > worst.1 {
                    worst = (m.to_string(), ratio, tau);
                }
            }
        }
    }
    rep.line(
        "decision.one_d_negligible",
        worst.1 <= 0.05,
        format!("worst 1D/oracle ratio {:.3} ({} at tau {:.3}) <= 0.05", worst.1, worst.0, worst.2),
    );
}

fn audit(rep: &mut Report) {
    let cfg = Exp4Config {
        surrogate: true,
        ..Default::default()
    };
    match run_exp4(&cfg) {
        Ok(res) => {
            let worst = ONE_D_BASELINES
                .iter()
                .map(|m| (m, res.lift(m).expect("lift").win_fraction))
                .fold(("", 1.0), |a, (m, w)| if w < a.1 { (m, w) } else { a });
            rep.line(
                "audit.surrogate_win_fraction",
                worst.1 >= 0.9,
                format!("{REFERENCE} vs worst baseline {} at f={WIN_BUDGET}: {:.3} >= 0.9", worst.0, worst.1),
            );
        }
        Err(e) => rep.error("audit.surrogate_win_fraction", e),
    }
    let Ok(path) = std::env::var("SECHCAL_EXP4_DATASET") else {
        return rep.skip("audit.real_dataset", "set SECHCAL_EXP4_DATASET to the vote table");
    };
    let cfg = Exp4Config {
        dataset: Some(path.into()),
        gold: std::env::var("SECHCAL_EXP4_GOLD").ok().map(Into::into),
        ..Default::default()
    };
    match run_exp4(&cfg) {
        Ok(res) => {
            let y = |m: &str| res.mean_yield(m, WIN_BUDGET).expect("yield");
            let mut checks = vec![("second_2d", 46.4), ("first_2d", 30.9), ("oracle", 49.8)];
            checks.extend(ONE_D_BASELINES.iter().map(|m| (*m, 26.0)));
            for (m, target) in checks {
                let v = y(m);
                rep.line(
                    &format!("audit.real_dataset.{m}"),
                    (v - target).abs() <= 2.0,
                    format!("{v:.1} within 2 of {target}"),
                );
            }
        }
        Err(e) => rep.error("audit.real_dataset", e),
    }
}

fn properties(rep: &mut Report) {
    match run_properties(&PropertiesConfig::default()) {
        Ok(checks) => {
            for c in checks {
                rep.line(
                    &format!("properties.{}", c.name),
                    c.passed,
                    format!("worst {:.3e} <= {:.1e} over {} cases", c.worst, c.tolerance, c.cases),
                );
            }
        }
        Err(e) => rep.error("properties", e),
    }
}

fn main() {
    let mut rep = Report { failed: Vec::new() };
    let t = Instant::now();
    properties(&mut rep);
    bernstein(&mut rep);
    lower_bound(&mut rep);
    oracle_fidelity(&mut rep);
    recalibration(&mut rep);
    audit(&mut rep);
    decision_utility(&mut rep);
    rate_check(&mut rep);
    println!(
        "acceptance: {} failing criteria in {:.1} min{}",
        rep.failed.len(),
        t.elapsed().as_secs_f64() / 60.0,
        if rep.failed.is_empty() { String::new() } else { format!(" ({})", rep.failed.join(", ")) }
    );
    if !rep.failed.is_empty() && std::env::var("SECHCAL_ACCEPTANCE_STRICT").as_deref() == Ok("1") {
        std::process::exit(1);
    }
}
