use std::fs::File;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};

use sechcal::crowd::{
    attach_gold, audit_yield, build_cohorts, ingest_votes, synthetic_votes, theta_of, xor_scores, AuditItem, Cohort,
    CohortParams, TaskVotes, VoteTable, XorParams,
};
use sechcal::harness::stats::{ks_critical_two, ks_two_sample, mean};
use sechcal::Error;

const FIXTURE: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/votes_mini.csv");
const GOLD: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/gold_mini.csv");

#[test]
fn fixture_round_trips_to_hand_counts() {
    let mut vt = ingest_votes(File::open(FIXTURE).unwrap(), "positive").unwrap();
    // t05 has four votes and is dropped.
    let expected = [
        ("t01", 3, 5),
        ("t02", 6, 6),
        ("t03", 0, 7),
        ("t04", 3, 8),
        ("t06", 1, 6),
        ("t07", 5, 10),
        ("t08", 9, 10),
        ("t09", 1, 10),
        ("t10", 3, 5),
        ("t11", 2, 8),
        ("t12", 5, 12),
    ];
    let got: Vec<(&str, u32, u32)> = vt.tasks.iter().map(|t| (t.task_id.as_str(), t.a, t.n)).collect();
    assert_eq!(got, expected);
    assert!((vt.tasks[0].p_hat() - 0.6).abs() < 1e-15);

    attach_gold(&mut vt, File::open(GOLD).unwrap()).unwrap();
    assert_eq!(vt.tasks[1].gold.as_deref(), Some("positive"));
    assert_eq!(vt.tasks[2].gold.as_deref(), Some("negative"));
    assert_eq!(vt.tasks[4].gold.as_deref(), Some("neutral"));

    let neutral = ingest_votes(File::open(FIXTURE).unwrap(), "neutral").unwrap();
    assert_eq!(neutral.tasks.iter().map(|t| t.a).sum::<u32>(), 11);
}

#[test]
fn ingest_errors() {
    let few = "task_id,worker_id,response\na,w1,x\na,w2,x\n";
    assert!(matches!(ingest_votes(few.as_bytes(), "x"), Err(Error::Empty(_))));
    let bad = "task_id,worker_id\na,w1\n";
    assert!(matches!(ingest_votes(bad.as_bytes(), "x"), Err(Error::MalformedRow { row: 2, .. })));
}

#[test]
fn provisional_label_examples() {
    assert_eq!(theta_of(0.5, 0), 0.5);
    assert_eq!(theta_of(0.5, 1), 0.5);
    assert_eq!(theta_of(0.95, 1), 0.95);
    assert!((theta_of(0.95, 0) - 0.05).abs() < 1e-15);
}

fn surrogate_items(seed: u64) -> Vec<AuditItem> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let vt = synthetic_votes(3000, 20, &mut r).unwrap();
    build_cohorts(&vt, CohortParams::default(), &mut r).unwrap()
}

#[test]
fn cohorts_are_balanced_with_different_second_moments() {
    let items = surrogate_items(1);
    let split = |c: Cohort| -> Vec<f64> { items.iter().filter(|i| i.cohort == c).map(|i| i.theta).collect() };
    let (ale, hid) = (split(Cohort::Aleatoric), split(Cohort::Hidden));
    assert_eq!(ale.len(), hid.len());
    assert!((mean(&ale) - 0.5).abs() < 0.05);
    assert!((mean(&hid) - 0.5).abs() < 0.05);
    let sq = |v: &[f64]| mean(&v.iter().map(|t| t * t).collect::<Vec<_>>());
    assert!(sq(&hid) - sq(&ale) >= 0.1);
    for it in &items {
        assert!(it.l2() <= it.l1() && (0.0..=1.0).contains(&it.l2()));
        assert!((it.l1() - it.theta).abs() < 1e-12);
    }
}

#[test]
fn one_sided_table_has_no_cohort() {
    let vt = VoteTable {
        tasks: vec![TaskVotes {
            task_id: "a".into(),
            a: 5,
            n: 10,
            gold: None,
        }],
    };
    let mut r = ChaCha8Rng::seed_from_u64(0);
    assert!(matches!(build_cohorts(&vt, CohortParams::default(), &mut r), Err(Error::Empty(_))));
}

#[test]
fn xor_marginals_match_across_cohorts() {
    let mut items = surrogate_items(2);
    items.truncate(items.len().min(2000));
    let mut r = ChaCha8Rng::seed_from_u64(3);
    xor_scores(&mut items, XorParams::default(), &mut r).unwrap();
    let pick = |c: Cohort, f: fn(&AuditItem) -> f64| -> Vec<f64> {
        items.iter().filter(|i| i.cohort == c).map(f).collect()
    };
    for f in [|i: &AuditItem| i.m, |i: &AuditItem| i.s] {
        let (a, b) = (pick(Cohort::Aleatoric, f), pick(Cohort::Hidden, f));
        assert!(ks_two_sample(&a, &b) < ks_critical_two(a.len(), b.len()));
    }
    assert!(items.iter().all(|i| (0.0..=1.0).contains(&i.m) && (0.0..=1.0).contains(&i.s)));
}

/// Mann-Whitney AUC of `score` for separating aleatoric from hidden items.
fn auc(items: &[AuditItem], score: impl Fn(&AuditItem) -> f64) -> f64 {
    let pos: Vec<f64> = items.iter().filter(|i| i.cohort == Cohort::Aleatoric).map(&score).collect();
    let neg: Vec<f64> = items.iter().filter(|i| i.cohort == Cohort::Hidden).map(&score).collect();
    let mut acc = 0.0;
    for p in &pos {
        for q in &neg {
            acc += if p > q { 1.0 } else if p == q { 0.5 } else { 0.0 };
        }
    }
    acc / (pos.len() * neg.len()) as f64
}

#[test]
fn noiseless_xor_is_blind_to_either_coordinate() {
    let mut items = surrogate_items(4);
    let mut r = ChaCha8Rng::seed_from_u64(5);
    let noiseless = XorParams {
        sigma_m: 0.0,
        sigma_s: 0.0,
        ..Default::default()
    };
    xor_scores(&mut items, noiseless, &mut r).unwrap();
    let (lo, hi) = (0.5 - 0.175, 0.5 + 0.175);
    for it in &items {
        assert!([lo, hi].contains(&it.m) && [lo, hi].contains(&it.s));
        assert_eq!(it.cohort == Cohort::Aleatoric, (it.m == hi) == (it.s == hi));
    }
    for a in [auc(&items, |i| i.m), auc(&items, |i| -i.m), auc(&items, |i| i.s)] {
        assert!(a <= 0.55, "auc {a}");
    }
    assert_eq!(auc(&items, |i| ((i.m > 0.5) == (i.s > 0.5)) as u8 as f64), 1.0);
}

#[test]
fn yield_examples() {
    let keys = ["a", "b", "c", "d"];
    let half = [0.5; 4];
    for f in [0.1, 0.5, 1.0] {
        assert!((audit_yield(&[0.3, 0.1, 0.2, 0.4], &half, &keys, f).unwrap() - 50.0).abs() < 1e-12);
    }
    let thetas = [0.5, 0.1, 0.9, 0.0];
    let oracle: Vec<f64> = thetas.iter().map(|t| 2.0 * t * (1.0 - t)).collect();
    assert!((audit_yield(&oracle, &thetas, &keys, 0.25).unwrap() - 50.0).abs() < 1e-12);
    // Tied scores: the smaller task id is audited first.
    assert_eq!(audit_yield(&[1.0; 4], &thetas, &keys, 0.25).unwrap(), 50.0);
    assert!(audit_yield(&oracle, &thetas, &keys, 0.0).is_err());
    assert!(audit_yield(&[], &[], &[], 0.5).is_err());
}

#[test]
fn all_pairs_labels_are_unbiased() {
    let mut r = ChaCha8Rng::seed_from_u64(6);
    for theta in [0.1, 0.5, 0.9] {
        for n in [5u32, 20] {
            let bin = Binomial::new(n as u64, theta).unwrap();
            let reps = 200_000;
            let (mut s1, mut s2) = (0.0, 0.0);
            for _ in 0..reps {
                let a = bin.sample(&mut r) as u32;
                let it = AuditItem {
                    task_id: String::new(),
                    cohort: Cohort::Hidden,
                    p_hat: 0.0,
                    prov: 1,
                    theta,
                    agree: a,
                    n,
                    m: 0.0,
                    s: 0.0,
                };
                s1 += it.l1();
                s2 += it.l2();
            }
            let (m1, m2) = (s1 / reps as f64, s2 / reps as f64);
            let se = (0.25 / reps as f64).sqrt();
            assert!((m1 - theta).abs() < 4.0 * se, "theta {theta} n {n}: {m1}");
            assert!((m2 - theta * theta).abs() < 4.0 * se, "theta {theta} n {n}: {m2}");
        }
    }
}

proptest! {
    #[test]
    fn yield_is_invariant_under_monotone_maps(
        scores in prop::collection::vec(0.0f64..1.0, 5..60),
        f in 0.01f64..=1.0,
        seed in 0u64..100,
    ) {
        let n = scores.len();
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let vt = synthetic_votes(n, 10, &mut r).unwrap();
        let thetas: Vec<f64> = vt.tasks.iter().map(|t| t.p_hat()).collect();
        let keys: Vec<&str> = vt.tasks.iter().map(|t| t.task_id.as_str()).collect();
        let base = audit_yield(&scores, &thetas, &keys, f).unwrap();
        let mapped: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 7.0).collect();
        prop_assert_eq!(base, audit_yield(&mapped, &thetas, &keys, f).unwrap());
    }
}
