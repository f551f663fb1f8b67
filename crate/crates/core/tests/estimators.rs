use dritc_core::data::{BalanceSpec, BalanceTerm, Dataset, Estimand, SubjectRecord};
use dritc_core::estimators::{
    estimate, estimate_dr, estimate_gcomp, estimate_maic, estimate_naive, estimate_weighted_gcomp,
    Battery, EstimatorSpec, Method, MethodId,
};
use dritc_core::glm::{expit, logit, Link};
use dritc_core::rng;
use dritc_core::weighting::{entropy_balance, iow_weights_for, IowOptions};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// `x1` takes values 0, 1, 2; `x2` is continuous.
fn three_level(n: usize, seed: u64) -> Dataset {
    let mut r = rng::stream(seed, &[rng::tag::TEST, 21]);
    let rows = (0..n)
        .map(|_| {
            let x1 = f64::from(r.random_range(0..3u8));
            let x2: f64 = StandardNormal.sample(&mut r);
            let s = u8::from(r.random::<f64>() < expit(-0.4 + 0.6 * x1 + 0.3 * x2));
            let eta = -0.5 + 0.7 * x1 + 0.4 * x2 + 0.8 * f64::from(s);
            SubjectRecord {
                source: s,
                treatment: s,
                covariates: vec![x1, x2],
                outcome: Some(u8::from(r.random::<f64>() < expit(eta))),
            }
        })
        .collect();
    Dataset::from_records(rows, false).unwrap()
}

fn continuous(n: usize, p: usize, seed: u64) -> Dataset {
    let mut r = rng::stream(seed, &[rng::tag::TEST, 22]);
    let rows = (0..n)
        .map(|_| {
            let x: Vec<f64> = (0..p).map(|_| -> f64 { StandardNormal.sample(&mut r) }).collect();
            let s = u8::from(r.random::<f64>() < expit(0.3 * x.iter().sum::<f64>()));
            let eta = x[0] - 0.5 * x[p - 1] + f64::from(s);
            SubjectRecord {
                source: s,
                treatment: s,
                covariates: x,
                outcome: Some(u8::from(r.random::<f64>() < expit(eta))),
            }
        })
        .collect();
    Dataset::from_records(rows, false).unwrap()
}

fn spec_of(terms: &[BalanceTerm]) -> BalanceSpec {
    BalanceSpec::new(terms.to_vec()).unwrap()
}

fn point(b: &Battery, d: &Dataset, id: &str) -> f64 {
    let id: MethodId = id.parse().unwrap();
    b.run(d, None)
        .into_iter()
        .find(|r| r.id == id)
        .unwrap()
        .result
        .unwrap()
        .point
}

#[test]
fn battery_produces_sixteen_finite_estimates() {
    let d = continuous(600, 3, 1);
    let b = Battery::full(Estimand::Atc, BalanceSpec::main_effects(3));
    let out = b.run(&d, None);
    assert_eq!(out.len(), 16);
    for r in &out {
        let e = r.result.as_ref().unwrap();
        assert!(e.point.is_finite(), "{}", r.id);
        assert_eq!(e.id, r.id);
    }
}

#[test]
fn every_result_decomposes_exactly() {
    let d = continuous(400, 2, 2);
    for estimand in [Estimand::Atc, Estimand::Att] {
        let b = Battery::full(estimand, BalanceSpec::main_effects(2));
        for r in b.run(&d, None) {
            let e = r.result.unwrap();
            assert_eq!(e.point, logit(e.mu_treated) - logit(e.mu_control), "{}", r.id);
        }
    }
}

#[test]
fn battery_naive_matches_standalone() {
    let d = continuous(300, 2, 3);
    let b = Battery::full(Estimand::Atc, BalanceSpec::main_effects(2));
    let a = b.run(&d, None).into_iter().find(|r| r.id.to_string() == "naive").unwrap();
    assert_eq!(a.result.unwrap(), estimate_naive(&d).unwrap());
}

#[test]
fn battery_matches_single_method_runs() {
    let d = continuous(500, 3, 4);
    let spec = BalanceSpec::main_effects(3);
    let b = Battery::full(Estimand::Atc, spec.clone());
    for r in b.run(&d, None) {
        let single = EstimatorSpec::new(r.id.method, spec.clone()).link(r.id.link.unwrap_or(Link::Logit));
        let alone = estimate(&d, &single, None).unwrap();
        assert!((alone.point - r.result.unwrap().point).abs() < 1e-12, "{}", r.id);
    }
}

/// Three-level covariate only.
fn discrete(n: usize, seed: u64) -> Dataset {
    let d = three_level(n, seed);
    let rows = d
        .records()
        .map(|mut r| {
            r.covariates.truncate(1);
            r
        })
        .collect();
    Dataset::from_records(rows, false).unwrap()
}

#[test]
fn saturated_outcome_model_makes_augmentation_vanish() {
    let d = discrete(3000, 5);
    // weights constant within cells but not saturated; outcome model saturated
    let weights = BalanceSpec::main_effects(1);
    let outcome = spec_of(&[BalanceTerm::power(0, 1), BalanceTerm::power(0, 2)]);
    for link in [Link::Logit, Link::Cauchit] {
        let g = estimate_gcomp(&d, &outcome, link, None).unwrap().point;
        for w in [Method::DrIow, Method::DrIowNorm, Method::DrMaic] {
            let spec = EstimatorSpec::new(w, weights.clone())
                .link(link)
                .outcome_terms(outcome.clone());
            let dr = estimate(&d, &spec, None).unwrap().point;
            assert!((dr - g).abs() < 1e-10, "{w} {link}: {dr} vs {g}");
        }
    }
}

#[test]
fn saturated_weight_model_makes_augmentation_vanish() {
    let d = discrete(3000, 6);
    let weights = spec_of(&[BalanceTerm::power(0, 1), BalanceTerm::power(0, 2)]);
    let outcome = BalanceSpec::main_effects(1);
    let battery = Battery::full(Estimand::Atc, weights).with_outcome_terms(outcome);
    for (dr, plain) in [("dr_iow", "iow"), ("dr_iow_norm", "iow_norm"), ("dr_maic", "maic")] {
        for link in ["logit", "cauchit"] {
            let a = point(&battery, &d, &format!("{dr}_{link}"));
            let b = point(&battery, &d, plain);
            assert!((a - b).abs() < 1e-9, "{dr}_{link}: {a} vs {b}");
        }
    }
}

#[test]
fn identical_groups_give_symmetric_atc_and_att() {
    // every covariate profile appears once in each group
    let base = continuous(200, 2, 7);
    let mut r = rng::stream(7, &[rng::tag::TEST, 23]);
    let mut rows = Vec::new();
    for rec in base.records() {
        for s in [1u8, 0] {
            let p = if s == 1 { 0.6 } else { 0.35 };
            rows.push(SubjectRecord {
                source: s,
                treatment: s,
                covariates: rec.covariates.clone(),
                outcome: Some(u8::from(r.random::<f64>() < p)),
            });
        }
    }
    let d = Dataset::from_records(rows, false).unwrap();
    let spec = BalanceSpec::main_effects(2);
    let naive = estimate_naive(&d).unwrap().point;
    let atc = Battery::full(Estimand::Atc, spec.clone()).run(&d, None);
    let att = Battery::full(Estimand::Att, spec.clone()).run(&d, None);
    for (a, t) in atc.iter().zip(&att) {
        let (a, t) = (a.result.as_ref().unwrap(), t.result.as_ref().unwrap());
        // a logit fit with intercept reproduces the observed mean exactly
        let tol = if a.id.link == Some(Link::Cauchit) { 5e-3 } else { 1e-9 };
        assert!((a.point - t.point).abs() < tol, "{}: {} vs {}", a.id, a.point, t.point);
        if !a.id.method.uses_outcome_model() {
            assert!((a.point - naive).abs() < 1e-9);
        }
    }
    // constant propensity of one half: all weights one
    for estimand in [Estimand::Atc, Estimand::Att] {
        let w = iow_weights_for(&d, &spec, false, estimand, &IowOptions::default()).unwrap();
        assert!(w.weights.iter().all(|v| (v - 1.0).abs() < 1e-9));
    }
    // uniform weights: weighted and plain G-computation coincide
    for link in [Link::Logit, Link::Cauchit] {
        let g = estimate_gcomp(&d, &spec, link, None).unwrap().point;
        let wg = estimate_weighted_gcomp(&d, Method::Maic, link, &spec, None).unwrap().point;
        assert!((g - wg).abs() < 1e-9);
    }
}

#[test]
fn dr_and_weighted_gcomp_are_close_under_a_correct_logit_model() {
    let d = continuous(4000, 2, 8);
    let spec = BalanceSpec::main_effects(2);
    for w in [Method::IowNorm, Method::Maic] {
        let dr = estimate_dr(&d, w, Link::Logit, &spec, None).unwrap().point;
        let wg = estimate_weighted_gcomp(&d, w, Link::Logit, &spec, None).unwrap().point;
        assert!((dr - wg).abs() < 0.01, "{w}: {dr} vs {wg}");
    }
}

#[test]
fn invalid_weight_choices_are_rejected() {
    let d = continuous(100, 1, 9);
    let spec = BalanceSpec::main_effects(1);
    assert!(estimate_dr(&d, Method::Gcomp, Link::Logit, &spec, None).is_err());
    assert!(estimate_weighted_gcomp(&d, Method::Iow, Link::Logit, &spec, None).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn hajek_means_stay_within_observed_range(seed in 0u64..100_000, n in 60usize..400) {
        let d = continuous(n, 2, seed);
        let y = d.group_outcomes(1).unwrap();
        let lo = y.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let b = Battery::new(
            vec!["iow_norm".parse().unwrap(), "maic".parse().unwrap()],
            Estimand::Atc,
            BalanceSpec::main_effects(2),
        );
        for r in b.run(&d, None) {
            if let Ok(e) = r.result {
                prop_assert!(e.mu_treated >= lo && e.mu_treated <= hi);
            }
        }
    }

    #[test]
    fn rescaled_entropy_weights_leave_the_estimate_unchanged(seed in 0u64..100_000, k in 1e-6f64..1e6) {
        let d = continuous(300, 2, seed);
        let spec = BalanceSpec::main_effects(2);
        let c = spec.matrix(&d, d.group(1));
        let target = spec.matrix(&d, d.group(0)).column_means();
        let w = entropy_balance(&c, &target).unwrap();
        let y = d.group_outcomes(1).unwrap();
        let mu: f64 = w.weights.iter().zip(&y).map(|(w, y)| w * y).sum();
        let scaled: Vec<f64> = w.weights.iter().map(|v| v * k).collect();
        let total: f64 = scaled.iter().sum();
        let mu_k: f64 = scaled.iter().zip(&y).map(|(w, y)| w / total * y).sum();
        prop_assert!((mu - mu_k).abs() < 1e-12);
        let est = estimate_maic(&d, &spec, None).unwrap();
        prop_assert!((est.mu_treated - mu).abs() < 1e-12);
    }
}
