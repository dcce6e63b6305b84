mod common;

use std::collections::BTreeMap;

use common::budget::{grid_best, random_profiles};
use patrol::budget::{
    allocate, allocate_with_lambda, enforce_budget, fit_compute_model, overrun_score, BudgetError, BudgetVerdict,
    StageProfile,
};
use patrol::bus::{Stage, StageLatencyTrace};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn four(mins: [f64; 4], means: [f64; 4]) -> Vec<StageProfile> {
    Stage::ALL
        .iter()
        .zip(mins.iter().zip(means))
        .map(|(&s, (&min, mean))| StageProfile::new(s, min, mean).unwrap())
        .collect()
}

#[test]
fn hundred_random_profiles_fill_budget() {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    for _ in 0..100 {
        let (profiles, tenths) = random_profiles(&mut rng);
        let t_max = tenths as f64 / 10.0;
        let a = allocate(&profiles, t_max).unwrap();
        assert_eq!(a.total_ns(), a.t_max_ns());
        for p in &profiles {
            assert!(a.timeout_s(p.stage).unwrap() >= p.min_s);
        }
    }
}

#[test]
fn never_worse_than_grid_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..40 {
        let (profiles, tenths) = random_profiles(&mut rng);
        let a = allocate(&profiles, tenths as f64 / 10.0).unwrap();
        let ours = overrun_score(&profiles, &a.timeouts_s());
        assert!(ours <= grid_best(&profiles, tenths) + 1e-9, "{ours} vs grid");
    }
}

#[test]
fn single_stage_takes_all() {
    let p = [StageProfile::new(Stage::Blip, 0.5, 0.9).unwrap()];
    let a = allocate(&p, 3.25).unwrap();
    assert_eq!(a.timeout_s(Stage::Blip), Some(3.25));
    assert_eq!(a.timeout_s(Stage::Llm), None);
}

#[test]
fn infeasible_minimums() {
    let p = four([1.0, 2.0, 3.0, 4.0], [1.5, 2.5, 3.5, 4.5]);
    assert!(matches!(allocate(&p, 9.0), Err(BudgetError::Infeasible { .. })));
    assert!(allocate(&p, 10.0).is_ok());
}

#[test]
fn profile_validation() {
    assert!(StageProfile::new(Stage::Camera, 0.0, 1.0).is_err());
    assert!(StageProfile::new(Stage::Camera, 2.0, 1.0).is_err());
    let dup = [StageProfile::new(Stage::Llm, 1.0, 2.0).unwrap(); 2];
    assert!(matches!(
        allocate(&dup, 5.0),
        Err(BudgetError::DuplicateStage(Stage::Llm))
    ));
    assert_eq!(allocate(&[], 5.0), Err(BudgetError::NoProfiles));
    let p = four([1.0; 4], [2.0; 4]);
    assert!(matches!(allocate(&p, f64::NAN), Err(BudgetError::BadTmax(_))));
    let bad = BTreeMap::from([(Stage::Llm, -1.0)]);
    assert_eq!(
        allocate_with_lambda(&p, 8.0, &bad),
        Err(BudgetError::BadLambda(Stage::Llm))
    );
}

#[test]
fn zero_lambda_splits_evenly() {
    let p = four([1.0; 4], [1.0; 4]);
    let a = allocate(&p, 6.0).unwrap();
    for s in Stage::ALL {
        assert_eq!(a.timeout_s(s), Some(1.5));
    }
}

#[test]
fn exact_fit_through_two_points() {
    let fit = fit_compute_model(&[(1.0, 10.0), (2.0, 5.0)]).unwrap();
    assert!((fit.k - 10.0).abs() < 1e-12);
    assert!(fit.residual_norm < 1e-12);
}

#[test]
fn fit_ignores_order_and_duplicates() {
    let a = fit_compute_model(&[(1.0, 12.0), (3.0, 4.0), (4.0, 3.0)]).unwrap();
    let b = fit_compute_model(&[(4.0, 3.0), (1.0, 12.0), (3.0, 4.0)]).unwrap();
    assert!((a.k - b.k).abs() < 1e-12);
    let d = fit_compute_model(&[(2.0, 6.0), (2.0, 6.0), (2.0, 6.0)]).unwrap();
    assert!((d.k - 12.0).abs() < 1e-12);
}

#[test]
fn noisy_fit_recovers_k() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let samples: Vec<(f64, f64)> = (1..=40)
        .map(|i| {
            let c = i as f64 * 0.25;
            (c, 12.0 / c * (1.0 + rng.random_range(-0.05..0.05)))
        })
        .collect();
    let fit = fit_compute_model(&samples).unwrap();
    assert!((fit.k - 12.0).abs() / 12.0 < 0.05, "{}", fit.k);
}

#[test]
fn doubling_compute_halves_time() {
    let fit = fit_compute_model(&[(1.0, 8.0), (2.0, 4.0), (4.0, 2.0)]).unwrap();
    assert!((fit.predict(3.0) * 2.0 - fit.predict(1.5)).abs() < 1e-12);
}

#[test]
fn fit_rejects_bad_input() {
    assert_eq!(
        fit_compute_model(&[(1.0, 2.0)]),
        Err(BudgetError::InsufficientSamples(1))
    );
    assert!(matches!(
        fit_compute_model(&[(0.0, 1.0), (1.0, 1.0)]),
        Err(BudgetError::InvalidCompute(_))
    ));
}

#[test]
fn enforcement_boundary() {
    let p = four([0.5; 4], [1.0; 4]);
    let a = allocate(&p, 8.0).unwrap();
    let at = StageLatencyTrace::scripted(2.0, 2.0, 2.0, 2.0);
    assert_eq!(enforce_budget(&at, &a), BudgetVerdict::WithinBudget);
    let over = StageLatencyTrace::scripted(2.0, 2.000000001, 2.0, 1.0);
    assert_eq!(enforce_budget(&over, &a), BudgetVerdict::StageOverrun(Stage::Blip));
}

#[test]
fn partial_budget_flags_total() {
    let p = [StageProfile::new(Stage::Llm, 1.0, 2.0).unwrap()];
    let a = allocate(&p, 3.0).unwrap();
    let t = StageLatencyTrace::scripted(1.0, 1.0, 1.0, 2.0);
    assert_eq!(enforce_budget(&t, &a), BudgetVerdict::TotalOverrun);
}

proptest! {
    #[test]
    fn verdict_matches_oracle(
        mins in prop::array::uniform4(0.1..2.0f64),
        excess in prop::array::uniform4(0.0..2.0f64),
        extra in 0.0..5.0f64,
        spent in prop::array::uniform4(0.0..6.0f64),
    ) {
        let means = [0, 1, 2, 3].map(|i| mins[i] + excess[i]);
        let p = four(mins, means);
        let a = allocate(&p, mins.iter().sum::<f64>() + extra).unwrap();
        let t = StageLatencyTrace::scripted(spent[0], spent[1], spent[2], spent[3]);
        let oracle = Stage::ALL
            .iter()
            .find(|&&s| t.stage_ns(s) > a.timeout_ns(s).unwrap())
            .map_or(BudgetVerdict::WithinBudget, |&s| BudgetVerdict::StageOverrun(s));
        let verdict = enforce_budget(&t, &a);
        prop_assert_eq!(verdict, oracle);
        // All stages within their timeouts implies the total is within t_max.
        if verdict == BudgetVerdict::WithinBudget {
            prop_assert!(t.total_ns() <= a.t_max_ns());
        }
    }

    #[test]
    fn allocation_sums_exactly(
        mins in prop::array::uniform4(0.01..3.0f64),
        excess in prop::array::uniform4(0.0..3.0f64),
        extra in 0.0..10.0f64,
    ) {
        let means = [0, 1, 2, 3].map(|i| mins[i] + excess[i]);
        let p = four(mins, means);
        let a = allocate(&p, mins.iter().sum::<f64>() + extra + 1e-6).unwrap();
        prop_assert_eq!(a.total_ns(), a.t_max_ns());
        for s in &p {
            prop_assert!(a.timeout_ns(s.stage).unwrap() >= (s.min_s * 1e9).round() as u64);
        }
    }
}
