use proptest::prelude::*;
use shufflesgd::bounds::{
    descent_bound_check, initial_suboptimality, lemma_consensus_check, sigma_tau_bound, stepsize_limit,
    tau_from_stepsize, theorem_rate_bound, NOISE_CONSTANT,
};
use shufflesgd::engine::{run, RecordPolicy};
use shufflesgd::ordering::{make_schedule, OrderingStrategy};
use shufflesgd::problems::{quadratic_new, FiniteSumProblem};

const SQRT3: f64 = 1.732_050_807_568_877_2;

proptest! {
    #[test]
    fn with_replacement_rate_is_linear_in_step(l in 0.01f64..100.0, frac in 0.001f64..1.0, s in 0.0f64..10.0) {
        let gamma = frac * stepsize_limit(l);
        let tau = tau_from_stepsize(l, gamma).unwrap();
        let bound = sigma_tau_bound(&OrderingStrategy::WithReplacement, tau, 10, s, None).unwrap();
        let rate = theorem_rate_bound(1.0, gamma, 100, l, bound).unwrap();
        prop_assert!(rate.noise_term <= 4.0 * NOISE_CONSTANT / (8.0 * SQRT3) * l * gamma * s * (1.0 + 1e-12));
    }

    #[test]
    fn single_function_noise_is_step_independent(l in 0.01f64..100.0, frac in 0.0001f64..1.0, s1 in 1e-6f64..10.0) {
        let gamma = frac * stepsize_limit(l);
        let tau = tau_from_stepsize(l, gamma).unwrap();
        let bound = sigma_tau_bound(&OrderingStrategy::SingleFunction(1), tau, 10, 0.0, Some(s1)).unwrap();
        let noise = theorem_rate_bound(1.0, gamma, 100, l, bound).unwrap().noise_term;
        let a4 = 4.0 * NOISE_CONSTANT;
        prop_assert!(noise >= a4 / 768.0 * s1 * (1.0 - 1e-12));
        prop_assert!(noise <= a4 / 192.0 * s1 * (1.0 + 1e-12));
    }

    #[test]
    fn shuffled_bounds_saturate_at_one_epoch(n in 1usize..200, s in 0.0f64..5.0) {
        for strategy in [OrderingStrategy::Incremental, OrderingStrategy::SingleShuffle, OrderingStrategy::RandomReshuffle] {
            let at = |tau| sigma_tau_bound(&strategy, tau, n, s, None).unwrap();
            for tau in 1..n {
                let step = at(tau + 1) - at(tau);
                prop_assert!((step - at(1)).abs() <= 1e-12 * at(1).max(1e-300));
            }
            prop_assert_eq!(at(n), at(n + 1));
            prop_assert_eq!(at(n), at(5 * n));
        }
    }
}

#[test]
fn table_rows() {
    let s = 0.25;
    assert_eq!(sigma_tau_bound(&OrderingStrategy::WithReplacement, 7, 5, s, None).unwrap(), 7.0 * s);
    assert_eq!(sigma_tau_bound(&OrderingStrategy::SingleShuffle, 7, 5, s, None).unwrap(), 25.0 * s);
    assert_eq!(sigma_tau_bound(&OrderingStrategy::Incremental, 3, 5, s, None).unwrap(), 15.0 * s);
    assert_eq!(sigma_tau_bound(&OrderingStrategy::RandomReshuffle, 3, 5, s, None).unwrap(), 60.0 * s);
    assert_eq!(sigma_tau_bound(&OrderingStrategy::SingleFunction(2), 3, 5, s, Some(2.0)).unwrap(), 18.0);
    assert!(sigma_tau_bound(&OrderingStrategy::SingleFunction(2), 3, 5, s, None).is_err());
}

#[test]
fn stepsize_admissibility() {
    let l = 2.0;
    let limit = stepsize_limit(l);
    assert!((limit - 1.0 / (16.0 * SQRT3)).abs() < 1e-15);
    assert_eq!(tau_from_stepsize(l, limit).unwrap(), 1);
    assert_eq!(tau_from_stepsize(l, limit / 10.0).unwrap(), 10);
    assert_eq!(tau_from_stepsize(l, limit / 2.5).unwrap(), 2);
    assert!(tau_from_stepsize(l, 1.01 * limit).is_err());
    assert!(tau_from_stepsize(l, 0.0).is_err());
}

#[test]
fn rate_bound_terms() {
    let r = theorem_rate_bound(3.0, 0.01, 99, 1.0, 0.0).unwrap();
    assert_eq!(r.noise_term, 0.0);
    assert!((r.opt_term - 4.0 * 3.0 / (0.01 * 100.0)).abs() < 1e-12);
    let r = theorem_rate_bound(3.0, 0.01, 99, 2.0, 5.0).unwrap();
    assert!((r.noise_term - 4.0 * 2633.0 * 4.0 * 1e-4 * 5.0).abs() < 1e-9);
    assert!((r.total() - r.opt_term - r.noise_term).abs() < 1e-12);
}

#[test]
fn lemma_rejects_mismatched_parameters() {
    let p = quadratic_new(3, 4, 0.1, [0.1, 1.0], 0).unwrap();
    let gamma = stepsize_limit(p.smoothness()) / 3.0;
    let s = make_schedule(OrderingStrategy::Incremental, 4, 0).unwrap();
    let tr = run(&p, &s, gamma, 20, &[0.0; 3], RecordPolicy::full()).unwrap();
    assert!(lemma_consensus_check(&tr, &p, gamma, 3).unwrap().passed);
    assert!(lemma_consensus_check(&tr, &p, gamma, 2).is_err());
    assert!(lemma_consensus_check(&tr, &p, gamma / 2.0, 6).is_err());
}

#[test]
fn noiseless_descent_bound() {
    let p = quadratic_new(5, 4, 0.0, [0.1, 1.0], 1).unwrap();
    let gamma = stepsize_limit(p.smoothness());
    let s = make_schedule(OrderingStrategy::RandomReshuffle, 4, 3).unwrap();
    let x0 = vec![0.0; 5];
    let tr = run(&p, &s, gamma, 200, &x0, RecordPolicy::full()).unwrap();
    let f0 = initial_suboptimality(&p, &x0, 0);
    let oracle = p.value(&x0) - p.value(&p.minimizer().unwrap());
    assert!((f0 - oracle).abs() <= 1e-10 * oracle.max(1.0));
    let rep = descent_bound_check(&tr, &p, gamma, 0.0, f0).unwrap();
    assert!(rep.passed, "max ratio {}", rep.max_ratio);
    assert_eq!(rep.rows.len(), 201);
}
