//! Sparse learners against dense line-by-line references.

mod support;

use nexting_core::{FeatureVector, TdConfig, TdLearner, TidbdConfig, TidbdLearner};
use proptest::prelude::*;
use rand::Rng;
use support::*;

fn tidbd_pair(
    n: usize,
    alpha0: f64,
    theta: f64,
    tau: f64,
    gamma: f64,
    lambda: f64,
    consistent: bool,
) -> (TidbdLearner, NaiveTidbd) {
    let mut cfg = TidbdConfig::new(alpha0, gamma, lambda, n);
    cfg.meta_step_size = theta;
    cfg.decay_time = tau;
    cfg.xi_consistent_form = consistent;
    let mut naive = NaiveTidbd::new(n, alpha0, theta, tau, gamma, lambda);
    naive.consistent = consistent;
    (TidbdLearner::new(cfg).unwrap(), naive)
}

fn assert_tidbd_matches(engine: &TidbdLearner, naive: &NaiveTidbd, tol: f64) {
    assert_close_vec("w", &engine.weights(), &naive.w, tol);
    assert_close_vec("z", &engine.trace(), &naive.z, tol);
    assert_close_vec("h", &engine.update_trace(), &naive.h, tol);
    assert_close_vec("xi", &engine.normalizer(), &naive.xi, tol);
    assert_close_vec("beta", &engine.meta_weights(), &naive.beta, tol);
    assert_close_vec("alpha", &engine.step_sizes(), &naive.alpha, tol);
}

#[test]
fn tidbd_second_step_matches_reference() {
    let (mut engine, mut naive) = tidbd_pair(1, 0.1, 0.01, 1e4, 0.9, 0.0, false);
    let x = FeatureVector::new(vec![0], 1).unwrap();
    for _ in 0..2 {
        let step = engine.update(&x, &x, 1.0).unwrap();
        let (delta, m) = naive.step(&[1.0], &[1.0], 1.0);
        assert!(close(step.delta, delta, 1e-12));
        assert_eq!(step.normalizer, m);
    }
    assert_tidbd_matches(&engine, &naive, 1e-12);
}

#[test]
fn tidbd_long_random_runs_match_reference() {
    let mut normalized = 0;
    for (seed, lambda, consistent) in [(1, 0.0, false), (2, 0.9, false), (3, 0.9, true), (4, 0.5, false)] {
        let mut rng = rng(seed);
        let n = 12;
        let (mut engine, mut naive) = tidbd_pair(n, 0.3, 0.05, 100.0, 0.8, lambda, consistent);
        let mut x = random_features(&mut rng, n, 6);
        for _ in 0..1500 {
            let next = random_features(&mut rng, n, 6);
            let c: f64 = rng.random_range(-1.0..2.0);
            let step = engine.update(&x, &next, c).unwrap();
            let (delta, m) = naive.step(&dense(&x), &dense(&next), c);
            assert!(near(step.delta, delta, 1e-12), "δ {} vs {}", step.delta, delta);
            assert!(close(step.normalizer, m, 1e-12));
            normalized += usize::from(m > 1.0);
            x = next;
        }
        assert_tidbd_matches(&engine, &naive, 1e-12);
    }
    assert!(normalized > 0, "runs never exercised the overshoot normalization");
}

#[test]
fn td_sparse_matches_dense() {
    for lambda in [0.0, 0.7, 1.0] {
        let mut rng = rng(40);
        let n = 30;
        let mut engine = TdLearner::new(TdConfig::new(0.05, 0.9, lambda, n)).unwrap();
        let mut naive = NaiveTd::new(n, 0.05, 0.9, lambda);
        let mut x = random_features(&mut rng, n, 5);
        for _ in 0..500 {
            let next = random_features(&mut rng, n, 5);
            let c: f64 = rng.random_range(0.0..1.0);
            let delta = engine.update(&x, &next, c).unwrap();
            let want = naive.step(&dense(&x), &dense(&next), c);
            assert!(near(delta, want, 1e-12));
            x = next;
        }
        assert_close_vec("w", &engine.weights(), &naive.w, 1e-12);
        assert_close_vec("z", &engine.trace(), &naive.z, 1e-12);
    }
}

#[test]
fn h_resets_when_decay_factor_is_non_positive() {
    // γ = 0.9, λ = 1 with x_t = {0} and x_next = {1}: z_0 grows towards 10
    // while g_0 = −1, so 1 + α·z·g eventually drops below zero.
    let mut cfg = TidbdConfig::new(0.5, 0.9, 1.0, 2);
    cfg.meta_step_size = 0.0;
    let mut l = TidbdLearner::new(cfg).unwrap();
    let x = FeatureVector::new(vec![0], 2).unwrap();
    let y = FeatureVector::new(vec![1], 2).unwrap();
    let mut hits = 0;
    for c in [1.0, 0.5, 2.0, -1.0, 0.3, 1.5] {
        let step = l.update(&x, &y, c).unwrap();
        let alpha = l.step_size(0);
        let z = l.trace()[0];
        if 1.0 - alpha * z <= 0.0 {
            hits += 1;
            assert!(close(l.update_trace()[0], alpha * step.delta * z, 1e-12));
        }
    }
    assert!(hits > 0);
}

#[test]
fn zero_meta_step_reduces_to_td() {
    let mut rng = rng(77);
    let n = 20;
    let alpha = 0.04;
    let mut cfg = TidbdConfig::new(alpha, 0.9, 0.9, n);
    cfg.meta_step_size = 0.0;
    let mut tidbd = TidbdLearner::new(cfg).unwrap();
    let mut td = TdLearner::new(TdConfig::new(alpha, 0.9, 0.9, n)).unwrap();
    let mut x = random_features(&mut rng, n, 3);
    for _ in 0..2000 {
        let next = random_features(&mut rng, n, 3);
        let c: f64 = rng.random_range(0.0..1.0);
        let a = tidbd.update(&x, &next, c).unwrap();
        let b = td.update(&x, &next, c).unwrap();
        assert_eq!(a.normalizer, 1.0, "step sizes small enough to never normalize");
        assert!(near(a.delta, b, 1e-12));
        x = next;
    }
    assert_close_vec("w", &tidbd.weights(), &td.weights(), 1e-12);
    assert!(tidbd.step_sizes().iter().all(|&a| close(a, alpha, 1e-14)));
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 0 {
        0.5 * (v[m - 1] + v[m])
    } else {
        v[m]
    }
}

#[test]
fn step_sizes_shrink_on_noise_features() {
    // Ten relevant features encode a cyclic state with cumulant 1 at state 0;
    // ten noise features switch on at random and carry no information.
    let relevant = 10;
    let n = 2 * relevant;
    let mut wins = 0;
    let seeds = 30;
    for seed in 0..seeds {
        let mut rng = rng(1000 + seed);
        let mut cfg = TidbdConfig::new(0.05, 0.5, 0.0, n);
        cfg.meta_step_size = 0.01;
        let mut l = TidbdLearner::new(cfg).unwrap();
        let mut frame = |t: usize, rng: &mut rand_chacha::ChaCha8Rng| {
            let mut idx = vec![(t % relevant) as u32];
            idx.extend((relevant..n).filter(|_| rng.random_bool(0.5)).map(|i| i as u32));
            FeatureVector::new(idx, n).unwrap()
        };
        let mut x = frame(0, &mut rng);
        for t in 1..20_000 {
            let next = frame(t, &mut rng);
            let c = if t % relevant == 0 { 1.0 } else { 0.0 };
            l.update(&x, &next, c).unwrap();
            x = next;
        }
        let alphas = l.step_sizes();
        let signal = median(alphas[..relevant].to_vec());
        let noise = median(alphas[relevant..].to_vec());
        wins += usize::from(noise < signal);
    }
    assert_eq!(wins, seeds as usize, "noise step sizes fell below relevant ones in {wins}/{seeds} seeds");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tidbd_matches_reference_on_random_problems(
        seed in any::<u64>(),
        n in 1usize..40,
        alpha0 in 1e-3f64..0.6,
        theta in 0.0f64..0.2,
        tau in 1.0f64..1e4,
        gamma in 0.0f64..0.99,
        lambda in prop_oneof![Just(0.0), Just(0.9), 0.0f64..=1.0],
        consistent in any::<bool>(),
    ) {
        let mut rng = rng(seed);
        let (mut engine, mut naive) = tidbd_pair(n, alpha0, theta, tau, gamma, lambda, consistent);
        let mut x = random_features(&mut rng, n, 4);
        for _ in 0..60 {
            let next = random_features(&mut rng, n, 4);
            let c: f64 = rng.random_range(-2.0..2.0);
            let before: Vec<f64> = engine.trace();
            let step = engine.update(&x, &next, c).unwrap();
            naive.step(&dense(&x), &dense(&next), c);
            // overshoot clamp on post-normalization α and pre-update z
            let effective: f64 = (0..n)
                .map(|i| {
                    let g = gamma * dense(&next)[i] - dense(&x)[i];
                    -engine.step_size(i) * g * before[i]
                })
                .sum();
            prop_assert!(effective <= 1.0 + 1e-12, "effective step {}", effective);
            prop_assert!(step.normalizer >= 1.0);
            prop_assert!(engine.normalizer().iter().all(|&v| v >= 0.0));
            prop_assert!(engine.step_sizes().iter().all(|&a| a > 0.0));
            x = next;
        }
        assert_tidbd_matches(&engine, &naive, 1e-12);
    }

    #[test]
    fn td_delta_is_linear_in_cumulant(
        seed in any::<u64>(),
        c1 in -5.0f64..5.0,
        c2 in -5.0f64..5.0,
    ) {
        let mut rng = rng(seed);
        let n = 16;
        let mut base = TdLearner::new(TdConfig::new(0.1, 0.9, 0.9, n)).unwrap();
        let mut x = random_features(&mut rng, n, 4);
        for _ in 0..20 {
            let next = random_features(&mut rng, n, 4);
            base.update(&x, &next, rng.random_range(0.0..1.0)).unwrap();
            x = next;
        }
        let next = random_features(&mut rng, n, 4);
        let mut a = base.clone();
        let mut b = base.clone();
        let mut zero = base.clone();
        let d0 = zero.update(&x, &next, 0.0).unwrap();
        let d1 = a.update(&x, &next, c1).unwrap();
        let d2 = b.update(&x, &next, c2).unwrap();
        prop_assert!(((d1 - d0) - c1).abs() < 1e-12);
        prop_assert!(((d2 - d0) - c2).abs() < 1e-12);
    }
}
