mod common;

use common::{central_diff, naive_loss, naive_variance, power_iteration_l, rel_err};
use critbatch_core::{ParamVector, Problem, ProblemKind, ProblemSpec};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const KINDS: [ProblemKind; 3] = [ProblemKind::Quadratic, ProblemKind::Logistic, ProblemKind::TinyMlp];

fn random_theta(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> ParamVector {
    ParamVector::new((0..d).map(|_| scale * (2.0 * rng.random::<f64>() - 1.0)).collect()).unwrap()
}

fn small(kind: ProblemKind, seed: u64) -> (ProblemSpec, Problem) {
    let spec = ProblemSpec::new(kind, 12, 4, seed).with_noise(0.5);
    let p = Problem::generate(&spec).unwrap();
    (spec, p)
}

#[test]
fn sample_gradients_match_finite_differences() {
    for kind in KINDS {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for seed in 0..100 {
            let (_, p) = small(kind, seed);
            let theta = random_theta(&mut rng, p.d(), 1.5);
            let i = rng.random_range(0..p.n());
            let analytic = p.per_sample_grad(&theta, i).unwrap();
            let fd = central_diff(
                |x| p.sample_loss(&ParamVector::new(x.to_vec()).unwrap(), i).unwrap(),
                theta.as_slice(),
                1e-6,
            );
            let err = rel_err(analytic.as_slice(), &fd);
            assert!(err < 1e-5, "{kind:?} seed {seed} sample {i}: {err}");
        }
    }
}

#[test]
fn full_gradients_match_finite_differences() {
    for kind in KINDS {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for seed in 0..20 {
            let (_, p) = small(kind, seed);
            let theta = random_theta(&mut rng, p.d(), 1.0);
            let fd = central_diff(|x| p.loss(&ParamVector::new(x.to_vec()).unwrap()).unwrap(), theta.as_slice(), 1e-6);
            let err = rel_err(p.full_grad(&theta).unwrap().as_slice(), &fd);
            assert!(err < 1e-5, "{kind:?} seed {seed}: {err}");
        }
    }
}

#[test]
fn losses_match_reference_formulas() {
    for kind in KINDS {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for seed in 0..10 {
            let (spec, p) = small(kind, seed);
            let theta = random_theta(&mut rng, p.d(), 1.0);
            let expected = naive_loss(&p, theta.as_slice(), spec.l2, spec.hidden);
            let got = p.loss(&theta).unwrap();
            assert!((got - expected).abs() <= 1e-12 * (1.0 + expected.abs()), "{kind:?}: {got} vs {expected}");
        }
    }
}

#[test]
fn full_gradient_is_mean_of_sample_gradients() {
    for kind in KINDS {
        let (_, p) = small(kind, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let theta = random_theta(&mut rng, p.d(), 1.0);
        let mut mean = vec![0.0; p.d()];
        for i in 0..p.n() {
            for (m, g) in mean.iter_mut().zip(p.per_sample_grad(&theta, i).unwrap().as_slice()) {
                *m += g / p.n() as f64;
            }
        }
        let full = p.full_grad(&theta).unwrap();
        for (a, b) in full.as_slice().iter().zip(&mean) {
            assert!((a - b).abs() < 1e-10);
        }
    }
}

#[test]
fn smoothness_matches_power_iteration() {
    for seed in 0..5 {
        let spec = ProblemSpec::new(ProblemKind::Quadratic, 50, 6, seed);
        let p = Problem::generate(&spec).unwrap();
        let power = power_iteration_l(&p, 2000);
        let l = p.analytic_l().unwrap();
        assert!((l - power).abs() < 1e-8 * power, "{l} vs {power}");

        let spec = ProblemSpec::new(ProblemKind::Logistic, 50, 6, seed);
        let p = Problem::generate(&spec).unwrap();
        let l = p.analytic_l().unwrap();
        let bound = power_iteration_l(&p, 2000) / 4.0 + spec.l2;
        assert!((l - bound).abs() < 1e-8 * bound);
    }
}

#[test]
fn quadratic_minimizer_is_stationary() {
    let spec = ProblemSpec::new(ProblemKind::Quadratic, 64, 5, 2).with_noise(1.0);
    let p = Problem::generate(&spec).unwrap();
    let star = p.minimizer().unwrap();
    assert!(p.full_grad(star).unwrap().norm() < 1e-10);
    assert!((p.loss(star).unwrap() - p.analytic_fstar().unwrap()).abs() < 1e-14);
}

#[test]
fn whitened_design_has_identity_covariance() {
    let mut spec = ProblemSpec::new(ProblemKind::Quadratic, 200, 5, 4).with_noise(1.0);
    spec.whiten = true;
    let p = Problem::generate(&spec).unwrap();
    assert!((p.analytic_l().unwrap() - 1.0).abs() < 1e-10);
    for j in 0..5 {
        for k in 0..5 {
            let c: f64 = (0..p.n()).map(|i| p.features(i)[j] * p.features(i)[k]).sum::<f64>() / p.n() as f64;
            let want = if j == k { 1.0 } else { 0.0 };
            assert!((c - want).abs() < 1e-10);
        }
    }
}

#[test]
fn generation_is_deterministic() {
    for kind in KINDS {
        let spec = ProblemSpec::new(kind, 30, 3, 77).with_noise(0.2);
        let a = Problem::generate(&spec).unwrap();
        let b = Problem::generate(&spec).unwrap();
        for i in 0..30 {
            assert_eq!(a.features(i), b.features(i));
            assert_eq!(a.target(i), b.target(i));
        }
        assert_eq!(spec.initial_point(&a), spec.initial_point(&b));
        let other = Problem::generate(&ProblemSpec { seed: 78, ..spec.clone() }).unwrap();
        assert_ne!(a.features(0), other.features(0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn variance_matches_double_loop(seed in 0u64..1000, kind_ix in 0usize..3, scale in 0.0f64..2.0) {
        let (_, p) = small(KINDS[kind_ix], seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let theta = random_theta(&mut rng, p.d(), scale);
        let got = p.grad_variance(&theta).unwrap();
        let want = naive_variance(&p, &theta);
        prop_assert!(got >= 0.0);
        prop_assert!((got - want).abs() < 1e-10 * (1.0 + want));
    }

    #[test]
    fn losses_are_nonnegative(seed in 0u64..1000, kind_ix in 0usize..3, scale in 0.0f64..5.0) {
        let (_, p) = small(KINDS[kind_ix], seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        let theta = random_theta(&mut rng, p.d(), scale);
        for i in 0..p.n() {
            prop_assert!(p.sample_loss(&theta, i).unwrap() >= 0.0);
        }
    }
}
