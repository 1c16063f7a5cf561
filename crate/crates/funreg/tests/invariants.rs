//! Property-based invariants over randomized inputs.

use funreg::basis::{KnotRule, SplineBasis};
use funreg::estimators::{loss_value_grad, LossKind};
use funreg::penalty::{PenaltySpec, PenaltyTerm, PiMatrix};
use ndarray::{Array1, Array2};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn partition_of_unity_everywhere(
        dof in 4usize..24,
        order in 2usize..5,
        t in 0.0f64..=1.0,
    ) {
        prop_assume!(dof >= order);
        let b = SplineBasis::make_basis(dof, order, KnotRule::Uniform).unwrap();
        let v = b.eval(t, 0).unwrap();
        prop_assert!(v.iter().all(|&x| x >= -1e-12));
        prop_assert!((v.sum() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn penalty_is_quadratic_and_nonnegative(
        k in 2usize..9,
        m in 2usize..9,
        seed in 0u64..1000,
        c in 0.01f64..10.0,
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let raw = Array2::from_shape_fn((k, k), |_| rng.random::<f64>() - 0.5);
        let psd = raw.t().dot(&raw);
        let spec = PenaltySpec::new(
            vec![
                PenaltyTerm {
                    eta: rng.random::<f64>(),
                    pi1: PiMatrix::Diagonal(Array1::from_shape_fn(k, |i| i as f64)),
                    pi2: PiMatrix::Identity(m),
                },
                PenaltyTerm {
                    eta: rng.random::<f64>(),
                    pi1: PiMatrix::Dense(psd),
                    pi2: PiMatrix::Identity(m),
                },
            ],
            k,
            m,
        )
        .unwrap();
        let b = Array2::from_shape_fn((k, m), |_| rng.random::<f64>() - 0.5);
        let v = spec.value(&b).unwrap();
        prop_assert!(v >= -1e-12);
        let vc = spec.value(&(c * &b)).unwrap();
        prop_assert!((vc - c * c * v).abs() <= 1e-10 * vc.abs().max(1e-12));
        // Q norm decomposition
        let q2 = spec.q_norm(&b).unwrap().powi(2);
        let fro2: f64 = b.iter().map(|x| x * x).sum();
        prop_assert!((q2 - fro2 - v).abs() <= 1e-10 * (1.0 + q2));
    }

    #[test]
    fn kronecker_identity_small_dims(
        k in 2usize..7,
        m in 2usize..7,
        seed in 0u64..500,
    ) {
        use rand::{Rng, SeedableRng};
        prop_assume!(k * m <= 36);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let raw1 = Array2::from_shape_fn((k, k), |_| rng.random::<f64>() - 0.5);
        let raw2 = Array2::from_shape_fn((m, m), |_| rng.random::<f64>() - 0.5);
        let spec = PenaltySpec::new(
            vec![PenaltyTerm {
                eta: 0.5 + rng.random::<f64>(),
                pi1: PiMatrix::Dense(raw1.t().dot(&raw1)),
                pi2: PiMatrix::Dense(raw2.t().dot(&raw2)),
            }],
            k,
            m,
        )
        .unwrap();
        let b = Array2::from_shape_fn((k, m), |_| rng.random::<f64>() - 0.5);
        let dense = spec.kronecker_dense().unwrap();
        let v = Array1::from_iter(b.t().iter().cloned());
        let quad_form = v.dot(&dense.dot(&v));
        let direct = spec.value(&b).unwrap();
        prop_assert!((quad_form - direct).abs() <= 1e-12 * direct.abs().max(1e-12));
    }

    #[test]
    fn pinball_losses_are_convex_in_u(
        w in 0.05f64..0.95,
        y in -2.0f64..2.0,
        u1 in -2.0f64..2.0,
        u2 in -2.0f64..2.0,
        lam in 0.0f64..1.0,
    ) {
        let loss = LossKind::quantile(w, 1e-3).unwrap();
        let eval = |u: f64| {
            loss_value_grad(&loss, &ndarray::array![y], &ndarray::array![u])
                .unwrap()
                .value
        };
        let mid = lam * u1 + (1.0 - lam) * u2;
        prop_assert!(eval(mid) <= lam * eval(u1) + (1.0 - lam) * eval(u2) + 1e-12);
    }
}
