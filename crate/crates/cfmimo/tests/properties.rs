//! Property tests over randomized shapes and values.

use num_complex::Complex64;
use proptest::prelude::*;

use cfmimo::beamform::{normalize_bs_power, normalize_unit_modulus};
use cfmimo::numerics::solve::hermitian_solve_pinv;
use cfmimo::numerics::{ComplexMatrix, RealTensor};

fn complex_matrix(rows: usize, cols: usize) -> impl Strategy<Value = ComplexMatrix> {
    proptest::collection::vec(-3.0f64..3.0, rows * cols * 2).prop_map(move |data| {
        ComplexMatrix::from_fn(rows, cols, |r, c| {
            let at = 2 * (r * cols + c);
            Complex64::new(data[at], data[at + 1])
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn matmul_is_associative(
        (m, k, n, p) in (1usize..4, 1usize..4, 1usize..4, 1usize..4),
        seed in 0u64..1_000_000,
    ) {
        let mut rng = cfmimo::channel::SimRng::from_seed(seed);
        let a = ComplexMatrix::from_fn(m, k, |_, _| rng.complex_normal());
        let b = ComplexMatrix::from_fn(k, n, |_, _| rng.complex_normal());
        let c = ComplexMatrix::from_fn(n, p, |_, _| rng.complex_normal());
        let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
        let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
        prop_assert!(left.max_abs_diff(&right) < 1e-10);
    }

    #[test]
    fn pseudo_inverse_multiplies_back(h in complex_matrix(6, 3)) {
        match hermitian_solve_pinv(&h) {
            Ok(w) => {
                let check = h.hermitian().matmul(&w).unwrap();
                prop_assert!(check.max_abs_diff(&ComplexMatrix::identity(3)) < 1e-10);
            }
            // Random draws can be ill-conditioned; rejecting them is the
            // contract, silently wrong output is not.
            Err(cfmimo::error::Error::Singular(_)) => {}
            Err(e) => prop_assert!(false, "unexpected error {e}"),
        }
    }

    #[test]
    fn power_normalization_lands_on_budget(
        raw in complex_matrix(4, 3),
        p_max in 1e-6f64..10.0,
        gain in 0.1f64..50.0,
    ) {
        prop_assume!(raw.frobenius_norm() > 1e-9);
        let w = normalize_bs_power(&raw, p_max).unwrap();
        prop_assert!((w.norm_sqr() - p_max).abs() < 1e-12 * p_max.max(1.0));
        // Scale invariance of the direction.
        let w2 = normalize_bs_power(&raw.scale(gain), p_max).unwrap();
        prop_assert!(w.max_abs_diff(&w2) < 1e-9);
    }

    #[test]
    fn unit_modulus_normalization_is_unit_modulus(
        data in proptest::collection::vec(-5.0f64..5.0, 8),
    ) {
        let ok = (0..4).all(|l| data[l] != 0.0 || data[l + 4] != 0.0);
        prop_assume!(ok);
        let v = normalize_unit_modulus(&RealTensor::column(data)).unwrap();
        for l in 0..4 {
            prop_assert!((v.get(l, 0).norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rate_invariant_to_common_phase(
        seed in 0u64..1_000_000,
        phase in 0.0f64..std::f64::consts::TAU,
    ) {
        use cfmimo::channel::{sample_realization, SimRng, SystemConfig};
        use cfmimo::rate::{sinr_and_rate, BeamformingSolution};

        let cfg = SystemConfig {
            antennas_per_bs: 2,
            user_count: 2,
            irs_elements: 4,
            ..SystemConfig::default()
        };
        let mut rng = SimRng::from_seed(seed);
        let real = sample_realization(&cfg, &mut rng);
        let rotation = Complex64::from_polar(1.0, phase);
        let v = ComplexMatrix::from_fn(4, 1, |_, _| {
            Complex64::from_polar(1.0, rng.phase())
        });
        let w: Vec<Vec<ComplexMatrix>> = (0..cfg.bs_count)
            .map(|_| {
                (0..cfg.user_count)
                    .map(|_| ComplexMatrix::from_fn(2, 1, |_, _| rng.complex_normal() * 0.05))
                    .collect()
            })
            .collect();
        let sol = BeamformingSolution { w, v };
        let mut rotated = sol.clone();
        for per_user in &mut rotated.w {
            per_user[0] = per_user[0].scale_complex(rotation);
        }
        let noise = cfg.noise_linear();
        let before = sinr_and_rate(&real, &sol, 0, noise).1;
        let after = sinr_and_rate(&real, &rotated, 0, noise).1;
        prop_assert!((before - after).abs() < 1e-10);
    }
}
