use j2r_core::weighted_mestimation::{trisquared, CovariateWeighting};
use j2r_core::{fit_weighted_robust, mahalanobis_weights, LossSpec, WeightMode};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};

fn data(n: usize, seed: u64) -> (Vec<f64>, DMatrix<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t3 = StudentT::new(3.0).unwrap();
    let h = DMatrix::from_fn(n, 3, |_, j| if j == 0 { 1.0 } else { StandardNormal.sample(&mut rng) });
    let y = (0..n)
        .map(|i| 0.5 - h[(i, 1)] + 2.0 * h[(i, 2)] + t3.sample(&mut rng))
        .collect();
    (y, h)
}

fn specs() -> Vec<LossSpec> {
    vec![
        LossSpec::least_squares(),
        LossSpec::huber(1.345),
        LossSpec::absolute(),
        LossSpec::eps_insensitive(0.2),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn zero_weight_rows_are_inert(seed in 0u64..1000, junk in -1e6f64..1e6) {
        let (mut y, h) = data(80, seed);
        let mut w: Vec<f64> = (0..80).map(|i| 0.5 + (i % 3) as f64 * 0.25).collect();
        let keep: Vec<usize> = (0..80).filter(|i| i % 7 != 3).collect();
        for i in (0..80).filter(|i| i % 7 == 3) {
            w[i] = 0.0;
            y[i] = junk;
        }
        let hs = h.select_rows(&keep);
        let ys: Vec<f64> = keep.iter().map(|&i| y[i]).collect();
        let ws: Vec<f64> = keep.iter().map(|&i| w[i]).collect();
        for spec in specs() {
            let full = fit_weighted_robust(&y, &h, &w, &spec).unwrap();
            let sub = fit_weighted_robust(&ys, &hs, &ws, &spec).unwrap();
            prop_assert_eq!(&full.coefficients, &sub.coefficients);
            prop_assert_eq!(full.scale, sub.scale);
            prop_assert_eq!(full.iterations, sub.iterations);
            let kept: Vec<f64> = keep.iter().map(|&i| full.weights[i]).collect();
            prop_assert_eq!(kept, sub.weights.clone());
        }
    }

    #[test]
    fn affine_equivariance_in_y(seed in 0u64..1000, d0 in -5f64..5.0, d1 in -5f64..5.0, d2 in -5f64..5.0) {
        let (y, h) = data(120, seed);
        let delta = nalgebra::DVector::from_vec(vec![d0, d1, d2]);
        let shift = &h * &delta;
        let y2: Vec<f64> = y.iter().zip(shift.iter()).map(|(a, b)| a + b).collect();
        let w = vec![1.0; y.len()];
        for spec in specs() {
            let a = fit_weighted_robust(&y, &h, &w, &spec).unwrap();
            let b = fit_weighted_robust(&y2, &h, &w, &spec).unwrap();
            prop_assert!((&b.coefficients - &a.coefficients - &delta).amax() <= 1e-8);
            prop_assert!((a.scale - b.scale).abs() <= 1e-8 * a.scale);
        }
    }

    #[test]
    fn scale_equivariance(seed in 0u64..1000, c in 0.01f64..100.0) {
        let (y, h) = data(120, seed);
        let y2: Vec<f64> = y.iter().map(|v| c * v).collect();
        let w = vec![1.0; y.len()];
        for spec in [LossSpec::least_squares(), LossSpec::absolute(), LossSpec::huber(1.345)] {
            let a = fit_weighted_robust(&y, &h, &w, &spec).unwrap();
            let b = fit_weighted_robust(&y2, &h, &w, &spec).unwrap();
            let diff = (&b.coefficients - &a.coefficients * c).amax();
            prop_assert!(diff <= 1e-6 * c.max(1.0) * a.coefficients.amax().max(1.0), "{:?}: {}", spec.kind, diff);
        }
    }

    #[test]
    fn irls_objective_never_increases(seed in 0u64..1000) {
        let (y, h) = data(150, seed);
        let w: Vec<f64> = (0..150).map(|i| 0.2 + (i % 5) as f64 * 0.2).collect();
        for spec in [LossSpec::least_squares(), LossSpec::huber(1.345)] {
            let fit = fit_weighted_robust(&y, &h, &w, &spec).unwrap();
            for step in &fit.trace {
                prop_assert!(step.objective_after <= step.objective_before * (1.0 + 1e-12) + 1e-12);
            }
        }
    }

    #[test]
    fn covariate_weights_are_bounded(seed in 0u64..1000, nu in 0.5f64..20.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 60;
        let h = DMatrix::from_fn(n, 3, |_, j| match j {
            0 => 1.0,
            1 => 3.0 * Distribution::<f64>::sample(&StandardNormal, &mut rng),
            _ => (rng.random::<f64>() < 0.3) as u8 as f64,
        });
        for mode in [WeightMode::Normalized, WeightMode::Literal] {
            let cw = CovariateWeighting::fit(&h, nu, mode).unwrap();
            let w = mahalanobis_weights(&h, &cw).unwrap();
            for (i, &v) in w.iter().enumerate() {
                let z = h.row(i).columns(1, 2).transpose() - &cw.center;
                let sol = cw.scatter.clone().lu().solve(&z).unwrap();
                let d = z.dot(&sol);
                let u = d.max(0.0).sqrt() / nu.sqrt();
                prop_assert!(v >= 0.0);
                match mode {
                    WeightMode::Normalized => prop_assert!(v <= 1.0),
                    WeightMode::Literal => prop_assert!(v <= nu),
                }
                if u > nu + 1e-9 {
                    prop_assert_eq!(v, 0.0);
                }
                if (u - nu).abs() > 1e-9 {
                    prop_assert!((v - trisquared(d, nu, mode)).abs() <= 1e-9 * nu.max(1.0));
                }
            }
        }
    }
}
