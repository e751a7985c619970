use nalgebra::DMatrix;
use num_complex::Complex64;
use pairsim::biphoton::{jti, QConfig, TemporalOptions};
use pairsim::schmidt::*;
use pairsim::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn random_complex(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<Complex64> {
    DMatrix::from_fn(rows, cols, |_, _| {
        Complex64::new(StandardNormal.sample(rng), StandardNormal.sample(rng))
    })
}

fn random_unitary(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<Complex64> {
    random_complex(n, n, rng).qr().q()
}

/// Tr(ρ²) with ρ = AA†/Tr(AA†), by explicit matrix products.
fn density_matrix_purity(a: &DMatrix<Complex64>) -> f64 {
    let rho = a * a.adjoint();
    let tr = rho.trace().re;
    let rho = rho / Complex64::new(tr, 0.0);
    (&rho * &rho).trace().re
}

fn low_rank(n: usize, rank: usize, rng: &mut ChaCha8Rng) -> DMatrix<Complex64> {
    random_complex(n, rank, rng) * random_complex(rank, n, rng)
}

#[test]
fn rank_one_is_pure() {
    let u = DMatrix::from_fn(20, 1, |r, _| Complex64::new((r as f64 * 0.3).sin() + 1.1, 0.2));
    let v = DMatrix::from_fn(1, 30, |_, c| Complex64::new(0.5, (c as f64).cos()));
    let r = schmidt_of_matrix(&(u * v)).unwrap();
    assert!((r.purity - 1.0).abs() < 1e-12);
    assert!((r.schmidt_number - 1.0).abs() < 1e-12);
    assert_eq!(r.mode_count_retained, 1);
}

#[test]
fn two_equal_modes_have_purity_one_half() {
    let mut a = DMatrix::<Complex64>::zeros(8, 8);
    a[(1, 2)] = Complex64::new(1.0, 0.0);
    a[(5, 6)] = Complex64::new(0.0, 1.0);
    let r = schmidt_of_matrix(&a).unwrap();
    assert!((r.purity - 0.5).abs() < 1e-12);
    assert!((r.schmidt_number - 2.0).abs() < 1e-12);
    assert_eq!(r.coefficients.len(), 2);
}

#[test]
fn svd_purity_matches_density_matrix_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for rank in [1, 3, 10, 64] {
        let a = low_rank(64, rank, &mut rng);
        let svd = schmidt_of_matrix(&a).unwrap().purity;
        let oracle = density_matrix_purity(&a);
        assert!((svd - oracle).abs() < 1e-10, "rank {rank}: {svd} vs {oracle}");
    }
}

#[test]
fn coefficients_are_normalized_and_descending() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let r = schmidt_of_matrix(&random_complex(30, 40, &mut rng)).unwrap();
    assert!((r.coefficients.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    assert!(r.coefficients.windows(2).all(|w| w[0] >= w[1]));
    assert!((r.schmidt_number * r.purity - 1.0).abs() < 1e-12);
}

#[test]
fn zero_or_negative_inputs_are_rejected() {
    assert!(matches!(
        schmidt_of_matrix(&DMatrix::<Complex64>::zeros(4, 4)),
        Err(Error::Domain(_))
    ));
    let mut jti = DMatrix::<f64>::from_element(4, 4, 1.0);
    jti[(2, 1)] = -1e-3;
    assert!(matches!(purity_upper_bound_from_jti(&jti), Err(Error::Domain(_))));
}

#[test]
fn truncation_drops_noise_floor_modes() {
    let mut a = DMatrix::<Complex64>::zeros(6, 6);
    a[(0, 0)] = Complex64::new(1.0, 0.0);
    a[(3, 3)] = Complex64::new(1e-14, 0.0);
    let r = schmidt_of_matrix(&a).unwrap();
    assert_eq!(r.mode_count_retained, 1);
}

#[test]
fn bound_is_tight_for_real_nonnegative_amplitudes() {
    let a = DMatrix::from_fn(40, 40, |r, c| {
        let (x, y) = (r as f64 / 10.0, c as f64 / 10.0);
        (-(x - y).powi(2) - 0.3 * (x + y - 4.0).powi(2)).exp()
    });
    let exact = schmidt_of_real(&a).unwrap().purity;
    let bound = purity_upper_bound_from_jti(&a.map(|v| v * v)).unwrap();
    assert!(bound.upper_bound);
    assert!((bound.purity - exact).abs() < 1e-12);
}

#[test]
fn simulated_intensity_bounds() {
    let p1 = purity_upper_bound_from_jti(
        &jti(&QConfig::EqualQ.preset().jta(&TemporalOptions::default()).unwrap()).unwrap(),
    )
    .unwrap()
    .purity;
    assert!((0.91..=0.95).contains(&p1), "equal-Q bound {p1}");
    let p3 = purity_upper_bound_from_jti(
        &jti(&QConfig::LowPumpQ.preset().jta(&TemporalOptions::default()).unwrap()).unwrap(),
    )
    .unwrap()
    .purity;
    assert!((p3 - 0.985).abs() <= 0.01, "low-pump-Q bound {p3}");
}

/// Histogram of `total` draws from a normalized intensity.
fn multinomial(p: &DMatrix<f64>, total: u64, rng: &mut ChaCha8Rng) -> DMatrix<u64> {
    let cdf: Vec<f64> = p
        .iter()
        .scan(0.0, |acc, v| {
            *acc += v;
            Some(*acc)
        })
        .collect();
    let mut out = DMatrix::<u64>::zeros(p.nrows(), p.ncols());
    for _ in 0..total {
        let u: f64 = rng.random::<f64>() * cdf[cdf.len() - 1];
        let k = cdf.partition_point(|&c| c < u).min(cdf.len() - 1);
        out[k] += 1;
    }
    out
}

fn test_intensity() -> DMatrix<f64> {
    let a = DMatrix::from_fn(24, 24, |r, c| {
        let (x, y) = (r as f64 / 4.0, c as f64 / 4.0);
        (-(x - 2.5).powi(2) / 2.0 - (y - 3.0).powi(2) / 3.0 + 0.3 * (x - 2.5) * (y - 3.0)).exp()
    });
    let p = a.map(|v| v * v);
    let s = p.sum();
    p / s
}

#[test]
fn bootstrap_error_matches_regeneration_spread() {
    let p = test_intensity();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let observed = multinomial(&p, 10_000, &mut rng);
    let boot = statistical_error(&observed, 200, 5).unwrap();
    let purities: Vec<f64> = (0..50)
        .map(|_| {
            let h = multinomial(&p, 10_000, &mut rng);
            purity_upper_bound_from_jti(&h.map(|v| v as f64)).unwrap().purity
        })
        .collect();
    let mean = purities.iter().sum::<f64>() / 50.0;
    let spread = (purities.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 49.0).sqrt();
    let ratio = boot.std_error / spread;
    assert!((1.0 / 3.0..=3.0).contains(&ratio), "bootstrap {} vs spread {spread}", boot.std_error);
}

#[test]
fn bootstrap_is_deterministic_and_shrinks_with_counts() {
    let p = test_intensity();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let small = multinomial(&p, 2_000, &mut rng);
    let a = statistical_error(&small, 100, 9).unwrap();
    let b = statistical_error(&small, 100, 9).unwrap();
    assert_eq!(a, b);
    let large = small.map(|v| v * 400);
    let c = statistical_error(&large, 100, 9).unwrap();
    assert!(c.std_error < a.std_error / 10.0, "{} vs {}", c.std_error, a.std_error);
    assert!(matches!(statistical_error(&small, 50, 1), Err(Error::Domain(_))));
    assert!(matches!(
        statistical_error(&DMatrix::<u64>::zeros(3, 3), 100, 1),
        Err(Error::Domain(_))
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn local_unitaries_leave_coefficients_unchanged(seed in any::<u64>(), rank in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = low_rank(12, rank, &mut rng);
        let u = random_unitary(12, &mut rng);
        let v = random_unitary(12, &mut rng);
        let r0 = schmidt_of_matrix(&a).unwrap();
        let r1 = schmidt_of_matrix(&(&u * &a * &v)).unwrap();
        prop_assert_eq!(r0.coefficients.len(), r1.coefficients.len());
        for (x, y) in r0.coefficients.iter().zip(&r1.coefficients) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn scaling_leaves_result_unchanged(seed in any::<u64>(), re in -5.0f64..5.0, im in 0.1f64..5.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = low_rank(10, 3, &mut rng);
        let r0 = schmidt_of_matrix(&a).unwrap();
        let r1 = schmidt_of_matrix(&(&a * Complex64::new(re, im))).unwrap();
        prop_assert!((r0.purity - r1.purity).abs() < 1e-12);
    }

    #[test]
    fn intensity_bound_is_never_below_true_purity(seed in any::<u64>(), rank in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = low_rank(16, rank, &mut rng);
        let truth = schmidt_of_matrix(&a).unwrap().purity;
        let bound = purity_upper_bound_from_jti(&a.map(|v| v.norm_sqr())).unwrap().purity;
        prop_assert!(bound >= truth - 1e-12, "{} < {}", bound, truth);
    }
}
