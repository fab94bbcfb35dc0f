mod common;

use cran_core::bd::{self, compute_null_basis, RapBlocks};
use cran_core::oracle::{golden_section_max, projected_gradient_reference, scalar_power_search, GradientOptions};
use cran_core::solver::{inner_solve, price_diag, priced_objective, PenaltyMatrix};
use cran_core::CMat;
use nalgebra::DVector;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn waterfilling_matches_golden_section(xi in 1e-3f64..30.0, sigma2 in 0.1f64..4.0) {
        let closed = bd::waterfill_dual(&[xi], sigma2)[0];
        let searched = scalar_power_search(xi * xi, 1.0, sigma2, 2.0);
        prop_assert!((closed - searched).abs() < 1e-8, "closed {closed} searched {searched}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn closed_form_matches_projected_gradient(
        seed in any::<u64>(),
        k in 1usize..=3,
        n in 1usize..=2,
        nc in 1usize..=2,
        lambdas in proptest::collection::vec(0.05f64..3.0, 12),
    ) {
        let l = ((n * k).div_ceil(nc) + 1).min(12 / nc);
        prop_assume!(l * nc > n * (k - 1) && l * nc >= n * k);
        let ch = common::random_channel(seed, l, nc, k, n);
        let basis = compute_null_basis(ch.stacked()).unwrap();
        let blocks = RapBlocks::new(nc, l);
        let psi = PenaltyMatrix::zero(blocks);
        let lambda = &lambdas[..l];
        let omega = price_diag(&psi, lambda);
        let inner = inner_solve(&ch, &basis, &psi, lambda).unwrap();
        let pg = projected_gradient_reference(ch.stacked(), &basis, &omega, 1.0, &GradientOptions::default()).unwrap();
        let closed = priced_objective(ch.stacked(), &inner.covariances, &omega, 1.0);
        let reference = priced_objective(ch.stacked(), &pg, &omega, 1.0);
        prop_assert!((closed - reference).abs() < 1e-6, "closed {closed} reference {reference}");
        prop_assert!(closed >= reference - 1e-9);
    }

    #[test]
    fn inner_solution_is_zero_forcing_and_psd(seed in any::<u64>(), lambda0 in 0.05f64..2.0) {
        let ch = common::random_channel(seed, 5, 2, 3, 2);
        let basis = compute_null_basis(ch.stacked()).unwrap();
        let psi = PenaltyMatrix::zero(RapBlocks::new(2, 5));
        let inner = inner_solve(&ch, &basis, &psi, &[lambda0; 5]).unwrap();
        prop_assert!(bd::zf_residual(ch.stacked(), &inner.covariances) < 1e-10);
        for s in &inner.covariances {
            prop_assert!(bd::check_psd(s).is_ok());
        }
        let with_interference = bd::sum_rate_with_interference(ch.stacked(), &inner.covariances, 1.0);
        let bd_rate = bd::sum_rate(ch.stacked(), &inner.covariances, 1.0).unwrap();
        prop_assert!((with_interference - bd_rate).abs() <= 1e-8 * bd_rate.max(1.0));
    }

    #[test]
    fn perturbing_the_closed_form_never_helps(seed in any::<u64>(), scale in 0.5f64..1.5) {
        let ch = common::random_channel(seed, 4, 2, 2, 2);
        let basis = compute_null_basis(ch.stacked()).unwrap();
        let psi = PenaltyMatrix::zero(RapBlocks::new(2, 4));
        let lambda = [0.3, 0.6, 0.9, 1.2];
        let omega = price_diag(&psi, &lambda);
        let inner = inner_solve(&ch, &basis, &psi, &lambda).unwrap();
        let best = priced_objective(ch.stacked(), &inner.covariances, &omega, 1.0);
        let scaled: Vec<CMat> = inner.covariances.iter().map(|s| s * nalgebra::Complex::new(scale, 0.0)).collect();
        prop_assert!(priced_objective(ch.stacked(), &scaled, &omega, 1.0) <= best + 1e-10);
    }
}

#[test]
fn scalar_instance_matches_closed_form_and_golden_section() {
    for (gain, price) in [(4.0f64, 1.0f64), (0.9, 0.5), (25.0, 2.0)] {
        let h = CMat::from_element(1, 1, nalgebra::Complex::new(gain.sqrt(), 0.0));
        let basis = compute_null_basis(std::slice::from_ref(&h)).unwrap();
        let omega = DVector::from_element(1, price);
        let pg = projected_gradient_reference(std::slice::from_ref(&h), &basis, &omega, 1.0, &GradientOptions::default()).unwrap();
        // Optimal power for log2(1 + g p) − c p.
        let closed = (std::f64::consts::LOG2_E / price - 1.0 / gain).max(0.0);
        let searched = scalar_power_search(gain, price, 1.0, 10.0);
        let coarse = golden_section_max(|p| (1.0 + gain * p).log2() - price * p, 0.0, 10.0, 1e-12);
        assert!((pg[0][(0, 0)].re - closed).abs() < 1e-6, "pg {} closed {closed}", pg[0][(0, 0)].re);
        assert!((searched - closed).abs() < 1e-8);
        assert!((coarse - closed).abs() < 1e-6);
    }
}

#[test]
fn weak_channel_gets_no_power() {
    // ξ² = 0.5 ≤ σ² ln 2 for unit price: optimum is zero.
    let h = CMat::from_element(1, 1, nalgebra::Complex::new(0.5f64.sqrt(), 0.0));
    let basis = compute_null_basis(std::slice::from_ref(&h)).unwrap();
    let omega = DVector::from_element(1, 1.0);
    let pg = projected_gradient_reference(std::slice::from_ref(&h), &basis, &omega, 1.0, &GradientOptions::default()).unwrap();
    assert!(pg[0].norm() < 1e-9);
    assert_eq!(bd::waterfill_dual(&[0.5f64.sqrt()], 1.0), vec![0.0]);
}
