mod common;

use ghostzero::analytic::{
    bose_einstein_pm, g2_m0, g2_m0_tau, g2_mn, p_m0_closed, p_mn, pmn_table, PhotonStatsParams,
};
use proptest::prelude::*;

fn params(nbar: f64, mu: f64) -> PhotonStatsParams {
    PhotonStatsParams::new(nbar, mu).unwrap()
}

#[test]
fn recurrence_matches_quadrature_of_the_intensity_density() {
    for &nbar in &[0.1, 0.5, 1.0, 2.0, 5.0] {
        for &mu in &[0.0, 0.3, 0.7] {
            let q = common::quadrature_pmn(nbar, mu, 4);
            for m in 0..=4u32 {
                for n in 0..=4u32 {
                    let p = p_mn(m, n, &params(nbar, mu));
                    let d = (p - q[m as usize][n as usize]).abs();
                    assert!(d <= 1e-6, "nbar {nbar} mu {mu} ({m},{n}): {p} vs {}", q[m as usize][n as usize]);
                }
            }
        }
        let q = common::quadrature_pmn_coherent(nbar, 4);
        for m in 0..=4u32 {
            for n in 0..=4u32 {
                let p = p_mn(m, n, &params(nbar, 1.0));
                assert!((p - q[m as usize][n as usize]).abs() <= 1e-6);
            }
        }
    }
}

#[test]
fn quadrature_oracle_reproduces_independent_marginals() {
    // with mu = 0 the density factorizes, so the oracle itself can be checked
    let q = common::quadrature_pmn(0.7, 0.0, 4);
    for m in 0..=4 {
        for n in 0..=4 {
            let want = common::bose_einstein(m, 0.7) * common::bose_einstein(n, 0.7);
            assert!((q[m as usize][n as usize] - want).abs() < 1e-10);
        }
    }
}

#[test]
fn coherent_limit_binomial_form() {
    for &nbar in &[0.1, 0.5, 1.0, 2.0, 5.0] {
        for m in 0..=10 {
            for n in 0..=10 {
                let want = common::pmn_coherent(m, n, nbar);
                let got = p_mn(m, n, &params(nbar, 1.0));
                assert!((got - want).abs() <= 1e-10, "({m},{n}) nbar {nbar}");
            }
        }
    }
}

#[test]
fn zero_column_and_marginals() {
    for &nbar in &[0.1, 0.5, 1.0, 2.0, 5.0] {
        for &mu in &[0.0, 0.3, 0.7, 1.0] {
            let p = params(nbar, mu);
            let table = pmn_table(&p, 400);
            for m in 0..=10 {
                let want = common::pm0_closed(m, nbar, mu);
                assert!((p_mn(m, 0, &p) - want).abs() <= 1e-12);
                assert!((p_m0_closed(m, &p) - want).abs() <= 1e-12);
                assert!((table.get(m, 0) - want).abs() <= 1e-12);
                // truncated row sum falls short of the marginal by at most the
                // probability that detector 2 sees more than the table holds
                let r = nbar / (1.0 + nbar);
                let tail = r.powi(401);
                let be = common::bose_einstein(m, nbar);
                assert!((table.row_sum(m) - be).abs() <= tail + 1e-13, "m {m} nbar {nbar} mu {mu}");
                assert!((bose_einstein_pm(m, nbar).unwrap() - be).abs() <= 1e-15);
            }
        }
    }
}

#[test]
fn g2_closed_form_examples() {
    assert_eq!(g2_m0(1, &params(0.5, 1.0)), 0.84375);
    assert!((g2_m0(0, &params(1.0, 1.0)) - 4.0 / 3.0).abs() < 1e-14);
    for m in 0..6 {
        assert!((g2_m0(m, &params(0.8, 0.0)) - 1.0).abs() < 1e-13);
    }
    let p = params(0.5, 1.0).with_sigma(0.3).unwrap().with_v(0.6).unwrap();
    let mu = 0.6 * (-(0.3f64 * 2.0).powi(2)).exp();
    assert!((g2_m0_tau(1, 2.0, &p) - common::g2_m0_closed(1, 0.5, mu)).abs() < 1e-13);
}

proptest! {
    #[test]
    fn g2_matches_closed_form(m in 0u32..10, nbar in 1e-3f64..30.0, mu in 0.0f64..=1.0) {
        let got = g2_m0(m, &params(nbar, mu));
        let want = common::g2_m0_closed(m, nbar, mu);
        prop_assert!((got - want).abs() <= 1e-10 * want.max(1.0));
    }

    #[test]
    fn joint_matches_definition(m in 0u32..8, n in 0u32..8, nbar in 1e-2f64..10.0, mu in 0.0f64..=1.0) {
        let p = params(nbar, mu);
        let want = p_mn(m, n, &p) / (common::bose_einstein(m, nbar) * common::bose_einstein(n, nbar));
        prop_assert!((g2_mn(m, n, &p) - want).abs() <= 1e-9 * want.max(1.0));
        prop_assert!((p_mn(m, n, &p) - p_mn(n, m, &p)).abs() <= 1e-15);
    }

    #[test]
    fn probabilities_are_normalized(nbar in 1e-2f64..3.0, mu in 0.0f64..=1.0) {
        let table = pmn_table(&params(nbar, mu), 200);
        prop_assert!((table.total() - 1.0).abs() <= table.tail_bound() + 1e-12);
    }

    #[test]
    fn uncorrelated_detectors_factorize(m in 0u32..8, n in 0u32..8, nbar in 1e-2f64..10.0) {
        let p = p_mn(m, n, &params(nbar, 0.0));
        let q = common::bose_einstein(m, nbar) * common::bose_einstein(n, nbar);
        prop_assert!((p - q).abs() <= 1e-13);
    }
}
