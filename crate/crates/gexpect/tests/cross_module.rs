//! Cross-module consistency: independent numerical routes to the same
//! quantities must agree.

use gexpect::band::VolBand;
use gexpect::gnormal::{self, GNormalLaw};
use gexpect::grid::GridSpec;
use gexpect::normal;
use gexpect::payoff::{Payoff, ShapeHint};
use gexpect::quad;
use gexpect::sde::{self, FkDrivers, SdeSpec};
use gexpect::sim::{self, Estimator, VolControl};
use gexpect::tree::{self, GTree, IncrementFamily, TreeBackend};

/// A payoff that is neither convex nor concave: the PDE route against the
/// worst-case tree at 2^12 steps.
#[test]
fn sine_payoff_pde_vs_deep_tree() {
    let band = VolBand::new(0.5, 1.0).unwrap();
    let law = GNormalLaw::new(band, 1.0).unwrap();
    let phi = Payoff::new(|x: f64| x.sin()).with_growth(1);
    let pde_value = gnormal::gnormal_expect(&phi, ShapeHint::General, &law, None)
        .unwrap()
        .value;

    let n = 1usize << 12;
    let tree = GTree::new(
        n,
        1.0 / n as f64,
        IncrementFamily::binomial_from_band(&band, 0),
        TreeBackend::GridDp { dx: 0.0 },
    )
    .unwrap();
    let tree_value = tree::dp_gexpectation(&tree, |s| s.sin()).unwrap();
    assert!(
        (pde_value - tree_value).abs() <= 2e-3,
        "PDE {pde_value} vs tree {tree_value}"
    );
}

/// Degenerate band: the worst-case recursion collapses to the classical
/// binomial tree and must match classical Gaussian quadrature.
#[test]
fn degenerate_family_matches_classical_clt() {
    let family = IncrementFamily::Binomial { sigmas: vec![1.0] };
    let phi = |x: f64| (x - 0.3).abs().min(2.0);
    let rows = tree::clt_table(&family, phi, &[256]).unwrap();
    let classical = quad::gauss_expect_default(phi, 1.0);
    assert!(
        (rows[0].value - classical).abs() <= 0.02,
        "{} vs {classical}",
        rows[0].value
    );
}

/// Multiplicative dynamics priced in the original coordinates: for a convex
/// claim the robust value is Black-Scholes at the sigma(x) slope times the
/// top of the band.
#[test]
fn multiplicative_fk_call_is_black_scholes_at_upper_edge() {
    let vol_band = VolBand::new(0.5, 1.0).unwrap();
    let slope = 0.4;
    let sde = SdeSpec::new(|_| 0.0, |_| 0.0, move |x| slope * x, slope, 1.0, 1.0).unwrap();
    let grid = GridSpec::new(0.0, 4.0, 401, 1.0, 0).unwrap();
    let fk = sde::feynman_kac_price(
        &sde,
        &vol_band,
        &Payoff::call(1.0),
        &FkDrivers::none(),
        &grid,
        None,
    )
    .unwrap();
    let reference = normal::black_scholes_call(1.0, 1.0, slope * vol_band.sigma_hi, 1.0);
    assert!(
        (fk.value - reference).abs() <= 2e-3 * (1.0 + reference),
        "{} vs {reference}",
        fk.value
    );

    // Concave side: the negated call prices at the bottom of the band.
    let fk = sde::feynman_kac_price(
        &sde,
        &vol_band,
        &Payoff::new(|x| -(x - 1.0).max(0.0)).with_growth(1),
        &FkDrivers::none(),
        &grid,
        None,
    )
    .unwrap();
    let reference = -normal::black_scholes_call(1.0, 1.0, slope * vol_band.sigma_lo, 1.0);
    assert!(
        (fk.value - reference).abs() <= 2e-3 * (1.0 + reference.abs()),
        "{} vs {reference}",
        fk.value
    );
}

/// Monte Carlo estimator of the scenario bound agrees with the exact
/// Gaussian one within sampling error.
#[test]
fn scenario_sup_mc_matches_exact_gauss() {
    let band = VolBand::new(0.5, 1.0).unwrap();
    let controls = vec![
        VolControl::constant("lo", 0.5, 1.0),
        VolControl::constant("hi", 1.0, 1.0),
    ];
    let phi = Payoff::call(0.3);
    let (exact, exact_arg) = sim::scenario_sup(
        |x| phi.eval(x),
        &controls,
        &band,
        Estimator::ExactGauss,
        0,
    )
    .unwrap();
    let (mc, mc_arg) = sim::scenario_sup(
        |x| phi.eval(x),
        &controls,
        &band,
        Estimator::Mc {
            n_paths: 200_000,
            n_steps: 16,
        },
        99,
    )
    .unwrap();
    // Standard error of the call mean is about 0.75 / sqrt(n).
    assert!((exact - mc).abs() <= 6e-3, "{exact} vs {mc}");
    assert_eq!(exact_arg, mc_arg);
}

/// The adapted stochastic integral has a vanishing scenario bound in both
/// directions (its robust expectation is zero).
#[test]
fn adapted_integral_scenario_bound_is_near_zero() {
    let band = VolBand::new(0.5, 1.0).unwrap();
    let n_paths = 100_000;
    let mut worst = 0.0_f64;
    for (k, theta) in [0.5, 0.75, 1.0].iter().enumerate() {
        let control = VolControl::constant("probe", *theta, 1.0);
        let bundle = sim::sample_paths(&control, &band, n_paths, 32, 1234 + k as u64).unwrap();
        let values = sim::pathwise_ito(&bundle, |j, prefix| (prefix[j] - 0.1).tanh());
        let mean = values.iter().sum::<f64>() / n_paths as f64;
        worst = worst.max(mean.abs());
    }
    assert!(worst <= 5e-3, "largest per-scenario mean {worst}");
}
