use std::f64::consts::PI;
use std::sync::Arc;

use approx::assert_relative_eq;
use stefan_core::eigen::{find_lambda0, rayleigh_min, zeta, FieldPair, SpectralNorms};
use stefan_core::heat::RadialGrid;
use stefan_core::spectral::FourierSeries;
use stefan_core::StefanError;

// λ₀(R*) from the closed-form mode-0 dispersion relation in modified Bessel functions
// (I₀ inside, I₀/K₀ combination with zero Neumann data outside), root by Brent's method,
// rounded to six decimals.
const ORACLE: [(f64, f64); 5] = [
    (1.5, 1.149051),
    (1.8, 3.059278),
    (2.0, 3.426400),
    (2.5, 3.656343),
    (3.0, 3.685827),
];

#[test]
fn growth_rate_matches_oracle_table() {
    for (rstar, want) in ORACLE {
        let mode = find_lambda0(rstar).unwrap().expect("unstable radius");
        assert!(
            (mode.lambda - want).abs() < 2e-6,
            "R* = {rstar}: {} vs {want}",
            mode.lambda
        );
    }
}

#[test]
fn eigenfunction_satisfies_coupling_conditions() {
    for rstar in [1.5, 2.0, 3.0] {
        let mode = find_lambda0(rstar).unwrap().unwrap();
        for (i, r) in mode.coupling_residuals().iter().enumerate() {
            assert!(r.abs() < 1e-8, "R* = {rstar}, condition {i}: {r:e}");
        }
        assert_relative_eq!(mode.continuum_norm_i(1.0), 1.0, epsilon = 1e-10);
    }
}

#[test]
fn no_growing_mode_below_threshold() {
    for rstar in [1.05, 1.2, 1.4] {
        assert!(zeta(rstar) > 0.0);
        assert!(find_lambda0(rstar).unwrap().is_none());
        assert!(matches!(rayleigh_min(rstar, 64), Err(StefanError::StableRegime { .. })));
    }
}

#[test]
fn rayleigh_minimum_agrees_with_shooting() {
    let mode = find_lambda0(2.0).unwrap().unwrap();
    let ray = rayleigh_min(2.0, 1024).unwrap();
    assert!(ray.min_quotient < 0.0);
    assert_relative_eq!(ray.lambda0, mode.lambda, max_relative = 1e-5);
    assert_relative_eq!(ray.min_quotient * ray.lambda0, -1.0, epsilon = 1e-12);
}

#[test]
fn constraint_direction_has_bracket_area_minus_two_pi() {
    // ⟨e₁₁, e₁₁⟩ for e₁₁ = (1, −1): |Ω| − 2π, which is 2π at R* = 2
    let grid = Arc::new(RadialGrid::new(32, 32, 16, 2.0).unwrap());
    let norms = SpectralNorms::new(grid.clone(), 3.4264, 1.0).unwrap();
    assert_relative_eq!(norms.area(), 4.0 * PI, max_relative = 1e-12);
    let e11 = FieldPair {
        w: grid.sample(|_, _| 1.0),
        f: FourierSeries::constant(6, -1.0),
    };
    assert_relative_eq!(norms.brackets(&e11, &e11), 2.0 * PI, max_relative = 1e-12);
    let (alpha, (a1, b1), rest) = norms.split(&e11);
    assert_relative_eq!(alpha, 1.0, epsilon = 1e-12);
    assert!(a1.abs() < 1e-12 && b1.abs() < 1e-12);
    assert!(rest.f.l2_sq() < 1e-20);
}
