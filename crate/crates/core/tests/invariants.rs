//! Property-style invariants: algebraic identities of the inner products,
//! the flux functional, and the smooth profiles.

use std::sync::Arc;

use proptest::prelude::*;

use fieldglue::synth;
use fieldglue::{
    build_domain, surface_flux, weighted_inner, weighted_norm, BundleKind, BundleType, Domain,
    Grid, Indicator, OperatorKind, OperatorSpec, Shape, TensorField, WeightConfig,
};

fn disk(cells: usize) -> Domain {
    let g = Grid::new(2, &[(-1.0, 1.0); 2], &[cells; 2]).unwrap();
    build_domain(
        Shape::Ball {
            center: [0.0; 3],
            radius: 0.8,
        },
        g,
    )
    .unwrap()
}

/// Smooth scalar-ish field from a handful of free coefficients.
fn field_from_coeffs(d: &Domain, bundle: BundleType, coeffs: &[f64]) -> TensorField {
    TensorField::masked_from_fn(d, bundle, |c, p| {
        let mut v = 0.0;
        for (m, a) in coeffs.iter().enumerate() {
            let k = (m + 1) as f64;
            v += a * (k * p[0] + 0.7 * k * p[1] + c as f64).sin();
        }
        v
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn weighted_inner_is_symmetric_and_bilinear(
        au in proptest::collection::vec(-2.0f64..2.0, 3),
        av in proptest::collection::vec(-2.0f64..2.0, 3),
        scale in -3.0f64..3.0,
    ) {
        let d = disk(24);
        let wc = WeightConfig::default_for_dim(2);
        let b = BundleType::new(BundleKind::OneForm, 2);
        let u = field_from_coeffs(&d, b, &au);
        let v = field_from_coeffs(&d, b, &av);
        let uv = weighted_inner(&u, &v, &d, &wc, 0).unwrap();
        let vu = weighted_inner(&v, &u, &d, &wc, 0).unwrap();
        prop_assert_eq!(uv, vu);
        let mut su = u.clone();
        su.scale(scale);
        let suv = weighted_inner(&su, &v, &d, &wc, 0).unwrap();
        prop_assert!((suv - scale * uv).abs() <= 1e-12 * uv.abs().max(1e-12));
    }

    #[test]
    fn weighted_norm_is_absolutely_homogeneous(
        au in proptest::collection::vec(-2.0f64..2.0, 4),
        scale in -4.0f64..4.0,
    ) {
        let d = disk(24);
        let wc = WeightConfig::default_for_dim(2);
        let b = BundleType::new(BundleKind::Scalar, 2);
        let u = field_from_coeffs(&d, b, &au);
        let n0 = weighted_norm(&u, &d, &wc).unwrap();
        let mut su = u.clone();
        su.scale(scale);
        let n1 = weighted_norm(&su, &d, &wc).unwrap();
        prop_assert!((n1 - scale.abs() * n0).abs() <= 1e-12 * n0.max(1e-12));
    }

    #[test]
    fn smoothstep_profiles_are_monotone_in_unit_interval(t in 0.0f64..0.999) {
        let dt = 1e-3;
        prop_assert!(fieldglue::profile::smoothstep5(t + dt) >= fieldglue::profile::smoothstep5(t));
        prop_assert!(fieldglue::profile::smoothstep7(t + dt) >= fieldglue::profile::smoothstep7(t));
    }

    #[test]
    fn surface_flux_is_linear_in_the_field(
        a in -2.0f64..2.0,
        b in -2.0f64..2.0,
    ) {
        let g = Grid::new(3, &[(-2.5, 2.5); 3], &[24; 3]).unwrap();
        let d = build_domain(
            Shape::Annulus { center: [0.0; 3], r_in: 1.0, r_out: 2.0 },
            g,
        ).unwrap();
        let op = OperatorSpec::new(OperatorKind::Grad, 3).unwrap();
        let wc = WeightConfig::default_for_dim(3);
        let basis = fieldglue::build_kernel_basis(op, &d, &wc).unwrap();
        let v0 = &basis.members()[0];
        let ind = Indicator::shell(d.grid(), [0.0; 3], 1.5, 0.9);
        let w1 = synth::coulomb_field(d.grid_arc(), [0.0; 3], 1.0);
        let w2 = synth::smoothed_coulomb_field(d.grid_arc(), [0.2, 0.0, 0.0], 1.0, 0.4);
        let f1 = surface_flux(&w1, v0, op, &ind).unwrap();
        let f2 = surface_flux(&w2, v0, op, &ind).unwrap();
        let mut comb = TensorField::zeros(d.grid_arc(), op.field_bundle());
        comb.axpy(a, &w1);
        comb.axpy(b, &w2);
        let fc = surface_flux(&comb, v0, op, &ind).unwrap();
        prop_assert!((fc - (a * f1 + b * f2)).abs() <= 1e-11 * (f1.abs() + f2.abs()).max(1e-12));
    }
}

#[test]
fn flux_vanishes_exactly_for_fields_away_from_the_shell() {
    let g = Grid::new(3, &[(-2.5, 2.5); 3], &[32; 3]).unwrap();
    let d = build_domain(
        Shape::Annulus {
            center: [0.0; 3],
            r_in: 1.0,
            r_out: 2.0,
        },
        g,
    )
    .unwrap();
    let op = OperatorSpec::new(OperatorKind::Grad, 3).unwrap();
    let wc = WeightConfig::default_for_dim(3);
    let basis = fieldglue::build_kernel_basis(op, &d, &wc).unwrap();
    let ind = Indicator::shell(d.grid(), [0.0; 3], 1.3, 0.7);
    // field supported strictly outside the indicator's closure
    let w = synth::random_ball_supported_field(
        d.grid_arc(),
        op.field_bundle(),
        5,
        [0.0, 0.0, 2.1],
        0.25,
    );
    let f = surface_flux(&w, &basis.members()[0], op, &ind).unwrap();
    assert_eq!(f, 0.0);
}

#[test]
fn flux_is_shell_independent_for_divergence_free_fields() {
    // the discrete divergence theorem: two shells enclosing the same charge
    // agree to O(h^2)
    let g = Grid::new(3, &[(-2.5, 2.5); 3], &[48; 3]).unwrap();
    let d = build_domain(
        Shape::Annulus {
            center: [0.0; 3],
            r_in: 1.0,
            r_out: 2.0,
        },
        g,
    )
    .unwrap();
    let op = OperatorSpec::new(OperatorKind::Grad, 3).unwrap();
    let e = synth::coulomb_field(d.grid_arc(), [0.0; 3], 4.0 * std::f64::consts::PI);
    let ones = TensorField::masked_from_fn(&d, op.potential_bundle(), |_, _| 1.0);
    let f_in = surface_flux(
        &e,
        &ones,
        op,
        &Indicator::shell(d.grid(), [0.0; 3], 1.35, 0.5),
    )
    .unwrap();
    let f_out = surface_flux(
        &e,
        &ones,
        op,
        &Indicator::shell(d.grid(), [0.0; 3], 1.65, 0.5),
    )
    .unwrap();
    // both approximate minus the enclosed charge

    assert!(
        (f_in + 4.0 * std::f64::consts::PI).abs() < 0.02 * 4.0 * std::f64::consts::PI,
        "flux {f_in}"
    );
    assert!((f_in - f_out).abs() < 2e-3 * f_in.abs(), "{f_in} vs {f_out}");
}

#[test]
fn charge_scaling_scales_the_flux_functionals() {
    let g = Grid::new(3, &[(-2.5, 2.5); 3], &[40; 3]).unwrap();
    let d = build_domain(
        Shape::Annulus {
            center: [0.0; 3],
            r_in: 1.0,
            r_out: 2.0,
        },
        g,
    )
    .unwrap();
    let op = OperatorSpec::new(OperatorKind::Grad, 3).unwrap();
    let wc = WeightConfig::default_for_dim(3);
    let basis = fieldglue::build_kernel_basis(op, &d, &wc).unwrap();
    let ind = Indicator::shell(d.grid(), [0.0; 3], 1.5, 0.8);
    let f1 = fieldglue::flux_functionals(
        &synth::coulomb_field(d.grid_arc(), [0.0; 3], 1.0),
        &basis,
        op,
        &ind,
        "r=1.5",
    )
    .unwrap();
    let f2 = fieldglue::flux_functionals(
        &synth::coulomb_field(d.grid_arc(), [0.0; 3], 2.0),
        &basis,
        op,
        &ind,
        "r=1.5",
    )
    .unwrap();
    let ratio = f2.coefficients[0] / f1.coefficients[0];
    assert!((ratio - 2.0).abs() < 0.01 * 2.0, "ratio {ratio}");
}

#[test]
fn gauss_flux_of_a_unit_charge_through_the_shell() {
    // the smeared-shell pairing of the point-charge field with the constant
    // equals minus the charge within 2 percent on a 64^3 grid
    let g = Grid::new(3, &[(-2.5, 2.5); 3], &[64; 3]).unwrap();
    let d = build_domain(
        Shape::Annulus {
            center: [0.0; 3],
            r_in: 1.0,
            r_out: 2.0,
        },
        g,
    )
    .unwrap();
    let op = OperatorSpec::new(OperatorKind::Grad, 3).unwrap();
    let e = synth::coulomb_field(d.grid_arc(), [0.0; 3], 1.0);
    let ones = TensorField::masked_from_fn(&d, op.potential_bundle(), |_, _| 1.0);
    let ind = Indicator::shell(d.grid(), [0.0; 3], 1.5, 0.6);
    let flux = surface_flux(&e, &ones, op, &ind).unwrap();
    assert!((flux + 1.0).abs() <= 0.02, "flux {flux} vs -1");
}
