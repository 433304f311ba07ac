use gpmrt_core::fourth_order::*;
use gpmrt_core::scheme::derive_scheme;
use gpmrt_core::*;
use proptest::prelude::*;

fn folded(a: f64, b: f64, p: &FourthOrderParams, u: f64, lambda: f64, dt: f64) -> Vec<Stencil> {
    let m = cde_model(a, b, p, u, lambda, dt).unwrap();
    let g = Grid::periodic_1d(32, lambda * dt, 0.0).unwrap();
    let sch = derive_scheme(&m, 0, DeriveOptions::default()).unwrap();
    let lin = m.closure.linear_form(&m.context(&g)).unwrap();
    sch.fold_linear(&lin).stencils
}

fn max_gap(a: f64, b: f64, p: FourthOrderParams, u: f64, lambda: f64) -> f64 {
    let st = folded(a, b, &p, u, lambda, 0.05);
    assert_eq!(st.len(), 3);
    let cf = closed_form_coefficients(a, b, p.s1, p.s2, p.w0, lambda * a, u).unwrap();
    let mut gap: f64 = 0.0;
    for (k, off) in ClosedFormCoefficients::ALPHA_OFFSETS.iter().enumerate() {
        gap = gap.max((st[0].tap([*off, 0]) - cf.alpha[k]).abs());
    }
    for (k, off) in ClosedFormCoefficients::BETA_OFFSETS.iter().enumerate() {
        gap = gap.max((st[1].tap([*off, 0]) - cf.beta[k]).abs());
    }
    for (k, off) in ClosedFormCoefficients::GAMMA_OFFSETS.iter().enumerate() {
        gap = gap.max((st[2].tap([*off, 0]) - cf.gamma[k]).abs());
    }
    // no taps outside the listed ones
    let listed: f64 = cf.alpha.iter().chain(cf.beta.iter()).chain(cf.gamma.iter()).sum();
    let total: f64 = st.iter().map(Stencil::sum).sum();
    gap.max((listed - total).abs())
}

#[test]
fn closed_form_matches_derived_scheme_at_table_points() {
    for &(a, b) in &[(1.0, 1.0), (0.6, 0.9), (0.9, 0.8), (0.6, 0.36), (0.5, 0.5)] {
        let p = FourthOrderParams { s1: 0.8, s2: 1.3, w0: 0.45 };
        let gap = max_gap(a, b, p, 0.3, 2.0);
        assert!(gap < 1e-12, "(a,b)=({a},{b}): {gap:e}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]
    #[test]
    fn closed_form_matches_derived_scheme(
        a in 0.2f64..1.0, bf in 0.0f64..1.0, s1 in 0.2f64..1.9, s2 in 0.2f64..1.9,
        w0 in 0.05f64..0.95, u in -0.5f64..0.5, lambda in 0.5f64..4.0,
    ) {
        // b in [a^2, 1]
        let b = a * a + bf * (1.0 - a * a);
        // keep the prefactor away from its pole
        prop_assume!((b * s1 - 2.0 * a * a * s1 + 2.0 * a * a).abs() > 0.05);
        let gap = max_gap(a, b, FourthOrderParams { s1, s2, w0 }, u, lambda);
        prop_assert!(gap < 1e-12, "gap {gap:e}");
    }
}

#[test]
fn unit_ab_leaves_only_the_product_term_at_the_oldest_level() {
    let (s1, s2) = (0.7, 1.4);
    let cf = closed_form_coefficients(1.0, 1.0, s1, s2, 0.3, 1.5, 0.2).unwrap();
    assert!((cf.gamma[0] - (s1 - 1.0) * (s2 - 1.0)).abs() < 1e-15);
    assert!(cf.gamma[1..].iter().all(|g| *g == 0.0));
    assert!(cf.beta[3] == 0.0 && cf.beta[4] == 0.0);
    // and it collapses to two history levels when either rate is one
    let cf = closed_form_coefficients(1.0, 1.0, 1.0, s2, 0.3, 1.5, 0.2).unwrap();
    assert!(cf.gamma.iter().all(|g| g.abs() < 1e-15));
}

#[test]
fn zero_velocity_is_symmetric() {
    let cf = closed_form_coefficients(0.7, 0.8, 0.9, 1.2, 0.4, 1.3, 0.0).unwrap();
    assert!((cf.alpha[1] - cf.alpha[2]).abs() < 1e-15);
    assert!((cf.beta[1] - cf.beta[2]).abs() < 1e-15);
    assert!((cf.beta[3] - cf.beta[4]).abs() < 1e-15);
}

#[test]
fn degenerate_prefactor_is_rejected() {
    // b s1 - 2a^2 s1 + 2a^2 = 0 at a = 1, b = 0.5, s1 = 4/3
    assert!(closed_form_coefficients(1.0, 0.5, 4.0 / 3.0, 1.0, 0.5, 1.0, 0.1).is_err());
}
