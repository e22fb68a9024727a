use std::f64::consts::PI;

use isospectral::darboux::{group_with_data, target_from_pair};
use isospectral::matrix::{c, hermitian_defect, hermitian_eig, max_abs_diff, max_principal_angle, real_diag, SubspaceBasis};
use isospectral::report::spectrum_report;
use isospectral::spectral_data::default_contour_radius;
use isospectral::verify::check_example_n2;
use isospectral::{compute_spectrum, m_residue, spectral_data, transform, weyl_m, CMatrix, MatrixPotential, Potential, SolverConfig, TransformSpec};
use proptest::prelude::*;

fn cfg() -> SolverConfig {
    SolverConfig::default()
}

fn rotated() -> (Potential, CMatrix) {
    let th = PI / 6.0;
    let u = CMatrix::from_column_slice(2, 1, &[c(th.cos(), 0.0), c(th.sin(), 0.0)]);
    let b = &u * u.adjoint() * c(4.0 * PI * PI, 0.0);
    let v = Potential::constant_diagonal(vec![0.0, 10.0]);
    (transform(&v, &TransformSpec::new(1, b), &cfg()).unwrap(), u)
}

#[test]
fn rotated_transform_is_isospectral() {
    let (t, _) = rotated();
    let base = compute_spectrum(&Potential::constant_diagonal(vec![0.0, 10.0]), 60.0, &cfg()).unwrap();
    let moved = compute_spectrum(&t, 60.0, &cfg()).unwrap();
    assert_eq!(base.multiplicities(), moved.multiplicities());
    for (a, b) in base.lambdas().iter().zip(moved.lambdas()) {
        assert!((a - b).abs() < 1e-6, "{a} vs {b}");
    }
}

// Only F_1 = E_2 survives the rotation of E_1; F_2 drifts away from the new E_1.
#[test]
fn rotated_transform_two_channel_pattern() {
    let (t, _) = rotated();
    let r = check_example_n2(&t, &cfg()).unwrap();
    assert!(!r.skipped);
    let a12 = r.context["angle_f1_e2"].as_f64().unwrap();
    let a21 = r.context["angle_f2_e1"].as_f64().unwrap();
    assert!(a12 < 1e-4, "{a12}");
    assert!(a21 > 1e-2, "{a21}");
    assert!(!r.passed);
}

#[test]
fn report_is_byte_stable() {
    let v = Potential::random_fourier(2, 3, 2.0, 11);
    let a = serde_json::to_string(&spectrum_report(&v, &spectral_data(&v, 60.0, &cfg()).unwrap())).unwrap();
    let b = serde_json::to_string(&spectrum_report(&v, &spectral_data(&v, 60.0, &cfg()).unwrap())).unwrap();
    assert_eq!(a, b);
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 6, ..ProptestConfig::default() })]

    #[test]
    fn group_data_invariants(seed in 0u64..1000, amp in 0.5f64..3.0) {
        let v = Potential::random_fourier(2, 3, amp, seed);
        let s = spectral_data(&v, 90.0, &cfg()).unwrap();
        let mut total = 0;
        let mut prev = f64::NEG_INFINITY;
        for g in &s.groups {
            prop_assert!(g.lambda > prev);
            prev = g.lambda;
            total += g.k;
            let d = g.data().unwrap();
            prop_assert!(hermitian_defect(&d.b_alpha) < 1e-10 * d.b_alpha.norm());
            let eig = hermitian_eig(&d.b_alpha).unwrap();
            let positive = eig.values.iter().filter(|x| **x > 1e-8 * d.b_alpha.norm()).count();
            prop_assert_eq!(positive, g.k);
            prop_assert!(eig.values.iter().all(|x| *x > -1e-10 * d.b_alpha.norm()));
            prop_assert!(d.checks.kernel_residual < 1e-6);
            prop_assert!(d.checks.norming_identity < 1e-6);
            prop_assert!(d.checks.d_min_eig_rel > -1e-8);
            prop_assert!(max_principal_angle(&d.f_alpha, &d.f_alpha_alt) < 1e-4);
        }
        // each channel contributes one eigenvalue per unit of sqrt(lambda)/pi, roughly
        prop_assert!((4..=8).contains(&total), "{} eigenvalues", total);
    }

    #[test]
    fn weyl_symmetry_and_residue(seed in 0u64..1000, re in -20.0f64..40.0, im in 0.1f64..5.0) {
        let v = Potential::random_fourier(2, 2, 2.0, seed);
        let s = spectral_data(&v, 30.0, &cfg()).unwrap();
        let z = c(re, im);
        let m = weyl_m(&v, z, &cfg(), Some(&s)).unwrap().m;
        let mc = weyl_m(&v, z.conj(), &cfg(), Some(&s)).unwrap().m;
        prop_assert!(max_abs_diff(&mc, &m.adjoint()) < 1e-8 * m.norm().max(1.0));
        let r = default_contour_radius(&s, 1, 0.25).unwrap();
        let res = m_residue(&v, &s, 1, r, 64, &cfg()).unwrap();
        let b = &s.groups[0].data().unwrap().b_alpha;
        prop_assert!((res + b).norm() / b.norm() < 1e-4);
    }

    #[test]
    fn norming_change_hits_target(g11 in 0.2f64..5.0, seed in 0u64..1000) {
        let v = Potential::random_fourier(2, 2, 1.5, seed);
        let g = group_with_data(&v, 1, &cfg()).unwrap();
        let k = g.k;
        let gm = real_diag(&vec![g11; k]) * c(1.0 / (2.0 * PI * PI), 0.0);
        let target = target_from_pair(&g.e, &gm).unwrap();
        let spec = TransformSpec::new(1, target.clone());
        let t = transform(&v, &spec, &cfg()).unwrap();
        let tg = group_with_data(&t, 1, &cfg()).unwrap();
        prop_assert_eq!(tg.k, k);
        prop_assert!((tg.lambda - g.lambda).abs() < 1e-6);
        prop_assert!(max_abs_diff(&tg.data().unwrap().b_alpha, &target) / target.norm() < 1e-4);
        prop_assert!(max_principal_angle(&tg.e, &SubspaceBasis::span(&target)) < 1e-4);
        let x = 0.37;
        prop_assert!(hermitian_defect(&t.value(x)) < 1e-10 * t.value(x).norm().max(1.0));
    }
}
