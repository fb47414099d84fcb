use endperiodic::dirac::assemble;
use endperiodic::eta::{eta_contour, TScheme};
use endperiodic::flt::{fl_inverse, fl_transform, parseval, weighted_parseval, EndSequence};
use endperiodic::fourier::FourierField;
use endperiodic::geom::{gauge_shift, geometric_terms, index_form, transgress, transgression_residual};
use endperiodic::linalg::{max_abs, window_matrix};
use endperiodic::model::{build_torus_model, df_deform, product_model, CircleModel, HarmonicSpec};
use endperiodic::C64;
use proptest::prelude::*;
use std::f64::consts::PI;

const TAU: f64 = 2.0 * PI;

fn end_sequence(m: usize, pts: usize) -> impl Strategy<Value = EndSequence> {
    (
        prop::collection::vec(prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64), pts), m),
        prop::collection::vec(0.0..1.0f64, pts),
    )
        .prop_map(|(v, lift)| {
            let values = v.into_iter().map(|row| row.into_iter().map(|(a, b)| C64::new(a, b)).collect()).collect();
            EndSequence::new(values, lift).unwrap()
        })
}

fn pair(m: usize) -> impl Strategy<Value = (EndSequence, EndSequence)> {
    (end_sequence(m, 3), end_sequence(m, 3)).prop_map(|(u, mut v)| {
        v.lift = u.lift.clone();
        (u, v)
    })
}

/// Small real trigonometric field c₁ sin θ cos y + c₂ cos 2θ + c₃ sin(θ + y).
fn field(c: [f64; 3]) -> FourierField {
    FourierField::sample(TAU, TAU, 8, 8, move |x, y| c[0] * x.sin() * y.cos() + c[1] * (2.0 * x).cos() + c[2] * (x + y).sin())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn fl_transform_round_trips(u in (2usize..12).prop_flat_map(|m| end_sequence(m, 4)), eps in -0.5..0.5f64) {
        let back = fl_inverse(&fl_transform(&u, eps)).unwrap();
        for (a, b) in back.values.iter().flatten().zip(u.values.iter().flatten()) {
            prop_assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn parseval_identities_hold((u, v) in (2usize..12).prop_flat_map(pair), eps in -0.5..0.5f64) {
        for d in parseval(&u, &v, eps).iter().chain(&weighted_parseval(&u, &v, eps)) {
            prop_assert!(d.relative() < 1e-12, "{:?}", d);
        }
    }

    #[test]
    fn windows_add_up(a in 0.0..3.0f64, b in 0.0..3.0f64, c in 0.0..3.0f64) {
        let modes: Vec<i64> = (-5..=5).collect();
        let l = 3.0;
        let sum = window_matrix(&modes, l, a, b) + window_matrix(&modes, l, b, c);
        prop_assert!(max_abs(&(sum - window_matrix(&modes, l, a, c))) < 1e-12);
        let full = window_matrix(&modes, l, a, a + l);
        prop_assert!(max_abs(&(full - endperiodic::CMat::identity(11, 11))) < 1e-12);
    }

    #[test]
    fn family_is_adjoint_across_the_unit_circle(c in prop::array::uniform3(-0.3..0.3f64), re in -1.0..1.0f64, im in -PI..PI) {
        // (D⁺_z)* = D⁻_{1/z̄}, and ln(1/z̄) = −conj(ln z)
        let m = build_torus_model(TAU, TAU, 2, 0.3, Some(field(c)), None).unwrap();
        let m = df_deform(&m, 0.4, &HarmonicSpec { p: 1, q: 1, amplitude: 0.5 }).unwrap();
        let mu = C64::new(re, im);
        for b in &assemble(&m).blocks {
            let (dp, _) = b.at_mu(mu);
            let (_, dm) = b.at_mu(-mu.conj());
            prop_assert!(max_abs(&(dp.adjoint() - dm)) < 1e-12);
        }
    }

    #[test]
    fn transgression_is_exact_and_gauge_invariant(c in prop::array::uniform3(-0.5..0.5f64), g in prop::array::uniform3(-1.0..1.0f64)) {
        let m = build_torus_model(TAU, TAU, 4, 0.25, Some(field(c)), None).unwrap();
        let m = df_deform(&m, 0.5, &HarmonicSpec { p: 1, q: 1, amplitude: 0.8 }).unwrap();
        let ii = index_form(&m);
        prop_assert!(ii.integral.abs() < 1e-12);
        let w = transgress(&ii).unwrap();
        prop_assert!(transgression_residual(&w, &ii) < 1e-12);
        let (a, b) = geometric_terms(&w, &m);
        let (p, q) = geometric_terms(&gauge_shift(&w, &field(g)), &m);
        prop_assert!(((b - a) - (q - p)).abs() < 1e-10);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn product_eta_is_odd_in_the_twist(a in 0.05..0.95f64) {
        // reversing the twist a ↦ 1 − a reflects the circle spectrum
        let eta = |a: f64| {
            let fam = assemble(&product_model(&CircleModel::new(TAU, a, 12).unwrap()).unwrap());
            eta_contour(&fam, 0.0, 32, &TScheme::default()).unwrap().value
        };
        prop_assert!((eta(a) + eta(1.0 - a)).abs() < 1e-6);
    }
}
