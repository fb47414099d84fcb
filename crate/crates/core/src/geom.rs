//! Index density, its transgression, and the right-hand side of the index formula.
//!
//! For the twisted Dirac operator on a surface the index density is the first Chern
//! density of the twist, ii = −F/2π with F = ∂_θA_y − ∂_yA_θ. With A = (−∂_yφ, 2πa/Ly + ∂_θφ)
//! this is −Δφ/2π on X, so ω = (−∂_yψ, ∂_θψ) with Δψ = ii solves dω = ii.

use crate::dirac::assemble;
use crate::endsim::{cap_index_integral, CapSpec};
use crate::eta::{eta_contour, eta_tilde, TScheme};
use crate::fourier::FourierField;
use crate::model::{df_deform, ClosedModel, HarmonicSpec, OneForm};
use crate::spectral::{h_count, pencil_spectrum};
use crate::{Error, Result};
use serde::Serialize;
use std::f64::consts::PI;

/// A real 2-form density h·dθ∧dy.
#[derive(Clone, Debug, PartialEq)]
pub struct TwoForm {
    pub density: FourierField,
    pub integral: f64,
}

impl TwoForm {
    pub fn new(density: FourierField) -> Self {
        let integral = density.mean() * density.lx * density.ly;
        Self { density, integral }
    }
}

pub fn index_form(model: &ClosedModel) -> TwoForm {
    let f = model.operator_fields();
    let curv = f.a_y.d_theta().add(&f.a_theta.d_y().scale(-1.0));
    TwoForm::new(curv.scale(-1.0 / (2.0 * PI)))
}

/// dω as a density.
pub fn exterior_derivative(w: &OneForm) -> FourierField {
    w.f_y.d_theta().add(&w.f_theta.d_y().scale(-1.0))
}

/// The mean-free primitive ω = ⋆dΔ⁻¹ii.
pub fn transgress(ii: &TwoForm) -> Result<OneForm> {
    let scale = 1.0 + ii.density.variation() * ii.density.lx * ii.density.ly;
    if ii.integral.abs() > 1e-10 * scale {
        return Err(Error::Domain(format!("the 2-form integrates to {} and has no primitive", ii.integral)));
    }
    let psi = ii.density.inverse_laplacian();
    Ok(OneForm { f_theta: psi.d_y().scale(-1.0), f_y: psi.d_theta() })
}

/// Largest coefficient of dω − ii.
pub fn transgression_residual(w: &OneForm, ii: &TwoForm) -> f64 {
    exterior_derivative(w).add(&ii.density.add_constant(-ii.density.mean()).scale(-1.0)).variation()
}

/// ω + dh.
pub fn gauge_shift(w: &OneForm, h: &FourierField) -> OneForm {
    OneForm { f_theta: w.f_theta.add(&h.d_theta()), f_y: w.f_y.add(&h.d_y()) }
}

/// (∫_Y ω, ∫_X df∧ω) with Y = {θ = 0} oriented by dy.
pub fn geometric_terms(w: &OneForm, model: &ClosedModel) -> (f64, f64) {
    let wy = &w.f_y;
    // ∫_0^{Ly} ω_y(0, y) dy keeps only the q = 0 column
    let on_y: f64 = (-(wy.px() as i64)..=(wy.px() as i64)).map(|p| wy.coeff(p, 0).re).sum::<f64>() * wy.ly;
    let wedge = model.df.f_theta.integral_product(&w.f_y) - model.df.f_y.integral_product(&w.f_theta);
    (on_y, wedge)
}

/// Which form of the theorem is assembled.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum RhsMode {
    /// Unit circle free of spectral points: −η/2.
    Fredholm,
    /// Small weight ε > 0: −(h + η̃)/2.
    Weighted { eps: f64 },
}

#[derive(Clone, Debug, Serialize)]
pub struct EtaSettings {
    pub z_samples: usize,
    pub scheme: TScheme,
    /// ε values for η̃, decreasing.
    pub tilde_schedule: Vec<f64>,
}

impl Default for EtaSettings {
    fn default() -> Self {
        Self { z_samples: 128, scheme: TScheme::default(), tilde_schedule: vec![0.2, 0.1] }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RhsReport {
    pub cap_integral: f64,
    pub y_integral: f64,
    pub wedge_integral: f64,
    pub eta: f64,
    pub eta_error: f64,
    /// Σ d(z) on the unit circle; zero in the Fredholm mode.
    pub h: usize,
    pub total: f64,
    pub nearest_integer: i64,
    pub gap: f64,
    pub mode: RhsMode,
}

/// ∫_Z ii − ∫_Y ω + ∫_X df∧ω − η/2, or − (h + η̃)/2 in place of the last term.
pub fn rhs_index(model: &ClosedModel, cap: &CapSpec, mode: RhsMode, settings: &EtaSettings) -> Result<RhsReport> {
    let ii = index_form(model);
    let w = transgress(&ii)?;
    let (y_integral, wedge_integral) = geometric_terms(&w, model);
    let cap_integral = cap_index_integral(model, cap)?;
    let fam = assemble(model);
    let (eta, eta_error, h) = match mode {
        RhsMode::Fredholm => {
            let r = eta_contour(&fam, 0.0, settings.z_samples, &settings.scheme)?;
            (r.value, r.error_estimate, 0)
        }
        RhsMode::Weighted { eps } => {
            if !(eps > 0.0) {
                return Err(Error::Domain("the weighted form needs ε > 0".into()));
            }
            let pts = pencil_spectrum(&fam)?;
            let h = h_count(&pts, 1e-6)?;
            if let Some(p) = pts.iter().find(|p| p.ln_abs_z().abs() > 1e-6 && p.ln_abs_z().abs() <= eps) {
                return Err(Error::Domain(format!("ε = {eps} is not small: spectral point at ln|z| = {}", p.ln_abs_z())));
            }
            let r = eta_tilde(&fam, &settings.tilde_schedule, settings.z_samples, &settings.scheme)?;
            (r.value, r.spread, h)
        }
    };
    let total = cap_integral - y_integral + wedge_integral - (h as f64 + eta) / 2.0;
    let nearest = total.round();
    Ok(RhsReport {
        cap_integral,
        y_integral,
        wedge_integral,
        eta,
        eta_error,
        h,
        total,
        nearest_integer: nearest as i64,
        gap: (total - nearest).abs(),
        mode,
    })
}

/// rhs_index along s ↦ df_deform(model, s, harmonic) for `steps` equally spaced s in [0, 1].
///
/// The left side of the index formula does not see df, so the totals should agree while
/// ∫_X df∧ω and η move individually.
pub fn df_homotopy(
    model: &ClosedModel,
    harmonic: &HarmonicSpec,
    steps: usize,
    cap: &CapSpec,
    mode: RhsMode,
    settings: &EtaSettings,
) -> Result<Vec<(f64, RhsReport)>> {
    if steps < 2 {
        return Err(Error::Config("a homotopy needs at least two steps".into()));
    }
    (0..steps)
        .map(|i| {
            let s = i as f64 / (steps - 1) as f64;
            let m = df_deform(model, s, harmonic)?;
            Ok((s, rhs_index(&m, cap, mode, settings)?))
        })
        .collect()
}

/// Largest minus smallest total along a homotopy.
pub fn homotopy_drift(rows: &[(f64, RhsReport)]) -> f64 {
    let (lo, hi) = rows.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (_, r)| (lo.min(r.total), hi.max(r.total)));
    hi - lo
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_torus_model;

    fn tau() -> f64 {
        2.0 * PI
    }

    fn curved(beta: f64) -> ClosedModel {
        let phi = FourierField::sample(tau(), tau(), 8, 4, |x, y| beta * (x.sin() + 0.5 * (x + y).cos()));
        build_torus_model(tau(), tau(), 4, 0.25, Some(phi), None).unwrap()
    }

    #[test]
    fn flat_twist_has_zero_density() {
        let m = build_torus_model(tau(), tau(), 4, 0.3, None, None).unwrap();
        let ii = index_form(&m);
        assert_eq!(ii.density.variation(), 0.0);
        let w = transgress(&ii).unwrap();
        assert_eq!(geometric_terms(&w, &m), (0.0, 0.0));
    }

    #[test]
    fn transgression_solves_exactly() {
        let m = curved(0.4);
        let ii = index_form(&m);
        assert!(ii.integral.abs() < 1e-14);
        let w = transgress(&ii).unwrap();
        assert!(transgression_residual(&w, &ii) < 1e-12);
    }

    #[test]
    fn nonzero_total_is_rejected() {
        let d = FourierField::constant(tau(), tau(), 0.1);
        assert!(transgress(&TwoForm::new(d)).is_err());
    }

    #[test]
    fn terms_for_a_theta_potential() {
        // φ = β sin θ, df_θ = (1 + s cos θ)/Lθ: ∫_Y ω = −β, ∫ df∧ω = −βs/2
        let beta = 0.3;
        let phi = FourierField::sample(tau(), tau(), 8, 1, |x, _| beta * x.sin());
        let m = build_torus_model(tau(), tau(), 4, 0.25, Some(phi), None).unwrap();
        let s = 0.4;
        let d = df_deform(&m, s, &HarmonicSpec::first(1.0)).unwrap();
        let w = transgress(&index_form(&d)).unwrap();
        let (y, x) = geometric_terms(&w, &d);
        assert!((y + beta).abs() < 1e-12 && (x + beta * s / 2.0).abs() < 1e-12, "{y} {x}");
    }

    #[test]
    fn gauge_shift_leaves_total_unchanged() {
        let m = df_deform(&curved(0.4), 0.3, &HarmonicSpec { p: 1, q: 1, amplitude: 1.0 }).unwrap();
        let w = transgress(&index_form(&m)).unwrap();
        let h = FourierField::sample(tau(), tau(), 8, 8, |x, y| (2.0 * x).cos() * y.sin() + 0.2 * x.sin());
        let (a, b) = geometric_terms(&w, &m);
        let (c, d) = geometric_terms(&gauge_shift(&w, &h), &m);
        assert!(((b - a) - (d - c)).abs() < 1e-12);
    }

    #[test]
    fn product_cap_total() {
        let m = build_torus_model(tau(), tau(), 16, 0.25, None, None).unwrap();
        let r = rhs_index(&m, &CapSpec::default(), RhsMode::Fredholm, &EtaSettings::default()).unwrap();
        assert!((r.cap_integral + 0.75).abs() < 1e-5);
        assert!((r.eta - 0.5).abs() < 1e-6);
        assert_eq!(r.nearest_integer, -1);
        assert!(r.gap < 1e-4, "{r:?}");
    }

    #[test]
    fn total_is_stable_along_a_df_homotopy() {
        let phi = FourierField::sample(tau(), tau(), 8, 1, |x, _| 0.3 * x.sin());
        let m = build_torus_model(tau(), tau(), 10, 0.25, Some(phi), None).unwrap().with_cutoffs(10, 4).unwrap();
        let rows = df_homotopy(&m, &HarmonicSpec::first(0.6), 3, &CapSpec::default(), RhsMode::Fredholm, &EtaSettings::default())
            .unwrap();
        // η(s) − η(0) = −β·0.6s for this potential, and the wedge term compensates
        for (s, r) in &rows {
            assert!((r.wedge_integral + 0.3 * 0.6 * s / 2.0).abs() < 1e-10);
            assert!((r.eta - rows[0].1.eta + 0.3 * 0.6 * s).abs() < 5e-3, "{r:?}");
        }
        assert!(homotopy_drift(&rows) < 2e-2, "{rows:?}");
    }
}
