//! End-periodic eta invariants.
//!
//! η_ε = (1/πi) ∫_0^∞ ∮_{|z|=e^ε} Tr(c⁻(df)·D⁺_z e^{−t(D⁺_z)ᴴD⁺_z}) dz/z dt.
//!
//! At fixed truncation the full t-integral collapses to a signed spectral count, so the
//! lower limit is tied to the cutoff, t₀ = c/k², where k is the largest kept frequency.
//! The remaining integral is evaluated in closed form from one SVD per z-sample,
//! ∫_{t₀}^∞ σe^{−tσ²}dt = e^{−t₀σ²}/σ, and the result is extrapolated t₀ → 0.

use crate::dirac::{assemble, DiracFamily, Layout};
use crate::flt::CircleGrid;
use crate::linalg::{diag_ah_b, expm, svd};
use crate::model::{CircleModel, ClosedModel};
use crate::quad;
use crate::{CMat, Error, Result, C64};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Sign conventions carried into every report.
pub const CONVENTION: &str = "D+ = d/dtheta + i d/dy (twisted), df acts by c-(df) = -f_theta + i f_y, \
eta = (1/pi i) int oint Tr(c-(df) D+_z exp(-t D-_z D+_z)) dz/z dt; product case eta(X) = +eta(Y) with \
spectrum (k+a)2pi/L_y; spectral points at ln|z| = -lambda L_theta; index density ii = -F/2pi on dtheta^dy; \
Y = {theta = 0} oriented by dy";

/// How the t-integral is evaluated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TScheme {
    /// Exact integration over [t₀, ∞) from the singular values.
    ClosedForm { c: f64 },
    /// Gauss-Legendre in τ = √t on [t₀, T] plus the closed-form tail on [T, ∞).
    Quadrature { c: f64, t_break: f64, tol: f64 },
}

impl Default for TScheme {
    fn default() -> Self {
        TScheme::ClosedForm { c: 25.0 }
    }
}

impl TScheme {
    fn c(&self) -> f64 {
        match self {
            TScheme::ClosedForm { c } | TScheme::Quadrature { c, .. } => *c,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct EtaResult {
    pub value: f64,
    /// Value at the cutoff-coupled t₀ before extrapolation.
    pub raw: f64,
    pub t0: f64,
    pub eps: f64,
    pub z_samples: usize,
    pub t_scheme: TScheme,
    pub lambda: usize,
    pub error_estimate: f64,
    /// Largest imaginary part seen in the z-average.
    pub imag_residual: f64,
    pub convention: &'static str,
}

/// Tr(c⁻ D⁺_z e^{−t D⁻_z D⁺_z}) through the Schur form of D⁻_zD⁺_z.
pub fn heat_trace(fam: &DiracFamily, z: C64, t: f64) -> Result<C64> {
    if !(t > 0.0) {
        return Err(Error::Domain("heat trace needs t > 0".into()));
    }
    let at = fam.family_at(z, 0)?;
    Ok(fam
        .blocks
        .par_iter()
        .zip(at.par_iter())
        .map(|(b, (dp, dm))| {
            if b.dim() == 1 {
                let h = dm[(0, 0)] * dp[(0, 0)];
                return b.cminus[(0, 0)] * dp[(0, 0)] * (-h * t).exp();
            }
            let h = dm * dp;
            let (q, tri) = h.schur().unpack();
            let e = expm(&(tri * C64::new(-t, 0.0)));
            let m = q.adjoint() * &b.cminus * dp * &q;
            (m * e).trace()
        })
        .collect::<Vec<C64>>()
        .iter()
        .sum())
}

/// (1/π)∫_0^{2π} Tr(c⁻D⁺_z e^{−tD⁻_zD⁺_z}) ds on |z| = 1 by the M-point average.
pub fn circle_heat_average(fam: &DiracFamily, t: f64, m: usize) -> Result<f64> {
    let grid = CircleGrid::new(m, 0.0);
    let mut s = C64::new(0.0, 0.0);
    for r in 0..m {
        s += heat_trace(fam, grid.z(r), t)?;
    }
    Ok(2.0 * s.re / m as f64)
}

/// (πt)^{−1/2} Σ_λ λ e^{−tλ²} over the truncated circle spectrum.
pub fn product_heat_closed_form(y: &CircleModel, t: f64) -> f64 {
    let sum: f64 = crate::dirac::circle_dirac(y).spectrum.iter().map(|l| l * (-t * l * l).exp()).sum();
    sum / (PI * t).sqrt()
}

/// Per-z spectral data: singular values with weights w_k = (Vᴴc⁻U)_kk.
struct Weighted {
    sigma: Vec<f64>,
    w: Vec<C64>,
}

fn weighted_svd(fam: &DiracFamily, mu: C64) -> Weighted {
    let parts: Vec<Weighted> = fam
        .blocks
        .iter()
        .map(|b| {
            let dp = b.dplus_at(mu);
            if b.dim() == 1 {
                let d = dp[(0, 0)];
                let r = d.norm();
                // U = d/|d|, V = 1
                return Weighted { sigma: vec![r], w: vec![b.cminus[(0, 0)] * d / r] };
            }
            let s = svd(&dp);
            let cu = &b.cminus * &s.u;
            Weighted { w: diag_ah_b(&s.v, &cu), sigma: s.sigma }
        })
        .collect();
    let mut out = Weighted { sigma: Vec::new(), w: Vec::new() };
    for p in parts {
        out.sigma.extend(p.sigma);
        out.w.extend(p.w);
    }
    out
}

/// ∫_{t₀}^∞ Σ_k w_k σ_k e^{−tσ_k²} dt for each t₀ in `t0s`.
fn integrated(ws: &Weighted, t0s: &[f64], scheme: &TScheme) -> Vec<C64> {
    match scheme {
        TScheme::ClosedForm { .. } => t0s
            .iter()
            .map(|&t0| ws.sigma.iter().zip(&ws.w).map(|(&s, &w)| w * ((-t0 * s * s).exp() / s)).sum())
            .collect(),
        TScheme::Quadrature { t_break, tol, .. } => t0s
            .iter()
            .map(|&t0| {
                let tb = t_break.max(t0);
                // t = τ², dt = 2τ dτ removes the t^{-1/2} behavior at the lower end
                let f = |tau: f64| -> C64 {
                    let t = tau * tau;
                    ws.sigma.iter().zip(&ws.w).map(|(&s, &w)| w * (s * (-t * s * s).exp())).sum::<C64>() * (2.0 * tau)
                };
                let (head, _) = quad::adaptive(&f, t0.sqrt(), tb.sqrt(), *tol, 10, 30);
                let tail: C64 = ws.sigma.iter().zip(&ws.w).map(|(&s, &w)| w * ((-tb * s * s).exp() / s)).sum();
                head + tail
            })
            .collect(),
    }
}

/// η at several lower limits t₀ from the same z-samples.
fn eta_profile(fam: &DiracFamily, eps: f64, m: usize, t0s: &[f64], scheme: &TScheme) -> (Vec<f64>, f64) {
    let grid = CircleGrid::new(m, eps);
    let per: Vec<Vec<C64>> = (0..m)
        .into_par_iter()
        .map(|r| {
            // symmetric branch keeps the truncation edge balanced
            let mu = grid.log_z_symmetric(r);
            integrated(&weighted_svd(fam, mu), t0s, scheme)
        })
        .collect();
    let mut imag: f64 = 0.0;
    let vals = (0..t0s.len())
        .map(|j| {
            let s: C64 = per.iter().map(|v| v[j]).sum::<C64>() * (2.0 / m as f64);
            imag = imag.max(s.im.abs());
            s.re
        })
        .collect();
    (vals, imag)
}

/// Polynomial extrapolation in √t₀ to t₀ = 0 (Neville).
fn extrapolate_sqrt(t0s: &[f64], vals: &[f64]) -> f64 {
    let x: Vec<f64> = t0s.iter().map(|t| t.sqrt()).collect();
    let mut p = vals.to_vec();
    let n = p.len();
    for k in 1..n {
        for i in 0..n - k {
            p[i] = (x[i + k] * p[i] - x[i] * p[i + 1]) / (x[i + k] - x[i]);
        }
    }
    p[0]
}

/// The t₀ ladder used for extrapolation at a given band frequency.
///
/// Two errors compete: the truncation edge, of size e^{−c}, and the periodicity of the
/// spectrum, of size e^{−π²n²/(c·f)} at the largest ladder factor f with n kept modes.
/// `c` is balanced between them and never exceeds the requested value.
fn t0_ladder(c: f64, k: f64, n: usize) -> Vec<f64> {
    const FACTORS: [f64; 4] = [1.0, 1.25, 1.5, 2.0];
    let c = c.min(PI * n as f64 / FACTORS[3].sqrt());
    FACTORS.iter().map(|f| f * c / (k * k)).collect()
}

fn eta_at_band(fam: &DiracFamily, eps: f64, m: usize, scheme: &TScheme) -> (f64, f64, f64, f64) {
    let k = fam.band_frequency();
    let n = if fam.ny == 0 { fam.nx } else { fam.nx.min(fam.ny) };
    let t0s = t0_ladder(scheme.c(), k, n);
    let (vals, imag) = eta_profile(fam, eps, m, &t0s, scheme);
    let ext = extrapolate_sqrt(&t0s, &vals);
    // spread of the ladder measures the residual t₀-dependence
    let spread = (ext - extrapolate_sqrt(&t0s[..3], &vals[..3])).abs();
    (ext, vals[0], t0s[0], spread.max(imag))
}

/// η_ε by the contour average over `z_samples` points of |z| = e^ε.
pub fn eta_contour(fam: &DiracFamily, eps: f64, z_samples: usize, scheme: &TScheme) -> Result<EtaResult> {
    let pts = crate::spectral::pencil_spectrum(fam)?;
    let tol = crate::spectral::SpectralTolerances::default();
    let fr = crate::spectral::fredholm_check_with(fam, eps, z_samples.max(16), &pts, &tol);
    if !fr.verdict {
        return Err(Error::Domain(format!(
            "circle |z| = e^{eps} meets the spectral set (nearest distance {:.3e})",
            fr.nearest_distance
        )));
    }
    Ok(eta_contour_unchecked(fam, eps, z_samples, scheme))
}

/// η_ε without the Fredholm precondition check.
pub fn eta_contour_unchecked(fam: &DiracFamily, eps: f64, z_samples: usize, scheme: &TScheme) -> EtaResult {
    let (value, raw, t0, spread) = eta_at_band(fam, eps, z_samples, scheme);
    // the same computation two modes lower
    let lower = fam.truncated(fam.nx.saturating_sub(2).max(1), fam.ny.saturating_sub(2));
    let (v2, ..) = eta_at_band(&lower, eps, z_samples, scheme);
    EtaResult {
        value,
        raw,
        t0,
        eps,
        z_samples,
        t_scheme: scheme.clone(),
        lambda: fam.nx,
        error_estimate: (value - v2).abs() + spread,
        imag_residual: spread,
        convention: CONVENTION,
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct EtaTilde {
    pub value: f64,
    pub spread: f64,
    /// (ε, η_ε, η_{−ε}).
    pub samples: Vec<(f64, f64, f64)>,
}

/// ½(η_ε + η_{−ε}) over a decreasing ε schedule, extrapolated in ε².
pub fn eta_tilde(fam: &DiracFamily, schedule: &[f64], z_samples: usize, scheme: &TScheme) -> Result<EtaTilde> {
    if schedule.is_empty() {
        return Err(Error::Domain("empty ε schedule".into()));
    }
    let pts = crate::spectral::pencil_spectrum(fam)?;
    let emax = schedule.iter().fold(0.0f64, |m, e| m.max(e.abs()));
    if let Some(p) = pts.iter().find(|p| p.ln_abs_z().abs() > 1e-8 && p.ln_abs_z().abs() <= emax) {
        return Err(Error::Domain(format!("ε = {emax} is not small: spectral point at ln|z| = {}", p.ln_abs_z())));
    }
    let samples: Vec<(f64, f64, f64)> = schedule
        .iter()
        .map(|&e| {
            let e = e.abs();
            let p = eta_contour_unchecked(fam, e, z_samples, scheme).value;
            let m = eta_contour_unchecked(fam, -e, z_samples, scheme).value;
            (e, p, m)
        })
        .collect();
    let avgs: Vec<f64> = samples.iter().map(|s| 0.5 * (s.1 + s.2)).collect();
    let value = if samples.len() >= 2 {
        let (e1, a1) = (samples[samples.len() - 2].0, avgs[avgs.len() - 2]);
        let (e2, a2) = (samples[samples.len() - 1].0, avgs[avgs.len() - 1]);
        (a2 * e1 * e1 - a1 * e2 * e2) / (e1 * e1 - e2 * e2)
    } else {
        avgs[0]
    };
    let spread = avgs.iter().fold(0.0f64, |m, a| m.max((a - value).abs()));
    Ok(EtaTilde { value, spread, samples })
}

/// Circle eta invariant from Hurwitz zeta special values.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct OracleEta {
    pub eta: f64,
    /// Dimension of the kernel of the circle operator.
    pub h: usize,
}

/// ζ(0, a) = 1/2 − a.
pub fn hurwitz_zeta_at_zero(a: f64) -> f64 {
    0.5 - a
}

/// η of the circle operator with spectrum (n + a)·2π/L: Σ sign λ |λ|^{−s} at s = 0.
///
/// The scale 2π/L drops out at s = 0. For a = 0 the zero mode is excluded and reported in h.
pub fn eta_product_oracle(y: &CircleModel) -> OracleEta {
    let a = y.twist;
    if a == 0.0 {
        return OracleEta { eta: 0.0, h: 1 };
    }
    // positive part: n + a, n ≥ 0; negative part: −(n + 1 − a), n ≥ 0
    OracleEta { eta: hurwitz_zeta_at_zero(a) - hurwitz_zeta_at_zero(1.0 - a), h: 0 }
}

/// Both sides of the von Neumann trace identity at one t.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct VnReport {
    pub t: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub lhs_imag: f64,
}

impl VnReport {
    pub fn discrepancy(&self) -> f64 {
        (self.lhs - self.rhs).abs()
    }
}

/// Fundamental-domain trace of c⁻D⁺e^{−tD⁻D⁺} on the M-fold cover against the
/// root-of-unity average of the family traces.
pub fn vn_trace_identity(model: &ClosedModel, t: f64, m: usize) -> Result<VnReport> {
    let fam = assemble(model);
    let cover = assemble(&model.cover(m)?);
    let lhs: C64 = cover
        .blocks
        .par_iter()
        .map(|b| {
            let w = crate::linalg::window_matrix(&b.theta_modes(), cover.lx, 0.0, model.lx);
            let wy = window_y_identity(b);
            let win = w.component_mul(&wy);
            let s = svd(&b.dplus);
            let cu = &win * &b.cminus * &s.u;
            let d = diag_ah_b(&s.v, &cu);
            s.sigma.iter().zip(d).map(|(&sg, dk)| dk * (sg * (-t * sg * sg).exp())).sum::<C64>()
        })
        .collect::<Vec<C64>>()
        .iter()
        .sum();
    let grid = CircleGrid::new(m, 0.0);
    let mut rhs = C64::new(0.0, 0.0);
    for r in 0..m {
        let mu = grid.log_z_symmetric(r);
        let ws = weighted_svd(&fam, mu);
        rhs += ws.sigma.iter().zip(&ws.w).map(|(&s, &w)| w * (s * (-t * s * s).exp())).sum::<C64>();
    }
    rhs /= m as f64;
    Ok(VnReport { t, lhs: lhs.re, rhs: rhs.re, lhs_imag: lhs.im })
}

/// The θ-window acts diagonally in y: entries vanish unless the y-modes agree.
fn window_y_identity(b: &crate::dirac::Block) -> CMat {
    let n = b.dim();
    CMat::from_fn(n, n, |r, c| if b.modes[r].1 == b.modes[c].1 { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) })
}

/// Whether η for this family can be compared to the circle oracle.
pub fn is_product_family(fam: &DiracFamily) -> bool {
    fam.layout == Layout::Diagonal
}
