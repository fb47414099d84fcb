//! Spectral set of the family D⁺_z = D⁺ − μ·c⁺(df), μ = ln z.
//!
//! Spectral points are eigenvalues of the linear pencil D⁺v = μ c⁺v. The truncated pencil
//! carries every ln-branch of a point at once, so eigenvalues with Im μ in the central
//! window [−π, π) serve as branch representatives; reported exponents are reduced to
//! the strip 0 ≤ Im μ < 2π.

use crate::dirac::{Block, DiracFamily};
use crate::linalg::{gap_nullity, singular_values, svd};
use crate::quad;
use crate::{CMat, Error, Result, C64};
use rayon::prelude::*;
use serde::Serialize;
use std::f64::consts::PI;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SpectralPoint {
    pub mu: [f64; 2],
    pub z: [f64; 2],
    pub d: usize,
    pub jordan: Vec<usize>,
}

impl SpectralPoint {
    pub fn mu(&self) -> C64 {
        C64::new(self.mu[0], self.mu[1])
    }

    pub fn ln_abs_z(&self) -> f64 {
        self.mu[0]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FredholmReport {
    pub delta: f64,
    pub verdict: bool,
    pub margin: f64,
    pub nearest_distance: f64,
}

/// Tolerances for clustering and rank decisions.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralTolerances {
    /// Eigenvalues closer than this (relative to 1 + |μ|) are one spectral point.
    pub cluster: f64,
    /// Decade sweep of relative rank thresholds.
    pub rank_taus: Vec<f64>,
    pub gap_ratio: f64,
    /// |Re μ − δ| below this makes a circle non-Fredholm.
    pub gap: f64,
    /// Smallest admissible singular value on a Fredholm circle.
    pub margin: f64,
}

impl Default for SpectralTolerances {
    fn default() -> Self {
        Self { cluster: 1e-6, rank_taus: vec![1e-10, 1e-9, 1e-8, 1e-7], gap_ratio: 1e3, gap: 1e-6, margin: 1e-8 }
    }
}

fn strip(mu: C64) -> C64 {
    let im = mu.im.rem_euclid(2.0 * PI);
    // representatives just below a multiple of 2π belong to the strip's lower edge
    C64::new(mu.re, if 2.0 * PI - im < 1e-9 { 0.0 } else { im })
}

fn pencil_matrix(b: &Block) -> Result<CMat> {
    b.cplus
        .clone()
        .lu()
        .solve(&b.dplus)
        .ok_or_else(|| Error::Domain("Clifford multiplication by df is singular".into()))
}

/// All eigenvalues of c⁺⁻¹D⁺ per block, every branch included.
pub fn pencil_eigenvalues(fam: &DiracFamily) -> Result<Vec<C64>> {
    let per: Vec<Result<Vec<C64>>> =
        fam.blocks.par_iter().map(|b| Ok(crate::linalg::eigenvalues(&pencil_matrix(b)?))).collect();
    let mut out = Vec::new();
    for v in per {
        out.extend(v?);
    }
    Ok(out)
}

/// Jordan chain lengths of `a` at eigenvalue `mu` with algebraic multiplicity `alg`.
fn jordan_structure(a: &CMat, mu: C64, alg: usize, tol: &SpectralTolerances) -> Vec<usize> {
    if alg == 1 {
        return vec![1];
    }
    let n = a.nrows();
    let shifted = a - CMat::identity(n, n) * mu;
    let scale = crate::linalg::max_abs(a).max(1.0);
    let mut power = CMat::identity(n, n);
    let mut nullities = vec![0usize];
    for _ in 0..alg {
        power = &power * &shifted;
        let sv: Vec<f64> = singular_values(&power).iter().map(|s| s / scale.powi(nullities.len() as i32)).collect();
        // eigenvalues of a cluster are only accurate to cluster tolerance; loosen accordingly
        let taus: Vec<f64> = tol.rank_taus.iter().map(|t| t.max(tol.cluster).powf(1.0 / nullities.len() as f64)).collect();
        let k = gap_nullity(&sv, &taus, 1.0).unwrap_or(alg).min(alg);
        nullities.push(k);
        if k >= alg {
            break;
        }
    }
    // number of chains of length ≥ j is nullity(j) − nullity(j−1)
    let ge: Vec<usize> = nullities.windows(2).map(|w| w[1].saturating_sub(w[0])).collect();
    let mut chains = Vec::new();
    for j in 0..ge.len() {
        let next = ge.get(j + 1).copied().unwrap_or(0);
        for _ in 0..ge[j].saturating_sub(next) {
            chains.push(j + 1);
        }
    }
    let total: usize = chains.iter().sum();
    if total != alg {
        // rank decisions inconsistent with the cluster size: report one chain per vector
        return vec![1; alg];
    }
    chains.sort_unstable_by(|a, b| b.cmp(a));
    chains
}

/// Spectral points with branch representatives in the central window.
pub fn pencil_spectrum(fam: &DiracFamily) -> Result<Vec<SpectralPoint>> {
    pencil_spectrum_with(fam, &SpectralTolerances::default())
}

pub fn pencil_spectrum_with(fam: &DiracFamily, tol: &SpectralTolerances) -> Result<Vec<SpectralPoint>> {
    let per_block: Vec<Result<Vec<(C64, usize, Vec<usize>)>>> = fam
        .blocks
        .par_iter()
        .map(|b| {
            let a = pencil_matrix(b)?;
            let eig = crate::linalg::eigenvalues(&a);
            if eig.iter().any(|e| !e.re.is_finite() || !e.im.is_finite()) {
                return Err(Error::Indeterminate("pencil eigensolver returned non-finite values".into()));
            }
            let central: Vec<C64> = eig.into_iter().filter(|e| e.im >= -PI && e.im < PI).collect();
            let clusters = cluster(&central, tol.cluster);
            Ok(clusters
                .into_iter()
                .map(|(mu, k)| {
                    let jordan = jordan_structure(&a, mu, k, tol);
                    (mu, k, jordan)
                })
                .collect())
        })
        .collect();
    let mut all: Vec<(C64, usize, Vec<usize>)> = Vec::new();
    for v in per_block {
        all.extend(v?);
    }
    // merge coincident points from different blocks
    let mut merged: Vec<(C64, usize, Vec<usize>)> = Vec::new();
    for (mu, d, j) in all {
        if let Some(e) = merged.iter_mut().find(|e| (e.0 - mu).norm() <= tol.cluster * (1.0 + mu.norm())) {
            e.1 += d;
            e.2.extend(j);
        } else {
            merged.push((mu, d, j));
        }
    }
    merged.sort_by(|a, b| a.0.re.partial_cmp(&b.0.re).unwrap().then(a.0.im.partial_cmp(&b.0.im).unwrap()));
    Ok(merged
        .into_iter()
        .map(|(mu, d, mut jordan)| {
            jordan.sort_unstable_by(|a, b| b.cmp(a));
            let m = strip(mu);
            let z = m.exp();
            SpectralPoint { mu: [m.re, m.im], z: [z.re, z.im], d, jordan }
        })
        .collect())
}

fn cluster(vals: &[C64], tol: f64) -> Vec<(C64, usize)> {
    let mut out: Vec<(C64, usize, C64)> = Vec::new();
    for &v in vals {
        if let Some(c) = out.iter_mut().find(|c| (c.0 - v).norm() <= tol * (1.0 + v.norm())) {
            c.1 += 1;
            c.2 += v;
        } else {
            out.push((v, 1, v));
        }
    }
    out.into_iter().map(|(_, k, s)| (s / k as f64, k)).collect()
}

/// Number of solutions of the triangular chain system at z, for chains up to `max_chain`.
///
/// The system A(μ)φ₀ = 0, A(μ)φ_j = c⁺φ_{j−1} is written as one block-bidiagonal
/// matrix; its nullity counts Σ min(chain length, max_chain) over Jordan chains.
pub fn multiplicity_d(fam: &DiracFamily, z: C64, max_chain: usize) -> Result<usize> {
    multiplicity_d_with(fam, z, max_chain, &SpectralTolerances::default())
}

pub fn multiplicity_d_with(fam: &DiracFamily, z: C64, max_chain: usize, tol: &SpectralTolerances) -> Result<usize> {
    let mu = crate::dirac::log_branch(z, 0)?;
    let m = max_chain.max(1);
    let mut total = 0;
    for b in &fam.blocks {
        let n = b.dim();
        let a = b.dplus_at(mu);
        let mut t = CMat::zeros(n * m, n * m);
        for j in 0..m {
            t.view_mut((j * n, j * n), (n, n)).copy_from(&a);
            if j + 1 < m {
                t.view_mut((j * n, (j + 1) * n), (n, n)).copy_from(&(-&b.cplus));
            }
        }
        let scale = crate::linalg::max_abs(&a).max(crate::linalg::max_abs(&b.cplus)).max(1.0);
        let sv: Vec<f64> = singular_values(&t).iter().map(|s| s / scale).collect();
        let taus: Vec<f64> = tol.rank_taus.iter().map(|t| t.max(tol.cluster)).collect();
        match gap_nullity(&sv, &taus, tol.gap_ratio) {
            Some(k) => total += k,
            None => return Err(Error::Indeterminate(format!("rank of the chain system at z = {z} is ambiguous"))),
        }
    }
    Ok(total)
}

/// Samples σ_min(D⁺_z) on |z| = e^δ and compares with the pencil spectrum.
pub fn fredholm_check(fam: &DiracFamily, delta: f64, samples: usize) -> Result<FredholmReport> {
    let pts = pencil_spectrum(fam)?;
    Ok(fredholm_check_with(fam, delta, samples, &pts, &SpectralTolerances::default()))
}

pub fn fredholm_check_with(
    fam: &DiracFamily,
    delta: f64,
    samples: usize,
    pts: &[SpectralPoint],
    tol: &SpectralTolerances,
) -> FredholmReport {
    let samples = samples.max(16);
    let margin = (0..samples)
        .into_par_iter()
        .map(|r| {
            let mu = C64::new(delta, 2.0 * PI * r as f64 / samples as f64 - PI);
            fam.blocks.iter().map(|b| crate::linalg::sigma_min(&b.dplus_at(mu))).fold(f64::INFINITY, f64::min)
        })
        .reduce(|| f64::INFINITY, f64::min);
    let nearest = pts.iter().map(|p| (p.ln_abs_z() - delta).abs()).fold(f64::INFINITY, f64::min);
    FredholmReport { delta, verdict: margin > tol.margin && nearest > tol.gap, margin, nearest_distance: nearest }
}

/// Σ d(z) over spectral points with e^δ < |z| < e^{δ'}.
pub fn index_change(fam: &DiracFamily, delta: f64, delta2: f64) -> Result<i64> {
    let pts = pencil_spectrum(fam)?;
    index_change_with(&pts, fam, delta, delta2)
}

pub fn index_change_with(pts: &[SpectralPoint], fam: &DiracFamily, delta: f64, delta2: f64) -> Result<i64> {
    if !(delta < delta2) {
        return Err(Error::Domain("index_change needs δ < δ′".into()));
    }
    let tol = SpectralTolerances::default();
    for d in [delta, delta2] {
        if !fredholm_check_with(fam, d, 16, pts, &tol).verdict {
            return Err(Error::Domain(format!("weight {d} is not Fredholm")));
        }
    }
    Ok(pts.iter().filter(|p| p.ln_abs_z() > delta && p.ln_abs_z() < delta2).map(|p| p.d as i64).sum())
}

/// h = Σ_{|z|=1} d(z), counting points with |ln|z|| < band.
pub fn h_count(pts: &[SpectralPoint], band: f64) -> Result<usize> {
    if let Some(p) = pts.iter().find(|p| p.ln_abs_z().abs() >= band && p.ln_abs_z().abs() < 100.0 * band) {
        return Err(Error::Indeterminate(format!("spectral point at ln|z| = {} sits near the unit-circle band", p.ln_abs_z())));
    }
    Ok(pts.iter().filter(|p| p.ln_abs_z().abs() < band).map(|p| p.d).sum())
}

/// Winding number of μ ↦ det(D⁺ − μc⁺) around a circle in the μ-plane.
///
/// Independent of the eigensolver: it counts pencil eigenvalues inside the circle.
pub fn pencil_winding(fam: &DiracFamily, center: C64, radius: f64, samples: usize) -> i64 {
    let mut total = 0.0;
    for b in &fam.blocks {
        let det = |mu: C64| -> C64 { b.dplus_at(mu).lu().determinant() };
        let mut prev = det(center + radius);
        let mut acc = 0.0;
        for k in 1..=samples {
            let cur = det(center + C64::from_polar(radius, 2.0 * PI * k as f64 / samples as f64));
            acc += (cur / prev).arg();
            prev = cur;
        }
        total += acc / (2.0 * PI);
    }
    total.round() as i64
}

/// Both sides of the finite residue identity.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResidueReport {
    /// (1/π)∫_ℝ Re Tr(c⁻(D⁻ − iσc⁻)⁻¹) dσ, by quadrature.
    pub contour: f64,
    /// Σ sign(Re ν)·d over pencil eigenvalues ν of D⁻ (all branches).
    pub count: i64,
    pub quadrature_error: f64,
}

impl ResidueReport {
    pub fn discrepancy(&self) -> f64 {
        (self.contour - self.count as f64).abs()
    }
}

/// Residue identity for the truncated family.
///
/// The integrand z ↦ Tr(c⁻(D⁻_z)⁻¹) of the truncated family is single-valued only up to
/// the branch structure of ln z, so the contour integral is unfolded over all branches:
/// μ = iσ with σ ∈ ℝ, parametrized by σ = S·tan φ.
pub fn residue_identity(fam: &DiracFamily, tol: f64) -> Result<ResidueReport> {
    let eig = pencil_eigenvalues(fam)?;
    // D⁻ pencil eigenvalues are ν = −conj(μ)
    if eig.iter().any(|m| m.re.abs() < 1e-9) {
        return Err(Error::Domain("a spectral point lies on the unit circle".into()));
    }
    let count: i64 = eig.iter().map(|m| if m.re < 0.0 { 1 } else { -1 }).sum();
    let scale = eig.iter().map(|m| m.norm()).fold(1.0, f64::max);
    let blocks = &fam.blocks;
    let integrand = |phi: f64| -> C64 {
        let sigma = scale * phi.tan();
        let jac = scale / phi.cos().powi(2);
        let mu = C64::new(0.0, sigma);
        let s: f64 = blocks
            .iter()
            .map(|b| {
                let a = &b.dminus - &b.cminus * mu;
                let x = a.lu().solve(&b.cminus).expect("resolvent exists off the spectrum");
                // Tr(c⁻ A⁻¹) = Tr(A⁻¹ c⁻)
                x.trace().re
            })
            .sum();
        C64::new(s * jac / PI, 0.0)
    };
    let h = PI / 2.0;
    let (v, err) = quad::adaptive(&integrand, -h, h, tol, 12, 30);
    Ok(ResidueReport { contour: v.re, count, quadrature_error: err })
}

/// σ_min of c⁺ restricted from ker D⁺ to coker D⁺ (Taubes' injectivity hypothesis).
///
/// Returns None when D⁺ has no kernel.
pub fn injectivity_margin(fam: &DiracFamily, tol: f64) -> Option<f64> {
    let mut out: Option<f64> = None;
    for b in &fam.blocks {
        let s = svd(&b.dplus);
        let ker: Vec<usize> = (0..s.sigma.len()).filter(|&k| s.sigma[k] < tol).collect();
        if ker.is_empty() {
            continue;
        }
        let v = CMat::from_fn(b.dim(), ker.len(), |i, j| s.v[(i, ker[j])]);
        let u = CMat::from_fn(b.dim(), ker.len(), |i, j| s.u[(i, ker[j])]);
        let m = u.adjoint() * &b.cplus * v;
        let smin = crate::linalg::sigma_min(&m);
        out = Some(out.map_or(smin, |o: f64| o.min(smin)));
    }
    out
}
