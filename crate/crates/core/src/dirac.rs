//! Chiral Dirac blocks on the truncated Fourier basis and the holomorphic family D±_z.
//!
//! Spinors of each chirality are scalar functions on the torus. With ∇ = d + iA,
//!
//! D⁺ = ∇_θ + i∇_y,  D⁻ = (D⁺)ᴴ,  c⁺(df) = f_θ + i f_y,  c⁻(df) = −f_θ + i f_y,
//!
//! so c⁻c⁺ = −|df|² and c⁻ = −(c⁺)ᴴ. In the product case D⁺ = ∂_θ − 𝒟_Y.
//! Basis vectors are e^{i(2πmθ/Lθ + 2πky/Ly)}/√(LθLy); multiplication by a field h
//! has entries ĥ(m − m', k − k').

use crate::fourier::FourierField;
use crate::model::{CircleModel, ClosedModel, OperatorFields};
use crate::{CMat, Error, Result, C64};
use std::f64::consts::PI;

/// Coupling pattern of the assembled operator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
pub enum Layout {
    /// Constant coefficients: every mode is its own 1×1 block.
    Diagonal,
    /// Coefficients independent of y: one block per y-mode.
    YDecoupled,
    /// General coefficients: a single block.
    Coupled,
}

/// One invariant subspace of the assembled operators.
#[derive(Clone, Debug)]
pub struct Block {
    /// (θ-mode, y-mode) per basis vector.
    pub modes: Vec<(i64, i64)>,
    pub dplus: CMat,
    pub dminus: CMat,
    pub cplus: CMat,
    pub cminus: CMat,
}

#[derive(Clone, Debug)]
pub struct DiracFamily {
    pub lx: f64,
    pub ly: f64,
    pub nx: usize,
    pub ny: usize,
    pub layout: Layout,
    pub blocks: Vec<Block>,
}

/// Galerkin matrix of multiplication by `h` on the given modes.
pub fn mult_matrix(h: &FourierField, rows: &[(i64, i64)], cols: &[(i64, i64)]) -> CMat {
    CMat::from_fn(rows.len(), cols.len(), |r, c| h.coeff(rows[r].0 - cols[c].0, rows[r].1 - cols[c].1))
}

impl Block {
    pub fn dim(&self) -> usize {
        self.modes.len()
    }

    pub fn theta_modes(&self) -> Vec<i64> {
        self.modes.iter().map(|m| m.0).collect()
    }

    /// (D⁺ − μc⁺, D⁻ − μc⁻).
    pub fn at_mu(&self, mu: C64) -> (CMat, CMat) {
        (&self.dplus - &self.cplus * mu, &self.dminus - &self.cminus * mu)
    }

    pub fn dplus_at(&self, mu: C64) -> CMat {
        &self.dplus - &self.cplus * mu
    }
}

pub fn assemble(model: &ClosedModel) -> DiracFamily {
    assemble_fields(&model.operator_fields())
}

pub fn assemble_fields(f: &OperatorFields) -> DiracFamily {
    let (nx, ny) = (f.nx as i64, f.ny as i64);
    let layout = if f.constant() {
        Layout::Diagonal
    } else if f.y_independent() {
        Layout::YDecoupled
    } else {
        Layout::Coupled
    };
    let groups: Vec<Vec<(i64, i64)>> = match layout {
        Layout::Diagonal => (-ny..=ny).flat_map(|k| (-nx..=nx).map(move |m| vec![(m, k)])).collect(),
        Layout::YDecoupled => (-ny..=ny).map(|k| (-nx..=nx).map(|m| (m, k)).collect()).collect(),
        Layout::Coupled => vec![(-ny..=ny).flat_map(|k| (-nx..=nx).map(move |m| (m, k))).collect()],
    };
    // iA_θ − A_y and the Clifford fields
    let potential = FourierField::from_coeffs(
        f.lx,
        f.ly,
        f.a_theta.px().max(f.a_y.px()),
        f.a_theta.py().max(f.a_y.py()),
        |p, q| f.a_theta.coeff(p, q) * C64::new(0.0, 1.0) - f.a_y.coeff(p, q),
    );
    let cp = complex_combine(&f.df.f_theta, &f.df.f_y, 1.0);
    let cm = complex_combine(&f.df.f_theta, &f.df.f_y, -1.0);
    let (kx, ky) = (2.0 * PI / f.lx, 2.0 * PI / f.ly);
    let blocks = groups
        .into_iter()
        .map(|modes| {
            let mut dplus = mult_matrix(&potential, &modes, &modes);
            for (i, &(m, k)) in modes.iter().enumerate() {
                dplus[(i, i)] += C64::new(-ky * k as f64, kx * m as f64);
            }
            let dminus = dplus.adjoint();
            Block { cplus: mult_matrix(&cp, &modes, &modes), cminus: mult_matrix(&cm, &modes, &modes), dplus, dminus, modes }
        })
        .collect();
    DiracFamily { lx: f.lx, ly: f.ly, nx: f.nx, ny: f.ny, layout, blocks }
}

/// Coefficients of s·f_θ + i·f_y.
fn complex_combine(ft: &FourierField, fy: &FourierField, s: f64) -> FourierField {
    FourierField::from_coeffs(ft.lx, ft.ly, ft.px().max(fy.px()), ft.py().max(fy.py()), |p, q| {
        ft.coeff(p, q) * s + fy.coeff(p, q) * C64::new(0.0, 1.0)
    })
}

/// ln z on branch k: Log z + 2πik.
pub fn log_branch(z: C64, k: i64) -> Result<C64> {
    if z.norm() == 0.0 {
        return Err(Error::Domain("the family is not defined at z = 0".into()));
    }
    Ok(z.ln() + C64::new(0.0, 2.0 * PI * k as f64))
}

impl DiracFamily {
    pub fn dim(&self) -> usize {
        self.blocks.iter().map(Block::dim).sum()
    }

    /// Per-block (D⁺_z, D⁻_z) on branch k.
    pub fn family_at(&self, z: C64, k: i64) -> Result<Vec<(CMat, CMat)>> {
        let mu = log_branch(z, k)?;
        Ok(self.blocks.iter().map(|b| b.at_mu(mu)).collect())
    }

    /// The family on the smaller band |m| ≤ nx, |k| ≤ ny (principal submatrices).
    pub fn truncated(&self, nx: usize, ny: usize) -> DiracFamily {
        let (nx, ny) = (nx.min(self.nx), ny.min(self.ny));
        let blocks = self
            .blocks
            .iter()
            .filter_map(|b| {
                let keep: Vec<usize> = (0..b.dim())
                    .filter(|&i| b.modes[i].0.unsigned_abs() as usize <= nx && b.modes[i].1.unsigned_abs() as usize <= ny)
                    .collect();
                if keep.is_empty() {
                    return None;
                }
                let sub = |m: &CMat| CMat::from_fn(keep.len(), keep.len(), |r, c| m[(keep[r], keep[c])]);
                Some(Block {
                    modes: keep.iter().map(|&i| b.modes[i]).collect(),
                    dplus: sub(&b.dplus),
                    dminus: sub(&b.dminus),
                    cplus: sub(&b.cplus),
                    cminus: sub(&b.cminus),
                })
            })
            .collect();
        DiracFamily { lx: self.lx, ly: self.ly, nx, ny, layout: self.layout, blocks }
    }

    /// Largest |D⁺| diagonal frequency kept, min over both axes.
    pub fn band_frequency(&self) -> f64 {
        (2.0 * PI * self.nx as f64 / self.lx).min(if self.ny == 0 { f64::INFINITY } else { 2.0 * PI * self.ny as f64 / self.ly })
    }

    /// Largest deviation of D⁻ from (D⁺)ᴴ.
    pub fn adjointness_defect(&self) -> f64 {
        self.blocks.iter().map(|b| crate::linalg::max_abs(&(&b.dminus - b.dplus.adjoint()))).fold(0.0, f64::max)
    }

    /// Dense (D⁺, D⁻, c⁺, c⁻) over all modes, in block order.
    pub fn dense(&self) -> (Vec<(i64, i64)>, [CMat; 4]) {
        let n = self.dim();
        let mut out = [CMat::zeros(n, n), CMat::zeros(n, n), CMat::zeros(n, n), CMat::zeros(n, n)];
        let mut modes = Vec::with_capacity(n);
        let mut off = 0;
        for b in &self.blocks {
            let d = b.dim();
            for (o, m) in out.iter_mut().zip([&b.dplus, &b.dminus, &b.cplus, &b.cminus]) {
                o.view_mut((off, off), (d, d)).copy_from(m);
            }
            modes.extend_from_slice(&b.modes);
            off += d;
        }
        (modes, out)
    }
}

/// Spectrum of the Dirac operator on a twisted circle.
#[derive(Clone, Debug, PartialEq)]
pub struct CircleDirac {
    pub modes: Vec<i64>,
    pub spectrum: Vec<f64>,
}

pub fn circle_dirac(y: &CircleModel) -> CircleDirac {
    let n = y.cutoff as i64;
    let modes: Vec<i64> = (-n..=n).collect();
    let spectrum = modes.iter().map(|&k| (k as f64 + y.twist) * 2.0 * PI / y.length).collect();
    CircleDirac { modes, spectrum }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::max_abs;
    use crate::model::{build_torus_model, df_deform, product_model, HarmonicSpec};

    fn tau() -> f64 {
        2.0 * PI
    }

    fn product(a: f64, n: usize) -> ClosedModel {
        product_model(&CircleModel::new(tau(), a, n).unwrap()).unwrap()
    }

    fn coupled_model() -> ClosedModel {
        let phi = FourierField::sample(tau(), tau(), 8, 8, |x, y| 0.3 * x.cos() * y.cos() + 0.1 * (x + y).sin());
        let m = build_torus_model(tau(), tau(), 3, 0.25, Some(phi), None).unwrap();
        df_deform(&m, 0.3, &HarmonicSpec { p: 1, q: 1, amplitude: 1.0 }).unwrap()
    }

    #[test]
    fn product_blocks_are_derivative_minus_circle_spectrum() {
        let fam = assemble(&product(0.25, 8));
        assert_eq!(fam.layout, Layout::Diagonal);
        assert_eq!(fam.dim(), 17 * 17);
        for b in &fam.blocks {
            let (m, k) = b.modes[0];
            let expect = C64::new(-(k as f64 + 0.25), m as f64);
            assert!((b.dplus[(0, 0)] - expect).norm() < 1e-14);
            assert!((b.cplus[(0, 0)].re - 1.0 / tau()).abs() < 1e-15);
        }
    }

    #[test]
    fn untwisted_kernel_is_the_constant_mode() {
        let fam = assemble(&product(0.0, 4));
        let (modes, [dp, ..]) = fam.dense();
        let sv = crate::linalg::singular_values(&dp);
        let zeros = sv.iter().filter(|&&s| s < 1e-12).count();
        assert_eq!(zeros, 1);
        let i = modes.iter().position(|&m| m == (0, 0)).unwrap();
        assert!(dp[(i, i)].norm() < 1e-15);
    }

    #[test]
    fn adjointness_and_clifford_relations() {
        let m = coupled_model();
        let fam = assemble(&m);
        assert_eq!(fam.layout, Layout::Coupled);
        assert_eq!(fam.dim(), 49);
        assert!(fam.adjointness_defect() <= 1e-12);
        let b = &fam.blocks[0];
        assert!(max_abs(&(&b.cminus + b.cplus.adjoint())) < 1e-15);
        assert!(crate::linalg::sigma_min(&b.cplus) > 0.0);
    }

    #[test]
    fn family_at_branches() {
        let fam = assemble(&coupled_model());
        let base = &fam.blocks[0];
        let at1 = fam.family_at(C64::new(1.0, 0.0), 0).unwrap();
        assert!(max_abs(&(&at1[0].0 - &base.dplus)) == 0.0);
        let e = C64::new(1.0f64.exp(), 0.0);
        let at = fam.family_at(e, 1).unwrap();
        let shift = C64::new(1.0, tau());
        assert!(max_abs(&(&at[0].0 - (&base.dplus - &base.cplus * shift))) < 1e-13);
        assert!(fam.family_at(C64::new(0.0, 0.0), 0).is_err());
    }

    #[test]
    fn adjoint_relation_off_the_circle() {
        let fam = assemble(&coupled_model());
        let z = C64::from_polar(1.3, 0.7);
        let zr = C64::new(1.0, 0.0) / z.conj();
        let a = fam.family_at(z, 0).unwrap();
        let b = fam.family_at(zr, 0).unwrap();
        assert!(max_abs(&(a[0].0.adjoint() - &b[0].1)) < 1e-13);
        let u = fam.family_at(C64::from_polar(1.0, 2.0), 0).unwrap();
        assert!(max_abs(&(u[0].0.adjoint() - &u[0].1)) < 1e-13);
    }

    #[test]
    fn product_family_on_unit_circle() {
        let fam = assemble(&product(0.25, 4));
        let s = 0.8;
        let at = fam.family_at(C64::from_polar(1.0, s), 0).unwrap();
        for (b, (dp, _)) in fam.blocks.iter().zip(&at) {
            let (m, k) = b.modes[0];
            // (1/2π)·(∂_θ − λ − is) on θ-length 2π with df = dθ/2π
            let expect = C64::new(-(k as f64 + 0.25), m as f64) - C64::new(0.0, s) / tau();
            assert!((dp[(0, 0)] - expect).norm() < 1e-14);
        }
    }

    #[test]
    fn y_independent_model_decouples() {
        let phi = FourierField::cosine(tau(), tau(), 0.4, 1, 0.0);
        let m = build_torus_model(tau(), tau(), 4, 0.25, Some(phi), None).unwrap();
        let fam = assemble(&m);
        assert_eq!(fam.layout, Layout::YDecoupled);
        assert_eq!(fam.blocks.len(), 9);
        assert!(fam.blocks.iter().all(|b| b.modes.iter().all(|x| x.1 == b.modes[0].1)));
    }

    #[test]
    fn circle_spectra() {
        let c = circle_dirac(&CircleModel::new(tau(), 0.5, 4).unwrap());
        let mut s = c.spectrum.clone();
        s.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!(s.windows(2).all(|w| w[0] < w[1]));
        assert!(s.contains(&0.5) && s.contains(&-0.5));
        let c0 = circle_dirac(&CircleModel::new(tau(), 0.0, 4).unwrap());
        assert!(c0.spectrum.contains(&0.0));
        let c1 = circle_dirac(&CircleModel::new(tau(), 0.25, 4).unwrap());
        assert_eq!(c1.spectrum.iter().fold(f64::INFINITY, |m, x| m.min(x.abs())), 0.25);
    }
}
