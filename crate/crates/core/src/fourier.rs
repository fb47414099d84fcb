//! Fourier coefficient tables for real fields on a flat torus.
//!
//! A field h(θ, y) on [0, Lθ) × [0, Ly) is stored through its coefficients
//! ĥ(p, q) = mean of h·e^{-i(2πpθ/Lθ + 2πqy/Ly)}, for |p| ≤ px and |q| ≤ py.

use crate::C64;
use rustfft::FftPlanner;
use std::f64::consts::PI;

#[derive(Clone, Debug, PartialEq)]
pub struct FourierField {
    pub lx: f64,
    pub ly: f64,
    px: usize,
    py: usize,
    c: Vec<C64>,
}

impl FourierField {
    pub fn zero(lx: f64, ly: f64) -> Self {
        Self::constant(lx, ly, 0.0)
    }

    pub fn constant(lx: f64, ly: f64, v: f64) -> Self {
        Self { lx, ly, px: 0, py: 0, c: vec![C64::new(v, 0.0)] }
    }

    /// Builds a field from a coefficient closure on the index box |p| ≤ px, |q| ≤ py.
    pub fn from_coeffs(lx: f64, ly: f64, px: usize, py: usize, f: impl Fn(i64, i64) -> C64) -> Self {
        let mut out = Self { lx, ly, px, py, c: vec![C64::new(0.0, 0.0); (2 * px + 1) * (2 * py + 1)] };
        for p in -(px as i64)..=(px as i64) {
            for q in -(py as i64)..=(py as i64) {
                let i = out.idx(p, q);
                out.c[i] = f(p, q);
            }
        }
        out
    }

    /// Samples `f` on an `nx × ny` grid and keeps the coefficients that the grid resolves.
    ///
    /// Use `ny = 1` for fields that do not depend on y.
    pub fn sample(lx: f64, ly: f64, nx: usize, ny: usize, f: impl Fn(f64, f64) -> f64) -> Self {
        assert!(nx >= 1 && ny >= 1);
        let mut planner = FftPlanner::<f64>::new();
        let mut grid: Vec<C64> = Vec::with_capacity(nx * ny);
        for i in 0..nx {
            let x = lx * i as f64 / nx as f64;
            for j in 0..ny {
                let y = ly * j as f64 / ny as f64;
                grid.push(C64::new(f(x, y), 0.0));
            }
        }
        // rows along y
        let fy = planner.plan_fft_forward(ny);
        for row in grid.chunks_mut(ny) {
            fy.process(row);
        }
        // columns along x
        let fx = planner.plan_fft_forward(nx);
        let mut col = vec![C64::new(0.0, 0.0); nx];
        for j in 0..ny {
            for i in 0..nx {
                col[i] = grid[i * ny + j];
            }
            fx.process(&mut col);
            for i in 0..nx {
                grid[i * ny + j] = col[i];
            }
        }
        let px = (nx - 1) / 2;
        let py = (ny - 1) / 2;
        let norm = 1.0 / (nx * ny) as f64;
        let wrap = |k: i64, n: usize| k.rem_euclid(n as i64) as usize;
        Self::from_coeffs(lx, ly, px, py, |p, q| grid[wrap(p, nx) * ny + wrap(q, ny)] * norm)
    }

    /// Pure θ-harmonic a·cos(2πpθ/Lθ + phase).
    pub fn cosine(lx: f64, ly: f64, amp: f64, p: i64, phase: f64) -> Self {
        let pa = p.unsigned_abs() as usize;
        let half = C64::from_polar(amp / 2.0, phase);
        Self::from_coeffs(lx, ly, pa, 0, |pp, _| {
            if p == 0 && pp == 0 {
                C64::new(amp * phase.cos(), 0.0)
            } else if pp == p {
                half
            } else if pp == -p {
                half.conj()
            } else {
                C64::new(0.0, 0.0)
            }
        })
    }

    fn idx(&self, p: i64, q: i64) -> usize {
        (p + self.px as i64) as usize * (2 * self.py + 1) + (q + self.py as i64) as usize
    }

    pub fn px(&self) -> usize {
        self.px
    }

    pub fn py(&self) -> usize {
        self.py
    }

    pub fn coeff(&self, p: i64, q: i64) -> C64 {
        if p.unsigned_abs() as usize > self.px || q.unsigned_abs() as usize > self.py {
            C64::new(0.0, 0.0)
        } else {
            self.c[self.idx(p, q)]
        }
    }

    pub fn mean(&self) -> f64 {
        self.coeff(0, 0).re
    }

    fn map(&self, f: impl Fn(i64, i64, C64) -> C64) -> Self {
        Self::from_coeffs(self.lx, self.ly, self.px, self.py, |p, q| f(p, q, self.coeff(p, q)))
    }

    pub fn d_theta(&self) -> Self {
        let k = 2.0 * PI / self.lx;
        self.map(|p, _, c| c * C64::new(0.0, k * p as f64))
    }

    pub fn d_y(&self) -> Self {
        let k = 2.0 * PI / self.ly;
        self.map(|_, q, c| c * C64::new(0.0, k * q as f64))
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|_, _, c| c * s)
    }

    pub fn add(&self, other: &Self) -> Self {
        let px = self.px.max(other.px);
        let py = self.py.max(other.py);
        Self::from_coeffs(self.lx, self.ly, px, py, |p, q| self.coeff(p, q) + other.coeff(p, q))
    }

    pub fn add_constant(&self, v: f64) -> Self {
        self.add(&Self::constant(self.lx, self.ly, v))
    }

    /// Inverse Laplacian on the mean-free part; the mean is dropped.
    pub fn inverse_laplacian(&self) -> Self {
        let (kx, ky) = (2.0 * PI / self.lx, 2.0 * PI / self.ly);
        self.map(|p, q, c| {
            if p == 0 && q == 0 {
                C64::new(0.0, 0.0)
            } else {
                let w = (kx * p as f64).powi(2) + (ky * q as f64).powi(2);
                -c / w
            }
        })
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let (kx, ky) = (2.0 * PI / self.lx, 2.0 * PI / self.ly);
        let mut s = C64::new(0.0, 0.0);
        for p in -(self.px as i64)..=(self.px as i64) {
            for q in -(self.py as i64)..=(self.py as i64) {
                s += self.coeff(p, q) * C64::from_polar(1.0, kx * p as f64 * x + ky * q as f64 * y);
            }
        }
        s.re
    }

    /// Largest coefficient modulus with q ≠ 0.
    pub fn y_content(&self) -> f64 {
        let mut m: f64 = 0.0;
        for p in -(self.px as i64)..=(self.px as i64) {
            for q in -(self.py as i64)..=(self.py as i64) {
                if q != 0 {
                    m = m.max(self.coeff(p, q).norm());
                }
            }
        }
        m
    }

    /// Largest non-constant coefficient modulus.
    pub fn variation(&self) -> f64 {
        let mut m: f64 = 0.0;
        for p in -(self.px as i64)..=(self.px as i64) {
            for q in -(self.py as i64)..=(self.py as i64) {
                if p != 0 || q != 0 {
                    m = m.max(self.coeff(p, q).norm());
                }
            }
        }
        m
    }

    /// Defect of conjugate symmetry ĥ(-p,-q) = conj ĥ(p,q); zero for real fields.
    pub fn reality_defect(&self) -> f64 {
        let mut m: f64 = 0.0;
        for p in -(self.px as i64)..=(self.px as i64) {
            for q in -(self.py as i64)..=(self.py as i64) {
                m = m.max((self.coeff(-p, -q) - self.coeff(p, q).conj()).norm());
            }
        }
        m
    }

    /// Drops coefficients below `tol` at the edge of the table.
    pub fn trimmed(&self, tol: f64) -> Self {
        let mut px = 0usize;
        let mut py = 0usize;
        for p in -(self.px as i64)..=(self.px as i64) {
            for q in -(self.py as i64)..=(self.py as i64) {
                if self.coeff(p, q).norm() > tol {
                    px = px.max(p.unsigned_abs() as usize);
                    py = py.max(q.unsigned_abs() as usize);
                }
            }
        }
        Self::from_coeffs(self.lx, self.ly, px, py, |p, q| self.coeff(p, q))
    }

    /// L² inner product ∫ h·g over the torus for real fields.
    pub fn integral_product(&self, other: &Self) -> f64 {
        let mut s = C64::new(0.0, 0.0);
        for p in -(self.px as i64)..=(self.px as i64) {
            for q in -(self.py as i64)..=(self.py as i64) {
                s += self.coeff(p, q) * other.coeff(-p, -q);
            }
        }
        s.re * self.lx * self.ly
    }

    /// Repeats the field `m` times along θ: the result lives on a torus of length m·Lθ.
    pub fn repeat_theta(&self, m: usize) -> Self {
        let mi = m as i64;
        Self::from_coeffs(self.lx * m as f64, self.ly, self.px * m, self.py, |p, q| {
            if p % mi == 0 {
                self.coeff(p / mi, q)
            } else {
                C64::new(0.0, 0.0)
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_recovers_trig_polynomial() {
        let l = 2.0 * PI;
        let f = FourierField::sample(l, 3.0, 16, 8, |x, y| 1.0 + 0.5 * x.cos() + 0.25 * (2.0 * PI * y / 3.0).sin());
        assert!((f.coeff(0, 0).re - 1.0).abs() < 1e-14);
        assert!((f.coeff(1, 0) - C64::new(0.25, 0.0)).norm() < 1e-14);
        assert!((f.coeff(0, 1) - C64::new(0.0, -0.125)).norm() < 1e-14);
        assert!(f.reality_defect() < 1e-14);
        assert!((f.eval(0.3, 0.7) - (1.0 + 0.5 * 0.3f64.cos() + 0.25 * (2.0 * PI * 0.7 / 3.0).sin())).abs() < 1e-13);
    }

    #[test]
    fn derivative_and_inverse_laplacian() {
        let l = 2.0 * PI;
        let f = FourierField::sample(l, l, 16, 16, |x, y| (x + 2.0 * y).sin());
        let lap = f.d_theta().d_theta().add(&f.d_y().d_y());
        let back = lap.inverse_laplacian();
        assert!((back.eval(0.4, 1.1) - (0.4f64 + 2.2).sin()).abs() < 1e-13);
        assert!((f.d_theta().eval(0.4, 1.1) - (0.4f64 + 2.2).cos()).abs() < 1e-13);
    }

    #[test]
    fn repeat_matches_pointwise() {
        let f = FourierField::cosine(1.0, 1.0, 0.7, 2, 0.3);
        let g = f.repeat_theta(3);
        for x in [0.0, 0.37, 1.9, 2.6] {
            assert!((g.eval(x, 0.0) - f.eval(x % 1.0, 0.0)).abs() < 1e-13);
        }
    }
}
