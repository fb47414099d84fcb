//! Discrete Fourier-Laplace calculus on M-period truncations of the cyclic cover.
//!
//! A section on M periods is given by its values u(x + n) at sample points x of one
//! period, n = 0..M−1, together with the lift f(x). The transform is evaluated at the
//! M points z_r = e^{ε + 2πir/M} with ln z_r = ε + 2πir/M, which turns every contour
//! integral over |z| = e^ε into an exact finite average.

use crate::{Error, Result, C64};
use rayon::prelude::*;
use std::f64::consts::PI;

#[derive(Clone, Debug, PartialEq)]
pub struct EndSequence {
    /// values[n][i] = u(x_i + n).
    pub values: Vec<Vec<C64>>,
    /// Lift f(x_i) on the fundamental period.
    pub lift: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransformedSection {
    pub eps: f64,
    /// values[r][i] = û_{z_r}(x_i).
    pub values: Vec<Vec<C64>>,
    pub lift: Vec<f64>,
}

/// Sample grid on |z| = e^ε.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CircleGrid {
    pub m: usize,
    pub eps: f64,
}

impl CircleGrid {
    pub fn new(m: usize, eps: f64) -> Self {
        Self { m, eps }
    }

    pub fn log_z(&self, r: usize) -> C64 {
        C64::new(self.eps, 2.0 * PI * r as f64 / self.m as f64)
    }

    /// ln z_r on the symmetric branch −π ≤ Im μ < π, where truncated families match
    /// the Bloch decomposition of their periodic extension.
    pub fn log_z_symmetric(&self, r: usize) -> C64 {
        let mut mu = self.log_z(r);
        if mu.im >= PI {
            mu.im -= 2.0 * PI;
        }
        mu
    }

    pub fn z(&self, r: usize) -> C64 {
        self.log_z(r).exp()
    }

    /// z_r^w for real w on the fixed branch.
    pub fn zpow(&self, r: usize, w: f64) -> C64 {
        (self.log_z(r) * w).exp()
    }
}

impl EndSequence {
    pub fn new(values: Vec<Vec<C64>>, lift: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::Domain("an end sequence needs at least two periods".into()));
        }
        if values.iter().any(|v| v.len() != lift.len()) {
            return Err(Error::Domain("period vectors and lift differ in length".into()));
        }
        Ok(Self { values, lift })
    }

    pub fn periods(&self) -> usize {
        self.values.len()
    }

    pub fn points(&self) -> usize {
        self.lift.len()
    }

    /// u(· + k) with indices taken mod M; `wrapped` reports whether support crossed the end.
    pub fn shifted(&self, k: i64) -> (Self, bool) {
        let m = self.periods() as i64;
        let mut wrapped = false;
        let values = (0..m)
            .map(|n| {
                let src = n + k;
                if !(0..m).contains(&src) && self.values[src.rem_euclid(m) as usize].iter().any(|v| v.norm() > 0.0) {
                    wrapped = true;
                }
                self.values[src.rem_euclid(m) as usize].clone()
            })
            .collect();
        (Self { values, lift: self.lift.clone() }, wrapped)
    }
}

/// û_z(x) = z^{f(x)} Σ_n z^n u(x + n).
pub fn fl_transform(u: &EndSequence, eps: f64) -> TransformedSection {
    let grid = CircleGrid::new(u.periods(), eps);
    let values = (0..grid.m)
        .into_par_iter()
        .map(|r| {
            (0..u.points())
                .map(|i| {
                    let s: C64 = (0..grid.m).map(|n| grid.zpow(r, n as f64) * u.values[n][i]).sum();
                    grid.zpow(r, u.lift[i]) * s
                })
                .collect()
        })
        .collect();
    TransformedSection { eps, values, lift: u.lift.clone() }
}

/// u(x + n) = (1/M) Σ_r z_r^{−f(x)−n} û_{z_r}(x).
pub fn fl_inverse(uh: &TransformedSection) -> Result<EndSequence> {
    let m = uh.values.len();
    if m < 2 || uh.values.iter().any(|v| v.len() != uh.lift.len()) {
        return Err(Error::Domain("transformed section does not sit on a root-of-unity grid".into()));
    }
    let grid = CircleGrid::new(m, uh.eps);
    let values = (0..m)
        .map(|n| {
            (0..uh.lift.len())
                .map(|i| {
                    (0..m).map(|r| grid.zpow(r, -uh.lift[i] - n as f64) * uh.values[r][i]).sum::<C64>() / m as f64
                })
                .collect()
        })
        .collect();
    EndSequence::new(values, uh.lift.clone())
}

/// Transform at 1/z: v̂_{1/z}(x) = z^{−f(x)} Σ_n z^{−n} v(x + n), with ln(1/z) = −ln z.
pub fn fl_transform_inverse_point(v: &EndSequence, eps: f64) -> TransformedSection {
    let grid = CircleGrid::new(v.periods(), eps);
    let values = (0..grid.m)
        .map(|r| {
            (0..v.points())
                .map(|i| {
                    let s: C64 = (0..grid.m).map(|n| grid.zpow(r, -(n as f64)) * v.values[n][i]).sum();
                    grid.zpow(r, -v.lift[i]) * s
                })
                .collect()
        })
        .collect();
    TransformedSection { eps, values, lift: v.lift.clone() }
}

/// Kernel on the cover from per-z kernel values on one period.
///
/// `kz[r][(i, j)]` holds K_{z_r}(x_i, y_j); the result is K̃(x_i + p, y_j + q).
pub fn kernel_from_family(kz: &[crate::CMat], grid: CircleGrid, fx: &[f64], fy: &[f64], p: i64, q: i64) -> crate::CMat {
    let (ni, nj) = (fx.len(), fy.len());
    crate::CMat::from_fn(ni, nj, |i, j| {
        let w = fy[j] + q as f64 - fx[i] - p as f64;
        (0..grid.m).map(|r| grid.zpow(r, w) * kz[r][(i, j)]).sum::<C64>() / grid.m as f64
    })
}

/// Laurent coefficients c_n, n = 0..M−1, of the polynomial taking `samples[r]` at z_r.
pub fn laurent_coeffs(samples: &[C64], grid: CircleGrid) -> Vec<C64> {
    let m = grid.m;
    (0..m).map(|n| (0..m).map(|r| grid.zpow(r, -(n as f64)) * samples[r]).sum::<C64>() / m as f64).collect()
}

/// z·P'(z) for P(z) = Σ c_n z^n, evaluated at z_r.
pub fn laurent_z_derivative(coeffs: &[C64], grid: CircleGrid, r: usize) -> C64 {
    coeffs.iter().enumerate().map(|(n, &c)| c * n as f64 * grid.zpow(r, n as f64)).sum()
}

/// Both sides of an identity and their difference.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Identity {
    pub direct: C64,
    pub contour: C64,
    /// Sum of the moduli of the direct terms; rounding in either side scales with it.
    pub scale: f64,
}

impl Identity {
    pub fn discrepancy(&self) -> f64 {
        (self.direct - self.contour).norm()
    }

    /// Discrepancy over max(1, scale).
    pub fn relative(&self) -> f64 {
        self.discrepancy() / self.scale.max(1.0)
    }
}

/// Σ_m u(x+m)v(x+m) against (1/2πi)∮ û_z v̂_{1/z} dz/z, per sample point.
pub fn parseval(u: &EndSequence, v: &EndSequence, eps: f64) -> Vec<Identity> {
    let uh = fl_transform(u, eps);
    let vh = fl_transform_inverse_point(v, eps);
    let m = u.periods();
    (0..u.points())
        .map(|i| Identity {
            direct: (0..m).map(|n| u.values[n][i] * v.values[n][i]).sum(),
            contour: (0..m).map(|r| uh.values[r][i] * vh.values[r][i]).sum::<C64>() / m as f64,
            scale: (0..m).map(|n| (u.values[n][i] * v.values[n][i]).norm()).sum(),
        })
        .collect()
}

/// Σ_m m·u(x+m)v(x+m) against (1/2πi)∮ ∂_z(z^{−f}û_z)·z^{f}v̂_{1/z} dz, per sample point.
///
/// The z-derivative acts on the Laurent polynomial recovered from the samples.
pub fn weighted_parseval(u: &EndSequence, v: &EndSequence, eps: f64) -> Vec<Identity> {
    let grid = CircleGrid::new(u.periods(), eps);
    let uh = fl_transform(u, eps);
    let vh = fl_transform_inverse_point(v, eps);
    let m = grid.m;
    (0..u.points())
        .map(|i| {
            let f = u.lift[i];
            let stripped: Vec<C64> = (0..m).map(|r| grid.zpow(r, -f) * uh.values[r][i]).collect();
            let c = laurent_coeffs(&stripped, grid);
            // dz = iz ds, so (1/2πi)∮ g dz = average of z·g over the grid
            let contour = (0..m)
                .map(|r| laurent_z_derivative(&c, grid, r) * grid.zpow(r, f) * vh.values[r][i])
                .sum::<C64>()
                / m as f64;
            Identity {
                direct: (0..m).map(|n| u.values[n][i] * v.values[n][i] * n as f64).sum(),
                contour,
                scale: (0..m).map(|n| (u.values[n][i] * v.values[n][i]).norm() * n as f64).sum(),
            }
        })
        .collect()
}

/// Entries uniform in the square |Re|, |Im| ≤ 1/2 at sample points with the given lift.
pub fn random_sequence<R: rand::Rng>(rng: &mut R, m: usize, lift: &[f64]) -> EndSequence {
    let values = (0..m)
        .map(|_| lift.iter().map(|_| C64::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5))).collect())
        .collect();
    EndSequence { values, lift: lift.to_vec() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::CMat;
    use rand::{rngs::StdRng, Rng, SeedableRng};

    fn pseudo(seed: u64, n: usize) -> Vec<C64> {
        let mut rng = StdRng::seed_from_u64(seed);
        (0..n).map(|_| C64::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5))).collect()
    }

    fn seq(seed: u64, m: usize, pts: usize) -> EndSequence {
        let lift: Vec<f64> = (0..pts).map(|i| (i as f64 + 0.3) / pts as f64 + 0.05 * (i as f64).sin()).collect();
        random_sequence(&mut StdRng::seed_from_u64(seed), m, &lift)
    }

    #[test]
    fn single_period_support() {
        let mut u = seq(1, 4, 3);
        for n in 1..4 {
            u.values[n] = vec![C64::new(0.0, 0.0); 3];
        }
        let uh = fl_transform(&u, 0.2);
        let g = CircleGrid::new(4, 0.2);
        for r in 0..4 {
            for i in 0..3 {
                assert!((uh.values[r][i] - g.zpow(r, u.lift[i]) * u.values[0][i]).norm() < 1e-14);
            }
        }
        let back = fl_inverse(&uh).unwrap();
        assert!(back.values[1..].iter().flatten().all(|v| v.norm() < 1e-14));
    }

    #[test]
    fn shift_law() {
        let mut u = seq(2, 5, 2);
        for n in 0..5 {
            if n != 1 {
                u.values[n] = vec![C64::new(0.0, 0.0); 2];
            }
        }
        let uh = fl_transform(&u, -0.1);
        let g = CircleGrid::new(5, -0.1);
        for r in 0..5 {
            for i in 0..2 {
                assert!((uh.values[r][i] - g.zpow(r, u.lift[i] + 1.0) * u.values[1][i]).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn round_trip_and_weighted_identities() {
        for m in [2, 4, 8, 16] {
            let u = seq(10 + m as u64, m, 4);
            let v = seq(99 + m as u64, m, 4);
            for eps in [0.0, 0.3] {
                let back = fl_inverse(&fl_transform(&u, eps)).unwrap();
                for n in 0..m {
                    for i in 0..4 {
                        assert!((back.values[n][i] - u.values[n][i]).norm() < 1e-12);
                    }
                }
                assert!(parseval(&u, &v, eps).iter().all(|d| d.relative() < 1e-12));
                assert!(weighted_parseval(&u, &v, eps).iter().all(|d| d.relative() < 1e-12));
            }
        }
    }

    #[test]
    fn kernel_periodicity_and_forward_consistency() {
        let m = 8;
        let g = CircleGrid::new(m, 0.0);
        let fx = vec![0.1, 0.45, 0.8];
        let kz: Vec<CMat> = (0..m).map(|r| CMat::from_vec(3, 3, pseudo(r as u64 + 7, 9))).collect();
        let base = kernel_from_family(&kz, g, &fx, &fx, 2, 5);
        let shifted = kernel_from_family(&kz, g, &fx, &fx, 3, 6);
        assert!(crate::linalg::max_abs(&(base - shifted)) < 1e-12);
        // transform in x of K̃(·, y_j + q) returns z^{f(y)+q} K_z(x, y)
        let q = 1;
        let blocks: Vec<CMat> = (0..m as i64).map(|p| kernel_from_family(&kz, g, &fx, &fx, p, q)).collect();
        for r in 0..m {
            for i in 0..3 {
                for j in 0..3 {
                    let t: C64 = (0..m).map(|p| g.zpow(r, fx[i] + p as f64) * blocks[p][(i, j)]).sum();
                    let expect = g.zpow(r, fx[j] + q as f64) * kz[r][(i, j)];
                    assert!((t - expect).norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn z_independent_kernel_is_period_diagonal() {
        let g = CircleGrid::new(4, 0.0);
        let fx = vec![0.0, 0.5];
        let k = CMat::from_vec(2, 2, pseudo(3, 4));
        let kz = vec![k.clone(); 4];
        // with integer lifts z^{f(y)−f(x)} is constant across the grid only for equal points
        let off = kernel_from_family(&kz, g, &[0.0], &[0.0], 1, 0);
        assert!(off[(0, 0)].norm() < 1e-15);
        let on = kernel_from_family(&kz, g, &fx, &fx, 0, 0);
        assert!((on[(0, 0)] - k[(0, 0)]).norm() < 1e-15);
    }

    #[test]
    fn laurent_derivative_matches_symbolic() {
        // P(z) = 2 − i z + 3 z² + z³ on M = 4
        let c = [C64::new(2.0, 0.0), C64::new(0.0, -1.0), C64::new(3.0, 0.0), C64::new(1.0, 0.0)];
        let g = CircleGrid::new(4, 0.25);
        let samples: Vec<C64> = (0..4).map(|r| c.iter().enumerate().map(|(n, &cn)| cn * g.z(r).powi(n as i32)).sum()).collect();
        let rec = laurent_coeffs(&samples, g);
        for r in 0..4 {
            let z = g.z(r);
            let exact = z * (c[1] + c[2] * 2.0 * z + c[3] * 3.0 * z * z);
            assert!((laurent_z_derivative(&rec, g, r) - exact).norm() < 1e-12);
        }
    }

    #[test]
    fn weighted_sum_shifts_by_plain_sum() {
        let m = 6;
        let mut u = seq(5, m, 3);
        let mut v = seq(6, m, 3);
        for s in [&mut u, &mut v] {
            s.values[m - 1] = vec![C64::new(0.0, 0.0); 3];
        }
        let (us, w1) = u.shifted(-1);
        let (vs, w2) = v.shifted(-1);
        assert!(!w1 && !w2);
        let a = weighted_parseval(&u, &v, 0.0);
        let b = weighted_parseval(&us, &vs, 0.0);
        let p = parseval(&u, &v, 0.0);
        for i in 0..3 {
            assert!((b[i].contour - a[i].contour - p[i].contour).norm() < 1e-12);
        }
    }
}
