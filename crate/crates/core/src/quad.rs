//! Quadrature rules.

use crate::C64;
use gauss_quad::legendre::GaussLegendre;
use std::num::NonZeroUsize;

/// Gauss-Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    let rule = GaussLegendre::new(NonZeroUsize::new(n.max(1)).unwrap());
    rule.as_node_weight_pairs().to_vec()
}

/// Fixed-order Gauss-Legendre integral of a complex integrand on [a, b].
pub fn integrate(rule: &[(f64, f64)], a: f64, b: f64, f: impl Fn(f64) -> C64) -> C64 {
    let (h, c) = (0.5 * (b - a), 0.5 * (b + a));
    rule.iter().map(|&(x, w)| f(c + h * x) * w).sum::<C64>() * h
}

/// Adaptive bisection comparing orders n and 2n on each panel.
///
/// Returns the integral and an error estimate.
pub fn adaptive(f: &(dyn Fn(f64) -> C64 + Sync), a: f64, b: f64, tol: f64, n: usize, max_depth: usize) -> (C64, f64) {
    let lo = gauss_legendre(n);
    let hi = gauss_legendre(2 * n);
    fn go(
        f: &(dyn Fn(f64) -> C64 + Sync),
        lo: &[(f64, f64)],
        hi: &[(f64, f64)],
        a: f64,
        b: f64,
        tol: f64,
        depth: usize,
    ) -> (C64, f64) {
        let coarse = integrate(lo, a, b, f);
        let fine = integrate(hi, a, b, f);
        let err = (fine - coarse).norm();
        if err <= tol || depth == 0 {
            return (fine, err);
        }
        let m = 0.5 * (a + b);
        let (l, el) = go(f, lo, hi, a, m, 0.5 * tol, depth - 1);
        let (r, er) = go(f, lo, hi, m, b, 0.5 * tol, depth - 1);
        (l + r, el + er)
    }
    go(f, &lo, &hi, a, b, tol, max_depth)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_exactness() {
        let r = gauss_legendre(5);
        let v = integrate(&r, 0.0, 2.0, |x| C64::new(x.powi(9), 0.0));
        assert!((v.re - 2f64.powi(10) / 10.0).abs() < 1e-11);
    }

    #[test]
    fn adaptive_handles_sharp_peak() {
        let f = |x: f64| C64::new(1.0 / (1e-4 + x * x), 0.0);
        let (v, err) = adaptive(&f, -1.0, 1.0, 1e-10, 10, 40);
        let exact = 2.0 * (1.0 / 1e-2) * (1.0f64 / 1e-2).atan();
        assert!((v.re - exact).abs() < 1e-8, "{v} {exact} {err}");
    }
}
