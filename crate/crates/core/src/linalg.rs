//! Dense complex linear algebra helpers on top of nalgebra.

use crate::{CMat, C64};
use std::f64::consts::PI;

/// Thin singular value decomposition A = U·diag(σ)·Vᴴ, σ in decreasing order.
///
/// Computed with faer: nalgebra's SVD loses accuracy on some of the long end-model blocks.
pub struct Svd {
    pub u: CMat,
    pub sigma: Vec<f64>,
    pub v: CMat,
}

pub fn svd(a: &CMat) -> Svd {
    if a.nrows() == 1 && a.ncols() == 1 {
        let z = a[(0, 0)];
        let r = z.norm();
        let phase = if r > 0.0 { z / r } else { C64::new(1.0, 0.0) };
        return Svd { u: CMat::from_element(1, 1, phase), sigma: vec![r], v: CMat::from_element(1, 1, C64::new(1.0, 0.0)) };
    }
    let f = to_faer(a);
    let s = f.thin_svd().expect("SVD converges for finite input");
    let (u, v, d) = (s.U(), s.V(), s.S().column_vector());
    Svd {
        u: CMat::from_fn(u.nrows(), u.ncols(), |i, j| u[(i, j)]),
        sigma: (0..d.nrows()).map(|i| d[i].re).collect(),
        v: CMat::from_fn(v.nrows(), v.ncols(), |i, j| v[(i, j)]),
    }
}

fn to_faer(a: &CMat) -> faer::Mat<C64> {
    // faer's parallel kernels split work by pool size, which changes rounding with the
    // thread count; callers already parallelize across blocks and z samples
    static SEQUENTIAL: std::sync::Once = std::sync::Once::new();
    SEQUENTIAL.call_once(|| faer::set_global_parallelism(faer::Par::Seq));
    faer::Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)])
}

pub fn singular_values(a: &CMat) -> Vec<f64> {
    if a.nrows() == 1 && a.ncols() == 1 {
        return vec![a[(0, 0)].norm()];
    }
    let v = to_faer(a).singular_values().expect("SVD converges for finite input");
    v.into_iter().collect()
}

pub fn sigma_min(a: &CMat) -> f64 {
    singular_values(a).into_iter().fold(f64::INFINITY, f64::min)
}

/// Largest entry modulus.
pub fn max_abs(a: &CMat) -> f64 {
    a.iter().fold(0.0, |m, z| m.max(z.norm()))
}

/// Diagonal of Aᴴ·B without forming the product.
pub fn diag_ah_b(a: &CMat, b: &CMat) -> Vec<C64> {
    (0..a.ncols()).map(|k| a.column(k).dotc(&b.column(k))).collect()
}

/// Galerkin matrix of the indicator of θ ∈ [a, b) on the modes e^{2πimθ/L}/√L.
pub fn window_matrix(modes: &[i64], l: f64, a: f64, b: f64) -> CMat {
    let n = modes.len();
    CMat::from_fn(n, n, |r, c| window_coeff(modes[c] - modes[r], l, a, b))
}

/// (1/L)∫_a^b e^{2πipθ/L} dθ.
pub fn window_coeff(p: i64, l: f64, a: f64, b: f64) -> C64 {
    if p == 0 {
        C64::new((b - a) / l, 0.0)
    } else {
        let k = 2.0 * PI * p as f64 / l;
        (C64::from_polar(1.0, k * b) - C64::from_polar(1.0, k * a)) / C64::new(0.0, 2.0 * PI * p as f64)
    }
}

fn one_norm(a: &CMat) -> f64 {
    (0..a.ncols()).map(|c| a.column(c).iter().map(|z| z.norm()).sum::<f64>()).fold(0.0, f64::max)
}

/// Matrix exponential by scaling and squaring with the degree-13 Padé approximant.
pub fn expm(a: &CMat) -> CMat {
    const B: [f64; 14] = [
        64764752532480000.0,
        32382376266240000.0,
        7771770303897600.0,
        1187353796428800.0,
        129060195264000.0,
        10559470521600.0,
        670442572800.0,
        33522128640.0,
        1323241920.0,
        40840800.0,
        960960.0,
        16380.0,
        182.0,
        1.0,
    ];
    let n = a.nrows();
    if n == 1 {
        return CMat::from_element(1, 1, a[(0, 0)].exp());
    }
    let theta13 = 5.371920351148152;
    let norm = one_norm(a);
    let s = if norm > theta13 { (norm / theta13).log2().ceil() as i32 } else { 0 };
    let a = a * C64::new(0.5f64.powi(s), 0.0);
    let id = CMat::identity(n, n);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let c = |k: usize| C64::new(B[k], 0.0);
    let u_inner = &a6 * (&a6 * c(13) + &a4 * c(11) + &a2 * c(9)) + &a6 * c(7) + &a4 * c(5) + &a2 * c(3) + &id * c(1);
    let u = &a * u_inner;
    let v = &a6 * (&a6 * c(12) + &a4 * c(10) + &a2 * c(8)) + &a6 * c(6) + &a4 * c(4) + &a2 * c(2) + &id * c(0);
    let p = &v + &u;
    let q = &v - &u;
    let mut r = q.lu().solve(&p).expect("Padé denominator is invertible after scaling");
    for _ in 0..s {
        r = &r * &r;
    }
    r
}

/// Eigenvalues through the complex Schur form.
pub fn eigenvalues(a: &CMat) -> Vec<C64> {
    if a.nrows() == 1 {
        return vec![a[(0, 0)]];
    }
    let schur = a.clone().schur();
    let (_, t) = schur.unpack();
    (0..t.nrows()).map(|i| t[(i, i)]).collect()
}

/// Numerical nullity decided by a singular-value gap.
///
/// The count is accepted only if the same number of singular values lies below each
/// threshold of `taus` and the gap ratio between the last small and the first large value
/// is at least `min_ratio`. Returns `None` otherwise.
pub fn gap_nullity(sigma: &[f64], taus: &[f64], min_ratio: f64) -> Option<usize> {
    let mut s = sigma.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let counts: Vec<usize> = taus.iter().map(|&t| s.iter().filter(|&&x| x < t).count()).collect();
    let k = counts[0];
    if counts.iter().any(|&c| c != k) {
        return None;
    }
    let small = if k == 0 { 0.0 } else { s[k - 1] };
    let large = s.get(k).copied().unwrap_or(f64::INFINITY);
    if k > 0 && large < min_ratio * small {
        return None;
    }
    Some(k)
}
