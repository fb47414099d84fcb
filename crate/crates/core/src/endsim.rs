//! Truncated end-periodic operators and the quantities computed on them.
//!
//! The manifold Z_∞ = Z ∪ W_0 ∪ W_1 ∪ … is realized on one long circle of periods:
//!
//! ```text
//! | collar | transition | W_0 W_1 … W_N | buffer | return |
//! ```
//!
//! The collar is a product cylinder whose twist is kept away from the integers, so its
//! operator is invertible and it plays the part of the compact piece's far side. The
//! transition interpolates the twist and switches the periodic data of X on; the
//! return region closes the circle again. Every quantity is read off through windows
//! that start in the middle of the collar, far from the return region.

use crate::dirac::{assemble_fields, Block, DiracFamily};
use crate::fourier::FourierField;
use crate::linalg::{svd, window_coeff, window_matrix, Svd};
use crate::model::{ClosedModel, OneForm, OperatorFields};
use crate::{CMat, Error, Result, C64};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// The compact piece Z.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CapSpec {
    /// Flat collar with the given twist.
    ProductCap { twist: f64 },
    /// Flat collar plus a curvature bump amplitude·b(θ)·cos(2πqy/Ly) next to the transition.
    PerturbedCap { twist: f64, amplitude: f64, q: i64 },
}

impl Default for CapSpec {
    fn default() -> Self {
        CapSpec::ProductCap { twist: -0.5 }
    }
}

impl CapSpec {
    pub fn twist(&self) -> f64 {
        match *self {
            CapSpec::ProductCap { twist } | CapSpec::PerturbedCap { twist, .. } => twist,
        }
    }

    fn validate(&self) -> Result<()> {
        let a = self.twist();
        if !a.is_finite() || (a - a.round()).abs() < 0.1 {
            return Err(Error::Config(format!("cap twist {a} must stay at least 0.1 away from the integers")));
        }
        if let CapSpec::PerturbedCap { amplitude, .. } = self {
            if !amplitude.is_finite() {
                return Err(Error::Config("cap amplitude must be finite".into()));
            }
        }
        Ok(())
    }
}

/// Lengths, in periods, of the regions of the circle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EndLayout {
    pub collar: usize,
    pub transition: usize,
    /// Periods W_0 … W_{x_periods − 1} equal to X.
    pub x_periods: usize,
    /// Width of the smooth steps, in units of Lθ.
    pub width: f64,
}

impl EndLayout {
    /// Steps wide enough to be resolved by λ modes per period.
    pub fn for_cutoff(lambda: usize, x_periods: usize) -> Self {
        let width = (1.5 / lambda as f64).max(0.25);
        let transition = (16.0 * width).ceil() as usize;
        EndLayout { collar: 4, transition, x_periods, width }
    }

    pub fn periods(&self) -> usize {
        self.collar + 2 * self.transition + self.x_periods
    }

    /// Start of W_0, in units of Lθ.
    pub fn w0(&self) -> f64 {
        (self.collar + self.transition) as f64
    }

    /// Left edge of every window, in units of Lθ.
    pub fn window_start(&self) -> f64 {
        self.collar as f64 / 2.0
    }

    /// χ: 0 on the collar, 1 on the X periods.
    fn switch(&self, u: f64) -> f64 {
        let c1 = self.collar as f64 + self.transition as f64 / 2.0;
        let c2 = self.w0() + self.x_periods as f64 + self.transition as f64 / 2.0;
        0.5 * (((u - c1) / self.width).tanh() - ((u - c2) / self.width).tanh())
    }

    /// Bump used by the perturbed cap, centered in the collar's right half.
    fn bump(&self, u: f64) -> f64 {
        let c = 0.75 * self.collar as f64;
        (-((u - c) / 0.35).powi(2)).exp()
    }
}

/// A truncated end-periodic operator with weight e^{εf}.
#[derive(Clone, Debug)]
pub struct EndModel {
    pub base: ClosedModel,
    pub cap: CapSpec,
    /// Index of the last period of Z_N.
    pub n: usize,
    pub eps: f64,
    pub layout: EndLayout,
    pub fields: OperatorFields,
    /// Unweighted blocks; the weighted operator is D⁺ − εc⁺(df).
    pub fam: DiracFamily,
}

/// Periods kept after W_N so that the far cut sits inside the periodic region.
pub const BUFFER_PERIODS: usize = 4;

/// Fields of the long circle, without assembly.
pub fn end_fields(model: &ClosedModel, cap: &CapSpec, layout: &EndLayout) -> Result<OperatorFields> {
    cap.validate()?;
    let l = model.lx;
    let periods = layout.periods();
    let lb = l * periods as f64;
    let g = model.df.lift();
    let phi = &model.potential;
    let bump_q = match cap {
        CapSpec::PerturbedCap { q, .. } => q.unsigned_abs() as usize,
        _ => 0,
    };
    let py = phi.py().max(g.py()).max(bump_q);
    let ny = 2 * py + 1;
    let per = 4 * model.lambda + 4;
    let nx = periods * per + 1;
    let chi = |x: f64| layout.switch(x / l);
    let a_cap = cap.twist();
    let (bump_amp, bq) = match *cap {
        CapSpec::PerturbedCap { amplitude, q, .. } => (amplitude, q),
        _ => (0.0, 0),
    };
    let ly = model.ly;
    let phi_big = FourierField::sample(lb, ly, nx, ny, |x, y| {
        let c = chi(x);
        let base = if c.abs() > 1e-300 { c * phi.eval(x.rem_euclid(l), y) } else { 0.0 };
        base + bump_amp * layout.bump(x / l) * (2.0 * PI * bq as f64 * y / ly).cos()
    })
    .trimmed(1e-14);
    let twist = FourierField::sample(lb, ly, nx, 1, |x, _| 2.0 * PI * (a_cap + (model.twist - a_cap) * chi(x)) / ly).trimmed(1e-14);
    let g_big = FourierField::sample(lb, ly, nx, ny, |x, y| {
        let c = chi(x);
        if c.abs() > 1e-300 {
            c * g.eval(x.rem_euclid(l), y)
        } else {
            0.0
        }
    })
    .trimmed(1e-14);
    let band = model.lambda * periods + periods / 2;
    Ok(OperatorFields {
        lx: lb,
        ly,
        nx: band,
        ny: model.lambda_y,
        a_theta: phi_big.d_y().scale(-1.0),
        a_y: twist.add(&phi_big.d_theta()),
        // θ/Lθ is not periodic on the long circle, but its differential is
        df: OneForm { f_theta: g_big.d_theta().add_constant(1.0 / l), f_y: g_big.d_y() },
    })
}

/// Assembles Z_N with `BUFFER_PERIODS` extra periods beyond W_N.
pub fn assemble_end(model: &ClosedModel, cap: &CapSpec, n: usize, eps: f64) -> Result<EndModel> {
    let layout = EndLayout::for_cutoff(model.lambda, n + 1 + BUFFER_PERIODS);
    assemble_end_with(model, cap, n, eps, layout)
}

pub fn assemble_end_with(model: &ClosedModel, cap: &CapSpec, n: usize, eps: f64, layout: EndLayout) -> Result<EndModel> {
    if n < 4 {
        return Err(Error::Config(format!("the end needs at least 4 periods, got N = {n}")));
    }
    if layout.x_periods < n + 1 {
        return Err(Error::Config("layout is shorter than Z_N".into()));
    }
    if !eps.is_finite() {
        return Err(Error::Config("weight must be finite".into()));
    }
    let fields = end_fields(model, cap, &layout)?;
    let fam = assemble_fields(&fields);
    Ok(EndModel { base: model.clone(), cap: *cap, n, eps, layout, fields, fam })
}

/// Indicator of θ ∈ [a, b) on a block, acting diagonally in y.
pub fn block_window(b: &Block, l: f64, a: f64, c: f64) -> CMat {
    let modes = b.theta_modes();
    let mut w = window_matrix(&modes, l, a, c);
    for r in 0..b.dim() {
        for s in 0..b.dim() {
            if b.modes[r].1 != b.modes[s].1 {
                w[(r, s)] = C64::new(0.0, 0.0);
            }
        }
    }
    w
}

impl EndModel {
    pub fn period(&self) -> f64 {
        self.base.lx
    }

    /// D⁺ − εc⁺(df) per block.
    pub fn weighted(&self) -> Vec<CMat> {
        let e = C64::new(self.eps, 0.0);
        self.fam.blocks.iter().map(|b| &b.dplus - &b.cplus * e).collect()
    }

    /// θ-range of Z_N = Z ∪ W_0 ∪ … ∪ W_N.
    pub fn z_window(&self, n: usize) -> (f64, f64) {
        let l = self.period();
        (self.layout.window_start() * l, (self.layout.w0() + n as f64 + 1.0) * l)
    }

    /// θ-range of Z.
    pub fn cap_window(&self) -> (f64, f64) {
        let l = self.period();
        (self.layout.window_start() * l, self.layout.w0() * l)
    }

    /// θ-range used to attribute near-zero modes to the end of interest.
    pub fn localization_window(&self) -> (f64, f64) {
        let l = self.period();
        (self.layout.window_start() * l, (self.layout.w0() + self.layout.x_periods as f64 / 2.0) * l)
    }

    /// ∫_Z ii with ii = −F/2π, F = ∂_θA_y − ∂_yA_θ, from the assembled fields.
    pub fn cap_integral(&self) -> f64 {
        let (a, b) = self.cap_window();
        integrate_index_density(&self.fields, a, b)
    }

    /// Copy with a different weight; the blocks are shared data and are not rebuilt.
    pub fn with_eps(&self, eps: f64) -> EndModel {
        EndModel { eps, ..self.clone() }
    }
}

/// ∫_{[a,b) × Y} −F/2π on a long-circle field set.
pub fn integrate_index_density(f: &OperatorFields, a: f64, b: f64) -> f64 {
    let curv = f.a_y.d_theta().add(&f.a_theta.d_y().scale(-1.0));
    let mut s = C64::new(0.0, 0.0);
    for p in -(curv.px() as i64)..=(curv.px() as i64) {
        s += curv.coeff(p, 0) * window_coeff(p, f.lx, a, b);
    }
    -s.re * f.lx * f.ly / (2.0 * PI)
}

/// ∫_Z ii for a cap attached to X, from the cap fields alone.
pub fn cap_index_integral(model: &ClosedModel, cap: &CapSpec) -> Result<f64> {
    let layout = EndLayout::for_cutoff(model.lambda, 2);
    let fields = end_fields(model, cap, &layout)?;
    let l = model.lx;
    Ok(integrate_index_density(&fields, layout.window_start() * l, layout.w0() * l))
}

/// Per-block SVD of the weighted operator.
pub fn end_svd(em: &EndModel) -> Vec<Svd> {
    em.weighted().par_iter().map(svd).collect()
}

/// Diagonals of Vᴴ W V and Uᴴ W U for a window on each block.
fn window_weights(em: &EndModel, s: &[Svd], a: f64, b: f64) -> Vec<(Vec<f64>, Vec<f64>)> {
    em.fam
        .blocks
        .par_iter()
        .zip(s.par_iter())
        .map(|(blk, d)| {
            let w = block_window(blk, em.fields.lx, a, b);
            let wv = &w * &d.v;
            let wu = &w * &d.u;
            let rv = crate::linalg::diag_ah_b(&d.v, &wv).iter().map(|z| z.re).collect();
            let ru = crate::linalg::diag_ah_b(&d.u, &wu).iter().map(|z| z.re).collect();
            (rv, ru)
        })
        .collect()
}

/// Verdict of the singular-value index count.
#[derive(Clone, Debug, Serialize)]
pub struct IndexReport {
    pub index: Option<i64>,
    pub kernel: usize,
    pub cokernel: usize,
    /// Count per τ and per end length.
    pub counts: Vec<(usize, f64, i64)>,
    /// Singular values below the largest τ, with the window mass of their right and left vectors.
    pub small: Vec<(f64, f64, f64)>,
    pub stable: bool,
    pub note: String,
}

/// Default τ schedule: three decades.
pub const TAU_SCHEDULE: [f64; 3] = [1e-4, 1e-5, 1e-6];

fn index_count(em: &EndModel, taus: &[f64]) -> (Vec<(f64, i64, usize, usize)>, Vec<(f64, f64, f64)>) {
    let s = end_svd(em);
    let (a, b) = em.localization_window();
    let ws = window_weights(em, &s, a, b);
    let mut small = Vec::new();
    for (d, (rv, ru)) in s.iter().zip(&ws) {
        for k in 0..d.sigma.len() {
            small.push((d.sigma[k], rv[k], ru[k]));
        }
    }
    small.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap());
    let tmax = taus.iter().cloned().fold(0.0, f64::max);
    let counts = taus
        .iter()
        .map(|&t| {
            let mut ker = 0;
            let mut coker = 0;
            for &(_, mv, mu) in small.iter().take_while(|x| x.0 < t) {
                if mv > 0.5 {
                    ker += 1;
                }
                if mu > 0.5 {
                    coker += 1;
                }
            }
            (t, ker as i64 - coker as i64, ker, coker)
        })
        .collect();
    // keep the list short: everything below τ plus the first value above
    let cut = small.iter().position(|x| x.0 >= tmax).map(|p| p + 1).unwrap_or(small.len());
    small.truncate(cut);
    (counts, small)
}

/// ind of D⁺_ε on Z_∞ by counting window-localized singular vectors.
///
/// The count must agree for every τ and for an end four periods longer; otherwise the
/// verdict is indeterminate.
pub fn numerical_index(em: &EndModel, taus: &[f64]) -> Result<IndexReport> {
    if taus.is_empty() {
        return Err(Error::Config("empty τ schedule".into()));
    }
    let mut layout = em.layout;
    layout.x_periods += 4;
    let longer = assemble_end_with(&em.base, &em.cap, em.n + 4, em.eps, layout)?;
    let (c1, small) = index_count(em, taus);
    let (c2, _) = index_count(&longer, taus);
    let mut counts = Vec::new();
    for (len, c) in [(em.layout.x_periods, &c1), (layout.x_periods, &c2)] {
        for &(t, i, ..) in c.iter() {
            counts.push((len, t, i));
        }
    }
    let first = counts[0].2;
    let agree = counts.iter().all(|c| c.2 == first);
    // the singular values just above the thresholds must be clearly separated
    let tmin = taus.iter().cloned().fold(f64::INFINITY, f64::min);
    let tmax = taus.iter().cloned().fold(0.0, f64::max);
    let in_band = small.iter().any(|x| x.0 >= tmin && x.0 < tmax);
    let stable = agree && !in_band;
    let note = if stable {
        "stable across the τ schedule and the longer end".to_string()
    } else if !agree {
        "count changes with τ or with the end length".to_string()
    } else {
        "a singular value lies inside the τ band".to_string()
    };
    Ok(IndexReport {
        index: stable.then_some(first),
        kernel: c1[0].2,
        cokernel: c1[0].3,
        counts,
        small,
        stable,
        note,
    })
}

/// Operator whose regularized trace is taken.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TraceSymbol {
    /// e^{−tD⁻D⁺} on positive spinors.
    HeatPlus,
    /// e^{−tD⁺D⁻} on negative spinors.
    HeatMinus,
    /// The chiral difference of the two.
    Super,
}

#[derive(Clone, Debug, Serialize)]
pub struct RegularizedTrace {
    pub t: f64,
    pub symbol: TraceSymbol,
    pub value: f64,
    pub n_schedule: Vec<usize>,
    pub partial: Vec<f64>,
    /// Per-period trace on X̃ subtracted N + 1 times.
    pub correction: f64,
    pub tail_bound: f64,
    /// The partial values do not settle: a symptom of a non-Fredholm weight.
    pub flagged: bool,
}

/// Geometric N-schedule for the regularized trace.
pub const N_SCHEDULE: [usize; 4] = [8, 12, 16, 24];

/// Window traces Σ_k e^{−tσ_k²}·(mass of v_k, mass of u_k) over all blocks.
fn heat_window(s: &[Svd], ws: &[(Vec<f64>, Vec<f64>)], weight: impl Fn(f64) -> f64) -> (f64, f64) {
    let mut plus = 0.0;
    let mut minus = 0.0;
    for (d, (rv, ru)) in s.iter().zip(ws) {
        for k in 0..d.sigma.len() {
            let w = weight(d.sigma[k]);
            plus += w * rv[k];
            minus += w * ru[k];
        }
    }
    (plus, minus)
}

/// Per-period heat trace of the closed family at weight ε, averaged over `m` points.
fn period_heat_trace(fam: &DiracFamily, eps: f64, t: f64, m: usize) -> f64 {
    let grid = crate::flt::CircleGrid::new(m, eps);
    let total: f64 = (0..m)
        .into_par_iter()
        .map(|r| {
            let mu = grid.log_z_symmetric(r);
            fam.blocks
                .iter()
                .map(|b| crate::linalg::singular_values(&b.dplus_at(mu)).iter().map(|s| (-t * s * s).exp()).sum::<f64>())
                .sum::<f64>()
        })
        .collect::<Vec<f64>>()
        .iter()
        .sum();
    total / m as f64
}

/// Aitken's Δ² on the last three terms, or the last term when the differences do not contract.
fn aitken(v: &[f64]) -> (f64, f64, bool) {
    let n = v.len();
    if n < 3 {
        let d = if n == 2 { (v[1] - v[0]).abs() } else { f64::INFINITY };
        return (v[n - 1], d, false);
    }
    let (a, b, c) = (v[n - 3], v[n - 2], v[n - 1]);
    let (d1, d2) = (b - a, c - b);
    let scale = 1e-12 * (1.0 + c.abs());
    if d2.abs() <= scale {
        return (c, d2.abs(), false);
    }
    let contracting = d2.abs() < d1.abs();
    let den = d2 - d1;
    let est = if contracting && den.abs() > scale { c - d2 * d2 / den } else { c };
    (est, d2.abs(), !contracting)
}

/// Tr♭ = lim_N [∫_{Z_N} tr K − (N + 1)∫_{W_0} tr K̃] over a schedule of N.
pub fn reg_trace(em: &EndModel, symbol: TraceSymbol, t: f64, schedule: &[usize]) -> Result<RegularizedTrace> {
    if !(t > 0.0) {
        return Err(Error::Domain("regularized trace needs t > 0".into()));
    }
    if schedule.is_empty() || schedule.iter().any(|&n| n + 1 > em.layout.x_periods) {
        return Err(Error::Config(format!("N schedule {schedule:?} does not fit in {} end periods", em.layout.x_periods)));
    }
    let s = end_svd(em);
    let per = match symbol {
        // finite-dimensional D⁺_z: the two heat traces agree for every z
        TraceSymbol::Super => 0.0,
        _ => period_heat_trace(&crate::dirac::assemble(&em.base), em.eps, t, 64),
    };
    let partial: Vec<f64> = schedule
        .iter()
        .map(|&n| {
            let (a, b) = em.z_window(n);
            let ws = window_weights(em, &s, a, b);
            let (p, m) = heat_window(&s, &ws, |x| (-t * x * x).exp());
            let tr = match symbol {
                TraceSymbol::HeatPlus => p,
                TraceSymbol::HeatMinus => m,
                TraceSymbol::Super => p - m,
            };
            tr - (n as f64 + 1.0) * per
        })
        .collect();
    let (value, tail_bound, flagged) = aitken(&partial);
    Ok(RegularizedTrace { t, symbol, value, n_schedule: schedule.to_vec(), partial, correction: per, tail_bound, flagged })
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct FlowRow {
    pub t: f64,
    pub supertrace: f64,
    /// Centered difference along the grid (one-sided at the ends).
    pub derivative_fd: f64,
    /// −Tr♭[D⁻, D⁺e^{−tD⁻D⁺}], evaluated directly.
    pub derivative_commutator: f64,
}

/// Str♭(e^{−tD²}) on Z_N for every t of the grid, from one decomposition.
pub fn supertrace_flow(em: &EndModel, t_grid: &[f64]) -> Result<Vec<FlowRow>> {
    if t_grid.is_empty() || t_grid.iter().any(|&t| !(t > 0.0)) {
        return Err(Error::Domain("flow grid needs positive times".into()));
    }
    let s = end_svd(em);
    let (a, b) = em.z_window(em.n);
    let ws = window_weights(em, &s, a, b);
    let st: Vec<f64> = t_grid
        .iter()
        .map(|&t| {
            let (p, m) = heat_window(&s, &ws, |x| (-t * x * x).exp());
            p - m
        })
        .collect();
    let n = t_grid.len();
    Ok((0..n)
        .map(|i| {
            let (lo, hi) = (i.saturating_sub(1), (i + 1).min(n - 1));
            let fd = if hi > lo { (st[hi] - st[lo]) / (t_grid[hi] - t_grid[lo]) } else { 0.0 };
            let t = t_grid[i];
            let (p, m) = heat_window(&s, &ws, |x| x * x * (-t * x * x).exp());
            FlowRow { t, supertrace: st[i], derivative_fd: fd, derivative_commutator: -(p - m) }
        })
        .collect())
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct CommutatorReport {
    pub s: f64,
    pub t: f64,
    pub lhs: f64,
    pub rhs: f64,
    /// avg Tr(f·[P_z, Q_z]) with the sawtooth lift of f.
    pub lift_term: f64,
    /// avg Tr(z ∂_zP_z · Q_z).
    pub derivative_term: f64,
    pub rhs_imag: f64,
}

impl CommutatorReport {
    pub fn discrepancy(&self) -> f64 {
        (self.lhs - self.rhs).abs()
    }
}

/// Galerkin coefficients of f = θ/Lθ + g restricted to [0, Lθ).
fn sawtooth_lift(model: &ClosedModel, px: usize, py: usize) -> FourierField {
    let g = model.df.lift();
    FourierField::from_coeffs(model.lx, model.ly, px, py, |p, q| {
        let ramp = if q != 0 {
            C64::new(0.0, 0.0)
        } else if p == 0 {
            C64::new(0.5, 0.0)
        } else {
            C64::new(0.0, 1.0 / (2.0 * PI * p as f64))
        };
        ramp + g.coeff(p, q)
    })
}

/// Tr♭[P, Q] for P = D⁻e^{−sD⁺D⁻}, Q = D⁺e^{−tD⁻D⁺}, on the truncated end and from the
/// closed family P_z, Q_z sampled at `m` points of the unit circle.
pub fn commutator_identity(em: &EndModel, s: f64, t: f64, m: usize) -> Result<CommutatorReport> {
    Ok(commutator_grid(em, &[(s, t)], m)?.remove(0))
}

/// `commutator_identity` over a list of (s, t), sharing one decomposition of the end.
pub fn commutator_grid(em: &EndModel, pairs: &[(f64, f64)], m: usize) -> Result<Vec<CommutatorReport>> {
    if pairs.iter().any(|&(s, t)| !(s > 0.0 && t > 0.0)) {
        return Err(Error::Domain("commutator identity needs s, t > 0".into()));
    }
    if em.eps != 0.0 {
        return Err(Error::Domain("commutator identity is evaluated at weight 0".into()));
    }
    let sv = end_svd(em);
    let (a, b) = em.z_window(em.n);
    let ws = window_weights(em, &sv, a, b);
    let fam = crate::dirac::assemble(&em.base);
    let lift = sawtooth_lift(&em.base, 2 * fam.nx, 2 * fam.ny);
    let lift_mats: Vec<CMat> = fam.blocks.iter().map(|blk| crate::dirac::mult_matrix(&lift, &blk.modes, &blk.modes)).collect();
    let grid = crate::flt::CircleGrid::new(m, 0.0);
    Ok(pairs
        .iter()
        .map(|&(s, t)| {
            // PQ − QP = D⁻D⁺e^{−(s+t)D⁻D⁺} ⊕ (−D⁺D⁻e^{−(s+t)D⁺D⁻}); the per-period term
            // vanishes because Tr[P_z, Q_z] = 0 in finite dimensions
            let (p, q) = heat_window(&sv, &ws, |x| x * x * (-(s + t) * x * x).exp());
            let (lt, dt) = closed_commutator_terms(&fam, &lift_mats, grid, s, t);
            let rhs = lt - dt;
            CommutatorReport { s, t, lhs: p - q, rhs: rhs.re, lift_term: lt.re, derivative_term: dt.re, rhs_imag: rhs.im }
        })
        .collect())
}

/// Circle averages of Tr(M_F[P_z, Q_z]) and Tr(z∂_zP_z · Q_z) on the branch |Im μ| ≤ π.
fn closed_commutator_terms(fam: &DiracFamily, lift_mats: &[CMat], grid: crate::flt::CircleGrid, s: f64, t: f64) -> (C64, C64) {
    let m = grid.m;
    let (l, d) = (0..m)
        .into_par_iter()
        .map(|r| {
            let mu = grid.log_z_symmetric(r);
            let mut l = C64::new(0.0, 0.0);
            let mut d = C64::new(0.0, 0.0);
            for (blk, mf) in fam.blocks.iter().zip(lift_mats) {
                let (dp, dm) = blk.at_mu(mu);
                let n = blk.dim();
                let h_minus = &dp * &dm;
                let e_s = crate::linalg::expm(&(&h_minus * C64::new(-s, 0.0)));
                let e_t = crate::linalg::expm(&((&dm * &dp) * C64::new(-t, 0.0)));
                let pz = &dm * &e_s;
                let qz = &dp * &e_t;
                l += (mf * (&pz * &qz - &qz * &pz)).trace();
                // d/dμ of D⁺D⁻ and the Fréchet derivative of its exponential
                let dh = -(&blk.cplus * &dm) - &dp * &blk.cminus;
                let mut big = CMat::zeros(2 * n, 2 * n);
                big.view_mut((0, 0), (n, n)).copy_from(&(&h_minus * C64::new(-s, 0.0)));
                big.view_mut((n, n), (n, n)).copy_from(&(&h_minus * C64::new(-s, 0.0)));
                big.view_mut((0, n), (n, n)).copy_from(&(&dh * C64::new(-s, 0.0)));
                let fr = crate::linalg::expm(&big).view((0, n), (n, n)).into_owned();
                let dp_mu = -(&blk.cminus * &e_s) + &dm * fr;
                d += (dp_mu * &qz).trace();
            }
            (l, d)
        })
        // fixed summation order keeps the result independent of the thread count
        .collect::<Vec<_>>()
        .into_iter()
        .fold((C64::new(0.0, 0.0), C64::new(0.0, 0.0)), |x, y| (x.0 + y.0, x.1 + y.1));
    (l / m as f64, d / m as f64)
}

/// Least-squares line with its coefficient of determination.
#[derive(Clone, Debug, Serialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub points: Vec<(f64, f64)>,
}

pub fn fit_line(points: &[(f64, f64)]) -> Option<LinearFit> {
    let n = points.len() as f64;
    if points.len() < 3 {
        return None;
    }
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Some(LinearFit { slope, intercept: my - slope * mx, r2, points: points.to_vec() })
}

#[derive(Clone, Debug, Serialize)]
pub struct DecayReport {
    /// log|K(t; x, x + d)| against d²/t, one fit per t.
    pub short_time: Vec<(f64, LinearFit)>,
    /// log sup|K(t; x, x) − K̃(t; x, x)| over periods against the distance d to the
    /// transition, at the largest t and down to a hundred times the truncation floor.
    /// The tanh switch leaves X's fields perturbed by e^{−2d/w}, so the decay is linear in d.
    pub cap_difference: Option<LinearFit>,
    /// log of the per-period heat trace of X against t, for t from max(1, 1/μ) to 8 times that.
    pub long_time: Option<LinearFit>,
    /// Smallest eigenvalue of D⁻_zD⁺_z over the sampled circle.
    pub mu: f64,
}

/// Plane-wave values of the block basis at (θ, y) on a circle of length `l`.
fn basis_at(b: &Block, l: f64, ly: f64, x: f64, y: f64) -> crate::CVec {
    let norm = 1.0 / (l * ly).sqrt();
    crate::CVec::from_iterator(
        b.dim(),
        b.modes.iter().map(|&(m, k)| C64::from_polar(norm, 2.0 * PI * (m as f64 * x / l + k as f64 * y / ly))),
    )
}

/// Point values of e^{−tD⁻D⁺} from per-block decompositions.
fn heat_kernel_point(blocks: &[Block], s: &[Svd], l: f64, ly: f64, t: f64, p1: (f64, f64), p2: (f64, f64)) -> C64 {
    blocks
        .iter()
        .zip(s)
        .map(|(b, d)| {
            // v_k(x) = Σ_j V_jk e_j(x), so Vᴴ applied to the conjugate basis gives conj v_k(x)
            let a = d.v.adjoint() * basis_at(b, l, ly, p1.0, p1.1).conjugate();
            let c = d.v.adjoint() * basis_at(b, l, ly, p2.0, p2.1).conjugate();
            (0..d.sigma.len()).map(|k| a[k].conj() * c[k] * (-t * d.sigma[k] * d.sigma[k]).exp()).sum::<C64>()
        })
        .sum()
}

/// Fits of the short-time Gaussian form, of the decay of the cap's influence along the end,
/// and of the long-time decay of the closed-family heat trace.
pub fn heat_decay_probe(em: &EndModel, t_list: &[f64], offsets: &[f64]) -> Result<DecayReport> {
    if t_list.is_empty() || t_list.iter().any(|&t| !(t > 0.0)) {
        return Err(Error::Domain("decay probe needs positive times".into()));
    }
    let s = end_svd(em);
    let lb = em.fields.lx;
    let ly = em.fields.ly;
    let l = em.period();
    let x0 = (em.layout.w0() + em.n as f64 / 2.0) * l;
    let short_time = t_list
        .iter()
        .filter_map(|&t| {
            let pts: Vec<(f64, f64)> = offsets
                .iter()
                .map(|&d| {
                    let k = heat_kernel_point(&em.fam.blocks, &s, lb, ly, t, (x0 + d, 0.0), (x0, 0.0)).norm();
                    (d * d / t, k.ln())
                })
                .collect();
            fit_line(&pts).map(|f| (t, f))
        })
        .collect();

    // closed-family diagonal at the same position inside the period
    let fam = crate::dirac::assemble(&em.base);
    let mz = 64;
    let grid = crate::flt::CircleGrid::new(mz, em.eps);
    let fam_svd: Vec<Vec<Svd>> = (0..mz)
        .into_par_iter()
        .map(|r| fam.blocks.iter().map(|b| svd(&b.dplus_at(grid.log_z_symmetric(r)))).collect())
        .collect();
    // the cap's influence needs the longest time to be visible above rounding
    let t_cap = t_list.iter().cloned().fold(0.0, f64::max);
    let center = (em.layout.collar as f64 + em.layout.transition as f64 / 2.0) * l;
    let diff_at = |x: f64| {
        let big = heat_kernel_point(&em.fam.blocks, &s, lb, ly, t_cap, (x, 0.0), (x, 0.0));
        let xr = x.rem_euclid(l);
        let per: C64 =
            fam_svd.iter().map(|sv| heat_kernel_point(&fam.blocks, sv, l, ly, t_cap, (xr, 0.0), (xr, 0.0))).sum::<C64>()
                / mz as f64;
        (big - per).norm()
    };
    // sup over whole periods, as in the bound for x ∈ W_k; the level deep inside the
    // X periods is the truncation floor
    let sup_over = |x0: f64| (0..8).map(|i| diff_at(x0 + i as f64 * l / 8.0)).fold(0.0, f64::max);
    let deep = (em.layout.w0() + em.n as f64 / 2.0) * l;
    let floor = sup_over(deep).max(1e-14);
    let mut pts = Vec::new();
    for j in 0..em.layout.transition + em.n / 2 {
        let x0 = center + (j as f64 + 0.5) * l;
        let v = sup_over(x0);
        if v < 100.0 * floor {
            break;
        }
        pts.push((x0 - center, v.ln()));
    }
    let cap_difference = fit_line(&pts);

    let mu = fam_svd
        .iter()
        .flat_map(|sv| sv.iter().flat_map(|d| d.sigma.iter().map(|x| x * x)))
        .fold(f64::INFINITY, f64::min);
    // past t ~ 1/μ the slowest modes dominate and the log-trace is close to linear
    let t_start = (1.0 / mu.max(1e-3)).max(1.0);
    let long: Vec<(f64, f64)> = (0..8)
        .map(|i| t_start * (1.0 + i as f64))
        .map(|t| {
            let tr: f64 = fam_svd.iter().flat_map(|sv| sv.iter().flat_map(|d| d.sigma.iter().map(move |x| (-t * x * x).exp()))).sum::<f64>()
                / mz as f64;
            (t, tr.ln())
        })
        .collect();
    Ok(DecayReport { short_time, cap_difference, long_time: fit_line(&long), mu })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_torus_model, product_model, CircleModel};

    fn product(a: f64, lambda: usize, ly: usize) -> ClosedModel {
        product_model(&CircleModel::new(2.0 * PI, a, lambda).unwrap()).unwrap().with_cutoffs(lambda, ly).unwrap()
    }

    #[test]
    fn interior_periods_match_the_closed_model() {
        let phi = FourierField::sample(2.0 * PI, 2.0 * PI, 8, 1, |x, _| 0.3 * x.sin());
        let m = build_torus_model(2.0 * PI, 2.0 * PI, 4, 0.25, Some(phi), None).unwrap().with_cutoffs(4, 2).unwrap();
        let em = assemble_end(&m, &CapSpec::default(), 6, 0.0).unwrap();
        let l = m.lx;
        let fx = m.operator_fields();
        for k in [2.0, 4.0, 6.0] {
            for x in [0.1, 1.3, 4.0] {
                let xb = (em.layout.w0() + k) * l + x;
                let (u, v) = (em.fields.a_y.eval(xb, 0.7), fx.a_y.eval(x, 0.7));
                assert!((u - v).abs() < 1e-9, "{k} {x}: {u} {v}");
                assert!((em.fields.df.f_theta.eval(xb, 0.7) - fx.df.f_theta.eval(x, 0.7)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn weight_subtracts_clifford_field() {
        let em = assemble_end(&product(0.25, 3, 2), &CapSpec::default(), 4, 0.0).unwrap();
        let w = em.with_eps(0.1).weighted();
        for (b, d) in em.fam.blocks.iter().zip(&w) {
            let diff = &b.dplus - d - &b.cplus * C64::new(0.1, 0.0);
            assert!(crate::linalg::max_abs(&diff) < 1e-14);
        }
    }

    #[test]
    fn cap_integral_counts_the_twist_change() {
        let m = product(0.25, 4, 2);
        let em = assemble_end(&m, &CapSpec::default(), 4, 0.0).unwrap();
        assert!((em.cap_integral() + 0.75).abs() < 1e-5, "{}", em.cap_integral());
        let c = cap_index_integral(&m, &CapSpec::PerturbedCap { twist: -0.5, amplitude: 0.3, q: 1 }).unwrap();
        assert!((c + 0.75).abs() < 1e-5, "{c}");
    }

    #[test]
    fn product_cap_index() {
        let em = assemble_end(&product(0.25, 4, 3), &CapSpec::default(), 8, 0.0).unwrap();
        let r = numerical_index(&em, &TAU_SCHEDULE).unwrap();
        assert_eq!(r.index, Some(-1), "{r:?}");
        let em = assemble_end(&product(0.25, 4, 3), &CapSpec::ProductCap { twist: 0.5 }, 8, 0.0).unwrap();
        assert_eq!(numerical_index(&em, &TAU_SCHEDULE).unwrap().index, Some(0));
    }

    #[test]
    fn commutator_identity_product() {
        let m = product(0.25, 6, 6);
        let em = assemble_end(&m, &CapSpec::default(), 8, 0.0).unwrap();
        for (s, t) in [(0.3, 0.3), (0.3, 1.0), (1.0, 0.6)] {
            let r = commutator_identity(&em, s, t, 32).unwrap();
            let u = s + t;
            let closed: f64 = (-6..=6).map(|k| k as f64 + 0.25).map(|l| l * (-u * l * l).exp()).sum::<f64>() / (2.0 * (PI * u).sqrt());
            assert!(r.discrepancy() < 1e-6, "{r:?}");
            assert!((r.rhs - closed).abs() < 1e-9, "{r:?} {closed}");
        }
    }

    fn theta_curved(lambda: usize) -> ClosedModel {
        let phi = FourierField::sample(2.0 * PI, 2.0 * PI, 8, 1, |x, _| 0.3 * x.sin() + 0.1 * (2.0 * x).cos());
        let m = build_torus_model(2.0 * PI, 2.0 * PI, lambda, 0.25, Some(phi), None).unwrap().with_cutoffs(lambda, 4).unwrap();
        crate::model::df_deform(&m, 0.3, &crate::model::HarmonicSpec::first(1.0)).unwrap()
    }

    #[test]
    fn commutator_identity_non_product() {
        let em = assemble_end(&theta_curved(6), &CapSpec::default(), 8, 0.0).unwrap();
        let pairs: Vec<(f64, f64)> = [0.5, 1.0, 2.0].iter().flat_map(|&s| [0.5, 1.0, 2.0].map(move |t| (s, t))).collect();
        for r in commutator_grid(&em, &pairs, 32).unwrap() {
            assert!(r.discrepancy() < 1e-6, "{r:?}");
        }
    }

    #[test]
    fn flow_runs_from_the_cap_integral_to_the_index() {
        let em = assemble_end(&product(0.25, 4, 3), &CapSpec::default(), 8, 0.0).unwrap();
        let rows = supertrace_flow(&em, &[0.5, 200.0]).unwrap();
        assert!((rows[0].supertrace - em.cap_integral()).abs() < 0.05, "{rows:?}");
        assert!((rows[1].supertrace + 1.0).abs() < 0.02, "{rows:?}");
        let r = reg_trace(&em, TraceSymbol::Super, 200.0, &N_SCHEDULE[..2]).unwrap();
        assert!((r.value - rows[1].supertrace).abs() < 1e-3, "{r:?}");
    }

    #[test]
    fn decay_fits() {
        let phi = FourierField::sample(2.0 * PI, 2.0 * PI, 8, 1, |x, _| 0.3 * x.sin() + 0.1 * (2.0 * x).cos());
        let m = build_torus_model(2.0 * PI, 2.0 * PI, 4, 0.25, Some(phi), None).unwrap().with_cutoffs(4, 4).unwrap();
        let em = assemble_end(&m, &CapSpec::default(), 8, 0.0).unwrap();
        let d = heat_decay_probe(&em, &[0.3, 0.6, 1.0], &[0.0, 0.4, 0.8, 1.2, 1.6]).unwrap();
        for (t, f) in &d.short_time {
            // the Gaussian e^{−d²/4t}; curvature bends it as t grows
            assert!(f.slope < 0.0 && f.r2 > 0.99, "{t} {f:?}");
            if *t < 0.7 {
                assert!((f.slope + 0.25).abs() < 0.02, "{t} {f:?}");
            }
        }
        let l = d.long_time.unwrap();
        assert!(l.slope < 0.0 && l.r2 > 0.99, "{l:?}");
        assert!(-l.slope >= d.mu * 0.9, "{} {}", l.slope, d.mu);
        // over a flat X the cap's influence is visible far above the truncation floor
        let em = assemble_end(&product(0.25, 4, 4), &CapSpec::default(), 8, 0.0).unwrap();
        let c = heat_decay_probe(&em, &[1.0], &[0.0, 0.4, 0.8]).unwrap().cap_difference.unwrap();
        assert!(c.slope < 0.0 && c.r2 > 0.99 && c.points.len() >= 3, "{c:?}");
    }

    #[test]
    fn index_change_at_the_untwisted_circle() {
        // a = 0 puts one spectral point on the unit circle; long ends resolve the slow decay
        let m = product(0.0, 2, 1);
        let layout = EndLayout::for_cutoff(2, 150);
        let plus = assemble_end_with(&m, &CapSpec::default(), 8, 0.1, layout).unwrap();
        let minus = plus.with_eps(-0.1);
        assert_eq!(numerical_index(&plus, &TAU_SCHEDULE).unwrap().index, Some(-1));
        assert_eq!(numerical_index(&minus, &TAU_SCHEDULE).unwrap().index, Some(0));
    }

    #[test]
    fn index_change_across_a_tracked_point() {
        // a = 1 − 0.3/2π puts the point of k = −1 at ln|z| = 0.3
        let a = 1.0 - 0.3 / (2.0 * PI);
        let m = product(a, 3, 2);
        let em = assemble_end_with(&m, &CapSpec::default(), 8, 0.0, EndLayout::for_cutoff(3, 60)).unwrap();
        let i0 = numerical_index(&em, &TAU_SCHEDULE).unwrap().index.unwrap();
        let i1 = numerical_index(&em.with_eps(0.6), &TAU_SCHEDULE).unwrap().index.unwrap();
        let fam = crate::dirac::assemble(&m);
        // ind_δ − ind_δ′ = Σ d over the annulus
        assert_eq!(i0 - i1, crate::spectral::index_change(&fam, 0.0, 0.6).unwrap());
        assert_eq!(i1 - i0, -1);
    }
}
