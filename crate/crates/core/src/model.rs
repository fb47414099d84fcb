//! Geometric data on a flat 2-torus X = [0, Lθ) × [0, Ly).
//!
//! The twist is a flat connection with holonomy a around the y-circle plus an exact
//! curvature potential φ, giving A_θ = −∂_yφ and A_y = 2πa/Ly + ∂_θφ. The class α is
//! carried by the θ-axis and represented by df = d(θ/Lθ + g) with g periodic.

use crate::error::config;
use crate::fourier::FourierField;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Closed 1-form df = f_θ dθ + f_y dy, stored by Fourier coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct OneForm {
    pub f_theta: FourierField,
    pub f_y: FourierField,
}

impl OneForm {
    /// df for f = θ/Lθ + g.
    pub fn from_lift(lx: f64, g: &FourierField) -> Self {
        Self { f_theta: g.d_theta().add_constant(1.0 / lx), f_y: g.d_y() }
    }

    /// ∮ df along the θ-cycle (independent of y for closed forms).
    pub fn theta_period(&self) -> f64 {
        self.f_theta.mean() * self.f_theta.lx
    }

    pub fn y_period(&self) -> f64 {
        self.f_y.mean() * self.f_y.ly
    }

    /// Largest coefficient of ∂_θ f_y − ∂_y f_θ.
    pub fn curl_defect(&self) -> f64 {
        self.f_y.d_theta().add(&self.f_theta.d_y().scale(-1.0)).variation()
    }

    pub fn reality_defect(&self) -> f64 {
        self.f_theta.reality_defect().max(self.f_y.reality_defect())
    }

    /// The periodic part g of the lift f = θ/Lθ + g (mean fixed to zero).
    pub fn lift(&self) -> FourierField {
        let (lx, ly) = (self.f_theta.lx, self.f_theta.ly);
        let px = self.f_theta.px().max(self.f_y.px());
        let py = self.f_theta.py().max(self.f_y.py());
        FourierField::from_coeffs(lx, ly, px, py, |p, q| {
            if p != 0 {
                self.f_theta.coeff(p, q) / crate::C64::new(0.0, 2.0 * PI * p as f64 / lx)
            } else if q != 0 {
                self.f_y.coeff(p, q) / crate::C64::new(0.0, 2.0 * PI * q as f64 / ly)
            } else {
                crate::C64::new(0.0, 0.0)
            }
        })
    }

    /// Minimum of |df| over an `n × n` sampling grid.
    pub fn min_norm(&self, n: usize) -> f64 {
        let (lx, ly) = (self.f_theta.lx, self.f_theta.ly);
        let mut m = f64::INFINITY;
        for i in 0..n {
            let x = lx * i as f64 / n as f64;
            for j in 0..n {
                let y = ly * j as f64 / n as f64;
                let v = self.f_theta.eval(x, y).hypot(self.f_y.eval(x, y));
                m = m.min(v);
            }
        }
        m
    }

    fn validate(&self) -> Result<()> {
        if self.reality_defect() > 1e-12 {
            return config("df coefficient table is not conjugate-symmetric");
        }
        if (self.theta_period() - 1.0).abs() > 1e-12 {
            return config(format!("df is not primitive: θ-period {} instead of 1", self.theta_period()));
        }
        if self.y_period().abs() > 1e-12 {
            return config("df has a nonzero y-period; the class must be carried by the θ-axis");
        }
        if self.curl_defect() > 1e-12 {
            return config("df is not closed on the kept modes");
        }
        let scale = 1.0 / self.f_theta.lx;
        if self.min_norm(64) < 1e-3 * scale {
            return config("df vanishes somewhere; Clifford multiplication would not be invertible");
        }
        Ok(())
    }
}

/// Harmonic used to deform df: g gains s·amplitude/(2πp)·sin(2πpθ/Lθ)·cos(2πqy/Ly).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HarmonicSpec {
    pub p: i64,
    #[serde(default)]
    pub q: i64,
    pub amplitude: f64,
}

impl HarmonicSpec {
    pub fn first(amplitude: f64) -> Self {
        Self { p: 1, q: 0, amplitude }
    }

    fn lift(&self, lx: f64, ly: f64, s: f64) -> FourierField {
        let c = s * self.amplitude / (2.0 * PI * self.p as f64);
        // sin(u)cos(v) = [sin(u+v) + sin(u−v)]/2, with sin w = (e^{iw} − e^{−iw})/2i
        let (p, q) = (self.p, self.q);
        let quarter = crate::C64::new(0.0, -c / 4.0);
        FourierField::from_coeffs(lx, ly, p.unsigned_abs() as usize, q.unsigned_abs() as usize, |pp, qq| {
            let mut v = crate::C64::new(0.0, 0.0);
            let w = if q == 0 { 2.0 } else { 1.0 };
            for (sp, sq) in [(p, q), (p, -q)] {
                if pp == sp && qq == sq {
                    v += quarter * w;
                }
                if pp == -sp && qq == -sq {
                    v -= quarter * w;
                }
            }
            if q == 0 {
                v * 0.5
            } else {
                v
            }
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClosedModel {
    pub lx: f64,
    pub ly: f64,
    /// θ-modes kept: |m| ≤ lambda.
    pub lambda: usize,
    /// y-modes kept: |k| ≤ lambda_y.
    pub lambda_y: usize,
    pub twist: f64,
    pub potential: FourierField,
    pub df: OneForm,
}

/// Circle Y with a flat twist; its Dirac operator has spectrum (n + a)·2π/length.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CircleModel {
    pub length: f64,
    pub twist: f64,
    pub cutoff: usize,
}

impl CircleModel {
    pub fn new(length: f64, twist: f64, cutoff: usize) -> Result<Self> {
        if !(length > 0.0) {
            return config("circle length must be positive");
        }
        if !(0.0..1.0).contains(&twist) {
            return config("twist must lie in [0, 1)");
        }
        Ok(Self { length, twist, cutoff })
    }
}

/// Coefficient fields of a twisted Dirac operator on a torus, the common input of assembly.
#[derive(Clone, Debug, PartialEq)]
pub struct OperatorFields {
    pub lx: f64,
    pub ly: f64,
    pub nx: usize,
    pub ny: usize,
    pub a_theta: FourierField,
    pub a_y: FourierField,
    pub df: OneForm,
}

pub fn build_torus_model(
    lx: f64,
    ly: f64,
    lambda: usize,
    twist: f64,
    potential: Option<FourierField>,
    df: Option<OneForm>,
) -> Result<ClosedModel> {
    if !(lx > 0.0 && ly > 0.0) {
        return config("torus lengths must be positive");
    }
    if lambda < 2 {
        return config("mode cutoff must be at least 2");
    }
    if !(0.0..1.0).contains(&twist) {
        return config("twist must lie in [0, 1)");
    }
    let potential = potential.unwrap_or_else(|| FourierField::zero(lx, ly));
    let df = df.unwrap_or_else(|| OneForm::from_lift(lx, &FourierField::zero(lx, ly)));
    if potential.lx != lx || potential.ly != ly || df.f_theta.lx != lx || df.f_theta.ly != ly {
        return config("field tables live on a torus of different size");
    }
    if potential.reality_defect() > 1e-12 {
        return config("curvature potential is not real");
    }
    df.validate()?;
    Ok(ClosedModel { lx, ly, lambda, lambda_y: lambda, twist, potential, df })
}

/// X = S¹ × Y with θ-length equal to the length of Y and f = θ/Lθ.
pub fn product_model(y: &CircleModel) -> Result<ClosedModel> {
    let y = CircleModel::new(y.length, y.twist, y.cutoff)?;
    build_torus_model(y.length, y.length, y.cutoff, y.twist, None, None)
}

/// Adds s times the given harmonic to the lift of df; all other data unchanged.
pub fn df_deform(model: &ClosedModel, s: f64, harmonic: &HarmonicSpec) -> Result<ClosedModel> {
    if harmonic.p < 1 {
        return config("deformation harmonic needs p ≥ 1");
    }
    let g = model.df.lift().add(&harmonic.lift(model.lx, model.ly, s));
    let mut out = model.clone();
    out.df = OneForm::from_lift(model.lx, &g.trimmed(0.0));
    if s == 0.0 {
        out.df = model.df.clone();
    }
    out.df.validate()?;
    Ok(out)
}

impl ClosedModel {
    pub fn with_cutoffs(mut self, lambda: usize, lambda_y: usize) -> Result<Self> {
        if lambda < 2 {
            return config("mode cutoff must be at least 2");
        }
        self.lambda = lambda;
        self.lambda_y = lambda_y;
        Ok(self)
    }

    pub fn twist_frequency(&self) -> f64 {
        2.0 * PI * self.twist / self.ly
    }

    pub fn operator_fields(&self) -> OperatorFields {
        OperatorFields {
            lx: self.lx,
            ly: self.ly,
            nx: self.lambda,
            ny: self.lambda_y,
            a_theta: self.potential.d_y().scale(-1.0),
            a_y: self.potential.d_theta().add_constant(self.twist_frequency()),
            df: self.df.clone(),
        }
    }

    /// The M-fold cyclic cover along θ with the mode band scaled accordingly.
    pub fn cover(&self, m: usize) -> Result<ClosedModel> {
        if m < 1 {
            return Err(Error::Domain("cover degree must be positive".into()));
        }
        let g = self.df.lift().repeat_theta(m);
        let lx = self.lx * m as f64;
        Ok(ClosedModel {
            lx,
            ly: self.ly,
            lambda: self.lambda * m + m / 2,
            lambda_y: self.lambda_y,
            twist: self.twist,
            potential: self.potential.repeat_theta(m),
            // f on the cover is θ/(m·Lθ)·m + g, so df keeps its values but integrates to m
            df: OneForm {
                f_theta: g.d_theta().add_constant(1.0 / self.lx),
                f_y: g.d_y(),
            },
        })
    }

    /// The lift f = θ/Lθ + g on one period.
    pub fn lift_value(&self, x: f64, y: f64) -> f64 {
        x / self.lx + self.df.lift().eval(x, y)
    }

    pub fn is_product(&self) -> bool {
        self.potential.variation() == 0.0 && self.df.f_theta.variation() == 0.0 && self.df.f_y.variation() == 0.0
    }
}

impl OperatorFields {
    pub fn y_independent(&self) -> bool {
        self.a_theta.y_content() == 0.0
            && self.a_y.y_content() == 0.0
            && self.df.f_theta.y_content() == 0.0
            && self.df.f_y.y_content() == 0.0
    }

    pub fn constant(&self) -> bool {
        self.a_theta.variation() == 0.0
            && self.a_y.variation() == 0.0
            && self.df.f_theta.variation() == 0.0
            && self.df.f_y.variation() == 0.0
    }
}
