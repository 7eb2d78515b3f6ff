//! Pearcey functions φ, ψ and their order-R analogues.
//!
//! Two scale conventions coexist. [`Normalization::Canonical`] is the
//! quartic one,
//!
//! φ(x) = (1/2πi) ∫_C e^{t⁴/4 - τt²/2 + xt} dt,
//! ψ(y) = (1/2πi) ∫_{iR} e^{-s⁴/4 + τs²/2 - ys} ds,
//!
//! and [`Normalization::Scaled`] is the order-R family
//!
//! φ(x) = (1/πi) ∫_C e^{(-1)^{R+1} t^{2R+2}/(R+1)! - 4τt² + 4xt} dt,
//! ψ(y) = (1/πi) ∫_{iR} e^{(-1)^R s^{2R+2}/(R+1)! + 4τs² - 4ys} ds.
//!
//! Derivatives are taken by inserting monomials into the integrand.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::contours::{cached_rule, ContourKind, QuadratureRule, RuleSettings, C64};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    Canonical,
    Scaled,
}

/// Time parameter and singularity order.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PearceyParams {
    pub tau: f64,
    pub order_r: usize,
    pub normalization: Normalization,
}

impl PearceyParams {
    /// Canonical quartic normalization for order 1, scaled otherwise.
    pub fn new(tau: f64, order_r: usize) -> Result<Self> {
        let normalization = if order_r == 1 { Normalization::Canonical } else { Normalization::Scaled };
        Self::with_normalization(tau, order_r, normalization)
    }

    pub fn scaled(tau: f64, order_r: usize) -> Result<Self> {
        Self::with_normalization(tau, order_r, Normalization::Scaled)
    }

    pub fn with_normalization(tau: f64, order_r: usize, normalization: Normalization) -> Result<Self> {
        if !(1..=8).contains(&order_r) {
            return Err(Error::domain(format!("order_R = {order_r} outside 1..=8")));
        }
        if normalization == Normalization::Canonical && order_r != 1 {
            return Err(Error::domain("canonical normalization exists only for order_R = 1"));
        }
        if !tau.is_finite() {
            return Err(Error::domain("tau must be finite"));
        }
        Ok(PearceyParams { tau, order_r, normalization })
    }

    /// c_R = 2(-1)^{R+1} / (4^{2R+1} R!).
    pub fn c_r(&self) -> f64 {
        c_r(self.order_r)
    }

    /// Coefficient of xt in the exponent (1 or 4).
    pub fn linear_scale(&self) -> f64 {
        match self.normalization {
            Normalization::Canonical => 1.0,
            Normalization::Scaled => 4.0,
        }
    }

    pub fn t_contour(&self) -> ContourKind {
        match self.normalization {
            Normalization::Canonical => ContourKind::pearcey(0.0),
            Normalization::Scaled => ContourKind::HigherOrder(self.order_r),
        }
    }

    /// Exponent of the t integrand without the linear term.
    pub fn t_exponent(&self, t: C64) -> C64 {
        let t2 = t * t;
        match self.normalization {
            Normalization::Canonical => t2 * t2 / 4.0 - self.tau * t2 / 2.0,
            Normalization::Scaled => {
                let r = self.order_r as i32;
                let sign = if r % 2 == 1 { 1.0 } else { -1.0 };
                sign * t2.powi(r + 1) / factorial(self.order_r + 1) - 4.0 * self.tau * t2
            }
        }
    }

    /// Exponent of the s integrand without the linear term.
    pub fn s_exponent(&self, s: C64) -> C64 {
        let s2 = s * s;
        match self.normalization {
            Normalization::Canonical => -s2 * s2 / 4.0 + self.tau * s2 / 2.0,
            Normalization::Scaled => {
                let r = self.order_r as i32;
                let sign = if r % 2 == 1 { -1.0 } else { 1.0 };
                sign * s2.powi(r + 1) / factorial(self.order_r + 1) + 4.0 * self.tau * s2
            }
        }
    }

    /// 1/(2πi) or 1/(πi).
    fn function_prefactor(&self) -> C64 {
        let denom = match self.normalization {
            Normalization::Canonical => 2.0 * PI,
            Normalization::Scaled => PI,
        };
        C64::new(0.0, -1.0 / denom)
    }
}

pub fn c_r(order_r: usize) -> f64 {
    let r = order_r as u32;
    let denom = 4u128.pow(2 * r + 1) * (1..=order_r as u128).product::<u128>();
    let sign = if order_r % 2 == 1 { 1.0 } else { -1.0 };
    sign * 2.0 / denom as f64
}

pub(crate) fn factorial(n: usize) -> f64 {
    (1..=n as u64).product::<u64>() as f64
}

/// Realness tolerance relative to Σ|w f|.
const REAL_TOL: f64 = 1e-12;

fn evaluate(rule: &QuadratureRule, pre: C64, f: impl Fn(C64) -> C64, context: &str) -> Result<f64> {
    let (v, scale) = rule.integrate_with_scale(f);
    let v = pre * v;
    let scale = pre.norm() * scale;
    if v.im.abs() > REAL_TOL * scale.max(1e-300) || !v.re.is_finite() {
        return Err(Error::NonConvergence { context: context.into(), residual: v.im.abs() });
    }
    Ok(v.re)
}

/// φ^{(deriv)}(x) with default rule settings.
pub fn phi(x: f64, params: &PearceyParams, deriv: usize) -> Result<f64> {
    phi_with(x, params, deriv, &RuleSettings::default())
}

pub fn phi_with(x: f64, params: &PearceyParams, deriv: usize, settings: &RuleSettings) -> Result<f64> {
    check_deriv(params, deriv)?;
    let rule = cached_rule(params.t_contour(), settings)?;
    let lam = params.linear_scale();
    evaluate(
        &rule,
        params.function_prefactor(),
        |t| (params.t_exponent(t) + lam * x * t).exp() * (lam * t).powu(deriv as u32),
        "phi",
    )
}

/// ψ^{(deriv)}(y) with default rule settings.
pub fn psi(y: f64, params: &PearceyParams, deriv: usize) -> Result<f64> {
    psi_with(y, params, deriv, &RuleSettings::default())
}

pub fn psi_with(y: f64, params: &PearceyParams, deriv: usize, settings: &RuleSettings) -> Result<f64> {
    check_deriv(params, deriv)?;
    let rule = cached_rule(ContourKind::ImaginaryAxis, settings)?;
    let lam = params.linear_scale();
    evaluate(
        &rule,
        params.function_prefactor(),
        |s| (params.s_exponent(s) - lam * y * s).exp() * (-lam * s).powu(deriv as u32),
        "psi",
    )
}

fn check_deriv(params: &PearceyParams, deriv: usize) -> Result<()> {
    let max = (2 * params.order_r + 1).max(4);
    if deriv > max {
        return Err(Error::domain(format!("derivative order {deriv} exceeds {max}")));
    }
    Ok(())
}

/// Coefficients (a, b, c) of the ODE a f^{(2R+1)} + b f' + c z f = 0 for φ;
/// ψ uses (a, b, -c).
fn ode_coefficients(params: &PearceyParams) -> (f64, f64, f64) {
    match params.normalization {
        Normalization::Canonical => (1.0, -params.tau, 1.0),
        Normalization::Scaled => (params.c_r(), -2.0 * params.tau, 4.0),
    }
}

/// |c φ^{(2R+1)} - bτ φ' + a x φ| with quadrature derivatives.
pub fn ode_residual_phi(x: f64, params: &PearceyParams) -> Result<f64> {
    let (a, b, c) = ode_coefficients(params);
    let top = phi(x, params, 2 * params.order_r + 1)?;
    let d1 = phi(x, params, 1)?;
    let d0 = phi(x, params, 0)?;
    Ok((a * top + b * d1 + c * x * d0).abs())
}

pub fn ode_residual_psi(y: f64, params: &PearceyParams) -> Result<f64> {
    let (a, b, c) = ode_coefficients(params);
    let top = psi(y, params, 2 * params.order_r + 1)?;
    let d1 = psi(y, params, 1)?;
    let d0 = psi(y, params, 0)?;
    Ok((a * top + b * d1 - c * y * d0).abs())
}
