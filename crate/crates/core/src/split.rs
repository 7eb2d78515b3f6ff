//! Double contour integrals with a Cauchy factor 1/(s-t).
//!
//! With s on the imaginary axis and Re t != 0 the Cauchy factor is a
//! Laplace transform,
//!
//! 1/(s-t) = -∫_0^∞ e^{u(s-t)} du   (Re t > 0)
//! 1/(s-t) =  ∫_0^∞ e^{-u(s-t)} du  (Re t < 0)
//!
//! so the double integral factors into a sum over u of products of single
//! integrals. Each evaluation point then costs one pass over the t nodes and
//! one over the s nodes, and a matrix of kernel values is a product of two
//! thin factor matrices.

use num_complex::Complex64;

use crate::contours::{QuadratureRule, C64};
use crate::error::{Error, Result};
use crate::gauss::gauss_legendre;

/// Discretisation of the Laplace variable u on [0, u_max].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitSettings {
    pub u_max: f64,
    pub u_panel: f64,
    pub u_nodes: usize,
}

impl Default for SplitSettings {
    fn default() -> Self {
        SplitSettings { u_max: 48.0, u_panel: 2.0, u_nodes: 16 }
    }
}

/// Coefficients of one side of the factorised integral, indexed by u node.
#[derive(Clone, Debug)]
pub struct Factor(pub Vec<C64>);

/// Precomputed exponential tables for a fixed pair of rules.
#[derive(Debug)]
pub struct CauchySplit {
    t: Vec<C64>,
    tw: Vec<C64>,
    n_right: usize,
    s: Vec<C64>,
    sw: Vec<C64>,
    n_panels: usize,
    n_sub: usize,
    uw: Vec<f64>,
    // e^{-c_p t sgn(Re t)}, panel-major
    t_panel: Vec<C64>,
    // e^{-h xi_q t sgn(Re t)}
    t_sub: Vec<C64>,
    // e^{c_p s} and e^{h xi_q s}
    s_panel: Vec<C64>,
    s_sub: Vec<C64>,
}

impl CauchySplit {
    /// `t_rule` must avoid the imaginary axis and `s_rule` must lie on it.
    pub fn new(t_rule: &QuadratureRule, s_rule: &QuadratureRule, settings: &SplitSettings) -> Result<Self> {
        if !(settings.u_max > 0.0 && settings.u_panel > 0.0) || settings.u_nodes == 0 {
            return Err(Error::domain("invalid Laplace split settings"));
        }
        if s_rule.nodes.iter().any(|s| s.re != 0.0) {
            return Err(Error::domain("s rule must lie on the imaginary axis"));
        }
        let mut right = Vec::new();
        let mut left = Vec::new();
        for (&t, &w) in t_rule.nodes.iter().zip(&t_rule.weights) {
            if t.re > 0.0 {
                right.push((t, w));
            } else if t.re < 0.0 {
                left.push((t, w));
            } else {
                return Err(Error::domain("t node on the imaginary axis"));
            }
        }
        let n_right = right.len();
        let (t, tw): (Vec<C64>, Vec<C64>) = right.into_iter().chain(left).unzip();

        let n_panels = (settings.u_max / settings.u_panel).ceil() as usize;
        let h = settings.u_max / n_panels as f64 / 2.0;
        let gl = gauss_legendre(settings.u_nodes);
        let (xi, wi) = (&gl.0, &gl.1);
        let centers: Vec<f64> = (0..n_panels).map(|p| h * (2 * p + 1) as f64).collect();
        let mut uw = Vec::with_capacity(n_panels * xi.len());
        for _ in 0..n_panels {
            uw.extend(wi.iter().map(|w| w * h));
        }

        let sign = |k: usize| if k < n_right { 1.0 } else { -1.0 };
        let mut t_panel = Vec::with_capacity(n_panels * t.len());
        for &c in &centers {
            t_panel.extend(t.iter().enumerate().map(|(k, &tk)| (-c * sign(k) * tk).exp()));
        }
        let mut t_sub = Vec::with_capacity(xi.len() * t.len());
        for &x in xi.iter() {
            t_sub.extend(t.iter().enumerate().map(|(k, &tk)| (-h * x * sign(k) * tk).exp()));
        }
        let mut s_panel = Vec::with_capacity(n_panels * s_rule.len());
        for &c in &centers {
            s_panel.extend(s_rule.nodes.iter().map(|&s| (c * s).exp()));
        }
        let mut s_sub = Vec::with_capacity(xi.len() * s_rule.len());
        for &x in xi.iter() {
            s_sub.extend(s_rule.nodes.iter().map(|&s| (h * x * s).exp()));
        }

        Ok(CauchySplit {
            t,
            tw,
            n_right,
            s: s_rule.nodes.clone(),
            sw: s_rule.weights.clone(),
            n_panels,
            n_sub: xi.len(),
            uw,
            t_panel,
            t_sub,
            s_panel,
            s_sub,
        })
    }

    /// t nodes, those with Re t > 0 first.
    pub fn t_nodes(&self) -> &[C64] {
        &self.t
    }

    pub fn s_nodes(&self) -> &[C64] {
        &self.s
    }

    pub fn factor_len(&self) -> usize {
        2 * self.uw.len()
    }

    /// Factor for integrand values `f` sampled at [`t_nodes`](Self::t_nodes).
    pub fn left_factor(&self, f: &[C64]) -> Factor {
        let nt = self.t.len();
        let nu = self.uw.len();
        let mut out = vec![C64::new(0.0, 0.0); 2 * nu];
        let mut v = vec![C64::new(0.0, 0.0); nt];
        for p in 0..self.n_panels {
            let ep = &self.t_panel[p * nt..(p + 1) * nt];
            for k in 0..nt {
                v[k] = f[k] * self.tw[k] * ep[k];
            }
            for q in 0..self.n_sub {
                let eq = &self.t_sub[q * nt..(q + 1) * nt];
                let right = dot(&v[..self.n_right], &eq[..self.n_right]);
                let left = dot(&v[self.n_right..], &eq[self.n_right..]);
                let u = p * self.n_sub + q;
                out[u] = -self.uw[u] * right;
                out[nu + u] = self.uw[u] * left;
            }
        }
        Factor(out)
    }

    /// Factor for integrand values `g` sampled at [`s_nodes`](Self::s_nodes).
    pub fn right_factor(&self, g: &[C64]) -> Factor {
        let ns = self.s.len();
        let nu = self.uw.len();
        let mut out = vec![C64::new(0.0, 0.0); 2 * nu];
        let mut vp = vec![C64::new(0.0, 0.0); ns];
        let mut vm = vec![C64::new(0.0, 0.0); ns];
        for p in 0..self.n_panels {
            let ep = &self.s_panel[p * ns..(p + 1) * ns];
            // e^{-us} is the conjugate of e^{us} on the imaginary axis
            for k in 0..ns {
                let gw = g[k] * self.sw[k];
                vp[k] = gw * ep[k];
                vm[k] = gw * ep[k].conj();
            }
            for q in 0..self.n_sub {
                let eq = &self.s_sub[q * ns..(q + 1) * ns];
                let u = p * self.n_sub + q;
                out[u] = dot(&vp, eq);
                out[nu + u] = dot_conj(&vm, eq);
            }
        }
        Factor(out)
    }

    /// Σ_u left·right and the magnitude scale Σ|left·right|.
    pub fn contract(left: &Factor, right: &Factor) -> (C64, f64) {
        let mut acc = C64::new(0.0, 0.0);
        let mut scale = 0.0;
        for (a, b) in left.0.iter().zip(&right.0) {
            let term = a * b;
            acc += term;
            scale += term.norm();
        }
        (acc, scale)
    }

    /// ∫∫ f(t) g(s) ds dt / (s - t).
    pub fn integrate(&self, f: &[C64], g: &[C64]) -> (C64, f64) {
        Self::contract(&self.left_factor(f), &self.right_factor(g))
    }
}

#[inline]
fn dot(a: &[C64], b: &[C64]) -> C64 {
    let mut re = 0.0;
    let mut im = 0.0;
    for (x, y) in a.iter().zip(b) {
        re += x.re * y.re - x.im * y.im;
        im += x.re * y.im + x.im * y.re;
    }
    Complex64::new(re, im)
}

#[inline]
fn dot_conj(a: &[C64], b: &[C64]) -> C64 {
    let mut re = 0.0;
    let mut im = 0.0;
    for (x, y) in a.iter().zip(b) {
        re += x.re * y.re + x.im * y.im;
        im += x.im * y.re - x.re * y.im;
    }
    Complex64::new(re, im)
}

/// Brute-force product rule ∫∫ f g /(s-t) on two rules; reference only.
pub fn direct_double_integral(
    t_rule: &QuadratureRule,
    s_rule: &QuadratureRule,
    f: impl Fn(C64) -> C64 + Sync,
    g: impl Fn(C64) -> C64 + Sync,
) -> C64 {
    use rayon::prelude::*;
    let gs: Vec<C64> = s_rule.nodes.iter().zip(&s_rule.weights).map(|(&s, &w)| w * g(s)).collect();
    let rows: Vec<C64> = t_rule
        .nodes
        .par_iter()
        .zip(t_rule.weights.par_iter())
        .map(|(&t, &w)| {
            let ft = w * f(t);
            let mut acc = C64::new(0.0, 0.0);
            for (&s, &gv) in s_rule.nodes.iter().zip(&gs) {
                acc += gv / (s - t);
            }
            ft * acc
        })
        .collect();
    let mut sum = crate::contours::CompensatedSum::default();
    for r in rows {
        sum.add(r);
    }
    sum.value()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contours::{build_rule_with, imaginary_axis_contour, pearcey_t_contour, RuleSettings};

    fn rules(settings: &RuleSettings) -> (QuadratureRule, QuadratureRule) {
        (
            build_rule_with(&pearcey_t_contour(0.0).unwrap(), settings).unwrap(),
            build_rule_with(&imaginary_axis_contour(), settings).unwrap(),
        )
    }

    #[test]
    fn split_matches_direct_product_rule() {
        let (t, s) = rules(&RuleSettings::default());
        let split = CauchySplit::new(&t, &s, &SplitSettings::default()).unwrap();
        let (x, y, ti, tj) = (0.4, -0.3, 0.2, 0.5);
        let f = move |t: C64| (t.powu(4) / 4.0 - ti * t * t / 2.0 + x * t).exp();
        let g = move |s: C64| (-s.powu(4) / 4.0 + tj * s * s / 2.0 - y * s).exp();
        let fv: Vec<C64> = split.t_nodes().iter().map(|&t| f(t)).collect();
        let gv: Vec<C64> = split.s_nodes().iter().map(|&s| g(s)).collect();
        let (v, _) = split.integrate(&fv, &gv);

        // the product rule converges only linearly in the innermost panel width
        let fine = RuleSettings { panels: 48, ..RuleSettings::default() };
        let (tf, sf) = rules(&fine);
        let reference = direct_double_integral(&tf, &sf, f, g);
        assert!((v - reference).norm() < 1e-12, "{v} vs {reference}");
    }

    #[test]
    fn rejects_off_axis_s_rule() {
        let (t, _) = rules(&RuleSettings::default());
        assert!(CauchySplit::new(&t, &t, &SplitSettings::default()).is_err());
    }
}
