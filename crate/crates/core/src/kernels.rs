//! The extended Pearcey kernel K = H - E and its order-R relatives.
//!
//! Time indices are zero-based. `H_ij` is the double contour integral
//! built from the t exponent at τ_i and the s exponent at τ_j; `E_ij` is the
//! Gaussian heat kernel for i < j and zero otherwise.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::contours::{build_rule_with, cached_rule, ContourKind, RuleSettings, C64};
use crate::error::{Error, Result};
use crate::special::{self, Normalization, PearceyParams};
use crate::split::{direct_double_integral, CauchySplit, Factor, SplitSettings};

/// Strictly increasing list of times.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct TauGrid {
    taus: Vec<f64>,
}

impl TauGrid {
    pub fn new(taus: Vec<f64>) -> Result<Self> {
        if taus.is_empty() {
            return Err(Error::domain("at least one time is required"));
        }
        if taus.iter().any(|t| !t.is_finite()) {
            return Err(Error::domain("times must be finite"));
        }
        if taus.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::domain("times must be strictly increasing"));
        }
        Ok(TauGrid { taus })
    }

    pub fn taus(&self) -> &[f64] {
        &self.taus
    }

    pub fn len(&self) -> usize {
        self.taus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taus.is_empty()
    }
}

impl TryFrom<Vec<f64>> for TauGrid {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        TauGrid::new(v)
    }
}

impl From<TauGrid> for Vec<f64> {
    fn from(g: TauGrid) -> Self {
        g.taus
    }
}

/// Everything needed to evaluate one family of kernels.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelSpec {
    pub tau_grid: TauGrid,
    pub order_r: usize,
    pub normalization: Normalization,
    pub rule: RuleSettings,
    pub split: SplitSettings,
}

impl KernelSpec {
    /// Canonical quartic Pearcey kernel.
    pub fn pearcey(taus: Vec<f64>) -> Result<Self> {
        Ok(KernelSpec {
            tau_grid: TauGrid::new(taus)?,
            order_r: 1,
            normalization: Normalization::Canonical,
            rule: RuleSettings::default(),
            split: SplitSettings::default(),
        })
    }

    /// Order-R kernel in the scaled normalization; order 1 is the
    /// scaling-limit form of the finite-n kernel.
    pub fn higher_order(taus: Vec<f64>, order_r: usize) -> Result<Self> {
        PearceyParams::scaled(0.0, order_r)?;
        Ok(KernelSpec {
            tau_grid: TauGrid::new(taus)?,
            order_r,
            normalization: Normalization::Scaled,
            rule: RuleSettings::default(),
            split: SplitSettings::default(),
        })
    }

    pub fn with_rule(mut self, rule: RuleSettings) -> Self {
        self.rule = rule;
        self
    }

    pub fn params(&self, k: usize) -> PearceyParams {
        PearceyParams { tau: self.tau_grid.taus[k], order_r: self.order_r, normalization: self.normalization }
    }

    fn check_index(&self, i: usize) -> Result<()> {
        if i >= self.tau_grid.len() {
            return Err(Error::domain(format!("time index {i} out of range 0..{}", self.tau_grid.len())));
        }
        Ok(())
    }

    fn h_prefactor(&self) -> f64 {
        match self.normalization {
            Normalization::Canonical => -1.0 / (4.0 * PI * PI),
            Normalization::Scaled => -1.0 / (PI * PI),
        }
    }

    /// Variance of the Gaussian E over a time step `dt`.
    fn e_variance(&self, dt: f64) -> f64 {
        match self.normalization {
            Normalization::Canonical => dt,
            Normalization::Scaled => dt / 2.0,
        }
    }

    fn linear_scale(&self) -> f64 {
        self.params(0).linear_scale()
    }
}

/// A matrix kernel K_ij(x, y) on m times, with partial derivatives.
pub trait MatrixKernel: Sync {
    fn num_times(&self) -> usize;

    fn tau(&self, k: usize) -> f64;

    fn entry(&self, i: usize, j: usize, x: f64, y: f64, dx: usize, dy: usize) -> Result<f64>;

    /// ∂x^dx ∂y^dy K_ij(xs[a], ys[b]) as a matrix indexed (a, b).
    fn block(&self, i: usize, xs: &[f64], dx: usize, j: usize, ys: &[f64], dy: usize) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(xs.len(), ys.len());
        for (a, &x) in xs.iter().enumerate() {
            for (b, &y) in ys.iter().enumerate() {
                out[(a, b)] = self.entry(i, j, x, y, dx, dy)?;
            }
        }
        Ok(out)
    }

    /// φ_i with (∂x + ∂y)K_ij = -λ φ_i(x) ψ_j(y).
    fn phi(&self, _i: usize, _x: f64, _deriv: usize) -> Result<f64> {
        Err(Error::domain("kernel has no phi/psi factorisation"))
    }

    fn psi(&self, _j: usize, _y: f64, _deriv: usize) -> Result<f64> {
        Err(Error::domain("kernel has no phi/psi factorisation"))
    }

    /// The λ in (∂x + ∂y)K = -λ φ ⊗ ψ.
    fn commutator_scale(&self) -> f64 {
        1.0
    }
}

macro_rules! forward_kernel {
    ($($ptr:ty => $($bound:path)?),*) => {$(
        impl<K: MatrixKernel + ?Sized $(+ $bound)?> MatrixKernel for $ptr {
            fn num_times(&self) -> usize {
                (**self).num_times()
            }
            fn tau(&self, k: usize) -> f64 {
                (**self).tau(k)
            }
            fn entry(&self, i: usize, j: usize, x: f64, y: f64, dx: usize, dy: usize) -> Result<f64> {
                (**self).entry(i, j, x, y, dx, dy)
            }
            fn block(&self, i: usize, xs: &[f64], dx: usize, j: usize, ys: &[f64], dy: usize) -> Result<DMatrix<f64>> {
                (**self).block(i, xs, dx, j, ys, dy)
            }
            fn phi(&self, i: usize, x: f64, deriv: usize) -> Result<f64> {
                (**self).phi(i, x, deriv)
            }
            fn psi(&self, j: usize, y: f64, deriv: usize) -> Result<f64> {
                (**self).psi(j, y, deriv)
            }
            fn commutator_scale(&self) -> f64 {
                (**self).commutator_scale()
            }
        }
    )*};
}

forward_kernel!(&K =>, Arc<K> => Send, Box<K> =>);

/// K^T_ij(x, y) = K_ji(y, x); swaps the roles of φ and ψ.
pub struct Transposed<'a, K: MatrixKernel + ?Sized>(pub &'a K);

impl<K: MatrixKernel + ?Sized> MatrixKernel for Transposed<'_, K> {
    fn num_times(&self) -> usize {
        self.0.num_times()
    }

    fn tau(&self, k: usize) -> f64 {
        self.0.tau(k)
    }

    fn entry(&self, i: usize, j: usize, x: f64, y: f64, dx: usize, dy: usize) -> Result<f64> {
        self.0.entry(j, i, y, x, dy, dx)
    }

    fn block(&self, i: usize, xs: &[f64], dx: usize, j: usize, ys: &[f64], dy: usize) -> Result<DMatrix<f64>> {
        Ok(self.0.block(j, ys, dy, i, xs, dx)?.transpose())
    }

    fn phi(&self, i: usize, x: f64, deriv: usize) -> Result<f64> {
        self.0.psi(i, x, deriv)
    }

    fn psi(&self, j: usize, y: f64, deriv: usize) -> Result<f64> {
        self.0.phi(j, y, deriv)
    }

    fn commutator_scale(&self) -> f64 {
        self.0.commutator_scale()
    }
}

type SplitKey = (ContourKind, (u64, usize, usize, u64), (u64, u64, usize));

/// Split evaluator for a t contour against the imaginary axis, shared per process.
pub(crate) fn cached_split(
    kind: ContourKind,
    rule: &RuleSettings,
    settings: &SplitSettings,
) -> Result<Arc<CauchySplit>> {
    static CACHE: OnceLock<Mutex<HashMap<SplitKey, Arc<CauchySplit>>>> = OnceLock::new();
    let s = settings;
    let key = (kind, rule.key(), (s.u_max.to_bits(), s.u_panel.to_bits(), s.u_nodes));
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(v) = cache.lock().expect("split cache poisoned").get(&key) {
        return Ok(v.clone());
    }
    let t_rule = cached_rule(kind, rule)?;
    let s_rule = cached_rule(ContourKind::ImaginaryAxis, rule)?;
    let split = Arc::new(CauchySplit::new(&t_rule, &s_rule, settings)?);
    cache.lock().expect("split cache poisoned").insert(key, split.clone());
    Ok(split)
}

pub(crate) type FactorKey = (usize, usize, u64);

/// Evaluator for a [`KernelSpec`], memoising per-point factors.
pub struct PearceyKernel {
    spec: KernelSpec,
    split: Arc<CauchySplit>,
    left: Mutex<HashMap<FactorKey, Arc<Factor>>>,
    right: Mutex<HashMap<FactorKey, Arc<Factor>>>,
}

const FACTOR_CACHE_LIMIT: usize = 20_000;

impl PearceyKernel {
    pub fn new(spec: KernelSpec) -> Result<Self> {
        let split = cached_split(spec.params(0).t_contour(), &spec.rule, &spec.split)?;
        Ok(PearceyKernel { spec, split, left: Mutex::default(), right: Mutex::default() })
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    fn left_factor(&self, i: usize, x: f64, dx: usize) -> Arc<Factor> {
        let key = (i, dx, x.to_bits());
        if let Some(f) = self.left.lock().expect("factor cache poisoned").get(&key) {
            return f.clone();
        }
        let p = self.spec.params(i);
        let lam = p.linear_scale();
        let vals: Vec<C64> = self
            .split
            .t_nodes()
            .iter()
            .map(|&t| (p.t_exponent(t) + lam * x * t).exp() * (lam * t).powu(dx as u32))
            .collect();
        let f = Arc::new(self.split.left_factor(&vals));
        insert_bounded(&self.left, key, f.clone());
        f
    }

    fn right_factor(&self, j: usize, y: f64, dy: usize) -> Arc<Factor> {
        let key = (j, dy, y.to_bits());
        if let Some(f) = self.right.lock().expect("factor cache poisoned").get(&key) {
            return f.clone();
        }
        let p = self.spec.params(j);
        let lam = p.linear_scale();
        let vals: Vec<C64> = self
            .split
            .s_nodes()
            .iter()
            .map(|&s| (p.s_exponent(s) - lam * y * s).exp() * (-lam * s).powu(dy as u32))
            .collect();
        let f = Arc::new(self.split.right_factor(&vals));
        insert_bounded(&self.right, key, f.clone());
        f
    }

    fn h_from_factors(&self, l: &Factor, r: &Factor) -> Result<f64> {
        let (v, scale) = CauchySplit::contract(l, r);
        let pre = self.spec.h_prefactor();
        if v.im.abs() > 1e-11 * scale || !v.re.is_finite() {
            return Err(Error::NonConvergence { context: "kernel H".into(), residual: (pre * v.im).abs() });
        }
        Ok(pre * v.re)
    }

    /// ∂x^dx ∂y^dy H_ij(x, y).
    pub fn h(&self, i: usize, j: usize, x: f64, y: f64, dx: usize, dy: usize) -> Result<f64> {
        self.spec.check_index(i)?;
        self.spec.check_index(j)?;
        check_orders(dx, dy)?;
        let l = self.left_factor(i, x, dx);
        let r = self.right_factor(j, y, dy);
        self.h_from_factors(&l, &r)
    }

    /// ∂x^dx ∂y^dy E_ij(x, y).
    pub fn e(&self, i: usize, j: usize, x: f64, y: f64, dx: usize, dy: usize) -> Result<f64> {
        self.spec.check_index(i)?;
        self.spec.check_index(j)?;
        if i >= j {
            return Ok(0.0);
        }
        let taus = self.spec.tau_grid.taus();
        let v = self.spec.e_variance(taus[j] - taus[i]);
        Ok(gaussian_derivative(x - y, v, dx, dy))
    }
}

pub(crate) fn insert_bounded(cache: &Mutex<HashMap<FactorKey, Arc<Factor>>>, key: FactorKey, f: Arc<Factor>) {
    let mut guard = cache.lock().expect("factor cache poisoned");
    if guard.len() >= FACTOR_CACHE_LIMIT {
        guard.clear();
    }
    guard.insert(key, f);
}

fn check_orders(dx: usize, dy: usize) -> Result<()> {
    if dx > 4 || dy > 4 {
        return Err(Error::domain("derivative orders above 4 are not supported"));
    }
    Ok(())
}

/// ∂x^a ∂y^b of the centred Gaussian density with variance v at d = x - y.
pub fn gaussian_derivative(d: f64, v: f64, a: usize, b: usize) -> f64 {
    let sigma = v.sqrt();
    let z = d / sigma;
    let g = (-0.5 * z * z).exp() / (2.0 * PI * v).sqrt();
    let n = a + b;
    // probabilists' Hermite polynomial He_n(z)
    let (mut h0, mut h1) = (1.0, z);
    let he = if n == 0 {
        1.0
    } else {
        for k in 1..n {
            let h2 = z * h1 - k as f64 * h0;
            h0 = h1;
            h1 = h2;
        }
        h1
    };
    let sign = if (n + b).is_multiple_of(2) { 1.0 } else { -1.0 };
    sign * he * g / sigma.powi(n as i32)
}

impl MatrixKernel for PearceyKernel {
    fn num_times(&self) -> usize {
        self.spec.tau_grid.len()
    }

    fn tau(&self, k: usize) -> f64 {
        self.spec.tau_grid.taus()[k]
    }

    fn entry(&self, i: usize, j: usize, x: f64, y: f64, dx: usize, dy: usize) -> Result<f64> {
        Ok(self.h(i, j, x, y, dx, dy)? - self.e(i, j, x, y, dx, dy)?)
    }

    fn block(&self, i: usize, xs: &[f64], dx: usize, j: usize, ys: &[f64], dy: usize) -> Result<DMatrix<f64>> {
        use rayon::prelude::*;
        self.spec.check_index(i)?;
        self.spec.check_index(j)?;
        check_orders(dx, dy)?;
        let lefts: Vec<Arc<Factor>> = xs.par_iter().map(|&x| self.left_factor(i, x, dx)).collect();
        let rights: Vec<Arc<Factor>> = ys.par_iter().map(|&y| self.right_factor(j, y, dy)).collect();
        let mut out = DMatrix::zeros(xs.len(), ys.len());
        for (a, l) in lefts.iter().enumerate() {
            for (b, r) in rights.iter().enumerate() {
                out[(a, b)] = self.h_from_factors(l, r)? - self.e(i, j, xs[a], ys[b], dx, dy)?;
            }
        }
        Ok(out)
    }

    fn phi(&self, i: usize, x: f64, deriv: usize) -> Result<f64> {
        self.spec.check_index(i)?;
        special::phi_with(x, &self.spec.params(i), deriv, &self.spec.rule)
    }

    fn psi(&self, j: usize, y: f64, deriv: usize) -> Result<f64> {
        self.spec.check_index(j)?;
        special::psi_with(y, &self.spec.params(j), deriv, &self.spec.rule)
    }

    fn commutator_scale(&self) -> f64 {
        self.spec.linear_scale()
    }
}

pub fn h_entry(spec: &KernelSpec, i: usize, j: usize, x: f64, y: f64, dx: usize, dy: usize) -> Result<f64> {
    PearceyKernel::new(spec.clone())?.h(i, j, x, y, dx, dy)
}

pub fn e_entry(spec: &KernelSpec, i: usize, j: usize, x: f64, y: f64, dx: usize, dy: usize) -> Result<f64> {
    PearceyKernel::new(spec.clone())?.e(i, j, x, y, dx, dy)
}

pub fn k_entry(spec: &KernelSpec, i: usize, j: usize, x: f64, y: f64, dx: usize, dy: usize) -> Result<f64> {
    PearceyKernel::new(spec.clone())?.entry(i, j, x, y, dx, dy)
}

/// H_ij by a brute-force product rule with `panels` graded panels per ray.
/// Slow; intended as an independent check of the split evaluation.
pub fn h_entry_reference(
    spec: &KernelSpec,
    i: usize,
    j: usize,
    x: f64,
    y: f64,
    dx: usize,
    dy: usize,
    panels: usize,
) -> Result<f64> {
    spec.check_index(i)?;
    spec.check_index(j)?;
    let (pi, pj) = (spec.params(i), spec.params(j));
    let settings = RuleSettings { panels, ..spec.rule };
    let t_rule = build_rule_with(&pi.t_contour().path()?, &settings)?;
    let s_rule = build_rule_with(&ContourKind::ImaginaryAxis.path()?, &settings)?;
    let lam = pi.linear_scale();
    let v = direct_double_integral(
        &t_rule,
        &s_rule,
        |t| (pi.t_exponent(t) + lam * x * t).exp() * (lam * t).powu(dx as u32),
        |s| (pj.s_exponent(s) - lam * y * s).exp() * (-lam * s).powu(dy as u32),
    );
    Ok(spec.h_prefactor() * v.re)
}

/// Single-time canonical kernel from the Pearcey functions:
/// K(x,y) = [φ''ψ - φ'ψ' + φψ'' - τφψ]/(x - y).
pub fn integrable_entry(x: f64, y: f64, tau: f64) -> Result<f64> {
    if (x - y).abs() < 1e-4 {
        return integrable_near_diagonal(x, y, tau);
    }
    let p = PearceyParams::new(tau, 1)?;
    let ph = |z: f64, d: usize| special::phi(z, &p, d);
    let ps = |z: f64, d: usize| special::psi(z, &p, d);
    let (f0, f1, f2) = (ph(x, 0)?, ph(x, 1)?, ph(x, 2)?);
    let (g0, g1, g2) = (ps(y, 0)?, ps(y, 1)?, ps(y, 2)?);
    Ok((f2 * g0 - f1 * g1 + f0 * g2 - tau * f0 * g0) / (x - y))
}

// N(y, y) = 0, so K ≈ ∂x N(y,y) + (x-y)/2 ∂x² N(y,y)
fn integrable_near_diagonal(x: f64, y: f64, tau: f64) -> Result<f64> {
    let p = PearceyParams::new(tau, 1)?;
    let ph = |d: usize| special::phi(y, &p, d);
    let ps = |d: usize| special::psi(y, &p, d);
    let (f1, f2, f3, f4) = (ph(1)?, ph(2)?, ph(3)?, ph(4)?);
    let (g0, g1, g2) = (ps(0)?, ps(1)?, ps(2)?);
    let n1 = f3 * g0 - f2 * g1 + f1 * g2 - tau * f1 * g0;
    let n2 = f4 * g0 - f3 * g1 + f2 * g2 - tau * f2 * g0;
    Ok(n1 + 0.5 * (x - y) * n2)
}

/// λ = 4·2^{-1/4}: K_limit(x, y; τ) = λ K_canonical(λx, λy; 4√2 τ).
pub const LIMIT_SCALE: f64 = 3.363_585_661_014_858;

/// Scaled order-1 kernel expressed through the canonical one.
pub fn limit_kernel_via_canonical(
    taus: &[f64],
    i: usize,
    j: usize,
    x: f64,
    y: f64,
    dx: usize,
    dy: usize,
) -> Result<f64> {
    let lam = LIMIT_SCALE;
    let spec = KernelSpec::pearcey(taus.iter().map(|t| 4.0 * 2f64.sqrt() * t).collect())?;
    let k = PearceyKernel::new(spec)?;
    Ok(lam.powi(1 + dx as i32 + dy as i32) * k.entry(i, j, lam * x, lam * y, dx, dy)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gauss::gauss_interval;
    use proptest::prelude::*;

    fn single(tau: f64) -> PearceyKernel {
        PearceyKernel::new(KernelSpec::pearcey(vec![tau]).unwrap()).unwrap()
    }

    #[test]
    fn limit_scale_constant() {
        assert!((LIMIT_SCALE - 4.0 * 2f64.powf(-0.25)).abs() < 1e-15);
    }

    #[test]
    fn tau_grid_validation() {
        assert!(TauGrid::new(vec![0.0, 0.0]).is_err());
        assert!(TauGrid::new(vec![0.5, 0.1]).is_err());
        assert!(TauGrid::new(vec![]).is_err());
        assert!(TauGrid::new(vec![-1.0, 0.0, 2.0]).is_ok());
    }

    #[test]
    fn point_reflection_symmetry() {
        let k = single(0.0);
        for &x in &[-1.0, 0.0, 1.0] {
            for &y in &[-1.0, 0.0, 1.0] {
                let a = k.h(0, 0, x, y, 0, 0).unwrap();
                let b = k.h(0, 0, -x, -y, 0, 0).unwrap();
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn split_agrees_with_product_rule() {
        let spec = KernelSpec::pearcey(vec![-0.3, 0.4]).unwrap();
        let k = PearceyKernel::new(spec.clone()).unwrap();
        for &(i, j, x, y, dx, dy) in &[(0, 1, 0.3, -0.2, 0, 0), (1, 0, -0.5, 0.7, 2, 1), (1, 1, 0.1, 0.1, 0, 3)] {
            let a = k.h(i, j, x, y, dx, dy).unwrap();
            let b = h_entry_reference(&spec, i, j, x, y, dx, dy, 48).unwrap();
            assert!((a - b).abs() < 1e-11, "{a} vs {b}");
        }
    }

    #[test]
    fn integrable_form_at_origin_and_off_diagonal() {
        let k = single(0.0);
        let a = k.h(0, 0, 0.0, 0.0, 0, 0).unwrap();
        assert!((a - integrable_entry(0.0, 0.0, 0.0).unwrap()).abs() < 1e-8);
        let b = k.h(0, 0, 0.3, -0.2, 0, 0).unwrap();
        assert!((b - integrable_entry(0.3, -0.2, 0.0).unwrap()).abs() < 1e-8);
        let c = single(1.0).h(0, 0, 1.0, 1.0, 0, 0).unwrap();
        assert!((c - integrable_entry(1.0, 1.0, 1.0).unwrap()).abs() < 1e-8);
    }

    #[test]
    fn integrable_form_diagonal_limit_is_continuous() {
        let expanded = integrable_near_diagonal(0.401, 0.4, 0.2).unwrap();
        let near = integrable_entry(0.401, 0.4, 0.2).unwrap();
        assert!((expanded - near).abs() < 1e-6, "{expanded} vs {near}");
        assert!((near - single(0.2).h(0, 0, 0.401, 0.4, 0, 0).unwrap()).abs() < 1e-8);
    }

    #[test]
    fn e_entry_values() {
        let k = PearceyKernel::new(KernelSpec::pearcey(vec![0.0, 0.5]).unwrap()).unwrap();
        assert!((k.e(0, 1, 0.3, 0.3, 0, 0).unwrap() - 1.0 / PI.sqrt()).abs() < 1e-15);
        assert_eq!(k.e(1, 0, 0.3, 0.3, 0, 0).unwrap(), 0.0);
        assert_eq!(k.e(1, 1, 0.3, 0.2, 0, 0).unwrap(), 0.0);
    }

    #[test]
    fn e_semigroup() {
        let k = PearceyKernel::new(KernelSpec::pearcey(vec![0.0, 0.3, 1.0]).unwrap()).unwrap();
        let (x, y) = (0.2, -0.4);
        let mut acc = 0.0;
        for p in 0..40 {
            let (z, w) = gauss_interval(-12.0 + 0.6 * p as f64, -11.4 + 0.6 * p as f64, 20);
            for (zi, wi) in z.iter().zip(&w) {
                acc += wi * k.e(0, 1, x, *zi, 0, 0).unwrap() * k.e(1, 2, *zi, y, 0, 0).unwrap();
            }
        }
        assert!((acc - k.e(0, 2, x, y, 0, 0).unwrap()).abs() < 1e-10);
    }

    #[test]
    fn gaussian_derivatives_match_differences() {
        let (d, v) = (0.3, 0.7);
        let h = 1e-4;
        for a in 0..3 {
            for b in 0..3 {
                let fd = (gaussian_derivative(d + h, v, a, b) - gaussian_derivative(d - h, v, a, b)) / (2.0 * h);
                assert!((fd - gaussian_derivative(d, v, a + 1, b)).abs() < 1e-6);
                assert!((-fd - gaussian_derivative(d, v, a, b + 1)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn single_time_kernel_is_h() {
        let k = single(0.3);
        assert_eq!(k.entry(0, 0, 0.2, 0.1, 1, 0).unwrap(), k.h(0, 0, 0.2, 0.1, 1, 0).unwrap());
    }

    #[test]
    fn first_commutator() {
        let k = PearceyKernel::new(KernelSpec::pearcey(vec![-0.5, 0.5]).unwrap()).unwrap();
        for &(x, y) in &[(0.1, -0.3), (1.2, 0.4), (-0.8, -1.1)] {
            for i in 0..2 {
                for j in 0..2 {
                    let lhs = k.entry(i, j, x, y, 1, 0).unwrap() + k.entry(i, j, x, y, 0, 1).unwrap();
                    let rhs = -k.phi(i, x, 0).unwrap() * k.psi(j, y, 0).unwrap();
                    assert!((lhs - rhs).abs() < 1e-7, "{i}{j}: {lhs} vs {rhs}");
                }
            }
        }
    }

    #[test]
    fn off_diagonal_refinement() {
        let spec = KernelSpec::pearcey(vec![-0.5, 0.5]).unwrap();
        let a = k_entry(&spec, 0, 1, 0.0, 0.0, 0, 0).unwrap();
        let b = k_entry(&spec.clone().with_rule(spec.rule.refined()), 0, 1, 0.0, 0.0, 0, 0).unwrap();
        assert!(a.is_finite());
        assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }

    #[test]
    fn heat_flow() {
        let h = 1e-3;
        let (x, y) = (0.2, -0.1);
        let hij = |t0: f64, t1: f64, dx, dy| {
            h_entry(&KernelSpec::pearcey(vec![t0, t1]).unwrap(), 0, 1, x, y, dx, dy).unwrap()
        };
        let dtj = (hij(-0.5, 0.5 + h, 0, 0) - hij(-0.5, 0.5 - h, 0, 0)) / (2.0 * h);
        assert!((dtj - 0.5 * hij(-0.5, 0.5, 0, 2)).abs() < 1e-5);
        let dti = (hij(-0.5 + h, 0.5, 0, 0) - hij(-0.5 - h, 0.5, 0, 0)) / (2.0 * h);
        assert!((dti + 0.5 * hij(-0.5, 0.5, 2, 0)).abs() < 1e-5);
    }

    #[test]
    fn limit_normalization_map() {
        let spec = KernelSpec::higher_order(vec![-0.1, 0.2], 1).unwrap();
        let k = PearceyKernel::new(spec).unwrap();
        for &(i, j, x, y, dx) in &[(0, 0, 0.3, -0.2, 0), (0, 1, 0.1, 0.4, 1), (1, 0, -0.2, 0.0, 0)] {
            let a = k.entry(i, j, x, y, dx, 0).unwrap();
            let b = limit_kernel_via_canonical(&[-0.1, 0.2], i, j, x, y, dx, 0).unwrap();
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn higher_order_commutator_and_heat_flow() {
        let spec = KernelSpec::higher_order(vec![-0.1, 0.2], 2).unwrap();
        let k = PearceyKernel::new(spec).unwrap();
        let (x, y) = (0.2, -0.3);
        let lhs = k.entry(0, 1, x, y, 1, 0).unwrap() + k.entry(0, 1, x, y, 0, 1).unwrap();
        let rhs = -4.0 * k.phi(0, x, 0).unwrap() * k.psi(1, y, 0).unwrap();
        assert!((lhs - rhs).abs() < 1e-7, "{lhs} vs {rhs}");
        let h = 1e-3;
        let hj = |t1: f64| h_entry(&KernelSpec::higher_order(vec![-0.1, t1], 2).unwrap(), 0, 1, x, y, 0, 0).unwrap();
        let dtj = (hj(0.2 + h) - hj(0.2 - h)) / (2.0 * h);
        assert!((dtj - 0.25 * k.h(0, 1, x, y, 0, 2).unwrap()).abs() < 1e-5);
    }

    #[test]
    fn transposed_kernel_swaps_arguments() {
        let k = PearceyKernel::new(KernelSpec::pearcey(vec![-0.2, 0.3]).unwrap()).unwrap();
        let t = Transposed(&k);
        assert_eq!(t.entry(0, 1, 0.1, 0.2, 1, 0).unwrap(), k.entry(1, 0, 0.2, 0.1, 0, 1).unwrap());
        assert_eq!(t.phi(1, 0.3, 1).unwrap(), k.psi(1, 0.3, 1).unwrap());
        let b = t.block(0, &[0.1, 0.2], 0, 1, &[0.3], 1).unwrap();
        assert!((b[(1, 0)] - k.entry(1, 0, 0.3, 0.2, 1, 0).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn block_matches_entries() {
        let k = PearceyKernel::new(KernelSpec::pearcey(vec![-0.2, 0.3]).unwrap()).unwrap();
        let xs = [0.1, -0.4];
        let ys = [0.5, 0.0, 1.0];
        let b = k.block(0, &xs, 1, 1, &ys, 2).unwrap();
        for (a, &x) in xs.iter().enumerate() {
            for (c, &y) in ys.iter().enumerate() {
                assert_eq!(b[(a, c)], k.entry(0, 1, x, y, 1, 2).unwrap());
            }
        }
    }

    #[test]
    fn one_point_density_is_nonnegative() {
        let k = single(0.0);
        let xs: Vec<f64> = (0..=16).map(|i| -4.0 + 0.5 * i as f64).collect();
        let b = k.block(0, &xs, 0, 0, &xs, 0).unwrap();
        for a in 0..xs.len() {
            assert!(b[(a, a)] >= -1e-9, "density {} at {}", b[(a, a)], xs[a]);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]
        #[test]
        fn commutator_holds_pointwise(x in -2.0f64..2.0, y in -2.0f64..2.0, tau in -1.0f64..1.0) {
            let k = single(tau);
            let lhs = k.entry(0, 0, x, y, 1, 0).unwrap() + k.entry(0, 0, x, y, 0, 1).unwrap();
            let rhs = -k.phi(0, x, 0).unwrap() * k.psi(0, y, 0).unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-7);
        }
    }
}
