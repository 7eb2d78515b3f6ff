//! Finite-n nonintersecting Brownian bridges and their extended kernel.
//!
//! Paths run over the time interval [0, 1] with transition density
//! P(x, y, σ) = (πσ)^{-1/2} e^{-(x-y)²/σ}, start at `starts` and end at
//! `ends`. The kernel is K = H - E with E_kl = P(x, y, τ_l - τ_k) for k < l.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::contours::ContourKind;
use crate::contours::{RuleSettings, C64};
use crate::error::{Error, Result};
use crate::gauss::gauss_interval;
use crate::kernels::{
    cached_split, gaussian_derivative, insert_bounded, FactorKey, KernelSpec, MatrixKernel, PearceyKernel, TauGrid,
};
use crate::split::{CauchySplit, Factor, SplitSettings};

/// Largest n for which the Vandermonde-based sum form is allowed.
pub const MAX_SUM_FORM_N: usize = 12;

/// P(x, y, σ), a Gaussian in x - y with variance σ/2.
pub fn heat_p(x: f64, y: f64, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::domain(format!("sigma = {sigma} must be positive")));
    }
    Ok(heat_p_dx(x, y, sigma, 0))
}

/// ∂x^d P(x, y, σ).
fn heat_p_dx(x: f64, y: f64, sigma: f64, d: usize) -> f64 {
    gaussian_derivative(x - y, sigma / 2.0, d, 0)
}

/// (d/dx)^p e^{-αx²} divided by e^{-αx²}.
pub(crate) fn gauss_poly(alpha: f64, x: f64, p: usize) -> f64 {
    let a = alpha;
    match p {
        0 => 1.0,
        1 => -2.0 * a * x,
        2 => 4.0 * a * a * x * x - 2.0 * a,
        3 => -8.0 * a.powi(3) * x.powi(3) + 12.0 * a * a * x,
        4 => 16.0 * a.powi(4) * x.powi(4) - 48.0 * a.powi(3) * x * x + 12.0 * a * a,
        _ => panic!("gauss_poly supports orders up to 4"),
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// n paths with given starts and ends observed at times in (0, 1).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathModel {
    pub starts: Vec<f64>,
    pub ends: Vec<f64>,
    pub taus: Vec<f64>,
}

impl PathModel {
    pub fn new(starts: Vec<f64>, ends: Vec<f64>, taus: Vec<f64>) -> Result<Self> {
        let model = PathModel { starts, ends, taus };
        model.validate()?;
        Ok(model)
    }

    /// All paths start at the origin.
    pub fn zero_start(ends: Vec<f64>, taus: Vec<f64>) -> Result<Self> {
        Self::new(vec![0.0; ends.len()], ends, taus)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.ends.len();
        if n == 0 {
            return Err(Error::domain("at least one path is required"));
        }
        if self.starts.len() != n {
            return Err(Error::domain("starts and ends must have the same length"));
        }
        if self.starts.iter().chain(&self.ends).any(|v| !v.is_finite()) {
            return Err(Error::domain("endpoints must be finite"));
        }
        for i in 0..n {
            for j in 0..i {
                if self.ends[i] == self.ends[j] {
                    return Err(Error::domain("end points must be pairwise distinct"));
                }
            }
        }
        TauGrid::new(self.taus.clone())?;
        if self.taus.iter().any(|&t| !(t > 0.0 && t < 1.0)) {
            return Err(Error::domain("times must lie in (0, 1)"));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.ends.len()
    }

    pub fn has_zero_starts(&self) -> bool {
        self.starts.iter().all(|&a| a == 0.0)
    }

    /// σ_k = τ_{k+1} - τ_k with τ_0 = 0 and τ_{m+1} = 1.
    pub fn sigmas(&self) -> Vec<f64> {
        let mut t = vec![0.0];
        t.extend(&self.taus);
        t.push(1.0);
        t.windows(2).map(|w| w[1] - w[0]).collect()
    }
}

/// The constant c multiplying the H formulas.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationConstant {
    pub c: f64,
}

impl NormalizationConstant {
    /// √(2π), which gives trace n/√2 with this heat kernel.
    pub const ROOT_TWO_PI: f64 = 2.506_628_274_631_000_7;

    /// √π, the value forced by the biorthogonality integral.
    pub fn standard() -> Self {
        NormalizationConstant { c: PI.sqrt() }
    }

    /// Fix c so that ∫K_kk(x,x)dx = n at time slice `k`.
    pub fn calibrate(model: &PathModel, k: usize) -> Result<Self> {
        let form = if model.has_zero_starts() { Form::ZeroStart(ZeroStartMethod::Sum) } else { Form::General };
        let unit = FiniteNKernel::with_constant(model.clone(), form, NormalizationConstant { c: 1.0 })?;
        let tr = unit.trace(k)?;
        if !(tr > 0.0) {
            return Err(Error::NonConvergence { context: "trace calibration".into(), residual: tr });
        }
        Ok(NormalizationConstant { c: model.n() as f64 / tr })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZeroStartMethod {
    /// Lagrange/Vandermonde finite sum.
    Sum,
    /// Double contour integral.
    Contour,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Form {
    /// Distinct starts, explicit solve with B = (e^{2 a_i b_j}).
    General,
    ZeroStart(ZeroStartMethod),
}

/// Finite-n extended kernel in one of its representations.
pub struct FiniteNKernel {
    model: PathModel,
    form: Form,
    c: f64,
    // n×n coefficient matrix W with H = c Σ P(x,b_i,1-τ_k) W_ij G_j(y)
    weights: DMatrix<f64>,
    contour: Option<ContourGeometry>,
}

impl FiniteNKernel {
    pub fn new(model: PathModel, form: Form) -> Result<Self> {
        Self::with_constant(model, form, NormalizationConstant::standard())
    }

    pub fn with_constant(model: PathModel, form: Form, c: NormalizationConstant) -> Result<Self> {
        model.validate()?;
        let n = model.n();
        let mut contour = None;
        let weights = match form {
            Form::General => general_weights(&model)?,
            Form::ZeroStart(method) => {
                if !model.has_zero_starts() {
                    return Err(Error::domain("zero-start kernel requires all starts at 0"));
                }
                if method == ZeroStartMethod::Sum && n > MAX_SUM_FORM_N {
                    return Err(Error::Conditioning { n, limit: MAX_SUM_FORM_N });
                }
                if method == ZeroStartMethod::Contour {
                    contour = Some(ContourGeometry::new(&model.ends, &model.taus));
                }
                lagrange_coefficients(&model.ends)
            }
        };
        Ok(FiniteNKernel { model, form, c: c.c, weights, contour })
    }

    pub fn model(&self) -> &PathModel {
        &self.model
    }

    pub fn h(&self, k: usize, l: usize, x: f64, y: f64, dx: usize, dy: usize) -> Result<f64> {
        let m = self.model.taus.len();
        if k >= m || l >= m {
            return Err(Error::domain("time index out of range"));
        }
        if dx > 3 || dy > 3 {
            return Err(Error::domain("derivative orders above 3 are not supported"));
        }
        let tk = self.model.taus[k];
        let tl = self.model.taus[l];
        let n = self.model.n();
        match self.form {
            Form::General => {
                let a = &self.model.starts;
                let b = &self.model.ends;
                let mut total = 0.0;
                for i in 0..n {
                    let px = heat_p_dx(x, b[i], 1.0 - tk, dx);
                    let mut inner = 0.0;
                    for j in 0..n {
                        inner += self.weights[(i, j)] * heat_p_dx(y, a[j], tl, dy);
                    }
                    total += px * inner;
                }
                Ok(self.c * total)
            }
            Form::ZeroStart(ZeroStartMethod::Sum) => {
                let b = &self.model.ends;
                let d: Vec<f64> = (0..n).map(|j| start_derivative(j, y, tl, dy) * 0.5f64.powi(j as i32)).collect();
                let mut total = 0.0;
                for i in 0..n {
                    let px = heat_p_dx(x, b[i], 1.0 - tk, dx) * (b[i] * b[i]).exp();
                    let inner: f64 = (0..n).map(|j| self.weights[(i, j)] * d[j]).sum();
                    total += px * inner;
                }
                Ok(self.c * total)
            }
            Form::ZeroStart(ZeroStartMethod::Contour) => {
                let geom = self.contour.as_ref().expect("contour geometry");
                // the contour representation carries its own constant; rescale to c
                Ok(self.c / PI.sqrt() * geom.h(&self.model, k, l, x, y, dx, dy))
            }
        }
    }

    pub fn e(&self, k: usize, l: usize, x: f64, y: f64, dx: usize, dy: usize) -> f64 {
        if k >= l {
            return 0.0;
        }
        let dt = self.model.taus[l] - self.model.taus[k];
        gaussian_derivative(x - y, dt / 2.0, dx, dy)
    }

    /// ∫ K_kk(x, x) dx, the expected number of paths at time τ_k.
    pub fn trace(&self, k: usize) -> Result<f64> {
        let tk = self.model.taus[k];
        let centres: Vec<f64> =
            self.model.starts.iter().zip(&self.model.ends).map(|(a, b)| (1.0 - tk) * a + tk * b).collect();
        let lo = centres.iter().cloned().fold(f64::INFINITY, f64::min) - 10.0;
        let hi = centres.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 10.0;
        let panels = ((hi - lo) / 0.5).ceil() as usize;
        let h = (hi - lo) / panels as f64;
        let mut acc = 0.0;
        for p in 0..panels {
            let (xs, ws) = gauss_interval(lo + h * p as f64, lo + h * (p + 1) as f64, 16);
            for (x, w) in xs.iter().zip(&ws) {
                acc += w * self.h(k, k, *x, *x, 0, 0)?;
            }
        }
        Ok(acc)
    }
}

impl MatrixKernel for FiniteNKernel {
    fn num_times(&self) -> usize {
        self.model.taus.len()
    }

    fn tau(&self, k: usize) -> f64 {
        self.model.taus[k]
    }

    fn entry(&self, i: usize, j: usize, x: f64, y: f64, dx: usize, dy: usize) -> Result<f64> {
        Ok(self.h(i, j, x, y, dx, dy)? - self.e(i, j, x, y, dx, dy))
    }
}

/// W = diag(e^{b²}) B^{-1} diag(e^{a²}) with B = (e^{2 a_i b_j}).
fn general_weights(model: &PathModel) -> Result<DMatrix<f64>> {
    let a = &model.starts;
    let b = &model.ends;
    let n = a.len();
    for i in 0..n {
        for j in 0..i {
            if (a[i] - a[j]).abs() < 1e-14 {
                return Err(Error::DegenerateStarts);
            }
        }
    }
    let bm = DMatrix::from_fn(n, n, |i, j| (2.0 * a[i] * b[j]).exp());
    let inv = bm.lu().try_inverse().ok_or(Error::DegenerateStarts)?;
    // inv is indexed (end, start)
    Ok(DMatrix::from_fn(n, n, |i, j| (b[i] * b[i]).exp() * inv[(i, j)] * (a[j] * a[j]).exp()))
}

/// Coefficients L with ℓ_i(z) = Σ_j L_ij z^j the Lagrange basis on `nodes`.
pub fn lagrange_coefficients(nodes: &[f64]) -> DMatrix<f64> {
    let n = nodes.len();
    let mut out = DMatrix::zeros(n, n);
    for i in 0..n {
        let mut poly = vec![1.0];
        let mut denom = 1.0;
        for (r, &br) in nodes.iter().enumerate() {
            if r == i {
                continue;
            }
            // poly *= (z - b_r)
            let mut next = vec![0.0; poly.len() + 1];
            for (d, &c) in poly.iter().enumerate() {
                next[d + 1] += c;
                next[d] -= br * c;
            }
            poly = next;
            denom *= nodes[i] - br;
        }
        for (j, c) in poly.iter().enumerate() {
            out[(i, j)] = c / denom;
        }
    }
    out
}

/// ∂y^dy ∂a^j [e^{a²} P(y, a, τ)] at a = 0, by Leibniz over Hermite derivatives.
fn start_derivative(j: usize, y: f64, tau: f64, dy: usize) -> f64 {
    let mut total = 0.0;
    for m in 0..=j {
        let k = j - m;
        if k % 2 == 1 {
            continue;
        }
        // ∂^k e^{a²} at 0 = k!/(k/2)!
        let even = (1..=k).map(|v| v as f64).product::<f64>() / (1..=k / 2).map(|v| v as f64).product::<f64>();
        let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
        total += binomial(j, m) * even * sign * gaussian_derivative(y, tau / 2.0, m + dy, 0);
    }
    total
}

/// Geometry for the double contour form with zero starts: an s line in
/// the widest gap between sorted ends and one counterclockwise circle
/// around each side cluster.
struct ContourGeometry {
    circles: Vec<(f64, f64, usize)>,
    line_re: f64,
    line_panel: f64,
    line_extent: Vec<f64>,
}

impl ContourGeometry {
    fn new(ends: &[f64], taus: &[f64]) -> Self {
        let mut b = ends.to_vec();
        b.sort_by(|p, q| p.partial_cmp(q).expect("finite ends"));
        let n = b.len();
        let (circles, line_re, gap) = if n == 1 {
            (vec![(b[0], 0.5, 256)], b[0] - 1.0, 2.0)
        } else {
            let (g, gap) =
                (0..n - 1)
                    .map(|i| (i, b[i + 1] - b[i]))
                    .fold((0, 0.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            let mut circles = Vec::new();
            for cluster in [&b[..=g], &b[g + 1..]] {
                let lo = cluster[0];
                let hi = cluster[cluster.len() - 1];
                let radius = (hi - lo) / 2.0 + gap / 4.0;
                // trapezoid error decays like ((radius - gap/4)/radius)^N
                let ratio = (radius - gap / 4.0) / radius;
                let nodes = if ratio <= 0.0 {
                    256
                } else {
                    ((40.0 * 10f64.ln() / -ratio.ln()).ceil() as usize).clamp(256, 1 << 15)
                };
                circles.push(((lo + hi) / 2.0, radius, nodes));
            }
            (circles, (b[g] + b[g + 1]) / 2.0, gap)
        };
        let line_panel = (gap / 4.0).min(0.5);
        // Gaussian decay e^{-κσ²} must beat the growth of Π(s - b) and the linear phase
        let bmax = b.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        let line_extent = taus
            .iter()
            .map(|&t| {
                let kappa = t / (1.0 - t);
                let mut sigma = 12.0f64;
                for _ in 0..8 {
                    let need = (45.0 + n as f64 * (1.0 + sigma + bmax).ln()) / kappa;
                    sigma = need.sqrt().max(12.0);
                }
                sigma
            })
            .collect();
        ContourGeometry { circles, line_re, line_panel, line_extent }
    }

    fn h(&self, model: &PathModel, k: usize, l: usize, x: f64, y: f64, dx: usize, dy: usize) -> f64 {
        let tk = model.taus[k];
        let tl = model.taus[l];
        let (kk, kl) = (tk / (1.0 - tk), tl / (1.0 - tl));
        let b = &model.ends;
        let prod = |z: C64| b.iter().fold(C64::new(1.0, 0.0), |acc, &br| acc * (z - br));

        let mut ts = Vec::new();
        let mut tw = Vec::new();
        for &(centre, radius, nodes) in &self.circles {
            for q in 0..nodes {
                let theta = 2.0 * PI * q as f64 / nodes as f64;
                let e = C64::from_polar(1.0, theta);
                ts.push(centre + radius * e);
                tw.push(C64::new(0.0, 2.0 * PI / nodes as f64) * radius * e);
            }
        }
        let extent = self.line_extent[l];
        let panels = (2.0 * extent / self.line_panel).ceil() as usize;
        let hp = 2.0 * extent / panels as f64;
        let mut ss = Vec::new();
        let mut sw = Vec::new();
        for p in 0..panels {
            let (sig, w) = gauss_interval(-extent + hp * p as f64, -extent + hp * (p + 1) as f64, 16);
            for (sg, wi) in sig.iter().zip(&w) {
                ss.push(C64::new(self.line_re, *sg));
                sw.push(C64::new(0.0, *wi));
            }
        }

        let ax = 1.0 / (1.0 - tk);
        let ay = -1.0 / (1.0 - tl);
        let mut total = 0.0;
        for m in 0..=dx {
            let gx: Vec<C64> = ts
                .iter()
                .zip(&tw)
                .map(|(&t, &w)| w * (-kk * t * t + 2.0 * x * t * ax).exp() / prod(t) * (2.0 * t * ax).powu(m as u32))
                .collect();
            for q in 0..=dy {
                let gy: Vec<C64> = ss
                    .iter()
                    .zip(&sw)
                    .map(|(&s, &w)| w * (kl * s * s + 2.0 * y * s * ay).exp() * prod(s) * (2.0 * s * ay).powu(q as u32))
                    .collect();
                let mut acc = C64::new(0.0, 0.0);
                for (&t, &ft) in ts.iter().zip(&gx) {
                    let mut inner = C64::new(0.0, 0.0);
                    for (&s, &gs) in ss.iter().zip(&gy) {
                        inner += gs / (s - t);
                    }
                    acc += ft * inner;
                }
                let coeff = binomial(dx, m) * binomial(dy, q) * gauss_poly(ax, x, dx - m) * gauss_poly(ay, y, dy - q);
                total += coeff * acc.re;
            }
        }
        let pre =
            -1.0 / (2.0 * PI * PI * ((1.0 - tk) * (1.0 - tl)).sqrt()) * (y * y / (1.0 - tl) - x * x / (1.0 - tk)).exp();
        pre * total
    }
}

/// Wrapper functions mirroring the kernel methods.
pub fn h_general_a(model: &PathModel, k: usize, l: usize, x: f64, y: f64) -> Result<f64> {
    FiniteNKernel::new(model.clone(), Form::General)?.h(k, l, x, y, 0, 0)
}

pub fn h_zero_start(model: &PathModel, k: usize, l: usize, x: f64, y: f64, method: ZeroStartMethod) -> Result<f64> {
    FiniteNKernel::new(model.clone(), Form::ZeroStart(method))?.h(k, l, x, y, 0, 0)
}

/// Joint density of the paths at the model times from the product of
/// transition determinants, normalised by the bridge determinant.
/// `config[k]` lists the n positions at time τ_k.
pub fn karlin_mcgregor_density(model: &PathModel, config: &[Vec<f64>]) -> Result<f64> {
    let n = model.n();
    let m = model.taus.len();
    if config.len() != m || config.iter().any(|c| c.len() != n) {
        return Err(Error::domain("configuration must list n points at each time"));
    }
    let sig = model.sigmas();
    let det = |f: &dyn Fn(usize, usize) -> f64| DMatrix::from_fn(n, n, f).determinant();
    let mut value;
    let norm;
    if model.has_zero_starts() {
        // confluent limit: rows become a-derivatives at 0
        let first = &config[0];
        value = det(&|i, j| gaussian_derivative(-first[j], sig[0] / 2.0, i, 0));
        norm = det(&|i, j| gaussian_derivative(-model.ends[j], 0.5, i, 0));
    } else {
        let first = &config[0];
        value = det(&|i, j| heat_p_dx(model.starts[i], first[j], sig[0], 0));
        norm = det(&|i, j| heat_p_dx(model.starts[i], model.ends[j], 1.0, 0));
    }
    for k in 0..m {
        let next: &[f64] = if k + 1 < m { &config[k + 1] } else { &model.ends };
        let cur = &config[k];
        value *= det(&|i, j| heat_p_dx(cur[i], next[j], sig[k + 1], 0));
    }
    Ok(value / norm)
}

/// The scaled kernel K_n for 2n paths ending at ±√n, with times
/// 1/2 + τ/√n and space scaled by n^{-1/4}.
pub struct ScaledKernel {
    n: f64,
    taus: TauGrid,
    split: Arc<CauchySplit>,
    left: Mutex<HashMap<FactorKey, Arc<Factor>>>,
    right: Mutex<HashMap<FactorKey, Arc<Factor>>>,
}

/// Rotation of the t rays toward the real axis used for the scaled kernel.
pub const SCALED_ROTATION: f64 = 0.2;

impl ScaledKernel {
    pub fn new(n: usize, taus: Vec<f64>) -> Result<Self> {
        Self::with_rule(n, taus, &RuleSettings::default())
    }

    pub fn with_rule(n: usize, taus: Vec<f64>, rule: &RuleSettings) -> Result<Self> {
        if n < 1 {
            return Err(Error::domain("n must be positive"));
        }
        let taus = TauGrid::new(taus)?;
        let rn = (n as f64).sqrt();
        if taus.taus().iter().any(|t| 2.0 * t.abs() >= rn) {
            return Err(Error::domain("scaled times must satisfy |τ| < √n / 2"));
        }
        let split = cached_split(ContourKind::pearcey(SCALED_ROTATION), rule, &SplitSettings::default())?;
        Ok(ScaledKernel { n: n as f64, taus, split, left: Mutex::default(), right: Mutex::default() })
    }

    fn c(&self, i: usize) -> f64 {
        1.0 - 2.0 * self.taus.taus()[i] / self.n.sqrt()
    }

    fn q(&self, i: usize) -> f64 {
        (1.0 + 2.0 * self.taus.taus()[i] / self.n.sqrt()) / self.c(i)
    }

    fn left_factor(&self, i: usize, x: f64, m: usize) -> Arc<Factor> {
        let key = (i, m, x.to_bits());
        if let Some(f) = self.left.lock().expect("factor cache poisoned").get(&key) {
            return f.clone();
        }
        let rn = self.n.sqrt();
        let (c, q, n) = (self.c(i), self.q(i), self.n);
        let vals: Vec<C64> = self
            .split
            .t_nodes()
            .iter()
            .map(|&t| {
                let t2 = t * t;
                let expo = -rn * q * t2 + 4.0 * x / c * t - n * (1.0 - t2 / rn).ln();
                expo.exp() * (4.0 * t / c).powu(m as u32)
            })
            .collect();
        let f = Arc::new(self.split.left_factor(&vals));
        insert_bounded(&self.left, key, f.clone());
        f
    }

    fn right_factor(&self, j: usize, y: f64, m: usize) -> Arc<Factor> {
        let key = (j, m, y.to_bits());
        if let Some(f) = self.right.lock().expect("factor cache poisoned").get(&key) {
            return f.clone();
        }
        let rn = self.n.sqrt();
        let (c, q, n) = (self.c(j), self.q(j), self.n);
        let vals: Vec<C64> = self
            .split
            .s_nodes()
            .iter()
            .map(|&s| {
                let s2 = s * s;
                let expo = rn * q * s2 - 4.0 * y / c * s + n * (1.0 - s2 / rn).ln();
                expo.exp() * (-4.0 * s / c).powu(m as u32)
            })
            .collect();
        let f = Arc::new(self.split.right_factor(&vals));
        insert_bounded(&self.right, key, f.clone());
        f
    }

    pub fn h(&self, i: usize, j: usize, x: f64, y: f64, dx: usize, dy: usize) -> Result<f64> {
        let m = self.taus.len();
        if i >= m || j >= m {
            return Err(Error::domain("time index out of range"));
        }
        if dx > 3 || dy > 3 {
            return Err(Error::domain("derivative orders above 3 are not supported"));
        }
        let rn = self.n.sqrt();
        let (ti, tj) = (self.taus.taus()[i], self.taus.taus()[j]);
        let ax = 2.0 / (rn - 2.0 * ti);
        let ay = -2.0 / (rn - 2.0 * tj);
        let mut total = 0.0;
        for p in 0..=dx {
            let l = self.left_factor(i, x, p);
            for q in 0..=dy {
                let r = self.right_factor(j, y, q);
                let (v, scale) = CauchySplit::contract(&l, &r);
                if v.im.abs() > 1e-10 * scale || !v.re.is_finite() {
                    return Err(Error::NonConvergence { context: "scaled kernel".into(), residual: v.im.abs() });
                }
                let coeff = binomial(dx, p) * binomial(dy, q) * gauss_poly(ax, x, dx - p) * gauss_poly(ay, y, dy - q);
                total += coeff * v.re;
            }
        }
        let pre = -1.0 / (PI * PI) / (self.c(i) * self.c(j)).sqrt() * (-ax * x * x - ay * y * y).exp();
        Ok(pre * total)
    }
}

impl MatrixKernel for ScaledKernel {
    fn num_times(&self) -> usize {
        self.taus.len()
    }

    fn tau(&self, k: usize) -> f64 {
        self.taus.taus()[k]
    }

    fn entry(&self, i: usize, j: usize, x: f64, y: f64, dx: usize, dy: usize) -> Result<f64> {
        let e = if i < j {
            let dt = self.taus.taus()[j] - self.taus.taus()[i];
            gaussian_derivative(x - y, dt / 2.0, dx, dy)
        } else {
            0.0
        };
        Ok(self.h(i, j, x, y, dx, dy)? - e)
    }
}

pub fn scaled_kernel(n: usize, taus: &[f64], i: usize, j: usize, x: f64, y: f64) -> Result<f64> {
    ScaledKernel::new(n, taus.to_vec())?.entry(i, j, x, y, 0, 0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub n: usize,
    pub sup_error: f64,
    pub sup_error_dx: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub rows: Vec<ConvergenceRow>,
    /// Least-squares slope of log error against log n.
    pub slope: f64,
    pub slope_dx: f64,
}

impl ConvergenceReport {
    pub fn strictly_decreasing(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].sup_error < w[0].sup_error && w[1].sup_error_dx < w[0].sup_error_dx)
    }
}

/// Sup-norm distance between H_n and its limit over a grid on box², for
/// every pair of times, with and without one x-derivative.
pub fn convergence_scan(n_list: &[usize], bounds: (f64, f64), taus: &[f64], grid: usize) -> Result<ConvergenceReport> {
    if !(bounds.0 < bounds.1) || !bounds.0.is_finite() || !bounds.1.is_finite() {
        return Err(Error::domain("box must be a bounded interval"));
    }
    if grid < 2 || n_list.is_empty() {
        return Err(Error::domain("need at least two grid points and one n"));
    }
    let pts: Vec<f64> = (0..grid).map(|g| bounds.0 + (bounds.1 - bounds.0) * g as f64 / (grid - 1) as f64).collect();
    let limit = PearceyKernel::new(KernelSpec::higher_order(taus.to_vec(), 1)?)?;
    let m = taus.len();
    let mut reference = Vec::new();
    for i in 0..m {
        for j in 0..m {
            for d in 0..2 {
                let blk = limit.block(i, &pts, d, j, &pts, 0)?;
                let e = DMatrix::from_fn(grid, grid, |a, b| limit.e(i, j, pts[a], pts[b], d, 0).unwrap_or(0.0));
                reference.push(blk + e);
            }
        }
    }
    let mut rows = Vec::new();
    for &n in n_list {
        let kern = ScaledKernel::new(n, taus.to_vec())?;
        let mut sup = [0.0f64; 2];
        let mut idx = 0;
        for i in 0..m {
            for j in 0..m {
                for (d, s) in sup.iter_mut().enumerate() {
                    for a in 0..grid {
                        for b in 0..grid {
                            let v = kern.h(i, j, pts[a], pts[b], d, 0)?;
                            *s = s.max((v - reference[idx][(a, b)]).abs());
                        }
                    }
                    idx += 1;
                }
            }
        }
        rows.push(ConvergenceRow { n, sup_error: sup[0], sup_error_dx: sup[1] });
    }
    let fit = |f: &dyn Fn(&ConvergenceRow) -> f64| {
        let xs: Vec<f64> = rows.iter().map(|r| (r.n as f64).ln()).collect();
        let ys: Vec<f64> = rows.iter().map(|r| f(r).ln()).collect();
        least_squares_slope(&xs, &ys)
    };
    let slope = fit(&|r| r.sup_error);
    let slope_dx = fit(&|r| r.sup_error_dx);
    Ok(ConvergenceReport { rows, slope, slope_dx })
}

fn least_squares_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let k = xs.len() as f64;
    if xs.len() < 2 {
        return f64::NAN;
    }
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}
