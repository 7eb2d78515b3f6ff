//! Endpoint unknowns of the gap-probability PDE system, finite-difference
//! checks of their differentials, and the resolvent commutator identities.
//!
//! Every check assumes the canonical kernel, whose φ and ψ satisfy
//! φ‴ − τφ′ + xφ = 0 and ψ‴ − τψ′ − yψ = 0.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fredholm::{Endpoint, NystromSystem, RegionFamily};
use crate::kernels::MatrixKernel;

/// Names of the nine differential relations in report order.
pub const EQUATIONS: [&str; 9] = ["dr", "dr_x", "dr_y", "dq", "dp", "dq'", "dp'", "dq''", "dp''"];

/// The unknowns at the endpoints ξ_kw plus the second-derivative
/// matrices that enter the right-hand sides.
#[derive(Clone, Debug)]
pub struct PdeState {
    pub endpoints: Vec<Endpoint>,
    pub xi: DVector<f64>,
    pub s: DVector<f64>,
    pub tau: DVector<f64>,
    pub q: DVector<f64>,
    pub q1: DVector<f64>,
    pub q2: DVector<f64>,
    pub p: DVector<f64>,
    pub p1: DVector<f64>,
    pub p2: DVector<f64>,
    pub r: DMatrix<f64>,
    pub r_x: DMatrix<f64>,
    pub r_y: DMatrix<f64>,
    pub r_xx: DMatrix<f64>,
    pub r_xy: DMatrix<f64>,
    pub r_yy: DMatrix<f64>,
}

impl PdeState {
    pub fn len(&self) -> usize {
        self.endpoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.endpoints.is_empty()
    }

    /// The nine unknown blocks, in `EQUATIONS` order, flattened.
    fn unknowns(&self) -> [Vec<f64>; 9] {
        let v = |m: &DMatrix<f64>| m.iter().copied().collect::<Vec<_>>();
        let c = |d: &DVector<f64>| d.iter().copied().collect::<Vec<_>>();
        [
            v(&self.r),
            v(&self.r_x),
            v(&self.r_y),
            c(&self.q),
            c(&self.p),
            c(&self.q1),
            c(&self.p1),
            c(&self.q2),
            c(&self.p2),
        ]
    }

    /// Right-hand sides of the nine relations for dξ = e_a.
    fn rhs(&self, a: usize) -> [Vec<f64>; 9] {
        let n = self.len();
        let s = &self.s;
        let e = |m: &DMatrix<f64>, row: bool| {
            // E·m keeps row a; m·E keeps column a
            DMatrix::from_fn(n, n, |i, j| {
                if row {
                    if i == a {
                        m[(a, j)]
                    } else {
                        0.0
                    }
                } else if j == a {
                    m[(i, a)]
                } else {
                    0.0
                }
            })
        };
        // (−A s E B)_{ij} = −A_{ia} s_a B_{aj}
        let sand = |x: &DMatrix<f64>, y: &DMatrix<f64>| DMatrix::from_fn(n, n, |i, j| -x[(i, a)] * s[a] * y[(a, j)]);
        let dr = sand(&self.r, &self.r) + e(&self.r_x, true) + e(&self.r_y, false);
        let drx = sand(&self.r_x, &self.r) + e(&self.r_xx, true) + e(&self.r_xy, false);
        let dry = sand(&self.r, &self.r_y) + e(&self.r_xy, true) + e(&self.r_yy, false);
        let unit = |v: f64| DVector::from_fn(n, |i, _| if i == a { v } else { 0.0 });
        let col_a = |m: &DMatrix<f64>| m.column(a).into_owned();
        let row_a = |m: &DMatrix<f64>| m.row(a).transpose();
        let dq = unit(self.q1[a]) - col_a(&self.r) * (s[a] * self.q[a]);
        let dp = unit(self.p1[a]) - row_a(&self.r) * (self.p[a] * s[a]);
        let dq1 = unit(self.q2[a]) - col_a(&self.r_x) * (s[a] * self.q[a]);
        let dp1 = unit(self.p2[a]) - row_a(&self.r_y) * (self.p[a] * s[a]);
        // Q‴ at ξ_a from the φ equation and the endpoint sums
        let sq = self.s.component_mul(&self.q);
        let sq1 = self.s.component_mul(&self.q1);
        let sq2 = self.s.component_mul(&self.q2);
        let tsq = self.tau.component_mul(&sq);
        let q3 = self.tau[a] * self.q1[a] - self.xi[a] * self.q[a] + (self.r.row(a) * &sq2)[0]
            - (self.r_y.row(a) * &sq1)[0]
            + (self.r_yy.row(a) * &sq)[0]
            - (self.r.row(a) * &tsq)[0];
        let dq2 = unit(q3) - col_a(&self.r_xx) * (s[a] * self.q[a]);
        let sp = self.s.component_mul(&self.p);
        let sp1 = self.s.component_mul(&self.p1);
        let sp2 = self.s.component_mul(&self.p2);
        let tsp = self.tau.component_mul(&sp);
        let p3 = self.p1[a] * self.tau[a] + self.p[a] * self.xi[a] + (sp2.transpose() * self.r.column(a))[0]
            - (sp1.transpose() * self.r_x.column(a))[0]
            + (sp.transpose() * self.r_xx.column(a))[0]
            - (tsp.transpose() * self.r.column(a))[0];
        let dp2 = unit(p3) - row_a(&self.r_yy) * (self.p[a] * s[a]);
        let v = |m: DMatrix<f64>| m.iter().copied().collect::<Vec<_>>();
        let c = |d: DVector<f64>| d.iter().copied().collect::<Vec<_>>();
        [v(dr), v(drx), v(dry), c(dq), c(dp), c(dq1), c(dp1), c(dq2), c(dp2)]
    }
}

fn require_canonical<K: MatrixKernel>(kernel: &K) -> Result<()> {
    if kernel.commutator_scale() != 1.0 {
        return Err(Error::domain("the PDE checks need the canonical kernel normalisation"));
    }
    Ok(())
}

/// Evaluate the unknowns at the endpoints of `regions`.
pub fn assemble_state<K: MatrixKernel>(
    kernel: &K,
    regions: &RegionFamily,
    nodes_per_interval: usize,
) -> Result<PdeState> {
    let sys = NystromSystem::discretize(kernel, regions.clone(), nodes_per_interval)?;
    state_from_system(&sys)
}

pub fn state_from_system<K: MatrixKernel>(sys: &NystromSystem<K>) -> Result<PdeState> {
    let endpoints = sys.regions().endpoints();
    let pts: Vec<(usize, f64)> = endpoints.iter().map(|e| (e.k, e.xi)).collect();
    let n = pts.len();
    let vec = |v: Vec<f64>| DVector::from_vec(v);
    let rb = |dx, dy| sys.resolvent_block(&pts, dx, &pts, dy);
    Ok(PdeState {
        xi: DVector::from_fn(n, |i, _| endpoints[i].xi),
        s: DVector::from_fn(n, |i, _| endpoints[i].sign()),
        tau: DVector::from_fn(n, |i, _| sys.kernel().tau(endpoints[i].k)),
        q: vec(sys.q_values(&pts, 0)?),
        q1: vec(sys.q_values(&pts, 1)?),
        q2: vec(sys.q_values(&pts, 2)?),
        p: vec(sys.p_values(&pts, 0)?),
        p1: vec(sys.p_values(&pts, 1)?),
        p2: vec(sys.p_values(&pts, 2)?),
        r: rb(0, 0)?,
        r_x: rb(1, 0)?,
        r_y: rb(0, 1)?,
        r_xx: rb(2, 0)?,
        r_xy: rb(1, 1)?,
        r_yy: rb(0, 2)?,
        endpoints,
    })
}

/// Largest residual of each relation at step h and after one Richardson step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DifferentialReport {
    pub h: f64,
    pub residual: [f64; 9],
    pub richardson: [f64; 9],
}

impl DifferentialReport {
    pub fn max_residual(&self) -> f64 {
        self.residual.iter().cloned().fold(0.0, f64::max)
    }

    pub fn max_richardson(&self) -> f64 {
        self.richardson.iter().cloned().fold(0.0, f64::max)
    }

    /// Every residual below `tol` and none grown by the extrapolation.
    pub fn passes(&self, tol: f64) -> bool {
        self.residual.iter().zip(&self.richardson).all(|(r, e)| *r < tol && *e <= r.max(tol * 1e-2))
    }
}

/// Move each endpoint by ±h and ±h/2, difference the unknowns and compare
/// with the right-hand sides of the nine relations.
pub fn differential_residuals<K: MatrixKernel>(
    kernel: &K,
    regions: &RegionFamily,
    h: f64,
    nodes_per_interval: usize,
) -> Result<DifferentialReport> {
    if !(1e-6..=1e-2).contains(&h) {
        return Err(Error::domain("h must lie in [1e-6, 1e-2]"));
    }
    require_canonical(kernel)?;
    let base = assemble_state(kernel, regions, nodes_per_interval)?;
    let mut residual = [0.0f64; 9];
    let mut richardson = [0.0f64; 9];
    for (a, e) in base.endpoints.iter().enumerate() {
        let shifted = |d: f64| -> Result<[Vec<f64>; 9]> {
            let r = regions.with_endpoint(e.k, e.w, e.xi + d)?;
            Ok(assemble_state(kernel, &r, nodes_per_interval)?.unknowns())
        };
        let (p1, m1) = (shifted(h)?, shifted(-h)?);
        let (p2, m2) = (shifted(h / 2.0)?, shifted(-h / 2.0)?);
        let rhs = base.rhs(a);
        for eq in 0..9 {
            for c in 0..rhs[eq].len() {
                let d1 = (p1[eq][c] - m1[eq][c]) / (2.0 * h);
                let d2 = (p2[eq][c] - m2[eq][c]) / h;
                let extrap = (4.0 * d2 - d1) / 3.0;
                residual[eq] = residual[eq].max((d1 - rhs[eq][c]).abs());
                richardson[eq] = richardson[eq].max((extrap - rhs[eq][c]).abs());
            }
        }
    }
    Ok(DifferentialReport { h, residual, richardson })
}

/// Maximum residuals of the resolvent identities over the probe pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClosureReport {
    /// R_x + R_y = −QP + RδR
    pub first_order: f64,
    /// R_xx + R_xy = −Q′P + R_xδR and R_xy + R_yy = −QP′ + RδR_y
    pub second_order: f64,
    /// ∂x³R + ∂y³R = −Q″P + Q′P′ − QP″ + δ-sums
    pub third_order: f64,
    /// [D³ − τD + M, R] = R(DδD + D²δ + δD²)R − RτδR
    pub full_third_order: f64,
    /// [τD − M, R] in the grouped form, the difference of the two above
    pub grouped: f64,
    /// x-derivative of the grouped form: τ_iR_xx + τ_jR_xy in terms of Q, P, R
    pub known_combination: f64,
    /// R_xx recovered from the two combinations at endpoint pairs on distinct times
    pub off_diagonal_rxx: f64,
}

impl ClosureReport {
    pub fn passes(&self) -> bool {
        self.first_order < 1e-7
            && self.second_order < 1e-5
            && self.third_order < 1e-5
            && self.full_third_order < 1e-5
            && self.grouped < 1e-5
            && self.known_combination < 1e-5
            && self.off_diagonal_rxx < 1e-5
    }
}

/// Evaluate the commutator identities at all pairs drawn from the
/// endpoints and the given extra probe points.
pub fn closure_identities<K: MatrixKernel>(
    kernel: &K,
    regions: &RegionFamily,
    probes: &[(usize, f64)],
    nodes_per_interval: usize,
) -> Result<ClosureReport> {
    require_canonical(kernel)?;
    let sys = NystromSystem::discretize(kernel, regions.clone(), nodes_per_interval)?;
    let eps = regions.endpoints();
    let ends: Vec<(usize, f64)> = eps.iter().map(|e| (e.k, e.xi)).collect();
    let mut pts: Vec<(usize, f64)> = ends.clone();
    pts.extend_from_slice(probes);
    let np = pts.len();
    let ne = ends.len();

    let full = |dx, dy| sys.resolvent_block(&pts, dx, &pts, dy);
    let to_end = |dx, dy| sys.resolvent_block(&pts, dx, &ends, dy);
    let from_end = |dx, dy| sys.resolvent_block(&ends, dx, &pts, dy);
    let (r00, r10, r01) = (full(0, 0)?, full(1, 0)?, full(0, 1)?);
    let (r20, r11, r02) = (full(2, 0)?, full(1, 1)?, full(0, 2)?);
    let (r30, r03) = (full(3, 0)?, full(0, 3)?);
    // x-side factors A(x, ξ) and y-side factors B(ξ, y)
    let a = |dx, dy| to_end(dx, dy);
    let (a00, a10, a01, a20, a02, a11) = (a(0, 0)?, a(1, 0)?, a(0, 1)?, a(2, 0)?, a(0, 2)?, a(1, 1)?);
    let (a30, a12) = (a(3, 0)?, a(1, 2)?);
    let (b00, b10, b01, b20, b02) =
        (from_end(0, 0)?, from_end(1, 0)?, from_end(0, 1)?, from_end(2, 0)?, from_end(0, 2)?);
    let q: Vec<Vec<f64>> = (0..4).map(|d| sys.q_values(&pts, d)).collect::<Result<_>>()?;
    let p: Vec<Vec<f64>> = (0..3).map(|d| sys.p_values(&pts, d)).collect::<Result<_>>()?;
    let tau = |k: usize| kernel.tau(k);

    // Σ_e s_e A(x, ξ_e) w_e B(ξ_e, y)
    let dsum = |x: usize, y: usize, terms: &[(&DMatrix<f64>, &DMatrix<f64>, bool)]| {
        let mut acc = 0.0;
        for (e, ep) in eps.iter().enumerate() {
            let tk = tau(ep.k);
            for (lhs, rhs, weighted) in terms {
                let w = if *weighted { tk } else { 1.0 };
                acc += ep.sign() * w * lhs[(x, e)] * rhs[(e, y)];
            }
        }
        acc
    };
    let neg = |m: &DMatrix<f64>| -m;
    let (n_a01, n_a10, n_a02, n_a00, n_a20, n_a12) = (neg(&a01), neg(&a10), neg(&a02), neg(&a00), neg(&a20), neg(&a12));

    let mut report = ClosureReport {
        first_order: 0.0,
        second_order: 0.0,
        third_order: 0.0,
        full_third_order: 0.0,
        grouped: 0.0,
        known_combination: 0.0,
        off_diagonal_rxx: 0.0,
    };
    for x in 0..np {
        for y in 0..np {
            let (ti, tj) = (tau(pts[x].0), tau(pts[y].0));
            let dxy = pts[x].1 - pts[y].1;
            let qp = |dq: usize, dp: usize| q[dq][x] * p[dp][y];

            let a_res = r10[(x, y)] + r01[(x, y)] + qp(0, 0) - dsum(x, y, &[(&a00, &b00, false)]);
            let b1 = r20[(x, y)] + r11[(x, y)] + qp(1, 0) - dsum(x, y, &[(&a10, &b00, false)]);
            let b2 = r11[(x, y)] + r02[(x, y)] + qp(0, 1) - dsum(x, y, &[(&a00, &b01, false)]);
            let c_sum = dsum(x, y, &[(&a20, &b00, false), (&n_a10, &b01, false), (&a00, &b02, false)]);
            let c_res = r30[(x, y)] + r03[(x, y)] + qp(2, 0) - qp(1, 1) + qp(0, 2) - c_sum;
            let d_sum =
                dsum(x, y, &[(&n_a01, &b10, false), (&a02, &b00, false), (&a00, &b20, false), (&n_a00, &b00, true)]);
            let d_lhs = r30[(x, y)] + r03[(x, y)] - ti * r10[(x, y)] - tj * r01[(x, y)] + dxy * r00[(x, y)];
            let d_res = d_lhs - d_sum;
            // [τD − M, R] = (c) − (d)
            let g_lhs = ti * r10[(x, y)] + tj * r01[(x, y)] - dxy * r00[(x, y)];
            let g_sum = dsum(
                x,
                y,
                &[
                    (&a20, &b00, false),
                    (&n_a10, &b01, false),
                    (&a00, &b02, false),
                    (&a01, &b10, false),
                    (&n_a02, &b00, false),
                    (&n_a00, &b20, false),
                    (&a00, &b00, true),
                ],
            );
            let g_res = g_lhs - (-qp(2, 0) + qp(1, 1) - qp(0, 2) + g_sum);
            // ∂x of the grouped identity
            let e_lhs = ti * r20[(x, y)] + tj * r11[(x, y)] - r00[(x, y)] - dxy * r10[(x, y)];
            let e_sum = dsum(
                x,
                y,
                &[
                    (&a30, &b00, false),
                    (&n_a20, &b01, false),
                    (&a10, &b02, false),
                    (&a11, &b10, false),
                    (&n_a12, &b00, false),
                    (&n_a10, &b20, false),
                    (&a10, &b00, true),
                ],
            );
            let e_rhs = -q[3][x] * p[0][y] + qp(2, 1) - qp(1, 2) + e_sum;
            let e_res = e_lhs - e_rhs;

            report.first_order = report.first_order.max(a_res.abs());
            report.second_order = report.second_order.max(b1.abs()).max(b2.abs());
            report.third_order = report.third_order.max(c_res.abs());
            report.full_third_order = report.full_third_order.max(d_res.abs());
            report.grouped = report.grouped.max(g_res.abs());
            report.known_combination = report.known_combination.max(e_res.abs());

            if x < ne && y < ne && pts[x].0 != pts[y].0 {
                // R_xx + R_xy = k1 and τ_iR_xx + τ_jR_xy = k2 fix R_xx when τ_i ≠ τ_j
                let k1 = -qp(1, 0) + dsum(x, y, &[(&a10, &b00, false)]);
                let k2 = e_rhs + r00[(x, y)] + dxy * r10[(x, y)];
                let rxx = (k2 - tj * k1) / (ti - tj);
                report.off_diagonal_rxx = report.off_diagonal_rxx.max((rxx - r20[(x, y)]).abs());
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{KernelSpec, PearceyKernel, Transposed};

    fn pearcey(taus: Vec<f64>) -> PearceyKernel {
        PearceyKernel::new(KernelSpec::pearcey(taus).unwrap()).unwrap()
    }

    #[test]
    fn state_shape_and_signs() {
        let k = pearcey(vec![0.0]);
        let st = assemble_state(&k, &RegionFamily::intervals(&[[-1.0, 1.0]]).unwrap(), 24).unwrap();
        assert_eq!(st.len(), 2);
        assert_eq!(st.s.as_slice(), &[1.0, -1.0]);
        assert_eq!(st.r.shape(), (2, 2));
        let empty = assemble_state(&k, &RegionFamily::empty(1), 24).unwrap();
        assert!(empty.is_empty());
    }

    #[test]
    fn shrinking_interval_recovers_kernel() {
        let k = pearcey(vec![0.0]);
        let mut errs = Vec::new();
        for d in [1e-2, 1e-3] {
            let st = assemble_state(&k, &RegionFamily::intervals(&[[-d, d]]).unwrap(), 8).unwrap();
            let want = k.entry(0, 0, -d, d, 0, 0).unwrap();
            errs.push((st.r[(0, 1)] - want).abs());
        }
        assert!(errs[1] < errs[0] / 5.0 && errs[1] < 1e-2, "{errs:?}");
    }

    #[test]
    fn p_vectors_are_transposed_q_vectors() {
        let k = pearcey(vec![-0.3, 0.4]);
        let r = RegionFamily::intervals(&[[-1.0, 0.5], [0.0, 1.0]]).unwrap();
        let st = assemble_state(&k, &r, 24).unwrap();
        let tr = assemble_state(&Transposed(&k), &r, 24).unwrap();
        assert!((&st.p - &tr.q).amax() < 1e-9);
        assert!((&st.p2 - &tr.q2).amax() < 1e-9);
        assert!((&st.r_x - tr.r_y.transpose()).amax() < 1e-9);
    }

    #[test]
    fn differential_system_one_interval() {
        let k = pearcey(vec![0.0]);
        let r = RegionFamily::intervals(&[[-1.0, 1.0]]).unwrap();
        let rep = differential_residuals(&k, &r, 1e-3, 24).unwrap();
        assert!(rep.passes(5e-5), "{rep:?}");
    }

    #[test]
    fn step_size_is_validated() {
        let k = pearcey(vec![0.0]);
        let r = RegionFamily::intervals(&[[-1.0, 1.0]]).unwrap();
        assert!(differential_residuals(&k, &r, 0.5, 24).is_err());
        let scaled = PearceyKernel::new(KernelSpec::higher_order(vec![0.0], 1).unwrap()).unwrap();
        assert!(differential_residuals(&scaled, &r, 1e-3, 24).is_err());
    }

    #[test]
    fn empty_regions_have_no_residuals() {
        let k = pearcey(vec![0.0]);
        let rep = differential_residuals(&k, &RegionFamily::empty(1), 1e-3, 24).unwrap();
        assert_eq!(rep.max_residual(), 0.0);
    }

    #[test]
    fn closure_identities_one_time() {
        let k = pearcey(vec![0.0]);
        let r = RegionFamily::intervals(&[[-1.0, 1.0]]).unwrap();
        let probes = [(0, -0.63), (0, 0.21), (0, 1.4), (0, -1.7), (0, 0.05)];
        let rep = closure_identities(&k, &r, &probes, 32).unwrap();
        assert!(rep.passes(), "{rep:?}");
    }

    #[test]
    fn closure_identities_two_times() {
        let k = pearcey(vec![-0.3, 0.4]);
        let r = RegionFamily::intervals(&[[-1.0, 0.5], [0.0, 1.0]]).unwrap();
        let probes = [(0, -0.63), (1, 0.21), (1, 1.4), (0, 0.8)];
        let rep = closure_identities(&k, &r, &probes, 32).unwrap();
        assert!(rep.passes(), "{rep:?}");
        assert!(rep.off_diagonal_rxx < 1e-8);
    }
}
