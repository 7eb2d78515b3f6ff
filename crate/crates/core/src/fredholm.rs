//! Nyström discretisation of I - Kχ on unions of intervals: gap
//! probabilities, the resolvent R = (I - Kχ)^{-1} K and the Q, P vectors.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gauss::gauss_interval;
use crate::kernels::MatrixKernel;

/// One endpoint ξ_kw of the region family. `w` counts from 0, so the
/// sign (−1)^{w+1} of the 1-based convention is +1 for left endpoints.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Endpoint {
    pub k: usize,
    pub w: usize,
    pub xi: f64,
}

impl Endpoint {
    pub fn sign(&self) -> f64 {
        if self.w.is_multiple_of(2) {
            1.0
        } else {
            -1.0
        }
    }
}

/// The sets X_1..X_m, each a union of intervals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<[f64; 2]>>", into = "Vec<Vec<[f64; 2]>>")]
pub struct RegionFamily {
    sets: Vec<Vec<[f64; 2]>>,
}

impl TryFrom<Vec<Vec<[f64; 2]>>> for RegionFamily {
    type Error = Error;

    fn try_from(sets: Vec<Vec<[f64; 2]>>) -> Result<Self> {
        RegionFamily::new(sets)
    }
}

impl From<RegionFamily> for Vec<Vec<[f64; 2]>> {
    fn from(r: RegionFamily) -> Self {
        r.sets
    }
}

impl RegionFamily {
    /// Intervals in each slice must be ordered and non-overlapping;
    /// neighbouring intervals may share an endpoint.
    pub fn new(sets: Vec<Vec<[f64; 2]>>) -> Result<Self> {
        for (k, set) in sets.iter().enumerate() {
            let mut prev = f64::NEG_INFINITY;
            for iv in set {
                if !iv[0].is_finite() || !iv[1].is_finite() {
                    return Err(Error::domain(format!("slice {k}: intervals must be bounded")));
                }
                if !(iv[0] < iv[1]) {
                    return Err(Error::domain(format!("slice {k}: interval [{}, {}] is empty", iv[0], iv[1])));
                }
                if iv[0] < prev {
                    return Err(Error::domain(format!("slice {k}: intervals overlap or are out of order")));
                }
                prev = iv[1];
            }
        }
        Ok(RegionFamily { sets })
    }

    pub fn empty(m: usize) -> Self {
        RegionFamily { sets: vec![Vec::new(); m] }
    }

    /// One interval per slice.
    pub fn intervals(bounds: &[[f64; 2]]) -> Result<Self> {
        Self::new(bounds.iter().map(|b| vec![*b]).collect())
    }

    pub fn num_times(&self) -> usize {
        self.sets.len()
    }

    pub fn slice(&self, k: usize) -> &[[f64; 2]] {
        &self.sets[k]
    }

    pub fn is_empty(&self) -> bool {
        self.sets.iter().all(|s| s.is_empty())
    }

    /// Endpoints in slice order, then in increasing position.
    pub fn endpoints(&self) -> Vec<Endpoint> {
        let mut out = Vec::new();
        for (k, set) in self.sets.iter().enumerate() {
            for (v, iv) in set.iter().enumerate() {
                out.push(Endpoint { k, w: 2 * v, xi: iv[0] });
                out.push(Endpoint { k, w: 2 * v + 1, xi: iv[1] });
            }
        }
        out
    }

    /// A copy with ξ_kw moved to `value`.
    pub fn with_endpoint(&self, k: usize, w: usize, value: f64) -> Result<Self> {
        let mut sets = self.sets.clone();
        let iv = sets
            .get_mut(k)
            .and_then(|s| s.get_mut(w / 2))
            .ok_or_else(|| Error::domain(format!("no endpoint ({k}, {w})")))?;
        iv[w % 2] = value;
        Self::new(sets)
    }

    /// Every interval split in two at its midpoint.
    pub fn bisected(&self) -> Self {
        let sets = self
            .sets
            .iter()
            .map(|set| {
                set.iter()
                    .flat_map(|iv| {
                        let mid = 0.5 * (iv[0] + iv[1]);
                        [[iv[0], mid], [mid, iv[1]]]
                    })
                    .collect()
            })
            .collect();
        RegionFamily { sets }
    }
}

#[derive(Clone, Debug)]
struct Slice {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    offset: usize,
}

/// Block Nyström system for I - Kχ with M_ab = K(u_a, u_b) w_b.
pub struct NystromSystem<K> {
    kernel: K,
    regions: RegionFamily,
    slices: Vec<Slice>,
    dim: usize,
    inverse: DMatrix<f64>,
    det: f64,
}

/// Smallest |det(I - M)| accepted before the system is declared singular.
const SINGULAR_DET: f64 = 1e-300;

impl<K: MatrixKernel> NystromSystem<K> {
    pub fn discretize(kernel: K, regions: RegionFamily, nodes_per_interval: usize) -> Result<Self> {
        if nodes_per_interval < 4 {
            return Err(Error::domain("nodes_per_interval must be at least 4"));
        }
        if regions.num_times() != kernel.num_times() {
            return Err(Error::domain(format!(
                "region family has {} slices but the kernel has {} times",
                regions.num_times(),
                kernel.num_times()
            )));
        }
        let mut slices = Vec::new();
        let mut offset = 0;
        for set in &regions.sets {
            let mut nodes = Vec::new();
            let mut weights = Vec::new();
            for iv in set {
                let (x, w) = gauss_interval(iv[0], iv[1], nodes_per_interval);
                nodes.extend(x);
                weights.extend(w);
            }
            let len = nodes.len();
            slices.push(Slice { nodes, weights, offset });
            offset += len;
        }
        let dim = offset;
        if dim == 0 {
            return Ok(NystromSystem { kernel, regions, slices, dim, inverse: DMatrix::zeros(0, 0), det: 1.0 });
        }
        let mut a = DMatrix::<f64>::identity(dim, dim);
        for (i, si) in slices.iter().enumerate() {
            if si.nodes.is_empty() {
                continue;
            }
            for (j, sj) in slices.iter().enumerate() {
                if sj.nodes.is_empty() {
                    continue;
                }
                let blk = kernel.block(i, &si.nodes, 0, j, &sj.nodes, 0)?;
                for b in 0..sj.nodes.len() {
                    for r in 0..si.nodes.len() {
                        a[(si.offset + r, sj.offset + b)] -= blk[(r, b)] * sj.weights[b];
                    }
                }
            }
        }
        let lu = a.lu();
        let det = lu.determinant();
        if !det.is_finite() || det.abs() < SINGULAR_DET {
            return Err(Error::Singular(format!("det(I - Kχ) = {det:e}")));
        }
        let inverse = lu.try_inverse().ok_or_else(|| Error::Singular("LU inverse failed".into()))?;
        Ok(NystromSystem { kernel, regions, slices, dim, inverse, det })
    }

    pub fn kernel(&self) -> &K {
        &self.kernel
    }

    pub fn regions(&self) -> &RegionFamily {
        &self.regions
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nodes(&self, k: usize) -> (&[f64], &[f64]) {
        (&self.slices[k].nodes, &self.slices[k].weights)
    }

    /// det(I - Kχ) as computed, without range checks.
    pub fn determinant(&self) -> f64 {
        self.det
    }

    /// det(I - Kχ), rejected if it leaves [-1e-8, 1 + 1e-8].
    pub fn gap_probability(&self) -> Result<f64> {
        let d = self.det;
        if !(-1e-8..=1.0 + 1e-8).contains(&d) {
            return Err(Error::OutOfRange { value: d });
        }
        Ok(d)
    }

    /// [∂x^dx K_{i l}(x_p, u_b) w_b] over all nodes b.
    fn left_rows(&self, points: &[(usize, f64)], dx: usize) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(points.len(), self.dim);
        for (l, sl) in self.slices.iter().enumerate() {
            if sl.nodes.is_empty() {
                continue;
            }
            for (i, idx, xs) in group_by_time(points) {
                let blk = self.kernel.block(i, &xs, dx, l, &sl.nodes, 0)?;
                for (r, &p) in idx.iter().enumerate() {
                    for b in 0..sl.nodes.len() {
                        out[(p, sl.offset + b)] = blk[(r, b)] * sl.weights[b];
                    }
                }
            }
        }
        Ok(out)
    }

    /// [∂y^dy K_{l j}(u_a, y_p)] over all nodes a.
    fn right_cols(&self, points: &[(usize, f64)], dy: usize) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(self.dim, points.len());
        for (l, sl) in self.slices.iter().enumerate() {
            if sl.nodes.is_empty() {
                continue;
            }
            for (j, idx, ys) in group_by_time(points) {
                let blk = self.kernel.block(l, &sl.nodes, 0, j, &ys, dy)?;
                for (c, &p) in idx.iter().enumerate() {
                    for a in 0..sl.nodes.len() {
                        out[(sl.offset + a, p)] = blk[(a, c)];
                    }
                }
            }
        }
        Ok(out)
    }

    fn direct_block(&self, xs: &[(usize, f64)], dx: usize, ys: &[(usize, f64)], dy: usize) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(xs.len(), ys.len());
        for (i, ridx, xv) in group_by_time(xs) {
            for (j, cidx, yv) in group_by_time(ys) {
                let blk = self.kernel.block(i, &xv, dx, j, &yv, dy)?;
                for (r, &p) in ridx.iter().enumerate() {
                    for (c, &q) in cidx.iter().enumerate() {
                        out[(p, q)] = blk[(r, c)];
                    }
                }
            }
        }
        Ok(out)
    }

    /// ∂x^dx ∂y^dy R_{ij}(x, y) for every pair of points (i, x) × (j, y).
    pub fn resolvent_block(
        &self,
        xs: &[(usize, f64)],
        dx: usize,
        ys: &[(usize, f64)],
        dy: usize,
    ) -> Result<DMatrix<f64>> {
        let direct = self.direct_block(xs, dx, ys, dy)?;
        if self.dim == 0 {
            return Ok(direct);
        }
        let left = self.left_rows(xs, dx)?;
        let right = self.right_cols(ys, dy)?;
        Ok(direct + left * (&self.inverse * right))
    }

    pub fn resolvent(&self, i: usize, x: f64, j: usize, y: f64, dx: usize, dy: usize) -> Result<f64> {
        Ok(self.resolvent_block(&[(i, x)], dx, &[(j, y)], dy)?[(0, 0)])
    }

    fn phi_nodes(&self, deriv: usize) -> Result<Vec<f64>> {
        let mut v = vec![0.0; self.dim];
        for (k, s) in self.slices.iter().enumerate() {
            for (a, &u) in s.nodes.iter().enumerate() {
                v[s.offset + a] = self.kernel.phi(k, u, deriv)?;
            }
        }
        Ok(v)
    }

    fn psi_nodes(&self) -> Result<Vec<f64>> {
        let mut v = vec![0.0; self.dim];
        for (k, s) in self.slices.iter().enumerate() {
            for (a, &u) in s.nodes.iter().enumerate() {
                v[s.offset + a] = self.kernel.psi(k, u, 0)? * s.weights[a];
            }
        }
        Ok(v)
    }

    /// Q^{(deriv)}_i(x) at each point, Q = (I - Kχ)^{-1} φ.
    pub fn q_values(&self, points: &[(usize, f64)], deriv: usize) -> Result<Vec<f64>> {
        let mut out: Vec<f64> = points.iter().map(|&(i, x)| self.kernel.phi(i, x, deriv)).collect::<Result<_>>()?;
        if self.dim > 0 {
            let qn = &self.inverse * nalgebra::DVector::from_vec(self.phi_nodes(0)?);
            let corr = self.left_rows(points, deriv)? * qn;
            for (o, c) in out.iter_mut().zip(corr.iter()) {
                *o += c;
            }
        }
        Ok(out)
    }

    /// P^{(deriv)}_j(y) at each point, P = ψ (I - χK)^{-1}.
    pub fn p_values(&self, points: &[(usize, f64)], deriv: usize) -> Result<Vec<f64>> {
        let mut out: Vec<f64> = points.iter().map(|&(j, y)| self.kernel.psi(j, y, deriv)).collect::<Result<_>>()?;
        if self.dim > 0 {
            let row = nalgebra::DVector::from_vec(self.psi_nodes()?).transpose() * &self.inverse;
            let corr = row * self.right_cols(points, deriv)?;
            for (o, c) in out.iter_mut().zip(corr.iter()) {
                *o += c;
            }
        }
        Ok(out)
    }

    pub fn qp_vectors(&self, i: usize, x: f64, deriv: usize) -> Result<(f64, f64)> {
        Ok((self.q_values(&[(i, x)], deriv)?[0], self.p_values(&[(i, x)], deriv)?[0]))
    }

    /// ∂ log det(I - Kχ) / ∂ξ_kw = (−1)^{w+1} R_kk(ξ_kw, ξ_kw) for every endpoint.
    pub fn log_det_gradient(&self) -> Result<Vec<(Endpoint, f64)>> {
        let eps = self.regions.endpoints();
        let pts: Vec<(usize, f64)> = eps.iter().map(|e| (e.k, e.xi)).collect();
        let r = self.resolvent_block(&pts, 0, &pts, 0)?;
        Ok(eps.iter().enumerate().map(|(a, e)| (*e, e.sign() * r[(a, a)])).collect())
    }
}

/// Points grouped by time index, keeping their original positions.
fn group_by_time(points: &[(usize, f64)]) -> Vec<(usize, Vec<usize>, Vec<f64>)> {
    let mut groups: Vec<(usize, Vec<usize>, Vec<f64>)> = Vec::new();
    for (p, &(k, x)) in points.iter().enumerate() {
        match groups.iter_mut().find(|g| g.0 == k) {
            Some(g) => {
                g.1.push(p);
                g.2.push(x);
            }
            None => groups.push((k, vec![p], vec![x])),
        }
    }
    groups
}

/// det(I - Kχ) for the given regions.
pub fn gap_probability<K: MatrixKernel>(kernel: K, regions: &RegionFamily, nodes_per_interval: usize) -> Result<f64> {
    NystromSystem::discretize(kernel, regions.clone(), nodes_per_interval)?.gap_probability()
}

/// Central-difference estimate of ∂ log det(I - Kχ) / ∂ξ_kw.
pub fn log_det_derivative_fd<K: MatrixKernel>(
    kernel: &K,
    regions: &RegionFamily,
    endpoint: &Endpoint,
    h: f64,
    nodes_per_interval: usize,
) -> Result<f64> {
    let det_at = |v: f64| -> Result<f64> {
        let r = regions.with_endpoint(endpoint.k, endpoint.w, v)?;
        Ok(NystromSystem::discretize(kernel, r, nodes_per_interval)?.determinant())
    };
    let plus = det_at(endpoint.xi + h)?;
    let minus = det_at(endpoint.xi - h)?;
    Ok((plus.ln() - minus.ln()) / (2.0 * h))
}

/// det(K_{k_a k_b}(x_a, x_b)) over a list of (time index, position) points.
pub fn correlation_density<K: MatrixKernel + ?Sized>(kernel: &K, points: &[(usize, f64)]) -> Result<f64> {
    let p = points.len();
    let mut mat = DMatrix::zeros(p, p);
    for (a, &(ka, xa)) in points.iter().enumerate() {
        for (b, &(kb, xb)) in points.iter().enumerate() {
            mat[(a, b)] = kernel.entry(ka, kb, xa, xb, 0, 0)?;
        }
    }
    Ok(mat.determinant())
}
