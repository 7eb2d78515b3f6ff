//! Endpoint data for the order-R model: the roots a_r of
//! a^R − a^{R−1} + a^{R−2}/2! − … + (−1)^R/R! = 0 and the finite-n product factor.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::contours::C64;
use crate::error::{Error, Result};
use crate::special::factorial;

pub const MAX_ORDER: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RootSystem {
    pub order_r: usize,
    pub roots: Vec<C64>,
    /// Scaling exponent R/(R+1).
    pub delta: f64,
}

impl RootSystem {
    pub fn power_sum(&self, k: u32) -> C64 {
        self.roots.iter().map(|a| a.powu(k)).sum()
    }

    /// Largest deviation of p_1..p_{R+1} from (1, 0, …, 0, (−1)^{R+1}/R!).
    pub fn invariant_residual(&self) -> f64 {
        let r = self.order_r;
        (1..=r as u32 + 1)
            .map(|k| {
                let want = if k as usize == r + 1 {
                    sign(r + 1) / factorial(r)
                } else if k == 1 {
                    1.0
                } else {
                    0.0
                };
                (self.power_sum(k) - want).norm()
            })
            .fold(0.0, f64::max)
    }

    /// b_r² = 1/a_r.
    pub fn endpoint_squares(&self) -> Vec<C64> {
        self.roots.iter().map(|a| a.inv()).collect()
    }
}

fn sign(k: usize) -> f64 {
    if k.is_multiple_of(2) {
        1.0
    } else {
        -1.0
    }
}

/// Coefficients c_0..c_R of the monic polynomial, c_k multiplying a^{R−k}.
fn coefficients(order_r: usize) -> Vec<f64> {
    (0..=order_r).map(|k| sign(k) / factorial(k)).collect()
}

fn horner(coeffs: &[f64], z: C64) -> (C64, C64) {
    let mut p = C64::new(0.0, 0.0);
    let mut dp = C64::new(0.0, 0.0);
    for &c in coeffs {
        dp = dp * z + p;
        p = p * z + c;
    }
    (p, dp)
}

/// All R roots from the companion matrix, polished by Newton steps.
pub fn singularity_roots(order_r: usize) -> Result<RootSystem> {
    if !(1..=MAX_ORDER).contains(&order_r) {
        return Err(Error::domain(format!("order_R must lie in 1..={MAX_ORDER}")));
    }
    let c = coefficients(order_r);
    let r = order_r;
    let companion = DMatrix::from_fn(r, r, |i, j| {
        if i == 0 {
            -c[j + 1]
        } else if i == j + 1 {
            1.0
        } else {
            0.0
        }
    });
    let mut roots: Vec<C64> = companion.complex_eigenvalues().iter().copied().collect();
    for z in roots.iter_mut() {
        for _ in 0..50 {
            let (p, dp) = horner(&c, *z);
            if dp.norm() == 0.0 {
                return Err(Error::RootFinding { order: r });
            }
            let step = p / dp;
            *z -= step;
            if step.norm() < 1e-17 * (1.0 + z.norm()) {
                break;
            }
        }
        if horner(&c, *z).0.norm() > 1e-13 {
            return Err(Error::RootFinding { order: r });
        }
    }
    roots.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    let sys = RootSystem { order_r: r, roots, delta: r as f64 / (r as f64 + 1.0) };
    if sys.invariant_residual() > 1e-12 {
        return Err(Error::RootFinding { order: r });
    }
    Ok(sys)
}

/// Π_r ((b_r² − s²/n)/(b_r² − t²/n))^n.
pub fn higher_finite_n_product(roots: &RootSystem, s: C64, t: C64, n: u32) -> Result<C64> {
    let nf = n as f64;
    let mut log = C64::new(0.0, 0.0);
    for b2 in roots.endpoint_squares() {
        let den = b2 - t * t / nf;
        if den.norm() < 1e-12 {
            return Err(Error::domain("t lies on a pole of the product"));
        }
        log += ((b2 - s * s / nf) / den).ln();
    }
    // n is an integer, so the branch of the logarithm cancels
    Ok((nf * log).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn first_orders() {
        let r1 = singularity_roots(1).unwrap();
        assert!((r1.roots[0] - C64::new(1.0, 0.0)).norm() < 1e-15);
        let r2 = singularity_roots(2).unwrap();
        assert!((r2.roots[0] - C64::new(0.5, -0.5)).norm() < 1e-12);
        assert!((r2.roots[1] - C64::new(0.5, 0.5)).norm() < 1e-12);
        assert!((r2.power_sum(3) - C64::new(-0.5, 0.0)).norm() < 1e-12);
        assert!((r2.delta - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn power_sums_all_orders() {
        for r in 1..=MAX_ORDER {
            let sys = singularity_roots(r).unwrap();
            assert_eq!(sys.roots.len(), r);
            assert!(sys.invariant_residual() < 1e-12, "R={r}");
            // no root is purely imaginary, so none of the poles ±b_r sit on the s axis
            assert!(sys.endpoint_squares().iter().all(|b| b.sqrt().re.abs() > 1e-6));
        }
        assert!(singularity_roots(0).is_err());
        assert!(singularity_roots(9).is_err());
    }

    #[test]
    fn newton_identity_oracle() {
        // power sums from the coefficients alone: p_k + Σ_{i<k} e_i p_{k−i} (−1)^i + (−1)^k k e_k = 0
        for r in 1..=6usize {
            let c = coefficients(r);
            let e: Vec<f64> = (0..=r).map(|k| c[k] * sign(k)).collect();
            let mut p = vec![0.0; r + 2];
            for k in 1..=r + 1 {
                let mut acc = if k <= r { sign(k - 1) * k as f64 * e[k] } else { 0.0 };
                for i in 1..k {
                    if i <= r {
                        acc += sign(i - 1) * e[i] * p[k - i];
                    }
                }
                p[k] = acc;
            }
            let sys = singularity_roots(r).unwrap();
            for k in 1..=r + 1 {
                assert!((sys.power_sum(k as u32).re - p[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn product_reductions() {
        let r1 = singularity_roots(1).unwrap();
        let (s, t) = (C64::new(0.0, 0.7), C64::new(0.4, 0.3));
        let v = higher_finite_n_product(&r1, s, t, 9).unwrap();
        let want = ((1.0 - s * s / 9.0) / (1.0 - t * t / 9.0)).powu(9);
        assert!((v - want).norm() < 1e-12 * want.norm());
        assert!((higher_finite_n_product(&r1, t, t, 9).unwrap() - 1.0).norm() < 1e-15);
        assert!(higher_finite_n_product(&r1, s, C64::new(3.0, 0.0), 9).is_err());
    }

    #[test]
    fn product_log_tends_to_quadratic() {
        let (s, t) = (C64::new(0.0, 0.6), C64::new(0.5, 0.5));
        for r in 1..=4 {
            let sys = singularity_roots(r).unwrap();
            let err = |n: u32| (higher_finite_n_product(&sys, s, t, n).unwrap().ln() - (t * t - s * s)).norm();
            let (e1, e2) = (err(1_000), err(10_000));
            // the first correction is O(n^{-R}), so higher orders reach roundoff
            assert!(e2 < (e1 / 9.0).max(1e-11) && e2 < 1e-3, "R={r}: {e1} {e2}");
        }
    }

    proptest! {
        #[test]
        fn product_is_conjugation_symmetric(sr in -1.0f64..1.0, si in -1.0f64..1.0, tr in -1.0f64..1.0, ti in -1.0f64..1.0) {
            let sys = singularity_roots(3).unwrap();
            let (s, t) = (C64::new(sr, si), C64::new(tr, ti));
            let a = higher_finite_n_product(&sys, s, t, 50).unwrap();
            let b = higher_finite_n_product(&sys, s.conj(), t.conj(), 50).unwrap();
            prop_assert!((a - b.conj()).norm() < 1e-10 * (1.0 + a.norm()));
        }
    }
}
