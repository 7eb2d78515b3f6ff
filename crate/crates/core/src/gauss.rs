//! Gauss–Legendre nodes and weights on [-1, 1].

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

/// Nodes and weights.
pub type Rule = (Vec<f64>, Vec<f64>);

/// Nodes (ascending) and weights of the `n`-point Gauss–Legendre rule.
pub fn gauss_legendre(n: usize) -> Arc<Rule> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<Rule>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().expect("gauss cache poisoned");
    guard.entry(n).or_insert_with(|| Arc::new(compute(n))).clone()
}

fn compute(n: usize) -> Rule {
    assert!(n >= 1);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        // Tricomi initial guess, then Newton on P_n.
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, z);
        if d != 0.0 {
            dp = d;
        }
        let weight = 2.0 / ((1.0 - z * z) * dp * dp);
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = weight;
        w[n - 1 - i] = weight;
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    (x, w)
}

/// Value and derivative of the Legendre polynomial P_n at z.
fn legendre(n: usize, z: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = z;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    if n == 0 {
        return (1.0, 0.0);
    }
    let d = n as f64 * (z * p1 - p0) / (z * z - 1.0);
    (p1, d)
}

/// Gauss–Legendre rule mapped to [a, b].
pub fn gauss_interval(a: f64, b: f64, n: usize) -> (Vec<f64>, Vec<f64>) {
    let rule = gauss_legendre(n);
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let nodes = rule.0.iter().map(|&t| mid + half * t).collect();
    let weights = rule.1.iter().map(|&w| half * w).collect();
    (nodes, weights)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integrates_polynomials_exactly() {
        for n in [1usize, 2, 5, 16, 24, 48] {
            let rule = gauss_legendre(n);
            for deg in 0..(2 * n) {
                let got: f64 = rule.0.iter().zip(&rule.1).map(|(&x, &w)| w * x.powi(deg as i32)).sum();
                let want = if deg % 2 == 0 { 2.0 / (deg as f64 + 1.0) } else { 0.0 };
                assert!((got - want).abs() < 1e-14, "n={n} deg={deg} got {got}");
            }
        }
    }

    #[test]
    fn nodes_are_sorted_and_interior() {
        let rule = gauss_legendre(24);
        assert!(rule.0.windows(2).all(|p| p[0] < p[1]));
        assert!(rule.0.iter().all(|x| x.abs() < 1.0));
    }
}
