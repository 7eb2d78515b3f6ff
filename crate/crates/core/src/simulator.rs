//! Rejection sampler for nonintersecting Brownian bridges on [0, 1] with
//! variance σ/2 over a time step σ.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fredholm::RegionFamily;

/// Attempts below which a low acceptance rate is not yet judged.
const PILOT_ATTEMPTS: u64 = 10_000;
const MIN_ACCEPTANCE: f64 = 1e-4;
const CHUNK: u64 = 8_192;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub starts: Vec<f64>,
    pub ends: Vec<f64>,
    /// Observation times, one per region slice.
    pub taus: Vec<f64>,
    /// Dyadic refinement level: the grid has 2^level steps plus the observation times.
    pub level: u32,
    /// Number of accepted (nonintersecting) samples to collect.
    pub accepted: u64,
    pub seed: u64,
}

impl McConfig {
    pub fn validate(&self) -> Result<()> {
        let n = self.starts.len();
        if n == 0 || self.ends.len() != n {
            return Err(Error::domain("starts and ends must be nonempty and of equal length"));
        }
        let increasing = |v: &[f64]| v.windows(2).all(|w| w[0] < w[1]) && v.iter().all(|x| x.is_finite());
        if !increasing(&self.starts) || !increasing(&self.ends) {
            return Err(Error::domain("starts and ends must be finite and strictly increasing"));
        }
        if self.taus.iter().any(|&t| !(t > 0.0 && t < 1.0)) || !self.taus.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::domain("observation times must increase strictly inside (0, 1)"));
        }
        if self.accepted < 1_000 {
            return Err(Error::domain("sample budget must be at least 1000"));
        }
        if self.level > 14 {
            return Err(Error::domain("refinement level must be at most 14"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub estimate: f64,
    pub stderr: f64,
    pub acceptance_rate: f64,
    pub accepted: u64,
    pub attempts: u64,
}

/// Probability that a Brownian bridge with unit variance rate, starting at
/// gap d0 > 0 and ending at gap d1 > 0 over time σ, touches zero.
pub fn crossing_probability(d0: f64, d1: f64, sigma: f64) -> f64 {
    if d0 <= 0.0 || d1 <= 0.0 {
        return 1.0;
    }
    (-2.0 * d0 * d1 / sigma).exp()
}

/// Insertion order of grid times: observation times first, then dyadic
/// levels from coarse to fine, so refining keeps the coarse values.
fn insertion_order(taus: &[f64], level: u32) -> Vec<f64> {
    let mut order: Vec<f64> = taus.to_vec();
    for l in 1..=level {
        let den = (1u64 << l) as f64;
        for k in (1..(1u64 << l)).step_by(2) {
            let t = k as f64 / den;
            if !order.iter().any(|&s| (s - t).abs() < 1e-14) {
                order.push(t);
            }
        }
    }
    order
}

/// Result of one attempt: None if rejected, otherwise whether every
/// region was avoided.
fn attempt(cfg: &McConfig, regions: &RegionFamily, order: &[f64], index: u64) -> Option<bool> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index);
    let u: f64 = rng.random();
    let n = cfg.starts.len();
    // each path as a sorted list of (time, value)
    let mut paths: Vec<Vec<(f64, f64)>> = (0..n).map(|i| vec![(0.0, cfg.starts[i]), (1.0, cfg.ends[i])]).collect();
    for &t in order {
        for path in paths.iter_mut() {
            let pos = path.partition_point(|p| p.0 < t);
            let (tl, xl) = path[pos - 1];
            let (tr, xr) = path[pos];
            let mean = xl + (xr - xl) * (t - tl) / (tr - tl);
            let var = 0.5 * (t - tl) * (tr - t) / (tr - tl);
            let z: f64 = rng.sample(StandardNormal);
            path.insert(pos, (t, mean + var.sqrt() * z));
        }
    }
    // survival probability of the grid skeleton under pairwise crossing corrections
    let mut survive = 1.0;
    let len = paths[0].len();
    for i in 0..n.saturating_sub(1) {
        for g in 0..len - 1 {
            let d0 = paths[i + 1][g].1 - paths[i][g].1;
            let d1 = paths[i + 1][g + 1].1 - paths[i][g + 1].1;
            let sigma = paths[i][g + 1].0 - paths[i][g].0;
            survive *= 1.0 - crossing_probability(d0, d1, sigma);
            if survive == 0.0 {
                return None;
            }
        }
    }
    if u >= survive {
        return None;
    }
    for (k, &tau) in cfg.taus.iter().enumerate() {
        for path in &paths {
            let x = path[path.partition_point(|p| p.0 < tau - 1e-14)].1;
            if regions.slice(k).iter().any(|iv| iv[0] <= x && x <= iv[1]) {
                return Some(false);
            }
        }
    }
    Some(true)
}

/// Fraction of nonintersecting samples in which no path meets X_k at τ_k.
/// Attempt i uses its own ChaCha stream, so results do not depend on the
/// thread count.
pub fn sample_avoidance(cfg: &McConfig, regions: &RegionFamily) -> Result<McEstimate> {
    cfg.validate()?;
    if regions.num_times() != cfg.taus.len() {
        return Err(Error::domain("one region slice is needed per observation time"));
    }
    let order = insertion_order(&cfg.taus, cfg.level);
    let max_attempts = (cfg.accepted as f64 / MIN_ACCEPTANCE).ceil() as u64;
    let (mut accepted, mut avoided, mut attempts) = (0u64, 0u64, 0u64);
    while accepted < cfg.accepted {
        let outcomes: Vec<Option<bool>> =
            (attempts..attempts + CHUNK).into_par_iter().map(|i| attempt(cfg, regions, &order, i)).collect();
        for o in outcomes {
            attempts += 1;
            if let Some(hit) = o {
                accepted += 1;
                avoided += hit as u64;
                if accepted == cfg.accepted {
                    break;
                }
            }
        }
        let rate = accepted as f64 / attempts as f64;
        if (attempts >= PILOT_ATTEMPTS && rate < MIN_ACCEPTANCE) || attempts >= max_attempts {
            return Err(Error::Infeasible { rate });
        }
    }
    let p = avoided as f64 / accepted as f64;
    Ok(McEstimate {
        estimate: p,
        stderr: (p * (1.0 - p) / accepted as f64).sqrt(),
        acceptance_rate: accepted as f64 / attempts as f64,
        accepted,
        attempts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::finite_n::{heat_p, FiniteNKernel, Form, PathModel};
    use crate::fredholm::gap_probability;
    use crate::gauss::gauss_interval;

    fn config(starts: Vec<f64>, ends: Vec<f64>, accepted: u64) -> McConfig {
        McConfig { starts, ends, taus: vec![0.5], level: 6, accepted, seed: 7 }
    }

    #[test]
    fn crossing_closed_form() {
        assert!((crossing_probability(1.0, 1.0, 1.0) - (-2.0f64).exp()).abs() < 1e-15);
        assert_eq!(crossing_probability(-0.1, 1.0, 1.0), 1.0);
    }

    #[test]
    fn crossing_probability_matches_fine_simulation() {
        // unit-variance bridge from 0.5 to 0.7 over time 1, monitored on a fine grid
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let steps = 2000;
        let trials = 20_000;
        let mut hits = 0;
        for _ in 0..trials {
            let (mut t, mut x) = (0.0, 0.5);
            let dt = 1.0 / steps as f64;
            let mut crossed = false;
            for _ in 0..steps - 1 {
                let mean = x + (0.7 - x) * dt / (1.0 - t);
                let var = dt * (1.0 - t - dt) / (1.0 - t);
                let z: f64 = rng.sample(StandardNormal);
                let next = mean + var.sqrt() * z;
                if next <= 0.0 || rng.random::<f64>() < crossing_probability(x, next, dt) {
                    crossed = true;
                    break;
                }
                x = next;
                t += dt;
            }
            hits += crossed as u32;
        }
        let est = hits as f64 / trials as f64;
        let want = crossing_probability(0.5, 0.7, 1.0);
        assert!((est - want).abs() < 4.0 * (want * (1.0 - want) / trials as f64).sqrt(), "{est} vs {want}");
    }

    #[test]
    fn validation() {
        assert!(config(vec![0.2, 0.1], vec![0.0, 1.0], 1000).validate().is_err());
        assert!(config(vec![0.0], vec![1.0], 10).validate().is_err());
        assert!(config(vec![0.0], vec![1.0], 1000).validate().is_ok());
    }

    #[test]
    fn single_bridge_matches_density() {
        let cfg = config(vec![0.0], vec![1.0], 40_000);
        let regions = RegionFamily::intervals(&[[0.5, 1.0]]).unwrap();
        let est = sample_avoidance(&cfg, &regions).unwrap();
        assert_eq!(est.acceptance_rate, 1.0);
        let (xs, ws) = gauss_interval(0.5, 1.0, 20);
        let mass: f64 = xs
            .iter()
            .zip(&ws)
            .map(|(x, w)| {
                w * heat_p(0.0, *x, 0.5).unwrap() * heat_p(*x, 1.0, 0.5).unwrap() / heat_p(0.0, 1.0, 1.0).unwrap()
            })
            .sum();
        assert!((est.estimate - (1.0 - mass)).abs() < 3.0 * est.stderr, "{est:?} vs {}", 1.0 - mass);
    }

    #[test]
    fn seeded_runs_repeat() {
        let cfg = config(vec![-0.2, 0.2], vec![-1.0, 1.0], 2_000);
        let regions = RegionFamily::intervals(&[[-0.1, 0.1]]).unwrap();
        assert_eq!(sample_avoidance(&cfg, &regions).unwrap(), sample_avoidance(&cfg, &regions).unwrap());
    }

    #[test]
    fn two_paths_match_determinant() {
        let cfg = config(vec![-0.2, 0.2], vec![-1.0, 1.0], 20_000);
        let regions = RegionFamily::intervals(&[[-0.1, 0.1]]).unwrap();
        let est = sample_avoidance(&cfg, &regions).unwrap();
        let model = PathModel::new(cfg.starts.clone(), cfg.ends.clone(), cfg.taus.clone()).unwrap();
        let k = FiniteNKernel::new(model, Form::General).unwrap();
        let det = gap_probability(&k, &regions, 24).unwrap();
        assert!((est.estimate - det).abs() < 3.0 * est.stderr, "{est:?} vs {det}");
    }

    #[test]
    fn refinement_keeps_estimate() {
        let regions = RegionFamily::intervals(&[[-0.1, 0.1]]).unwrap();
        let mut cfg = config(vec![-0.2, 0.2], vec![-1.0, 1.0], 20_000);
        let coarse = sample_avoidance(&cfg, &regions).unwrap();
        cfg.level += 1;
        let fine = sample_avoidance(&cfg, &regions).unwrap();
        assert!((coarse.estimate - fine.estimate).abs() < coarse.stderr);
    }

    #[test]
    fn infeasible_configuration_is_reported() {
        let cfg = McConfig {
            starts: vec![-1e-3, 0.0, 1e-3],
            ends: vec![-1e-3, 0.0, 1e-3],
            taus: vec![0.5],
            level: 8,
            accepted: 1_000,
            seed: 1,
        };
        let regions = RegionFamily::intervals(&[[5.0, 6.0]]).unwrap();
        assert!(matches!(sample_avoidance(&cfg, &regions), Err(Error::Infeasible { .. })));
    }
}
