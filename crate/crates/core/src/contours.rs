//! Oriented piecewise-ray contours and graded Gauss rules on them.
//!
//! Every integral in the crate is a sum over a [`QuadratureRule`] built from a
//! [`ContourPath`]. Infinite rays are truncated at a finite radius and
//! graded geometrically (ratio 1/2) toward their finite end, where the
//! Pearcey-type contours meet.

use std::collections::HashMap;
use std::f64::consts::{FRAC_PI_4, FRAC_PI_8, PI};
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gauss::gauss_interval;

pub type C64 = Complex64;

/// One straight piece of a contour.
///
/// `anchor` is the finite endpoint. When `inbound` is set the segment is
/// traversed toward the anchor (from `anchor - direction * length`),
/// otherwise away from it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Segment {
    pub anchor: C64,
    pub direction: C64,
    pub length: f64,
    pub inbound: bool,
}

impl Segment {
    pub fn outbound(anchor: C64, direction: C64, length: f64) -> Self {
        Segment { anchor, direction: direction / direction.norm(), length, inbound: false }
    }

    pub fn inbound(anchor: C64, direction: C64, length: f64) -> Self {
        Segment { anchor, direction: direction / direction.norm(), length, inbound: true }
    }

    /// Finite segment from `a` to `b`, graded toward `a`.
    pub fn between(a: C64, b: C64) -> Self {
        let d = b - a;
        Segment::outbound(a, d, d.norm())
    }

    /// Starting point in traversal order, `None` for a ray coming in from infinity.
    pub fn start(&self) -> Option<C64> {
        if !self.inbound {
            Some(self.anchor)
        } else if self.length.is_finite() {
            Some(self.anchor - self.direction * self.length)
        } else {
            None
        }
    }

    /// Point at distance `r` from the anchor.
    pub fn point(&self, r: f64) -> C64 {
        if self.inbound {
            self.anchor - self.direction * r
        } else {
            self.anchor + self.direction * r
        }
    }

    /// Argument of the ray as seen from the anchor.
    pub fn ray_argument(&self) -> f64 {
        let outward = if self.inbound { -self.direction } else { self.direction };
        outward.arg()
    }
}

/// Ordered list of segments; orientation follows the listing order.
#[derive(Clone, Debug, PartialEq)]
pub struct ContourPath {
    pub segments: Vec<Segment>,
}

impl ContourPath {
    pub fn new(segments: Vec<Segment>) -> Self {
        ContourPath { segments }
    }

    /// Arguments of the rays, in listing order.
    pub fn ray_arguments(&self) -> Vec<f64> {
        self.segments.iter().map(Segment::ray_argument).collect()
    }
}

fn four_ray_contour(arg: f64) -> ContourPath {
    let e = C64::from_polar(1.0, arg);
    let zero = C64::new(0.0, 0.0);
    ContourPath::new(vec![
        // from +inf e^{i arg} and -inf e^{i arg} in to the origin
        Segment::inbound(zero, -e, f64::INFINITY),
        Segment::inbound(zero, e, f64::INFINITY),
        // out to +inf e^{-i arg} and -inf e^{-i arg}
        Segment::outbound(zero, e.conj(), f64::INFINITY),
        Segment::outbound(zero, -e.conj(), f64::INFINITY),
    ])
}

/// The X-shaped Pearcey t-contour. `rotation` turns every ray toward the
/// real axis; zero gives the canonical contour.
pub fn pearcey_t_contour(rotation: f64) -> Result<ContourPath> {
    if !(0.0..FRAC_PI_8).contains(&rotation) {
        return Err(Error::domain(format!("rotation {rotation} outside [0, pi/8)")));
    }
    Ok(four_ray_contour(FRAC_PI_4 - rotation))
}

/// Imaginary axis traversed upward, split at the origin.
pub fn imaginary_axis_contour() -> ContourPath {
    let zero = C64::new(0.0, 0.0);
    let up = C64::new(0.0, 1.0);
    ContourPath::new(vec![Segment::inbound(zero, up, f64::INFINITY), Segment::outbound(zero, up, f64::INFINITY)])
}

/// Four-ray contour for the order-`order_r` singularity; rays sit at
/// ±Rπ/(2R+2) and π∓Rπ/(2R+2) where (-1)^{R+1} t^{2R+2} is negative.
pub fn higher_order_t_contour(order_r: usize) -> Result<ContourPath> {
    if order_r < 1 {
        return Err(Error::domain("order_R must be at least 1"));
    }
    let r = order_r as f64;
    Ok(four_ray_contour(r * PI / (2.0 * r + 2.0)))
}

/// Parameters controlling [`build_rule`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RuleSettings {
    pub truncation_radius: f64,
    /// Number of geometrically graded panels between the anchor and the truncation radius.
    pub panels: usize,
    pub nodes_per_panel: usize,
    /// Panels longer than this are split uniformly.
    pub max_panel_length: f64,
}

impl Default for RuleSettings {
    fn default() -> Self {
        RuleSettings { truncation_radius: 8.0, panels: 12, nodes_per_panel: 24, max_panel_length: 0.25 }
    }
}

impl RuleSettings {
    /// Same rule with panels and nodes per panel doubled.
    pub fn refined(&self) -> Self {
        RuleSettings { panels: self.panels * 2, nodes_per_panel: self.nodes_per_panel * 2, ..*self }
    }
}

/// Nodes and weights realising an integral along a contour.
///
/// Weights already include the direction factor `dt`.
#[derive(Clone, Debug)]
pub struct QuadratureRule {
    pub nodes: Vec<C64>,
    pub weights: Vec<C64>,
    pub truncation_radius: f64,
    pub panel_grading: f64,
    pub nodes_per_panel: usize,
    /// Index of the segment each node belongs to.
    pub segment_of: Vec<usize>,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Σ w f(t), accumulated in node order with compensation.
    pub fn integrate(&self, f: impl Fn(C64) -> C64) -> C64 {
        let mut acc = CompensatedSum::default();
        for (&t, &w) in self.nodes.iter().zip(&self.weights) {
            acc.add(w * f(t));
        }
        acc.value()
    }

    /// Like [`integrate`](Self::integrate) but also returns Σ|w f|, the
    /// scale against which cancellation is judged.
    pub fn integrate_with_scale(&self, f: impl Fn(C64) -> C64) -> (C64, f64) {
        let mut acc = CompensatedSum::default();
        let mut scale = 0.0;
        for (&t, &w) in self.nodes.iter().zip(&self.weights) {
            let term = w * f(t);
            scale += term.norm();
            acc.add(term);
        }
        (acc.value(), scale)
    }
}

/// Neumaier-compensated complex accumulator.
#[derive(Clone, Copy, Debug, Default)]
pub struct CompensatedSum {
    re: (f64, f64),
    im: (f64, f64),
}

impl CompensatedSum {
    #[inline]
    pub fn add(&mut self, z: C64) {
        neumaier(&mut self.re, z.re);
        neumaier(&mut self.im, z.im);
    }

    pub fn value(&self) -> C64 {
        C64::new(self.re.0 + self.re.1, self.im.0 + self.im.1)
    }
}

#[inline]
fn neumaier(state: &mut (f64, f64), x: f64) {
    let (sum, comp) = state;
    let t = *sum + x;
    if sum.abs() >= x.abs() {
        *comp += (*sum - t) + x;
    } else {
        *comp += (x - t) + *sum;
    }
    *sum = t;
}

/// Build a rule with default panel splitting.
pub fn build_rule(
    path: &ContourPath,
    truncation_radius: f64,
    panels: usize,
    nodes_per_panel: usize,
) -> Result<QuadratureRule> {
    build_rule_with(path, &RuleSettings { truncation_radius, panels, nodes_per_panel, ..RuleSettings::default() })
}

pub fn build_rule_with(path: &ContourPath, settings: &RuleSettings) -> Result<QuadratureRule> {
    let RuleSettings { truncation_radius, panels, nodes_per_panel, max_panel_length } = *settings;
    if !(truncation_radius > 0.0) || !truncation_radius.is_finite() {
        return Err(Error::domain("truncation radius must be positive and finite"));
    }
    if panels < 2 {
        return Err(Error::domain("at least two graded panels are required"));
    }
    if nodes_per_panel == 0 {
        return Err(Error::domain("nodes_per_panel must be positive"));
    }
    if !(max_panel_length > 0.0) {
        return Err(Error::domain("max_panel_length must be positive"));
    }

    let mut nodes = Vec::new();
    let mut weights = Vec::new();
    let mut segment_of = Vec::new();
    for (idx, seg) in path.segments.iter().enumerate() {
        let extent = seg.length.min(truncation_radius);
        for (a, b) in graded_panels(extent, panels, max_panel_length) {
            let (r, w) = gauss_interval(a, b, nodes_per_panel);
            for (ri, wi) in r.into_iter().zip(w) {
                nodes.push(seg.point(ri));
                weights.push(seg.direction * wi);
                segment_of.push(idx);
            }
        }
    }
    Ok(QuadratureRule { nodes, weights, truncation_radius, panel_grading: 0.5, nodes_per_panel, segment_of })
}

/// Panels on [0, extent]: halving toward 0, long panels split to `max_len`.
fn graded_panels(extent: f64, panels: usize, max_len: f64) -> Vec<(f64, f64)> {
    let mut edges = vec![0.0];
    for k in (0..panels - 1).rev() {
        edges.push(extent * 0.5f64.powi(k as i32));
    }
    let mut out = Vec::new();
    for pair in edges.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let pieces = ((b - a) / max_len).ceil().max(1.0) as usize;
        let h = (b - a) / pieces as f64;
        for p in 0..pieces {
            out.push((a + h * p as f64, a + h * (p + 1) as f64));
        }
    }
    out
}

/// Named contours, used as cache keys.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ContourKind {
    /// Pearcey t-contour rotated by `f64::from_bits(rotation_bits)`.
    Pearcey {
        rotation_bits: u64,
    },
    ImaginaryAxis,
    HigherOrder(usize),
}

impl ContourKind {
    pub fn pearcey(rotation: f64) -> Self {
        ContourKind::Pearcey { rotation_bits: rotation.to_bits() }
    }

    pub fn path(&self) -> Result<ContourPath> {
        match *self {
            ContourKind::Pearcey { rotation_bits } => pearcey_t_contour(f64::from_bits(rotation_bits)),
            ContourKind::ImaginaryAxis => Ok(imaginary_axis_contour()),
            ContourKind::HigherOrder(r) => higher_order_t_contour(r),
        }
    }
}

type RuleKey = (ContourKind, u64, usize, usize, u64);

impl RuleSettings {
    pub(crate) fn key(&self) -> (u64, usize, usize, u64) {
        (self.truncation_radius.to_bits(), self.panels, self.nodes_per_panel, self.max_panel_length.to_bits())
    }
}

/// Shared rule for a named contour; built once per process.
pub fn cached_rule(kind: ContourKind, settings: &RuleSettings) -> Result<Arc<QuadratureRule>> {
    static CACHE: OnceLock<Mutex<HashMap<RuleKey, Arc<QuadratureRule>>>> = OnceLock::new();
    let (a, b, c, d) = settings.key();
    let key = (kind, a, b, c, d);
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(rule) = cache.lock().expect("rule cache poisoned").get(&key) {
        return Ok(rule.clone());
    }
    let rule = Arc::new(build_rule_with(&kind.path()?, settings)?);
    cache.lock().expect("rule cache poisoned").insert(key, rule.clone());
    Ok(rule)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gamma_quarter() -> f64 {
        3.625_609_908_221_908
    }

    #[test]
    fn canonical_ray_arguments() {
        let c = pearcey_t_contour(0.0).unwrap();
        let args = c.ray_arguments();
        let want = [FRAC_PI_4, -3.0 * FRAC_PI_4, -FRAC_PI_4, 3.0 * FRAC_PI_4];
        for (a, w) in args.iter().zip(want) {
            assert!((a - w).abs() < 1e-15, "{a} vs {w}");
        }
        // incoming directions -e^{iπ/4}, -e^{-3iπ/4}; outgoing e^{-iπ/4}, e^{3iπ/4}
        let d: Vec<C64> = c.segments.iter().map(|s| s.direction).collect();
        let e = |a: f64| C64::from_polar(1.0, a);
        assert!((d[0] + e(FRAC_PI_4)).norm() < 1e-15);
        assert!((d[1] + e(-3.0 * FRAC_PI_4)).norm() < 1e-15);
        assert!((d[2] - e(-FRAC_PI_4)).norm() < 1e-15);
        assert!((d[3] - e(3.0 * FRAC_PI_4)).norm() < 1e-15);
        assert!(c.segments.iter().all(|s| (s.direction.norm() - 1.0).abs() < 1e-15));
    }

    #[test]
    fn rotation_range_is_checked() {
        assert!(pearcey_t_contour(-0.1).is_err());
        assert!(pearcey_t_contour(FRAC_PI_8).is_err());
        assert!(pearcey_t_contour(0.39).is_ok());
    }

    #[test]
    fn quartic_phases_cancel_on_canonical_contour() {
        let c = pearcey_t_contour(0.0).unwrap();
        let rule = build_rule_with(&c, &RuleSettings::default()).unwrap();
        let v = rule.integrate(|t| (t.powu(4) / 4.0).exp());
        assert!(v.norm() < 1e-14, "{v}");
    }

    #[test]
    fn rotated_nodes_satisfy_decay_conditions() {
        let c = pearcey_t_contour(0.2).unwrap();
        let rule = build_rule_with(&c, &RuleSettings::default()).unwrap();
        for t in &rule.nodes {
            let t2 = t * t;
            assert!(t2.re > 0.0);
            assert!((t2 * t2).re < 0.0);
        }
    }

    #[test]
    fn imaginary_axis_quartic_integral() {
        let rule = build_rule_with(&imaginary_axis_contour(), &RuleSettings::default()).unwrap();
        let v = rule.integrate(|s| (-s.powu(4) / 4.0).exp());
        let want = 2.0 * 4f64.powf(-0.75) * gamma_quarter();
        assert!(v.re.abs() < 1e-15);
        assert!((v.im - want).abs() < 1e-12, "{v} vs {want}");
        let odd = rule.integrate(|s| s * (-s.powu(4) / 4.0).exp());
        assert!(odd.norm() < 1e-15);
    }

    #[test]
    fn imaginary_axis_orientation() {
        let t = 3.0;
        let rule = build_rule(&imaginary_axis_contour(), t, 4, 8).unwrap();
        let v = rule.integrate(|_| C64::new(1.0, 0.0));
        assert!((v - C64::new(0.0, 2.0 * t)).norm() < 1e-13);
    }

    #[test]
    fn higher_order_contours() {
        let c1 = higher_order_t_contour(1).unwrap();
        assert_eq!(c1, pearcey_t_contour(0.0).unwrap());
        let c2 = higher_order_t_contour(2).unwrap();
        let args = c2.ray_arguments();
        let want = [PI / 3.0, -2.0 * PI / 3.0, -PI / 3.0, 2.0 * PI / 3.0];
        for (a, w) in args.iter().zip(want) {
            assert!((a - w).abs() < 1e-15);
        }
        let rule = build_rule_with(&c2, &RuleSettings::default()).unwrap();
        for t in &rule.nodes {
            assert!((-t.powu(6) / 6.0).re < 0.0);
        }
        assert!(higher_order_t_contour(0).is_err());
    }

    #[test]
    fn unit_segment_weights_sum_to_direction() {
        let a = C64::new(0.3, -0.2);
        let dir = C64::from_polar(1.0, 0.7);
        let path = ContourPath::new(vec![Segment::between(a, a + dir)]);
        let rule = build_rule(&path, 8.0, 5, 24).unwrap();
        let s: C64 = rule.weights.iter().sum();
        assert!((s - dir).norm() < 1e-13);
        assert!(rule.nodes.iter().all(|&t| (t - a).norm() > 0.0));
    }

    #[test]
    fn real_ray_quartic_gamma_reduction() {
        let path = ContourPath::new(vec![Segment::outbound(C64::new(0.0, 0.0), C64::new(1.0, 0.0), f64::INFINITY)]);
        let f = |r: C64| (-r.powu(4) / 4.0).exp();
        let rule = build_rule_with(&path, &RuleSettings::default()).unwrap();
        let v = rule.integrate(f);
        let want = 4f64.powf(-0.75) * gamma_quarter();
        assert!((v.re - want).abs() < 1e-10);
        let finer = RuleSettings { nodes_per_panel: 48, ..RuleSettings::default() };
        let v2 = build_rule_with(&path, &finer).unwrap().integrate(f);
        assert!((v - v2).norm() < 1e-12);
    }

    #[test]
    fn invalid_rule_sizes() {
        let p = imaginary_axis_contour();
        assert!(build_rule(&p, 0.0, 4, 8).is_err());
        assert!(build_rule(&p, 8.0, 1, 8).is_err());
        assert!(build_rule(&p, 8.0, 4, 0).is_err());
    }

    #[test]
    fn conjugation_symmetry_gives_imaginary_integral() {
        // f(conj t) = conj f(t) and C maps to -C under conjugation
        let rule = build_rule_with(&pearcey_t_contour(0.0).unwrap(), &RuleSettings::default()).unwrap();
        let (v, scale) = rule.integrate_with_scale(|t| (t.powu(4) / 4.0 - 0.3 * t * t + 0.8 * t).exp());
        assert!(v.re.abs() < 1e-12 * scale);
    }
}
