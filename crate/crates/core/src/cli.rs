//! Command-line front end. See docs/cli.md for the scenario schema and the
//! CSV columns of every subcommand.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use crate::contours::RuleSettings;
use crate::error::{Error, Result};
use crate::finite_n::{convergence_scan, FiniteNKernel, Form, PathModel, ZeroStartMethod, MAX_SUM_FORM_N};
use crate::fredholm::{log_det_derivative_fd, NystromSystem, RegionFamily};
use crate::higher_order::singularity_roots;
use crate::kernels::{integrable_entry, KernelSpec, MatrixKernel, PearceyKernel};
use crate::pde::{closure_identities, differential_residuals, EQUATIONS};
use crate::plot::{line_plot, Series};
use crate::simulator::{sample_avoidance, McConfig};
use crate::special::{ode_residual_phi, ode_residual_psi, phi_with, psi_with, Normalization, PearceyParams};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

pub const THREADS_ENV: &str = "PEARCEY_THREADS";

#[derive(Parser, Debug)]
#[command(name = "pearcey", version, about = "Extended Pearcey kernels, gap probabilities and PDE checks")]
struct Cli {
    /// Worker threads; falls back to PEARCEY_THREADS, then the hardware count.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// CSV destination (stdout when absent).
    #[arg(long, short, global = true)]
    output: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Tabulate φ and ψ with derivatives.
    Fn(FnArgs),
    /// Evaluate K_ij on an x-y grid.
    Kernel(KernelArgs),
    /// det(I − Kχ) for a scenario.
    Gap(ScenarioArgs),
    /// Finite-n to limit convergence scan.
    Converge(ConvergeArgs),
    /// Residuals of the PDE system and the closure identities.
    PdeCheck(PdeArgs),
    /// Roots a_r of the order-R endpoint polynomial.
    Roots(RootsArgs),
    /// Monte Carlo avoidance probability against the determinant.
    Simulate(ScenarioArgs),
    /// Fast property suite.
    Selftest,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum NormArg {
    Canonical,
    Scaled,
}

impl From<NormArg> for Normalization {
    fn from(n: NormArg) -> Self {
        match n {
            NormArg::Canonical => Normalization::Canonical,
            NormArg::Scaled => Normalization::Scaled,
        }
    }
}

#[derive(Args, Debug)]
struct FnArgs {
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    tau: f64,
    #[arg(long, default_value_t = 1)]
    order: usize,
    #[arg(long, value_enum)]
    normalization: Option<NormArg>,
    #[arg(long, default_value_t = -3.0, allow_negative_numbers = true)]
    from: f64,
    #[arg(long, default_value_t = 3.0, allow_negative_numbers = true)]
    to: f64,
    #[arg(long, default_value_t = 61)]
    points: usize,
    /// Highest derivative tabulated.
    #[arg(long, default_value_t = 2)]
    derivs: usize,
    #[arg(long)]
    svg: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct KernelArgs {
    /// Scenario with a kernel or finite_n section; overrides --taus/--order.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "0", allow_hyphen_values = true)]
    taus: Vec<f64>,
    #[arg(long, default_value_t = 1)]
    order: usize,
    #[arg(long, value_enum)]
    normalization: Option<NormArg>,
    #[arg(long, default_value_t = 0)]
    i: usize,
    #[arg(long, default_value_t = 0)]
    j: usize,
    #[arg(long, default_value_t = -2.0, allow_negative_numbers = true)]
    from: f64,
    #[arg(long, default_value_t = 2.0, allow_negative_numbers = true)]
    to: f64,
    #[arg(long, default_value_t = 11)]
    points: usize,
    #[arg(long, default_value_t = 0)]
    dx: usize,
    #[arg(long, default_value_t = 0)]
    dy: usize,
}

#[derive(Args, Debug)]
struct ScenarioArgs {
    scenario: PathBuf,
}

#[derive(Args, Debug)]
struct ConvergeArgs {
    #[arg(long, value_delimiter = ',', default_value = "50,200,800")]
    n: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "0", allow_hyphen_values = true)]
    taus: Vec<f64>,
    /// Box [lo, hi] for x and y.
    #[arg(long, value_delimiter = ',', default_value = "-2,2", allow_hyphen_values = true)]
    range: Vec<f64>,
    /// Grid points per axis.
    #[arg(long, default_value_t = 7)]
    grid: usize,
    #[arg(long)]
    svg: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PdeArgs {
    scenario: PathBuf,
    #[arg(long, default_value_t = 1e-3)]
    h: f64,
}

#[derive(Args, Debug)]
struct RootsArgs {
    /// Single order; all orders 1..=max-order when absent.
    #[arg(long)]
    order: Option<usize>,
    #[arg(long, default_value_t = 6)]
    max_order: usize,
}

#[derive(Deserialize, Debug, Default)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub kernel: Option<KernelSection>,
    #[serde(default)]
    pub finite_n: Option<FiniteNSection>,
    #[serde(default)]
    pub regions: Option<RegionFamily>,
    #[serde(default)]
    pub quadrature: QuadratureSection,
    #[serde(default)]
    pub simulation: Option<SimulationSection>,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Deserialize, Debug)]
#[serde(deny_unknown_fields)]
pub struct KernelSection {
    pub taus: Vec<f64>,
    #[serde(default = "one")]
    pub order_r: usize,
    #[serde(default)]
    pub normalization: Option<Normalization>,
}

#[derive(Deserialize, Debug)]
#[serde(deny_unknown_fields)]
pub struct FiniteNSection {
    /// Omitted means every path starts at the origin.
    #[serde(default)]
    pub starts: Option<Vec<f64>>,
    pub ends: Vec<f64>,
    pub taus: Vec<f64>,
    /// Zero-start representation; ignored for distinct starts.
    #[serde(default)]
    pub method: Option<ZeroStartMethod>,
}

#[derive(Deserialize, Debug)]
#[serde(default, deny_unknown_fields)]
pub struct QuadratureSection {
    pub rule: RuleSettings,
    pub nystrom_nodes: usize,
}

impl Default for QuadratureSection {
    fn default() -> Self {
        QuadratureSection { rule: RuleSettings::default(), nystrom_nodes: 32 }
    }
}

#[derive(Deserialize, Debug)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationSection {
    pub level: u32,
    pub accepted: u64,
    pub seed: u64,
}

impl Default for SimulationSection {
    fn default() -> Self {
        SimulationSection { level: 6, accepted: 100_000, seed: 1 }
    }
}

#[derive(Deserialize, Debug, Default)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default)]
    pub csv: Option<PathBuf>,
}

fn one() -> usize {
    1
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::Validation(msg.into())
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| invalid(format!("cannot read {}: {e}", path.display())))?;
        let sc: Scenario = serde_json::from_str(&text)?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(k) = &self.kernel {
            let spec = self.kernel_spec(k)?;
            spec.params(0);
        }
        if let Some(f) = &self.finite_n {
            self.path_model(f)?;
        }
        if self.quadrature.nystrom_nodes < 4 || self.quadrature.nystrom_nodes > 400 {
            return Err(invalid("quadrature.nystrom_nodes must lie in 4..=400"));
        }
        let r = &self.quadrature.rule;
        if !(r.truncation_radius > 0.0) || r.panels < 2 || r.nodes_per_panel == 0 || !(r.max_panel_length > 0.0) {
            return Err(invalid("quadrature.rule has a nonpositive entry"));
        }
        if let (Some(regions), Some(m)) = (&self.regions, self.num_times()) {
            if regions.num_times() != 0 && regions.num_times() != m {
                return Err(invalid(format!(
                    "regions has {} slices but the kernel has {m} times",
                    regions.num_times()
                )));
            }
        }
        Ok(())
    }

    fn num_times(&self) -> Option<usize> {
        self.kernel.as_ref().map(|k| k.taus.len()).or(self.finite_n.as_ref().map(|f| f.taus.len()))
    }

    fn kernel_spec(&self, k: &KernelSection) -> Result<KernelSpec> {
        let norm =
            k.normalization.unwrap_or(if k.order_r == 1 { Normalization::Canonical } else { Normalization::Scaled });
        let spec = match norm {
            Normalization::Canonical if k.order_r == 1 => KernelSpec::pearcey(k.taus.clone()),
            Normalization::Canonical => Err(invalid("canonical normalization exists only for order_r = 1")),
            Normalization::Scaled => KernelSpec::higher_order(k.taus.clone(), k.order_r),
        };
        Ok(spec.map_err(|e| invalid(e.to_string()))?.with_rule(self.quadrature.rule))
    }

    fn path_model(&self, f: &FiniteNSection) -> Result<PathModel> {
        let starts = f.starts.clone().unwrap_or_else(|| vec![0.0; f.ends.len()]);
        PathModel::new(starts, f.ends.clone(), f.taus.clone()).map_err(|e| invalid(e.to_string()))
    }

    /// The kernel named by the scenario: exactly one of `kernel` and `finite_n`.
    pub fn build_kernel(&self) -> Result<Box<dyn MatrixKernel + Send>> {
        match (&self.kernel, &self.finite_n) {
            (Some(k), None) => Ok(Box::new(PearceyKernel::new(self.kernel_spec(k)?)?)),
            (None, Some(f)) => {
                let model = self.path_model(f)?;
                let form = if model.has_zero_starts() {
                    let default =
                        if model.n() <= MAX_SUM_FORM_N { ZeroStartMethod::Sum } else { ZeroStartMethod::Contour };
                    Form::ZeroStart(f.method.unwrap_or(default))
                } else {
                    Form::General
                };
                Ok(Box::new(FiniteNKernel::new(model, form)?))
            }
            _ => Err(invalid("exactly one of `kernel` and `finite_n` must be given")),
        }
    }

    /// Regions matching `m` times; a missing or empty list is the empty family.
    pub fn regions_for(&self, m: usize) -> Result<RegionFamily> {
        match &self.regions {
            Some(r) if r.num_times() == m => Ok(r.clone()),
            Some(r) if r.num_times() == 0 => Ok(RegionFamily::empty(m)),
            None => Ok(RegionFamily::empty(m)),
            Some(r) => Err(invalid(format!("regions has {} slices, expected {m}", r.num_times()))),
        }
    }
}

/// Floats in CSV output: 17 significant digits.
pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

struct Table {
    writer: csv::Writer<Vec<u8>>,
}

impl Table {
    fn new(header: &[&str]) -> Result<Self> {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer.write_record(header)?;
        Ok(Table { writer })
    }

    fn row(&mut self, fields: Vec<String>) -> Result<()> {
        self.writer.write_record(&fields)?;
        Ok(())
    }

    fn into_bytes(self) -> Result<Vec<u8>> {
        self.writer.into_inner().map_err(|e| Error::Io(e.into_error()))
    }
}

/// Everything a subcommand produces; written only after it succeeds.
struct Outcome {
    csv: Vec<u8>,
    svg: Option<(PathBuf, String)>,
    default_csv: Option<PathBuf>,
    failed_checks: bool,
}

impl Outcome {
    fn table(t: Table) -> Result<Self> {
        Ok(Outcome { csv: t.into_bytes()?, svg: None, default_csv: None, failed_checks: false })
    }
}

fn linspace(a: f64, b: f64, n: usize) -> Result<Vec<f64>> {
    if n < 2 || !(a < b) || !a.is_finite() || !b.is_finite() {
        return Err(invalid("need finite from < to and at least two points"));
    }
    Ok((0..n).map(|k| a + (b - a) * k as f64 / (n - 1) as f64).collect())
}

fn cmd_fn(a: &FnArgs) -> Result<Outcome> {
    let params = match a.normalization {
        Some(n) => PearceyParams::with_normalization(a.tau, a.order, n.into()),
        None => PearceyParams::new(a.tau, a.order),
    }?;
    if a.derivs > 2 * a.order + 1 {
        return Err(invalid(format!("derivs must be at most {}", 2 * a.order + 1)));
    }
    let xs = linspace(a.from, a.to, a.points)?;
    let mut header: Vec<String> = vec!["x".into()];
    header.extend((0..=a.derivs).map(|d| format!("phi_d{d}")));
    header.extend((0..=a.derivs).map(|d| format!("psi_d{d}")));
    let mut t = Table::new(&header.iter().map(String::as_str).collect::<Vec<_>>())?;
    let rule = RuleSettings::default();
    let mut phi0 = Vec::new();
    let mut psi0 = Vec::new();
    for &x in &xs {
        let f: Vec<f64> = (0..=a.derivs).map(|d| phi_with(x, &params, d, &rule)).collect::<Result<_>>()?;
        let g: Vec<f64> = (0..=a.derivs).map(|d| psi_with(x, &params, d, &rule)).collect::<Result<_>>()?;
        phi0.push((x, f[0]));
        psi0.push((x, g[0]));
        t.row(std::iter::once(x).chain(f).chain(g).map(fmt17).collect())?;
    }
    let mut out = Outcome::table(t)?;
    out.svg = a.svg.clone().map(|p| {
        let series = [Series { label: "phi".into(), points: phi0 }, Series { label: "psi".into(), points: psi0 }];
        (p, line_plot(&format!("tau = {}", a.tau), "x", "value", &series, false))
    });
    Ok(out)
}

fn cmd_kernel(a: &KernelArgs) -> Result<Outcome> {
    let (kernel, default_csv): (Box<dyn MatrixKernel + Send>, _) = match &a.scenario {
        Some(p) => {
            let sc = Scenario::load(p)?;
            (sc.build_kernel()?, sc.output.csv.clone())
        }
        None => {
            let sc = Scenario {
                kernel: Some(KernelSection {
                    taus: a.taus.clone(),
                    order_r: a.order,
                    normalization: a.normalization.map(Into::into),
                }),
                ..Default::default()
            };
            sc.validate()?;
            (sc.build_kernel()?, None)
        }
    };
    let m = kernel.num_times();
    if a.i >= m || a.j >= m {
        return Err(invalid(format!("time indices must be below {m}")));
    }
    if a.dx > 3 || a.dy > 3 {
        return Err(invalid("derivative orders must be at most 3"));
    }
    let xs = linspace(a.from, a.to, a.points)?;
    let blk = kernel.block(a.i, &xs, a.dx, a.j, &xs, a.dy)?;
    let mut t = Table::new(&["x", "y", "kernel"])?;
    for (p, &x) in xs.iter().enumerate() {
        for (q, &y) in xs.iter().enumerate() {
            t.row(vec![fmt17(x), fmt17(y), fmt17(blk[(p, q)])])?;
        }
    }
    let mut out = Outcome::table(t)?;
    out.default_csv = default_csv;
    Ok(out)
}

fn cmd_gap(a: &ScenarioArgs) -> Result<Outcome> {
    let sc = Scenario::load(&a.scenario)?;
    let kernel = sc.build_kernel()?;
    let regions = sc.regions_for(kernel.num_times())?;
    let npi = sc.quadrature.nystrom_nodes;
    let sys = NystromSystem::discretize(kernel, regions, npi)?;
    let det = sys.gap_probability()?;
    let mut t = Table::new(&["gap_probability", "dimension", "nodes_per_interval"])?;
    t.row(vec![fmt17(det), sys.dim().to_string(), npi.to_string()])?;
    let mut out = Outcome::table(t)?;
    out.default_csv = sc.output.csv.clone();
    Ok(out)
}

fn cmd_converge(a: &ConvergeArgs) -> Result<Outcome> {
    if a.n.contains(&0) {
        return Err(invalid("n must be positive"));
    }
    if a.range.len() != 2 {
        return Err(invalid("--range takes two values lo,hi"));
    }
    let report = convergence_scan(&a.n, (a.range[0], a.range[1]), &a.taus, a.grid)?;
    let mut t = Table::new(&["n", "sup_error", "sup_error_dx", "slope", "slope_dx"])?;
    for r in &report.rows {
        t.row(vec![
            r.n.to_string(),
            fmt17(r.sup_error),
            fmt17(r.sup_error_dx),
            fmt17(report.slope),
            fmt17(report.slope_dx),
        ])?;
    }
    let mut out = Outcome::table(t)?;
    out.svg = a.svg.clone().map(|p| {
        let pts =
            |f: fn(&crate::finite_n::ConvergenceRow) -> f64| report.rows.iter().map(|r| (r.n as f64, f(r))).collect();
        let series = [
            Series { label: "sup |K_n - K|".into(), points: pts(|r| r.sup_error) },
            Series { label: "sup |dK_n - dK|".into(), points: pts(|r| r.sup_error_dx) },
        ];
        (p, line_plot("Scaling-limit convergence", "n", "error", &series, true))
    });
    Ok(out)
}

fn cmd_pde(a: &PdeArgs) -> Result<Outcome> {
    let sc = Scenario::load(&a.scenario)?;
    let kernel = sc.build_kernel()?;
    let regions = sc.regions_for(kernel.num_times())?;
    if regions.endpoints().is_empty() {
        return Err(invalid("pde-check needs at least one interval"));
    }
    if !(1e-6..=1e-2).contains(&a.h) {
        return Err(invalid("h must lie in [1e-6, 1e-2]"));
    }
    let npi = sc.quadrature.nystrom_nodes;
    let diff = differential_residuals(&kernel, &regions, a.h, npi)?;
    let probes: Vec<(usize, f64)> = (0..regions.num_times())
        .flat_map(|k| regions.slice(k).iter().map(move |iv| (k, 0.5 * (iv[0] + iv[1]))))
        .collect();
    let closure = closure_identities(&kernel, &regions, &probes, npi)?;

    let mut t = Table::new(&["check", "value", "tolerance", "pass"])?;
    let mut failed = false;
    let mut push = |t: &mut Table, name: String, v: f64, tol: f64| -> Result<()> {
        let ok = v < tol;
        failed |= !ok;
        t.row(vec![name, fmt17(v), fmt17(tol), ok.to_string()])
    };
    for (k, name) in EQUATIONS.iter().enumerate() {
        push(&mut t, format!("residual {name}"), diff.residual[k], 5e-5)?;
    }
    for (k, name) in EQUATIONS.iter().enumerate() {
        push(&mut t, format!("richardson {name}"), diff.richardson[k], 5e-5)?;
    }
    push(&mut t, "closure first_order".into(), closure.first_order, 1e-7)?;
    for (name, v) in [
        ("second_order", closure.second_order),
        ("third_order", closure.third_order),
        ("full_third_order", closure.full_third_order),
        ("grouped", closure.grouped),
        ("known_combination", closure.known_combination),
        ("off_diagonal_rxx", closure.off_diagonal_rxx),
    ] {
        push(&mut t, format!("closure {name}"), v, 1e-5)?;
    }
    let mut out = Outcome::table(t)?;
    out.default_csv = sc.output.csv.clone();
    out.failed_checks = failed;
    Ok(out)
}

fn cmd_roots(a: &RootsArgs) -> Result<Outcome> {
    let orders: Vec<usize> = match a.order {
        Some(r) => vec![r],
        None => (1..=a.max_order).collect(),
    };
    let mut t = Table::new(&["order", "index", "root_re", "root_im", "invariant_residual"])?;
    for r in orders {
        let sys = singularity_roots(r).map_err(|e| match e {
            Error::Domain(m) => invalid(m),
            other => other,
        })?;
        let res = sys.invariant_residual();
        for (k, z) in sys.roots.iter().enumerate() {
            t.row(vec![r.to_string(), k.to_string(), fmt17(z.re), fmt17(z.im), fmt17(res)])?;
        }
    }
    Outcome::table(t)
}

fn cmd_simulate(a: &ScenarioArgs) -> Result<Outcome> {
    let sc = Scenario::load(&a.scenario)?;
    let f = sc.finite_n.as_ref().ok_or_else(|| invalid("simulate needs a finite_n section"))?;
    if sc.kernel.is_some() {
        return Err(invalid("simulate compares against the finite-n kernel; drop the kernel section"));
    }
    let model = sc.path_model(f)?;
    let sim = sc.simulation.as_ref().ok_or_else(|| invalid("simulate needs a simulation section"))?;
    let cfg = McConfig {
        starts: model.starts.clone(),
        ends: model.ends.clone(),
        taus: model.taus.clone(),
        level: sim.level,
        accepted: sim.accepted,
        seed: sim.seed,
    };
    cfg.validate().map_err(|e| invalid(e.to_string()))?;
    let regions = sc.regions_for(model.taus.len())?;
    let det = NystromSystem::discretize(sc.build_kernel()?, regions.clone(), sc.quadrature.nystrom_nodes)?
        .gap_probability()?;
    let est = sample_avoidance(&cfg, &regions)?;
    let z = if est.stderr > 0.0 { (est.estimate - det) / est.stderr } else { 0.0 };
    let mut t =
        Table::new(&["estimate", "stderr", "acceptance_rate", "accepted", "attempts", "determinant", "z_score"])?;
    t.row(vec![
        fmt17(est.estimate),
        fmt17(est.stderr),
        fmt17(est.acceptance_rate),
        est.accepted.to_string(),
        est.attempts.to_string(),
        fmt17(det),
        fmt17(z),
    ])?;
    let mut out = Outcome::table(t)?;
    out.default_csv = sc.output.csv.clone();
    Ok(out)
}

/// A quick subset of the property suite, a few seconds in release builds.
pub fn selftest_checks() -> Result<Vec<(String, f64, f64)>> {
    let mut checks = Vec::new();
    let mut ode = 0.0f64;
    for &tau in &[-0.5, 0.0, 0.7] {
        let p = PearceyParams::new(tau, 1)?;
        for &x in &[-1.3, 0.2, 1.1] {
            ode = ode.max(ode_residual_phi(x, &p)?).max(ode_residual_psi(x, &p)?);
        }
    }
    checks.push(("ode_residual".into(), ode, 1e-8));

    let two = PearceyKernel::new(KernelSpec::pearcey(vec![-0.3, 0.4])?)?;
    let mut comm = 0.0f64;
    for (i, j, x, y) in [(0, 1, 0.3, -0.4), (1, 0, -0.2, 0.5), (1, 1, 0.8, 0.1)] {
        let lhs = two.entry(i, j, x, y, 1, 0)? + two.entry(i, j, x, y, 0, 1)?;
        comm = comm.max((lhs + two.phi(i, x, 0)? * two.psi(j, y, 0)?).abs());
    }
    checks.push(("first_commutator".into(), comm, 1e-7));

    let one = PearceyKernel::new(KernelSpec::pearcey(vec![0.25])?)?;
    let integ = (integrable_entry(0.4, -0.3, 0.25)? - one.entry(0, 0, 0.4, -0.3, 0, 0)?).abs();
    checks.push(("integrable_form".into(), integ, 1e-8));

    let model = PathModel::zero_start(vec![-0.7, 0.3, 1.1, 1.9], vec![0.3, 0.6])?;
    let sum = FiniteNKernel::new(model.clone(), Form::ZeroStart(ZeroStartMethod::Sum))?;
    let con = FiniteNKernel::new(model, Form::ZeroStart(ZeroStartMethod::Contour))?;
    let mut cross = 0.0f64;
    for (k, l, x, y) in [(0, 0, 0.1, 0.4), (0, 1, -0.5, 0.9), (1, 0, 1.2, 0.0)] {
        cross = cross.max((sum.h(k, l, x, y, 0, 0)? - con.h(k, l, x, y, 0, 0)?).abs());
    }
    checks.push(("finite_n_sum_vs_contour".into(), cross, 1e-8));

    let empty = NystromSystem::discretize(&one, RegionFamily::empty(1), 8)?.gap_probability()?;
    checks.push(("empty_gap".into(), (empty - 1.0).abs(), 1e-300));

    let regions = RegionFamily::intervals(&[[-0.5, 0.5]])?;
    let sys = NystromSystem::discretize(&one, regions.clone(), 24)?;
    let mut grad = 0.0f64;
    for (ep, g) in sys.log_det_gradient()? {
        let fd = log_det_derivative_fd(&one, &regions, &ep, 1e-4, 24)?;
        grad = grad.max((fd - g).abs());
    }
    checks.push(("log_det_gradient".into(), grad, 1e-5));

    let mut roots = 0.0f64;
    for r in 1..=6 {
        roots = roots.max(singularity_roots(r)?.invariant_residual());
    }
    checks.push(("root_power_sums".into(), roots, 1e-12));
    Ok(checks)
}

fn cmd_selftest() -> Result<Outcome> {
    let mut t = Table::new(&["check", "value", "tolerance", "pass"])?;
    let mut failed = false;
    for (name, v, tol) in selftest_checks()? {
        let ok = v <= tol;
        failed |= !ok;
        eprintln!("{} {name}: {v:.3e} (tol {tol:.0e})", if ok { "PASS" } else { "FAIL" });
        t.row(vec![name, fmt17(v), fmt17(tol), ok.to_string()])?;
    }
    let mut out = Outcome::table(t)?;
    out.failed_checks = failed;
    Ok(out)
}

fn dispatch(cli: &Cli) -> Result<Outcome> {
    match &cli.command {
        Command::Fn(a) => cmd_fn(a),
        Command::Kernel(a) => cmd_kernel(a),
        Command::Gap(a) => cmd_gap(a),
        Command::Converge(a) => cmd_converge(a),
        Command::PdeCheck(a) => cmd_pde(a),
        Command::Roots(a) => cmd_roots(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Selftest => cmd_selftest(),
    }
}

fn thread_count(flag: Option<usize>) -> Result<usize> {
    if let Some(n) = flag {
        return Ok(n);
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => v.trim().parse().map_err(|_| invalid(format!("{THREADS_ENV} must be a nonnegative integer"))),
        Err(_) => Ok(0),
    }
}

fn emit(cli: &Cli, out: &Outcome) -> Result<()> {
    match cli.output.as_ref().or(out.default_csv.as_ref()) {
        Some(path) => std::fs::write(path, &out.csv)?,
        None => std::io::stdout().lock().write_all(&out.csv)?,
    }
    if let Some((path, svg)) = &out.svg {
        std::fs::write(path, svg)?;
    }
    Ok(())
}

pub fn exit_code(e: &Error) -> i32 {
    if e.is_validation() || matches!(e, Error::Io(_) | Error::Csv(_)) {
        EXIT_VALIDATION
    } else {
        EXIT_NUMERIC
    }
}

/// Parse `argv` (program name first), run the subcommand and return the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
        }
    };
    let result = thread_count(cli.threads).and_then(|n| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| invalid(format!("cannot start thread pool: {e}")))?;
        pool.install(|| dispatch(&cli))
    });
    match result.and_then(|out| emit(&cli, &out).map(|_| out.failed_checks)) {
        Ok(false) => EXIT_OK,
        Ok(true) => {
            eprintln!("pearcey: one or more checks failed");
            EXIT_NUMERIC
        }
        Err(e) => {
            eprintln!("pearcey: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_digits() {
        let s = fmt17(std::f64::consts::PI);
        assert_eq!(s, "3.1415926535897931e0");
        assert_eq!(s.parse::<f64>().unwrap(), std::f64::consts::PI);
    }

    #[test]
    fn scenario_rejects_unknown_fields() {
        assert!(serde_json::from_str::<Scenario>(r#"{"kernal": {"taus": [0]}}"#).is_err());
        let sc: Scenario =
            serde_json::from_str(r#"{"kernel": {"taus": [0, 0.5]}, "regions": [[[-1, 1]], []]}"#).unwrap();
        sc.validate().unwrap();
        assert_eq!(sc.quadrature.nystrom_nodes, 32);
    }

    #[test]
    fn scenario_checks_region_count() {
        let sc: Scenario = serde_json::from_str(r#"{"kernel": {"taus": [0, 0.5]}, "regions": [[[-1, 1]]]}"#).unwrap();
        assert!(matches!(sc.validate(), Err(Error::Validation(_))));
        let sc: Scenario = serde_json::from_str(r#"{"kernel": {"taus": [0]}, "regions": []}"#).unwrap();
        assert!(sc.validate().is_ok());
        assert!(sc.regions_for(1).unwrap().is_empty());
    }

    #[test]
    fn exactly_one_kernel_source() {
        let sc: Scenario =
            serde_json::from_str(r#"{"kernel": {"taus": [0.5]}, "finite_n": {"ends": [-1, 1], "taus": [0.5]}}"#)
                .unwrap();
        assert!(sc.build_kernel().is_err());
    }

    #[test]
    fn selftest_passes() {
        for (name, v, tol) in selftest_checks().unwrap() {
            assert!(v <= tol, "{name}: {v}");
        }
    }
}
