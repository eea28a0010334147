//! Grid sweeps over the inequalities and identities satisfied by the killed
//! kernels, and the empirical envelope constants.
//!
//! All kernel work happens at the unit barrier: a grid at barrier `a` is
//! reduced to `(t/a^2, x/a, y/a)` and reported in the original coordinates.
//! Index `+-1/2` uses closed forms; every other index is solved once per
//! `(|mu|, t, x)` by the PDE and negative indices come from the reflection.

use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::exec::Execution;
use crate::hunt::{killed_kernel_via_hunt, HittingDensitySource, QuadratureConfig};
use crate::kernels::{
    check_index, log_brownian_killed_kernel, log_envelope, log_free_envelope, log_free_kernel,
    log_half_hitting_density_at, log_half_killed_kernel, log_half_killed_kernel_at, log_rewrite_rhs, KernelQuery,
};
use crate::logval::log1m_exp;
use crate::mc::{simulate_killed_histogram, McConfig};
use crate::pde::{hitting_density_flux_with_trust, hitting_probability, solve_killed_kernel_general, PdeConfig};
use crate::quadrature::{integrate, Piece, Tolerance};
use crate::special_fn::{log_bessel_i_scaled, BesselOrder};

pub const SCHEMA_VERSION: &str = "bkk-certify/1";

pub const SLACK_CLOSED_FORM: f64 = 1e-9;
pub const SLACK_PDE: f64 = 5e-3;
/// Identities between two PDE values (symmetry, reflection, scaling).
pub const SLACK_PDE_IDENTITY: f64 = 2e-3;
/// Hunt with a PDE flux against the PDE kernel, in log scale.
pub const SLACK_HUNT: f64 = 2e-2;
/// Absolute, on bin probabilities, on top of four standard errors.
pub const SLACK_MC: f64 = 1e-2;

/// Hunt cross-checks are skipped where `r/p_1` would amplify the flux error
/// past this factor.
const HUNT_MAX_AMPLIFICATION: f64 = 5.0;
/// Fine flux grid for the Hunt cross-check: points per decade and decades
/// below the smallest grid time.
const FLUX_POINTS_PER_DECADE: f64 = 40.0;
const FLUX_LEAD_DECADES: f64 = 2.0;
/// Half-width of the MC comparison bin, relative to `y - 1`.
const MC_BIN_HALF_WIDTH: f64 = 0.1;
/// Largest relative Richardson correction accepted for the hitting mass.
const MASS_MAX_CORRECTION: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ClosedForm,
    Hunt,
    Pde,
    Mc,
}

impl Method {
    /// Closed-form slack is relative to the size of the logs compared;
    /// `ln p` reaches 1e8 in magnitude on wide grids and rounds at 1e-16 of that.
    fn slack_at(self, scale: f64) -> f64 {
        match self {
            Method::ClosedForm => SLACK_CLOSED_FORM * scale.abs().max(1.0),
            _ => self.slack(),
        }
    }

    fn slack(self) -> f64 {
        match self {
            Method::ClosedForm => SLACK_CLOSED_FORM,
            Method::Pde => SLACK_PDE,
            Method::Hunt => SLACK_HUNT,
            Method::Mc => SLACK_MC,
        }
    }

    fn worse(self, other: Method) -> Method {
        self.max(other)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub mu_list: Vec<f64>,
    pub t_grid: Vec<f64>,
    pub x_grid: Vec<f64>,
    pub y_grid: Vec<f64>,
    pub a: f64,
    /// Barrier levels used by the scaling round-trip.
    pub scale_factors: Vec<f64>,
    pub pde: PdeConfig,
    pub quadrature: QuadratureConfig,
    pub hunt_fraction: f64,
    pub mc_fraction: f64,
    pub mc_paths: u64,
    pub seed: u64,
    /// `(t, x)` slices per index given independent reflection and scaling solves.
    pub identity_samples: usize,
    pub execution: Execution,
    pub record_cells: bool,
}

/// `n` points from `lo` to `hi`, evenly spaced in log scale.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n).map(|k| lo * (hi / lo).powf(k as f64 / (n - 1) as f64)).collect()
}

impl Default for GridSpec {
    fn default() -> Self {
        let off = log_grid(1e-3, 1e3, 12);
        let shifted: Vec<f64> = off.iter().map(|v| 1.0 + v).collect();
        GridSpec {
            mu_list: vec![-2.5, -1.0, -0.5, -0.25, 0.25, 0.5, 1.0, 2.5],
            t_grid: off,
            x_grid: shifted.clone(),
            y_grid: shifted,
            a: 1.0,
            scale_factors: vec![2.0, 10.0],
            pde: PdeConfig::default(),
            quadrature: QuadratureConfig::default(),
            hunt_fraction: 0.1,
            mc_fraction: 0.01,
            mc_paths: 20_000,
            seed: 0x5eed,
            identity_samples: 4,
            execution: Execution::Parallel,
            record_cells: true,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.mu_list.is_empty() {
            return Err(domain("mu_list must not be empty"));
        }
        for &mu in &self.mu_list {
            check_index(mu)?;
        }
        if !(self.a > 0.0) || !self.a.is_finite() {
            return Err(domain("a must be positive"));
        }
        for (name, g) in [("t_grid", &self.t_grid), ("x_grid", &self.x_grid), ("y_grid", &self.y_grid)] {
            if g.is_empty() {
                return Err(domain(format!("{name} must not be empty")));
            }
            if g.iter().any(|v| !v.is_finite() || !(*v > 0.0)) {
                return Err(domain(format!("{name} must hold positive finite values")));
            }
        }
        if self.x_grid.iter().any(|&x| !(x > self.a)) {
            return Err(domain("x must exceed a"));
        }
        if self.y_grid.iter().any(|&y| !(y > self.a)) {
            return Err(domain("y must exceed a"));
        }
        if self.scale_factors.iter().any(|c| !(*c > 0.0) || !c.is_finite()) {
            return Err(domain("scale factors must be positive"));
        }
        for (name, f) in [("hunt_fraction", self.hunt_fraction), ("mc_fraction", self.mc_fraction)] {
            if !(0.0..=1.0).contains(&f) {
                return Err(domain(format!("{name} must lie in [0, 1]")));
            }
        }
        if self.mc_fraction > 0.0 && self.mc_paths < 1000 {
            return Err(domain("mc_paths must be at least 1000"));
        }
        self.quadrature.validate()?;
        Ok(())
    }

    /// Reads `key = value` lines over the defaults. `#` starts a comment.
    /// Grids take a comma list or `lo..hi:n` (log spaced); a leading `a+`
    /// offsets every point by the barrier.
    pub fn parse_config(text: &str) -> Result<GridSpec> {
        let mut spec = GridSpec::default();
        let mut grids: Vec<(&str, String)> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| domain(format!("line {}: expected key = value", lineno + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            let bad = |what: &str| domain(format!("line {}: {key}: {what}", lineno + 1));
            let float = |v: &str| v.parse::<f64>().map_err(|_| bad("not a number"));
            let int = |v: &str| v.parse::<u64>().map_err(|_| bad("not an integer"));
            match key {
                "mu" => spec.mu_list = parse_list(value).map_err(|_| bad("not a number list"))?,
                "t" => grids.push(("t", value.to_string())),
                "x" => grids.push(("x", value.to_string())),
                "y" => grids.push(("y", value.to_string())),
                "a" => spec.a = float(value)?,
                "scale_factors" => spec.scale_factors = parse_list(value).map_err(|_| bad("not a number list"))?,
                "nodes" => spec.pde.nodes = int(value)? as usize,
                "time_steps" => spec.pde.time_steps = Some(int(value)? as usize),
                "theta" => spec.pde.theta = float(value)?,
                "domain_cap" => spec.pde.domain_cap = Some(float(value)?),
                "rel_tol" => spec.quadrature.rel_tol = float(value)?,
                "max_subdivisions" => spec.quadrature.max_subdivisions = int(value)? as usize,
                "hunt_fraction" => spec.hunt_fraction = float(value)?,
                "mc_fraction" => spec.mc_fraction = float(value)?,
                "mc_paths" => spec.mc_paths = int(value)?,
                "seed" => spec.seed = int(value)?,
                "identity_samples" => spec.identity_samples = int(value)? as usize,
                "execution" => {
                    spec.execution = match value {
                        "parallel" => Execution::Parallel,
                        "sequential" => Execution::Sequential,
                        _ => return Err(bad("expected parallel or sequential")),
                    }
                }
                "record_cells" => spec.record_cells = value.parse().map_err(|_| bad("expected true or false"))?,
                _ => return Err(domain(format!("line {}: unknown key {key}", lineno + 1))),
            }
        }
        for (name, value) in grids {
            let g = parse_grid(&value, spec.a).map_err(|e| domain(format!("{name}: {e}")))?;
            match name {
                "t" => spec.t_grid = g,
                "x" => spec.x_grid = g,
                _ => spec.y_grid = g,
            }
        }
        spec.validate()?;
        Ok(spec)
    }
}

fn parse_list(v: &str) -> std::result::Result<Vec<f64>, std::num::ParseFloatError> {
    v.split(',').map(|s| s.trim().parse::<f64>()).collect()
}

/// A comma list or `lo..hi:n` (log spaced), optionally prefixed by `a+`.
pub fn parse_grid(v: &str, a: f64) -> std::result::Result<Vec<f64>, String> {
    let (offset, body) = match v.strip_prefix("a+") {
        Some(rest) => (a, rest.trim()),
        None => (0.0, v),
    };
    let pts = if let Some((range, n)) = body.split_once(':') {
        let (lo, hi) = range.split_once("..").ok_or("range needs lo..hi:n")?;
        let lo: f64 = lo.trim().parse().map_err(|_| "bad range start")?;
        let hi: f64 = hi.trim().parse().map_err(|_| "bad range end")?;
        let n: usize = n.trim().parse().map_err(|_| "bad point count")?;
        if !(lo > 0.0 && hi >= lo) || n == 0 {
            return Err("range needs 0 < lo <= hi and n >= 1".into());
        }
        log_grid(lo, hi, n)
    } else {
        parse_list(body).map_err(|_| "not a number list")?
    };
    Ok(pts.into_iter().map(|p| p + offset).collect())
}

/// One evaluated cell. `nu` is the second index of two-index checks; `t`
/// and `y` are absent for checks that do not use them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub mu: f64,
    pub nu: Option<f64>,
    pub t: Option<f64>,
    pub x: f64,
    pub y: Option<f64>,
    pub a: f64,
    pub margin: f64,
    pub slack: f64,
    pub method: Method,
    pub failed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub check_id: String,
    pub description: String,
    pub hard: bool,
    /// Allowed margin per method.
    pub slack: BTreeMap<Method, f64>,
    pub cells_total: usize,
    pub cells_failed: usize,
    pub cells_skipped: usize,
    pub skip_reasons: BTreeMap<String, usize>,
    /// Largest margin seen: `ln lhs - ln rhs` for inequalities, the absolute
    /// log difference for identities.
    pub worst_margin: Option<f64>,
    /// `worst_margin` minus the slack that applied to it.
    pub worst_excess: Option<f64>,
    pub worst_cell: Option<CellRecord>,
    pub method_counts: BTreeMap<Method, usize>,
    pub cells: Vec<CellRecord>,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.cells_failed == 0
    }
}

struct Acc {
    res: CheckResult,
    record: bool,
    a: f64,
}

/// Where a cell sits, in the original coordinates.
#[derive(Clone, Copy)]
struct At {
    mu: f64,
    nu: Option<f64>,
    t: Option<f64>,
    x: f64,
    y: Option<f64>,
}

impl Acc {
    fn new(id: &str, description: &str, methods: &[(Method, f64)], spec: &GridSpec) -> Acc {
        Acc {
            res: CheckResult {
                check_id: id.into(),
                description: description.into(),
                hard: true,
                slack: methods.iter().copied().collect(),
                cells_total: 0,
                cells_failed: 0,
                cells_skipped: 0,
                skip_reasons: BTreeMap::new(),
                worst_margin: None,
                worst_excess: None,
                worst_cell: None,
                method_counts: BTreeMap::new(),
                cells: Vec::new(),
            },
            record: spec.record_cells,
            a: spec.a,
        }
    }

    fn skip(&mut self, reason: &str) {
        self.res.cells_total += 1;
        self.res.cells_skipped += 1;
        *self.res.skip_reasons.entry(reason.to_string()).or_default() += 1;
    }

    fn eval(&mut self, at: At, margin: f64, method: Method, slack: f64) {
        if !margin.is_finite() {
            self.skip("non-finite margin");
            return;
        }
        let failed = margin > slack;
        let rec = CellRecord {
            mu: at.mu,
            nu: at.nu,
            t: at.t,
            x: at.x,
            y: at.y,
            a: self.a,
            margin,
            slack,
            method,
            failed,
        };
        let r = &mut self.res;
        r.cells_total += 1;
        r.cells_failed += failed as usize;
        *r.method_counts.entry(method).or_default() += 1;
        // the worst cell is the one furthest past (or closest to) its own slack
        if r.worst_excess.map_or(true, |w| margin - slack > w) {
            r.worst_excess = Some(margin - slack);
            r.worst_margin = Some(margin);
            r.worst_cell = Some(rec.clone());
        }
        if self.record {
            r.cells.push(rec);
        }
    }

    fn done(self) -> CheckResult {
        self.res
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Val {
    Ok(f64, Method),
    Skip(&'static str),
}

/// Kernel values on the reduced grid.
struct KernelData {
    t: Vec<f64>,
    x: Vec<f64>,
    y: Vec<f64>,
    /// `x_in_y[i]` is the index of `x[i]` in the y grid, if present
    x_in_y: Vec<Option<usize>>,
    y_in_x: Vec<Option<usize>>,
    /// per PDE index `m > 0`, the values looked up directly on its slices
    raw: HashMap<u64, Vec<Option<f64>>>,
    /// per PDE index, a reason for each `(t, x)` whose solve failed
    failed: HashMap<u64, Vec<Option<&'static str>>>,
    /// PDE bin mass for the MC cells
    bins: HashMap<(u64, usize), f64>,
}

fn key(m: f64) -> u64 {
    m.to_bits()
}

fn is_half(mu: f64) -> bool {
    mu.abs() == 0.5
}

fn solve_reason(e: &Error) -> &'static str {
    match e {
        Error::DomainTooSmall { .. } => "pde domain too small",
        Error::StabilityFailure { .. } => "pde stability failure",
        Error::Domain(_) => "pde configuration rejected",
        _ => "pde solve failed",
    }
}

fn index_of(grid: &[f64], v: f64) -> Option<usize> {
    grid.iter().position(|&g| g == v)
}

fn mc_bin(y: f64) -> (f64, f64) {
    let h = MC_BIN_HALF_WIDTH * (y - 1.0);
    (y - h, y + h)
}

impl KernelData {
    fn cell(&self, ti: usize, xi: usize, yk: usize) -> usize {
        (ti * self.x.len() + xi) * self.y.len() + yk
    }

    fn compute(spec: &GridSpec, pde_indices: &[f64], mc_cells: &[(u64, usize)]) -> KernelData {
        let a = spec.a;
        let t: Vec<f64> = spec.t_grid.iter().map(|v| v / (a * a)).collect();
        let x: Vec<f64> = spec.x_grid.iter().map(|v| v / a).collect();
        let y: Vec<f64> = spec.y_grid.iter().map(|v| v / a).collect();
        let x_in_y = x.iter().map(|&v| index_of(&y, v)).collect();
        let y_in_x = y.iter().map(|&v| index_of(&x, v)).collect();
        let (nt, nx, ny) = (t.len(), x.len(), y.len());
        let mut mc_by_slice: HashMap<(u64, usize), Vec<usize>> = HashMap::new();
        for &(m, c) in mc_cells {
            mc_by_slice.entry((m, c / ny)).or_default().push(c);
        }
        let jobs: Vec<(f64, usize, usize)> = pde_indices
            .iter()
            .flat_map(|&m| (0..nt).flat_map(move |ti| (0..nx).map(move |xi| (m, ti, xi))))
            .collect();
        let rows = spec.execution.map(jobs.len(), |j| {
            let (m, ti, xi) = jobs[j];
            match solve_killed_kernel_general(m, 1.0, t[ti], x[xi], &spec.pde) {
                Ok(slice) => {
                    let vals: Vec<Option<f64>> = y.iter().map(|&yy| slice.log_value_at(yy)).collect();
                    let slice_id = ti * nx + xi;
                    let bins: Vec<(usize, f64)> = mc_by_slice
                        .get(&(key(m), slice_id))
                        .map(|cs| {
                            cs.iter()
                                .map(|&c| {
                                    let (lo, hi) = mc_bin(y[c % ny]);
                                    (c, slice.integrate(|v| if v > lo && v <= hi { 1.0 } else { 0.0 }))
                                })
                                .collect()
                        })
                        .unwrap_or_default();
                    (Ok(vals), bins)
                }
                Err(e) => (Err(solve_reason(&e)), Vec::new()),
            }
        });
        let mut raw: HashMap<u64, Vec<Option<f64>>> = HashMap::new();
        let mut failed: HashMap<u64, Vec<Option<&'static str>>> = HashMap::new();
        let mut bins = HashMap::new();
        for (&(m, _, _), (row, b)) in jobs.iter().zip(rows) {
            let r = raw.entry(key(m)).or_default();
            let f = failed.entry(key(m)).or_default();
            match row {
                Ok(vals) => {
                    r.extend(vals);
                    f.push(None);
                }
                Err(reason) => {
                    r.extend(std::iter::repeat(None).take(ny));
                    f.push(Some(reason));
                }
            }
            for (c, mass) in b {
                bins.insert((key(m), c), mass);
            }
        }
        KernelData { t, x, y, x_in_y, y_in_x, raw, failed, bins }
    }

    fn unit_query(&self, ti: usize, xi: usize, yk: usize) -> KernelQuery {
        KernelQuery { t: self.t[ti], x: self.x[xi], y: self.y[yk], a: 1.0 }
    }

    /// Direct PDE lookup for `m > 0`, without the symmetry fallback.
    fn raw(&self, m: f64, ti: usize, xi: usize, yk: usize) -> Option<f64> {
        self.raw.get(&key(m)).and_then(|r| r[self.cell(ti, xi, yk)])
    }

    /// `ln p_1^(m)` on the reduced grid for `m > 0`.
    fn positive(&self, m: f64, ti: usize, xi: usize, yk: usize) -> Val {
        let q = self.unit_query(ti, xi, yk);
        if m == 0.5 {
            return match log_half_killed_kernel(&q) {
                Ok(v) if v.ln().is_finite() => Val::Ok(v.ln(), Method::ClosedForm),
                _ => Val::Skip("closed form underflow"),
            };
        }
        let Some(fail) = self.failed.get(&key(m)) else {
            return Val::Skip("no kernel method for this index");
        };
        if let Some(v) = self.raw(m, ti, xi, yk) {
            return finite(v);
        }
        // p_1(t,x,y) = (y/x)^{2m+1} p_1(t,y,x) from the slice started at y
        if let (Some(xs), Some(xk)) = (self.y_in_x[yk], self.x_in_y[xi]) {
            if let Some(v) = self.raw(m, ti, xs, xk) {
                return finite(v + (2.0 * m + 1.0) * (q.y / q.x).ln());
            }
        }
        match fail[ti * self.x.len() + xi] {
            Some(reason) => Val::Skip(reason),
            None => Val::Skip("beyond pde resolved depth"),
        }
    }

    /// `ln p_1^(mu)` for any nonzero index; negative ones through the reflection.
    fn value(&self, mu: f64, ti: usize, xi: usize, yk: usize) -> Val {
        let m = mu.abs();
        match self.positive(m, ti, xi, yk) {
            Val::Ok(v, method) if mu < 0.0 => Val::Ok(v + 2.0 * m * (self.x[xi] / self.y[yk]).ln(), method),
            other => other,
        }
    }
}

fn finite(v: f64) -> Val {
    if v.is_finite() {
        Val::Ok(v, Method::Pde)
    } else {
        Val::Skip("kernel underflow")
    }
}

/// Per-regime extremes of the envelope ratio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeStats {
    /// `xy/t >= 1`
    pub xy_over_t_ge_1: bool,
    /// `(x-a)(y-a)/t >= 1`
    pub barrier_over_t_ge_1: bool,
    pub cells: usize,
    pub min_log_ratio: Option<f64>,
    pub max_log_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeRow {
    pub mu: f64,
    pub cells: usize,
    pub cells_skipped: usize,
    pub skip_reasons: BTreeMap<String, usize>,
    pub method_counts: BTreeMap<Method, usize>,
    pub min_log_ratio: Option<f64>,
    pub max_log_ratio: Option<f64>,
    pub spread: Option<f64>,
    pub argmin: Option<KernelQuery>,
    pub argmax: Option<KernelQuery>,
    pub regimes: Vec<RegimeStats>,
    /// `ln(p_1/p) - ln[(1 ^ (x-a)(y-a)/t)(1 v t/xy)]`
    pub rewrite_min: Option<f64>,
    pub rewrite_max: Option<f64>,
    pub rewrite_spread: Option<f64>,
    /// Largest `|(ln p_1 - ln env) - (ln(p_1/p) - ln rhs) - (ln p - ln env_free)|`.
    pub identity_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeReport {
    pub rows: Vec<EnvelopeRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: String,
    pub spec: Option<GridSpec>,
    pub checks: Vec<CheckResult>,
    pub envelope: Option<EnvelopeReport>,
}

impl Report {
    pub fn hard_checks_passed(&self) -> bool {
        self.checks.iter().filter(|c| c.hard).all(CheckResult::passed)
    }
}

fn pde_indices(spec: &GridSpec) -> Vec<f64> {
    let mut out: Vec<f64> = spec.mu_list.iter().map(|m| m.abs()).filter(|&m| m != 0.5).collect();
    out.sort_by(f64::total_cmp);
    out.dedup();
    out
}

/// The orders of the positive-index comparisons: every `|mu|` plus `1/2`.
fn positive_indices(spec: &GridSpec) -> Vec<f64> {
    let mut out: Vec<f64> = spec.mu_list.iter().map(|m| m.abs()).chain([0.5]).collect();
    out.sort_by(f64::total_cmp);
    out.dedup();
    out
}

/// Bernoulli subsample of `0..n`, reproducible from the seed and a salt.
fn subsample(n: usize, fraction: f64, seed: u64, salt: u64) -> Vec<usize> {
    if fraction <= 0.0 {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ salt);
    (0..n).filter(|_| rng.random::<f64>() < fraction).collect()
}

struct Suite<'a> {
    spec: &'a GridSpec,
    data: KernelData,
    pde: Vec<f64>,
    hunt_cells: Vec<(u64, usize)>,
    mc_cells: Vec<(u64, usize)>,
}

impl<'a> Suite<'a> {
    fn build(spec: &'a GridSpec) -> Result<Suite<'a>> {
        spec.validate()?;
        let pde = pde_indices(spec);
        let n = spec.t_grid.len() * spec.x_grid.len() * spec.y_grid.len();
        let pick = |fraction: f64, salt: u64| -> Vec<(u64, usize)> {
            pde.iter()
                .enumerate()
                .flat_map(|(i, &m)| {
                    subsample(n, fraction, spec.seed, salt.wrapping_add(i as u64)).into_iter().map(move |c| (key(m), c))
                })
                .collect()
        };
        let hunt_cells = pick(spec.hunt_fraction, 0x4855_4e54);
        let mc_cells = pick(spec.mc_fraction, 0x4d43_0000);
        let data = KernelData::compute(spec, &pde, &mc_cells);
        Ok(Suite { spec, data, pde, hunt_cells, mc_cells })
    }

    fn dims(&self) -> (usize, usize, usize) {
        (self.data.t.len(), self.data.x.len(), self.data.y.len())
    }

    fn at(&self, mu: f64, nu: Option<f64>, ti: usize, xi: usize, yk: usize) -> At {
        At {
            mu,
            nu,
            t: Some(self.spec.t_grid[ti]),
            x: self.spec.x_grid[xi],
            y: Some(self.spec.y_grid[yk]),
        }
    }

    fn each_cell(&self, mut f: impl FnMut(usize, usize, usize)) {
        let (nt, nx, ny) = self.dims();
        for ti in 0..nt {
            for xi in 0..nx {
                for yk in 0..ny {
                    f(ti, xi, yk);
                }
            }
        }
    }

    fn bessel_ratio_bounds(&self) -> CheckResult {
        let mut acc = Acc::new(
            "bessel_ratio_bounds",
            "I(v)/I(u) between (u/v)^m e^{v-u} (order m >= 1/2) and (v/u)^m e^{v-u} at u = x/t <= v = y/t",
            &[(Method::ClosedForm, SLACK_CLOSED_FORM)],
            self.spec,
        );
        let mut orders: Vec<f64> = self.spec.mu_list.iter().map(|m| m.abs()).collect();
        orders.sort_by(f64::total_cmp);
        orders.dedup();
        for &m in &orders {
            let order = BesselOrder::new(m).expect("nonzero index");
            self.each_cell(|ti, xi, yk| {
                let (t, x, y) = (self.data.t[ti], self.data.x[xi], self.data.y[yk]);
                if y < x {
                    return;
                }
                let (u, v) = (x / t, y / t);
                let at = self.at(m, None, ti, xi, yk);
                let scaled = match (log_bessel_i_scaled(order, v), log_bessel_i_scaled(order, u)) {
                    (Ok(a), Ok(b)) => a - b,
                    _ => return acc.skip("bessel evaluation failed"),
                };
                let power = m * (v / u).ln();
                acc.eval(at, scaled - power, Method::ClosedForm, SLACK_CLOSED_FORM);
                if m >= 0.5 {
                    acc.eval(at, -power - scaled, Method::ClosedForm, SLACK_CLOSED_FORM);
                }
            });
        }
        acc.done()
    }

    fn below_free(&self) -> CheckResult {
        let mut acc = Acc::new(
            "killed_below_free",
            "p_1 <= p",
            &[(Method::ClosedForm, SLACK_CLOSED_FORM), (Method::Pde, SLACK_PDE)],
            self.spec,
        );
        for &mu in &self.spec.mu_list {
            self.each_cell(|ti, xi, yk| {
                let q = self.data.unit_query(ti, xi, yk);
                match self.data.value(mu, ti, xi, yk) {
                    Val::Ok(v, method) => {
                        let lp = log_free_kernel(mu, q.t, q.x, q.y).expect("valid query").ln();
                        acc.eval(self.at(mu, None, ti, xi, yk), v - lp, method, method.slack_at(lp));
                    }
                    Val::Skip(r) => acc.skip(r),
                }
            });
        }
        acc.done()
    }

    /// Runs `margin(lp_mu, lp_nu, q)` over every cell for each `(mu, nu)`.
    fn pairwise(
        &self,
        acc: &mut Acc,
        pairs: &[(f64, f64)],
        keep: impl Fn(&KernelQuery) -> bool,
        margin: impl Fn(f64, f64, f64, f64, &KernelQuery) -> f64,
    ) {
        for &(mu, nu) in pairs {
            self.each_cell(|ti, xi, yk| {
                let q = self.data.unit_query(ti, xi, yk);
                if !keep(&q) {
                    return;
                }
                match (self.data.value(mu, ti, xi, yk), self.data.value(nu, ti, xi, yk)) {
                    (Val::Ok(a, ma), Val::Ok(b, mb)) => {
                        let method = ma.worse(mb);
                        let slack = ma.slack_at(a) + mb.slack_at(b);
                        acc.eval(self.at(mu, Some(nu), ti, xi, yk), margin(mu, nu, a, b, &q), method, slack);
                    }
                    (Val::Skip(r), _) | (_, Val::Skip(r)) => acc.skip(r),
                }
            });
        }
    }

    fn index_ordering(&self) -> CheckResult {
        let mut acc = Acc::new(
            "index_ordering",
            "(x/y)^{mu-1/2} p_1^(mu) <= p_1^(1/2) <= (x/y)^{nu-1/2} p_1^(nu), mu >= 1/2 >= nu > 0",
            &[(Method::ClosedForm, SLACK_CLOSED_FORM), (Method::Pde, SLACK_PDE)],
            self.spec,
        );
        let idx = positive_indices(self.spec);
        let pairs: Vec<(f64, f64)> = idx.iter().filter(|&&m| m != 0.5).map(|&m| (m, 0.5)).collect();
        // (m, 1/2) with m > 1/2 is the left inequality, with m < 1/2 the right one
        self.pairwise(&mut acc, &pairs, |_| true, |m, h, lm, lh, q| {
            let r = (q.x / q.y).ln();
            if m > h {
                (m - 0.5) * r + lm - lh
            } else {
                lh - (m - 0.5) * r - lm
            }
        });
        acc.done()
    }

    fn ordered_pairs(&self) -> Vec<(f64, f64)> {
        let idx = positive_indices(self.spec);
        let mut out = Vec::new();
        for (i, &nu) in idx.iter().enumerate() {
            for &mu in &idx[i + 1..] {
                out.push((mu, nu));
            }
        }
        out
    }

    fn index_comparison(&self) -> CheckResult {
        let mut acc = Acc::new(
            "index_comparison",
            "p_1^(mu) <= (y/x)^{mu-nu} p_1^(nu), mu >= nu > 0",
            &[(Method::ClosedForm, SLACK_CLOSED_FORM), (Method::Pde, SLACK_PDE)],
            self.spec,
        );
        self.pairwise(&mut acc, &self.ordered_pairs(), |_| true, |mu, nu, lm, ln, q| {
            lm - (mu - nu) * (q.y / q.x).ln() - ln
        });
        acc.done()
    }

    fn small_time_lower(&self) -> CheckResult {
        let mut acc = Acc::new(
            "small_time_lower",
            "p_1^(mu) >= exp(-(mu^2-nu^2)/2) (y/x)^{mu-nu} p_1^(nu), t <= 1, mu >= nu > 0",
            &[(Method::ClosedForm, SLACK_CLOSED_FORM), (Method::Pde, SLACK_PDE)],
            self.spec,
        );
        self.pairwise(&mut acc, &self.ordered_pairs(), |q| q.t <= 1.0, |mu, nu, lm, ln, q| {
            -(mu * mu - nu * nu) / 2.0 + (mu - nu) * (q.y / q.x).ln() + ln - lm
        });
        acc.done()
    }

    /// Hitting densities on the reduced `(t, x)` grid for every PDE index,
    /// plus the fine tables used by the Hunt cross-check.
    fn flux_tables(&self) -> HashMap<(u64, usize), Result<(HittingDensitySource, Vec<bool>)>> {
        let t = &self.data.t;
        let lo = t.iter().copied().fold(f64::INFINITY, f64::min) * 10f64.powf(-FLUX_LEAD_DECADES);
        let hi = t.iter().copied().fold(0.0, f64::max);
        let n = ((hi / lo).log10() * FLUX_POINTS_PER_DECADE).ceil() as usize + 1;
        let mut s = log_grid(lo, hi, n.max(2));
        s.extend(t.iter().copied());
        s.sort_by(f64::total_cmp);
        s.dedup();
        let jobs: Vec<(f64, usize)> =
            self.pde.iter().flat_map(|&m| (0..self.data.x.len()).map(move |xi| (m, xi))).collect();
        let out = self.spec.execution.map(jobs.len(), |j| {
            let (m, xi) = jobs[j];
            hitting_density_flux_with_trust(m, self.data.x[xi], &self.spec.pde, &s)
        });
        jobs.iter().map(|&(m, xi)| (key(m), xi)).zip(out).collect()
    }

    fn hitting_ordering(&self, flux: &HashMap<(u64, usize), Result<(HittingDensitySource, Vec<bool>)>>) -> CheckResult {
        let mut acc = Acc::new(
            "hitting_ordering",
            "x^{mu-1/2} q^(mu) <= q^(1/2) <= x^{nu-1/2} q^(nu), mu >= 1/2, |nu| <= 1/2",
            &[(Method::ClosedForm, SLACK_CLOSED_FORM), (Method::Pde, SLACK_PDE)],
            self.spec,
        );
        let sides: Vec<f64> = self.spec.mu_list.iter().copied().filter(|&m| m > 0.5 || (m.abs() <= 0.5 && m != 0.5)).collect();
        for &mu in &sides {
            let m = mu.abs();
            for ti in 0..self.data.t.len() {
                for xi in 0..self.data.x.len() {
                    let (s, x) = (self.data.t[ti], self.data.x[xi]);
                    let lq_half = log_half_hitting_density_at(x, 1.0, s);
                    let lq = if m == 0.5 {
                        Some((lq_half, Method::ClosedForm))
                    } else {
                        match flux.get(&(key(m), xi)) {
                            Some(Ok((src, trusted))) => {
                                let tab = src.table.as_ref().expect("tabulated");
                                let i = index_of(&tab.s, s).expect("grid times are in the table");
                                trusted[i].then_some((tab.log_q[i], Method::Pde))
                            }
                            Some(Err(e)) => {
                                acc.skip(solve_reason(e));
                                continue;
                            }
                            None => {
                                acc.skip("no kernel method for this index");
                                continue;
                            }
                        }
                    };
                    let Some((lq, method)) = lq else {
                        acc.skip("flux not resolved");
                        continue;
                    };
                    if !lq.is_finite() || !lq_half.is_finite() {
                        acc.skip("hitting density underflow");
                        continue;
                    }
                    // q^(-m) = x^{2m} q^(m)
                    let lq = if mu < 0.0 { lq + 2.0 * m * x.ln() } else { lq };
                    let margin = if mu > 0.5 {
                        (mu - 0.5) * x.ln() + lq - lq_half
                    } else {
                        lq_half - (mu - 0.5) * x.ln() - lq
                    };
                    let at = At { mu, nu: Some(0.5), t: Some(self.spec.t_grid[ti]), x: self.spec.x_grid[xi], y: None };
                    acc.eval(at, margin, method, method.slack_at(lq_half));
                }
            }
        }
        acc.done()
    }

    fn symmetry_reflection(&self) -> CheckResult {
        let mut acc = Acc::new(
            "symmetry_reflection",
            "p_1(t,x,y) = (y/x)^{2mu+1} p_1(t,y,x) and p_1^(-mu) = (x/y)^{2mu} p_1^(mu)",
            &[(Method::ClosedForm, SLACK_CLOSED_FORM), (Method::Pde, SLACK_PDE_IDENTITY)],
            self.spec,
        );
        for &mu in &self.spec.mu_list {
            let m = mu.abs();
            self.each_cell(|ti, xi, yk| {
                let q = self.data.unit_query(ti, xi, yk);
                let at = self.at(mu, None, ti, xi, yk);
                let power = (2.0 * mu + 1.0) * (q.y / q.x).ln();
                if is_half(mu) {
                    let f = |q: &KernelQuery| {
                        if mu > 0.0 {
                            log_half_killed_kernel(q)
                        } else {
                            log_brownian_killed_kernel(q)
                        }
                        .map(|v| v.ln())
                        .unwrap_or(f64::NAN)
                    };
                    let lhs = f(&q);
                    let d = lhs - power - f(&q.swapped());
                    return acc.eval(at, d.abs(), Method::ClosedForm, Method::ClosedForm.slack_at(lhs));
                }
                let (Some(xs), Some(xk)) = (self.data.y_in_x[yk], self.data.x_in_y[xi]) else {
                    return acc.skip("swapped start not on the x grid");
                };
                match (self.data.raw(m, ti, xi, yk), self.data.raw(m, ti, xs, xk)) {
                    (Some(a), Some(b)) if a.is_finite() && b.is_finite() => {
                        // a negative index reflects both sides by the same factor
                        let shift = if mu < 0.0 { 2.0 * m * (q.x / q.y).ln() } else { 0.0 };
                        let back = if mu < 0.0 { 2.0 * m * (q.y / q.x).ln() } else { 0.0 };
                        let d = (a + shift) - power - (b + back);
                        acc.eval(at, d.abs(), Method::Pde, SLACK_PDE_IDENTITY);
                    }
                    _ => acc.skip("beyond pde resolved depth"),
                }
            });
            if mu > 0.0 && self.spec.mu_list.contains(&-mu) {
                self.reflection(&mut acc, m);
            }
        }
        acc.done()
    }

    /// `(t, x)` slices given independent solves, per index.
    fn identity_slices(&self, m: f64) -> Vec<(usize, usize)> {
        let (nt, nx, _) = self.dims();
        let mut rng = ChaCha8Rng::seed_from_u64(self.spec.seed ^ m.to_bits());
        let mut all: Vec<(usize, usize)> = (0..nt).flat_map(|ti| (0..nx).map(move |xi| (ti, xi))).collect();
        let k = self.spec.identity_samples.min(all.len());
        for i in 0..k {
            let j = rng.random_range(i..all.len());
            all.swap(i, j);
        }
        all.truncate(k);
        all
    }

    /// Independent solves compared with the lookups at `y`; `expected` gives
    /// the reference log value and `at_y` the node where the solve is read.
    fn compare_solves(
        &self,
        acc: &mut Acc,
        mu: f64,
        solves: &[(usize, usize, f64)],
        solve: impl Fn(usize, usize, f64) -> Result<crate::pde::KernelSlice> + Sync,
        at_y: impl Fn(f64, f64) -> f64,
        expected: impl Fn(usize, usize, usize, f64) -> Option<f64>,
    ) {
        let slices = self.spec.execution.map(solves.len(), |j| {
            let (ti, xi, c) = solves[j];
            solve(ti, xi, c)
        });
        for (&(ti, xi, c), slice) in solves.iter().zip(slices) {
            let slice = match slice {
                Ok(s) => s,
                Err(e) => {
                    for _ in 0..self.data.y.len() {
                        acc.skip(solve_reason(&e));
                    }
                    continue;
                }
            };
            for yk in 0..self.data.y.len() {
                let got = slice.log_value_at(at_y(self.data.y[yk], c));
                match (got, expected(ti, xi, yk, c)) {
                    (Some(g), Some(e)) if g.is_finite() && e.is_finite() => {
                        acc.eval(self.at(mu, None, ti, xi, yk), (g - e).abs(), Method::Pde, SLACK_PDE_IDENTITY)
                    }
                    _ => acc.skip("beyond pde resolved depth"),
                }
            }
        }
    }

    fn reflection(&self, acc: &mut Acc, m: f64) {
        if m == 0.5 {
            self.each_cell(|ti, xi, yk| {
                let q = self.data.unit_query(ti, xi, yk);
                let at = self.at(-m, None, ti, xi, yk);
                match (log_brownian_killed_kernel(&q), log_half_killed_kernel(&q)) {
                    (Ok(b), Ok(h)) => {
                        let d = b.ln() - (q.x / q.y).ln() - h.ln();
                        acc.eval(at, d.abs(), Method::ClosedForm, Method::ClosedForm.slack_at(b.ln()))
                    }
                    _ => acc.skip("closed form underflow"),
                }
            });
            return;
        }
        let solves: Vec<(usize, usize, f64)> = self.identity_slices(m).into_iter().map(|(ti, xi)| (ti, xi, 1.0)).collect();
        self.compare_solves(
            acc,
            -m,
            &solves,
            |ti, xi, _| solve_killed_kernel_general(-m, 1.0, self.data.t[ti], self.data.x[xi], &self.spec.pde),
            |y, _| y,
            |ti, xi, yk, _| self.data.raw(m, ti, xi, yk).map(|v| v + 2.0 * m * (self.data.x[xi] / self.data.y[yk]).ln()),
        );
    }

    fn scaling(&self) -> CheckResult {
        let mut acc = Acc::new(
            "scaling",
            "p_c(c^2 t, c x, c y) = p_1(t,x,y) / c",
            &[(Method::ClosedForm, SLACK_CLOSED_FORM), (Method::Pde, SLACK_PDE_IDENTITY)],
            self.spec,
        );
        for &mu in &self.spec.mu_list {
            let m = mu.abs();
            for &c in &self.spec.scale_factors {
                if is_half(mu) {
                    self.each_cell(|ti, xi, yk| {
                        let q = self.data.unit_query(ti, xi, yk);
                        let at = self.at(mu, None, ti, xi, yk);
                        let (t, x, y) = (c * c * q.t, c * q.x, c * q.y);
                        let (lhs, rhs) = if mu > 0.0 {
                            (log_half_killed_kernel_at(t, x, y, c), log_half_killed_kernel(&q))
                        } else {
                            // Brownian motion is translation invariant
                            let moved = KernelQuery { t, x: x - c + 1.0, y: y - c + 1.0, a: 1.0 };
                            (log_brownian_killed_kernel(&moved).map_or(f64::NAN, |v| v.ln()), log_brownian_killed_kernel(&q))
                        };
                        match rhs {
                            Ok(r) if r.ln().is_finite() && lhs.is_finite() => {
                                acc.eval(at, (lhs - (r.ln() - c.ln())).abs(), Method::ClosedForm, Method::ClosedForm.slack_at(lhs))
                            }
                            _ => acc.skip("closed form underflow"),
                        }
                    });
                    continue;
                }
                let solves: Vec<(usize, usize, f64)> =
                    self.identity_slices(m).into_iter().map(|(ti, xi)| (ti, xi, c)).collect();
                self.compare_solves(
                    &mut acc,
                    mu,
                    &solves,
                    |ti, xi, c| {
                        solve_killed_kernel_general(mu, c, c * c * self.data.t[ti], c * self.data.x[xi], &self.spec.pde)
                    },
                    |y, c| c * y,
                    |ti, xi, yk, c| match self.data.value(mu, ti, xi, yk) {
                        Val::Ok(v, _) => Some(v - c.ln()),
                        Val::Skip(_) => None,
                    },
                );
            }
        }
        acc.done()
    }

    fn hitting_mass(&self) -> CheckResult {
        let mut acc = Acc::new(
            "hitting_mass",
            "int q^(mu) = x^{-2 mu} for mu > 0 and 1 for mu < 0",
            &[(Method::ClosedForm, SLACK_CLOSED_FORM), (Method::Pde, SLACK_PDE)],
            self.spec,
        );
        let fine = PdeConfig { nodes: 2 * self.spec.pde.nodes, ..self.spec.pde };
        let jobs: Vec<(f64, usize)> =
            self.pde.iter().flat_map(|&m| (0..self.data.x.len()).map(move |xi| (m, xi))).collect();
        let masses = self.spec.execution.map(jobs.len(), |j| {
            let (m, xi) = jobs[j];
            let x = self.data.x[xi];
            let coarse = hitting_probability(m, x, &self.spec.pde)?;
            let fine = hitting_probability(m, x, &fine)?;
            Ok::<_, Error>((fine + (fine - coarse) / 3.0, (fine - coarse) / (3.0 * fine)))
        });
        let table: HashMap<(u64, usize), Result<(f64, f64)>> =
            jobs.iter().map(|&(m, xi)| (key(m), xi)).zip(masses).collect();
        for &mu in &self.spec.mu_list {
            let m = mu.abs();
            for xi in 0..self.data.x.len() {
                let x = self.data.x[xi];
                let at = At { mu, nu: None, t: None, x: self.spec.x_grid[xi], y: None };
                let (mass, method) = if m == 0.5 {
                    match half_hitting_mass(x, &self.spec.quadrature) {
                        Ok(v) => (v, Method::ClosedForm),
                        Err(_) => {
                            acc.skip("quadrature failed");
                            continue;
                        }
                    }
                } else {
                    match &table[&(key(m), xi)] {
                        Ok((v, corr)) if corr.abs() <= MASS_MAX_CORRECTION => (v.ln(), Method::Pde),
                        Ok(_) => {
                            acc.skip("hitting mass not converged in the grid");
                            continue;
                        }
                        Err(e) => {
                            acc.skip(solve_reason(e));
                            continue;
                        }
                    }
                };
                // int q^(-m) = x^{2m} int q^(m)
                let (mass, target) = if mu < 0.0 { (mass + 2.0 * m * x.ln(), 0.0) } else { (mass, -2.0 * m * x.ln()) };
                acc.eval(at, (mass - target).abs(), method, method.slack());
            }
        }
        acc.done()
    }

    fn lower_bound_seed(&self) -> CheckResult {
        let mut acc = Acc::new(
            "lower_bound_seed",
            "p_1/p >= 1 - x^{-2mu} exp((x^2-1)/t) where positive and (y-1)^2/t >= 2(mu+1), mu > 0",
            &[(Method::ClosedForm, SLACK_CLOSED_FORM), (Method::Pde, SLACK_PDE)],
            self.spec,
        );
        for &mu in self.spec.mu_list.iter().filter(|&&m| m > 0.0) {
            self.each_cell(|ti, xi, yk| {
                let q = self.data.unit_query(ti, xi, yk);
                let expo = -2.0 * mu * q.x.ln() + (q.x * q.x - 1.0) / q.t;
                if (q.y - 1.0).powi(2) / q.t < 2.0 * (mu + 1.0) || !(expo < 0.0) {
                    return;
                }
                match self.data.value(mu, ti, xi, yk) {
                    Val::Ok(v, method) => {
                        let lp = log_free_kernel(mu, q.t, q.x, q.y).expect("valid query").ln();
                        acc.eval(self.at(mu, None, ti, xi, yk), log1m_exp(expo) - (v - lp), method, method.slack_at(lp));
                    }
                    Val::Skip(r) => acc.skip(r),
                }
            });
        }
        acc.done()
    }

    fn hunt_cross_check(&self, flux: &HashMap<(u64, usize), Result<(HittingDensitySource, Vec<bool>)>>) -> CheckResult {
        let mut acc = Acc::new(
            "hunt_cross_check",
            "Hunt formula with the PDE flux against the PDE kernel",
            &[(Method::Hunt, SLACK_HUNT)],
            self.spec,
        );
        let ny = self.data.y.len();
        let nx = self.data.x.len();
        let index: HashMap<u64, f64> = self.pde.iter().map(|&m| (key(m), m)).collect();
        let outcomes = self.spec.execution.map(self.hunt_cells.len(), |j| {
            let (k, c) = self.hunt_cells[j];
            let m = index[&k];
            let (ti, xi, yk) = (c / (nx * ny), (c / ny) % nx, c % ny);
            let Val::Ok(reference, _) = self.data.positive(m, ti, xi, yk) else {
                return Err("no pde reference");
            };
            let (src, trusted) = match flux.get(&(k, xi)) {
                Some(Ok(f)) => f,
                _ => return Err("flux solve failed"),
            };
            let tab = src.table.as_ref().expect("tabulated");
            let i = index_of(&tab.s, self.data.t[ti]).expect("grid times are in the table");
            if !trusted[i] {
                return Err("flux not resolved");
            }
            let q = self.data.unit_query(ti, xi, yk);
            let lp = log_free_kernel(m, q.t, q.x, q.y).expect("valid query").ln();
            // r/p_1 = p/p_1 - 1
            if (lp - reference).exp() - 1.0 > HUNT_MAX_AMPLIFICATION {
                return Err("cancellation amplifies the flux error");
            }
            match killed_kernel_via_hunt(m, &q, src, &self.spec.quadrature) {
                Ok(v) => Ok((m, ti, xi, yk, (v.ln() - reference).abs())),
                Err(_) => Err("hunt quadrature failed"),
            }
        });
        for o in outcomes {
            match o {
                Ok((m, ti, xi, yk, d)) => acc.eval(self.at(m, None, ti, xi, yk), d, Method::Hunt, SLACK_HUNT),
                Err(r) => acc.skip(r),
            }
        }
        acc.done()
    }

    fn mc_cross_check(&self) -> CheckResult {
        let mut acc = Acc::new(
            "mc_cross_check",
            "bin mass of p_1 around y: PDE against Monte Carlo, margin |diff| - 4 std_err",
            &[(Method::Mc, SLACK_MC)],
            self.spec,
        );
        let ny = self.data.y.len();
        let nx = self.data.x.len();
        let index: HashMap<u64, f64> = self.pde.iter().map(|&m| (key(m), m)).collect();
        let outcomes = self.spec.execution.map(self.mc_cells.len(), |j| {
            let (k, c) = self.mc_cells[j];
            let m = index[&k];
            let (ti, xi, yk) = (c / (nx * ny), (c / ny) % nx, c % ny);
            let Some(&pde_mass) = self.data.bins.get(&(k, c)) else {
                return Err("pde solve failed");
            };
            let cfg = McConfig {
                n_paths: self.spec.mc_paths,
                dt: None,
                seed: self.spec.seed.wrapping_add(c as u64),
                bridge_correction: true,
                execution: Execution::Sequential,
            };
            let bin = mc_bin(self.data.y[yk]);
            match simulate_killed_histogram(m, self.data.x[xi], self.data.t[ti], &[bin], &cfg) {
                Ok(e) => Ok((m, ti, xi, yk, (pde_mass - e[0].mean).abs() - 4.0 * e[0].std_err)),
                Err(_) => Err("monte carlo rejected the cell"),
            }
        });
        for o in outcomes {
            match o {
                Ok((m, ti, xi, yk, d)) => acc.eval(self.at(m, None, ti, xi, yk), d, Method::Mc, SLACK_MC),
                Err(r) => acc.skip(r),
            }
        }
        acc.done()
    }

    fn checks(&self) -> Vec<CheckResult> {
        let flux = if self.pde.is_empty() { HashMap::new() } else { self.flux_tables() };
        let mut out = vec![
            self.bessel_ratio_bounds(),
            self.below_free(),
            self.index_ordering(),
            self.index_comparison(),
            self.small_time_lower(),
            self.hitting_ordering(&flux),
            self.symmetry_reflection(),
            self.scaling(),
            self.hitting_mass(),
            self.lower_bound_seed(),
        ];
        if !self.hunt_cells.is_empty() {
            out.push(self.hunt_cross_check(&flux));
        }
        if !self.mc_cells.is_empty() {
            out.push(self.mc_cross_check());
        }
        out
    }

    fn envelope(&self) -> EnvelopeReport {
        let rows = self.spec.mu_list.iter().map(|&mu| self.envelope_row(mu)).collect();
        EnvelopeReport { rows }
    }

    fn envelope_row(&self, mu: f64) -> EnvelopeRow {
        let mut row = EnvelopeRow {
            mu,
            cells: 0,
            cells_skipped: 0,
            skip_reasons: BTreeMap::new(),
            method_counts: BTreeMap::new(),
            min_log_ratio: None,
            max_log_ratio: None,
            spread: None,
            argmin: None,
            argmax: None,
            regimes: Vec::new(),
            rewrite_min: None,
            rewrite_max: None,
            rewrite_spread: None,
            identity_residual: 0.0,
        };
        let mut regimes: BTreeMap<(bool, bool), RegimeStats> = BTreeMap::new();
        let ln_a = self.spec.a.ln();
        self.each_cell(|ti, xi, yk| {
            let (lp1, method) = match self.data.value(mu, ti, xi, yk) {
                Val::Ok(v, m) => (v - ln_a, m),
                Val::Skip(r) => {
                    row.cells_skipped += 1;
                    *row.skip_reasons.entry(r.to_string()).or_default() += 1;
                    return;
                }
            };
            let q = KernelQuery {
                t: self.spec.t_grid[ti],
                x: self.spec.x_grid[xi],
                y: self.spec.y_grid[yk],
                a: self.spec.a,
            };
            let env = log_envelope(mu, &q).expect("valid query").log_val.ln();
            let lp = log_free_kernel(mu, q.t, q.x, q.y).expect("valid query").ln();
            let rhs = log_rewrite_rhs(&q);
            let free_env = log_free_envelope(mu, &q).expect("valid query");
            let ratio = lp1 - env;
            let rewrite = lp1 - lp - rhs;
            row.identity_residual = row.identity_residual.max((ratio - rewrite - (lp - free_env)).abs());
            row.cells += 1;
            *row.method_counts.entry(method).or_default() += 1;
            if row.min_log_ratio.map_or(true, |v| ratio < v) {
                row.min_log_ratio = Some(ratio);
                row.argmin = Some(q);
            }
            if row.max_log_ratio.map_or(true, |v| ratio > v) {
                row.max_log_ratio = Some(ratio);
                row.argmax = Some(q);
            }
            row.rewrite_min = Some(row.rewrite_min.map_or(rewrite, |v| v.min(rewrite)));
            row.rewrite_max = Some(row.rewrite_max.map_or(rewrite, |v| v.max(rewrite)));
            let tag = (q.x * q.y >= q.t, (q.x - q.a) * (q.y - q.a) >= q.t);
            let r = regimes.entry(tag).or_insert(RegimeStats {
                xy_over_t_ge_1: tag.0,
                barrier_over_t_ge_1: tag.1,
                cells: 0,
                min_log_ratio: None,
                max_log_ratio: None,
            });
            r.cells += 1;
            r.min_log_ratio = Some(r.min_log_ratio.map_or(ratio, |v| v.min(ratio)));
            r.max_log_ratio = Some(r.max_log_ratio.map_or(ratio, |v| v.max(ratio)));
        });
        row.spread = row.max_log_ratio.zip(row.min_log_ratio).map(|(a, b)| a - b);
        row.rewrite_spread = row.rewrite_max.zip(row.rewrite_min).map(|(a, b)| a - b);
        row.regimes = regimes.into_values().collect();
        row
    }
}

/// `ln int_0^inf q^(1/2)_x(s) ds` by quadrature of the closed form.
fn half_hitting_mass(x: f64, cfg: &QuadratureConfig) -> Result<f64> {
    // s = 1/u on (0, 1]; directly on [1, inf)
    let left = |u: f64| log_half_hitting_density_at(x, 1.0, 1.0 / u) - 2.0 * u.ln();
    let right = |s: f64| log_half_hitting_density_at(x, 1.0, s);
    let scale = (x - 1.0).powi(2).max(1e-300);
    let tol = Tolerance { rel_tol: 1e-12, abs_log_floor: cfg.abs_log_floor, max_subdivisions: cfg.max_subdivisions };
    let (v, _) = integrate(
        &[
            Piece { f: &left, a: 1.0, b: f64::INFINITY, h: (1.0 / scale).max(1.0) },
            Piece { f: &right, a: 1.0, b: f64::INFINITY, h: scale.max(1.0) },
        ],
        &tol,
    )?;
    Ok(v)
}

/// Checks (i)-(x) plus the Hunt and Monte Carlo cross-checks.
pub fn run_inequality_suite(spec: &GridSpec) -> Result<Vec<CheckResult>> {
    Ok(Suite::build(spec)?.checks())
}

pub fn run_envelope_report(spec: &GridSpec) -> Result<EnvelopeReport> {
    Ok(Suite::build(spec)?.envelope())
}

/// Both reports from one set of kernel solves.
pub fn certify(spec: &GridSpec) -> Result<Report> {
    let suite = Suite::build(spec)?;
    Ok(Report {
        schema_version: SCHEMA_VERSION.into(),
        spec: Some(spec.clone()),
        checks: suite.checks(),
        envelope: Some(suite.envelope()),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Json,
    Csv,
}

const CSV_HEADER: &str = "schema_version,record,check_id,mu,nu,t,x,y,a,value,margin,method,status";

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |v| format!("{v:e}"))
}

fn status(failed: bool) -> &'static str {
    if failed {
        "fail"
    } else {
        "pass"
    }
}

fn method_name(m: Method) -> &'static str {
    match m {
        Method::ClosedForm => "closed_form",
        Method::Hunt => "hunt",
        Method::Pde => "pde",
        Method::Mc => "mc",
    }
}

/// JSON is the lossless form. CSV is long format: one `check` row per
/// check, one `cell` row per recorded cell, and `envelope` rows carrying
/// the extremes (`value`) and their cells.
pub fn emit_report(report: &Report, format: Format) -> Result<String> {
    match format {
        Format::Json => serde_json::to_string_pretty(report).map_err(|e| Error::Io(e.to_string())),
        Format::Csv => Ok(report_csv(report)),
    }
}

pub fn parse_report(json: &str) -> Result<Report> {
    serde_json::from_str(json).map_err(|e| Error::Io(e.to_string()))
}

fn report_csv(report: &Report) -> String {
    let v = &report.schema_version;
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for c in &report.checks {
        let worst = c.worst_cell.as_ref();
        out += &format!(
            "{v},check,{},{},{},{},{},{},{},{},{},{},{}\n",
            c.check_id,
            worst.map_or(String::new(), |w| format!("{:e}", w.mu)),
            opt(worst.and_then(|w| w.nu)),
            opt(worst.and_then(|w| w.t)),
            opt(worst.map(|w| w.x)),
            opt(worst.and_then(|w| w.y)),
            opt(worst.map(|w| w.a)),
            c.cells_failed,
            opt(c.worst_margin),
            worst.map_or("", |w| method_name(w.method)),
            status(!c.passed()),
        );
        for r in &c.cells {
            out += &format!(
                "{v},cell,{},{:e},{},{},{:e},{},{:e},,{:e},{},{}\n",
                c.check_id,
                r.mu,
                opt(r.nu),
                opt(r.t),
                r.x,
                opt(r.y),
                r.a,
                r.margin,
                method_name(r.method),
                status(r.failed),
            );
        }
    }
    if let Some(env) = &report.envelope {
        for row in &env.rows {
            for (name, val, cell) in [("min_log_ratio", row.min_log_ratio, row.argmin), ("max_log_ratio", row.max_log_ratio, row.argmax)] {
                let Some(q) = cell else { continue };
                out += &format!(
                    "{v},envelope,{name},{:e},,{:e},{:e},{:e},{:e},{},,,\n",
                    row.mu,
                    q.t,
                    q.x,
                    q.y,
                    q.a,
                    opt(val),
                );
            }
            out += &format!("{v},envelope,spread,{:e},,,,,,{},,,\n", row.mu, opt(row.spread));
            out += &format!("{v},envelope,rewrite_spread,{:e},,,,,,{},,,\n", row.mu, opt(row.rewrite_spread));
        }
    }
    out
}
