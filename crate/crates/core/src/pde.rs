//! Killed kernel from the Bessel heat equation on `(a, L)`.
//!
//! Writing a density in `y` as `(y/x)^{2mu+1} v(s,y)` turns the forward
//! equation into the self-adjoint form `m v_s = (m v_y)_y / 2` with
//! `m(y) = (y/x)^{2mu+1}`. Finite volumes on a sinh-stretched grid centred at
//! the start point give a symmetric tridiagonal system per theta step.
//!
//! Two solutions share the grid and the time steps. The direct one starts
//! from a point mass at `x` with zero boundary data. The second one is
//! `r = p - p_a`: zero initial data and the free kernel `p(s,x,a)` as
//! boundary data at the barrier. Where killing is weak, `p - r` with the
//! closed-form `p` keeps full relative accuracy far into the tails, where
//! the discrete kernel itself is too heavy-tailed to trust.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::hunt::{HittingDensitySource, SourceKind, TabulatedDensity};
use crate::kernels::{check_index, log_free_kernel};
use crate::logval::{log1m_exp, LogValue};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PdeConfig {
    /// Far boundary; `None` picks `max(8x, 8 sqrt(t (2|mu|+2)), 50a)`.
    pub domain_cap: Option<f64>,
    pub nodes: usize,
    /// `None` picks 2000.
    pub time_steps: Option<usize>,
    pub theta: f64,
}

impl Default for PdeConfig {
    fn default() -> Self {
        PdeConfig { domain_cap: None, nodes: 4000, time_steps: None, theta: 0.5 }
    }
}

/// Width of the central grid region relative to `min(sqrt t, x - a)`.
const GRID_WIDTH_FACTOR: f64 = 2.0;
const FAR_BOUNDARY_LIMIT: f64 = 1e-12;
const NEGATIVE_LIMIT: f64 = 1e-12;
const RANNACHER_STEPS: usize = 2;
/// Nodes of the direct solution further than this (in nats) below its peak
/// are never trusted; strongly stretched grids trust less.
const RESOLVED_DEPTH: f64 = 10.0;
/// `p - r` is used where `r <= p/2`, so the subtraction never amplifies
/// the error of `r`.
const SUBTRACT_MAX_RATIO: f64 = 0.5;
/// Discrete tails drift by about `TAIL_COEFF (depth h')^2` relative, with
/// `h'` the relative cell growth of the sinh grid; fitted against closed
/// forms across the default grid.
const TAIL_COEFF: f64 = 3.5;
/// Relative error accepted for the direct solution.
const TAIL_TARGET: f64 = 1e-3;
/// Next to a distant barrier the cells are wide compared with the scale
/// `l = y / sqrt(1 + |2mu (2mu+1)|)` on which `m` bends; nodes drift by
/// about `BARRIER_COEFF (h/l)^2` and the flux by `FLUX_BARRIER_COEFF (h_1/l)^2`.
const BARRIER_COEFF: f64 = 0.012;
const FLUX_BARRIER_COEFF: f64 = 0.35;
/// Error budget for `p - r` below the resolved depth of `r`.
const SUBTRACT_ERROR: f64 = 1e-4;
const SUBTRACT_MAX_DEPTH: f64 = 40.0;
/// Below this bound on `r/p` the free kernel itself is returned.
const NEGLIGIBLE_RATIO: f64 = 1e-6;
/// Ratio of the last to the first hitting time served by one flux solve.
const FLUX_WINDOW: f64 = 10.0;
/// Longest time scale the first steps need to resolve.
const UNIFORM_HORIZON: f64 = 50.0;
/// Fraction of that time scale over which the steps stay nearly uniform.
const TIME_GRADING: f64 = 0.05;
/// Largest change of `ln` barrier data per step for `r` to count.
const BARRIER_JUMP_LIMIT: f64 = 0.05;
/// `2 - sqrt 2`: both TR-BDF2 stages then share one matrix.
const TRBDF2_GAMMA: f64 = 2.0 - std::f64::consts::SQRT_2;
const DEFAULT_STEPS: usize = 2000;
/// Horizon of [`hitting_probability`] in units of `max(1, (x-1)^2)`.
const HITTING_HORIZON: f64 = 1e6;

#[derive(Debug, Clone, Copy)]
struct Resolved {
    mu: f64,
    a: f64,
    t: f64,
    x: f64,
    cap: f64,
    nodes: usize,
    steps: usize,
    theta: f64,
}

impl PdeConfig {
    fn resolve(&self, mu: f64, a: f64, t: f64, x: f64) -> Result<Resolved> {
        check_index(mu)?;
        for (n, v) in [("t", t), ("a", a)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(domain(format!("{n} must be positive")));
            }
        }
        if !(x > a) || !x.is_finite() {
            return Err(domain("x must exceed a"));
        }
        if !(0.5..=1.0).contains(&self.theta) {
            return Err(domain("theta must lie in [1/2, 1]"));
        }
        if self.nodes < 200 {
            return Err(domain("nodes must be at least 200"));
        }
        let cap = match self.domain_cap {
            Some(l) => l,
            None => (8.0 * x).max(8.0 * (t * (2.0 * mu.abs() + 2.0)).sqrt()).max(50.0 * a),
        };
        if !(cap > x + 5.0 * t.sqrt()) || !cap.is_finite() {
            return Err(domain("domain_cap must exceed x + 5 sqrt(t)"));
        }
        let steps = match self.time_steps {
            Some(m) => m,
            None => DEFAULT_STEPS,
        };
        if steps < 40 {
            return Err(domain("time_steps must be at least 40"));
        }
        Ok(Resolved { mu, a, t, x, cap, nodes: self.nodes, steps, theta: self.theta })
    }
}

/// `p_a(t,x,.)` on the grid nodes strictly between the barrier and the cap.
///
/// `resolved[i]` tells whether `values[i]` is within the solver's accuracy;
/// unresolved nodes still carry the direct solution for inspection.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KernelSlice {
    pub mu: f64,
    pub a: f64,
    pub t: f64,
    pub x: f64,
    pub values: Vec<(f64, LogValue)>,
    pub resolved: Vec<bool>,
    #[serde(skip)]
    log_direct: Vec<f64>,
    #[serde(skip)]
    log_r: Vec<f64>,
    #[serde(skip)]
    direct_max: f64,
    #[serde(skip)]
    r_max: f64,
    #[serde(skip)]
    r_trusted: bool,
    #[serde(skip)]
    ratio_cap: Vec<f64>,
    #[serde(skip)]
    stretch: f64,
    #[serde(skip)]
    volumes: Vec<f64>,
}

/// Quadratic interpolation through three points; `None` if any is infinite.
fn quadratic(pts: &[(f64, f64)], y: f64) -> Option<f64> {
    if pts.iter().any(|p| !p.1.is_finite()) {
        return None;
    }
    let mut g = 0.0;
    for j in 0..3 {
        let mut l = 1.0;
        for k in 0..3 {
            if k != j {
                l *= (y - pts[k].0) / (pts[j].0 - pts[k].0);
            }
        }
        g += l * pts[j].1;
    }
    Some(g)
}

impl KernelSlice {
    /// Peak of the direct solution.
    pub fn log_max(&self) -> f64 {
        self.direct_max
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().map(|v| v.0)
    }

    /// Picks `p - r` or the direct value, and says whether the pick is trusted.
    /// `cap` bounds the true `r/p` at `y`: the killed fraction of bridges
    /// falls as the endpoint moves away from the barrier, so any trusted
    /// ratio to the left bounds the ones to the right.
    fn combine(&self, y: f64, h: f64, log_direct: f64, log_r: f64, cap: f64) -> (f64, bool) {
        let log_p = match log_free_kernel(self.mu, self.t, self.x, y) {
            Ok(v) => v.ln(),
            Err(_) => return (log_direct, false),
        };
        let fine = barrier_error(self.mu, y, h, BARRIER_COEFF) <= TAIL_TARGET;
        if fine && self.r_trusted && self.r_usable(log_r, log_p) {
            return (log_p + log1m_exp(log_r - log_p), true);
        }
        if cap <= NEGLIGIBLE_RATIO {
            return (log_p, true);
        }
        // the free kernel bounds the killed one, trusted or not
        (log_direct.min(log_p), fine && log_direct >= self.direct_max - self.trusted_depth())
    }

    /// `p - r` is used where the expected error of `r` times `r/p` stays
    /// small. Discrete tails drift by a relative amount growing like the
    /// square of the depth below the peak and of the step.
    fn r_usable(&self, log_r: f64, log_p: f64) -> bool {
        let depth = self.r_max - log_r;
        let ratio = log_r - log_p;
        if !(depth <= SUBTRACT_MAX_DEPTH) || ratio > SUBTRACT_MAX_RATIO.ln() {
            return false;
        }
        depth <= self.trusted_depth() || ratio.exp() * self.tail_error(depth) <= SUBTRACT_ERROR
    }

    fn tail_error(&self, depth: f64) -> f64 {
        TAIL_COEFF * (depth * self.stretch).powi(2)
    }

    /// Depth below the peak down to which the direct solution is trusted.
    pub fn trusted_depth(&self) -> f64 {
        ((TAIL_TARGET / TAIL_COEFF).sqrt() / self.stretch).min(RESOLVED_DEPTH)
    }

    fn stencil(&self, y: f64) -> usize {
        let n = self.values.len();
        let i = self.values.partition_point(|v| v.0 <= y);
        // y lies in [y_{i-1}, y_i]; add the neighbour on the nearer side
        let closer_left = i >= 1 && i < n && (y - self.values[i - 1].0) < (self.values[i].0 - y);
        if closer_left { i.saturating_sub(2) } else { i.saturating_sub(1) }.min(n - 3)
    }

    fn interpolate(&self, y: f64, lo: usize, logs: &[f64], barrier_factor: bool) -> f64 {
        let shift = |yy: f64| if barrier_factor { (yy - self.a).ln() } else { 0.0 };
        let pts: Vec<(f64, f64)> =
            (lo..lo + 3).map(|j| (self.values[j].0, logs[j] - shift(self.values[j].0))).collect();
        if let Some(g) = quadratic(&pts, y) {
            return g + shift(y);
        }
        // a neighbour vanished: linear in the value itself
        let j = lo + 1;
        let (j0, j1) = if y < self.values[j].0 { (j - 1, j) } else { (j, j + 1) };
        let (y0, y1) = (self.values[j0].0, self.values[j1].0);
        let w = ((y - y0) / (y1 - y0)).clamp(0.0, 1.0);
        log_positive((1.0 - w) * logs[j0].exp() + w * logs[j1].exp())
    }

    /// `ln p_a(t,x,y)` between nodes, or `None` when `y` is off the grid or
    /// the value there is not resolved. The direct part is interpolated as
    /// `ln(p/(y-a))`, which stays smooth up to the barrier.
    pub fn log_value_at(&self, y: f64) -> Option<f64> {
        let n = self.values.len();
        if n < 3 || !(y > self.a) || y > self.values[n - 1].0 {
            return None;
        }
        let lo = self.stencil(y);
        let ld = self.interpolate(y, lo, &self.log_direct, true);
        let lr = self.interpolate(y, lo, &self.log_r, false);
        let cap = if y >= self.values[lo].0 { self.ratio_cap[lo] } else { f64::INFINITY };
        let (v, ok) = self.combine(y, self.volumes[lo + 1], ld, lr, cap);
        ok.then_some(v)
    }

    /// `int p_a(t,x,y) g(y) dy` with the finite-volume weights of the
    /// direct solution.
    pub fn integrate(&self, g: impl Fn(f64) -> f64) -> f64 {
        self.values
            .iter()
            .zip(&self.log_direct)
            .zip(&self.volumes)
            .map(|(((y, _), ld), v)| v * ld.exp() * g(*y))
            .sum()
    }
}

struct Grid {
    y: Vec<f64>,
    /// dual cell volumes; ends unused
    vol: Vec<f64>,
    /// `k[i] = m(y_{i+1/2}) / (2 h_{i+1/2})`
    k: Vec<f64>,
    m: Vec<f64>,
    /// relative growth of neighbouring cells
    stretch: f64,
}

impl Grid {
    fn build(r: &Resolved) -> Grid {
        let w = GRID_WIDTH_FACTOR * r.t.sqrt().min(r.x - r.a);
        let left = ((r.x - r.a) / w).asinh();
        let beta = left + ((r.cap - r.x) / w).asinh();
        let n = r.nodes;
        // put x on a node; the far end moves out a little to compensate
        let jx = ((n as f64 * left / beta).floor() as usize).clamp(1, n / 2);
        let xi_x = jx as f64 / n as f64;
        let w = (r.x - r.a) / (beta * xi_x).sinh();
        let mut y: Vec<f64> = (0..=n).map(|i| r.x + w * (beta * (i as f64 / n as f64 - xi_x)).sinh()).collect();
        y[0] = r.a;
        y[jx] = r.x;
        let expo = 2.0 * r.mu + 1.0;
        let m_of = |v: f64| (expo * (v / r.x).ln()).exp();
        let m = y.iter().map(|&v| m_of(v)).collect();
        let k = (0..n).map(|i| m_of(0.5 * (y[i] + y[i + 1])) / (2.0 * (y[i + 1] - y[i]))).collect();
        let mut vol = vec![0.0; n + 1];
        for i in 1..n {
            vol[i] = 0.5 * (y[i + 1] - y[i - 1]);
        }
        Grid { y, vol, k, m, stretch: beta / n as f64 }
    }
}

/// Unit Lebesgue mass in the dual cell of the node at `x`.
fn point_mass(r: &Resolved, g: &Grid) -> Vec<f64> {
    let mut v = vec![0.0; r.nodes + 1];
    let j = g.y.partition_point(|&yy| yy < r.x);
    v[j] = 1.0 / (g.vol[j] * g.m[j]);
    v
}

/// LU factors of `B + theta dt A` for the interior unknowns.
struct Factor {
    ex: f64,
    im: f64,
    diag: Vec<f64>,
    off: Vec<f64>,
}

impl Factor {
    fn new(g: &Grid, dt: f64, theta: f64) -> Factor {
        let n = g.y.len() - 1;
        let im = theta * dt;
        let mut diag: Vec<f64> = (1..n).map(|i| g.vol[i] * g.m[i] + im * (g.k[i - 1] + g.k[i])).collect();
        let off: Vec<f64> = (1..n - 1).map(|i| -im * g.k[i]).collect();
        for i in 1..diag.len() {
            diag[i] -= off[i - 1] * off[i - 1] / diag[i - 1];
        }
        Factor { ex: (1.0 - theta) * dt, im, diag, off }
    }

    /// Solves in place and writes the interior of `v`; `bc_new` is the
    /// barrier value at the end of the stage.
    fn solve(&self, g: &Grid, v: &mut [f64], bc_new: f64, rhs: &mut [f64]) {
        rhs[0] += self.im * g.k[0] * bc_new;
        for i in 1..rhs.len() {
            rhs[i] -= self.off[i - 1] / self.diag[i - 1] * rhs[i - 1];
        }
        let last = rhs.len() - 1;
        rhs[last] /= self.diag[last];
        for i in (0..last).rev() {
            rhs[i] = (rhs[i] - self.off[i] * rhs[i + 1]) / self.diag[i];
        }
        let n = g.y.len() - 1;
        v[1..n].copy_from_slice(rhs);
        v[0] = bc_new;
    }

    /// Theta step; `v[0]` holds the barrier value at the start.
    fn step(&self, g: &Grid, v: &mut [f64], bc_new: f64, rhs: &mut [f64]) {
        let n = g.y.len() - 1;
        for i in 1..n {
            let (kl, kr) = (g.k[i - 1], g.k[i]);
            let av = (kl + kr) * v[i] - kl * v[i - 1] - kr * v[i + 1];
            rhs[i - 1] = g.vol[i] * g.m[i] * v[i] - self.ex * av;
        }
        self.solve(g, v, bc_new, rhs);
    }

    /// BDF2 stage of TR-BDF2 from `old` (start of step) and `v` (the
    /// trapezoidal stage), overwriting `v`.
    fn bdf2(&self, g: &Grid, old: &[f64], v: &mut [f64], bc_new: f64, rhs: &mut [f64]) {
        let c = 1.0 / (TRBDF2_GAMMA * (2.0 - TRBDF2_GAMMA));
        let d = (1.0 - TRBDF2_GAMMA).powi(2) * c;
        let n = g.y.len() - 1;
        for i in 1..n {
            rhs[i - 1] = g.vol[i] * g.m[i] * (c * v[i] - d * old[i]);
        }
        self.solve(g, v, bc_new, rhs);
    }
}

/// `q(s) = p_y(s, a) / 2` from the second-order one-sided difference of
/// `p = m v`; differencing `v` alone would pick up the curvature of `m`,
/// which is large on the coarse cells next to a distant barrier.
fn boundary_flux(g: &Grid, v: &[f64]) -> f64 {
    let h1 = g.y[1] - g.y[0];
    let h2 = g.y[2] - g.y[1];
    let (p1, p2) = (g.m[1] * v[1], g.m[2] * v[2]);
    0.5 * (p1 * (h1 + h2) / (h1 * h2) - p2 * h1 / (h2 * (h1 + h2)))
}

struct Run {
    grid: Grid,
    direct: Vec<f64>,
    r: Vec<f64>,
    flux: Vec<(f64, f64)>,
    r_trusted: bool,
}

/// End times of the steps: `s(u) = tau ((1 + t/tau)^u - 1)` on a uniform
/// `u` grid, so steps start at a fraction of the fastest time scale of the
/// start point and end up growing geometrically.
fn schedule(rs: &Resolved) -> Vec<f64> {
    let tau = TIME_GRADING * rs.t.min((rs.x - rs.a).powi(2)).min(UNIFORM_HORIZON);
    let lambda = (rs.t / tau).ln_1p();
    let m = rs.steps;
    let mut out: Vec<f64> = (1..=m).map(|k| tau * (lambda * k as f64 / m as f64).exp_m1()).collect();
    out[m - 1] = rs.t;
    out
}

struct Stepper<'g> {
    grid: &'g Grid,
    theta: f64,
    cached: Option<(f64, f64, Factor)>,
    rhs: Vec<f64>,
    old: Vec<f64>,
}

impl<'g> Stepper<'g> {
    fn factor(&mut self, dt: f64, theta: f64) {
        let fresh = !matches!(&self.cached, Some((d, th, _)) if *d == dt && *th == theta);
        if fresh {
            self.cached = Some((dt, theta, Factor::new(self.grid, dt, theta)));
        }
    }

    /// One step of a solution from `s0` to `s1`; `bc` gives barrier data.
    fn advance(&mut self, s0: f64, s1: f64, first: bool, v: &mut [f64], bc: &dyn Fn(f64) -> f64) {
        let grid = self.grid;
        let dt = s1 - s0;
        if self.theta == 0.5 {
            // TR-BDF2 uses the same matrix in both stages
            self.factor(TRBDF2_GAMMA * dt, 0.5);
            let f = &self.cached.as_ref().unwrap().2;
            self.old.copy_from_slice(v);
            f.step(grid, v, bc(s0 + TRBDF2_GAMMA * dt), &mut self.rhs);
            f.bdf2(grid, &self.old, v, bc(s1), &mut self.rhs);
        } else if first {
            // two backward Euler half steps before the theta scheme
            self.factor(0.5 * dt, 1.0);
            let f = &self.cached.as_ref().unwrap().2;
            f.step(grid, v, bc(s0 + 0.5 * dt), &mut self.rhs);
            f.step(grid, v, bc(s1), &mut self.rhs);
        } else {
            self.factor(dt, self.theta);
            let f = &self.cached.as_ref().unwrap().2;
            f.step(grid, v, bc(s1), &mut self.rhs);
        }
    }
}

/// Advances `(direct, r)` through `times`, starting at `start`.
fn evolve(
    rs: &Resolved,
    grid: &Grid,
    start: f64,
    times: &[f64],
    direct: &mut [f64],
    mut r: Option<&mut [f64]>,
    mut flux: Option<&mut Vec<(f64, f64)>>,
) {
    // barrier data of r: p(s,x,a) / m(a)
    let log_m_a = grid.m[0].ln();
    let bc = |s: f64| match log_free_kernel(rs.mu, s, rs.x, rs.a) {
        Ok(v) => (v.ln() - log_m_a).exp(),
        Err(_) => 0.0,
    };
    let zero = |_: f64| 0.0;
    let mut st = Stepper {
        grid,
        theta: rs.theta,
        cached: None,
        rhs: vec![0.0; rs.nodes - 1],
        old: vec![0.0; rs.nodes + 1],
    };
    let mut s0 = start;
    for (k, &s1) in times.iter().enumerate() {
        st.advance(s0, s1, k < RANNACHER_STEPS, direct, &zero);
        if let Some(r) = r.as_deref_mut() {
            st.advance(s0, s1, k < RANNACHER_STEPS, r, &bc);
        }
        if let Some(f) = flux.as_deref_mut() {
            f.push((s1, boundary_flux(grid, direct)));
        }
        s0 = s1;
    }
}

/// Whether the steps follow the barrier data of `r` closely enough for
/// `r` to be trusted; far starts give data that rises by many nats per step.
fn barrier_data_resolved(rs: &Resolved, times: &[f64]) -> bool {
    let logs: Vec<f64> = times
        .iter()
        .map(|&s| log_free_kernel(rs.mu, s, rs.x, rs.a).map_or(f64::NEG_INFINITY, |v| v.ln()))
        .collect();
    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    logs.windows(2)
        .filter(|w| w[1].max(w[0]) > top - RESOLVED_DEPTH)
        .all(|w| (w[1] - w[0]).abs() <= BARRIER_JUMP_LIMIT)
}

fn run(rs: &Resolved, record_flux: bool, with_r: bool) -> Run {
    let grid = Grid::build(rs);
    let mut direct = point_mass(rs, &grid);
    let mut r = vec![0.0; rs.nodes + 1];
    let mut flux = Vec::new();
    let times = schedule(rs);
    evolve(
        rs,
        &grid,
        0.0,
        &times,
        &mut direct,
        with_r.then_some(&mut r[..]),
        record_flux.then_some(&mut flux),
    );
    let r_trusted = with_r && barrier_data_resolved(rs, &times);
    Run { grid, direct, r, flux, r_trusted }
}

/// Expected relative error from cells of width `h` where `m` bends.
fn barrier_error(mu: f64, y: f64, h: f64, coeff: f64) -> f64 {
    let l = y / (1.0 + (2.0 * mu * (2.0 * mu + 1.0)).abs()).sqrt();
    coeff * (h / l).powi(2)
}

fn log_positive(v: f64) -> f64 {
    if v > 0.0 {
        v.ln()
    } else {
        f64::NEG_INFINITY
    }
}

/// Maximum of a solution after the sign check.
fn check_solution(p: &[f64]) -> Result<f64> {
    let max = p.iter().copied().fold(0.0, f64::max);
    if !(max > 0.0) || !max.is_finite() {
        return Err(Error::StabilityFailure { ratio: f64::NAN });
    }
    let min = p.iter().copied().fold(f64::INFINITY, f64::min);
    if min < -NEGATIVE_LIMIT * max {
        return Err(Error::StabilityFailure { ratio: min / max });
    }
    Ok(max)
}

fn direct_density(rs: &Resolved, run: &Run) -> Result<Vec<f64>> {
    let g = &run.grid;
    let p: Vec<f64> = (1..rs.nodes).map(|i| g.m[i] * run.direct[i]).collect();
    let max = check_solution(&p)?;
    let far = p[p.len() - 1].abs() / max;
    if far > FAR_BOUNDARY_LIMIT {
        return Err(Error::DomainTooSmall { ratio: far });
    }
    Ok(p)
}

fn into_slice(rs: &Resolved, run: Run) -> Result<KernelSlice> {
    let p = direct_density(rs, &run)?;
    let g = &run.grid;
    let n = rs.nodes;
    let r: Vec<f64> = (1..n).map(|i| g.m[i] * run.r[i]).collect();
    let r_max = if r.iter().any(|&v| v != 0.0) { check_solution(&r)?.ln() } else { f64::NEG_INFINITY };
    let log_direct: Vec<f64> = p.iter().map(|&v| log_positive(v)).collect();
    let direct_max = log_direct.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut slice = KernelSlice {
        mu: rs.mu,
        a: rs.a,
        t: rs.t,
        x: rs.x,
        values: Vec::with_capacity(n - 1),
        resolved: Vec::with_capacity(n - 1),
        log_direct,
        log_r: r.iter().map(|&v| log_positive(v)).collect(),
        direct_max,
        r_max,
        r_trusted: run.r_trusted,
        ratio_cap: Vec::with_capacity(n - 1),
        stretch: g.stretch,
        volumes: g.vol[1..n].to_vec(),
    };
    let mut cap = f64::INFINITY;
    for i in 0..n - 1 {
        let y = g.y[i + 1];
        let log_p = log_free_kernel(rs.mu, rs.t, rs.x, y).map_or(f64::NAN, |v| v.ln());
        let fine = barrier_error(rs.mu, y, g.vol[i + 1], BARRIER_COEFF) <= TAIL_TARGET;
        if fine && slice.r_trusted && slice.r_usable(slice.log_r[i], log_p) {
            cap = cap.min((slice.log_r[i] - log_p).exp());
        }
        slice.ratio_cap.push(cap);
    }
    for i in 0..n - 1 {
        let y = g.y[i + 1];
        let (v, ok) = slice.combine(y, g.vol[i + 1], slice.log_direct[i], slice.log_r[i], slice.ratio_cap[i]);
        slice.values.push((y, LogValue::new(v)?));
        slice.resolved.push(ok);
    }
    Ok(slice)
}

fn require_positive_index(mu: f64) -> Result<()> {
    if !(mu > 0.0) {
        return Err(domain("PDE solves take mu > 0; negative indices go through reflect_index"));
    }
    Ok(())
}

/// `p_1^(mu)(t,x,.)` for `mu > 0`.
pub fn solve_killed_kernel(mu: f64, t: f64, x: f64, cfg: &PdeConfig) -> Result<KernelSlice> {
    require_positive_index(mu)?;
    solve_killed_kernel_general(mu, 1.0, t, x, cfg)
}

/// Direct solve for any nonzero index and barrier. The public kernel paths
/// reduce to `mu > 0, a = 1`; this entry exists so the reflection and
/// scaling identities can be checked against independent solves.
pub fn solve_killed_kernel_general(mu: f64, a: f64, t: f64, x: f64, cfg: &PdeConfig) -> Result<KernelSlice> {
    let r = cfg.resolve(mu, a, t, x)?;
    let out = run(&r, false, true);
    into_slice(&r, out)
}

/// `ln P_x(T_1 > t)`, the total mass of the direct solution.
pub fn survival_probability(mu: f64, t: f64, x: f64, cfg: &PdeConfig) -> Result<LogValue> {
    require_positive_index(mu)?;
    let r = cfg.resolve(mu, 1.0, t, x)?;
    let out = run(&r, false, false);
    let p = direct_density(&r, &out)?;
    let mass: f64 = p.iter().zip(&out.grid.vol[1..r.nodes]).map(|(p, v)| p * v).sum();
    LogValue::new(mass.min(1.0).ln())
}

/// Hitting density of the unit level tabulated on `s_grid`. Each decade of
/// the grid gets its own solve, so early times are not left with a handful
/// of coarse steps.
pub fn hitting_density_flux(mu: f64, x: f64, cfg: &PdeConfig, s_grid: &[f64]) -> Result<HittingDensitySource> {
    Ok(hitting_density_flux_with_trust(mu, x, cfg, s_grid)?.0)
}

/// As [`hitting_density_flux`], plus a flag per time telling whether the
/// barrier sat shallow enough below the peak of the solution for the flux
/// to be accurate. Early on the flux comes out of the Gaussian tail and
/// carries the tail's relative error.
pub fn hitting_density_flux_with_trust(
    mu: f64,
    x: f64,
    cfg: &PdeConfig,
    s_grid: &[f64],
) -> Result<(HittingDensitySource, Vec<bool>)> {
    require_positive_index(mu)?;
    if s_grid.is_empty() || s_grid.windows(2).any(|w| !(w[1] > w[0])) || !(s_grid[0] > 0.0) {
        return Err(domain("s_grid must be positive and strictly ascending"));
    }
    let mut log_q = Vec::with_capacity(s_grid.len());
    let mut trusted = Vec::with_capacity(s_grid.len());
    let mut start = 0;
    while start < s_grid.len() {
        let end = s_grid.partition_point(|&s| s <= FLUX_WINDOW * s_grid[start]);
        let t = s_grid[end - 1];
        let r = cfg.resolve(mu, 1.0, t, x)?;
        let out = run(&r, true, false);
        direct_density(&r, &out)?;
        let g = &out.grid;
        let barrier_ok = barrier_error(mu, g.y[0], g.y[1] - g.y[0], FLUX_BARRIER_COEFF) <= TAIL_TARGET;
        for &s in &s_grid[start..end] {
            log_q.push(interpolate_flux(&out.flux, s));
            let depth = (x - 1.0).powi(2) / (2.0 * s);
            trusted.push(TAIL_COEFF * (depth * out.grid.stretch).powi(2) <= TAIL_TARGET && barrier_ok);
        }
        start = end;
    }
    let src = HittingDensitySource::tabulated(
        SourceKind::PdeFlux,
        mu,
        x,
        1.0,
        TabulatedDensity { s: s_grid.to_vec(), log_q, histogram: false },
    )?;
    Ok((src, trusted))
}

/// `P_x(T_1 < inf)`: the flux integrated over one long solve plus a
/// power-law tail fitted to its last quarter-horizon.
pub fn hitting_probability(mu: f64, x: f64, cfg: &PdeConfig) -> Result<f64> {
    require_positive_index(mu)?;
    let horizon = HITTING_HORIZON * (x - 1.0).powi(2).max(1.0);
    let r = cfg.resolve(mu, 1.0, horizon, x)?;
    let out = run(&r, true, false);
    direct_density(&r, &out)?;
    let mut mass = 0.0;
    let mut prev = (0.0, 0.0);
    for &(s, q) in &out.flux {
        mass += 0.5 * (s - prev.0) * (q + prev.1);
        prev = (s, q);
    }
    let (s1, q1) = prev;
    let (s0, q0) = out.flux[out.flux.partition_point(|f| f.0 < 0.25 * s1)];
    let decay = -(q1 / q0).ln() / (s1 / s0).ln() - 1.0;
    if !(decay > 0.0) || !(q1 > 0.0) {
        return Err(Error::ConvergenceFailure { rel_err: f64::NAN, subdivisions: out.flux.len() });
    }
    Ok(mass + s1 * q1 / decay)
}

fn interpolate_flux(flux: &[(f64, f64)], s: f64) -> f64 {
    let i = flux.partition_point(|f| f.0 < s);
    let q = if i == 0 {
        flux[0].1 * s / flux[0].0
    } else if i >= flux.len() {
        flux[flux.len() - 1].1
    } else {
        let (s0, q0) = flux[i - 1];
        let (s1, q1) = flux[i];
        q0 + (q1 - q0) * (s - s0) / (s1 - s0)
    };
    log_positive(q)
}
