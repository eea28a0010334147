//! Hunt decomposition `p_a = p - r_a` with `r_a` evaluated by quadrature.
//!
//! `r_a(t,x,y) = int_0^t q_{x,a}(s) p(t-s, a, y) ds`. The integral is split at
//! `s = t/2`; the left half uses `u = 1/s - 1/t` and the right half the mirror
//! substitution `w = 1/(t-s) - 1/t`, which turn both endpoint behaviours
//! (`s^{-3/2} e^{-c/s}` and the free kernel's `(t-s)^{-1/2} e^{-c/(t-s)}`)
//! into decaying tails on `[1/t, inf)`.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::kernels::{check_index, log_free_kernel, log_half_hitting_density_at, KernelQuery};
use crate::logval::{log_sub_exp, LogValue};
use crate::quadrature::{integrate, Piece, Tolerance};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureConfig {
    pub rel_tol: f64,
    pub abs_log_floor: f64,
    pub max_subdivisions: usize,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        QuadratureConfig { rel_tol: 1e-9, abs_log_floor: -745.0, max_subdivisions: 2000 }
    }
}

impl QuadratureConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0 && self.rel_tol <= 1e-3) {
            return Err(domain("rel_tol must lie in (0, 1e-3]"));
        }
        if self.max_subdivisions < 16 {
            return Err(domain("max_subdivisions must be at least 16"));
        }
        if self.abs_log_floor.is_nan() || self.abs_log_floor >= 0.0 {
            return Err(domain("abs_log_floor must be negative"));
        }
        Ok(())
    }

    fn tolerance(&self, rel_tol: f64) -> Tolerance {
        Tolerance {
            rel_tol,
            abs_log_floor: self.abs_log_floor,
            max_subdivisions: self.max_subdivisions,
        }
    }
}

/// Smallest relative tolerance requested from the quadrature when tightening
/// for cancellation in `p - r`.
const TIGHTEST_REL_TOL: f64 = 1e-13;
/// `p - r` with more digits than this cancelled is reported, not returned.
const MAX_DIGITS_LOST: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    ExactHalf,
    PdeFlux,
    MonteCarlo,
}

/// Hitting density sampled on a time grid (ascending, positive).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabulatedDensity {
    pub s: Vec<f64>,
    pub log_q: Vec<f64>,
    /// Piecewise constant on `[s[i], s[i+1])` instead of interpolated.
    pub histogram: bool,
}

impl TabulatedDensity {
    fn log_density(&self, x: f64, a: f64, s: f64) -> f64 {
        let n = self.s.len();
        if n == 0 {
            return f64::NEG_INFINITY;
        }
        if self.histogram {
            if s < self.s[0] || s >= self.s[n - 1] {
                return f64::NEG_INFINITY;
            }
            let i = self.s.partition_point(|&v| v <= s) - 1;
            return self.log_q[i];
        }
        if s <= self.s[0] {
            // Gaussian-type lead-in: q ~ s^{-3/2} exp(-(x-a)^2 / 2s)
            let c = 0.5 * (x - a) * (x - a);
            let s0 = self.s[0];
            return self.log_q[0] - 1.5 * (s / s0).ln() - c * (1.0 / s - 1.0 / s0);
        }
        if s >= self.s[n - 1] {
            if n < 2 || !self.log_q[n - 1].is_finite() || !self.log_q[n - 2].is_finite() {
                return self.log_q[n - 1];
            }
            let slope = (self.log_q[n - 1] - self.log_q[n - 2]) / (self.s[n - 1] / self.s[n - 2]).ln();
            return self.log_q[n - 1] + slope.min(-1.0) * (s / self.s[n - 1]).ln();
        }
        let i = self.s.partition_point(|&v| v <= s) - 1;
        let (s0, s1) = (self.s[i], self.s[i + 1]);
        let (l0, l1) = (self.log_q[i], self.log_q[i + 1]);
        let w = (s - s0) / (s1 - s0);
        if l0.is_finite() && l1.is_finite() {
            l0 + w * (l1 - l0)
        } else {
            ((1.0 - w) * l0.exp() + w * l1.exp()).ln()
        }
    }

    /// Trapezoidal (or histogram) mass over the tabulated range.
    pub fn mass(&self) -> f64 {
        if self.histogram {
            return self
                .s
                .windows(2)
                .zip(&self.log_q)
                .map(|(w, l)| (w[1] - w[0]) * l.exp())
                .sum();
        }
        self.s
            .windows(2)
            .zip(self.log_q.windows(2))
            .map(|(s, l)| 0.5 * (s[1] - s[0]) * (l[0].exp() + l[1].exp()))
            .sum()
    }
}

/// Density of the hitting time of the barrier `a` from `x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HittingDensitySource {
    pub kind: SourceKind,
    pub mu: f64,
    pub x: f64,
    pub a: f64,
    /// Absent for the closed-form source.
    pub table: Option<TabulatedDensity>,
}

impl HittingDensitySource {
    /// Closed form for the index 1/2.
    pub fn exact_half(x: f64, a: f64) -> Result<Self> {
        if !(a > 0.0 && x > a) {
            return Err(domain("x must exceed a"));
        }
        Ok(HittingDensitySource { kind: SourceKind::ExactHalf, mu: 0.5, x, a, table: None })
    }

    pub fn tabulated(kind: SourceKind, mu: f64, x: f64, a: f64, table: TabulatedDensity) -> Result<Self> {
        if kind == SourceKind::ExactHalf {
            return Err(domain("tabulated sources are pde_flux or monte_carlo"));
        }
        if table.s.len() != table.log_q.len() || table.s.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(domain("tabulated density needs strictly ascending times, one value each"));
        }
        if table.log_q.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
            return Err(domain("tabulated density must be nonnegative and finite"));
        }
        Ok(HittingDensitySource { kind, mu, x, a, table: Some(table) })
    }

    /// `ln q_{x,a}(s)`.
    pub fn log_density(&self, s: f64) -> f64 {
        if !(s > 0.0) {
            return f64::NEG_INFINITY;
        }
        match &self.table {
            None => log_half_hitting_density_at(self.x, self.a, s),
            Some(t) => t.log_density(self.x, self.a, s),
        }
    }
}

fn check_source(mu: f64, q: &KernelQuery, src: &HittingDensitySource) -> Result<()> {
    if src.x != q.x || src.a != q.a {
        return Err(domain("hitting density source was built for a different start point or barrier"));
    }
    if src.kind == SourceKind::ExactHalf && mu != 0.5 {
        return Err(domain("the exact_half source only serves mu = 1/2"));
    }
    Ok(())
}

/// Integrates `g(s)` over `(0, t)` where `g` is given in log form, using the
/// two endpoint substitutions split at `t/2`.
pub(crate) fn integrate_on_unit_interval_split(
    log_g: &dyn Fn(f64) -> f64,
    t: f64,
    tol: &Tolerance,
) -> Result<(f64, f64)> {
    let inv_t = 1.0 / t;
    // s = 1/(u + 1/t), ds = s^2 du, u in [1/t, inf) covers s in (0, t/2]
    let left = move |u: f64| {
        let s = 1.0 / (u + inv_t);
        log_g(s) + 2.0 * s.ln()
    };
    // t - s = 1/(w + 1/t)
    let right = move |w: f64| {
        let tau = 1.0 / (w + inv_t);
        log_g(t - tau) + 2.0 * tau.ln()
    };
    integrate(
        &[
            Piece { f: &left, a: inv_t, b: f64::INFINITY, h: inv_t },
            Piece { f: &right, a: inv_t, b: f64::INFINITY, h: inv_t },
        ],
        tol,
    )
}

fn convolve_with_tol(
    mu: f64,
    q: &KernelQuery,
    src: &HittingDensitySource,
    cfg: &QuadratureConfig,
    rel_tol: f64,
) -> Result<LogValue> {
    let KernelQuery { t, y, a, .. } = *q;
    let g = |s: f64| {
        let ls = src.log_density(s);
        if ls == f64::NEG_INFINITY {
            return ls;
        }
        let tau = t - s;
        if !(tau > 0.0) {
            return f64::NEG_INFINITY;
        }
        match log_free_kernel(mu, tau, a, y) {
            Ok(p) => ls + p.ln(),
            Err(_) => f64::NEG_INFINITY,
        }
    };
    let (v, _) = integrate_on_unit_interval_split(&g, t, &cfg.tolerance(rel_tol))?;
    LogValue::new(v)
}

/// `ln r_a(t,x,y)`; the error estimate stays below `cfg.rel_tol` relative.
pub fn convolve_r(
    mu: f64,
    q: &KernelQuery,
    src: &HittingDensitySource,
    cfg: &QuadratureConfig,
) -> Result<LogValue> {
    check_index(mu)?;
    cfg.validate()?;
    let q = KernelQuery::new(q.t, q.x, q.y, q.a)?;
    check_source(mu, &q, src)?;
    convolve_with_tol(mu, &q, src, cfg, cfg.rel_tol)
}

/// `ln p_a(t,x,y) = ln(p - r)`. When `p - r` cancels, the quadrature is
/// rerun at a tighter tolerance so the result keeps roughly `cfg.rel_tol`
/// relative accuracy, down to a floor of 1e-13 on `r`.
pub fn killed_kernel_via_hunt(
    mu: f64,
    q: &KernelQuery,
    src: &HittingDensitySource,
    cfg: &QuadratureConfig,
) -> Result<LogValue> {
    let lr = convolve_r(mu, q, src, cfg)?.ln();
    let lp = log_free_kernel(mu, q.t, q.x, q.y)?.ln();
    let mut lr = lr;
    if lr > lp - 1.0 {
        // fraction of p left after subtracting r
        let left = -(lr - lp).exp_m1();
        if left < 1.0 {
            let needed = (cfg.rel_tol * left.max(0.0) / (1.0 - left)).max(TIGHTEST_REL_TOL);
            if needed < cfg.rel_tol {
                lr = convolve_with_tol(mu, q, src, cfg, needed)?.ln();
            }
        }
    }
    finish_difference(lp, lr, cfg.rel_tol)
}

fn finish_difference(lp: f64, lr: f64, rel_tol: f64) -> Result<LogValue> {
    if lr >= lp {
        let excess = (lr - lp).exp_m1();
        if excess > 10.0 * rel_tol.max(TIGHTEST_REL_TOL) {
            return Err(Error::NegativeDensity { excess });
        }
        return Err(Error::Cancellation { digits_lost: f64::INFINITY, approx: f64::NEG_INFINITY });
    }
    let out = log_sub_exp(lp, lr);
    let digits_lost = (lp - out) / std::f64::consts::LN_10;
    if digits_lost > MAX_DIGITS_LOST {
        return Err(Error::Cancellation { digits_lost, approx: out });
    }
    LogValue::new(out)
}

/// Quadrature of `H(t,a,b) = int_0^t (t-s)^{-1/2} s^{-3/2} e^{-a/2s} e^{-b/2(t-s)} ds`.
pub fn verify_h_quadrature(t: f64, a_param: f64, b_param: f64, cfg: &QuadratureConfig) -> Result<LogValue> {
    cfg.validate()?;
    for (n, v) in [("t", t), ("a", a_param), ("b", b_param)] {
        if !(v > 0.0) || !v.is_finite() {
            return Err(domain(format!("{n} must be positive")));
        }
    }
    let g = |s: f64| {
        let tau = t - s;
        if !(s > 0.0 && tau > 0.0) {
            return f64::NEG_INFINITY;
        }
        -0.5 * tau.ln() - 1.5 * s.ln() - a_param / (2.0 * s) - b_param / (2.0 * tau)
    };
    let (v, _) = integrate_on_unit_interval_split(&g, t, &cfg.tolerance(cfg.rel_tol))?;
    LogValue::new(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{log_h, log_half_killed_kernel, log_half_r};

    #[test]
    fn config_validation() {
        assert!(QuadratureConfig::default().validate().is_ok());
        let bad = QuadratureConfig { rel_tol: 1e-2, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = QuadratureConfig { max_subdivisions: 8, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn h_integral_matches_closed_form() {
        let cfg = QuadratureConfig::default();
        for &(t, a, b) in &[(1.0, 1.0, 1.0), (10.0, 0.01, 25.0), (0.01, 100.0, 0.01)] {
            let q = verify_h_quadrature(t, a, b, &cfg).unwrap().ln();
            let c = log_h(t, a, b).unwrap().ln();
            assert!(((q - c).exp() - 1.0).abs() < 1e-8, "({t},{a},{b}): {q} vs {c}");
        }
    }

    #[test]
    fn h_symmetry_from_asymmetric_integral() {
        let cfg = QuadratureConfig::default();
        let h_ab = verify_h_quadrature(2.0, 0.3, 4.0, &cfg).unwrap().ln();
        let h_ba = verify_h_quadrature(2.0, 4.0, 0.3, &cfg).unwrap().ln();
        assert!((h_ab + 0.5 * 0.3f64.ln() - h_ba - 0.5 * 4.0f64.ln()).abs() < 1e-8);
    }

    #[test]
    fn convolution_reproduces_half_index_r() {
        let cfg = QuadratureConfig::default();
        let q = KernelQuery::unit(1.0, 2.0, 3.0).unwrap();
        let src = HittingDensitySource::exact_half(2.0, 1.0).unwrap();
        let r = convolve_r(0.5, &q, &src, &cfg).unwrap().ln();
        let exact = log_half_r(&q).unwrap().ln();
        assert!(((r - exact).exp() - 1.0).abs() < 1e-8);
        let p1 = killed_kernel_via_hunt(0.5, &q, &src, &cfg).unwrap().ln();
        let exact = log_half_killed_kernel(&q).unwrap().ln();
        assert!(((p1 - exact).exp() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn near_barrier_start_absorbs_immediately() {
        let cfg = QuadratureConfig::default();
        let x = 1.000001;
        let q = KernelQuery::unit(1.0, x, 2.0).unwrap();
        let src = HittingDensitySource::exact_half(x, 1.0).unwrap();
        let r = convolve_r(0.5, &q, &src, &cfg).unwrap().ln();
        let p = log_free_kernel(0.5, 1.0, 1.0, 2.0).unwrap().ln();
        assert!((r - p).abs() < 1e-5);
    }

    #[test]
    fn extreme_cancellation_matches_closed_form() {
        let cfg = QuadratureConfig::default();
        let q = KernelQuery::unit(100.0, 1.01, 1.02).unwrap();
        let src = HittingDensitySource::exact_half(1.01, 1.0).unwrap();
        let p1 = killed_kernel_via_hunt(0.5, &q, &src, &cfg).unwrap().ln();
        let exact = log_half_killed_kernel(&q).unwrap().ln();
        assert!(((p1 - exact).exp() - 1.0).abs() < 1e-6, "{p1} vs {exact}");
    }

    #[test]
    fn short_time_killing_negligible() {
        let cfg = QuadratureConfig::default();
        let q = KernelQuery::unit(1e-4, 2.0, 2.0).unwrap();
        let src = HittingDensitySource::exact_half(2.0, 1.0).unwrap();
        let p1 = killed_kernel_via_hunt(0.5, &q, &src, &cfg).unwrap().ln();
        let p = log_free_kernel(0.5, 1e-4, 2.0, 2.0).unwrap().ln();
        assert!((p1 - p).abs() < 1e-12);
    }

    #[test]
    fn rejects_mismatched_source() {
        let cfg = QuadratureConfig::default();
        let q = KernelQuery::unit(1.0, 2.0, 3.0).unwrap();
        let src = HittingDensitySource::exact_half(2.5, 1.0).unwrap();
        assert!(convolve_r(0.5, &q, &src, &cfg).is_err());
        let src = HittingDensitySource::exact_half(2.0, 1.0).unwrap();
        assert!(convolve_r(1.5, &q, &src, &cfg).is_err());
    }

    #[test]
    fn difference_error_paths() {
        assert!(matches!(finish_difference(0.0, 0.1, 1e-9), Err(Error::NegativeDensity { .. })));
        assert!(matches!(finish_difference(0.0, -1e-12, 1e-9), Err(Error::Cancellation { .. })));
        assert!(finish_difference(0.0, -1.0, 1e-9).is_ok());
    }
}
