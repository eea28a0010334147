//! Closed-form kernels and envelopes, all in log scale.
//!
//! The free kernel holds for any nonzero index. Killed kernels in closed
//! form exist only for the index 1/2 (and, through the reflection, -1/2);
//! other indices come from [`crate::pde`] or [`crate::hunt`]. Everything
//! here is written for the unit barrier; [`reduce_to_unit_barrier`] is the
//! way to serve other barrier levels.

use serde::{Deserialize, Serialize};
use libm::erfc;
use std::f64::consts::PI;

use crate::error::{domain, Result};
use crate::logval::{log1m_exp, log_add_exp, LogValue};
use crate::special_fn::{log_bessel_i_scaled, BesselOrder};

/// `(t, x, y, a)`: time, two space points strictly above the barrier `a`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelQuery {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub a: f64,
}

impl KernelQuery {
    pub fn new(t: f64, x: f64, y: f64, a: f64) -> Result<Self> {
        for (name, v) in [("t", t), ("x", x), ("y", y), ("a", a)] {
            if !v.is_finite() {
                return Err(domain(format!("{name} must be finite")));
            }
        }
        if t <= 0.0 {
            return Err(domain("t must be positive"));
        }
        if a <= 0.0 {
            return Err(domain("a must be positive"));
        }
        if x <= a {
            return Err(domain("x must exceed a"));
        }
        if y <= a {
            return Err(domain("y must exceed a"));
        }
        Ok(KernelQuery { t, x, y, a })
    }

    pub fn unit(t: f64, x: f64, y: f64) -> Result<Self> {
        Self::new(t, x, y, 1.0)
    }

    /// The same query with `x` and `y` exchanged.
    pub fn swapped(self) -> Self {
        KernelQuery { x: self.y, y: self.x, ..self }
    }

    fn require_unit(&self) -> Result<()> {
        if self.a != 1.0 {
            return Err(domain("query must use the unit barrier a = 1; see reduce_to_unit_barrier"));
        }
        Ok(())
    }
}

/// Log of the two-sided envelope for one query.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub log_val: LogValue,
}

pub(crate) fn check_index(mu: f64) -> Result<()> {
    if !mu.is_finite() {
        return Err(domain("mu must be finite"));
    }
    if mu == 0.0 {
        return Err(domain("mu must be nonzero"));
    }
    Ok(())
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0) || !v.is_finite() {
        return Err(domain(format!("{name} must be positive and finite, got {v}")));
    }
    Ok(())
}

/// `ln p^(mu)(t,x,y)`; the exponent is combined with the scaled Bessel
/// function so `-(x^2+y^2)/2t + xy/t` never appears unreduced.
pub fn log_free_kernel(mu: f64, t: f64, x: f64, y: f64) -> Result<LogValue> {
    check_index(mu)?;
    check_positive("t", t)?;
    check_positive("x", x)?;
    check_positive("y", y)?;
    let order = BesselOrder::new(mu.abs())?;
    let d = x - y;
    let v = -t.ln() + mu * (y / x).ln() + y.ln() - d * d / (2.0 * t)
        + log_bessel_i_scaled(order, x * y / t)?;
    Ok(LogValue::from_raw(v))
}

/// Hitting density of the unit level for the index 1/2, started at `x > 1`.
pub fn log_half_hitting_density(x: f64, s: f64) -> Result<LogValue> {
    if !(x > 1.0) || !x.is_finite() {
        return Err(domain("x must exceed 1"));
    }
    check_positive("s", s)?;
    let xm = x - 1.0;
    let v = (xm / x).ln() - 0.5 * (2.0 * PI * s * s * s).ln() - xm * xm / (2.0 * s);
    Ok(LogValue::from_raw(v))
}

/// `ln P_x(T_1 > t)` for the index 1/2: `1 - erfc((x-1)/sqrt(2t)) / x`.
pub fn log_half_survival(x: f64, t: f64) -> Result<LogValue> {
    if !(x > 1.0) || !x.is_finite() {
        return Err(domain("x must exceed 1"));
    }
    check_positive("t", t)?;
    let hit = erfc((x - 1.0) / (2.0 * t).sqrt()) / x;
    Ok(LogValue::from_raw((-hit).ln_1p()))
}

/// Hitting density of level `a` from `x > a` for the index 1/2.
pub(crate) fn log_half_hitting_density_at(x: f64, a: f64, s: f64) -> f64 {
    let xm = x - a;
    (xm / x).ln() - 0.5 * (2.0 * PI * s * s * s).ln() - xm * xm / (2.0 * s)
}

/// `ln H(t,a,b)` with `H = sqrt(2 pi/(t a)) exp(-(sqrt a + sqrt b)^2 / 2t)`.
pub fn log_h(t: f64, a_param: f64, b_param: f64) -> Result<LogValue> {
    check_positive("t", t)?;
    check_positive("a", a_param)?;
    check_positive("b", b_param)?;
    let s = a_param.sqrt() + b_param.sqrt();
    Ok(LogValue::from_raw(0.5 * (2.0 * PI / (t * a_param)).ln() - s * s / (2.0 * t)))
}

fn log_half_prefactor(t: f64, x: f64, y: f64) -> f64 {
    -0.5 * (2.0 * PI * t).ln() + (y / x).ln()
}

/// `ln p_1^(1/2)(t,x,y)`; the difference of Gaussians is factored as
/// `e^{-(x-y)^2/2t} (1 - e^{-2(x-1)(y-1)/t})`.
pub fn log_half_killed_kernel(q: &KernelQuery) -> Result<LogValue> {
    q.require_unit()?;
    let d = q.x - q.y;
    let v = log_half_prefactor(q.t, q.x, q.y) - d * d / (2.0 * q.t)
        + log1m_exp(-2.0 * (q.x - 1.0) * (q.y - 1.0) / q.t);
    Ok(LogValue::from_raw(v))
}

/// Index-1/2 killed kernel at an arbitrary barrier (image construction).
pub(crate) fn log_half_killed_kernel_at(t: f64, x: f64, y: f64, a: f64) -> f64 {
    let d = x - y;
    log_half_prefactor(t, x, y) - d * d / (2.0 * t) + log1m_exp(-2.0 * (x - a) * (y - a) / t)
}

/// `ln r_1^(1/2)(t,x,y)`, the part of the free kernel removed by killing.
pub fn log_half_r(q: &KernelQuery) -> Result<LogValue> {
    q.require_unit()?;
    let s = q.x + q.y - 2.0;
    let v = log_half_prefactor(q.t, q.x, q.y) - s * s / (2.0 * q.t)
        + log1m_exp(-2.0 * (q.x + q.y - 1.0) / q.t);
    Ok(LogValue::from_raw(v))
}

/// Free kernel of the index 1/2 written with elementary functions.
#[cfg(test)]
pub(crate) fn log_half_free_kernel(t: f64, x: f64, y: f64) -> f64 {
    let d = x - y;
    log_half_prefactor(t, x, y) - d * d / (2.0 * t) + log1m_exp(-2.0 * x * y / t)
}

/// Brownian motion killed at 1: the index -1/2 killed kernel by reflection
/// of Gaussians, independent of the Bessel machinery.
pub fn log_brownian_killed_kernel(q: &KernelQuery) -> Result<LogValue> {
    q.require_unit()?;
    let d = q.x - q.y;
    let v = -0.5 * (2.0 * PI * q.t).ln() - d * d / (2.0 * q.t)
        + log1m_exp(-2.0 * (q.x - 1.0) * (q.y - 1.0) / q.t);
    Ok(LogValue::from_raw(v))
}

#[inline]
fn log_min1(v: f64) -> f64 {
    v.min(0.0)
}

/// Two-sided envelope
/// `[1 ^ (x-a)(y-a)/t] (1 ^ xy/t)^{|mu|-1/2} (y/x)^{mu+1/2} t^{-1/2} e^{-(x-y)^2/2t}`.
pub fn log_envelope(mu: f64, q: &KernelQuery) -> Result<Envelope> {
    check_index(mu)?;
    let KernelQuery { t, x, y, a } = *q;
    let d = x - y;
    let v = log_min1(((x - a) * (y - a) / t).ln())
        + (mu.abs() - 0.5) * log_min1((x * y / t).ln())
        + (mu + 0.5) * (y / x).ln()
        - 0.5 * t.ln()
        - d * d / (2.0 * t);
    Ok(Envelope { log_val: LogValue::from_raw(v) })
}

/// `ln[(1 ^ (x-a)(y-a)/t)(1 v t/xy)]`, the boundary factor of the ratio form.
pub fn log_rewrite_rhs(q: &KernelQuery) -> f64 {
    let KernelQuery { t, x, y, a } = *q;
    log_min1(((x - a) * (y - a) / t).ln()) + (t / (x * y)).ln().max(0.0)
}

/// The free-kernel profile implied by the envelope: `envelope / rewrite_rhs`.
pub fn log_free_envelope(mu: f64, q: &KernelQuery) -> Result<f64> {
    Ok(log_envelope(mu, q)?.log_val.ln() - log_rewrite_rhs(q))
}

/// Hitting-time envelope for the unit barrier.
pub fn log_hitting_envelope(mu: f64, x: f64, s: f64) -> Result<LogValue> {
    check_index(mu)?;
    if !(x > 1.0) || !x.is_finite() {
        return Err(domain("x must exceed 1"));
    }
    check_positive("s", s)?;
    let m = mu.abs();
    let xm = x - 1.0;
    let v = xm.ln() + log_min1(-2.0 * mu * x.ln()) - 1.5 * s.ln() - xm * xm / (2.0 * s)
        + (2.0 * m - 1.0) * x.ln()
        - log_add_exp((m - 0.5) * s.ln(), (m - 0.5) * x.ln());
    Ok(LogValue::from_raw(v))
}

/// Survival-probability envelope `[(x-1)/(sqrt(x ^ t) + x - 1)] / (t^mu + x^{2mu})`.
pub fn log_survival_envelope(mu: f64, x: f64, t: f64) -> Result<LogValue> {
    check_index(mu)?;
    if !(x > 1.0) || !x.is_finite() {
        return Err(domain("x must exceed 1"));
    }
    check_positive("t", t)?;
    let xm = x - 1.0;
    let v = xm.ln() - (x.min(t).sqrt() + xm).ln() - log_add_exp(mu * t.ln(), 2.0 * mu * x.ln());
    Ok(LogValue::from_raw(v))
}

/// Maps a query at barrier `a` to the unit barrier:
/// `ln p_a(t,x,y) = log_jacobian + ln p_1(t/a^2, x/a, y/a)`.
pub fn reduce_to_unit_barrier(mu: f64, q: &KernelQuery) -> Result<(KernelQuery, f64)> {
    check_index(mu)?;
    let q = KernelQuery::new(q.t, q.x, q.y, q.a)?;
    if q.a == 1.0 {
        return Ok((q, 0.0));
    }
    let a = q.a;
    let unit = KernelQuery::unit(q.t / (a * a), q.x / a, q.y / a)?;
    Ok((unit, -a.ln()))
}

/// `ln p_1^(-mu) - ln p_1^(mu) = 2 mu ln(x/y)` for `mu > 0`.
pub fn reflect_index(mu: f64, q: &KernelQuery) -> Result<f64> {
    if !(mu > 0.0) || !mu.is_finite() {
        return Err(domain("reflect_index needs mu > 0"));
    }
    q.require_unit()?;
    Ok(2.0 * mu * (q.x / q.y).ln())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1.0)
    }

    #[test]
    fn query_validation_names_the_invariant() {
        let e = KernelQuery::new(1.0, 0.5, 2.0, 1.0).unwrap_err();
        assert!(e.to_string().contains("x must exceed a"));
        assert!(KernelQuery::new(0.0, 2.0, 2.0, 1.0).is_err());
        assert!(KernelQuery::new(1.0, 2.0, 1.0, 1.0).is_err());
        assert!(log_free_kernel(0.0, 1.0, 1.0, 1.0).unwrap_err().to_string().contains("nonzero"));
    }

    #[test]
    fn free_kernel_half_index_matches_sinh_form() {
        let v = log_free_kernel(0.5, 1.0, 1.0, 1.0).unwrap().ln();
        let expected = (-(0.5 * (2.0 * PI).ln())) + (1.0 - (-2.0f64).exp()).ln();
        assert!(close(v, expected, 1e-12));
        for &(t, x, y) in &[(0.01, 1.3, 1.2), (3.0, 0.2, 9.0), (100.0, 40.0, 2.0), (1e-3, 50.0, 50.01)] {
            let a = log_free_kernel(0.5, t, x, y).unwrap().ln();
            let b = log_half_free_kernel(t, x, y);
            assert!((a - b).abs() < 1e-12, "({t},{x},{y}): {a} vs {b}");
        }
    }

    #[test]
    fn free_kernel_huge_arguments_stay_finite() {
        let v = log_free_kernel(1.0, 1.0, 1e6, 1e6).unwrap().ln();
        let approx = -0.5 * (2.0 * PI).ln();
        assert!((v - approx).abs() < 1e-5, "{v}");
    }

    #[test]
    fn half_hitting_density_values() {
        let v = log_half_hitting_density(2.0, 1.0).unwrap().ln();
        let expected = (0.5f64).ln() - 0.5 * (2.0 * PI).ln() - 0.5;
        assert!(close(v, expected, 1e-14));
        let near = log_half_hitting_density(1.0 + 1e-12, 1.0).unwrap().ln();
        assert!(near < -25.0);
        assert!(log_half_hitting_density(1.0, 1.0).is_err());
    }

    #[test]
    fn h_closed_form() {
        let v = log_h(1.0, 1.0, 1.0).unwrap().ln();
        assert!(close(v, 0.5 * (2.0 * PI).ln() - 2.0, 1e-15));
        let w = log_h(1.0, 4.0, 1e-12).unwrap().ln();
        assert!((w - ((2.0 * PI / 4.0).sqrt().ln() - 2.0)).abs() < 1e-5);
    }

    #[test]
    fn half_kernels_decompose_the_free_kernel() {
        let q = KernelQuery::unit(3.0, 1.5, 4.0).unwrap();
        let p = log_half_free_kernel(3.0, 1.5, 4.0);
        let p1 = log_half_killed_kernel(&q).unwrap().ln();
        let r = log_half_r(&q).unwrap().ln();
        assert!((log_add_exp(p1, r) - p).abs() < 1e-12);

        let q = KernelQuery::unit(1.0, 2.0, 2.0).unwrap();
        let expected = -0.5 * (2.0 * PI).ln() + (1.0 - (-2.0f64).exp()).ln();
        assert!(close(log_half_killed_kernel(&q).unwrap().ln(), expected, 1e-14));
        let expected_r = -0.5 * (2.0 * PI).ln() + ((-2.0f64).exp() - (-8.0f64).exp()).ln();
        assert!(close(log_half_r(&q).unwrap().ln(), expected_r, 1e-14));
    }

    #[test]
    fn killed_kernel_matches_factored_free_kernel() {
        let q = KernelQuery::unit(1.0, 2.0, 50.0).unwrap();
        let lhs = log_half_killed_kernel(&q).unwrap().ln();
        let rhs = log_free_kernel(0.5, 1.0, 2.0, 50.0).unwrap().ln() + log1m_exp(-2.0 * 49.0)
            - log1m_exp(-2.0 * 100.0);
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn killed_kernel_vanishes_at_barrier_and_r_tends_to_p() {
        let mut prev = f64::INFINITY;
        for k in 1..12 {
            let x = 1.0 + 10f64.powi(-k);
            let q = KernelQuery::unit(1.0, x, 2.0).unwrap();
            let v = log_half_killed_kernel(&q).unwrap().ln();
            assert!(v < prev);
            prev = v;
            let r = log_half_r(&q).unwrap().ln();
            let p = log_half_free_kernel(1.0, x, 2.0);
            if k > 8 {
                assert!((r - p).abs() < 1e-7);
            }
        }
        assert!(prev < -20.0);
    }

    #[test]
    fn envelope_examples() {
        let q = KernelQuery::new(4.0, 5.0, 5.0, 1.0).unwrap();
        for &mu in &[0.25, -1.0, 2.5] {
            assert!(close(log_envelope(mu, &q).unwrap().log_val.ln(), -0.5 * 4f64.ln(), 1e-15));
        }
        let q = KernelQuery::unit(1.0, 2.0, 3.0).unwrap();
        let plus = log_envelope(0.5, &q).unwrap().log_val.ln();
        let minus = log_envelope(-0.5, &q).unwrap().log_val.ln();
        // only (y/x)^{mu+1/2} differs; (1 ^ xy/t) = 1 here
        assert!(close(plus - minus, 1.5f64.ln(), 1e-14));
    }

    #[test]
    fn envelope_monotone_in_boundary_product() {
        let mut prev = f64::NEG_INFINITY;
        for k in 0..40 {
            let x = 1.0 + 1e-4 * 1.4f64.powi(k);
            let q = KernelQuery::unit(2.0, x, x).unwrap();
            // on the diagonal only the two bracketed factors move, both upward
            let v = log_envelope(1.0, &q).unwrap().log_val.ln();
            assert!(v >= prev - 1e-15);
            prev = v;
        }
    }

    #[test]
    fn half_survival_matches_hitting_mass() {
        assert!((log_half_survival(2.0, 1e12).unwrap().exp() - 0.5).abs() < 1e-6);
        assert!(log_half_survival(1000.0, 1e-3).unwrap().ln() > -1e-300);
        // P(T <= 1) from x = 2: erfc(1/sqrt 2) / 2
        let v = log_half_survival(2.0, 1.0).unwrap().exp();
        assert!((v - (1.0 - 0.317_310_507_862_914_1 / 2.0)).abs() < 1e-14, "{v}");
    }

    #[test]
    fn hitting_and_survival_envelopes() {
        let h = log_hitting_envelope(0.5, 2.0, 1.0).unwrap().ln();
        let q = log_half_hitting_density(2.0, 1.0).unwrap().ln();
        assert!((h - q).abs() < 3.0);
        assert!(log_hitting_envelope(2.0, 10.0, 0.1).unwrap().ln() < -400.0);
        let s = log_survival_envelope(0.5, 2.0, 1.0).unwrap().ln();
        assert!(close(s, (1.0f64 / 6.0).ln(), 1e-14));
        let s0 = log_survival_envelope(1.0, 4.0, 1e-14).unwrap().ln();
        assert!((s0 - (1.0f64 / 16.0).ln()).abs() < 1e-6);
        assert!(log_survival_envelope(1.0, 1.0 + 1e-15, 1.0).unwrap().ln() < -30.0);
    }

    #[test]
    fn scaling_and_reflection() {
        let q = KernelQuery::new(4.0, 4.0, 6.0, 2.0).unwrap();
        let (u, jac) = reduce_to_unit_barrier(0.5, &q).unwrap();
        assert_eq!((u.t, u.x, u.y, u.a), (1.0, 2.0, 3.0, 1.0));
        assert!((jac + 2f64.ln()).abs() < 1e-16);
        let direct = log_half_killed_kernel_at(4.0, 4.0, 6.0, 2.0);
        let scaled = jac + log_half_killed_kernel(&u).unwrap().ln();
        assert!((direct - scaled).abs() < 1e-12);

        let id = KernelQuery::unit(1.0, 2.0, 3.0).unwrap();
        assert_eq!(reduce_to_unit_barrier(1.0, &id).unwrap(), (id, 0.0));
        assert!((reflect_index(0.5, &id).unwrap() - (2.0f64 / 3.0).ln()).abs() < 1e-15);
        let bm = log_brownian_killed_kernel(&id).unwrap().ln();
        let refl = reflect_index(0.5, &id).unwrap() + log_half_killed_kernel(&id).unwrap().ln();
        assert!((bm - refl).abs() < 1e-13);
        assert!(reflect_index(-0.5, &id).is_err());
        assert_eq!(reflect_index(2.0, &KernelQuery::unit(1.0, 3.0, 3.0).unwrap()).unwrap(), 0.0);
    }
}
