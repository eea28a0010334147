//! Modified Bessel function of the first kind, evaluated in log scale.
//!
//! Two regimes share the work. Below the crossover `z = max(30, 2 mu^2)` the
//! ascending power series is summed with running rescaling, so no term ever
//! overflows. Above it the Hankel expansion of `e^{-z} I_mu(z)` is summed up
//! to its smallest term. All public results are natural logarithms.

use statrs::function::gamma::ln_gamma;

use crate::error::{domain, Result};
use crate::logval::LogValue;

/// Series terms below this fraction of the running sum are dropped.
const SERIES_REL_CUTOFF: f64 = 1e-17;
const RESCALE_AT: f64 = 1e280;

/// Order `mu` of `I_mu`; finite and `> -1`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct BesselOrder(f64);

impl BesselOrder {
    pub fn new(mu: f64) -> Result<Self> {
        if !mu.is_finite() || mu <= -1.0 {
            return Err(domain(format!("Bessel order must be finite and > -1, got {mu}")));
        }
        Ok(BesselOrder(mu))
    }

    #[inline]
    pub fn mu(self) -> f64 {
        self.0
    }

    fn crossover(self) -> f64 {
        f64::max(30.0, 2.0 * self.0 * self.0)
    }
}

fn check_arg(z: f64) -> Result<()> {
    if !(z > 0.0) || !z.is_finite() {
        return Err(domain(format!("Bessel argument must be positive and finite, got {z}")));
    }
    Ok(())
}

/// `ln sum_k (z^2/4)^k / (k! (mu+1)_k)`, i.e. the series with its leading
/// factor `(z/2)^mu / Gamma(mu+1)` removed.
fn log_series_sum(mu: f64, z: f64) -> f64 {
    let q = 0.25 * z * z;
    let mut term = 1.0_f64;
    let mut sum = 1.0_f64;
    let mut log_scale = 0.0_f64;
    let mut k = 0.0_f64;
    loop {
        k += 1.0;
        let ratio = q / (k * (k + mu));
        term *= ratio;
        sum += term;
        if sum > RESCALE_AT {
            sum /= RESCALE_AT;
            term /= RESCALE_AT;
            log_scale += RESCALE_AT.ln();
        }
        if ratio < 1.0 && term < SERIES_REL_CUTOFF * sum {
            break;
        }
    }
    log_scale + sum.ln()
}

/// `ln(e^{-z} sqrt(2 pi z) I_mu(z))` from the Hankel expansion, truncated at
/// its smallest term.
fn log_hankel_sum(mu: f64, z: f64) -> f64 {
    let four_mu2 = 4.0 * mu * mu;
    let mut term = 1.0_f64;
    let mut sum = 1.0_f64;
    let mut k = 1.0_f64;
    loop {
        let odd = 2.0 * k - 1.0;
        let next = -term * (four_mu2 - odd * odd) / (8.0 * k * z);
        if next.abs() >= term.abs() || next == 0.0 {
            break;
        }
        sum += next;
        term = next;
        if term.abs() < SERIES_REL_CUTOFF * sum.abs() {
            break;
        }
        k += 1.0;
    }
    sum.ln()
}

/// `ln(e^{-z} I_mu(z))`, the exponentially scaled function in log form.
pub fn log_bessel_i_scaled(order: BesselOrder, z: f64) -> Result<f64> {
    check_arg(z)?;
    let mu = order.mu();
    if z < order.crossover() {
        Ok(mu * (0.5 * z).ln() - ln_gamma(mu + 1.0) + log_series_sum(mu, z) - z)
    } else {
        Ok(-0.5 * (2.0 * std::f64::consts::PI * z).ln() + log_hankel_sum(mu, z))
    }
}

/// `ln I_mu(z)` for `z > 0`.
pub fn log_bessel_i(order: BesselOrder, z: f64) -> Result<LogValue> {
    Ok(LogValue::from_raw(log_bessel_i_scaled(order, z)? + z))
}

/// `ln(I_mu(z_num) / I_mu(z_den))`.
pub fn log_bessel_i_ratio(order: BesselOrder, z_num: f64, z_den: f64) -> Result<f64> {
    check_arg(z_num)?;
    check_arg(z_den)?;
    if z_num == z_den {
        return Ok(0.0);
    }
    let num = log_bessel_i_scaled(order, z_num)?;
    let den = log_bessel_i_scaled(order, z_den)?;
    Ok((num - den) + (z_num - z_den))
}

/// `ln(I_mu(z) / z^mu)`, nondecreasing in `z`.
pub fn log_scaled_bessel_power(order: BesselOrder, z: f64) -> Result<f64> {
    check_arg(z)?;
    let mu = order.mu();
    if z < order.crossover() {
        // the z^mu factors cancel analytically, which keeps z -> 0 exact
        Ok(-mu * std::f64::consts::LN_2 - ln_gamma(mu + 1.0) + log_series_sum(mu, z))
    } else {
        Ok(log_bessel_i(order, z)?.ln() - mu * z.ln())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn ord(mu: f64) -> BesselOrder {
        BesselOrder::new(mu).unwrap()
    }

    #[test]
    fn rejects_bad_domain() {
        assert!(BesselOrder::new(-1.0).is_err());
        assert!(BesselOrder::new(f64::NAN).is_err());
        assert!(log_bessel_i(ord(1.0), 0.0).is_err());
        assert!(log_bessel_i(ord(1.0), -2.0).is_err());
        assert!(log_bessel_i_ratio(ord(1.0), 1.0, 0.0).is_err());
        assert!(log_scaled_bessel_power(ord(1.0), -1.0).is_err());
    }

    #[test]
    fn half_order_closed_form() {
        // I_{1/2}(z) = sqrt(2/(pi z)) sinh z
        for &z in &[1e-6, 0.3, 1.0, 7.5, 29.9, 30.0, 31.0, 250.0, 1e5] {
            let exact = 0.5 * (2.0 / (PI * z)).ln() + z + (-(-2.0 * z).exp_m1()).ln() - 2f64.ln();
            let got = log_bessel_i(ord(0.5), z).unwrap().ln();
            assert!((got - exact).abs() < 1e-12 * exact.abs().max(1.0), "z={z}: {got} vs {exact}");
        }
        let v = log_bessel_i(ord(0.5), 1.0).unwrap().exp();
        assert!((v - 0.937_674_888_245_488_2).abs() < 1e-13);
    }

    #[test]
    fn small_argument_leading_term() {
        // I_1(z) ~ z/2
        let z = 1e-9;
        let got = log_bessel_i(ord(1.0), z).unwrap().ln() - (z / 2.0).ln();
        assert!(got.abs() < 1e-15);
        let lim = log_scaled_bessel_power(ord(0.5), 1e-300).unwrap();
        let expected = -0.5 * 2f64.ln() - ln_gamma(1.5);
        assert!((lim - expected).abs() < 1e-15);
    }

    #[test]
    fn large_argument_no_overflow() {
        let v = log_bessel_i(ord(2.0), 700.0).unwrap().ln();
        let lead = 700.0 - 0.5 * (2.0 * PI * 700.0).ln();
        // first Hankel correction: -(4mu^2-1)/(8z)
        assert!((v - lead - (1.0 - 15.0 / 5600.0f64).ln()).abs() < 1e-5);
        assert!(log_bessel_i(ord(50.0), 1e6).unwrap().ln().is_finite());
    }

    #[test]
    fn ratio_examples() {
        assert_eq!(log_bessel_i_ratio(ord(0.5), 3.0, 3.0).unwrap(), 0.0);
        let r = log_bessel_i_ratio(ord(1.0), 2.0, 1.0).unwrap();
        assert!(r >= -(2f64.ln()) + 1.0 && r <= 2f64.ln() + 1.0);
        let r = log_bessel_i_ratio(ord(0.5), 5.0, 2.0).unwrap();
        let exact = (5f64.sinh() / 2f64.sinh()).ln() - 0.5 * 2.5f64.ln();
        assert!((r - exact).abs() < 1e-13);
    }

    #[test]
    fn scaled_power_consistent_with_log_bessel() {
        let a = log_scaled_bessel_power(ord(3.0), 10.0).unwrap();
        let b = log_bessel_i(ord(3.0), 10.0).unwrap().ln() - 3.0 * 10f64.ln();
        assert!((a - b).abs() < 1e-12);
        let lo = log_scaled_bessel_power(ord(1.0), 1.0).unwrap();
        let hi = log_scaled_bessel_power(ord(1.0), 2.0).unwrap();
        assert!(hi > lo);
    }

    #[test]
    fn crossover_is_continuous() {
        for &mu in &[0.1, 0.5, 3.0, 5.0, 20.0, 50.0] {
            let o = ord(mu);
            let zc = o.crossover();
            let below = log_bessel_i_scaled(o, zc * (1.0 - 1e-12)).unwrap();
            let above = log_bessel_i_scaled(o, zc).unwrap();
            assert!((below - above).abs() < 1e-12, "mu={mu}: {below} vs {above}");
        }
    }
}
