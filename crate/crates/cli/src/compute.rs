//! Kernel values by method, one `(t, x)` row of `y` values at a time so a
//! PDE slice or flux table is built once per row.

use bkk::certify::log_grid;
use bkk::hunt::{killed_kernel_via_hunt, HittingDensitySource, QuadratureConfig};
use bkk::kernels::{log_half_hitting_density, log_half_killed_kernel, log_half_survival, KernelQuery};
use bkk::mc::{simulate_killed_histogram, McConfig};
use bkk::pde::{hitting_density_flux, solve_killed_kernel, survival_probability, PdeConfig};
use clap::ValueEnum;
use serde::Serialize;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Auto,
    Closed,
    Hunt,
    Pde,
    Mc,
}

impl Method {
    fn resolve(self, m: f64) -> Result<Method, CliError> {
        match self {
            Method::Auto if m == 0.5 => Ok(Method::Closed),
            Method::Auto => Ok(Method::Pde),
            Method::Closed if m != 0.5 => Err(CliError::Usage("the closed form exists only for mu = +-1/2".into())),
            other => Ok(other),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::Auto => "auto",
            Method::Closed => "closed_form",
            Method::Hunt => "hunt",
            Method::Pde => "pde",
            Method::Mc => "mc",
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct Settings {
    pub pde: PdeConfig,
    pub quadrature: QuadratureConfig,
    pub mc: McConfig,
}

/// `ln p_a^(mu)(t,x,y)` plus the method that produced it.
#[derive(Debug, Clone, Copy)]
pub struct Value {
    pub log: f64,
    pub method: Method,
    /// Standard error of `log`, Monte Carlo only.
    pub std_err: Option<f64>,
}

/// Points per decade and decades of lead-in of the flux table behind `hunt`.
const FLUX_POINTS_PER_DECADE: f64 = 40.0;
const FLUX_DECADES: f64 = 6.0;
/// Half-width of the Monte Carlo density bin relative to `y - a`.
const MC_BIN_HALF_WIDTH: f64 = 0.05;

pub fn validate(mu: f64, t: f64, x: f64, y: f64, a: f64) -> Result<KernelQuery, CliError> {
    // rejects mu = 0 before anything else
    bkk::kernels::log_free_kernel(mu, t, x, y)?;
    Ok(KernelQuery::new(t, x, y, a)?)
}

pub fn hitting_source(m: f64, x: f64, t: f64, pde: &PdeConfig) -> Result<HittingDensitySource, CliError> {
    if m == 0.5 {
        return Ok(HittingDensitySource::exact_half(x, 1.0)?);
    }
    let lo = t * 10f64.powf(-FLUX_DECADES);
    let s = log_grid(lo, t, (FLUX_DECADES * FLUX_POINTS_PER_DECADE) as usize + 1);
    Ok(hitting_density_flux(m, x, pde, &s)?)
}

/// Killed-kernel values at every `y` for one `(t, x)`; each entry fails on its own.
pub fn kernel_row(
    mu: f64,
    a: f64,
    t: f64,
    x: f64,
    ys: &[f64],
    method: Method,
    st: &Settings,
) -> Result<Vec<Result<Value, CliError>>, CliError> {
    for &y in ys {
        validate(mu, t, x, y, a)?;
    }
    let m = mu.abs();
    let method = method.resolve(m)?;
    let (tu, xu) = (t / (a * a), x / a);
    let jac = -a.ln();
    let reflect = |yu: f64| if mu < 0.0 { 2.0 * m * (xu / yu).ln() } else { 0.0 };
    let ok = |log: f64| Value { log, method, std_err: None };
    let out = match method {
        Method::Closed => ys
            .iter()
            .map(|&y| {
                let q = KernelQuery::unit(tu, xu, y / a)?;
                Ok(ok(log_half_killed_kernel(&q)?.ln() + reflect(q.y) + jac))
            })
            .collect(),
        Method::Pde => {
            let slice = solve_killed_kernel(m, tu, xu, &st.pde)?;
            ys.iter()
                .map(|&y| match slice.log_value_at(y / a) {
                    Some(v) => Ok(ok(v + reflect(y / a) + jac)),
                    None => Err(CliError::Failed(format!("y = {y} is beyond the depth the PDE resolves at this (t, x)"))),
                })
                .collect()
        }
        Method::Hunt => {
            let src = hitting_source(m, xu, tu, &st.pde)?;
            ys.iter()
                .map(|&y| {
                    let q = KernelQuery::unit(tu, xu, y / a)?;
                    Ok(ok(killed_kernel_via_hunt(m, &q, &src, &st.quadrature)?.ln() + reflect(q.y) + jac))
                })
                .collect()
        }
        Method::Mc => ys
            .iter()
            .map(|&y| {
                let yu = y / a;
                let h = MC_BIN_HALF_WIDTH * (yu - 1.0);
                let e = simulate_killed_histogram(mu, xu, tu, &[(yu - h, yu + h)], &st.mc)?[0];
                if !(e.mean > 0.0) {
                    return Err(CliError::Failed(format!("no paths landed near y = {y}; raise --paths")));
                }
                Ok(Value { log: (e.mean / (2.0 * h)).ln() + jac, method, std_err: Some(e.std_err / e.mean) })
            })
            .collect(),
        Method::Auto => unreachable!("resolved above"),
    };
    Ok(out)
}

/// `ln P_x(T_a > t)`.
pub fn log_survival(mu: f64, a: f64, t: f64, x: f64, st: &Settings) -> Result<(f64, Method), CliError> {
    validate(mu, t, x, x, a)?;
    let (tu, xu) = (t / (a * a), x / a);
    let m = mu.abs();
    let (s, method) = if m == 0.5 {
        (log_half_survival(xu, tu)?.ln(), Method::Closed)
    } else {
        (survival_probability(m, tu, xu, &st.pde)?.ln(), Method::Pde)
    };
    if mu > 0.0 {
        return Ok((s, method));
    }
    // P^(-m)(T <= t) = x^{2m} P^(m)(T <= t)
    let hit = xu.powf(2.0 * m) * -s.exp_m1();
    Ok(((-hit).ln_1p(), method))
}

/// `ln q_{x,a}(s)` at each `s`.
pub fn log_hitting_density(mu: f64, a: f64, x: f64, s: &[f64], st: &Settings) -> Result<(Vec<f64>, Method), CliError> {
    for &v in s {
        validate(mu, v, x, x, a)?;
    }
    let xu = x / a;
    let m = mu.abs();
    let shift = if mu < 0.0 { 2.0 * m * xu.ln() } else { 0.0 } - 2.0 * a.ln();
    if m == 0.5 {
        let v = s
            .iter()
            .map(|&v| Ok(log_half_hitting_density(xu, v / (a * a))?.ln() + shift))
            .collect::<Result<_, CliError>>()?;
        return Ok((v, Method::Closed));
    }
    let mut su: Vec<f64> = s.iter().map(|v| v / (a * a)).collect();
    su.sort_by(f64::total_cmp);
    su.dedup();
    let src = hitting_density_flux(m, xu, &st.pde, &su)?;
    Ok((s.iter().map(|&v| src.log_density(v / (a * a)) + shift).collect(), Method::Pde))
}
