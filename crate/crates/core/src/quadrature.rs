//! Adaptive Gauss-Kronrod (7/15) quadrature of integrands given as logs.
//!
//! Every panel is evaluated relative to the largest integrand value among
//! its own nodes, so panels whose magnitudes differ by hundreds of orders
//! combine through log-sum-exp without underflow. Error estimates follow
//! the QUADPACK rescaling of `|K15 - G7|`.

use crate::error::{Error, Result};
use crate::logval::log_sum_exp;

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
// Gauss weights for the odd-indexed Kronrod nodes plus the centre.
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// Tolerances for [`integrate`].
#[derive(Debug, Clone, Copy)]
pub(crate) struct Tolerance {
    pub rel_tol: f64,
    pub abs_log_floor: f64,
    pub max_subdivisions: usize,
}

#[derive(Debug, Clone, Copy)]
struct Panel {
    piece: usize,
    a: f64,
    b: f64,
    log_val: f64,
    log_err: f64,
}

fn gk15(f: &dyn Fn(f64) -> f64, piece: usize, a: f64, b: f64) -> Panel {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut logs = [0.0f64; 15];
    logs[7] = f(c);
    for j in 0..7 {
        logs[j] = f(c - h * XGK[j]);
        logs[14 - j] = f(c + h * XGK[j]);
    }
    let m = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY || h == 0.0 {
        return Panel { piece, a, b, log_val: f64::NEG_INFINITY, log_err: f64::NEG_INFINITY };
    }
    debug_assert!(!m.is_nan(), "NaN log-integrand on [{a}, {b}]");
    let v: Vec<f64> = logs.iter().map(|&l| (l - m).exp()).collect();
    let mut kron = WGK[7] * v[7];
    let mut gauss = WG[3] * v[7];
    for j in 0..7 {
        let s = v[j] + v[14 - j];
        kron += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    let mean = 0.5 * kron;
    let mut asc = WGK[7] * (v[7] - mean).abs();
    for j in 0..7 {
        asc += WGK[j] * ((v[j] - mean).abs() + (v[14 - j] - mean).abs());
    }
    let mut err = (kron - gauss).abs();
    if asc != 0.0 && err != 0.0 {
        err = asc * f64::min(1.0, (200.0 * err / asc).powf(1.5));
    }
    err = err.max(50.0 * f64::EPSILON * kron);
    let lh = h.abs().ln();
    Panel { piece, a, b, log_val: m + lh + kron.ln(), log_err: m + lh + err.ln() }
}

/// One integration piece: a log-integrand on `[a, b]` or, when `b` is
/// infinite, on `[a, inf)` covered by geometrically growing panels of
/// initial width `h`.
pub(crate) struct Piece<'a> {
    pub f: &'a dyn Fn(f64) -> f64,
    pub a: f64,
    pub b: f64,
    pub h: f64,
}

const MAX_TAIL_PANELS: usize = 400;

fn seed_panels(idx: usize, p: &Piece<'_>, tol: &Tolerance, out: &mut Vec<Panel>) {
    if p.b.is_finite() {
        out.push(gk15(p.f, idx, p.a, p.b));
        return;
    }
    // [a, inf): panels [a + h(2^k - 1), a + h(2^{k+1} - 1)], stopped once two
    // consecutive panels are negligible and the integrand is falling.
    let negligible = tol.rel_tol.ln() - 7.0;
    let mut total = f64::NEG_INFINITY;
    let mut quiet = 0;
    let mut lo = p.a;
    let mut width = p.h;
    for k in 0..MAX_TAIL_PANELS {
        let hi = lo + width;
        let panel = gk15(p.f, idx, lo, hi);
        total = crate::logval::log_add_exp(total, panel.log_val);
        out.push(panel);
        let falling = (p.f)(hi) <= (p.f)(lo);
        let small = panel.log_val == f64::NEG_INFINITY
            || panel.log_val < total + negligible
            || panel.log_val < total + tol.abs_log_floor;
        if k >= 3 && falling && small && total > f64::NEG_INFINITY {
            quiet += 1;
            if quiet >= 2 {
                break;
            }
        } else {
            quiet = 0;
        }
        lo = hi;
        width *= 2.0;
        if !hi.is_finite() {
            break;
        }
    }
}

/// Integrates the sum of all pieces to relative tolerance; returns the log
/// of the integral and the log of the error estimate.
pub(crate) fn integrate(pieces: &[Piece<'_>], tol: &Tolerance) -> Result<(f64, f64)> {
    let mut panels = Vec::new();
    for (i, p) in pieces.iter().enumerate() {
        seed_panels(i, p, tol, &mut panels);
    }
    let log_tol = tol.rel_tol.ln();
    let mut subdivisions = 0usize;
    loop {
        let vals: Vec<f64> = panels.iter().map(|p| p.log_val).collect();
        let errs: Vec<f64> = panels.iter().map(|p| p.log_err).collect();
        let total = log_sum_exp(&vals);
        let err = log_sum_exp(&errs);
        if total == f64::NEG_INFINITY {
            return Ok((total, total));
        }
        if err <= total + log_tol {
            return Ok((total, err));
        }
        if subdivisions >= tol.max_subdivisions {
            return Err(Error::ConvergenceFailure {
                rel_err: (err - total).exp(),
                subdivisions,
            });
        }
        let (worst, _) = panels
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, p)| if p.log_err > acc.1 { (i, p.log_err) } else { acc });
        let w = panels.swap_remove(worst);
        let mid = 0.5 * (w.a + w.b);
        if !(mid > w.a && mid < w.b) {
            // cannot split further in floating point; keep it as converged
            panels.push(Panel { log_err: w.log_val + f64::EPSILON.ln(), ..w });
            subdivisions += 1;
            continue;
        }
        let f = pieces[w.piece].f;
        panels.push(gk15(f, w.piece, w.a, mid));
        panels.push(gk15(f, w.piece, mid, w.b));
        subdivisions += 1;
    }
}
