//! Acceptance run. `cargo test --test acceptance` runs every criterion;
//! `cargo test --test acceptance -- 3 7` runs a subset.

use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use bkk::certify::{certify, log_grid, GridSpec, Method, Report};
use bkk::hunt::{killed_kernel_via_hunt, verify_h_quadrature, HittingDensitySource, QuadratureConfig};
use bkk::kernels::{log_brownian_killed_kernel, log_h, log_half_killed_kernel, log_half_survival, KernelQuery};
use bkk::logval::log1m_exp;
use bkk::mc::{simulate_survival, McConfig};
use bkk::pde::{solve_killed_kernel, KernelSlice, PdeConfig};
use bkk::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn within(elapsed: Duration, limit_s: u64) -> bool {
    elapsed < Duration::from_secs(limit_s)
}

fn rel_err(log_a: f64, log_b: f64) -> f64 {
    (log_a - log_b).exp_m1().abs()
}

fn h_integral(start: Instant) -> Outcome {
    let g = log_grid(0.01, 100.0, 5);
    let cfg = QuadratureConfig { rel_tol: 1e-11, ..Default::default() };
    let mut worst: f64 = 0.0;
    for &t in &g {
        for &a in &g {
            for &b in &g {
                let q = verify_h_quadrature(t, a, b, &cfg).expect("quadrature").ln();
                let c = log_h(t, a, b).unwrap().ln();
                worst = worst.max(rel_err(q, c));
            }
        }
    }
    let el = start.elapsed();
    outcome(worst <= 1e-8 && within(el, 10), format!("125 cells, max rel err {worst:.2e}, {el:.1?}"))
}

fn hunt_half(start: Instant) -> Outcome {
    let ts = log_grid(1e-3, 1e3, 10);
    let off = log_grid(1e-2, 99.0, 10);
    let cfg = QuadratureConfig::default();
    let (mut worst, mut flagged, mut cells, mut other_err): (f64, usize, usize, usize) = (0.0, 0, 0, 0);
    for &xo in &off {
        let x = 1.0 + xo;
        let src = HittingDensitySource::exact_half(x, 1.0).unwrap();
        for &t in &ts {
            for &yo in &off {
                let q = KernelQuery::unit(t, x, 1.0 + yo).unwrap();
                cells += 1;
                match killed_kernel_via_hunt(0.5, &q, &src, &cfg) {
                    Ok(v) => worst = worst.max(rel_err(v.ln(), log_half_killed_kernel(&q).unwrap().ln())),
                    Err(Error::Cancellation { .. }) => flagged += 1,
                    Err(_) => other_err += 1,
                }
            }
        }
    }
    let el = start.elapsed();
    let frac = flagged as f64 / cells as f64;
    outcome(
        worst <= 1e-6 && frac < 0.05 && other_err == 0 && within(el, 120),
        format!("{cells} cells, {flagged} cancellation-flagged, {other_err} errors, max rel err {worst:.2e}, {el:.1?}"),
    )
}

/// Largest relative error against the closed form over resolved nodes.
fn half_error(s: &KernelSlice, probes: &[f64]) -> f64 {
    probes
        .iter()
        .map(|&y| {
            let exact = log_half_killed_kernel(&KernelQuery::unit(s.t, s.x, y).unwrap()).unwrap().ln();
            rel_err(s.log_value_at(y).expect("probe resolved"), exact)
        })
        .fold(0.0, f64::max)
}

fn resolved_nodes(s: &KernelSlice) -> Vec<f64> {
    s.values.iter().zip(&s.resolved).filter(|(_, ok)| **ok).map(|((y, _), _)| *y).collect()
}

fn pde_half(start: Instant) -> Outcome {
    let base = PdeConfig::default();
    let fine_steps = PdeConfig { time_steps: Some(8000), ..base };
    let (mut worst, mut worst_ratio) = (0.0f64, f64::INFINITY);
    for &t in &[0.1, 1.0, 10.0] {
        for &x in &[1.5, 2.0, 5.0] {
            let s = solve_killed_kernel(0.5, t, x, &base).unwrap();
            let nodes = resolved_nodes(&s);
            worst = worst.max(half_error(&s, &nodes));
            // step halving at a fixed time resolution, probed where both grids resolve
            let coarse = solve_killed_kernel(0.5, t, x, &PdeConfig { nodes: 1000, ..fine_steps }).unwrap();
            let fine = solve_killed_kernel(0.5, t, x, &PdeConfig { nodes: 2000, ..fine_steps }).unwrap();
            let probes: Vec<f64> =
                resolved_nodes(&coarse).into_iter().filter(|&y| fine.log_value_at(y).is_some()).collect();
            let r = half_error(&coarse, &probes) / half_error(&fine, &probes);
            worst_ratio = worst_ratio.min(r);
        }
    }
    let el = start.elapsed();
    outcome(
        worst < 1e-3 && worst_ratio >= 3.0 && within(el, 300),
        format!("max rel err {worst:.2e}, smallest halving gain {worst_ratio:.2}x, {el:.1?}"),
    )
}

const SUITE: [&str; 10] = [
    "bessel_ratio_bounds",
    "killed_below_free",
    "index_ordering",
    "index_comparison",
    "small_time_lower",
    "hitting_ordering",
    "symmetry_reflection",
    "scaling",
    "hitting_mass",
    "lower_bound_seed",
];

fn inequality_suite(report: &Report, el: Duration) -> Outcome {
    let mut lines = Vec::new();
    let mut pass = within(el, 1800);
    for id in SUITE {
        match report.checks.iter().find(|c| c.check_id == id) {
            Some(c) => {
                pass &= c.passed();
                lines.push(format!("{id} {}/{} failed ({} skipped)", c.cells_failed, c.cells_total, c.cells_skipped));
            }
            None => {
                pass = false;
                lines.push(format!("{id} missing"));
            }
        }
    }
    for c in report.checks.iter().filter(|c| !SUITE.contains(&c.check_id.as_str())) {
        lines.push(format!("[{}: {}/{} failed]", c.check_id, c.cells_failed, c.cells_total));
    }
    outcome(pass, format!("{}; {el:.1?}", lines.join(", ")))
}

fn envelope_half(report: &Report) -> Outcome {
    let rows = &report.envelope.as_ref().expect("envelope").rows;
    let mut pass = true;
    let mut parts = Vec::new();
    for mu in [0.5, -0.5] {
        let row = rows.iter().find(|r| r.mu == mu).expect("row");
        let spread = row.spread.unwrap_or(f64::INFINITY);
        pass &= spread < 100f64.ln() && row.cells_skipped == 0;
        parts.push(format!("mu={mu}: spread {spread:.4} over {} cells ({} skipped)", row.cells, row.cells_skipped));
    }
    outcome(pass, format!("{}; bound ln 100 = {:.4}", parts.join(", "), 100f64.ln()))
}

fn envelope_pde(report: &Report) -> Outcome {
    let rows = &report.envelope.as_ref().expect("envelope").rows;
    let below = report.checks.iter().find(|c| c.check_id == "killed_below_free").expect("check");
    let mut pass = true;
    let mut parts = Vec::new();
    for mu in [0.25, -0.25, 1.0, -1.0, 2.5, -2.5] {
        let row = rows.iter().find(|r| r.mu == mu).expect("row");
        let finite = row.min_log_ratio.is_some_and(f64::is_finite) && row.max_log_ratio.is_some_and(f64::is_finite);
        let above = below.cells.iter().filter(|c| c.mu == mu && c.failed).count();
        pass &= finite && row.cells > 0 && above == 0;
        parts.push(format!(
            "mu={mu}: spread {:.3} over {} cells ({} skipped), {above} above free",
            row.spread.unwrap_or(f64::NAN),
            row.cells,
            row.cells_skipped
        ));
    }
    outcome(pass, parts.join(", "))
}

fn monte_carlo(start: Instant) -> Outcome {
    let cfg = McConfig::default();
    let short = simulate_survival(0.5, 2.0, 1.0, &cfg).unwrap();
    let exact = log_half_survival(2.0, 1.0).unwrap().exp();
    let z = (short.mean - exact).abs() / short.std_err;
    let long = simulate_survival(1.0, 2.0, 1e3, &cfg).unwrap();
    let gap = (long.mean - 0.75).abs();
    let el = start.elapsed();
    outcome(
        z <= 4.0 && gap <= 4.0 * long.std_err + 1e-2 && within(el, 120),
        format!(
            "survival {:.5} vs {exact:.5} ({z:.2} se); escape {:.5} vs 0.75 (gap {gap:.2e}, se {:.1e}); {el:.1?}",
            short.mean, long.mean, long.std_err
        ),
    )
}

/// Index-1/2 kernel at barrier `c` from the image construction.
fn half_at_barrier(t: f64, x: f64, y: f64, c: f64) -> f64 {
    let d = x - y;
    -0.5 * (2.0 * PI * t).ln() + (y / x).ln() - d * d / (2.0 * t) + log1m_exp(-2.0 * (x - c) * (y - c) / t)
}

fn identities(report: &Report) -> Outcome {
    // closed forms on random cells whose values are normal doubles
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut worst, mut n) = (0.0f64, 0);
    while n < 2000 {
        let t = 10f64.powf(rng.random_range(-3.0..3.0));
        let x = 1.0 + 10f64.powf(rng.random_range(-3.0..3.0));
        let y = 1.0 + 10f64.powf(rng.random_range(-3.0..3.0));
        let q = KernelQuery::unit(t, x, y).unwrap();
        let p = log_half_killed_kernel(&q).unwrap().ln();
        if p.abs() > 700.0 {
            continue;
        }
        n += 1;
        let swapped = log_half_killed_kernel(&q.swapped()).unwrap().ln() + 2.0 * (y / x).ln();
        let reflected = log_brownian_killed_kernel(&q).unwrap().ln() - (x / y).ln();
        // powers of two scale the inputs exactly; any other factor rounds
        // c x and c y, which alone moves ln p by up to ~1e-11 here
        let c = 2f64.powi(rng.random_range(-3..=3));
        let scaled = half_at_barrier(c * c * t, c * x, c * y, c) + c.ln();
        for v in [swapped, reflected, scaled] {
            worst = worst.max((v - p).abs());
        }
    }
    let mut pass = worst <= 1e-12;
    let mut parts = vec![format!("closed form: max |d ln p| {worst:.2e} over {n} cells")];
    for id in ["symmetry_reflection", "scaling"] {
        let c = report.checks.iter().find(|c| c.check_id == id).expect("check");
        let pde: Vec<f64> = c.cells.iter().filter(|r| r.method == Method::Pde).map(|r| r.margin).collect();
        let max = pde.iter().copied().fold(0.0, f64::max);
        pass &= !pde.is_empty() && max <= 2e-3;
        parts.push(format!("{id} PDE: max {max:.2e} over {} cells", pde.len()));
    }
    outcome(pass, parts.join(", "))
}

fn main() -> ExitCode {
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let want = |k: u32| wanted.is_empty() || wanted.contains(&k);
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    let mut run = |k: u32, name: &'static str, f: &dyn Fn() -> Outcome| {
        if want(k) {
            let o = f();
            println!("{} {k}. {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
            results.push((k, name, o));
        }
    };
    run(1, "H-integral closed form", &|| h_integral(Instant::now()));
    run(2, "Hunt vs closed form at mu=1/2", &|| hunt_half(Instant::now()));
    run(3, "PDE vs closed form at mu=1/2", &|| pde_half(Instant::now()));
    let grid = if [4, 5, 6, 8].iter().any(|&k| want(k)) {
        let start = Instant::now();
        let report = certify(&GridSpec::default()).expect("default grid certifies");
        Some((report, start.elapsed()))
    } else {
        None
    };
    if let Some((report, el)) = &grid {
        run(4, "inequality suite on the default grid", &|| inequality_suite(report, *el));
        run(5, "envelope spread at mu=+-1/2", &|| envelope_half(report));
        run(6, "envelope via PDE at mu in {+-1/4, +-1, +-5/2}", &|| envelope_pde(report));
    }
    run(7, "Monte Carlo survival and escape", &|| monte_carlo(Instant::now()));
    if let Some((report, _)) = &grid {
        run(8, "scaling, symmetry and reflection identities", &|| identities(report));
    }
    results.sort_by_key(|r| r.0);
    let failed: Vec<u32> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    println!("acceptance: {} run, {} failed {:?}", results.len(), failed.len(), failed);
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
