use bkk::kernels::{log_half_killed_kernel, log_hitting_envelope, KernelQuery};
use bkk::pde::{
    hitting_density_flux, solve_killed_kernel, solve_killed_kernel_general, survival_probability, KernelSlice,
    PdeConfig,
};

fn resolved(s: &KernelSlice) -> impl Iterator<Item = (f64, f64)> + '_ {
    s.values.iter().zip(&s.resolved).filter(|(_, ok)| **ok).map(|((y, p), _)| (*y, p.ln()))
}

#[test]
fn spatial_refinement_is_second_order() {
    let exact = |y: f64| log_half_killed_kernel(&KernelQuery::unit(1.0, 2.0, y).unwrap()).unwrap().ln();
    let top = (0..2000).map(|k| exact(1.0 + k as f64 * 0.005 + 1e-9)).fold(f64::NEG_INFINITY, f64::max);
    let probes: Vec<f64> = (0..=890).map(|k| 1.1 + 0.01 * k as f64).filter(|&y| exact(y) > top - 8.0).collect();
    let errs: Vec<f64> = [1000, 2000, 4000]
        .iter()
        .map(|&n| {
            let c = PdeConfig { nodes: n, time_steps: Some(8000), ..Default::default() };
            let s = solve_killed_kernel(0.5, 1.0, 2.0, &c).unwrap();
            probes.iter().map(|&y| (s.log_value_at(y).unwrap() - exact(y)).exp_m1().abs()).fold(0.0, f64::max)
        })
        .collect();
    for w in errs.windows(2) {
        assert!(w[0] / w[1] >= 3.0, "{errs:?}");
    }
}

#[test]
fn symmetry_between_slices() {
    let c = PdeConfig::default();
    let mu = 1.0;
    let from_x = solve_killed_kernel(mu, 1.0, 2.0, &c).unwrap();
    for &y in &[1.5, 2.5, 3.0, 4.0] {
        let from_y = solve_killed_kernel(mu, 1.0, y, &c).unwrap();
        let lhs = from_x.log_value_at(y).unwrap();
        let rhs = (2.0 * mu + 1.0) * (y / 2.0).ln() + from_y.log_value_at(2.0).unwrap();
        assert!((lhs - rhs).exp_m1().abs() < 2e-3, "y={y}: {lhs} vs {rhs}");
    }
}

#[test]
fn mass_is_nonincreasing_in_time() {
    let c = PdeConfig::default();
    let masses: Vec<f64> =
        [0.1, 0.5, 1.0, 5.0, 20.0].iter().map(|&t| survival_probability(1.5, t, 2.0, &c).unwrap().ln()).collect();
    for w in masses.windows(2) {
        assert!(w[1] <= w[0], "{masses:?}");
    }
    assert!(masses.iter().all(|m| *m < 0.0));
}

#[test]
fn index_ordering_between_slices() {
    let c = PdeConfig::default();
    let (t, x) = (1.0, 2.0);
    let big = solve_killed_kernel(1.5, t, x, &c).unwrap();
    let half = solve_killed_kernel(0.5, t, x, &c).unwrap();
    let small = solve_killed_kernel(0.25, t, x, &c).unwrap();
    let tol = 5e-3;
    let mut checked = 0;
    for (y, ph) in resolved(&half) {
        let (Some(pb), Some(ps)) = (big.log_value_at(y), small.log_value_at(y)) else { continue };
        let lr = (x / y).ln();
        assert!(lr + pb <= ph + tol, "upper at y={y}");
        assert!(ph <= -0.25 * lr + ps + tol, "lower at y={y}");
        checked += 1;
    }
    assert!(checked > 1000);
}

#[test]
fn reflection_and_scaling_hold_for_direct_solves() {
    let c = PdeConfig::default();
    let pos = solve_killed_kernel(1.0, 1.0, 2.0, &c).unwrap();
    let neg = solve_killed_kernel_general(-1.0, 1.0, 1.0, 2.0, &c).unwrap();
    let scaled = solve_killed_kernel_general(1.0, 2.0, 4.0, 4.0, &c).unwrap();
    for &y in &[1.3, 2.0, 3.0, 4.5] {
        let p = pos.log_value_at(y).unwrap();
        let reflected = neg.log_value_at(y).unwrap();
        assert!((reflected - (2.0 * (2.0 / y).ln() + p)).exp_m1().abs() < 2e-3, "reflection at y={y}");
        let s = scaled.log_value_at(2.0 * y).unwrap();
        assert!((s - (p - 2f64.ln())).exp_m1().abs() < 2e-3, "scaling at y={y}");
    }
    assert!(solve_killed_kernel(-1.0, 1.0, 2.0, &c).is_err());
}

#[test]
fn flux_stays_within_a_constant_of_the_hitting_envelope() {
    let c = PdeConfig::default();
    let grid: Vec<f64> = (0..30).map(|k| 0.05 * 2000f64.powf(k as f64 / 29.0)).collect();
    for &mu in &[0.5, 1.5] {
        let src = hitting_density_flux(mu, 2.0, &c, &grid).unwrap();
        let ratios: Vec<f64> = grid
            .iter()
            .map(|&s| src.log_density(s) - log_hitting_envelope(mu, 2.0, s).unwrap().ln())
            .collect();
        let lo = ratios.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert!(hi - lo < 3.0, "mu={mu}: {ratios:?}");
    }
}

#[test]
fn far_boundary_and_near_barrier_behaviour() {
    let s = solve_killed_kernel(0.5, 1.0, 2.0, &PdeConfig::default()).unwrap();
    let (y0, p0) = s.values[0];
    assert!(y0 - 1.0 < 1e-2);
    assert!(p0.ln() < s.log_max() - 5.0);
    let (_, last) = s.values[s.values.len() - 1];
    assert!(last.ln() < s.log_max() + (1e-12f64).ln());
}
