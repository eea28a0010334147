//! Euler paths of `dR = dB + (mu + 1/2)/R dt` killed at the unit level.
//!
//! Between grid points a path is treated as a Brownian bridge, which hits 1
//! with probability `exp(-2 (R_i - 1)(R_{i+1} - 1) / h)`. Steps shrink to a
//! fixed fraction of `R^2` so the drift stays resolved on long horizons.
//! Every path draws from its own ChaCha stream keyed by `(seed, index)`, so
//! estimates do not depend on how paths are spread over threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::exec::Execution;
use crate::hunt::{HittingDensitySource, SourceKind, TabulatedDensity};
use crate::kernels::check_index;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub n_paths: u64,
    /// `None` picks `t/512`.
    pub dt: Option<f64>,
    pub seed: u64,
    pub bridge_correction: bool,
    pub execution: Execution,
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig { n_paths: 1_000_000, dt: None, seed: 0x5eed, bridge_correction: true, execution: Execution::Parallel }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub std_err: f64,
    pub n: u64,
}

impl McEstimate {
    fn binomial(hits: u64, n: u64, scale: f64) -> McEstimate {
        let p = hits as f64 / n as f64;
        McEstimate { mean: scale * p, std_err: scale * (p * (1.0 - p) / n as f64).sqrt(), n }
    }
}

/// Step size relative to `R^2`.
const STEP_TO_SQUARED_RADIUS: f64 = 0.005;
/// Floor used by unkilled diagnostics when an Euler step overshoots zero.
const POSITIVITY_FLOOR: f64 = 1e-8;
const PATHS_PER_CHUNK: u64 = 1024;

/// One Euler step. Nonpositive results are clamped to a small floor; killed
/// runs never get there from above 1.
pub fn path_step(mu: f64, r: f64, dt: f64, gaussian: f64) -> f64 {
    let next = r + (mu + 0.5) / r * dt + dt.sqrt() * gaussian;
    if next > 0.0 {
        next
    } else {
        POSITIVITY_FLOOR
    }
}

#[derive(Debug, Clone, Copy)]
struct Outcome {
    end: f64,
    hit: Option<f64>,
}

#[derive(Debug, Clone, Copy)]
struct Setup {
    mu: f64,
    x: f64,
    t: f64,
    dt: f64,
    killed: bool,
    bridge: bool,
}

fn stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(index);
    rng
}

fn simulate_path(st: &Setup, rng: &mut ChaCha8Rng) -> Outcome {
    let mut r = st.x;
    let mut s = 0.0;
    while s < st.t {
        let mut h = st.dt.min(STEP_TO_SQUARED_RADIUS * r * r);
        if s + h >= st.t * (1.0 - 1e-12) {
            h = st.t - s;
        }
        let z: f64 = rng.sample(StandardNormal);
        let next = path_step(st.mu, r, h, z);
        if st.killed {
            if next <= 1.0 {
                return Outcome { end: next, hit: Some(s + h * (r - 1.0) / (r - next)) };
            }
            if st.bridge {
                let cross = (-2.0 * (r - 1.0) * (next - 1.0) / h).exp();
                if rng.random::<f64>() < cross {
                    return Outcome { end: 1.0, hit: Some(s + 0.5 * h) };
                }
            }
        }
        r = next;
        s += h;
    }
    Outcome { end: r, hit: None }
}

/// Counts per slot over all paths; `slot` maps an outcome to at most one slot.
fn count<F>(st: &Setup, cfg: &McConfig, slots: usize, slot: F) -> Vec<u64>
where
    F: Fn(&Outcome) -> Option<usize> + Sync + Send,
{
    let n = cfg.n_paths;
    let chunks = n.div_ceil(PATHS_PER_CHUNK) as usize;
    let parts = cfg.execution.map(chunks, |c| {
        let mut counts = vec![0u64; slots];
        let lo = c as u64 * PATHS_PER_CHUNK;
        for i in lo..(lo + PATHS_PER_CHUNK).min(n) {
            let out = simulate_path(st, &mut stream(cfg.seed, i));
            if let Some(k) = slot(&out) {
                counts[k] += 1;
            }
        }
        counts
    });
    parts.into_iter().fold(vec![0u64; slots], |mut acc, p| {
        acc.iter_mut().zip(p).for_each(|(a, b)| *a += b);
        acc
    })
}

fn setup(mu: f64, x: f64, t: f64, cfg: &McConfig, killed: bool) -> Result<Setup> {
    check_index(mu)?;
    if !(t > 0.0) || !t.is_finite() {
        return Err(domain("t must be positive"));
    }
    if killed && !(x > 1.0) {
        return Err(domain("x must exceed a"));
    }
    if !(x > 0.0) || !x.is_finite() {
        return Err(domain("x must be positive"));
    }
    if cfg.n_paths < 1000 {
        return Err(domain("n_paths must be at least 1000"));
    }
    let dt = cfg.dt.unwrap_or(t / 512.0);
    if !(dt > 0.0) || dt > t / 64.0 {
        return Err(domain("dt must lie in (0, t/64]"));
    }
    Ok(Setup { mu, x, t, dt, killed, bridge: cfg.bridge_correction })
}

fn check_bins(bins: &[(f64, f64)], lower: f64) -> Result<()> {
    if bins.iter().any(|b| !(b.1 > b.0) || !(b.0 >= lower) || !b.1.is_finite()) {
        return Err(domain(format!("bins must be finite intervals above {lower}")));
    }
    if bins.windows(2).any(|w| w[1].0 < w[0].1) {
        return Err(domain("bins must be disjoint and ordered"));
    }
    Ok(())
}

fn bin_of(bins: &[(f64, f64)], v: f64) -> Option<usize> {
    let i = bins.partition_point(|b| b.1 < v);
    (i < bins.len() && v > bins[i].0).then_some(i)
}

/// `P_x(T_1 > t)`.
pub fn simulate_survival(mu: f64, x: f64, t: f64, cfg: &McConfig) -> Result<McEstimate> {
    let st = setup(mu, x, t, cfg, true)?;
    let c = count(&st, cfg, 1, |o| o.hit.is_none().then_some(0));
    Ok(McEstimate::binomial(c[0], cfg.n_paths, 1.0))
}

/// Mass of `p_1(t,x,.)` in each bin `(lo, hi]`.
pub fn simulate_killed_histogram(
    mu: f64,
    x: f64,
    t: f64,
    bins: &[(f64, f64)],
    cfg: &McConfig,
) -> Result<Vec<McEstimate>> {
    let st = setup(mu, x, t, cfg, true)?;
    check_bins(bins, 1.0)?;
    let c = count(&st, cfg, bins.len(), |o| if o.hit.is_none() { bin_of(bins, o.end) } else { None });
    Ok(c.into_iter().map(|k| McEstimate::binomial(k, cfg.n_paths, 1.0)).collect())
}

/// Mass of the free kernel `p(t,x,.)` in each bin.
pub fn simulate_free_histogram(
    mu: f64,
    x: f64,
    t: f64,
    bins: &[(f64, f64)],
    cfg: &McConfig,
) -> Result<Vec<McEstimate>> {
    let st = setup(mu, x, t, cfg, false)?;
    check_bins(bins, 0.0)?;
    let c = count(&st, cfg, bins.len(), |o| bin_of(bins, o.end));
    Ok(c.into_iter().map(|k| McEstimate::binomial(k, cfg.n_paths, 1.0)).collect())
}

/// Hitting-time density averaged over each bin `(edges[i], edges[i+1]]`;
/// paths are followed up to the last edge.
pub fn simulate_hitting_histogram(mu: f64, x: f64, edges: &[f64], cfg: &McConfig) -> Result<Vec<McEstimate>> {
    if edges.len() < 2 || edges.windows(2).any(|w| !(w[1] > w[0])) || !(edges[0] >= 0.0) {
        return Err(domain("edges must be nonnegative and strictly ascending"));
    }
    let t = edges[edges.len() - 1];
    let st = setup(mu, x, t, cfg, true)?;
    let bins: Vec<(f64, f64)> = edges.windows(2).map(|w| (w[0], w[1])).collect();
    let c = count(&st, cfg, bins.len(), |o| o.hit.and_then(|s| bin_of(&bins, s)));
    Ok(c.into_iter().zip(&bins).map(|(k, b)| McEstimate::binomial(k, cfg.n_paths, 1.0 / (b.1 - b.0))).collect())
}

/// Histogram hitting density as a source for the Hunt quadrature.
pub fn hitting_density_histogram(mu: f64, x: f64, edges: &[f64], cfg: &McConfig) -> Result<HittingDensitySource> {
    let est = simulate_hitting_histogram(mu, x, edges, cfg)?;
    let mut log_q: Vec<f64> = est.iter().map(|e| e.mean.ln()).collect();
    log_q.push(f64::NEG_INFINITY);
    HittingDensitySource::tabulated(
        SourceKind::MonteCarlo,
        mu,
        x,
        1.0,
        TabulatedDensity { s: edges.to_vec(), log_q, histogram: true },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use libm::erfc;

    fn small(n: u64) -> McConfig {
        McConfig { n_paths: n, ..Default::default() }
    }

    #[test]
    fn config_is_validated() {
        assert!(simulate_survival(0.0, 2.0, 1.0, &small(1000)).is_err());
        assert!(simulate_survival(0.5, 1.0, 1.0, &small(1000)).is_err());
        assert!(simulate_survival(0.5, 2.0, 1.0, &small(999)).is_err());
        let coarse = McConfig { dt: Some(0.1), ..small(1000) };
        assert!(simulate_survival(0.5, 2.0, 1.0, &coarse).is_err());
        assert!(simulate_killed_histogram(0.5, 2.0, 1.0, &[(2.0, 3.0), (2.5, 4.0)], &small(1000)).is_err());
    }

    #[test]
    fn drift_of_a_single_step() {
        let mut rng = stream(7, 0);
        let (mu, r, dt) = (1.5, 3.0, 1e-2);
        let n = 200_000;
        let mean = (0..n).map(|_| path_step(mu, r, dt, rng.sample(StandardNormal)) - r).sum::<f64>() / n as f64;
        let se = (dt / n as f64).sqrt();
        assert!((mean - (mu + 0.5) / r * dt).abs() < 4.0 * se, "{mean}");
        assert_eq!(path_step(0.5, 0.1, 1.0, -20.0), POSITIVITY_FLOOR);
    }

    #[test]
    fn reproducible_and_thread_independent() {
        let a = McConfig { execution: Execution::Parallel, ..small(5000) };
        let b = McConfig { execution: Execution::Sequential, ..a };
        let x = simulate_survival(1.0, 1.5, 2.0, &a).unwrap();
        assert_eq!(x, simulate_survival(1.0, 1.5, 2.0, &a).unwrap());
        assert_eq!(x, simulate_survival(1.0, 1.5, 2.0, &b).unwrap());
        let other = McConfig { seed: 1, ..a };
        assert_ne!(x, simulate_survival(1.0, 1.5, 2.0, &other).unwrap());
    }

    #[test]
    fn survival_of_half_index_and_far_start() {
        let e = simulate_survival(0.5, 2.0, 1.0, &small(100_000)).unwrap();
        let exact = 1.0 - 0.5 * erfc(1.0 / 2f64.sqrt());
        assert!((e.mean - exact).abs() < 4.0 * e.std_err, "{e:?} vs {exact}");
        let far = simulate_survival(0.5, 100.0, 1.0, &small(1000)).unwrap();
        assert_eq!(far.mean, 1.0);
    }

    #[test]
    fn bridge_correction_removes_most_bias() {
        let exact = 1.0 - 0.5 * erfc(1.0 / 2f64.sqrt());
        let cfg = McConfig { dt: Some(1.0 / 64.0), ..small(100_000) };
        let with = simulate_survival(0.5, 2.0, 1.0, &cfg).unwrap();
        let without = simulate_survival(0.5, 2.0, 1.0, &McConfig { bridge_correction: false, ..cfg }).unwrap();
        assert!((with.mean - exact).abs() < 4.0 * with.std_err);
        assert!(without.mean - exact > 8.0 * without.std_err);
    }

    #[test]
    fn histogram_and_hits_account_for_all_paths() {
        let cfg = small(20_000);
        let bins: Vec<(f64, f64)> = (0..40).map(|k| (1.0 + 0.25 * k as f64, 1.25 + 0.25 * k as f64)).collect();
        let h = simulate_killed_histogram(1.5, 2.0, 1.0, &bins, &cfg).unwrap();
        let surv = simulate_survival(1.5, 2.0, 1.0, &cfg).unwrap();
        let hist_mass: f64 = h.iter().map(|e| e.mean).sum();
        assert!((hist_mass - surv.mean).abs() < 1e-12);
        let edges = [0.0, 0.25, 0.5, 1.0];
        let hits = simulate_hitting_histogram(1.5, 2.0, &edges, &cfg).unwrap();
        let hit_mass: f64 = hits.iter().zip(edges.windows(2)).map(|(e, w)| e.mean * (w[1] - w[0])).sum();
        assert!((hist_mass + hit_mass - 1.0).abs() < 1e-12);
    }
}
