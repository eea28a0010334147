//! Parallel against sequential execution on the three sweeps that fan out:
//! Monte Carlo paths, a small certify grid, and independent PDE slices.

use std::hint::black_box;

use bkk::certify::{certify, GridSpec};
use bkk::mc::{simulate_survival, McConfig};
use bkk::pde::{solve_killed_kernel, PdeConfig};
use bkk::Execution;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

const PATHS: [Execution; 2] = [Execution::Parallel, Execution::Sequential];

fn name(e: Execution) -> &'static str {
    match e {
        Execution::Parallel => "parallel",
        Execution::Sequential => "sequential",
    }
}

fn monte_carlo(c: &mut Criterion) {
    let mut g = c.benchmark_group("mc_survival");
    g.sample_size(10);
    for e in PATHS {
        let cfg = McConfig { n_paths: 50_000, execution: e, ..Default::default() };
        g.bench_function(BenchmarkId::from_parameter(name(e)), |b| {
            b.iter(|| simulate_survival(black_box(1.0), 2.0, 1.0, &cfg).unwrap())
        });
    }
    g.finish();
}

fn certify_grid(c: &mut Criterion) {
    let mut g = c.benchmark_group("certify_small_grid");
    g.sample_size(10);
    for e in PATHS {
        let spec = GridSpec {
            mu_list: vec![-1.0, 0.25, 0.5, 1.0],
            t_grid: vec![0.1, 1.0],
            x_grid: vec![1.5, 3.0],
            y_grid: vec![1.2, 2.0, 4.0],
            pde: PdeConfig { nodes: 1000, ..Default::default() },
            hunt_fraction: 0.0,
            mc_fraction: 0.0,
            identity_samples: 1,
            record_cells: false,
            execution: e,
            ..Default::default()
        };
        g.bench_function(BenchmarkId::from_parameter(name(e)), |b| b.iter(|| certify(black_box(&spec)).unwrap()));
    }
    g.finish();
}

fn pde_slices(c: &mut Criterion) {
    let mut g = c.benchmark_group("pde_slices");
    g.sample_size(10);
    let cfg = PdeConfig { nodes: 1000, ..Default::default() };
    let xs = [1.2, 1.5, 2.0, 3.0, 5.0, 8.0];
    for e in PATHS {
        g.bench_function(BenchmarkId::from_parameter(name(e)), |b| {
            b.iter(|| e.map(xs.len(), |i| solve_killed_kernel(1.5, 1.0, xs[i], &cfg).unwrap().log_max()))
        });
    }
    g.finish();
}

criterion_group!(benches, monte_carlo, certify_grid, pde_slices);
criterion_main!(benches);
