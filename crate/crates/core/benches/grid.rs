//! Grid metrics of a four-state closed loop, parallel against sequential.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ddlpv::bench::{study2_reference_quadratic_gains, study2_system, STUDY2_ALPHA};
use ddlpv::par::Execution;
use ddlpv::system::PerfWeights;
use ddlpv::verify::{grid_h2_norm, grid_hinf_norm, grid_spectral_radius, GridSpec};

fn grids(c: &mut Criterion) {
    let sys = study2_system(STUDY2_ALPHA);
    let (ctrl, _) = study2_reference_quadratic_gains();
    let w = PerfWeights::diag(&[1.0; 4], &[1.0]).unwrap();
    let modes = [("parallel", Execution::Parallel), ("sequential", Execution::Sequential)];
    for n in [16, 32] {
        let mut g = c.benchmark_group(format!("grid_{n}x{n}"));
        g.sample_size(10);
        for (name, mode) in modes {
            let grid = GridSpec::new(n, sys.p_set.clone()).unwrap().with_execution(mode);
            g.bench_with_input(BenchmarkId::new("rho", name), &grid, |b, grid| {
                b.iter(|| grid_spectral_radius(&sys, &ctrl, grid).unwrap())
            });
            g.bench_with_input(BenchmarkId::new("h2", name), &grid, |b, grid| {
                b.iter(|| grid_h2_norm(&sys, &ctrl, &w, grid).unwrap())
            });
            g.bench_with_input(BenchmarkId::new("hinf", name), &grid, |b, grid| {
                b.iter(|| grid_hinf_norm(&sys, &ctrl, &w, grid).unwrap())
            });
        }
        g.finish();
    }
}

criterion_group!(benches, grids);
criterion_main!(benches);
