//! Data-parallel kernels on a one-thread pool against the default pool.
//! Build with `--no-default-features` for the purely sequential code path.

use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rayon::ThreadPoolBuilder;

use multishape::fem::{assemble_diffusion, assemble_elasticity, ScalarField};
use multishape::optimizer::{self, CoefficientModel, OptState, Problem, StepSchedule};
use multishape::physics;
use multishape::randomfield::{KlSpec, SubdomainKl};
use multishape::shape_calculus;
use multishape::verify::TwoShapeCase;

fn pools() -> Vec<(String, rayon::ThreadPool)> {
    let default = rayon::current_num_threads();
    let mut out = vec![("1-thread".to_string(), ThreadPoolBuilder::new().num_threads(1).build().unwrap())];
    if default > 1 {
        out.push((
            format!("{default}-threads"),
            ThreadPoolBuilder::new().num_threads(default).build().unwrap(),
        ));
    }
    out
}

fn kernels(c: &mut Criterion) {
    let case = TwoShapeCase::new(47).unwrap();
    let mesh = &case.mesh;
    let kappa_cells = vec![1.0; mesh.n_cells()];
    let mu = ScalarField::new(vec![10.0; mesh.n_nodes()]);
    let fwd = physics::forward_solve(mesh, &case.kappa, case.g, &case.target, &case.nu, true).unwrap();
    let spec = Arc::new(
        KlSpec::new(
            0.5,
            [(1000.0, 50.0), (7.5, 2.5), (5.0, 1.0)]
                .iter()
                .map(|&(mean, half_width)| SubdomainKl {
                    mean,
                    half_width,
                    terms: 20,
                })
                .collect(),
        )
        .unwrap(),
    );
    let problem = Problem {
        target: Arc::new(case.target.clone()),
        g: case.g,
        nu: case.nu.clone(),
        deformation: Default::default(),
    };
    let model = CoefficientModel::Random(spec);

    let mut group = c.benchmark_group("kernels");
    group.sample_size(10);
    for (name, pool) in pools() {
        group.bench_function(BenchmarkId::new("quality_report", &name), |b| {
            pool.install(|| b.iter(|| mesh.quality_report()))
        });
        group.bench_function(BenchmarkId::new("assemble_diffusion", &name), |b| {
            pool.install(|| b.iter(|| assemble_diffusion(mesh, &kappa_cells).unwrap()))
        });
        group.bench_function(BenchmarkId::new("assemble_elasticity", &name), |b| {
            pool.install(|| b.iter(|| assemble_elasticity(mesh, 0.0, &mu).unwrap()))
        });
        group.bench_function(BenchmarkId::new("shape_derivative", &name), |b| {
            pool.install(|| b.iter(|| shape_calculus::assemble_shape_derivative(mesh, &fwd, &case.nu)))
        });
        group.bench_function(BenchmarkId::new("stochastic_step_batch4", &name), |b| {
            pool.install(|| {
                b.iter(|| {
                    let mut state = OptState::new(mesh.clone(), 0);
                    optimizer::stochastic_gradient_step(&mut state, &problem, &model, &StepSchedule::constant(1e-3), 4)
                        .unwrap();
                    state
                })
            })
        });
    }
    group.finish();
}

criterion_group!(benches, kernels);
criterion_main!(benches);
