use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use num_complex::Complex64;
use rotpump_core::analysis::{mixed_lambda_state, thermal_state};
use rotpump_core::dynamics::SparseHamiltonian;
use rotpump_core::integrate::Method;
use rotpump_core::*;

fn carp(j_max: u32, n_max: u32, width: f64) -> (SystemSpec, PulseSchedule) {
    let spec = SystemSpec::ladder(j_max, n_max, 0.1, 0.01, 0.15);
    let params = PulseParams {
        omega0_p: 5.0,
        omega0_s: 5.0,
        width,
        tau: 0.0,
        tau_tilde: 6.0 * width,
        delta_p: 100.0,
        delta_s: 100.0,
        alpha: 4.69e-5 * (800.0 / width).powi(2),
    };
    let schedule = make_schedule(Scheme::Carp, &spec, &params).unwrap();
    (spec, schedule)
}

fn rhs(c: &mut Criterion) {
    let mut group = c.benchmark_group("rhs");
    for (j_max, n_max) in [(1, 3), (5, 6)] {
        let (spec, schedule) = carp(j_max, n_max, 800.0);
        let eq = MasterEquation::new(&spec, &schedule).unwrap();
        let basis = eq.basis().clone();
        let rho = thermal_state(&basis, &spec).unwrap();
        let dim = eq.dim();
        let mut out = vec![Complex64::default(); dim * dim];
        let mut scratch = out.clone();
        let mut h = SparseHamiltonian::default();
        group.bench_with_input(BenchmarkId::from_parameter(dim), &dim, |b, _| {
            b.iter(|| {
                eq.rhs_hermitian(0, black_box(0.0), rho.matrix().as_slice(), &mut out, &mut scratch, &mut h);
                black_box(&out);
            })
        });
    }
    group.finish();
}

fn short_run(c: &mut Criterion) {
    let (spec, schedule) = carp(1, 2, 40.0);
    let basis = build_basis(&spec).unwrap();
    let rho = mixed_lambda_state(&basis, 0.3, 0.7).unwrap();
    let mut group = c.benchmark_group("short_lambda_run");
    group.sample_size(10);
    for method in [Method::Exponential, Method::Dopri5] {
        let cfg = IntegratorConfig { method, ..Default::default() };
        group.bench_function(format!("{method:?}"), |b| b.iter(|| run(&spec, &schedule, &rho, &cfg).unwrap().efficiency));
    }
    group.finish();
}

criterion_group!(benches, rhs, short_run);
criterion_main!(benches);
