use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use rkhs_spectest::kernel::gram_matrix_with;
use rkhs_spectest::simulation::*;
use rkhs_spectest::{Exec, Kernel};

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn gram(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = gen_covariates(800, 2, 0.0, CorrelationShape::Geometric, Truncation::Clip, &mut rng).unwrap();
    let kernel = Kernel::gaussian(0.75).unwrap();
    let mut group = c.benchmark_group("gram_n800");
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| gram_matrix_with(&kernel, &x, exec).unwrap())
        });
    }
    group.finish();
}

fn monte_carlo(c: &mut Criterion) {
    let mut group = c.benchmark_group("monte_carlo_lin3_n100");
    group.sample_size(10);
    for (name, exec) in MODES {
        let mut config = McConfig::new(DgpSpec::new(Design::Lin3, 100, 0.0, 1.0), Hypothesis::Lin3, 16);
        config.null_draws = 2000;
        config.exec = exec;
        group.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| run_monte_carlo(&config).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, gram, monte_carlo);
criterion_main!(benches);
