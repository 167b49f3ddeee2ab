use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use fnirvar::baselines::{lasso_var, LambdaGrid};
use fnirvar::factor::{estimate_pca, select_num_factors};
use fnirvar::nirvar::fit_nirvar;
use fnirvar::NirvarOptions;
use fnirvar_bench::{network_factor_panel, residual};

fn pca(c: &mut Criterion) {
    let mut group = c.benchmark_group("pca");
    for n in [50, 100, 200] {
        let panel = network_factor_panel(n, 1000, 1);
        group.bench_with_input(BenchmarkId::new("estimate_r5", n), panel.values(), |b, x| {
            b.iter(|| estimate_pca(x, 5).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("pcp2", n), panel.values(), |b, x| {
            b.iter(|| select_num_factors(x, 8).unwrap())
        });
    }
    group.finish();
}

fn nirvar(c: &mut Criterion) {
    let mut group = c.benchmark_group("nirvar");
    group.sample_size(20);
    for n in [50, 100] {
        let xi = residual(network_factor_panel(n, 1000, 2).values());
        group.bench_with_input(BenchmarkId::new("fit_auto", n), &xi, |b, xi| {
            b.iter(|| fit_nirvar(xi, &NirvarOptions::default(), 3).unwrap())
        });
    }
    group.finish();
}

fn lasso(c: &mut Criterion) {
    let mut group = c.benchmark_group("lasso_var");
    group.sample_size(10);
    let xi = residual(network_factor_panel(100, 1000, 4).values());
    group.bench_function("bic_path_n100", |b| {
        b.iter(|| lasso_var(&xi, &LambdaGrid::default()).unwrap())
    });
    group.finish();
}

criterion_group!(benches, pca, nirvar, lasso);
criterion_main!(benches);
