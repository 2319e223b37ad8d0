use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nalgebra::DMatrix;
use std::hint::black_box;

use salesrank_bench::design;
use salesrank_core::scenarios::suite_panel;
use salesrank_core::cost::solve_markups;
use salesrank_core::demand::{estimate_demand, DemandSpec};
use salesrank_core::simulate::generate_market;
use salesrank_core::statcore::{ols_fit, within_transform};
use salesrank_core::{dataset::validate_panel, ValidationPolicy};

fn ols(c: &mut Criterion) {
    let mut group = c.benchmark_group("ols_fit");
    for n in [50, 300, 3000] {
        let (x, y) = design(n, 6);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| ols_fit(black_box(&x), black_box(&y)).unwrap())
        });
    }
    group.finish();
}

fn within(c: &mut Criterion) {
    let values: Vec<f64> = (0..3000).map(|i| (i as f64).sin()).collect();
    let ids: Vec<usize> = (0..3000).map(|i| i % 7).collect();
    c.bench_function("within_transform_3000", |b| {
        b.iter(|| within_transform(black_box(&values), black_box(&ids)).unwrap())
    });
}

fn markups(c: &mut Criterion) {
    let n = DMatrix::from_row_slice(3, 3, &[-3.0, 0.4, 0.2, 0.5, -2.5, 0.3, 0.1, 0.2, -4.0]);
    let s = [0.5, 0.3, 0.2];
    c.bench_function("solve_markups_3", |b| b.iter(|| solve_markups(black_box(&s), black_box(&n)).unwrap()));
}

fn pipeline_kernels(c: &mut Criterion) {
    let cfg = suite_panel(7, 0.2);
    c.bench_function("generate_market_100d", |b| b.iter(|| generate_market(black_box(&cfg)).unwrap()));

    let market = generate_market(&cfg).unwrap();
    let panel = validate_panel(market.observations.clone(), market.catalog.clone(), ValidationPolicy::default()).unwrap();
    let group = panel.groups()[0].clone();
    c.bench_function("estimate_demand_versions", |b| {
        b.iter(|| estimate_demand(black_box(&group), black_box(&panel), &DemandSpec::default()).unwrap())
    });
}

criterion_group!(benches, ols, within, markups, pipeline_kernels);
criterion_main!(benches);
