use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;
use wiet_bench::{fixture, mid_alpha};
use wiet_core::closedform::{max_min_energy_program, tdma_slot_generic, tdma_slot_solve, tdms_eh_minimize, Slot};
use wiet_core::oracle::{oracle_ideal_2user, GridSpec};
use wiet_core::schemes::{solve, tdma_d_generic};
use wiet_core::subsolver::solve_convex;
use wiet_core::{Scheme, SchemeOptions};

fn closed_forms(c: &mut Criterion) {
    let cs = fixture(4, 1, 0.5);
    let mut g = c.benchmark_group("max_min_energy");
    g.bench_function("dual_bisection", |b| b.iter(|| tdms_eh_minimize(black_box(&cs)).unwrap()));
    g.bench_function("generic_program", |b| b.iter(|| solve_convex(&max_min_energy_program(black_box(&cs)).0).unwrap()));
    g.finish();

    let cs = fixture(4, 2, 0.2);
    let alpha = mid_alpha(&cs);
    let mut g = c.benchmark_group("tdma_slot");
    g.bench_function("line_search", |b| b.iter(|| tdma_slot_solve(black_box(&cs), alpha, Slot::First).unwrap()));
    g.bench_function("generic_program", |b| b.iter(|| tdma_slot_generic(black_box(&cs), alpha, Slot::First).unwrap()));
    g.finish();
}

fn schemes(c: &mut Criterion) {
    let opts = SchemeOptions::default();
    let mut g = c.benchmark_group("schemes");
    g.sample_size(10);
    for nt in [2, 4] {
        let cs = fixture(nt, 3, 0.5);
        for scheme in Scheme::ALL {
            g.bench_with_input(BenchmarkId::new(scheme.name(), nt), &cs, |b, cs| b.iter(|| solve(cs, scheme, &opts).unwrap()));
        }
        g.bench_with_input(BenchmarkId::new("TDMA_D_program", nt), &cs, |b, cs| b.iter(|| tdma_d_generic(cs, &opts).unwrap()));
    }
    g.finish();
}

fn oracle(c: &mut Criterion) {
    let cs = fixture(2, 4, 0.5);
    let mut g = c.benchmark_group("oracle");
    g.sample_size(10);
    for n in [32, 64] {
        g.bench_with_input(BenchmarkId::new("grid", n), &n, |b, &n| b.iter(|| oracle_ideal_2user(&cs, &GridSpec::new(n)).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, closed_forms, schemes, oracle);
criterion_main!(benches);
