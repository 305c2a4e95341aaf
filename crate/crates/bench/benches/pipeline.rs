use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;
use stokes_cem::basis::{compute_basis, compute_ms_basis};
use stokes_cem::solver::{free_load, solve_multiscale, solve_reference};
use stokes_cem::{Discretization, Forcing};
use stokes_cem_bench::{demo, spaces};

fn assembly(c: &mut Criterion) {
    let mesh = stokes_cem::mesh::build_fine_grid(64, &stokes_cem::mesh::demo_perforations()).unwrap();
    c.bench_function("assemble 64", |b| b.iter(|| Discretization::new(black_box(&mesh), 8).unwrap()));
}

fn spectral(c: &mut Criterion) {
    let d = demo(32, 4);
    c.bench_function("auxiliary and pressure spaces 32/4", |b| b.iter(|| spaces(black_box(&d), 3)));
}

fn reference(c: &mut Criterion) {
    let d = demo(32, 4);
    let load = free_load(&d, &Forcing::Manufactured);
    c.bench_function("reference solve 32", |b| b.iter(|| solve_reference(&d, black_box(&load)).unwrap()));
}

fn basis(c: &mut Criterion) {
    let d = demo(32, 4);
    let (aux, qh) = spaces(&d, 3);
    let mut g = c.benchmark_group("basis");
    g.sample_size(10);
    g.bench_function("single function 32/4 k=1", |b| b.iter(|| compute_ms_basis(&d, &aux, 5, 0, 1).unwrap()));
    g.bench_function("all functions 32/4 k=2", |b| b.iter(|| compute_basis(&d, &aux, Some(2)).unwrap()));
    let basis = compute_basis(&d, &aux, Some(2)).unwrap();
    let load = free_load(&d, &Forcing::Manufactured);
    g.bench_function("coarse solve and pressure 32/4", |b| b.iter(|| solve_multiscale(&d, &aux, &qh, &basis, &load, true).unwrap()));
    g.finish();
}

criterion_group!(benches, assembly, spectral, reference, basis);
criterion_main!(benches);
