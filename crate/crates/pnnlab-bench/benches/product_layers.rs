//! Criterion microbenchmarks of the product-layer kernels.
//!
//! Two questions drive these benches:
//!
//! 1. How much does each complexity reduction buy at realistic sizes
//!    (naive vs factorized inner product, naive vs superposed outer
//!    product)?
//! 2. How do the shared building blocks (linear signal, packed
//!    quadratic form) cost out as the field count grows?
//!
//! Run with `cargo bench -p pnnlab-bench`. For fitted growth exponents
//! over the full field-count sweep, use `pnnlab bench` instead — the
//! CLI's adaptive timer is tuned for slope fitting rather than
//! statistical comparison.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use pnnlab::product::{
    field_sum, gram_matrix, ipnn_lp_factorized, ipnn_lp_naive, lz_forward,
    opnn_lp_naive_tied, opnn_lp_superposed, PackedSym,
};
use pnnlab::{Mat, Rng};

const M: usize = 10;
const D1: usize = 32;

fn rand_mat(rows: usize, cols: usize, rng: &mut Rng) -> Mat {
    Mat::from_fn(rows, cols, |_, _| rng.uniform(-0.5, 0.5))
}

fn rand_sym(n: usize, rng: &mut Rng) -> Mat {
    let a = rand_mat(n, n, rng);
    Mat::from_fn(n, n, |i, j| 0.5 * (a.get(i, j) + a.get(j, i)))
}

/// Naive vs factorized inner-product signal across field counts.
fn bench_inner_product(c: &mut Criterion) {
    let mut group = c.benchmark_group("inner_lp");
    for n in [8usize, 32, 128] {
        let mut rng = Rng::new(n as u64);
        let f = rand_mat(n, M, &mut rng);
        let theta = rand_mat(D1, n, &mut rng);
        let wp_full: Vec<Mat> = (0..D1).map(|_| rand_sym(n, &mut rng)).collect();

        group.bench_with_input(BenchmarkId::new("naive", n), &n, |b, _| {
            b.iter(|| ipnn_lp_naive(black_box(&wp_full), black_box(&f)).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("factorized", n), &n, |b, _| {
            b.iter(|| ipnn_lp_factorized(black_box(&theta), black_box(&f)).unwrap())
        });
    }
    group.finish();
}

/// Naive (weight-tied) vs superposed outer-product signal.
fn bench_outer_product(c: &mut Criterion) {
    let mut group = c.benchmark_group("outer_lp");
    for n in [8usize, 32, 128] {
        let mut rng = Rng::new(n as u64);
        let f = rand_mat(n, M, &mut rng);
        let tied: Vec<Mat> = (0..D1).map(|_| rand_sym(M, &mut rng)).collect();
        let packed = PackedSym::init_xavier(D1, M, &mut rng);

        group.bench_with_input(BenchmarkId::new("naive_tied", n), &n, |b, _| {
            b.iter(|| opnn_lp_naive_tied(black_box(&tied), black_box(&f)).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("superposed", n), &n, |b, _| {
            b.iter(|| opnn_lp_superposed(black_box(&packed), black_box(&f)).unwrap())
        });
    }
    group.finish();
}

/// Shared building blocks: linear signal, Gram matrix, field sum.
fn bench_building_blocks(c: &mut Criterion) {
    let mut group = c.benchmark_group("building_blocks");
    let n = 32;
    let mut rng = Rng::new(3);
    let f = rand_mat(n, M, &mut rng);
    let wz = rand_mat(D1, n * M, &mut rng);

    group.bench_function("lz_forward", |b| {
        b.iter(|| lz_forward(black_box(&wz), black_box(&f)).unwrap())
    });
    group.bench_function("gram_matrix", |b| {
        b.iter(|| gram_matrix(black_box(&f)))
    });
    group.bench_function("field_sum", |b| {
        b.iter(|| field_sum(black_box(&f)))
    });
    group.finish();
}

criterion_group!(
    benches,
    bench_inner_product,
    bench_outer_product,
    bench_building_blocks
);
criterion_main!(benches);
