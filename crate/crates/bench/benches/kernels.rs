use criterion::{black_box, criterion_group, criterion_main, Criterion};

use amen_bench::{desk_fixture, random_tensor};
use amen_core::attention::{attention_map, normalize_attention, upsample_attention};
use amen_core::backbone::loss_and_grads;
use amen_core::ops;

fn bench_conv2d(c: &mut Criterion) {
    let input = random_tensor(1, &[8, 16, 16]);
    let kernels = random_tensor(2, &[16, 8, 3, 3]);
    let bias = random_tensor(3, &[16]);
    c.bench_function("conv2d_forward_8x16x16_to_16", |b| {
        b.iter(|| ops::conv2d(black_box(&input), &kernels, &bias, 1, 1).unwrap())
    });

    let out = ops::conv2d(&input, &kernels, &bias, 1, 1).unwrap();
    let grad = random_tensor(4, out.shape());
    c.bench_function("conv2d_backward_8x16x16_to_16", |b| {
        b.iter(|| ops::conv2d_backward(black_box(&input), &kernels, 1, 1, &grad).unwrap())
    });
}

fn bench_pool_and_gap(c: &mut Criterion) {
    let input = random_tensor(5, &[16, 16, 16]);
    c.bench_function("max_pool2d_16x16x16_w2s2", |b| {
        b.iter(|| ops::max_pool2d(black_box(&input), 2, 2).unwrap())
    });
    c.bench_function("global_average_pool_16x16x16", |b| {
        b.iter(|| ops::global_average_pool(black_box(&input)).unwrap())
    });
}

fn bench_attention(c: &mut Criterion) {
    let feature = random_tensor(6, &[16, 8, 8]);
    c.bench_function("attention_map_normalize_upsample_8_to_32", |b| {
        b.iter(|| {
            let raw = attention_map(black_box(&feature), 1).unwrap();
            let norm = normalize_attention(&raw);
            upsample_attention(&norm, 32, 32).unwrap()
        })
    });
}

fn bench_sample_grads(c: &mut Criterion) {
    let (spec, params, image) = desk_fixture(7);
    c.bench_function("desk_backbone_loss_and_grads_32x32", |b| {
        b.iter(|| loss_and_grads(black_box(&image), 1, &spec, &params).unwrap())
    });
}

criterion_group!(
    benches,
    bench_conv2d,
    bench_pool_and_gap,
    bench_attention,
    bench_sample_grads
);
criterion_main!(benches);
