use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use amen_core::backbone::init_backbone;
use amen_core::config::{PipelineConfig, Profile};
use amen_core::data::{gen_synthetic, split};
use amen_core::optim::SgdHyper;
use amen_core::pipeline::{majority_vote, train_branch, TrainParams};

fn bench_majority_vote(c: &mut Criterion) {
    let mut rng = StdRng::seed_from_u64(11);
    let n = 1000;
    let labels: Vec<Vec<usize>> = (0..3)
        .map(|_| (0..n).map(|_| rng.gen_range(0..2)).collect())
        .collect();
    let probs: Vec<Vec<Vec<f64>>> = labels
        .iter()
        .map(|l| {
            l.iter()
                .map(|&c| {
                    let p = 0.5 + 0.45 * rng.gen::<f64>();
                    if c == 1 {
                        vec![1.0 - p, p]
                    } else {
                        vec![p, 1.0 - p]
                    }
                })
                .collect()
        })
        .collect();
    c.bench_function("majority_vote_3x1000", |b| {
        b.iter(|| majority_vote(&labels, &probs).unwrap())
    });
}

fn bench_train_epoch(c: &mut Criterion) {
    let ds = gen_synthetic(64, 32, 5, 0.5, 13).unwrap();
    let (train, _) = split(&ds, 0.5, 13).unwrap();
    let cfg = PipelineConfig::default_for(Profile::Desk);
    let spec = cfg.backbone.build(cfg.image_size, 1, 2);
    let init = init_backbone(&spec, 13).unwrap();
    let tp = TrainParams {
        epochs: 1,
        batch_size: cfg.batch_size,
        hyper: SgdHyper {
            learning_rate: cfg.learning_rate,
            momentum: cfg.momentum,
            weight_decay: cfg.weight_decay,
        },
        shuffle_base: 14,
        scale: 1,
    };
    let mut group = c.benchmark_group("train");
    group.sample_size(10);
    group.bench_function("one_epoch_32_images_desk", |b| {
        b.iter_batched(
            || init.clone(),
            |params| train_branch(&train.images, &train.labels, &spec, params, &tp).unwrap(),
            BatchSize::LargeInput,
        )
    });
    group.finish();
}

criterion_group!(benches, bench_majority_vote, bench_train_epoch);
criterion_main!(benches);
