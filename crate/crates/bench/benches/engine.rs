use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ers_core::data::{generate, mine_neighbors, GenerateParams};
use ers_core::eval::hungarian_match;
use ers_core::losses::{scan_ers_loss, simclr_ers_loss};
use ers_core::model::{ClusterHead, EncoderParams, ModelConfig};
use ers_core::{LambdaVector, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::new(
        vec![rows, cols],
        (0..rows * cols)
            .map(|_| rng.random_range(-2.0..2.0))
            .collect(),
    )
    .unwrap()
}

fn losses(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (b, k, n) = (64, 5, 4);
    let anchors = random(&mut rng, b, n);
    let neighbors = random(&mut rng, b * k, n);
    let lambda = LambdaVector::new(2.0, 5.0, 4.0, 16.0);
    c.bench_function("scan_loss_backward_64x5", |bench| {
        bench.iter(|| {
            let mut tape = Tape::new();
            let a = tape.param(anchors.clone());
            let nb = tape.param(neighbors.clone());
            let pa = tape.softmax(a).unwrap();
            let pn = tape.softmax(nb).unwrap();
            let loss = scan_ers_loss(&mut tape, pa, pn, k, &lambda).unwrap();
            black_box(tape.backward(loss.total).unwrap())
        })
    });

    let x = random(&mut rng, b, 32);
    let y = random(&mut rng, b, 32);
    c.bench_function("simclr_loss_backward_64x32", |bench| {
        bench.iter(|| {
            let mut tape = Tape::new();
            let a = tape.param(x.clone());
            let bb = tape.constant(y.clone());
            let an = tape.l2_normalize(a).unwrap();
            let bn = tape.l2_normalize(bb).unwrap();
            let loss = simclr_ers_loss(&mut tape, an, bn, 2.0).unwrap();
            black_box(tape.backward(loss).unwrap())
        })
    });
}

fn model(c: &mut Criterion) {
    let cfg = ModelConfig::new(16, 4);
    let encoder = EncoderParams::init(&cfg, 1);
    let head = ClusterHead::init(&cfg, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let batch = random(&mut rng, 64, 16);
    c.bench_function("encoder_head_step_64", |bench| {
        bench.iter(|| {
            let mut tape = Tape::new();
            let enc = encoder.record(&mut tape);
            let hv = head.record(&mut tape);
            let x = tape.constant(batch.clone());
            let emb = EncoderParams::forward(&mut tape, &enc, x).unwrap();
            let probs = ClusterHead::forward(&mut tape, hv, emb).unwrap();
            let loss = tape.mean(probs).unwrap();
            black_box(tape.backward(loss).unwrap())
        })
    });
}

fn matching(c: &mut Criterion) {
    let mut group = c.benchmark_group("hungarian");
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for n in [4, 20, 100] {
        let counts: Vec<Vec<u64>> = (0..n)
            .map(|_| (0..n).map(|_| rng.random_range(0..500)).collect())
            .collect();
        group.bench_with_input(BenchmarkId::from_parameter(n), &counts, |bench, counts| {
            bench.iter(|| black_box(hungarian_match(counts).unwrap()))
        });
    }
    group.finish();
}

fn neighbors(c: &mut Criterion) {
    let ds = generate(&GenerateParams::default()).unwrap();
    c.bench_function("mine_neighbors_600_k5", |bench| {
        bench.iter(|| black_box(mine_neighbors(ds.samples(), 5).unwrap()))
    });
}

criterion_group!(benches, losses, model, matching, neighbors);
criterion_main!(benches);
