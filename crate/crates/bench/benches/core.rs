use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use nuisance_core::textmodel::featurize;
use nuisance_core::{
    contributions, gtb_split, synth_generate, train, train_probe, FeaturizerConfig, ProbeConfig, Representation,
    SynthSpec, TrainParams,
};

fn corpus(per_cell: usize) -> nuisance_core::Dataset {
    synth_generate(&SynthSpec { n_sources: 10, per_cell, seed: 1, ..Default::default() }).unwrap()
}

fn bench_featurize(c: &mut Criterion) {
    let cfg = FeaturizerConfig::default();
    let text = "the staff was friendly but the food arrived cold and the wait was far too long for a weekday lunch";
    c.bench_function("featurize/20 tokens", |b| b.iter(|| featurize(black_box(text), &cfg)));
}

fn bench_train(c: &mut Criterion) {
    let d = corpus(100);
    let params = TrainParams::default();
    c.bench_function("train/2000 samples x 5 epochs", |b| b.iter(|| train(black_box(&d), &params, 3).unwrap()));
}

fn bench_contributions(c: &mut Criterion) {
    let d = corpus(50);
    let params = TrainParams::default();
    c.bench_function("contributions/1000 samples x 10 folds", |b| {
        b.iter(|| contributions(black_box(&d), 10, &params, 5).unwrap())
    });
}

fn bench_probe(c: &mut Criterion) {
    let d = corpus(50);
    let model = train(&d, &TrainParams::default(), 1).unwrap();
    let reps: Vec<Representation> = d.samples().iter().map(|s| model.represent(&s.text)).collect();
    let targets: Vec<usize> = d.samples().iter().map(|s| s.nuisance).collect();
    let space = d.nuisance_space().to_vec();
    let cfg = ProbeConfig { epochs: 2, ..Default::default() };
    c.bench_function("probe/1000 reps x 2 epochs", |b| {
        b.iter_batched(|| space.clone(), |sp| train_probe(&reps, &targets, sp, &cfg).unwrap(), BatchSize::SmallInput)
    });
}

fn bench_split(c: &mut Criterion) {
    let d = corpus(1000);
    c.bench_function("gtb_split/20000 samples", |b| b.iter(|| gtb_split(black_box(&d), 0.8, 7).unwrap()));
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = bench_featurize, bench_train, bench_contributions, bench_probe, bench_split
}
criterion_main!(benches);
