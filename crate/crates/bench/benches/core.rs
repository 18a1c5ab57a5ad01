use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use panelcast_bench::{model_and_batch, random_tensor};
use panelcast_core::eval::{male, rmsle, rmswle};
use panelcast_core::model::{Architecture, Forecaster, Mode};
use panelcast_core::{ParamStore, Tape};
use std::hint::black_box;

fn matmul(c: &mut Criterion) {
    let mut g = c.benchmark_group("matmul");
    for n in [16, 64, 128] {
        let mut store = ParamStore::new();
        store.insert("a", random_tensor(&[8, n, n], 1));
        store.insert("b", random_tensor(&[n, n], 2));
        g.bench_with_input(BenchmarkId::new("forward_backward", n), &n, |bench, _| {
            bench.iter(|| {
                let mut tape = Tape::new();
                let a = tape.param(&store, "a").unwrap();
                let b = tape.param(&store, "b").unwrap();
                let y = tape.matmul(a, b).unwrap();
                let s = tape.sum(y).unwrap();
                black_box(tape.backward(s).unwrap());
            })
        });
    }
    g.finish();
}

fn models(c: &mut Criterion) {
    let mut g = c.benchmark_group("model");
    g.sample_size(10);
    for (name, arch, history) in [
        ("seq2seq", Architecture::Seq2seq, 200),
        ("transformer", Architecture::Transformer, 50),
        ("transformer", Architecture::Transformer, 200),
    ] {
        let (model, batch) = model_and_batch(arch, history, 16);
        g.bench_function(BenchmarkId::new(format!("{name}_train_step"), history), |bench| {
            bench.iter(|| {
                let mut tape = Tape::new();
                let y = model.forward(&mut tape, model.params(), &batch, Mode::Train).unwrap();
                let s = tape.mean(y).unwrap();
                black_box(tape.backward(s).unwrap());
            })
        });
        g.bench_function(BenchmarkId::new(format!("{name}_predict"), history), |bench| {
            bench.iter(|| black_box(model.predict(&batch).unwrap()))
        });
    }
    g.finish();
}

fn metrics(c: &mut Criterion) {
    let p: Vec<f64> = random_tensor(&[100_000], 3).data().iter().map(|v| v.abs() * 10.0).collect();
    let a: Vec<f64> = random_tensor(&[100_000], 4).data().iter().map(|v| v.abs() * 10.0).collect();
    let w: Vec<f64> = (0..p.len()).map(|i| if i % 3 == 0 { 1.25 } else { 1.0 }).collect();
    c.bench_function("rmsle_100k", |b| b.iter(|| black_box(rmsle(&p, &a).unwrap())));
    c.bench_function("rmswle_100k", |b| b.iter(|| black_box(rmswle(&p, &a, &w).unwrap())));
    c.bench_function("male_100k", |b| b.iter(|| black_box(male(&p, &a).unwrap())));
}

criterion_group!(benches, matmul, models, metrics);
criterion_main!(benches);
