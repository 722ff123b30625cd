use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use dtsst_bench::{model_and_batch, recording};
use dtsst_core::model::Mode;
use dtsst_core::signal::{morlet_tfr, MorletPlan};
use dtsst_core::{Graph, Tensor};

fn conv(c: &mut Criterion) {
    // temporal convolution shaped like the first EEG layer on a 22-channel trial
    let x = Tensor::full(&[8, 1, 22, 1000], 0.5);
    let k = Tensor::full(&[8, 1, 1, 64], 0.01);
    c.bench_function("conv2d_forward_backward", |b| {
        b.iter(|| {
            let mut g = Graph::new();
            let xv = g.leaf(x.clone(), false);
            let kv = g.leaf(k.clone(), true);
            let y = g.conv2d(xv, kv, (1, 1), 1).unwrap();
            let s = g.sum(y).unwrap();
            g.backward(s).unwrap();
            black_box(g.grad(kv).map(|d| d[0]))
        })
    });
}

fn tfr(c: &mut Criterion) {
    let trial = recording(22, 1000, 250.0);
    let freqs: Vec<f64> = (1..=40).map(f64::from).collect();
    let plan = MorletPlan::new(&freqs, 250.0).unwrap();
    c.bench_function("morlet_tfr_22ch_1000x40", |b| b.iter(|| black_box(morlet_tfr(&trial, &plan).unwrap())));
}

fn forward(c: &mut Criterion) {
    let (model, eeg, tfr, labels) = model_and_batch("mini", 16);
    c.bench_function("mini_predict_16", |b| b.iter(|| black_box(model.predict(&eeg, &tfr).unwrap())));
    c.bench_function("mini_train_step_16", |b| {
        b.iter(|| {
            let mut g = Graph::new();
            let vars = model.bind(&mut g, true);
            let (e, t) = (g.constant(eeg.clone()), g.constant(tfr.clone()));
            let out = model.forward(&mut g, &vars, e, t, Mode::Train, None).unwrap();
            let loss = g.cross_entropy(out.logits, &labels).unwrap();
            g.backward(loss).unwrap();
            black_box(g.value(loss).data()[0])
        })
    });
}

criterion_group!(benches, conv, tfr, forward);
criterion_main!(benches);
