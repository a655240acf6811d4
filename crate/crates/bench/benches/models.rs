use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use driver_model::edm::{simulate_edm, ReferenceSource};
use driver_model::gacal::ReplayTarget;
use driver_model::seqnet::{loss_gradient, LstmEdPredictor};
use driver_model::SimConfig;
use driver_model_bench::{advisory, driver, human_trace, model, route, window};

fn edm(c: &mut Criterion) {
    let route = route();
    let adv = advisory(&route);
    let p = driver(3);
    c.bench_function("edm_full_route", |b| {
        b.iter(|| simulate_edm(black_box(&p), &route, ReferenceSource::Profile(&adv), &SimConfig::default()).unwrap())
    });
    let trace = human_trace(&route, 4);
    let target = ReplayTarget::new(&trace, &route).unwrap();
    c.bench_function("ga_fitness", |b| b.iter(|| target.fitness(black_box(&p))));
}

fn lstm(c: &mut Criterion) {
    let route = route();
    let trace = human_trace(&route, 5);
    let (x, y) = window(&trace);
    let mut group = c.benchmark_group("lstm");
    group.sample_size(20);
    for hidden in [32, 64] {
        let m = model(hidden);
        group.bench_function(format!("forward_h{hidden}"), |b| b.iter(|| m.forward(black_box(&x)).unwrap()));
        group.bench_function(format!("gradient_h{hidden}"), |b| {
            b.iter(|| loss_gradient(black_box(&m), &x, &y).unwrap())
        });
    }
    let norm = driver_model::NormStats::from_traces([&trace]).unwrap();
    let p = LstmEdPredictor::new(model(32), norm).unwrap();
    group.bench_function("predict_h32", |b| b.iter(|| p.predict(black_box(&trace.features[..300])).unwrap()));
    group.finish();
}

criterion_group!(benches, edm, lstm);
criterion_main!(benches);
