//! Throughput of the rate pipelines at the reference operating point.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use passive_decoy::active::{active_rate, ActiveDecoyParams};
use passive_decoy::study::Scenario;
use passive_decoy::{build_stats, evaluate, observe, ChannelParams, FluctuationEstimator, FluctuationSpec};

fn passive(c: &mut Criterion) {
    let s = Scenario::default();
    let stats = build_stats(&s.source, s.tail_mass).unwrap();
    let ch = ChannelParams::default().at_distance(30.0);
    let obs = observe(&stats, &ch, s.qber_model).unwrap();
    c.bench_function("passive/evaluate", |b| {
        b.iter(|| evaluate(black_box(&stats), black_box(&obs), &ch, &s.proto, s.options.totaling).unwrap())
    });
    c.bench_function("passive/build_stats", |b| b.iter(|| build_stats(black_box(&s.source), s.tail_mass).unwrap()));
}

fn fluctuation(c: &mut Criterion) {
    let s = Scenario::default();
    let stats = build_stats(&s.source, s.tail_mass).unwrap();
    let ch = ChannelParams::default().at_distance(30.0);
    let obs = observe(&stats, &ch, s.qber_model).unwrap();
    let est = FluctuationEstimator::new(s.source, FluctuationSpec::uniform(0.05), s.options, s.tail_mass).unwrap();
    let scan = est.scan(obs.p_click, obs.p_noclick).unwrap();
    c.bench_function("fluctuation/scan", |b| b.iter(|| est.scan(black_box(obs.p_click), obs.p_noclick).unwrap()));
    c.bench_function("fluctuation/evaluate_with_scan", |b| {
        b.iter(|| est.evaluate_with_scan(&scan, black_box(&obs), &ch, &s.proto).unwrap())
    });
}

fn active(c: &mut Criterion) {
    let s = Scenario::default();
    let ch = ChannelParams::default().at_distance(30.0);
    let params = ActiveDecoyParams::three_intensity(0.05);
    c.bench_function("active/three_intensity", |b| b.iter(|| active_rate(black_box(&params), &ch, &s.proto).unwrap()));
}

fn compare(c: &mut Criterion) {
    let s = Scenario::default();
    let distances: Vec<f64> = (1..=150).map(f64::from).collect();
    let mut g = c.benchmark_group("study");
    g.sample_size(10);
    g.bench_function("compare/2x150", |b| b.iter(|| s.compare(black_box(&[0.02, 0.05]), &distances).unwrap()));
    g.finish();
}

criterion_group!(benches, passive, fluctuation, active, compare);
criterion_main!(benches);
