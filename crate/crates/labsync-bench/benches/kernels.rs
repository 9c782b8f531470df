use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use labsync::codec::{decode, encode, synthesize, PulseTiming, TestCode};
use labsync::filter::lowpass_zero_phase;
use labsync::series::UniformSeries;
use labsync::session::{run_pipeline, SessionData};
use labsync::sim::{simulate, ScenarioParams};
use labsync::xcorr::{estimate_lag, LagMethod};

fn noise_series(n: usize, rate: f64) -> UniformSeries {
    // deterministic pseudo-noise, no RNG dependency needed here
    let values = (0..n)
        .map(|i| {
            let x = i as f64;
            (x * 0.37).sin() + 0.4 * (x * 0.091).sin() + 0.2 * (x * 1.7).cos()
        })
        .collect();
    UniformSeries::single(0.0, rate, "v", values).unwrap()
}

fn bench_estimate_lag(c: &mut Criterion) {
    let mut group = c.benchmark_group("estimate_lag");
    // small series stay on the direct path, large ones go through the FFT
    for (label, n, rate, max_lag) in [
        ("direct_12k", 12_000usize, 100.0, 2.0),
        ("fft_120k", 120_000, 1000.0, 2.0),
    ] {
        let reference = noise_series(n, rate);
        let probe = reference.with_start_time(0.013);
        group.bench_function(label, |b| {
            b.iter(|| {
                estimate_lag(
                    black_box(&reference),
                    black_box(&probe),
                    max_lag,
                    true,
                    LagMethod::Force,
                )
                .unwrap()
            })
        });
    }
    group.finish();
}

fn bench_filter(c: &mut Criterion) {
    let series = noise_series(100_000, 1000.0);
    c.bench_function("lowpass_zero_phase_100k", |b| {
        b.iter(|| lowpass_zero_phase(black_box(&series), 6.0, 2).unwrap())
    });
}

fn bench_decode(c: &mut Criterion) {
    let timing = PulseTiming::default();
    let stream = synthesize(
        &encode(TestCode::new(5).unwrap()),
        &timing,
        50.0,
        3.0,
        0.75,
        7,
    )
    .unwrap();
    c.bench_function("decode_frame_50hz", |b| {
        b.iter(|| decode(black_box(&stream), &timing, None).unwrap())
    });
}

fn bench_pipeline(c: &mut Criterion) {
    let mut params = ScenarioParams::gait(1);
    params.duration = 30.0;
    c.bench_function("simulate_gait_30s", |b| {
        b.iter(|| simulate(black_box(&params)).unwrap())
    });
    let session = simulate(&params).unwrap();
    let data = SessionData::from_parts(session.manifest, session.streams).unwrap();
    c.bench_function("run_pipeline_gait_30s", |b| {
        b.iter(|| run_pipeline(black_box(&data)).unwrap())
    });
}

criterion_group!(
    benches,
    bench_estimate_lag,
    bench_filter,
    bench_decode,
    bench_pipeline
);
criterion_main!(benches);
