use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use radar_autocal_bench::{ctra_measurements, random_costs, random_points};
use radar_autocal_core::cluster::{dbscan, solve_assignment};
use radar_autocal_core::config::PipelineConfig;
use radar_autocal_core::pipeline::calibrate;
use radar_autocal_core::sim::{generate_scenario, ScenarioConfig};
use radar_autocal_core::track::{smooth_points, TrackParams};

fn bench_dbscan(c: &mut Criterion) {
    let mut g = c.benchmark_group("dbscan");
    for n in [50, 200, 800] {
        let pts = random_points(n, 7);
        g.bench_with_input(BenchmarkId::from_parameter(n), &pts, |b, pts| {
            b.iter(|| dbscan(pts.len(), 2.5, 3, |i, j| (pts[i] - pts[j]).norm()))
        });
    }
    g.finish();
}

fn bench_hungarian(c: &mut Criterion) {
    let mut g = c.benchmark_group("hungarian");
    for n in [4, 16, 64] {
        let cost = random_costs(n, 11);
        g.bench_with_input(BenchmarkId::from_parameter(n), &cost, |b, cost| b.iter(|| solve_assignment(black_box(cost))));
    }
    g.finish();
}

fn bench_smoother(c: &mut Criterion) {
    let (times, z) = ctra_measurements(100, 3);
    let params = TrackParams::default();
    c.bench_function("ukf_rts_100", |b| b.iter(|| smooth_points(black_box(&times), black_box(&z), &params).unwrap()));
}

fn bench_pipeline(c: &mut Criterion) {
    let session = generate_scenario(&ScenarioConfig::canonical()).unwrap().session();
    let cfg = PipelineConfig::default();
    let mut g = c.benchmark_group("pipeline");
    g.sample_size(10);
    g.bench_function("calibrate_canonical", |b| b.iter(|| calibrate(black_box(&session), &cfg).unwrap()));
    g.finish();
}

criterion_group!(benches, bench_dbscan, bench_hungarian, bench_smoother, bench_pipeline);
criterion_main!(benches);
