use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use adi_core::analysis::affinity_matrix;
use adi_core::ensemble::EnsembleHyper;
use adi_core::ingest::SampledTrack;
use adi_core::par::Exec;
use adi_core::pipeline::{run_scene, synthetic, InteractionRecord, PairConfig, Scene};
use adi_core::simulate::{run_bound_experiment, PiecewiseSpec};

const STRATEGIES: [(&str, Exec); 2] = [
    ("sequential", Exec::Sequential),
    ("parallel", Exec::Parallel),
];

/// Several follower pairs and null pairs packed into one gate radius.
fn crowded_scene() -> Scene {
    let mut tracks: Vec<SampledTrack> = (0..3u64)
        .flat_map(|k| {
            synthetic::follower(k, 120, 0.5)
                .into_iter()
                .chain(synthetic::independent_ar1(50 + k, 120))
        })
        .collect();
    // The generators reuse ids 1 and 2.
    for (n, t) in tracks.iter_mut().enumerate() {
        t.actor_id = n as u64;
    }
    Scene::new(tracks).expect("distinct actor ids")
}

fn pipeline(c: &mut Criterion) {
    let scene = crowded_scene();
    let cfg = PairConfig::default();
    let mut group = c.benchmark_group("run_scene");
    group.sample_size(10);
    for (name, exec) in STRATEGIES {
        group.bench_function(name, |b| {
            b.iter(|| run_scene(black_box(&scene), "bench", &cfg, exec).unwrap())
        });
    }
    group.finish();
}

fn bound_trials(c: &mut Criterion) {
    let spec = PiecewiseSpec::even(1000, vec![0.2, 1.0, 0.5], 0.1, 1).unwrap();
    let hyper = EnsembleHyper::default();
    let mut group = c.benchmark_group("bound_experiment");
    group.sample_size(10);
    for trials in [16usize, 64] {
        for (name, exec) in STRATEGIES {
            group.bench_with_input(BenchmarkId::new(name, trials), &trials, |b, &n| {
                b.iter(|| run_bound_experiment(&spec, &hyper, n, exec).unwrap())
            });
        }
    }
    group.finish();
}

fn affinity(c: &mut Criterion) {
    let scene = crowded_scene();
    let base = run_scene(&scene, "bench", &PairConfig::default(), Exec::Parallel).unwrap();
    let records: Vec<InteractionRecord> = (0..2)
        .flat_map(|k| {
            base.iter().cloned().map(move |mut r| {
                r.scene = format!("video{k}");
                r
            })
        })
        .collect();
    let mut group = c.benchmark_group("affinity_matrix");
    for (name, exec) in STRATEGIES {
        group.bench_with_input(
            BenchmarkId::new(name, records.len()),
            &records,
            |b, recs| b.iter(|| affinity_matrix(black_box(recs), 50, 20, exec)),
        );
    }
    group.finish();
}

criterion_group!(benches, pipeline, bound_trials, affinity);
criterion_main!(benches);
