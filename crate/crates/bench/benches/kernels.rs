use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use sqocc_core::synth::{gen_scene, occ3d_classes, reference_shape, row_scene, SceneGenConfig};
use sqocc_core::*;

fn inside_outside(c: &mut Criterion) {
    let sq = reference_shape();
    let points: Vec<Vec3> = (0..1024)
        .map(|i| {
            let t = i as f64 * 0.01;
            Vec3::new(t.sin() * 1.5, (1.3 * t).cos() * 1.2, (0.7 * t).sin())
        })
        .collect();
    c.bench_function("inside_outside/1024 points", |b| {
        b.iter(|| points.iter().map(|p| sq.inside_outside(black_box(p))).sum::<f64>())
    });
}

fn gaussianize_default(c: &mut Criterion) {
    let sq = reference_shape();
    let cfg = GaussianizeConfig::default();
    c.bench_function("gaussianize/one primitive", |b| b.iter(|| gaussianize(black_box(&sq), &cfg).unwrap()));
}

fn voxelize_scenes(c: &mut Criterion) {
    let mut group = c.benchmark_group("voxelize");
    group.sample_size(10);
    let small = VoxelGridSpec::new(Vec3::new(-6.4, -6.4, -6.4), [32, 32, 32], 0.4).unwrap();
    let scene = gen_scene(1, 40, &small, &occ3d_classes(), &SceneGenConfig::default()).unwrap();
    let cfg = VoxelizeConfig::default();
    group.bench_function("windowed/40 primitives, 32^3", |b| b.iter(|| voxelize(&scene, &small, &cfg).unwrap()));
    group.bench_function("bruteforce/40 primitives, 32^3", |b| {
        b.iter(|| voxelize_bruteforce(&scene, &small, &cfg).unwrap())
    });
    let occ3d = VoxelGridSpec::occ3d();
    let big = gen_scene(2024, 1600, &occ3d, &occ3d_classes(), &SceneGenConfig::default()).unwrap();
    group.bench_function("windowed/1600 primitives, occ3d", |b| b.iter(|| voxelize(&big, &occ3d, &cfg).unwrap()));
    group.finish();
}

fn render_views(c: &mut Criterion) {
    let mut group = c.benchmark_group("render");
    group.sample_size(10);
    let gen = SceneGenConfig { scale_range: (0.3, 1.2), opacity_range: (0.5, 1.0), logit_range: (-3.0, 3.0) };
    let scene = row_scene(0, 5, 4.5, &ClassTable::anonymous(4).unwrap(), &gen).unwrap();
    let eye = Vec3::new(0.0, -25.0, 7.5);
    let f = 256.0 * eye.norm() / 24.0;
    let cam = Camera::look_at(eye, Vec3::zeros(), Vec3::z(), f, f, 256, 256, 0.1, 100.0).unwrap();
    let opts = RenderOptions::default();
    group.bench_function("splat/5 primitives, 256^2", |b| {
        b.iter_batched(
            || gaussianize_scene(&scene, &GaussianizeConfig::default()).unwrap().0,
            |cloud| splat_render(&cloud, &cam, &opts).unwrap(),
            BatchSize::LargeInput,
        )
    });
    group.bench_function("raymarch/5 primitives, 256^2", |b| {
        b.iter(|| raymarch_render(&scene, &cam, 0.025, &opts).unwrap())
    });
    group.finish();
}

criterion_group!(benches, inside_outside, gaussianize_default, voxelize_scenes, render_views);
criterion_main!(benches);
