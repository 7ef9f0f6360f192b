//! Parallel-vs-sequential timings for the three batch workloads that
//! dominate scenario wall-clock time: calibration repeats, grind-profile
//! batches, and kd-tree construction over dense clouds.
//!
//! `par::map_indexed` dispatches to rayon when the `parallel` feature is on
//! (the default); `par::map_indexed_seq` is the always-sequential fallback,
//! benched here as the baseline. Results are identical either way — only
//! wall-clock time differs.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use hipnav::effector::{run_profile, ControllerConfig, PressureSample};
use hipnav::geometry::{FrameTag, Point3, RigidTransform};
use hipnav::par;
use hipnav::pointcloud::{euclidean_cluster, KdTree, PointCloud};
use hipnav::registration::register_filtered;
use hipnav::seed::{indexed_seed, rng_for};
use hipnav::sim::{
    calibration_dance, Aabb, Phantom, Robot, RobotModel, Tracker, TrackerModel,
};

/// One full positioning repeat: dance the grid, measure, fit with outlier
/// rejection. This is the per-repeat body the scenario runner fans out.
fn calibration_repeat(i: usize) -> f64 {
    let phantom = Phantom::reference();
    let seed = indexed_seed(0xbe9c, i as u64);
    let mut robot = Robot::new(RobotModel {
        jitter_sigma_trans_mm: 0.9,
        ..RobotModel::ideal(seed)
    })
    .unwrap();
    let mut tracker = Tracker::new(TrackerModel {
        noise_sigma_mm: 0.15,
        fov: Aabb {
            min: Point3::new(-5000.0, -5000.0, -5000.0),
            max: Point3::new(5000.0, 5000.0, 5000.0),
        },
        seed: indexed_seed(seed, 1),
    })
    .unwrap();
    let start = RigidTransform::translation_only(
        Vector3::new(300.0, -50.0, 400.0),
        FrameTag::Tool,
        FrameTag::Base,
    );
    let pairs = calibration_dance(&mut robot, &mut tracker, &phantom, &start, 20.0, (3, 3, 3))
        .expect("dance stays in view");
    register_filtered(&pairs, 4.0, 10).expect("fit converges").rms_mm
}

fn bench_calibration_repeats(c: &mut Criterion) {
    let mut group = c.benchmark_group("calibration_repeats_x32");
    group.sample_size(10);
    group.bench_function("parallel", |b| {
        b.iter(|| black_box(par::map_indexed(32, calibration_repeat)))
    });
    group.bench_function("sequential", |b| {
        b.iter(|| black_box(par::map_indexed_seq(32, calibration_repeat)))
    });
    group.finish();
}

fn synth_profiles(count: usize) -> Vec<Vec<PressureSample>> {
    let mut rng = rng_for(0xbe9d);
    (0..count)
        .map(|_| {
            let contact = rng.random_range(5u64..60);
            let ramp = rng.random_range(0.05..0.6);
            (0..200u64)
                .map(|tick| {
                    let noise: f64 = StandardNormal.sample(&mut rng);
                    let base = if tick < contact {
                        0.0
                    } else {
                        (tick - contact) as f64 * ramp
                    };
                    PressureSample {
                        tick,
                        force_n: (base + 0.05 * noise).max(0.0),
                    }
                })
                .collect()
        })
        .collect()
}

fn bench_grind_profiles(c: &mut Criterion) {
    let profiles = synth_profiles(500);
    let config = ControllerConfig::default();
    // Summing the stop ticks keeps the controller runs observable.
    let work = |i: usize| -> u64 {
        run_profile(config, &profiles[i])
            .expect("profile runs")
            .stop_tick
            .unwrap_or(0)
    };

    let mut group = c.benchmark_group("grind_profiles_x500");
    group.sample_size(10);
    group.bench_function("parallel", |b| {
        b.iter(|| black_box(par::map_indexed(profiles.len(), work).iter().sum::<u64>()))
    });
    group.bench_function("sequential", |b| {
        b.iter(|| black_box(par::map_indexed_seq(profiles.len(), work).iter().sum::<u64>()))
    });
    group.finish();
}

fn blob_cloud(points: usize) -> PointCloud {
    let mut rng = rng_for(0xbe9e);
    let centers: Vec<Point3> = (0..40)
        .map(|_| {
            Point3::new(
                rng.random_range(-400.0..400.0),
                rng.random_range(-400.0..400.0),
                rng.random_range(-400.0..400.0),
            )
        })
        .collect();
    let pts = (0..points)
        .map(|i| {
            let c = &centers[i % centers.len()];
            let dx: f64 = StandardNormal.sample(&mut rng);
            let dy: f64 = StandardNormal.sample(&mut rng);
            let dz: f64 = StandardNormal.sample(&mut rng);
            Point3::new(c.x + 3.0 * dx, c.y + 3.0 * dy, c.z + 3.0 * dz)
        })
        .collect();
    PointCloud::new(pts, FrameTag::Pic).expect("finite cloud")
}

fn bench_kd_build_and_cluster(c: &mut Criterion) {
    let cloud = blob_cloud(10_000);

    let mut group = c.benchmark_group("kd_cluster_10k");
    group.sample_size(10);
    group.bench_function("parallel_build", |b| {
        b.iter(|| {
            let tree = KdTree::new(&cloud).expect("build");
            black_box(euclidean_cluster(&tree, 6.0).expect("cluster").len())
        })
    });
    group.bench_function("sequential_build", |b| {
        b.iter(|| {
            let tree = KdTree::new_sequential(&cloud).expect("build");
            black_box(euclidean_cluster(&tree, 6.0).expect("cluster").len())
        })
    });
    group.finish();
}

criterion_group!(
    benches,
    bench_calibration_repeats,
    bench_grind_profiles,
    bench_kd_build_and_cluster
);
criterion_main!(benches);
