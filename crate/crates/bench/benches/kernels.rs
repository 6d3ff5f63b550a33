use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use hcnn::correlation::CorrPlan;
use hcnn::geometry::{build_grid, haar_grid, GridSpec, RadialSpec, ScaleSpec, SpaceKind};
use hcnn::network::{input_grid, Network, NetworkSpec};
use hcnn::signal::manifold_anchors;
use hcnn::stats::{permutation_test, FeatureTable};
use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn product(order: usize, nodes: usize) -> GridSpec {
    GridSpec::Product { order, radial: RadialSpec::new(nodes) }
}

fn grids(c: &mut Criterion) {
    c.bench_function("build_product_grid_16x48", |b| b.iter(|| build_grid(black_box(&product(16, 48))).unwrap()));
    let so3 = GridSpec::So3xScale { n_alpha: 8, n_beta: 4, n_gamma: 8, scale: ScaleSpec::powers_of_two(-1, 1) };
    c.bench_function("build_haar_grid_8x4x8x3", |b| b.iter(|| haar_grid(black_box(&so3)).unwrap()));
}

fn correlation(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let grid = Arc::new(build_grid(&product(8, 12)).unwrap());
    let out = haar_grid(&GridSpec::So3xScale { n_alpha: 4, n_beta: 2, n_gamma: 4, scale: ScaleSpec::powers_of_two(-1, 1) }).unwrap();
    let anchors = manifold_anchors(SpaceKind::ProductS2RPlus, 8, 0.5, &mut rng);
    c.bench_function("corr_plan_build", |b| b.iter(|| CorrPlan::new(grid.clone(), &anchors, 0.8, out.nodes()).unwrap()));
    let plan = CorrPlan::new(grid.clone(), &anchors, 0.8, out.nodes()).unwrap();
    let x = Array3::from_shape_fn((16, 4, grid.len()), |_| rng.random_range(-1.0..1.0));
    let coef = Array3::from_shape_fn((8, 4, 8), |_| rng.random_range(-1.0..1.0));
    c.bench_function("corr_plan_forward_b16_c4x8", |b| b.iter(|| plan.forward(black_box(&x), black_box(&coef)).unwrap()));
}

fn networks(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for (name, spec, batch) in [("p3", NetworkSpec::p3(3), 32), ("dmri", NetworkSpec::dmri(3), 10)] {
        let mut net = Network::build(&spec).unwrap();
        let points = input_grid(&spec).unwrap().len();
        let voxels = match &spec.architecture {
            hcnn::network::Architecture::Dmri { roi_dims, .. } => roi_dims.iter().product(),
            _ => 1,
        };
        let inputs: Vec<Array3<f64>> = (0..net.branches().len())
            .map(|_| Array3::from_shape_fn((batch * voxels, 1, points), |_| rng.random_range(0.0..1.0)))
            .collect();
        let labels: Vec<usize> = (0..batch).map(|i| i % 2).collect();
        c.bench_function(&format!("{name}_train_step_b{batch}"), |b| {
            b.iter(|| {
                net.loss_and_grad(black_box(&inputs), &labels).unwrap();
                net.sgd_step(0.01).unwrap();
            })
        });
    }
}

fn statistics(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let rows = Array2::from_shape_fn((40, 6), |_| rng.random_range(-1.0..1.0));
    let groups: Vec<usize> = (0..40).map(|i| usize::from(i >= 20)).collect();
    let table = FeatureTable::from_rows(rows, groups).unwrap();
    c.bench_function("permutation_test_40x6_2000", |b| {
        b.iter_batched(|| table.clone(), |t| permutation_test(&t, 2000, 7).unwrap(), BatchSize::SmallInput)
    });
}

criterion_group!(benches, grids, correlation, networks, statistics);
criterion_main!(benches);
