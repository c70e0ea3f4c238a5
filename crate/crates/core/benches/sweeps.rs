use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use gloss::gen::{self, Shape};
use gloss::geo::RegionId;
use gloss::ids::NodeId;
use gloss::sweep::{self, Exec};

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn transitions(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let world = gen::world(&mut rng, Shape::default());
    let traces: Vec<_> = (0..64).map(|_| gen::trace(&mut rng, &world, 1000)).collect();
    let mut g = c.benchmark_group("transition_tables");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| sweep::transition_tables(exec, black_box(&world), black_box(&traces)).unwrap())
        });
    }
    g.finish();
}

fn resolves(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let world = gen::world(&mut rng, Shape::default());
    let points = gen::trace(&mut rng, &world, 50_000);
    let mut g = c.benchmark_group("resolve_all");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| sweep::resolve_all(exec, black_box(&world), black_box(&points)))
        });
    }
    g.finish();
}

fn routing(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let net = gen::network(&mut rng, Shape::default(), 0.8);
    let nodes: Vec<NodeId> = net.nodes().map(|n| n.id.clone()).collect();
    let regions: Vec<RegionId> = net.world().regions().map(|r| r.id.clone()).collect();
    let cases: Vec<(NodeId, RegionId)> = (0..5000)
        .map(|_| (nodes.choose(&mut rng).unwrap().clone(), regions.choose(&mut rng).unwrap().clone()))
        .collect();
    let mut g = c.benchmark_group("route_all");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| sweep::route_all(exec, black_box(&net), black_box(&cases)))
        });
    }
    g.finish();
}

criterion_group!(benches, transitions, resolves, routing);
criterion_main!(benches);
