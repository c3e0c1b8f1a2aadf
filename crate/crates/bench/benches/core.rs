use criterion::{black_box, criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stv_core::ensemble::cart::fit_tree;
use stv_core::phantom::{texture_patch, PhantomSpec};
use stv_core::tvflow::{rof_prox, tv_flow};
use stv_core::{FlowConfig, Label3};

fn prox(c: &mut Criterion) {
    let f = texture_patch(Label3::PathHu, 1);
    c.bench_function("rof_prox 50x50 tau 0.25", |b| {
        b.iter(|| rof_prox(black_box(&f), 0.25, 1e-6, 500).unwrap())
    });
}

fn flow(c: &mut Criterion) {
    let disk = PhantomSpec::disk(64, 8.0, 1.0).render().unwrap();
    let config = FlowConfig { n_components: 24, ..FlowConfig::default() };
    let mut group = c.benchmark_group("tv_flow");
    group.sample_size(10);
    group.bench_function("disk 64x64, 24 steps", |b| b.iter(|| tv_flow(black_box(&disk), &config).unwrap()));
    let patch = texture_patch(Label3::Normal, 2);
    group.bench_function("texture 50x50, 24 steps", |b| b.iter(|| tv_flow(black_box(&patch), &config).unwrap()));
    group.finish();
}

fn cart(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let rows: Vec<Vec<f64>> = (0..2000).map(|_| (0..5).map(|_| rng.gen::<f64>()).collect()).collect();
    let labels: Vec<Label3> = rows
        .iter()
        .map(|r| match (r[0] + 0.3 * r[3]) * 2.0 {
            v if v < 0.9 => Label3::Normal,
            v if v < 1.6 => Label3::PathLu,
            _ => Label3::PathHu,
        })
        .collect();
    let views: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
    c.bench_function("fit_tree 2000x5", |b| b.iter(|| fit_tree(black_box(&views), &labels).unwrap()));
}

criterion_group!(benches, prox, flow, cart);
criterion_main!(benches);
