use criterion::{criterion_group, criterion_main, Criterion};
use tgt::model::{infer, GraphInputs, ModelParameters};
use tgt::train::{TrainConfig, Trainer};
use tgt_bench::{default_model, synthetic_dataset};

fn forward_pass(c: &mut Criterion) {
    let ds = synthetic_dataset(200, 1);
    let cfg = default_model();
    let (inputs, _) = GraphInputs::from_dataset(&ds, &cfg).unwrap();
    let params = ModelParameters::for_dataset(&cfg, &ds, 0).unwrap();
    c.bench_function("forward_200_users", |b| {
        b.iter(|| infer(&params, &cfg, &inputs).unwrap())
    });
}

fn train_step(c: &mut Criterion) {
    let ds = synthetic_dataset(200, 1);
    let trainer = Trainer::new(&ds, default_model(), TrainConfig::default()).unwrap();
    let params = trainer.init_parameters().unwrap();
    let instances = trainer.instances(0).unwrap();
    let batch: Vec<_> = instances.iter().collect();
    c.bench_function("forward_backward_200_users", |b| {
        b.iter(|| trainer.batch_gradients(&params, &batch).unwrap())
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = forward_pass, train_step
}
criterion_main!(benches);
