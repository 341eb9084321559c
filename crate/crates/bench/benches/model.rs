use criterion::{criterion_group, criterion_main, Criterion};
use rashvit_bench::image_batch;
use rashvit_core::model::{forward, Mode, Session};
use rashvit_core::{ModelConfig, ModelParams, Tape};

fn bench_forward(c: &mut Criterion) {
    for (name, cfg) in [("tiny", ModelConfig::tiny(10)), ("default", ModelConfig::default())] {
        let params: ModelParams<f32> = ModelParams::init(&cfg, 1).unwrap();
        let x = image_batch(&cfg, 8);

        c.bench_function(&format!("forward/{name}/b8"), |b| {
            b.iter(|| {
                let tape = Tape::new();
                let s = Session::new(&tape, &cfg, &params, Mode::Eval, 0, false).unwrap();
                let out = forward(&s, tape.constant(x.clone())).unwrap();
                out.logits.value()
            })
        });

        let labels: Vec<usize> = (0..8).map(|i| i % cfg.num_classes).collect();
        c.bench_function(&format!("train_step/{name}/b8"), |b| {
            b.iter(|| {
                let tape = Tape::new();
                let s = Session::new(&tape, &cfg, &params, Mode::Train, 0, true).unwrap();
                let out = forward(&s, tape.constant(x.clone())).unwrap();
                let loss = out.logits.cross_entropy(&labels).unwrap();
                tape.backward(loss).unwrap()
            })
        });
    }
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = bench_forward
}
criterion_main!(benches);
