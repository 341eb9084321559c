use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use rashvit_bench::{signal, tensor};
use rashvit_core::diffcore::kernels::conv2d;
use rashvit_core::diffcore::Conv2dGeom;
use rashvit_core::sigproc::{featurize, fft, normalize};
use rashvit_core::SignalSegment;

fn bench_fft(c: &mut Criterion) {
    let mut group = c.benchmark_group("fft");
    for n in [64, 512, 2048] {
        let x = signal(n);
        group.bench_with_input(BenchmarkId::from_parameter(n), &x, |b, x| b.iter(|| fft(black_box(x)).unwrap()));
    }
    group.finish();

    let seg = SignalSegment::new(signal(2048), 12_000.0, "bench").unwrap();
    c.bench_function("normalize+featurize/2048", |b| {
        b.iter(|| featurize(&normalize(black_box(&seg))).unwrap())
    });
}

fn bench_conv(c: &mut Criterion) {
    let mut group = c.benchmark_group("conv2d");
    // stem-like 3x3 stride 2, pointwise, and depthwise 3x3
    let cases = [
        ("3x3_s2_2to16", [8, 2, 64, 32], [16, 2, 3, 3], Conv2dGeom::new(2, 1, 1)),
        ("1x1_32to64", [8, 32, 16, 8], [64, 32, 1, 1], Conv2dGeom::new(1, 0, 1)),
        ("dw3x3_32", [8, 32, 16, 8], [32, 1, 3, 3], Conv2dGeom::new(1, 1, 32)),
    ];
    for (name, xs, ws, g) in cases {
        let (x, w) = (tensor(&xs), tensor(&ws));
        group.bench_function(name, |b| b.iter(|| conv2d(black_box(&x), &w, None, &g).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, bench_fft, bench_conv);
criterion_main!(benches);
