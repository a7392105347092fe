use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use hat_bench::{text, values};
use hat_core::splitter::Splitter;
use hat_core::tensor::{attention_forward, matmul_into, AttnSpec, Mask};

fn bench_matmul(c: &mut Criterion) {
    let mut g = c.benchmark_group("matmul");
    for n in [32usize, 64, 128] {
        let a = values(n * n, 1);
        let b = values(n * n, 2);
        let mut out = vec![0.0f32; n * n];
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |bch, &n| {
            bch.iter(|| matmul_into(black_box(&a), black_box(&b), n, n, n, &mut out))
        });
    }
    g.finish();
}

fn bench_attention(c: &mut Criterion) {
    let mut g = c.benchmark_group("attention");
    let (heads, kv_heads, hd) = (4, 2, 16);
    for (name, mask) in [("causal", Mask::Causal), ("sliding16", Mask::Sliding(16))] {
        let n = 128;
        let q = values(n * heads * hd, 3);
        let k = values(n * kv_heads * hd, 4);
        let v = values(n * kv_heads * hd, 5);
        let spec = AttnSpec::new(heads, kv_heads, hd, mask);
        g.bench_function(name, |b| {
            b.iter(|| attention_forward(black_box(&q), black_box(&k), black_box(&v), n, n, &spec))
        });
    }
    g.finish();
}

fn bench_splitter(c: &mut Criterion) {
    let s = Splitter::new(128).unwrap();
    let t = text(16 * 1024);
    c.bench_function("split_16k", |b| b.iter(|| s.split(black_box(t.as_bytes())).unwrap()));
}

criterion_group!(benches, bench_matmul, bench_attention, bench_splitter);
criterion_main!(benches);
