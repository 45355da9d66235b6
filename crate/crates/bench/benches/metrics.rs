use criterion::{black_box, criterion_group, criterion_main, Criterion};
use mhcg_core::agent::TokenSequence;
use mhcg_core::metrics::{delta_r2, kendall_taub, retrieval_top1, spearman, text_rdm, vision_rdm, ProbePositions};
use mhcg_core::rng;
use rand::Rng;

fn feats(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut r = rng::stream(seed, &[]);
    (0..n).map(|_| (0..d).map(|_| r.random_range(-1.0..1.0)).collect()).collect()
}

fn captions(n: usize, seed: u64) -> Vec<TokenSequence> {
    let mut r = rng::stream(seed, &[]);
    (0..n).map(|_| TokenSequence((0..5).map(|_| r.random_range(0..20)).collect())).collect()
}

fn rsa(c: &mut Criterion) {
    let v = vision_rdm(&feats(500, 32, 1));
    let t = text_rdm(&captions(500, 2));
    c.bench_function("vision_rdm n=500", |b| b.iter(|| vision_rdm(black_box(&feats(500, 32, 1)))));
    c.bench_function("spearman rdm n=500", |b| b.iter(|| spearman(black_box(&t), black_box(&v)).unwrap()));
    c.bench_function("kendall_taub rdm n=500", |b| b.iter(|| kendall_taub(black_box(&t), black_box(&v)).unwrap()));
}

fn retrieval(c: &mut Criterion) {
    let (t, v) = (feats(500, 16, 3), feats(500, 16, 4));
    c.bench_function("retrieval_top1 n=500 k=10 seeds=20", |b| b.iter(|| retrieval_top1(black_box(&t), black_box(&v), 10, 0..20).unwrap()));
}

fn probe(c: &mut Criterion) {
    let (ft, fv) = (feats(1000, 32, 5), feats(500, 32, 6));
    let (tt, tv) = (captions(1000, 7), captions(500, 8));
    c.bench_function("delta_r2 all positions, 5 perms", |b| {
        b.iter(|| delta_r2(&tt, &ft, &tv, &fv, 20, ProbePositions::All, 5, &mut rng::stream(0, &[])).unwrap())
    });
}

criterion_group!(benches, rsa, retrieval, probe);
criterion_main!(benches);
