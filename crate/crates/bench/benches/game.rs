use criterion::{black_box, criterion_group, criterion_main, Criterion};
use mhcg_core::agent::{AgentConfig, AgentParams, DecodeMode, Modality, Pooling, TokenSequence};
use mhcg_core::game::{mh_accept, run_chain_exactness_test};
use mhcg_core::rng;
use rand::Rng;

fn agent() -> (AgentParams, Vec<f64>) {
    let cfg = AgentConfig { vocab: 20, seq_len: 5, pooling: Pooling::Mean, ..AgentConfig::default() };
    let mut r = rng::stream(0, &[]);
    let a = AgentParams::init(&cfg, &mut r).unwrap();
    let feat = (0..cfg.feat_dim).map(|_| r.random_range(-1.0..1.0)).collect();
    (a, feat)
}

fn decode(c: &mut Criterion) {
    let (a, feat) = agent();
    let mut r = rng::stream(1, &[]);
    c.bench_function("greedy decode", |b| b.iter(|| a.decode(black_box(&feat), DecodeMode::Greedy, &mut r).unwrap()));
}

fn accept(c: &mut Criterion) {
    let (a, feat) = agent();
    let mut r = rng::stream(2, &[]);
    let cur = TokenSequence(vec![1, 2, 3, 4, 5]);
    let prop = TokenSequence(vec![5, 4, 3, 2, 1]);
    c.bench_function("mh_accept", |b| b.iter(|| mh_accept(&a, black_box(&feat), &prop, &cur, &mut r).unwrap()));
}

fn chain(c: &mut Criterion) {
    let cfg = AgentConfig { vocab: 3, seq_len: 2, d_text: 3, d_shared: 2, d_hidden: 4, feat_dim: 4, pooling: Pooling::Mean, eps_scale: 1e-3 };
    let a = AgentParams::init(&cfg, &mut rng::stream(3, &[])).unwrap();
    let feat = [0.3, -0.2, 0.5, 0.1];
    let seqs: Vec<TokenSequence> = (0..3u32).flat_map(|x| (0..3u32).map(move |y| TokenSequence(vec![x, y]))).collect();
    let h = a.density_params(Modality::Vision, &a.vis_project(&feat).unwrap()).loc;
    let dens: Vec<_> = seqs.iter().map(|s| a.density_params(Modality::Text, &a.text_encode(s))).collect();
    let prior: Vec<f64> = seqs.iter().map(|s| a.decoder_log_prob(&feat, s).unwrap().exp()).collect();
    c.bench_function("chain 1e5 steps, 9 states", |b| b.iter(|| run_chain_exactness_test(&dens, &h, &prior, &prior, 100_000, 0).unwrap()));
}

criterion_group!(benches, decode, accept, chain);
criterion_main!(benches);
