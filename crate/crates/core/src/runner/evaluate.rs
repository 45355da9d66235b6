//! The per-epoch metric bundle, computed on validation items only.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::agent::{AgentParams, DecodeMode, TokenSequence};
use crate::diagnostics::{consistency_point, CurvePoint};
use crate::error::{Error, Result};
use crate::metrics::{
    bias_delta, category_breadth, delta_r2, diversity, global_radius, kendall_taub_partial,
    matched_size_bootstrap, positional_entropy, retrieval_top1, shared_sequences, spearman, text_rdm,
    visual_radius, vision_rdm, ProbePositions, Rdm,
};
use crate::rng::{self, label};
use crate::runner::config::ExperimentConfig;
use crate::synthworld::{
    calibrate_mix, encode_clean, generate_dataset, make_encoder_pair, Dataset, EncoderPairSpec, SyntheticEncoder,
    VisualFeature, WorldItem,
};

pub const DIRECTIONS: [&str; 4] = ["A->A", "A->B", "B->A", "B->B"];
pub const CROSS: [&str; 2] = ["A->B", "B->A"];

/// Dataset, frozen encoders and their clean features.
pub struct World {
    pub dataset: Dataset,
    pub spec: EncoderPairSpec,
    pub enc_a: SyntheticEncoder,
    pub enc_b: SyntheticEncoder,
    pub vv_rsa: f64,
    pub val_a: Vec<VisualFeature>,
    pub val_b: Vec<VisualFeature>,
    pub train_a: Vec<VisualFeature>,
    pub train_b: Vec<VisualFeature>,
    rdm_a: Rdm,
    rdm_b: Rdm,
    radius_a: f64,
    radius_b: f64,
}

const CALIBRATION_TOL: f64 = 0.01;

impl World {
    pub fn build(cfg: &ExperimentConfig) -> Result<Self> {
        let dataset = generate_dataset(&cfg.world)?;
        let spec = match cfg.target_vv_rsa {
            Some(t) => calibrate_mix(&cfg.encoder, cfg.world.latent_dim, &dataset.val, t, CALIBRATION_TOL)?.0,
            None => cfg.encoder.clone(),
        };
        Self::from_parts(dataset, spec)
    }

    pub fn from_parts(dataset: Dataset, spec: EncoderPairSpec) -> Result<Self> {
        let (enc_a, enc_b) = make_encoder_pair(&spec, dataset.latent_dim())?;
        let val_a = encode_clean(&enc_a, &dataset.val)?;
        let val_b = encode_clean(&enc_b, &dataset.val)?;
        let train_a = encode_clean(&enc_a, &dataset.train)?;
        let train_b = encode_clean(&enc_b, &dataset.train)?;
        let rdm_a = vision_rdm(&val_a);
        let rdm_b = vision_rdm(&val_b);
        let vv_rsa = spearman(&rdm_a, &rdm_b)?;
        let radius_a = global_radius(&val_a);
        let radius_b = global_radius(&val_b);
        Ok(Self { dataset, spec, enc_a, enc_b, vv_rsa, val_a, val_b, train_a, train_b, rdm_a, rdm_b, radius_a, radius_b })
    }

    fn val_feats(&self, agent: char) -> &[VisualFeature] {
        if agent == 'A' {
            &self.val_a
        } else {
            &self.val_b
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SharedStats {
    pub n_shared: usize,
    pub covered_images: usize,
    pub mean_size: Option<f64>,
    /// Mean normalized visual radius in each agent's space.
    pub radius: BTreeMap<String, Option<f64>>,
    pub effective_categories: Option<f64>,
    pub top_object_mass: Option<f64>,
    /// Matched-size bootstrap of per-sequence radii, A space minus B space.
    pub radius_diff_ci95: Option<(f64, f64)>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub tt_rsa: f64,
    pub vv_rsa: f64,
    pub vt_rsa: BTreeMap<String, f64>,
    pub delta_r2: BTreeMap<String, f64>,
    pub delta_r2_singleton: BTreeMap<String, Vec<f64>>,
    pub i2t: BTreeMap<String, f64>,
    pub t2i: BTreeMap<String, f64>,
    pub acceptance: BTreeMap<String, f64>,
    pub unique: BTreeMap<String, usize>,
    pub entropy: BTreeMap<String, Vec<f64>>,
    pub bias_delta: BTreeMap<String, Option<f64>>,
    pub kendall_bias_delta: BTreeMap<String, Option<f64>>,
    pub shared: SharedStats,
    pub consistency: Vec<CurvePoint>,
    pub degenerate: bool,
}

fn mean2(m: &BTreeMap<String, f64>) -> f64 {
    CROSS.iter().map(|d| m[*d]).sum::<f64>() / 2.0
}

impl EpochMetrics {
    pub fn cross_vt_rsa(&self) -> f64 {
        mean2(&self.vt_rsa)
    }
    pub fn cross_delta_r2(&self) -> f64 {
        mean2(&self.delta_r2)
    }
    pub fn cross_i2t(&self) -> f64 {
        mean2(&self.i2t)
    }
    pub fn cross_t2i(&self) -> f64 {
        mean2(&self.t2i)
    }
    pub fn mean_unique(&self) -> f64 {
        self.unique.values().sum::<usize>() as f64 / self.unique.len().max(1) as f64
    }

    /// Flat `(direction, metric, value)` rows; `direction` is `-` for undirected metrics.
    pub fn rows(&self) -> Vec<(String, String, f64)> {
        let mut out: Vec<(String, String, f64)> = Vec::new();
        let mut put = |d: &str, m: &str, v: f64| out.push((d.to_string(), m.to_string(), v));
        put("-", "tt_rsa", self.tt_rsa);
        put("-", "vv_rsa", self.vv_rsa);
        for (name, map) in [("vt_rsa", &self.vt_rsa), ("delta_r2", &self.delta_r2), ("i2t", &self.i2t), ("t2i", &self.t2i), ("acceptance_rate", &self.acceptance)] {
            for (d, v) in map {
                put(d, name, *v);
            }
        }
        for (d, v) in &self.delta_r2_singleton {
            for (pos, x) in v.iter().enumerate() {
                put(d, &format!("delta_r2_pos{pos}"), *x);
            }
        }
        for (agent, n) in &self.unique {
            put(agent, "unique", *n as f64);
        }
        for (agent, h) in &self.entropy {
            for (pos, x) in h.iter().enumerate() {
                put(agent, &format!("entropy_pos{pos}"), *x);
            }
        }
        for (name, map) in [("bias_delta", &self.bias_delta), ("kendall_bias_delta", &self.kendall_bias_delta)] {
            for (agent, v) in map {
                if let Some(x) = v {
                    put(agent, name, *x);
                }
            }
        }
        put("-", "n_shared", self.shared.n_shared as f64);
        put("-", "shared_covered_images", self.shared.covered_images as f64);
        if let Some(x) = self.shared.mean_size {
            put("-", "shared_mean_size", x);
        }
        for (agent, r) in &self.shared.radius {
            if let Some(x) = r {
                put(agent, "shared_radius", *x);
            }
        }
        if let Some(x) = self.shared.effective_categories {
            put("-", "shared_effective_categories", x);
        }
        if let Some(x) = self.shared.top_object_mass {
            put("-", "shared_top_object_mass", x);
        }
        for p in &self.consistency {
            put(&p.agent, "sc_jsd", p.mean_jsd);
            put(&p.agent, "sc_spearman", p.mean_spearman);
            put(&p.agent, "sc_top1", p.top1_rate);
            put(&p.agent, "sc_rank_percentile", p.mean_rank_percentile);
        }
        put("-", "degenerate", if self.degenerate { 1.0 } else { 0.0 });
        out
    }
}

fn greedy_all(agent: &AgentParams, feats: &[VisualFeature]) -> Result<Vec<TokenSequence>> {
    let mut unused = rng::stream(0, &[]);
    feats.iter().map(|f| agent.decode(f, DecodeMode::Greedy, &mut unused)).collect()
}

fn undefined_as_none(r: Result<f64>) -> Result<Option<f64>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::Undefined(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Validation-only guard: evaluation items must all be held out.
pub fn check_val_items(dataset: &Dataset, items: &[WorldItem]) -> Result<()> {
    if let Some(it) = items.iter().find(|it| !dataset.is_val_id(it.id)) {
        return Err(Error::Contract(format!("evaluation received training item {}", it.id)));
    }
    Ok(())
}

/// Full metric battery for one pair of frozen agents.
pub fn evaluate(
    cfg: &ExperimentConfig,
    world: &World,
    a: &AgentParams,
    b: &AgentParams,
    epoch: usize,
    seed: u64,
    acceptance: BTreeMap<String, f64>,
) -> Result<EpochMetrics> {
    check_val_items(&world.dataset, &world.dataset.val)?;
    let ev = &cfg.eval;
    let caps_a = greedy_all(a, &world.val_a)?;
    let caps_b = greedy_all(b, &world.val_b)?;
    let n_probe = if ev.probe_train == 0 { world.train_a.len() } else { ev.probe_train.min(world.train_a.len()) };
    let train_caps_a = greedy_all(a, &world.train_a[..n_probe])?;
    let train_caps_b = greedy_all(b, &world.train_b[..n_probe])?;

    let t_rdm_a = text_rdm(&caps_a);
    let t_rdm_b = text_rdm(&caps_b);
    let mut m = EpochMetrics { epoch, vv_rsa: world.vv_rsa, acceptance, ..EpochMetrics::default() };
    m.unique.insert("A".into(), diversity(&caps_a));
    m.unique.insert("B".into(), diversity(&caps_b));
    m.degenerate = m.unique.values().any(|&u| u == 1);
    m.tt_rsa = spearman(&t_rdm_a, &t_rdm_b)?;

    let agent_of = |c: char| if c == 'A' { a } else { b };
    let caps_of = |c: char| if c == 'A' { &caps_a } else { &caps_b };
    let train_caps_of = |c: char| if c == 'A' { &train_caps_a } else { &train_caps_b };
    let trdm_of = |c: char| if c == 'A' { &t_rdm_a } else { &t_rdm_b };
    let vrdm_of = |c: char| if c == 'A' { &world.rdm_a } else { &world.rdm_b };
    let train_feats_of = |c: char| if c == 'A' { &world.train_a[..n_probe] } else { &world.train_b[..n_probe] };

    for dir in DIRECTIONS {
        let (x, y) = (dir.as_bytes()[0] as char, dir.as_bytes()[3] as char);
        m.vt_rsa.insert(dir.into(), spearman(trdm_of(x), vrdm_of(y))?);

        let dir_idx = DIRECTIONS.iter().position(|d| *d == dir).unwrap() as u64;
        let mut prng = rng::stream(seed, &[label::EVAL, epoch as u64, dir_idx]);
        let probe = delta_r2(
            train_caps_of(x),
            train_feats_of(y),
            caps_of(x),
            world.val_feats(y),
            cfg.agent.vocab,
            ProbePositions::All,
            ev.n_perms,
            &mut prng,
        )?;
        m.delta_r2.insert(dir.into(), probe.delta_r2_vw);
        if ev.singleton_probes && x != y {
            let mut per_pos = Vec::with_capacity(cfg.agent.seq_len);
            for pos in 0..cfg.agent.seq_len {
                let p = delta_r2(
                    train_caps_of(x),
                    train_feats_of(y),
                    caps_of(x),
                    world.val_feats(y),
                    cfg.agent.vocab,
                    ProbePositions::Singleton(pos),
                    ev.n_perms,
                    &mut prng,
                )?;
                per_pos.push(p.delta_r2_vw);
            }
            m.delta_r2_singleton.insert(dir.into(), per_pos);
        }

        // X's captions read by Y's text encoder, Y's images by Y's vision projection.
        let ya = agent_of(y);
        let text: Vec<Vec<f64>> = caps_of(x).iter().map(|c| ya.text_encode(c)).collect();
        let img: Vec<Vec<f64>> = world.val_feats(y).iter().map(|f| ya.vis_project(f)).collect::<Result<_>>()?;
        let r = retrieval_top1(&text, &img, ev.k, 0..ev.candidate_seeds)?;
        m.i2t.insert(dir.into(), r.i2t);
        m.t2i.insert(dir.into(), r.t2i);
    }

    for (c, caps) in [("A", &caps_a), ("B", &caps_b)] {
        let h = (0..cfg.agent.seq_len).map(|p| positional_entropy(caps, p)).collect::<Result<Vec<_>>>()?;
        m.entropy.insert(c.into(), h);
    }

    for (own, other) in [('A', 'B'), ('B', 'A')] {
        let key = own.to_string();
        m.bias_delta.insert(key.clone(), undefined_as_none(bias_delta(trdm_of(own), vrdm_of(own), vrdm_of(other)))?);
        if ev.kendall {
            let t = trdm_of(own);
            let (vo, vx) = (vrdm_of(own), vrdm_of(other));
            let k = match (kendall_taub_partial(t, vo, vx), kendall_taub_partial(t, vx, vo)) {
                (Ok(p), Ok(q)) => Ok(p - q),
                (Err(e), _) | (_, Err(e)) => Err(e),
            };
            m.kendall_bias_delta.insert(key, undefined_as_none(k)?);
        }
    }

    m.shared = shared_stats(cfg, world, &caps_a, &caps_b, seed, epoch)?;

    if let Some(dc) = &cfg.diagnostics {
        m.consistency.push(consistency_point(a, "A", epoch, &world.val_a, dc, seed)?);
        m.consistency.push(consistency_point(b, "B", epoch, &world.val_b, dc, seed)?);
    }
    Ok(m)
}

fn shared_stats(
    cfg: &ExperimentConfig,
    world: &World,
    caps_a: &[TokenSequence],
    caps_b: &[TokenSequence],
    seed: u64,
    epoch: usize,
) -> Result<SharedStats> {
    let shared = shared_sequences(caps_a, caps_b, cfg.eval.min_support)?;
    let mut st = SharedStats { n_shared: shared.len(), ..SharedStats::default() };
    st.covered_images = shared.iter().map(|s| s.size).sum();
    if shared.is_empty() {
        st.radius.insert("A".into(), None);
        st.radius.insert("B".into(), None);
        return Ok(st);
    }
    let n = shared.len() as f64;
    st.mean_size = Some(st.covered_images as f64 / n);
    let mut radii: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for (agent, feats, global) in [("A", &world.val_a, world.radius_a), ("B", &world.val_b, world.radius_b)] {
        let r = shared.iter().map(|s| visual_radius(s, feats, global)).collect::<Result<Vec<_>>>()?;
        st.radius.insert(agent.into(), Some(r.iter().sum::<f64>() / n));
        radii.insert(agent, r);
    }
    let labels: Vec<Vec<usize>> = world.dataset.val.iter().map(|it| it.labels.clone()).collect();
    let breadth = shared.iter().map(|s| category_breadth(s, &labels)).collect::<Result<Vec<_>>>()?;
    st.effective_categories = Some(breadth.iter().map(|b| b.0).sum::<f64>() / n);
    st.top_object_mass = Some(breadth.iter().map(|b| b.1).sum::<f64>() / n);
    let mut brng = rng::stream(seed, &[label::EVAL, epoch as u64, 99]);
    let boot = matched_size_bootstrap(&radii["A"], &radii["B"], cfg.eval.bootstrap_iters, &mut brng)?;
    st.radius_diff_ci95 = Some(boot.ci95);
    Ok(st)
}
