//! Self-consistency diagnostic: compare the decoder's distribution over a
//! finite caption set with the posterior proxy implied by the density heads.

use std::collections::HashSet;
use std::fmt::Write as _;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{log_density, AgentParams, DecodeMode, Modality, TokenSequence};
use crate::error::{Error, Result};
use crate::linalg::{argmax, softmax};
use crate::metrics::spearman;
use crate::rng;
use crate::synthworld::VisualFeature;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    Greedy,
    Sampled,
    Negative,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub image: usize,
    pub candidates: Vec<TokenSequence>,
    pub provenance: Vec<Provenance>,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    fn push(&mut self, seen: &mut HashSet<TokenSequence>, seq: TokenSequence, p: Provenance) {
        if seen.insert(seq.clone()) {
            self.candidates.push(seq);
            self.provenance.push(p);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticConfig {
    pub n_samples: usize,
    pub n_negatives: usize,
    pub n_images: usize,
    pub temperature: f64,
}

impl Default for DiagnosticConfig {
    fn default() -> Self {
        Self { n_samples: 8, n_negatives: 16, n_images: 128, temperature: 1.0 }
    }
}

/// Greedy caption and `n_samples` decoder samples for `image`, then
/// `n_negatives` captions from other images' pools (a uniformly chosen other
/// image, then a uniformly chosen slot of its greedy-plus-samples pool).
/// Duplicates are dropped, keeping the first provenance.
pub fn build_candidates<R: Rng + ?Sized>(
    agent: &AgentParams,
    feats: &[VisualFeature],
    image: usize,
    cfg: &DiagnosticConfig,
    rng: &mut R,
) -> Result<CandidateSet> {
    if image >= feats.len() {
        return Err(Error::Contract(format!("image {image} out of range ({} features)", feats.len())));
    }
    let sample = DecodeMode::Sample { temperature: cfg.temperature, top_k: 0 };
    let mut set = CandidateSet { image, candidates: Vec::new(), provenance: Vec::new() };
    let mut seen = HashSet::new();
    set.push(&mut seen, agent.decode(&feats[image], DecodeMode::Greedy, rng)?, Provenance::Greedy);
    for _ in 0..cfg.n_samples {
        set.push(&mut seen, agent.decode(&feats[image], sample, rng)?, Provenance::Sampled);
    }
    if feats.len() > 1 {
        for _ in 0..cfg.n_negatives {
            let mut j = rng.random_range(0..feats.len() - 1);
            if j >= image {
                j += 1;
            }
            let slot = rng.random_range(0..=cfg.n_samples);
            let mode = if slot == 0 { DecodeMode::Greedy } else { sample };
            set.push(&mut seen, agent.decode(&feats[j], mode, rng)?, Provenance::Negative);
        }
    }
    Ok(set)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub n_candidates: usize,
    pub jsd: f64,
    /// `None` with fewer than two candidates.
    pub spearman: Option<f64>,
    pub top1_agree: bool,
    pub rank_percentile: Option<f64>,
}

/// Jensen–Shannon divergence in nats.
pub fn jsd(p: &[f64], q: &[f64]) -> f64 {
    let kl = |a: &[f64], m: &[f64]| -> f64 {
        a.iter().zip(m).filter(|(x, _)| **x > 0.0).map(|(x, y)| x * (x / y).ln()).sum()
    };
    let m: Vec<f64> = p.iter().zip(q).map(|(a, b)| 0.5 * (a + b)).collect();
    (0.5 * kl(p, &m) + 0.5 * kl(q, &m)).clamp(0.0, std::f64::consts::LN_2)
}

/// Compare decoder log-scores with encoder-side log-scores over the same candidates.
pub fn compare_scores(dec: &[f64], enc: &[f64]) -> Result<ConsistencyReport> {
    if dec.len() != enc.len() || dec.is_empty() {
        return Err(Error::Contract("score vectors must be non-empty and aligned".into()));
    }
    if dec.iter().chain(enc).any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("self-consistency scores are non-finite".into()));
    }
    let n = dec.len();
    let q = softmax(dec);
    let p = softmax(enc);
    let best_q = argmax(&q);
    let best_p = argmax(&p);
    let (spearman, rank_percentile) = if n >= 2 {
        let better = p.iter().filter(|&&x| x > p[best_q]).count();
        (Some(spearman(dec, enc)?), Some(better as f64 / (n - 1) as f64))
    } else {
        (None, None)
    };
    Ok(ConsistencyReport { n_candidates: n, jsd: jsd(&q, &p), spearman, top1_agree: best_q == best_p, rank_percentile })
}

/// Decoder teacher-forced scores versus text-density scores at the vision
/// density's location (no sampling).
pub fn self_consistency(agent: &AgentParams, feat: &[f64], cands: &CandidateSet) -> Result<ConsistencyReport> {
    let loc = agent.density_params(Modality::Vision, &agent.vis_project(feat)?).loc;
    let mut dec = Vec::with_capacity(cands.len());
    let mut enc = Vec::with_capacity(cands.len());
    for c in &cands.candidates {
        dec.push(agent.decoder_log_prob(feat, c)?);
        enc.push(log_density(&agent.density_params(Modality::Text, &agent.text_encode(c)), &loc));
    }
    compare_scores(&dec, &enc)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub epoch: usize,
    pub agent: String,
    pub mean_jsd: f64,
    pub mean_spearman: f64,
    pub top1_rate: f64,
    pub mean_rank_percentile: f64,
    pub n_images: usize,
}

/// Mean report over a fixed random subset of images for one agent checkpoint.
pub fn consistency_point(
    agent: &AgentParams,
    name: &str,
    epoch: usize,
    feats: &[VisualFeature],
    cfg: &DiagnosticConfig,
    seed: u64,
) -> Result<CurvePoint> {
    if feats.is_empty() {
        return Err(Error::Contract("no images for the self-consistency diagnostic".into()));
    }
    let n = cfg.n_images.min(feats.len());
    let mut pick = rng::stream(seed, &[rng::label::DIAGNOSTIC]);
    let mut images = index::sample(&mut pick, feats.len(), n).into_vec();
    images.sort_unstable();
    let (mut jsd_sum, mut sp_sum, mut top1, mut rank_sum, mut n_rank) = (0.0, 0.0, 0usize, 0.0, 0usize);
    for &i in &images {
        let mut r = rng::stream(seed, &[rng::label::DIAGNOSTIC, epoch as u64, i as u64]);
        let cands = build_candidates(agent, feats, i, cfg, &mut r)?;
        let rep = self_consistency(agent, &feats[i], &cands)?;
        jsd_sum += rep.jsd;
        if rep.top1_agree {
            top1 += 1;
        }
        if let (Some(s), Some(rp)) = (rep.spearman, rep.rank_percentile) {
            sp_sum += s;
            rank_sum += rp;
            n_rank += 1;
        }
    }
    let nf = n as f64;
    let nr = n_rank.max(1) as f64;
    Ok(CurvePoint {
        epoch,
        agent: name.to_string(),
        mean_jsd: jsd_sum / nf,
        mean_spearman: sp_sum / nr,
        top1_rate: top1 as f64 / nf,
        mean_rank_percentile: rank_sum / nr,
        n_images: n,
    })
}

/// One point per (checkpoint, agent). The image subset is the same at every epoch.
pub fn consistency_curve(
    checkpoints: &[(usize, AgentParams, AgentParams)],
    feats: (&[VisualFeature], &[VisualFeature]),
    cfg: &DiagnosticConfig,
    seed: u64,
) -> Result<Vec<CurvePoint>> {
    let mut out = Vec::new();
    for (epoch, a, b) in checkpoints {
        out.push(consistency_point(a, "A", *epoch, feats.0, cfg, seed)?);
        out.push(consistency_point(b, "B", *epoch, feats.1, cfg, seed)?);
    }
    Ok(out)
}

pub fn curve_to_csv(points: &[CurvePoint]) -> String {
    let mut s = String::from("epoch,agent,mean_jsd,mean_spearman,top1_rate,mean_rank_percentile\n");
    for p in points {
        let _ = writeln!(
            s,
            "{},{},{:?},{:?},{:?},{:?}",
            p.epoch, p.agent, p.mean_jsd, p.mean_spearman, p.top1_rate, p.mean_rank_percentile
        );
    }
    s
}
