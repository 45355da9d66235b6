use std::collections::{BTreeMap, HashSet};

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agent::TokenSequence;
use crate::error::{Error, Result};
use crate::linalg::{cosine, l2_normalize};

/// Entropy in bits of the empirical token distribution at `position`.
pub fn positional_entropy(seqs: &[TokenSequence], position: usize) -> Result<f64> {
    if seqs.is_empty() {
        return Ok(0.0);
    }
    let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
    for s in seqs {
        let t = *s.0.get(position).ok_or_else(|| Error::Contract(format!("position {position} out of range")))?;
        *counts.entry(t).or_default() += 1;
    }
    let n = seqs.len() as f64;
    Ok(counts.values().map(|&c| {
        let p = c as f64 / n;
        -p * p.log2()
    }).sum::<f64>().max(0.0))
}

pub fn diversity(seqs: &[TokenSequence]) -> usize {
    seqs.iter().collect::<HashSet<_>>().len()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SharedSequence {
    pub seq: TokenSequence,
    /// Indices into the caption lists, ascending.
    pub image_ids: Vec<usize>,
    pub size: usize,
}

/// Sequences both agents assign to the same images, at least `min_support` times.
/// Output is ordered by decreasing size, then by sequence.
pub fn shared_sequences(caps_a: &[TokenSequence], caps_b: &[TokenSequence], min_support: usize) -> Result<Vec<SharedSequence>> {
    if caps_a.len() != caps_b.len() {
        return Err(Error::Contract("caption lists differ in length".into()));
    }
    let mut groups: BTreeMap<&TokenSequence, Vec<usize>> = BTreeMap::new();
    for (i, (a, b)) in caps_a.iter().zip(caps_b).enumerate() {
        if a == b {
            groups.entry(a).or_default().push(i);
        }
    }
    let mut out: Vec<SharedSequence> = groups
        .into_iter()
        .filter(|(_, ids)| ids.len() >= min_support.max(1))
        .map(|(s, ids)| SharedSequence { seq: s.clone(), size: ids.len(), image_ids: ids })
        .collect();
    out.sort_by(|x, y| y.size.cmp(&x.size).then(x.seq.cmp(&y.seq)));
    Ok(out)
}

fn radius_of<F: AsRef<[f64]>>(feats: &[F], ids: impl Iterator<Item = usize> + Clone) -> f64 {
    let normed: Vec<Vec<f64>> = ids.map(|i| l2_normalize(feats[i].as_ref())).collect();
    if normed.is_empty() {
        return 0.0;
    }
    let d = normed[0].len();
    let mut centroid = vec![0.0; d];
    for v in &normed {
        for k in 0..d {
            centroid[k] += v[k] / normed.len() as f64;
        }
    }
    normed.iter().map(|v| 1.0 - cosine(v, &centroid)).sum::<f64>() / normed.len() as f64
}

/// Mean cosine distance of all features to their (normalized-feature) centroid.
pub fn global_radius<F: AsRef<[f64]>>(feats: &[F]) -> f64 {
    radius_of(feats, 0..feats.len())
}

/// Radius of the images in `shared`, relative to `global`.
pub fn visual_radius<F: AsRef<[f64]>>(shared: &SharedSequence, feats: &[F], global: f64) -> Result<f64> {
    if shared.image_ids.iter().any(|&i| i >= feats.len()) {
        return Err(Error::Contract("shared sequence refers to an image outside the feature list".into()));
    }
    if !(global > 0.0) {
        return Err(Error::Undefined(format!("global radius {global} is not positive")));
    }
    Ok(radius_of(feats, shared.image_ids.iter().copied()) / global)
}

/// (exp of the natural-log entropy, largest mass) of the category-presence
/// distribution over the shared sequence's images.
pub fn category_breadth(shared: &SharedSequence, labels: &[Vec<usize>]) -> Result<(f64, f64)> {
    let mut counts: BTreeMap<usize, f64> = BTreeMap::new();
    for &i in &shared.image_ids {
        let l = labels.get(i).ok_or_else(|| Error::Contract(format!("no labels for image {i}")))?;
        for &c in l {
            *counts.entry(c).or_default() += 1.0;
        }
    }
    let total: f64 = counts.values().sum();
    if total == 0.0 {
        return Err(Error::Undefined("shared sequence has no labelled images".into()));
    }
    let h: f64 = counts.values().map(|c| {
        let p = c / total;
        -p * p.ln()
    }).sum();
    let top = counts.values().cloned().fold(0.0, f64::max) / total;
    Ok((h.exp(), top))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub k: usize,
    pub mean_a: f64,
    pub mean_b: f64,
    pub mean_diff: f64,
    pub ci95: (f64, f64),
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Subsample the larger list to the smaller list's size without replacement,
/// `iters` times; report matched means and a percentile 95% CI of mean(a) − mean(b).
pub fn matched_size_bootstrap<R: Rng + ?Sized>(a: &[f64], b: &[f64], iters: usize, rng: &mut R) -> Result<BootstrapResult> {
    if a.is_empty() || b.is_empty() || iters == 0 {
        return Err(Error::Contract("bootstrap needs non-empty lists and iters >= 1".into()));
    }
    let k = a.len().min(b.len());
    let sub_mean = |x: &[f64], rng: &mut R| -> f64 {
        if x.len() == k {
            x.iter().sum::<f64>() / k as f64
        } else {
            index::sample(rng, x.len(), k).into_iter().map(|i| x[i]).sum::<f64>() / k as f64
        }
    };
    let (mut sa, mut sb) = (0.0, 0.0);
    let mut diffs = Vec::with_capacity(iters);
    for _ in 0..iters {
        let ma = sub_mean(a, rng);
        let mb = sub_mean(b, rng);
        sa += ma;
        sb += mb;
        diffs.push(ma - mb);
    }
    diffs.sort_by(f64::total_cmp);
    let n = iters as f64;
    Ok(BootstrapResult {
        k,
        mean_a: sa / n,
        mean_b: sb / n,
        mean_diff: diffs.iter().sum::<f64>() / n,
        ci95: (percentile(&diffs, 0.025), percentile(&diffs, 0.975)),
    })
}
