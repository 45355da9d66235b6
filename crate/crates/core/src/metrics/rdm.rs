use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::agent::TokenSequence;
use crate::linalg::cosine;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RdmKind {
    HammingText,
    CosineVision,
}

/// Upper-triangle (row-major, i < j) pairwise dissimilarities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rdm {
    pub n: usize,
    pub kind: RdmKind,
    pub condensed: Vec<f64>,
}

impl Deref for Rdm {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.condensed
    }
}

impl Rdm {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i == j {
            0.0
        } else {
            self.condensed[condensed_index(self.n, i.min(j), i.max(j))]
        }
    }
}

/// Position of pair `(i, j)`, `i < j`, in the condensed vector.
pub fn condensed_index(n: usize, i: usize, j: usize) -> usize {
    debug_assert!(i < j && j < n);
    n * i - i * (i + 1) / 2 + (j - i - 1)
}

fn build(n: usize, kind: RdmKind, d: impl Fn(usize, usize) -> f64) -> Rdm {
    let mut condensed = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            condensed.push(d(i, j));
        }
    }
    Rdm { n, kind, condensed }
}

/// Normalized Hamming distances; positions beyond the shorter sequence count as mismatches.
pub fn text_rdm(seqs: &[TokenSequence]) -> Rdm {
    build(seqs.len(), RdmKind::HammingText, |i, j| {
        let (a, b) = (&seqs[i].0, &seqs[j].0);
        let len = a.len().max(b.len());
        if len == 0 {
            return 0.0;
        }
        let same = a.iter().zip(b).filter(|(x, y)| x == y).count();
        (len - same) as f64 / len as f64
    })
}

/// Cosine-distance RDM.
pub fn vision_rdm<F: AsRef<[f64]>>(feats: &[F]) -> Rdm {
    build(feats.len(), RdmKind::CosineVision, |i, j| 1.0 - cosine(feats[i].as_ref(), feats[j].as_ref()))
}
