use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, l2_normalize};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub i2t: f64,
    pub t2i: f64,
}

/// Fraction of a query's credit: 1 if the true item strictly wins, 1/m if it
/// ties with m-1 distractors at the top, 0 otherwise.
fn credit(query: &[f64], truth: &[f64], distractors: impl Iterator<Item = f64>) -> f64 {
    let s_true = dot(query, truth);
    let mut tied = 1usize;
    for s in distractors {
        if s > s_true {
            return 0.0;
        }
        if s == s_true {
            tied += 1;
        }
    }
    1.0 / tied as f64
}

/// Top-1 accuracy with the true item plus `k - 1` distractors drawn without
/// replacement, averaged over queries and over `candidate_seeds`.
pub fn retrieval_top1<T: AsRef<[f64]>, I: AsRef<[f64]>>(
    text_embs: &[T],
    img_embs: &[I],
    k: usize,
    candidate_seeds: std::ops::Range<u64>,
) -> Result<RetrievalResult> {
    let n = text_embs.len();
    if n != img_embs.len() {
        return Err(Error::Contract(format!("{n} text embeddings vs {} image embeddings", img_embs.len())));
    }
    if n < 2 || k < 2 || candidate_seeds.is_empty() {
        return Err(Error::Contract("retrieval needs n >= 2, k >= 2 and at least one seed".into()));
    }
    let t: Vec<Vec<f64>> = text_embs.iter().map(|e| l2_normalize(e.as_ref())).collect();
    let v: Vec<Vec<f64>> = img_embs.iter().map(|e| l2_normalize(e.as_ref())).collect();
    let n_distract = (k - 1).min(n - 1);
    let (mut i2t, mut t2i) = (0.0, 0.0);
    let n_seeds = candidate_seeds.end - candidate_seeds.start;
    for seed in candidate_seeds {
        for q in 0..n {
            for (mode, acc) in [(0u64, &mut i2t), (1u64, &mut t2i)] {
                let mut r = rng::stream(seed, &[mode, q as u64]);
                let others: Vec<usize> = index::sample(&mut r, n - 1, n_distract)
                    .into_iter()
                    .map(|j| if j >= q { j + 1 } else { j })
                    .collect();
                *acc += if mode == 0 {
                    credit(&v[q], &t[q], others.iter().map(|&j| dot(&v[q], &t[j])))
                } else {
                    credit(&t[q], &v[q], others.iter().map(|&j| dot(&t[q], &v[j])))
                };
            }
        }
    }
    let denom = (n as u64 * n_seeds) as f64;
    Ok(RetrievalResult { i2t: i2t / denom, t2i: t2i / denom })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn perfect_pairing_is_perfect() {
        let e: Vec<Vec<f64>> = (0..20).map(|i| {
            let mut v = vec![0.0; 20];
            v[i] = 1.0;
            v
        }).collect();
        let r = retrieval_top1(&e, &e, 10, 0..3).unwrap();
        assert_eq!(r.i2t, 1.0);
        assert_eq!(r.t2i, 1.0);
    }

    #[test]
    fn random_embeddings_are_at_chance() {
        let mut rng = rng::stream(11, &[]);
        let mut g = |n: usize| -> Vec<Vec<f64>> { (0..n).map(|_| (0..8).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()).collect() };
        let (t, v) = (g(500), g(500));
        let r = retrieval_top1(&t, &v, 10, 0..1).unwrap();
        let sigma = (0.1 * 0.9 / 500.0f64).sqrt();
        assert!((r.i2t - 0.1).abs() < 3.0 * sigma, "{}", r.i2t);
        assert!((r.t2i - 0.1).abs() < 3.0 * sigma, "{}", r.t2i);
    }

    #[test]
    fn five_item_hand_case_matches_exhaustive_oracle() {
        // K = n: every other item is a distractor, so the candidate draw is irrelevant.
        let t = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0], vec![-1.0, 0.2], vec![0.3, -1.0]];
        let v = vec![vec![1.0, 0.1], vec![1.0, 0.0], vec![0.5, 0.5], vec![-1.0, 0.0], vec![0.0, -1.0]];
        let r = retrieval_top1(&t, &v, 5, 0..1).unwrap();
        let nt: Vec<Vec<f64>> = t.iter().map(|e| l2_normalize(e)).collect();
        let nv: Vec<Vec<f64>> = v.iter().map(|e| l2_normalize(e)).collect();
        let score = |a: &[f64], b: &[f64]| a[0] * b[0] + a[1] * b[1];
        let mut i2t = 0.0;
        let mut t2i = 0.0;
        for q in 0..5 {
            let s: Vec<f64> = (0..5).map(|j| score(&nv[q], &nt[j])).collect();
            if (0..5).all(|j| j == q || s[j] < s[q]) {
                i2t += 1.0;
            }
            let s: Vec<f64> = (0..5).map(|j| score(&nt[q], &nv[j])).collect();
            if (0..5).all(|j| j == q || s[j] < s[q]) {
                t2i += 1.0;
            }
        }
        assert!((r.i2t - i2t / 5.0).abs() < 1e-15);
        assert!((r.t2i - t2i / 5.0).abs() < 1e-15);
    }

    #[test]
    fn ties_get_fractional_credit() {
        let t = vec![vec![1.0, 0.0], vec![1.0, 0.0]];
        let v = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let r = retrieval_top1(&t, &v, 2, 0..1).unwrap();
        // i2t: image 0 ties between both texts (0.5); image 1 scores 0 with both texts (0.5)
        assert_eq!(r.i2t, 0.5);
        // t2i: text 0 prefers image 0 (1); text 1 prefers image 0 (0)
        assert_eq!(r.t2i, 0.5);
    }
}
