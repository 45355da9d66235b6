use log::warn;
use nalgebra::{DMatrix, SVD};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agent::TokenSequence;
use crate::error::{Error, Result};

pub const PROBE_EPSILON: f64 = 1e-8;
const MAX_PCS: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProbePositions {
    All,
    Singleton(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub delta_r2_vw: f64,
    pub per_pc_r2: Vec<f64>,
    pub per_pc_r2_perm: Vec<f64>,
    pub weights: Vec<f64>,
    pub n_pcs: usize,
    pub n_perms: usize,
}

struct Pca {
    mean: Vec<f64>,
    components: DMatrix<f64>,
    weights: Vec<f64>,
}

fn to_matrix<F: AsRef<[f64]>>(rows: &[F]) -> DMatrix<f64> {
    let d = rows.first().map_or(0, |r| r.as_ref().len());
    DMatrix::from_fn(rows.len(), d, |i, j| rows[i].as_ref()[j])
}

fn fit_pca(x: &DMatrix<f64>) -> Result<Pca> {
    let (n, d) = x.shape();
    let mean: Vec<f64> = (0..d).map(|j| x.column(j).sum() / n as f64).collect();
    let mut c = x.clone();
    for j in 0..d {
        c.column_mut(j).add_scalar_mut(-mean[j]);
    }
    let svd = SVD::new(c, false, true);
    let v_t = svd.v_t.ok_or_else(|| Error::Undefined("SVD did not return right singular vectors".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let tol = smax * (n.max(d) as f64) * f64::EPSILON;
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    let k = rank.min(MAX_PCS);
    if k == 0 {
        return Err(Error::Undefined("visual features have zero variance; no principal components".into()));
    }
    let kept = &order[..k];
    let components = DMatrix::from_fn(d, k, |r, c| v_t[(kept[c], r)]);
    let var: Vec<f64> = kept.iter().map(|&i| svd.singular_values[i].powi(2)).collect();
    let total: f64 = var.iter().sum();
    Ok(Pca { mean, components, weights: var.iter().map(|v| v / total).collect() })
}

fn project(pca: &Pca, x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut c = x.clone();
    for j in 0..c.ncols() {
        c.column_mut(j).add_scalar_mut(-pca.mean[j]);
    }
    c * &pca.components
}

fn design(tokens: &[&TokenSequence], vocab: usize, positions: ProbePositions) -> Result<DMatrix<f64>> {
    let l = tokens.first().map_or(0, |t| t.len());
    let cols: Vec<usize> = match positions {
        ProbePositions::All => (0..l).collect(),
        ProbePositions::Singleton(p) if p < l => vec![p],
        ProbePositions::Singleton(p) => return Err(Error::Contract(format!("probe position {p} >= sequence length {l}"))),
    };
    let mut x = DMatrix::zeros(tokens.len(), cols.len() * vocab);
    for (i, seq) in tokens.iter().enumerate() {
        if seq.len() != l {
            return Err(Error::Contract("probe token sequences differ in length".into()));
        }
        for (k, &pos) in cols.iter().enumerate() {
            let t = seq.0[pos] as usize;
            if t >= vocab {
                return Err(Error::Contract(format!("token {t} >= vocab {vocab}")));
            }
            x[(i, k * vocab + t)] = 1.0;
        }
    }
    Ok(x)
}

/// Least squares with Tikhonov damping; damping grows tenfold until Cholesky succeeds.
fn solve(x: &DMatrix<f64>, y: &DMatrix<f64>, eps: f64) -> Result<DMatrix<f64>> {
    let xtx = x.transpose() * x;
    let xty = x.transpose() * y;
    let p = xtx.nrows();
    let mut e = eps;
    for _ in 0..12 {
        let a = &xtx + DMatrix::identity(p, p) * e;
        if let Some(ch) = a.cholesky() {
            return Ok(ch.solve(&xty));
        }
        warn!("probe normal equations not positive definite at eps={e:e}; increasing damping");
        e *= 10.0;
    }
    Err(Error::Undefined("probe normal equations could not be factorized".into()))
}

fn val_r2(pred: &DMatrix<f64>, truth: &DMatrix<f64>) -> Vec<f64> {
    (0..truth.ncols())
        .map(|j| {
            let col = truth.column(j);
            let mean = col.sum() / col.len() as f64;
            let ss_tot: f64 = col.iter().map(|v| (v - mean).powi(2)).sum();
            let ss_res: f64 = col.iter().zip(pred.column(j).iter()).map(|(t, p)| (t - p).powi(2)).sum();
            if ss_tot > 0.0 {
                1.0 - ss_res / ss_tot
            } else {
                0.0
            }
        })
        .collect()
}

/// Permutation-corrected, explained-variance-weighted validation R² of a
/// linear one-hot probe from token sequences to the top principal components
/// of visual features. PCA and the probe are fit on the training rows.
pub fn delta_r2<F: AsRef<[f64]>, R: Rng + ?Sized>(
    tokens_train: &[TokenSequence],
    feats_train: &[F],
    tokens_val: &[TokenSequence],
    feats_val: &[F],
    vocab: usize,
    positions: ProbePositions,
    n_perms: usize,
    rng: &mut R,
) -> Result<ProbeResult> {
    if tokens_train.len() != feats_train.len() || tokens_val.len() != feats_val.len() {
        return Err(Error::Contract("probe tokens and features are not aligned".into()));
    }
    if tokens_train.len() < 2 || tokens_val.is_empty() {
        return Err(Error::Contract("probe needs at least two train rows and one val row".into()));
    }
    let xf = to_matrix(feats_train);
    let pca = fit_pca(&xf)?;
    let y_train = project(&pca, &xf);
    let y_val = project(&pca, &to_matrix(feats_val));

    let val_refs: Vec<&TokenSequence> = tokens_val.iter().collect();
    let x_val = design(&val_refs, vocab, positions)?;
    let mut eps = PROBE_EPSILON;
    if tokens_train.len() < x_val.ncols() {
        eps = 1e-4;
        warn!(
            "probe has {} rows for {} token columns; raising damping to {eps:e}",
            tokens_train.len(),
            x_val.ncols()
        );
    }
    let fit = |rows: &[&TokenSequence]| -> Result<Vec<f64>> {
        let x = design(rows, vocab, positions)?;
        let beta = solve(&x, &y_train, eps)?;
        Ok(val_r2(&(&x_val * beta), &y_val))
    };
    let train_refs: Vec<&TokenSequence> = tokens_train.iter().collect();
    let real = fit(&train_refs)?;
    let k = real.len();
    let mut perm = vec![0.0; k];
    for _ in 0..n_perms {
        let mut shuffled = train_refs.clone();
        shuffled.shuffle(rng);
        for (acc, r) in perm.iter_mut().zip(fit(&shuffled)?) {
            *acc += r / n_perms as f64;
        }
    }
    let delta_r2_vw = (0..k).map(|j| pca.weights[j] * (real[j] - perm[j])).sum();
    Ok(ProbeResult { delta_r2_vw, per_pc_r2: real, per_pc_r2_perm: perm, weights: pca.weights, n_pcs: k, n_perms })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand_distr::StandardNormal;

    fn feats(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut r = rng::stream(seed, &[]);
        (0..n).map(|_| (0..d).map(|_| r.sample::<f64, _>(StandardNormal)).collect()).collect()
    }

    fn random_tokens(n: usize, seed: u64) -> Vec<TokenSequence> {
        let mut r = rng::stream(seed, &[1]);
        (0..n).map(|_| TokenSequence((0..3).map(|_| r.random_range(0..5)).collect())).collect()
    }

    #[test]
    fn independent_tokens_score_near_zero() {
        let (ft, fv) = (feats(400, 8, 1), feats(300, 8, 2));
        let mut total = 0.0;
        for trial in 0..10 {
            let res = delta_r2(
                &random_tokens(400, 10 + trial),
                &ft,
                &random_tokens(300, 100 + trial),
                &fv,
                5,
                ProbePositions::All,
                5,
                &mut rng::stream(trial, &[]),
            )
            .unwrap();
            assert_eq!(res.n_pcs, 8);
            assert!((res.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            total += res.delta_r2_vw;
        }
        assert!((total / 10.0).abs() < 0.02, "{}", total / 10.0);
    }

    #[test]
    fn quantile_tokens_are_predictive() {
        // token 0 at position 0 encodes the quartile of the dominant feature direction
        let mk = |n: usize, seed: u64| {
            let f: Vec<Vec<f64>> = feats(n, 4, seed).into_iter().map(|mut v| {
                v[0] *= 4.0;
                v
            }).collect();
            let t: Vec<TokenSequence> = f
                .iter()
                .map(|v| {
                    let q = if v[0] < -2.7 { 0 } else if v[0] < 0.0 { 1 } else if v[0] < 2.7 { 2 } else { 3 };
                    TokenSequence(vec![q, 0])
                })
                .collect();
            (f, t)
        };
        let (ft, tt) = mk(500, 3);
        let (fv, tv) = mk(300, 4);
        let res = delta_r2(&tt, &ft, &tv, &fv, 4, ProbePositions::All, 5, &mut rng::stream(0, &[])).unwrap();
        assert!(res.delta_r2_vw > 0.3, "{}", res.delta_r2_vw);
        let single = delta_r2(&tt, &ft, &tv, &fv, 4, ProbePositions::Singleton(1), 5, &mut rng::stream(0, &[])).unwrap();
        assert!(single.delta_r2_vw.abs() < 1e-9);
    }

    #[test]
    fn too_few_rows_still_solves() {
        let ft = feats(6, 3, 5);
        let tt = random_tokens(6, 5);
        let res = delta_r2(&tt, &ft, &tt, &ft, 5, ProbePositions::All, 2, &mut rng::stream(0, &[])).unwrap();
        assert!(res.delta_r2_vw.is_finite());
    }

    #[test]
    fn pc_count_capped_by_rank() {
        let base = feats(50, 2, 6);
        // rank-2 features embedded in 5 dims
        let ft: Vec<Vec<f64>> = base.iter().map(|v| vec![v[0], v[1], v[0] + v[1], 0.0, 2.0 * v[0]]).collect();
        let tt = random_tokens(50, 6);
        let res = delta_r2(&tt, &ft, &tt, &ft, 5, ProbePositions::All, 1, &mut rng::stream(0, &[])).unwrap();
        assert_eq!(res.n_pcs, 2);
    }
}
