//! Synthetic world: multi-label items with latent vectors, and pairs of frozen
//! random encoders whose representational similarity is set by one scalar.

use std::fmt::Write as _;
use std::ops::Deref;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};
use crate::metrics::{spearman, vision_rdm};
use crate::rng::{self, Stream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub n_train: usize,
    pub n_val: usize,
    pub latent_dim: usize,
    pub n_categories: usize,
    pub max_labels_per_item: usize,
    pub category_scale: f64,
    pub noise_scale: f64,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            n_train: 1000,
            n_val: 500,
            latent_dim: 16,
            n_categories: 20,
            max_labels_per_item: 3,
            category_scale: 1.0,
            noise_scale: 0.3,
            seed: 0,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_train", self.n_train),
            ("n_val", self.n_val),
            ("latent_dim", self.latent_dim),
            ("n_categories", self.n_categories),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("world.{name} must be >= 1")));
            }
        }
        if self.max_labels_per_item == 0 || self.max_labels_per_item > self.n_categories {
            return Err(Error::Config(format!(
                "world.max_labels_per_item must lie in [1, {}], got {}",
                self.n_categories, self.max_labels_per_item
            )));
        }
        if !(self.category_scale >= 0.0 && self.category_scale.is_finite()) {
            return Err(Error::Config("world.category_scale must be a finite value >= 0".into()));
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return Err(Error::Config("world.noise_scale must be a finite value >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldItem {
    pub id: usize,
    pub latent: Vec<f64>,
    /// Sorted, non-empty category indices.
    pub labels: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub train: Vec<WorldItem>,
    pub val: Vec<WorldItem>,
    pub n_categories: usize,
}

impl Dataset {
    pub fn latent_dim(&self) -> usize {
        self.train.first().or(self.val.first()).map_or(0, |it| it.latent.len())
    }

    pub fn is_val_id(&self, id: usize) -> bool {
        self.val.iter().any(|it| it.id == id)
    }
}

/// An agent's private encoding of a view of an item.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VisualFeature(pub Vec<f64>);

impl Deref for VisualFeature {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl AsRef<[f64]> for VisualFeature {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Nonlinearity {
    Tanh,
    Identity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticEncoder {
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub nonlinearity: Nonlinearity,
}

impl SyntheticEncoder {
    pub fn feat_dim(&self) -> usize {
        self.weight.rows
    }

    pub fn latent_dim(&self) -> usize {
        self.weight.cols
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderPairSpec {
    /// 1 gives identical encoders (for equal dims), 0 independent ones.
    pub mix: f64,
    pub feat_dim_a: usize,
    pub feat_dim_b: usize,
    /// Power-law decay of the latent-side spectrum of each random encoder.
    /// Larger values make each encoder attend to fewer latent directions.
    pub spectral_decay: f64,
    pub bias_scale: f64,
    pub seed: u64,
}

impl Default for EncoderPairSpec {
    fn default() -> Self {
        Self { mix: 1.0, feat_dim_a: 32, feat_dim_b: 32, spectral_decay: 3.0, bias_scale: 0.1, seed: 0 }
    }
}

impl EncoderPairSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.mix) {
            return Err(Error::Config(format!("encoder.mix must lie in [0, 1], got {}", self.mix)));
        }
        if self.feat_dim_a < 2 || self.feat_dim_b < 2 {
            return Err(Error::Config("encoder feature dims must be >= 2".into()));
        }
        if !(self.spectral_decay >= 0.0 && self.bias_scale >= 0.0) {
            return Err(Error::Config("encoder.spectral_decay and bias_scale must be >= 0".into()));
        }
        Ok(())
    }
}

/// Zipf(1) sampling of `count` distinct categories.
fn sample_labels<R: Rng + ?Sized>(n_categories: usize, max_labels: usize, rng: &mut R) -> Vec<usize> {
    let count = rng.random_range(1..=max_labels);
    let mut weights: Vec<f64> = (0..n_categories).map(|c| 1.0 / (c as f64 + 1.0)).collect();
    let mut labels = Vec::with_capacity(count);
    for _ in 0..count {
        let total: f64 = weights.iter().sum();
        let mut u = rng.random::<f64>() * total;
        let mut pick = n_categories - 1;
        for (c, &w) in weights.iter().enumerate() {
            if w > 0.0 && u < w {
                pick = c;
                break;
            }
            u -= w;
        }
        // Floating-point leftovers must not select an already-used category.
        if weights[pick] == 0.0 {
            pick = (0..n_categories).rev().find(|&c| weights[c] > 0.0).expect("count <= n_categories");
        }
        weights[pick] = 0.0;
        labels.push(pick);
    }
    labels.sort_unstable();
    labels
}

pub fn generate_dataset(cfg: &WorldConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = rng::stream(cfg.seed, &[rng::label::WORLD]);
    let mut categories = Matrix::randn(cfg.n_categories, cfg.latent_dim, 1.0, &mut rng);
    for c in 0..cfg.n_categories {
        let row = categories.row_mut(c);
        let n = dot(row, row).sqrt().max(f64::MIN_POSITIVE);
        row.iter_mut().for_each(|x| *x /= n);
    }
    let make_item = |id: usize, rng: &mut Stream| {
        let labels = sample_labels(cfg.n_categories, cfg.max_labels_per_item, rng);
        let mut latent = vec![0.0; cfg.latent_dim];
        for &c in &labels {
            for (l, e) in latent.iter_mut().zip(categories.row(c)) {
                *l += cfg.category_scale * e;
            }
        }
        for l in latent.iter_mut() {
            *l += cfg.noise_scale * rng.sample::<f64, _>(StandardNormal);
        }
        WorldItem { id, latent, labels }
    };
    let train = (0..cfg.n_train).map(|id| make_item(id, &mut rng)).collect();
    let val = (cfg.n_train..cfg.n_train + cfg.n_val).map(|id| make_item(id, &mut rng)).collect();
    Ok(Dataset { train, val, n_categories: cfg.n_categories })
}

/// Gaussian matrix whose latent-side spectrum decays as (k+1)^-decay along a
/// random orthonormal basis. Rows are normalized afterwards by the caller.
fn random_weight<R: Rng + ?Sized>(feat_dim: usize, latent_dim: usize, decay: f64, rng: &mut R) -> Matrix {
    let g = Matrix::randn(latent_dim, latent_dim, 1.0, rng);
    let q = DMatrix::from_row_slice(latent_dim, latent_dim, &g.data).qr().q();
    let gauss = Matrix::randn(feat_dim, latent_dim, 1.0, rng);
    let mut w = Matrix::zeros(feat_dim, latent_dim);
    for r in 0..feat_dim {
        for k in 0..latent_dim {
            let coef = gauss.get(r, k) * (k as f64 + 1.0).powf(-decay);
            if coef == 0.0 {
                continue;
            }
            // row += coef * q_k^T, where q_k is the k-th column of q
            for c in 0..latent_dim {
                w.data[r * latent_dim + c] += coef * q[(c, k)];
            }
        }
    }
    w
}

fn normalize_rows(m: &mut Matrix) {
    for r in 0..m.rows {
        let row = m.row_mut(r);
        let n = dot(row, row).sqrt();
        if n > 0.0 {
            row.iter_mut().for_each(|x| *x /= n);
        }
    }
}

fn resize_rows(m: &Matrix, rows: usize) -> Matrix {
    let mut out = Matrix::zeros(rows, m.cols);
    let keep = rows.min(m.rows);
    out.data[..keep * m.cols].copy_from_slice(&m.data[..keep * m.cols]);
    out
}

pub fn make_encoder_pair(spec: &EncoderPairSpec, latent_dim: usize) -> Result<(SyntheticEncoder, SyntheticEncoder)> {
    spec.validate()?;
    if latent_dim == 0 {
        return Err(Error::Config("latent_dim must be >= 1".into()));
    }
    let mut rng = rng::stream(spec.seed, &[rng::label::ENCODER]);
    let mut wa = random_weight(spec.feat_dim_a, latent_dim, spec.spectral_decay, &mut rng);
    normalize_rows(&mut wa);
    let ba: Vec<f64> = (0..spec.feat_dim_a)
        .map(|_| spec.bias_scale * rng.sample::<f64, _>(StandardNormal))
        .collect();

    let indep_w = random_weight(spec.feat_dim_b, latent_dim, spec.spectral_decay, &mut rng);
    let indep_b: Vec<f64> = (0..spec.feat_dim_b)
        .map(|_| spec.bias_scale * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let mut wb = resize_rows(&wa, spec.feat_dim_b);
    for r in 0..spec.feat_dim_b {
        // Normalize the independent draw row-wise first so both terms share a scale.
        let ir = indep_w.row(r);
        let inorm = dot(ir, ir).sqrt().max(f64::MIN_POSITIVE);
        for (x, y) in wb.row_mut(r).iter_mut().zip(ir) {
            *x = spec.mix * *x + (1.0 - spec.mix) * y / inorm;
        }
    }
    if spec.mix < 1.0 {
        normalize_rows(&mut wb);
    }
    let bb = (0..spec.feat_dim_b)
        .map(|r| spec.mix * ba.get(r).copied().unwrap_or(0.0) + (1.0 - spec.mix) * indep_b[r])
        .collect();

    let a = SyntheticEncoder { weight: wa, bias: ba, nonlinearity: Nonlinearity::Tanh };
    let b = SyntheticEncoder { weight: wb, bias: bb, nonlinearity: Nonlinearity::Tanh };
    Ok((a, b))
}

/// Encode a view of `item`. `aug_scale = 0` is the deterministic validation view.
pub fn encode_view<R: Rng + ?Sized>(
    enc: &SyntheticEncoder,
    item: &WorldItem,
    aug_scale: f64,
    rng: &mut R,
) -> Result<VisualFeature> {
    if item.latent.len() != enc.latent_dim() {
        return Err(Error::Contract(format!(
            "item {} has latent dim {} but encoder expects {}",
            item.id,
            item.latent.len(),
            enc.latent_dim()
        )));
    }
    if !(aug_scale >= 0.0) {
        return Err(Error::Contract("aug_scale must be >= 0".into()));
    }
    let input: Vec<f64> = if aug_scale > 0.0 {
        item.latent
            .iter()
            .map(|x| x + aug_scale * rng.sample::<f64, _>(StandardNormal))
            .collect()
    } else {
        item.latent.clone()
    };
    let mut feat = enc.weight.matvec(&input);
    for (f, b) in feat.iter_mut().zip(&enc.bias) {
        *f += b;
        if enc.nonlinearity == Nonlinearity::Tanh {
            *f = f.tanh();
        }
    }
    Ok(VisualFeature(feat))
}

/// Deterministic (validation-transform) features for a list of items.
pub fn encode_clean(enc: &SyntheticEncoder, items: &[WorldItem]) -> Result<Vec<VisualFeature>> {
    let mut unused = rng::stream(0, &[]);
    items.iter().map(|it| encode_view(enc, it, 0.0, &mut unused)).collect()
}

/// Spearman correlation of the two encoders' cosine RDMs over `items`.
pub fn vision_vision_rsa(a: &SyntheticEncoder, b: &SyntheticEncoder, items: &[WorldItem]) -> Result<f64> {
    let fa = encode_clean(a, items)?;
    let fb = encode_clean(b, items)?;
    spearman(&vision_rdm(&fa), &vision_rdm(&fb))
}

/// Bisection on `mix` so that the measured vision–vision RSA on `items` hits `target`.
/// Returns the calibrated spec and the RSA it achieves.
pub fn calibrate_mix(
    base: &EncoderPairSpec,
    latent_dim: usize,
    items: &[WorldItem],
    target: f64,
    tol: f64,
) -> Result<(EncoderPairSpec, f64)> {
    let measure = |mix: f64| -> Result<f64> {
        let spec = EncoderPairSpec { mix, ..base.clone() };
        let (a, b) = make_encoder_pair(&spec, latent_dim)?;
        vision_vision_rsa(&a, &b, items)
    };
    let (mut lo, mut hi) = (0.0, 1.0);
    let rsa_lo = measure(lo)?;
    if rsa_lo >= target {
        return Ok((EncoderPairSpec { mix: lo, ..base.clone() }, rsa_lo));
    }
    let rsa_hi = measure(hi)?;
    if rsa_hi <= target {
        return Ok((EncoderPairSpec { mix: hi, ..base.clone() }, rsa_hi));
    }
    let mut best = (hi, rsa_hi);
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        let r = measure(mid)?;
        if (r - target).abs() < (best.1 - target).abs() {
            best = (mid, r);
        }
        if (r - target).abs() <= tol {
            break;
        }
        if r < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((EncoderPairSpec { mix: best.0, ..base.clone() }, best.1))
}

const DATASET_MAGIC: &str = "mhcg-dataset";
const DATASET_VERSION: &str = "v1";

/// Tab-separated, versioned text export. Floats use Rust's shortest
/// round-trip representation so re-import is exact.
pub fn export_dataset(ds: &Dataset) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{DATASET_MAGIC}\t{DATASET_VERSION}");
    let _ = writeln!(out, "latent_dim\t{}", ds.latent_dim());
    let _ = writeln!(out, "n_categories\t{}", ds.n_categories);
    let _ = writeln!(out, "n_train\t{}", ds.train.len());
    let _ = writeln!(out, "n_val\t{}", ds.val.len());
    let _ = writeln!(out, "columns\tsplit\tid\tlabels\tlatent");
    for (split, items) in [("train", &ds.train), ("val", &ds.val)] {
        for it in items.iter() {
            let labels: Vec<String> = it.labels.iter().map(|l| l.to_string()).collect();
            let _ = write!(out, "{split}\t{}\t{}", it.id, labels.join(","));
            for x in &it.latent {
                let _ = write!(out, "\t{x:?}");
            }
            out.push('\n');
        }
    }
    out
}

pub fn import_dataset(text: &str) -> Result<Dataset> {
    let mut lines = text.lines();
    let perr = |m: String| Error::Parse(format!("dataset: {m}"));
    let head = lines.next().ok_or_else(|| perr("empty input".into()))?;
    if head != format!("{DATASET_MAGIC}\t{DATASET_VERSION}") {
        return Err(perr(format!("unsupported header {head:?}")));
    }
    let mut header_val = |key: &str| -> Result<usize> {
        let line = lines.next().ok_or_else(|| perr(format!("missing {key}")))?;
        let (k, v) = line.split_once('\t').ok_or_else(|| perr(format!("bad header line {line:?}")))?;
        if k != key {
            return Err(perr(format!("expected {key}, found {k}")));
        }
        v.parse().map_err(|_| perr(format!("bad value for {key}: {v:?}")))
    };
    let latent_dim = header_val("latent_dim")?;
    let n_categories = header_val("n_categories")?;
    let n_train = header_val("n_train")?;
    let n_val = header_val("n_val")?;
    match lines.next() {
        Some(l) if l.starts_with("columns\t") => {}
        other => return Err(perr(format!("expected columns line, found {other:?}"))),
    }
    let mut train = Vec::with_capacity(n_train);
    let mut val = Vec::with_capacity(n_val);
    for line in lines.filter(|l| !l.is_empty()) {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 + latent_dim {
            return Err(perr(format!("row has {} fields, expected {}", fields.len(), 3 + latent_dim)));
        }
        let id = fields[1].parse().map_err(|_| perr(format!("bad id {:?}", fields[1])))?;
        let labels = fields[2]
            .split(',')
            .map(|s| s.parse::<usize>().map_err(|_| perr(format!("bad label {s:?}"))))
            .collect::<Result<Vec<_>>>()?;
        let latent = fields[3..]
            .iter()
            .map(|s| s.parse::<f64>().map_err(|_| perr(format!("bad float {s:?}"))))
            .collect::<Result<Vec<_>>>()?;
        let item = WorldItem { id, latent, labels };
        match fields[0] {
            "train" => train.push(item),
            "val" => val.push(item),
            s => return Err(perr(format!("unknown split {s:?}"))),
        }
    }
    if train.len() != n_train || val.len() != n_val {
        return Err(perr("row counts do not match header".into()));
    }
    Ok(Dataset { train, val, n_categories })
}
