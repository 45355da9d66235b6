//! Per-agent model: token embeddings, modality projections into a shared
//! space, diagonal-Gaussian density heads, a one-step recurrent token decoder
//! and a matching head.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{argmax, dot, log_softmax, softplus, Affine, Matrix};

/// Aggregation of per-position token features into one text feature.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Pooling {
    FirstToken,
    Mean,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub vocab: usize,
    pub seq_len: usize,
    pub d_text: usize,
    pub d_shared: usize,
    pub d_hidden: usize,
    pub feat_dim: usize,
    pub pooling: Pooling,
    pub eps_scale: f64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            vocab: 20,
            seq_len: 5,
            d_text: 16,
            d_shared: 16,
            d_hidden: 32,
            feat_dim: 32,
            pooling: Pooling::FirstToken,
            eps_scale: 1e-3,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab < 2 {
            return Err(Error::Config("agent.vocab must be >= 2".into()));
        }
        if self.seq_len < 1 || self.d_text < 1 || self.d_shared < 1 || self.d_hidden < 1 || self.feat_dim < 1 {
            return Err(Error::Config("agent dimensions must be >= 1".into()));
        }
        if !(self.eps_scale > 0.0) {
            return Err(Error::Config("agent.eps_scale must be > 0".into()));
        }
        Ok(())
    }
}

/// Fixed-length sequence of token indices.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TokenSequence(pub Vec<u32>);

impl TokenSequence {
    pub fn new(tokens: Vec<u32>, vocab: usize, seq_len: usize) -> Result<Self> {
        if tokens.len() != seq_len {
            return Err(Error::Contract(format!("sequence length {} != {seq_len}", tokens.len())));
        }
        if let Some(t) = tokens.iter().find(|&&t| t as usize >= vocab) {
            return Err(Error::Contract(format!("token {t} outside vocabulary of {vocab}")));
        }
        Ok(Self(tokens))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn tokens(&self) -> &[u32] {
        &self.0
    }
}

impl std::fmt::Display for TokenSequence {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|t| t.to_string()).collect();
        write!(f, "{}", parts.join("-"))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GaussParams {
    pub loc: Vec<f64>,
    pub scale: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Modality {
    Vision,
    Text,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DecodeMode {
    Greedy,
    /// Softmax sampling at `temperature`; `top_k = 0` disables truncation.
    Sample { temperature: f64, top_k: usize },
}

/// All learnable tensors of one agent. The same type doubles as a gradient buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentParams {
    pub config: AgentConfig,
    pub token_embed: Matrix,
    pub pos_embed: Matrix,
    /// Previous-token embedding used at position 0.
    pub dec_start: Vec<f64>,
    pub proj_text: Affine,
    pub proj_vis: Affine,
    pub dens_text: Affine,
    pub dens_vis: Affine,
    pub dec_vis: Affine,
    pub dec_prev: Affine,
    pub dec_out: Vec<Affine>,
    pub itm_head: Affine,
    pub itc_temp: f64,
}

pub const ITC_TEMP_INIT: f64 = 0.07;
pub const ITC_TEMP_MIN: f64 = 0.01;
pub const ITC_TEMP_MAX: f64 = 1.0;

/// Intermediate values of one teacher-forced decoder pass.
#[derive(Clone, Debug)]
pub struct DecoderTrace {
    pub vis_hidden: Vec<f64>,
    /// Previous-token embedding fed at each position.
    pub prev: Vec<Vec<f64>>,
    pub hidden: Vec<Vec<f64>>,
    pub logits: Vec<Vec<f64>>,
}

impl AgentParams {
    /// Random initialization: affine weights N(0, 1/fan_in) with zero biases,
    /// embeddings and the start vector N(0, 1), ITC temperature 0.07.
    pub fn init<R: Rng + ?Sized>(config: &AgentConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let c = config;
        let emb_std = 1.0;
        Ok(Self {
            token_embed: Matrix::randn(c.vocab, c.d_text, emb_std, rng),
            pos_embed: Matrix::randn(c.seq_len, c.d_text, emb_std, rng),
            dec_start: Matrix::randn(1, c.d_text, emb_std, rng).data,
            proj_text: Affine::init(c.d_shared, c.d_text, rng),
            proj_vis: Affine::init(c.d_shared, c.feat_dim, rng),
            dens_text: Affine::init(2 * c.d_shared, c.d_shared, rng),
            dens_vis: Affine::init(2 * c.d_shared, c.d_shared, rng),
            dec_vis: Affine::init(c.d_hidden, c.feat_dim, rng),
            dec_prev: Affine::init(c.d_hidden, c.d_text, rng),
            dec_out: (0..c.seq_len).map(|_| Affine::init(c.vocab, c.d_hidden, rng)).collect(),
            itm_head: Affine::init(1, 2 * c.d_shared + 1, rng),
            itc_temp: ITC_TEMP_INIT,
            config: c.clone(),
        })
    }

    /// Same shapes, every entry zero (gradient buffer).
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.for_each_tensor_mut(|_, t| t.iter_mut().for_each(|x| *x = 0.0));
        z
    }

    /// Named views of every tensor in a fixed order. Names starting with
    /// `dens_` belong to the density heads; everything else is text-module.
    pub fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut out: Vec<(String, &[f64])> = vec![
            ("token_embed".into(), &self.token_embed.data[..]),
            ("pos_embed".into(), &self.pos_embed.data[..]),
            ("dec_start".into(), &self.dec_start[..]),
        ];
        let affines: Vec<(&str, &Affine)> = vec![
            ("proj_text", &self.proj_text),
            ("proj_vis", &self.proj_vis),
            ("dens_text", &self.dens_text),
            ("dens_vis", &self.dens_vis),
            ("dec_vis", &self.dec_vis),
            ("dec_prev", &self.dec_prev),
        ];
        for (n, a) in affines {
            out.push((format!("{n}.w"), &a.w.data[..]));
            out.push((format!("{n}.b"), &a.b[..]));
        }
        for (l, a) in self.dec_out.iter().enumerate() {
            out.push((format!("dec_out.{l}.w"), &a.w.data[..]));
            out.push((format!("dec_out.{l}.b"), &a.b[..]));
        }
        out.push(("itm_head.w".into(), &self.itm_head.w.data[..]));
        out.push(("itm_head.b".into(), &self.itm_head.b[..]));
        out.push(("itc_temp".into(), std::slice::from_ref(&self.itc_temp)));
        out
    }

    /// Mutable counterpart of [`tensors`](Self::tensors), same order.
    pub fn for_each_tensor_mut(&mut self, mut f: impl FnMut(&str, &mut [f64])) {
        f("token_embed", &mut self.token_embed.data);
        f("pos_embed", &mut self.pos_embed.data);
        f("dec_start", &mut self.dec_start);
        for (n, a) in [
            ("proj_text", &mut self.proj_text),
            ("proj_vis", &mut self.proj_vis),
            ("dens_text", &mut self.dens_text),
            ("dens_vis", &mut self.dens_vis),
            ("dec_vis", &mut self.dec_vis),
            ("dec_prev", &mut self.dec_prev),
        ] {
            f(&format!("{n}.w"), &mut a.w.data);
            f(&format!("{n}.b"), &mut a.b);
        }
        for (l, a) in self.dec_out.iter_mut().enumerate() {
            f(&format!("dec_out.{l}.w"), &mut a.w.data);
            f(&format!("dec_out.{l}.b"), &mut a.b);
        }
        f("itm_head.w", &mut self.itm_head.w.data);
        f("itm_head.b", &mut self.itm_head.b);
        f("itc_temp", std::slice::from_mut(&mut self.itc_temp));
    }

    pub fn is_density_tensor(name: &str) -> bool {
        name.starts_with("dens_")
    }

    pub fn check_sequence(&self, seq: &TokenSequence) -> Result<()> {
        if seq.len() != self.config.seq_len {
            return Err(Error::Contract(format!(
                "sequence length {} != {}",
                seq.len(),
                self.config.seq_len
            )));
        }
        if seq.0.iter().any(|&t| t as usize >= self.config.vocab) {
            return Err(Error::Contract(format!("sequence {seq} has out-of-vocabulary tokens")));
        }
        Ok(())
    }

    fn check_feature(&self, feat: &[f64]) -> Result<()> {
        if feat.len() != self.config.feat_dim {
            return Err(Error::Contract(format!(
                "visual feature dim {} != {}",
                feat.len(),
                self.config.feat_dim
            )));
        }
        Ok(())
    }

    /// Pooled text feature (before projection).
    pub fn text_features(&self, seq: &TokenSequence) -> Vec<f64> {
        let d = self.config.d_text;
        match self.config.pooling {
            Pooling::FirstToken => {
                let t = seq.0[0] as usize;
                self.token_embed.row(t).iter().zip(self.pos_embed.row(0)).map(|(a, b)| a + b).collect()
            }
            Pooling::Mean => {
                let mut x = vec![0.0; d];
                let inv = 1.0 / seq.len() as f64;
                for (l, &t) in seq.0.iter().enumerate() {
                    let (e, p) = (self.token_embed.row(t as usize), self.pos_embed.row(l));
                    for k in 0..d {
                        x[k] += inv * (e[k] + p[k]);
                    }
                }
                x
            }
        }
    }

    /// Shared-space text embedding of a token sequence.
    pub fn text_encode(&self, seq: &TokenSequence) -> Vec<f64> {
        self.proj_text.apply(&self.text_features(seq))
    }

    pub fn vis_project(&self, feat: &[f64]) -> Result<Vec<f64>> {
        self.check_feature(feat)?;
        Ok(self.proj_vis.apply(feat))
    }

    pub fn density_head(&self, modality: Modality) -> &Affine {
        match modality {
            Modality::Vision => &self.dens_vis,
            Modality::Text => &self.dens_text,
        }
    }

    /// Location and floored softplus scale from the modality's density head.
    pub fn density_params(&self, modality: Modality, mu: &[f64]) -> GaussParams {
        let out = self.density_head(modality).apply(mu);
        let d = self.config.d_shared;
        GaussParams {
            loc: out[..d].to_vec(),
            scale: out[d..].iter().map(|&r| softplus(r) + self.config.eps_scale).collect(),
        }
    }

    /// Hidden pre-activations contributed by the visual feature.
    pub fn decoder_visual(&self, feat: &[f64]) -> Vec<f64> {
        self.dec_vis.apply(feat)
    }

    fn decoder_step(&self, vis_hidden: &[f64], prev: &[f64], position: usize) -> (Vec<f64>, Vec<f64>) {
        let mut a = self.dec_prev.apply(prev);
        for (ai, vi) in a.iter_mut().zip(vis_hidden) {
            *ai = (*ai + vi).tanh();
        }
        let logits = self.dec_out[position].apply(&a);
        (a, logits)
    }

    /// Teacher-forced decoder pass over `seq`.
    pub fn decoder_trace(&self, feat: &[f64], seq: &TokenSequence) -> Result<DecoderTrace> {
        self.check_feature(feat)?;
        self.check_sequence(seq)?;
        let vis_hidden = self.decoder_visual(feat);
        let l = self.config.seq_len;
        let mut trace = DecoderTrace {
            vis_hidden,
            prev: Vec::with_capacity(l),
            hidden: Vec::with_capacity(l),
            logits: Vec::with_capacity(l),
        };
        for pos in 0..l {
            let prev = if pos == 0 {
                self.dec_start.clone()
            } else {
                self.token_embed.row(seq.0[pos - 1] as usize).to_vec()
            };
            let (h, logits) = self.decoder_step(&trace.vis_hidden, &prev, pos);
            trace.prev.push(prev);
            trace.hidden.push(h);
            trace.logits.push(logits);
        }
        Ok(trace)
    }

    /// Autoregressive generation.
    pub fn decode<R: Rng + ?Sized>(&self, feat: &[f64], mode: DecodeMode, rng: &mut R) -> Result<TokenSequence> {
        self.check_feature(feat)?;
        if let DecodeMode::Sample { temperature, .. } = mode {
            if !(temperature > 0.0) {
                return Err(Error::Contract("sampling temperature must be > 0".into()));
            }
        }
        let vis_hidden = self.decoder_visual(feat);
        let mut tokens = Vec::with_capacity(self.config.seq_len);
        for pos in 0..self.config.seq_len {
            let prev = match tokens.last() {
                None => &self.dec_start[..],
                Some(&t) => self.token_embed.row(t as usize),
            };
            let (_, logits) = self.decoder_step(&vis_hidden, prev, pos);
            let tok = match mode {
                DecodeMode::Greedy => argmax(&logits),
                DecodeMode::Sample { temperature, top_k } => sample_logits(&logits, temperature, top_k, rng),
            };
            tokens.push(tok as u32);
        }
        Ok(TokenSequence(tokens))
    }

    /// Log-probability of `seq` under the decoder, by teacher forcing.
    pub fn decoder_log_prob(&self, feat: &[f64], seq: &TokenSequence) -> Result<f64> {
        let trace = self.decoder_trace(feat, seq)?;
        Ok(trace
            .logits
            .iter()
            .zip(&seq.0)
            .map(|(logits, &t)| log_softmax(logits)[t as usize])
            .sum())
    }

    /// Matching-head input [mu_v; mu_t; mu_v . mu_t].
    pub fn itm_input(mu_v: &[f64], mu_t: &[f64]) -> Vec<f64> {
        let mut z = Vec::with_capacity(mu_v.len() * 2 + 1);
        z.extend_from_slice(mu_v);
        z.extend_from_slice(mu_t);
        z.push(dot(mu_v, mu_t));
        z
    }

    /// Raw matching logit for an (image feature, sequence) pair.
    pub fn itm_score(&self, feat: &[f64], seq: &TokenSequence) -> Result<f64> {
        self.check_sequence(seq)?;
        let mu_v = self.vis_project(feat)?;
        let mu_t = self.text_encode(seq);
        Ok(self.itm_head.apply(&Self::itm_input(&mu_v, &mu_t))[0])
    }
}

/// Draw from softmax(logits / temperature), optionally restricted to the top k.
pub fn sample_logits<R: Rng + ?Sized>(logits: &[f64], temperature: f64, top_k: usize, rng: &mut R) -> usize {
    let mut scaled: Vec<f64> = logits.iter().map(|l| l / temperature).collect();
    if top_k > 0 && top_k < scaled.len() {
        let mut order: Vec<usize> = (0..scaled.len()).collect();
        order.sort_by(|&a, &b| scaled[b].total_cmp(&scaled[a]).then(a.cmp(&b)));
        for &i in &order[top_k..] {
            scaled[i] = f64::NEG_INFINITY;
        }
    }
    let logp = log_softmax(&scaled);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last_valid = 0;
    for (i, lp) in logp.iter().enumerate() {
        if lp.is_finite() {
            acc += lp.exp();
            last_valid = i;
            if u < acc {
                return i;
            }
        }
    }
    last_valid
}

pub fn sample_embedding<R: Rng + ?Sized>(params: &GaussParams, rng: &mut R) -> Vec<f64> {
    params
        .loc
        .iter()
        .zip(&params.scale)
        .map(|(m, s)| m + s * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Diagonal Gaussian log-density summed over dimensions.
pub fn log_density(params: &GaussParams, x: &[f64]) -> f64 {
    let half_log_2pi = 0.5 * (2.0 * PI).ln();
    params
        .loc
        .iter()
        .zip(&params.scale)
        .zip(x)
        .map(|((m, s), xi)| {
            let z = (xi - m) / s;
            -0.5 * z * z - s.ln() - half_log_2pi
        })
        .sum()
}
