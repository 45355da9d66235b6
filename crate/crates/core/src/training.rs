//! Surrogate M-step: language-modelling, contrastive, matching and density-head
//! losses with closed-form gradients, and the optimizer loop that updates one
//! agent from its selected captions.
//!
//! Loss functions take an optional gradient buffer (an [`AgentParams`] of
//! zeros) and accumulate `scale * dLoss/dParam` into it.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{AgentParams, Pooling, TokenSequence, ITC_TEMP_MAX, ITC_TEMP_MIN};
use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, log_sum_exp, norm, sigmoid, softmax, softplus};
use crate::synthworld::VisualFeature;

#[derive(Clone, Copy, Debug)]
pub struct Example<'a> {
    pub feat: &'a [f64],
    pub target: &'a TokenSequence,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainHyper {
    pub lr_vlm: f64,
    pub lr_dens: f64,
    pub n_vlm_epochs: usize,
    pub n_dens_epochs: usize,
    pub batch_size: usize,
    pub n_neg_itm: usize,
    pub weight_itc: f64,
    pub weight_itm: f64,
    pub weight_lm: f64,
    pub optimizer: OptimizerKind,
}

impl Default for TrainHyper {
    fn default() -> Self {
        Self {
            lr_vlm: 0.01,
            lr_dens: 0.01,
            n_vlm_epochs: 1,
            n_dens_epochs: 3,
            batch_size: 50,
            n_neg_itm: 1,
            weight_itc: 1.0,
            weight_itm: 1.0,
            weight_lm: 1.0,
            optimizer: OptimizerKind::Sgd,
        }
    }
}

impl TrainHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_vlm >= 0.0 && self.lr_dens >= 0.0) {
            return Err(Error::Config("learning rates must be >= 0".into()));
        }
        if self.n_vlm_epochs == 0 || self.n_dens_epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("train epoch counts and batch_size must be >= 1".into()));
        }
        if !(self.weight_itc >= 0.0 && self.weight_itm >= 0.0 && self.weight_lm >= 0.0) {
            return Err(Error::Config("loss weights must be >= 0".into()));
        }
        Ok(())
    }
}

fn backprop_text(agent: &AgentParams, seq: &TokenSequence, pooled: &[f64], dmu: &[f64], g: &mut AgentParams) {
    g.proj_text.accumulate_grad(dmu, pooled);
    let dx = agent.proj_text.backprop_input(dmu);
    match agent.config.pooling {
        Pooling::FirstToken => {
            axpy(1.0, &dx, g.token_embed.row_mut(seq.0[0] as usize));
            axpy(1.0, &dx, g.pos_embed.row_mut(0));
        }
        Pooling::Mean => {
            let inv = 1.0 / seq.len() as f64;
            for (l, &t) in seq.0.iter().enumerate() {
                axpy(inv, &dx, g.token_embed.row_mut(t as usize));
                axpy(inv, &dx, g.pos_embed.row_mut(l));
            }
        }
    }
}

/// Mean negative teacher-forced log-likelihood of the targets.
pub fn lm_loss(agent: &AgentParams, batch: &[Example], mut grad: Option<&mut AgentParams>, scale: f64) -> Result<f64> {
    if batch.is_empty() {
        return Ok(0.0);
    }
    let n = batch.len() as f64;
    let mut total = 0.0;
    for ex in batch {
        let trace = agent.decoder_trace(ex.feat, ex.target)?;
        let mut dvis = vec![0.0; agent.config.d_hidden];
        for pos in 0..agent.config.seq_len {
            let t = ex.target.0[pos] as usize;
            let logits = &trace.logits[pos];
            total -= logits[t] - log_sum_exp(logits);
            let Some(g) = grad.as_deref_mut() else { continue };
            let mut dlogits = softmax(logits);
            dlogits[t] -= 1.0;
            dlogits.iter_mut().for_each(|x| *x *= scale / n);
            let h = &trace.hidden[pos];
            g.dec_out[pos].accumulate_grad(&dlogits, h);
            let dh = agent.dec_out[pos].backprop_input(&dlogits);
            let da: Vec<f64> = dh.iter().zip(h).map(|(d, hv)| d * (1.0 - hv * hv)).collect();
            axpy(1.0, &da, &mut dvis);
            g.dec_prev.accumulate_grad(&da, &trace.prev[pos]);
            let dprev = agent.dec_prev.backprop_input(&da);
            if pos == 0 {
                axpy(1.0, &dprev, &mut g.dec_start);
            } else {
                axpy(1.0, &dprev, g.token_embed.row_mut(ex.target.0[pos - 1] as usize));
            }
        }
        if let Some(g) = grad.as_deref_mut() {
            g.dec_vis.accumulate_grad(&dvis, ex.feat);
        }
    }
    Ok(total / n)
}

fn unit(v: &[f64]) -> (Vec<f64>, f64) {
    let n = norm(v).max(1e-12);
    (v.iter().map(|x| x / n).collect(), n)
}

/// Gradient through v -> v/|v| given the upstream gradient on the unit vector.
fn unit_backprop(u: &[f64], n: f64, du: &[f64]) -> Vec<f64> {
    let proj = dot(u, du);
    u.iter().zip(du).map(|(ui, di)| (di - ui * proj) / n).collect()
}

/// Symmetric in-batch InfoNCE on l2-normalized shared embeddings.
pub fn itc_loss(agent: &AgentParams, batch: &[Example], grad: Option<&mut AgentParams>, scale: f64) -> Result<f64> {
    let b = batch.len();
    if b < 2 {
        return Ok(0.0);
    }
    let tau = agent.itc_temp;
    let mut mu_v = Vec::with_capacity(b);
    let mut pooled = Vec::with_capacity(b);
    let mut u = Vec::with_capacity(b);
    let mut w = Vec::with_capacity(b);
    for ex in batch {
        agent.check_sequence(ex.target)?;
        let mv = agent.vis_project(ex.feat)?;
        let px = agent.text_features(ex.target);
        let mt = agent.proj_text.apply(&px);
        u.push(unit(&mv));
        w.push(unit(&mt));
        mu_v.push(mv);
        pooled.push(px);
    }
    let s: Vec<Vec<f64>> = (0..b).map(|i| (0..b).map(|j| dot(&u[i].0, &w[j].0) / tau).collect()).collect();
    let bf = b as f64;
    let mut loss = 0.0;
    let mut ds = vec![vec![0.0; b]; b];
    for i in 0..b {
        loss += 0.5 / bf * (log_sum_exp(&s[i]) - s[i][i]);
        let p = softmax(&s[i]);
        for j in 0..b {
            ds[i][j] += 0.5 / bf * (p[j] - if i == j { 1.0 } else { 0.0 });
        }
    }
    for j in 0..b {
        let col: Vec<f64> = (0..b).map(|i| s[i][j]).collect();
        loss += 0.5 / bf * (log_sum_exp(&col) - s[j][j]);
        let p = softmax(&col);
        for i in 0..b {
            ds[i][j] += 0.5 / bf * (p[i] - if i == j { 1.0 } else { 0.0 });
        }
    }
    if let Some(g) = grad {
        let d = agent.config.d_shared;
        let mut du = vec![vec![0.0; d]; b];
        let mut dw = vec![vec![0.0; d]; b];
        let mut dtau = 0.0;
        for i in 0..b {
            for j in 0..b {
                let c = scale * ds[i][j];
                axpy(c / tau, &w[j].0, &mut du[i]);
                axpy(c / tau, &u[i].0, &mut dw[j]);
                dtau -= c * s[i][j] / tau;
            }
        }
        g.itc_temp += dtau;
        for i in 0..b {
            let dmv = unit_backprop(&u[i].0, u[i].1, &du[i]);
            g.proj_vis.accumulate_grad(&dmv, batch[i].feat);
            let dmt = unit_backprop(&w[i].0, w[i].1, &dw[i]);
            backprop_text(agent, batch[i].target, &pooled[i], &dmt, g);
        }
    }
    Ok(loss)
}

/// One positive `(i, i)` per example plus `n_neg` mismatched `(i, j)` pairs,
/// with j uniform over the rest of the batch.
pub fn sample_itm_pairs<R: Rng + ?Sized>(batch_len: usize, n_neg: usize, rng: &mut R) -> Vec<(usize, usize, bool)> {
    let mut pairs = Vec::with_capacity(batch_len * (1 + n_neg));
    for i in 0..batch_len {
        pairs.push((i, i, true));
        if batch_len < 2 {
            continue;
        }
        for _ in 0..n_neg {
            let mut j = rng.random_range(0..batch_len - 1);
            if j >= i {
                j += 1;
            }
            pairs.push((i, j, false));
        }
    }
    pairs
}

/// Logistic loss of the matching head over (image index, text index, matched) pairs.
pub fn itm_loss(
    agent: &AgentParams,
    batch: &[Example],
    pairs: &[(usize, usize, bool)],
    grad: Option<&mut AgentParams>,
    scale: f64,
) -> Result<f64> {
    if pairs.is_empty() {
        return Ok(0.0);
    }
    let d = agent.config.d_shared;
    let mut mu_v = Vec::with_capacity(batch.len());
    let mut pooled = Vec::with_capacity(batch.len());
    let mut mu_t = Vec::with_capacity(batch.len());
    for ex in batch {
        agent.check_sequence(ex.target)?;
        mu_v.push(agent.vis_project(ex.feat)?);
        let px = agent.text_features(ex.target);
        mu_t.push(agent.proj_text.apply(&px));
        pooled.push(px);
    }
    let np = pairs.len() as f64;
    let mut loss = 0.0;
    let mut dmv = vec![vec![0.0; d]; batch.len()];
    let mut dmt = vec![vec![0.0; d]; batch.len()];
    let mut g = grad;
    for &(i, j, matched) in pairs {
        let z = AgentParams::itm_input(&mu_v[i], &mu_t[j]);
        let s = agent.itm_head.apply(&z)[0];
        let y = if matched { 1.0 } else { 0.0 };
        loss += softplus(s) - y * s;
        if let Some(g) = g.as_deref_mut() {
            let dsc = scale * (sigmoid(s) - y) / np;
            g.itm_head.accumulate_grad(&[dsc], &z);
            let wz = agent.itm_head.w.row(0);
            let wdot = wz[2 * d];
            for k in 0..d {
                dmv[i][k] += dsc * (wz[k] + wdot * mu_t[j][k]);
                dmt[j][k] += dsc * (wz[d + k] + wdot * mu_v[i][k]);
            }
        }
    }
    if let Some(g) = g {
        for (i, ex) in batch.iter().enumerate() {
            g.proj_vis.accumulate_grad(&dmv[i], ex.feat);
            backprop_text(agent, ex.target, &pooled[i], &dmt[i], g);
        }
    }
    Ok(loss / np)
}

/// Gaussian NLL of `x` under `head(input)`; accumulates head gradients.
fn density_nll(
    head: &crate::linalg::Affine,
    eps: f64,
    input: &[f64],
    x: &[f64],
    grad_head: Option<&mut crate::linalg::Affine>,
    coef: f64,
) -> f64 {
    let out = head.apply(input);
    let d = x.len();
    let half_log_2pi = 0.5 * (2.0 * PI).ln();
    let mut nll = 0.0;
    let mut dout = vec![0.0; 2 * d];
    for k in 0..d {
        let raw = out[d + k];
        let s = softplus(raw) + eps;
        let r = x[k] - out[k];
        nll += s.ln() + half_log_2pi + r * r / (2.0 * s * s);
        dout[k] = -r / (s * s) * coef;
        dout[d + k] = (1.0 / s - r * r / (s * s * s)) * sigmoid(raw) * coef;
    }
    if let Some(gh) = grad_head {
        gh.accumulate_grad(&dout, input);
    }
    nll
}

/// Density-head loss. The text head predicts the projected visual embedding
/// from the caption embedding; the vision head reconstructs it from itself.
/// Only `dens_*` tensors receive gradients.
pub fn probvlm_loss(agent: &AgentParams, batch: &[Example], mut grad: Option<&mut AgentParams>, scale: f64) -> Result<f64> {
    if batch.is_empty() {
        return Ok(0.0);
    }
    let n = batch.len() as f64;
    let eps = agent.config.eps_scale;
    let mut total = 0.0;
    for ex in batch {
        agent.check_sequence(ex.target)?;
        let mv = agent.vis_project(ex.feat)?;
        let mt = agent.text_encode(ex.target);
        let coef = scale / n;
        total += density_nll(&agent.dens_text, eps, &mt, &mv, grad.as_deref_mut().map(|g| &mut g.dens_text), coef);
        total += density_nll(&agent.dens_vis, eps, &mv, &mv, grad.as_deref_mut().map(|g| &mut g.dens_vis), coef);
    }
    Ok(total / n)
}

/// Plain SGD or Adam over a subset of tensors. State is created fresh per update.
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    t: u32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Optimizer {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        Self { kind, lr, t: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn step(&mut self, params: &mut AgentParams, grad: &AgentParams, select: impl Fn(&str) -> bool) {
        let grads: Vec<Vec<f64>> = grad.tensors().into_iter().map(|(_, t)| t.to_vec()).collect();
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let (kind, lr, t) = (self.kind, self.lr, self.t);
        let (m_all, v_all) = (&mut self.m, &mut self.v);
        let mut idx = 0;
        params.for_each_tensor_mut(|name, p| {
            let i = idx;
            idx += 1;
            if !select(name) {
                return;
            }
            let g = &grads[i];
            match kind {
                OptimizerKind::Sgd => axpy(-lr, g, p),
                OptimizerKind::Adam => {
                    let (m, v) = (&mut m_all[i], &mut v_all[i]);
                    let bc1 = 1.0 - Self::BETA1.powi(t as i32);
                    let bc2 = 1.0 - Self::BETA2.powi(t as i32);
                    for k in 0..p.len() {
                        m[k] = Self::BETA1 * m[k] + (1.0 - Self::BETA1) * g[k];
                        v[k] = Self::BETA2 * v[k] + (1.0 - Self::BETA2) * g[k] * g[k];
                        p[k] -= lr * (m[k] / bc1) / ((v[k] / bc2).sqrt() + Self::EPS);
                    }
                }
            }
        });
    }
}

fn is_text_module(name: &str) -> bool {
    !AgentParams::is_density_tensor(name)
}

fn grad_norm(grad: &AgentParams, select: impl Fn(&str) -> bool) -> f64 {
    grad.tensors()
        .iter()
        .filter(|(n, _)| select(n))
        .map(|(_, t)| dot(t, t))
        .sum::<f64>()
        .sqrt()
}

/// Loss trace of one update (means over the minibatches of the final epoch of each phase).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateTrace {
    pub lm: f64,
    pub itc: f64,
    pub itm: f64,
    pub probvlm: f64,
    pub grad_norm: f64,
    pub steps: usize,
}

fn non_finite(what: &str, v: f64) -> Error {
    Error::NonFinite(format!("{what} became {v}; check learning rates and density-head scales"))
}

/// Train the text module on the weighted sum of ITC, ITM and LM losses, then
/// the density heads on the density loss with the text module frozen.
pub fn update_agent<R: Rng + ?Sized>(
    agent: &AgentParams,
    data: &[(VisualFeature, TokenSequence)],
    hyper: &TrainHyper,
    rng: &mut R,
) -> Result<(AgentParams, UpdateTrace)> {
    hyper.validate()?;
    let mut params = agent.clone();
    let mut trace = UpdateTrace::default();
    if data.is_empty() {
        return Ok((params, trace));
    }
    let examples: Vec<Example> = data.iter().map(|(f, t)| Example { feat: f, target: t }).collect();
    let mut order: Vec<usize> = (0..examples.len()).collect();

    let mut opt = Optimizer::new(hyper.optimizer, hyper.lr_vlm);
    let mut norm_sum = 0.0;
    for epoch in 0..hyper.n_vlm_epochs {
        order.shuffle(rng);
        let last = epoch + 1 == hyper.n_vlm_epochs;
        let (mut lm, mut itc, mut itm, mut nb) = (0.0, 0.0, 0.0, 0.0);
        for chunk in order.chunks(hyper.batch_size) {
            let batch: Vec<Example> = chunk.iter().map(|&i| examples[i]).collect();
            let pairs = sample_itm_pairs(batch.len(), hyper.n_neg_itm, rng);
            let mut g = params.zeros_like();
            let l_lm = lm_loss(&params, &batch, Some(&mut g), hyper.weight_lm)?;
            let l_itc = itc_loss(&params, &batch, Some(&mut g), hyper.weight_itc)?;
            let l_itm = itm_loss(&params, &batch, &pairs, Some(&mut g), hyper.weight_itm)?;
            let total = hyper.weight_lm * l_lm + hyper.weight_itc * l_itc + hyper.weight_itm * l_itm;
            if !total.is_finite() {
                return Err(non_finite("text-module loss", total));
            }
            let gn = grad_norm(&g, is_text_module);
            if !gn.is_finite() {
                return Err(non_finite("text-module gradient norm", gn));
            }
            norm_sum += gn;
            trace.steps += 1;
            opt.step(&mut params, &g, is_text_module);
            params.itc_temp = params.itc_temp.clamp(ITC_TEMP_MIN, ITC_TEMP_MAX);
            if last {
                lm += l_lm;
                itc += l_itc;
                itm += l_itm;
                nb += 1.0;
            }
        }
        if last {
            trace.lm = lm / nb;
            trace.itc = itc / nb;
            trace.itm = itm / nb;
        }
    }

    let mut opt = Optimizer::new(hyper.optimizer, hyper.lr_dens);
    for epoch in 0..hyper.n_dens_epochs {
        order.shuffle(rng);
        let last = epoch + 1 == hyper.n_dens_epochs;
        let (mut pv, mut nb) = (0.0, 0.0);
        for chunk in order.chunks(hyper.batch_size) {
            let batch: Vec<Example> = chunk.iter().map(|&i| examples[i]).collect();
            let mut g = params.zeros_like();
            let l = probvlm_loss(&params, &batch, Some(&mut g), 1.0)?;
            if !l.is_finite() {
                return Err(non_finite("density loss", l));
            }
            opt.step(&mut params, &g, AgentParams::is_density_tensor);
            if last {
                pv += l;
                nb += 1.0;
            }
        }
        if last {
            trace.probvlm = pv / nb;
        }
    }
    trace.grad_norm = if trace.steps > 0 { norm_sum / trace.steps as f64 } else { 0.0 };
    Ok((params, trace))
}
