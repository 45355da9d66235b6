//! The captioning game: per-item propose/evaluate/accept cycles, role
//! alternation and the acceptance-rule variants.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{log_density, sample_embedding, AgentParams, DecodeMode, GaussParams, Modality, TokenSequence};
use crate::error::{Error, Result};
use crate::linalg::sigmoid;
use crate::rng::{self, label};
use crate::synthworld::{encode_view, SyntheticEncoder, VisualFeature, WorldItem};
use crate::training::{update_agent, TrainHyper, UpdateTrace};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ItmMode {
    CompareCurrent,
    SigmoidDraw,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum AcceptanceRule {
    Mhcg,
    NoCom,
    AllAccept,
    /// `target_rate` is filled per direction from a paired MHCG pass.
    RandomRateMatched { target_rate: Option<f64> },
    ItmBased(ItmMode),
}

impl AcceptanceRule {
    pub fn name(&self) -> &'static str {
        match self {
            AcceptanceRule::Mhcg => "mhcg",
            AcceptanceRule::NoCom => "nocom",
            AcceptanceRule::AllAccept => "allaccept",
            AcceptanceRule::RandomRateMatched { .. } => "random",
            AcceptanceRule::ItmBased(_) => "itm",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub accepted: bool,
    /// Present for MHCG and ITM rules only.
    pub log_ratio: Option<f64>,
    pub selected: TokenSequence,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Speaker {
    A,
    B,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GameConfig {
    pub temperature: f64,
    pub top_k: usize,
    pub aug_scale: f64,
    pub first_speaker: Speaker,
}

impl Default for GameConfig {
    fn default() -> Self {
        Self { temperature: 1.0, top_k: 0, aug_scale: 0.1, first_speaker: Speaker::A }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectionLog {
    pub direction: String,
    pub n_items: usize,
    pub n_accepted: usize,
    pub selected: Vec<(usize, TokenSequence)>,
    pub mean_log_ratio: Option<f64>,
    pub target_rate: Option<f64>,
    pub seed: u64,
}

impl DirectionLog {
    pub fn acceptance_rate(&self) -> f64 {
        if self.n_items == 0 {
            0.0
        } else {
            self.n_accepted as f64 / self.n_items as f64
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub directions: Vec<DirectionLog>,
    pub updates: Vec<(String, UpdateTrace)>,
}

/// Decision for a fixed listener-side sample `h`.
pub fn mh_accept_with_sample<R: Rng + ?Sized>(
    listener: &AgentParams,
    h: &[f64],
    proposal: &TokenSequence,
    current: &TokenSequence,
    rng: &mut R,
) -> Result<Decision> {
    listener.check_sequence(proposal)?;
    listener.check_sequence(current)?;
    let lp = log_density(&listener.density_params(Modality::Text, &listener.text_encode(proposal)), h);
    let lc = log_density(&listener.density_params(Modality::Text, &listener.text_encode(current)), h);
    if !lp.is_finite() || !lc.is_finite() {
        return Err(Error::NonFinite(format!(
            "listener log-density is non-finite (proposal {lp}, current {lc}); density head has diverged"
        )));
    }
    let log_ratio = lp - lc;
    let u: f64 = rng.random();
    let accepted = log_ratio >= 0.0 || u.ln() < log_ratio;
    Ok(Decision {
        accepted,
        log_ratio: Some(log_ratio),
        selected: if accepted { proposal.clone() } else { current.clone() },
    })
}

/// Listener-side MH test: sample a visual embedding from the listener's vision
/// density and compare the text-side densities of proposal and current caption.
pub fn mh_accept<R: Rng + ?Sized>(
    listener: &AgentParams,
    feat: &[f64],
    proposal: &TokenSequence,
    current: &TokenSequence,
    rng: &mut R,
) -> Result<Decision> {
    let mu_v = listener.vis_project(feat)?;
    let h = sample_embedding(&listener.density_params(Modality::Vision, &mu_v), rng);
    mh_accept_with_sample(listener, &h, proposal, current, rng)
}

pub fn apply_rule<R: Rng + ?Sized>(
    rule: &AcceptanceRule,
    listener: &AgentParams,
    feat: &[f64],
    proposal: &TokenSequence,
    current: &TokenSequence,
    rng: &mut R,
) -> Result<Decision> {
    let fixed = |accepted: bool| Decision {
        accepted,
        log_ratio: None,
        selected: if accepted { proposal.clone() } else { current.clone() },
    };
    match *rule {
        AcceptanceRule::Mhcg => mh_accept(listener, feat, proposal, current, rng),
        AcceptanceRule::NoCom => Ok(fixed(false)),
        AcceptanceRule::AllAccept => Ok(fixed(true)),
        AcceptanceRule::RandomRateMatched { target_rate } => {
            let rate = target_rate.ok_or_else(|| {
                Error::Config("random rate-matched rule needs a target rate from a paired MHCG pass".into())
            })?;
            if !(0.0..=1.0).contains(&rate) {
                return Err(Error::Config(format!("target rate {rate} outside [0, 1]")));
            }
            Ok(fixed(rng.random::<f64>() < rate))
        }
        AcceptanceRule::ItmBased(mode) => {
            let sp = listener.itm_score(feat, proposal)?;
            let sc = listener.itm_score(feat, current)?;
            let diff = sp - sc;
            if !diff.is_finite() {
                return Err(Error::NonFinite(format!("matching scores are non-finite ({sp}, {sc})")));
            }
            let accepted = match mode {
                ItmMode::CompareCurrent => sp > sc,
                ItmMode::SigmoidDraw => rng.random::<f64>() < sigmoid(diff),
            };
            Ok(Decision { log_ratio: Some(diff), ..fixed(accepted) })
        }
    }
}

/// One side of the game: who speaks, with which model and encoder.
#[derive(Clone, Copy)]
pub struct Participant<'a> {
    pub params: &'a AgentParams,
    pub encoder: &'a SyntheticEncoder,
}

/// Proposal and listener caption for one item, from the item's generation stream.
fn generate_pair(
    speaker: Participant,
    listener: Participant,
    item: &WorldItem,
    cfg: &GameConfig,
    stream: &mut rng::Stream,
) -> Result<(VisualFeature, TokenSequence, TokenSequence)> {
    let mode = DecodeMode::Sample { temperature: cfg.temperature, top_k: cfg.top_k };
    let f_sp = encode_view(speaker.encoder, item, cfg.aug_scale, stream)?;
    let f_li = encode_view(listener.encoder, item, cfg.aug_scale, stream)?;
    let proposal = speaker.params.decode(&f_sp, mode, stream)?;
    let current = listener.params.decode(&f_li, mode, stream)?;
    Ok((f_li, proposal, current))
}

/// One pass over `items` with `speaker` proposing to `listener`.
/// Item `i` uses stream `path ++ [i, 0]` for generation and `path ++ [i, 1]` for the decision.
pub fn run_direction(
    speaker: Participant,
    listener: Participant,
    items: &[WorldItem],
    rule: &AcceptanceRule,
    cfg: &GameConfig,
    seed: u64,
    path: &[u64],
    direction: &str,
) -> Result<DirectionLog> {
    let item_path = |i: usize, k: u64| {
        let mut p = path.to_vec();
        p.extend([i as u64, k]);
        p
    };
    let mut target_rate = None;
    let mut rule = *rule;
    if let AcceptanceRule::RandomRateMatched { target_rate: None } = rule {
        let mut paired_path = vec![label::PAIRED_MHCG];
        paired_path.extend_from_slice(path);
        let paired = run_direction(speaker, listener, items, &AcceptanceRule::Mhcg, cfg, seed, &paired_path, direction)?;
        target_rate = Some(paired.acceptance_rate());
        rule = AcceptanceRule::RandomRateMatched { target_rate };
    } else if let AcceptanceRule::RandomRateMatched { target_rate: r } = rule {
        target_rate = r;
    }

    let mut log = DirectionLog {
        direction: direction.to_string(),
        n_items: items.len(),
        n_accepted: 0,
        selected: Vec::with_capacity(items.len()),
        mean_log_ratio: None,
        target_rate,
        seed: rng::derive_seed(seed, path),
    };
    let mut ratio_sum = 0.0;
    let mut n_ratio = 0usize;
    for (i, item) in items.iter().enumerate() {
        let mut gen = rng::stream(seed, &item_path(i, 0));
        let (f_li, proposal, current) = generate_pair(speaker, listener, item, cfg, &mut gen)?;
        let mut dec_rng = rng::stream(seed, &item_path(i, 1));
        let d = apply_rule(&rule, listener.params, &f_li, &proposal, &current, &mut dec_rng)?;
        if d.accepted {
            log.n_accepted += 1;
        }
        if let Some(r) = d.log_ratio {
            ratio_sum += r;
            n_ratio += 1;
        }
        log.selected.push((item.id, d.selected));
    }
    if n_ratio > 0 {
        log.mean_log_ratio = Some(ratio_sum / n_ratio as f64);
    }
    Ok(log)
}

/// Train `agent` on its selected captions, paired with fresh augmented views.
fn update_listener(
    agent: &AgentParams,
    encoder: &SyntheticEncoder,
    items: &[WorldItem],
    log: &DirectionLog,
    cfg: &GameConfig,
    hyper: &TrainHyper,
    seed: u64,
    path: &[u64],
) -> Result<(AgentParams, UpdateTrace)> {
    let mut views = rng::stream(seed, &[path, &[0]].concat());
    let data = items
        .iter()
        .zip(&log.selected)
        .map(|(item, (_, caption))| Ok((encode_view(encoder, item, cfg.aug_scale, &mut views)?, caption.clone())))
        .collect::<Result<Vec<_>>>()?;
    let mut train_rng = rng::stream(seed, &[path, &[1]].concat());
    update_agent(agent, &data, hyper, &mut train_rng)
}

/// First speaker talks to the other agent, the other agent is updated, then
/// the roles swap and the first speaker is updated.
pub fn run_epoch(
    agents: (&AgentParams, &AgentParams),
    encoders: (&SyntheticEncoder, &SyntheticEncoder),
    items: &[WorldItem],
    rule: &AcceptanceRule,
    cfg: &GameConfig,
    hyper: &TrainHyper,
    seed: u64,
    epoch: usize,
) -> Result<(AgentParams, AgentParams, EpochLog)> {
    let mut a = agents.0.clone();
    let mut b = agents.1.clone();
    let order: [(Speaker, &str); 2] = match cfg.first_speaker {
        Speaker::A => [(Speaker::A, "A->B"), (Speaker::B, "B->A")],
        Speaker::B => [(Speaker::B, "B->A"), (Speaker::A, "A->B")],
    };
    let mut log = EpochLog { epoch, directions: Vec::new(), updates: Vec::new() };
    for (speaker, name) in order {
        let dir_idx = match speaker {
            Speaker::A => 0,
            Speaker::B => 1,
        };
        let path = [label::DIRECTION, epoch as u64, dir_idx];
        let pa = Participant { params: &a, encoder: encoders.0 };
        let pb = Participant { params: &b, encoder: encoders.1 };
        let (sp, li) = if speaker == Speaker::A { (pa, pb) } else { (pb, pa) };
        let dlog = run_direction(sp, li, items, rule, cfg, seed, &path, name)?;
        let upath = [label::UPDATE, epoch as u64, dir_idx];
        let (updated, trace) = update_listener(li.params, li.encoder, items, &dlog, cfg, hyper, seed, &upath)?;
        let listener_name = if speaker == Speaker::A { "B" } else { "A" };
        match speaker {
            Speaker::A => b = updated,
            Speaker::B => a = updated,
        }
        log.updates.push((listener_name.to_string(), trace));
        log.directions.push(dlog);
    }
    Ok((a, b, log))
}

/// Independence MH chain on an enumerable caption space. The target is
/// proportional to `N(h; densities[c]) * prior[c]`; proposals are drawn from
/// `proposal` and corrected by the exact proposal ratio. With `prior == proposal`
/// the acceptance ratio is the plain listener likelihood ratio.
/// Returns empirical state frequencies over `n_steps` steps.
pub fn run_chain_exactness_test(
    densities: &[GaussParams],
    h: &[f64],
    prior: &[f64],
    proposal: &[f64],
    n_steps: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let n = densities.len();
    if n == 0 || n > 1024 || prior.len() != n || proposal.len() != n {
        return Err(Error::Contract(format!("chain test needs 1..=1024 states with matching prior/proposal (got {n})")));
    }
    if proposal.iter().any(|&q| !(q > 0.0)) || prior.iter().any(|&p| !(p >= 0.0)) {
        return Err(Error::Contract("proposal must be positive and prior non-negative".into()));
    }
    let log_target: Vec<f64> = densities.iter().zip(prior).map(|(d, p)| log_density(d, h) + p.ln()).collect();
    let log_q: Vec<f64> = proposal.iter().map(|q| q.ln()).collect();
    let qsum: f64 = proposal.iter().sum();
    let mut cdf = Vec::with_capacity(n);
    let mut acc = 0.0;
    for q in proposal {
        acc += q / qsum;
        cdf.push(acc);
    }
    let mut rng = rng::stream(seed, &[]);
    let draw = |rng: &mut rng::Stream| {
        let u: f64 = rng.random();
        cdf.iter().position(|&c| u < c).unwrap_or(n - 1)
    };
    let mut state = draw(&mut rng);
    while !log_target[state].is_finite() {
        state = draw(&mut rng);
    }
    let mut counts = vec![0u64; n];
    for _ in 0..n_steps {
        let cand = draw(&mut rng);
        let log_a = (log_target[cand] - log_q[cand]) - (log_target[state] - log_q[state]);
        let u: f64 = rng.random();
        if log_a >= 0.0 || u.ln() < log_a {
            state = cand;
        }
        counts[state] += 1;
    }
    Ok(counts.iter().map(|&c| c as f64 / n_steps.max(1) as f64).collect())
}
