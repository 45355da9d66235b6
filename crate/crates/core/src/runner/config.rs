//! Declarative experiment config: `[section]` headers with `key = value` lines.
//! `#` and `;` start comments.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::agent::{AgentConfig, Pooling};
use crate::diagnostics::DiagnosticConfig;
use crate::error::{Error, Result};
use crate::game::{AcceptanceRule, GameConfig, ItmMode, Speaker};
use crate::synthworld::{EncoderPairSpec, WorldConfig};
use crate::training::{OptimizerKind, TrainHyper};

type Sections = BTreeMap<String, BTreeMap<String, (String, usize)>>;

fn parse_sections(text: &str) -> Result<Sections> {
    let mut out: Sections = BTreeMap::new();
    let mut current: Option<String> = None;
    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.split(['#', ';']).next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| Error::Config(format!("line {lineno}: malformed section header `{line}`")))?
                .trim()
                .to_string();
            out.entry(name.clone()).or_default();
            current = Some(name);
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {lineno}: expected `key = value`, got `{line}`")))?;
        let section = current
            .as_ref()
            .ok_or_else(|| Error::Config(format!("line {lineno}: key `{}` outside any section", k.trim())))?;
        let entry = out.get_mut(section).expect("section inserted on header");
        if entry.insert(k.trim().to_string(), (v.trim().to_string(), lineno)).is_some() {
            return Err(Error::Config(format!("line {lineno}: duplicate key {section}.{}", k.trim())));
        }
    }
    Ok(out)
}

struct Reader {
    sections: Sections,
}

impl Reader {
    fn raw(&mut self, section: &str, key: &str) -> Option<(String, usize)> {
        self.sections.get_mut(section).and_then(|s| s.remove(key))
    }

    fn get<T: FromStr>(&mut self, section: &str, key: &str) -> Result<Option<T>> {
        match self.raw(section, key) {
            None => Ok(None),
            Some((v, line)) => v
                .parse::<T>()
                .map(Some)
                .map_err(|_| Error::Config(format!("line {line}: cannot parse {section}.{key} = `{v}`"))),
        }
    }

    fn or<T: FromStr>(&mut self, section: &str, key: &str, default: T) -> Result<T> {
        Ok(self.get(section, key)?.unwrap_or(default))
    }

    fn required(&mut self, section: &str, key: &str) -> Result<(String, usize)> {
        self.raw(section, key)
            .ok_or_else(|| Error::Config(format!("missing required key {section}.{key}")))
    }

    fn finish(self) -> Result<()> {
        for (section, keys) in &self.sections {
            if let Some((k, (_, line))) = keys.iter().next() {
                return Err(Error::Config(format!("line {line}: unknown key {section}.{k}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub k: usize,
    pub candidate_seeds: u64,
    pub n_perms: usize,
    pub min_support: usize,
    pub bootstrap_iters: usize,
    /// Cap on train items used to fit the probes; 0 means all.
    pub probe_train: usize,
    pub singleton_probes: bool,
    pub kendall: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            k: 10,
            candidate_seeds: 20,
            n_perms: 5,
            min_support: 10,
            bootstrap_iters: 2000,
            probe_train: 0,
            singleton_probes: true,
            kendall: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub condition: String,
    pub world: WorldConfig,
    pub encoder: EncoderPairSpec,
    pub target_vv_rsa: Option<f64>,
    pub agent: AgentConfig,
    pub rule: AcceptanceRule,
    pub game: GameConfig,
    pub hyper: TrainHyper,
    pub eval: EvalConfig,
    pub diagnostics: Option<DiagnosticConfig>,
    pub n_epochs: usize,
    pub eval_every: usize,
    pub seeds: Vec<u64>,
    pub output_dir: Option<PathBuf>,
}

fn parse_bool(v: &str, line: usize, key: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(Error::Config(format!("line {line}: {key} expects a boolean, got `{v}`"))),
    }
}

fn parse_rule(
    variant: &str,
    line: usize,
    itm_mode: Option<(String, usize)>,
    target_rate: Option<(f64, usize)>,
) -> Result<AcceptanceRule> {
    if let Some((_, l)) = target_rate.filter(|_| !variant.eq_ignore_ascii_case("random")) {
        return Err(Error::Config(format!("line {l}: rule.target_rate only applies to variant = random")));
    }
    let rule = match variant.to_ascii_lowercase().as_str() {
        "mhcg" => AcceptanceRule::Mhcg,
        "nocom" => AcceptanceRule::NoCom,
        "allaccept" => AcceptanceRule::AllAccept,
        "random" => match target_rate {
            Some((t, l)) if !(0.0..=1.0).contains(&t) => {
                return Err(Error::Config(format!("line {l}: rule.target_rate must lie in [0, 1], got {t}")))
            }
            t => AcceptanceRule::RandomRateMatched { target_rate: t.map(|x| x.0) },
        },
        "itm" => {
            let mode = match itm_mode.as_ref().map(|(m, l)| (m.as_str(), *l)) {
                None | Some(("compare_current", _)) => ItmMode::CompareCurrent,
                Some(("sigmoid_draw", _)) => ItmMode::SigmoidDraw,
                Some((m, l)) => return Err(Error::Config(format!("line {l}: unknown rule.itm_mode `{m}`"))),
            };
            return Ok(AcceptanceRule::ItmBased(mode));
        }
        other => {
            return Err(Error::Config(format!(
                "line {line}: unknown rule.variant `{other}` (expected mhcg, nocom, allaccept, random or itm)"
            )))
        }
    };
    if let Some((_, l)) = itm_mode {
        return Err(Error::Config(format!("line {l}: rule.itm_mode only applies to variant = itm")));
    }
    Ok(rule)
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut r = Reader { sections: parse_sections(text)? };
        let dw = WorldConfig::default();
        let world = WorldConfig {
            n_train: r.or("world", "n_train", dw.n_train)?,
            n_val: r.or("world", "n_val", dw.n_val)?,
            latent_dim: r.or("world", "latent_dim", dw.latent_dim)?,
            n_categories: r.or("world", "n_categories", dw.n_categories)?,
            max_labels_per_item: r.or("world", "max_labels", dw.max_labels_per_item)?,
            category_scale: r.or("world", "category_scale", dw.category_scale)?,
            noise_scale: r.or("world", "noise_scale", dw.noise_scale)?,
            seed: r.or("world", "seed", dw.seed)?,
        };
        let de = EncoderPairSpec::default();
        let encoder = EncoderPairSpec {
            mix: r.or("encoder", "mix", de.mix)?,
            feat_dim_a: r.or("encoder", "feat_dim_a", de.feat_dim_a)?,
            feat_dim_b: r.or("encoder", "feat_dim_b", de.feat_dim_b)?,
            spectral_decay: r.or("encoder", "spectral_decay", de.spectral_decay)?,
            bias_scale: r.or("encoder", "bias_scale", de.bias_scale)?,
            seed: r.or("encoder", "seed", de.seed)?,
        };
        let target_vv_rsa = r.get("encoder", "target_vv_rsa")?;
        let da = AgentConfig::default();
        let pooling = match r.raw("agent", "pooling") {
            None => da.pooling,
            Some((v, line)) => match v.as_str() {
                "first" | "first_token" => Pooling::FirstToken,
                "mean" => Pooling::Mean,
                _ => return Err(Error::Config(format!("line {line}: agent.pooling must be first_token or mean"))),
            },
        };
        let agent = AgentConfig {
            vocab: r.or("agent", "vocab", da.vocab)?,
            seq_len: r.or("agent", "seq_len", da.seq_len)?,
            d_text: r.or("agent", "d_text", da.d_text)?,
            d_shared: r.or("agent", "d_shared", da.d_shared)?,
            d_hidden: r.or("agent", "d_hidden", da.d_hidden)?,
            feat_dim: encoder.feat_dim_a,
            pooling,
            eps_scale: r.or("agent", "eps_scale", da.eps_scale)?,
        };
        let (variant, vline) = r.required("rule", "variant")?;
        let itm_mode = r.raw("rule", "itm_mode");
        let target_rate = match r.raw("rule", "target_rate") {
            None => None,
            Some((v, line)) => Some((
                v.parse::<f64>().map_err(|_| Error::Config(format!("line {line}: rule.target_rate expects a number, got `{v}`")))?,
                line,
            )),
        };
        let rule = parse_rule(&variant, vline, itm_mode, target_rate)?;

        let dg = GameConfig::default();
        let first_speaker = match r.raw("game", "first_speaker") {
            None => dg.first_speaker,
            Some((v, line)) => match v.as_str() {
                "A" | "a" => Speaker::A,
                "B" | "b" => Speaker::B,
                _ => return Err(Error::Config(format!("line {line}: game.first_speaker must be A or B"))),
            },
        };
        let game = GameConfig {
            temperature: r.or("game", "temperature", dg.temperature)?,
            top_k: r.or("game", "top_k", dg.top_k)?,
            aug_scale: r.or("game", "aug_scale", dg.aug_scale)?,
            first_speaker,
        };

        let dh = TrainHyper::default();
        let optimizer = match r.raw("train", "optimizer") {
            None => dh.optimizer,
            Some((v, line)) => match v.as_str() {
                "sgd" => OptimizerKind::Sgd,
                "adam" => OptimizerKind::Adam,
                _ => return Err(Error::Config(format!("line {line}: train.optimizer must be sgd or adam"))),
            },
        };
        let hyper = TrainHyper {
            lr_vlm: r.or("train", "lr_vlm", dh.lr_vlm)?,
            lr_dens: r.or("train", "lr_dens", dh.lr_dens)?,
            n_vlm_epochs: r.or("train", "n_vlm_epochs", dh.n_vlm_epochs)?,
            n_dens_epochs: r.or("train", "n_dens_epochs", dh.n_dens_epochs)?,
            batch_size: r.or("train", "batch_size", dh.batch_size)?,
            n_neg_itm: r.or("train", "n_neg_itm", dh.n_neg_itm)?,
            weight_itc: r.or("train", "weight_itc", dh.weight_itc)?,
            weight_itm: r.or("train", "weight_itm", dh.weight_itm)?,
            weight_lm: r.or("train", "weight_lm", dh.weight_lm)?,
            optimizer,
        };

        let dv = EvalConfig::default();
        let bool_or = |r: &mut Reader, s: &str, k: &str, d: bool| -> Result<bool> {
            match r.raw(s, k) {
                None => Ok(d),
                Some((v, line)) => parse_bool(&v, line, &format!("{s}.{k}")),
            }
        };
        let eval = EvalConfig {
            k: r.or("eval", "k", dv.k)?,
            candidate_seeds: r.or("eval", "candidate_seeds", dv.candidate_seeds)?,
            n_perms: r.or("eval", "n_perms", dv.n_perms)?,
            min_support: r.or("eval", "min_support", dv.min_support)?,
            bootstrap_iters: r.or("eval", "bootstrap_iters", dv.bootstrap_iters)?,
            probe_train: r.or("eval", "probe_train", dv.probe_train)?,
            singleton_probes: bool_or(&mut r, "eval", "singleton_probes", dv.singleton_probes)?,
            kendall: bool_or(&mut r, "eval", "kendall", dv.kendall)?,
        };
        let dd = DiagnosticConfig::default();
        let diag_on = bool_or(&mut r, "diagnostics", "enabled", false)?;
        let diag = DiagnosticConfig {
            n_samples: r.or("diagnostics", "n_samples", dd.n_samples)?,
            n_negatives: r.or("diagnostics", "n_negatives", dd.n_negatives)?,
            n_images: r.or("diagnostics", "n_images", dd.n_images)?,
            temperature: r.or("diagnostics", "temperature", dd.temperature)?,
        };

        let (n_epochs, line) = r.required("run", "n_epochs")?;
        let n_epochs: usize = n_epochs
            .parse()
            .map_err(|_| Error::Config(format!("line {line}: run.n_epochs must be a count")))?;
        let (seeds_raw, sline) = r.required("run", "seeds")?;
        let seeds = seeds_raw
            .split(',')
            .map(|s| s.trim().parse::<u64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| Error::Config(format!("line {sline}: run.seeds must be a comma-separated list of integers")))?;
        let eval_every = r.or("run", "eval_every", n_epochs.max(1))?;
        let condition = r.or("run", "condition", "default".to_string())?;
        let output_dir = r.get::<String>("run", "output_dir")?.map(PathBuf::from);
        r.finish()?;

        let cfg = Self {
            condition,
            world,
            encoder,
            target_vv_rsa,
            agent,
            rule,
            game,
            hyper,
            eval,
            diagnostics: diag_on.then_some(diag),
            n_epochs,
            eval_every,
            seeds,
            output_dir,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        self.encoder.validate()?;
        self.agent.validate()?;
        self.hyper.validate()?;
        if self.n_epochs == 0 {
            return Err(Error::Config("run.n_epochs must be >= 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("run.seeds must not be empty".into()));
        }
        if self.eval_every == 0 || self.eval_every > self.n_epochs {
            return Err(Error::Config(format!("run.eval_every must be in [1, {}]", self.n_epochs)));
        }
        if let Some(t) = self.target_vv_rsa {
            if !(-1.0..=1.0).contains(&t) {
                return Err(Error::Config("encoder.target_vv_rsa must be in [-1, 1]".into()));
            }
        }
        if !(self.game.temperature > 0.0) || !(self.game.aug_scale >= 0.0) {
            return Err(Error::Config("game.temperature must be > 0 and game.aug_scale >= 0".into()));
        }
        if self.eval.k < 2 || self.eval.candidate_seeds == 0 {
            return Err(Error::Config("eval.k must be >= 2 and eval.candidate_seeds >= 1".into()));
        }
        if self.eval.bootstrap_iters == 0 {
            return Err(Error::Config("eval.bootstrap_iters must be >= 1".into()));
        }
        if self.condition.is_empty() || self.condition.contains(['/', '\\']) {
            return Err(Error::Config("run.condition must be a non-empty name without path separators".into()));
        }
        Ok(())
    }

    pub fn method(&self) -> &'static str {
        self.rule.name()
    }

    pub fn agent_b(&self) -> AgentConfig {
        AgentConfig { feat_dim: self.encoder.feat_dim_b, ..self.agent.clone() }
    }

    /// Canonical text form: every key, fixed order. Parsing it yields `self`.
    pub fn to_canonical_string(&self) -> String {
        let mut s = String::new();
        let w = &self.world;
        let _ = writeln!(s, "[world]\nn_train = {}\nn_val = {}\nlatent_dim = {}\nn_categories = {}\nmax_labels = {}\ncategory_scale = {:?}\nnoise_scale = {:?}\nseed = {}\n",
            w.n_train, w.n_val, w.latent_dim, w.n_categories, w.max_labels_per_item, w.category_scale, w.noise_scale, w.seed);
        let e = &self.encoder;
        let _ = writeln!(s, "[encoder]\nmix = {:?}\nfeat_dim_a = {}\nfeat_dim_b = {}\nspectral_decay = {:?}\nbias_scale = {:?}\nseed = {}",
            e.mix, e.feat_dim_a, e.feat_dim_b, e.spectral_decay, e.bias_scale, e.seed);
        if let Some(t) = self.target_vv_rsa {
            let _ = writeln!(s, "target_vv_rsa = {t:?}");
        }
        let a = &self.agent;
        let pooling = match a.pooling {
            Pooling::FirstToken => "first_token",
            Pooling::Mean => "mean",
        };
        let _ = writeln!(s, "\n[agent]\nvocab = {}\nseq_len = {}\nd_text = {}\nd_shared = {}\nd_hidden = {}\npooling = {pooling}\neps_scale = {:?}\n",
            a.vocab, a.seq_len, a.d_text, a.d_shared, a.d_hidden, a.eps_scale);
        let _ = writeln!(s, "[rule]\nvariant = {}", self.rule.name());
        if let AcceptanceRule::RandomRateMatched { target_rate: Some(t) } = self.rule {
            let _ = writeln!(s, "target_rate = {t:?}");
        }
        if let AcceptanceRule::ItmBased(m) = self.rule {
            let _ = writeln!(s, "itm_mode = {}", match m {
                ItmMode::CompareCurrent => "compare_current",
                ItmMode::SigmoidDraw => "sigmoid_draw",
            });
        }
        let g = &self.game;
        let _ = writeln!(s, "\n[game]\ntemperature = {:?}\ntop_k = {}\naug_scale = {:?}\nfirst_speaker = {}\n",
            g.temperature, g.top_k, g.aug_scale, match g.first_speaker { Speaker::A => "A", Speaker::B => "B" });
        let h = &self.hyper;
        let _ = writeln!(s, "[train]\nlr_vlm = {:?}\nlr_dens = {:?}\nn_vlm_epochs = {}\nn_dens_epochs = {}\nbatch_size = {}\nn_neg_itm = {}\nweight_itc = {:?}\nweight_itm = {:?}\nweight_lm = {:?}\noptimizer = {}\n",
            h.lr_vlm, h.lr_dens, h.n_vlm_epochs, h.n_dens_epochs, h.batch_size, h.n_neg_itm, h.weight_itc, h.weight_itm, h.weight_lm,
            match h.optimizer { OptimizerKind::Sgd => "sgd", OptimizerKind::Adam => "adam" });
        let v = &self.eval;
        let _ = writeln!(s, "[eval]\nk = {}\ncandidate_seeds = {}\nn_perms = {}\nmin_support = {}\nbootstrap_iters = {}\nprobe_train = {}\nsingleton_probes = {}\nkendall = {}\n",
            v.k, v.candidate_seeds, v.n_perms, v.min_support, v.bootstrap_iters, v.probe_train, v.singleton_probes, v.kendall);
        if let Some(d) = &self.diagnostics {
            let _ = writeln!(s, "[diagnostics]\nenabled = true\nn_samples = {}\nn_negatives = {}\nn_images = {}\ntemperature = {:?}\n",
                d.n_samples, d.n_negatives, d.n_images, d.temperature);
        }
        let seeds: Vec<String> = self.seeds.iter().map(|x| x.to_string()).collect();
        let _ = write!(s, "[run]\ncondition = {}\nn_epochs = {}\neval_every = {}\nseeds = {}\n",
            self.condition, self.n_epochs, self.eval_every, seeds.join(", "));
        if let Some(o) = &self.output_dir {
            let _ = writeln!(s, "output_dir = {}", o.display());
        }
        s
    }
}
