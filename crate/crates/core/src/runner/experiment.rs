//! Run directories, the epoch loop, checkpoints and report files.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agent::AgentParams;
use crate::checkpoint;
use crate::diagnostics::{consistency_curve, CurvePoint, DiagnosticConfig};
use crate::error::{Error, Result};
use crate::game::{run_epoch, EpochLog};
use crate::rng::{self, label};
use crate::runner::config::ExperimentConfig;
use crate::runner::evaluate::{evaluate, EpochMetrics, World};
use crate::synthworld::{export_dataset, import_dataset};
use crate::training::UpdateTrace;

pub const SUMMARY_SCHEMA: &str = "mhcg-summary/v1";
pub const LOG_SCHEMA: &str = "mhcg-epoch-log/v1";
pub const METRICS_SCHEMA: &str = "mhcg-metrics/v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectionRecord {
    pub direction: String,
    pub n_items: usize,
    pub n_accepted: usize,
    pub acceptance_rate: f64,
    pub mean_log_ratio: Option<f64>,
    pub target_rate: Option<f64>,
}

/// One line of `logs/epochs.ndjson`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub schema: String,
    pub epoch: usize,
    pub directions: Vec<DirectionRecord>,
    pub updates: Vec<(String, UpdateTrace)>,
}

impl EpochRecord {
    fn from_log(log: &EpochLog) -> Self {
        let directions = log
            .directions
            .iter()
            .map(|d| DirectionRecord {
                direction: d.direction.clone(),
                n_items: d.n_items,
                n_accepted: d.n_accepted,
                acceptance_rate: d.acceptance_rate(),
                mean_log_ratio: d.mean_log_ratio,
                target_rate: d.target_rate,
            })
            .collect();
        Self { schema: LOG_SCHEMA.into(), epoch: log.epoch, directions, updates: log.updates.clone() }
    }

    pub fn acceptance(&self) -> BTreeMap<String, f64> {
        self.directions.iter().map(|d| (d.direction.clone(), d.acceptance_rate)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub schema: String,
    pub condition: String,
    pub method: String,
    pub seed: u64,
    pub config_hash: String,
    pub mix: f64,
    pub target_vv_rsa: Option<f64>,
    pub vv_rsa: f64,
    pub n_epochs: usize,
    pub epochs_completed: usize,
    pub evals: Vec<EpochMetrics>,
    pub failure: Option<String>,
}

impl RunSummary {
    pub fn final_eval(&self) -> Option<&EpochMetrics> {
        self.evals.last()
    }
}

pub fn run_dir(root: &Path, cfg: &ExperimentConfig, seed: u64) -> PathBuf {
    root.join(&cfg.condition).join(cfg.method()).join(format!("seed_{seed}"))
}

pub fn init_agents(cfg: &ExperimentConfig, seed: u64) -> Result<(AgentParams, AgentParams)> {
    let a = AgentParams::init(&cfg.agent, &mut rng::stream(seed, &[label::AGENT_INIT, 0]))?;
    let b = AgentParams::init(&cfg.agent_b(), &mut rng::stream(seed, &[label::AGENT_INIT, 1]))?;
    Ok((a, b))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

fn append_line(path: &Path, line: &str) -> Result<()> {
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    writeln!(f, "{line}")?;
    Ok(())
}

fn checkpoint_dir(dir: &Path, epoch: usize) -> PathBuf {
    dir.join("checkpoints").join(format!("epoch_{epoch}"))
}

fn save_checkpoint(dir: &Path, epoch: usize, a: &AgentParams, b: &AgentParams, hash: &str) -> Result<()> {
    let d = checkpoint_dir(dir, epoch);
    fs::create_dir_all(&d)?;
    fs::write(d.join("agent_a.ckpt"), checkpoint::to_string(a, hash))?;
    fs::write(d.join("agent_b.ckpt"), checkpoint::to_string(b, hash))?;
    Ok(())
}

pub fn load_checkpoint(dir: &Path, epoch: usize) -> Result<(AgentParams, AgentParams)> {
    let d = checkpoint_dir(dir, epoch);
    let (a, _) = checkpoint::from_str(&fs::read_to_string(d.join("agent_a.ckpt"))?)?;
    let (b, _) = checkpoint::from_str(&fs::read_to_string(d.join("agent_b.ckpt"))?)?;
    Ok((a, b))
}

/// Metric rows tagged with condition, method, seed, epoch and direction.
pub fn metrics_csv(summary: &RunSummary) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Parse(format!("csv: {e}"));
    w.write_record(["schema", "condition", "method", "seed", "epoch", "direction", "metric", "value"])
        .map_err(csv_err)?;
    for m in &summary.evals {
        for (dir, metric, value) in m.rows() {
            w.write_record([
                METRICS_SCHEMA,
                &summary.condition,
                &summary.method,
                &summary.seed.to_string(),
                &m.epoch.to_string(),
                &dir,
                &metric,
                &format!("{value:?}"),
            ])
            .map_err(csv_err)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Parse(format!("csv: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::Parse(e.to_string()))
}

fn write_reports(dir: &Path, summary: &RunSummary) -> Result<()> {
    let reports = dir.join("reports");
    fs::create_dir_all(&reports)?;
    fs::write(reports.join("metrics.csv"), metrics_csv(summary)?)?;
    write_json(&reports.join("summary.json"), summary)
}

/// The configuration as run: calibration resolved into a fixed `mix`.
fn resolved_config(cfg: &ExperimentConfig, world: &World) -> ExperimentConfig {
    let mut c = cfg.clone();
    c.encoder = world.spec.clone();
    c.target_vv_rsa = None;
    c
}

/// One seed, end to end. `stop_at` truncates the epoch loop.
/// On failure a partial summary carrying the error is written before returning it.
pub fn run_seed(cfg: &ExperimentConfig, world: &World, seed: u64, root: &Path, stop_at: Option<usize>) -> Result<RunSummary> {
    cfg.validate()?;
    let dir = run_dir(root, cfg, seed);
    for sub in ["logs", "reports", "checkpoints"] {
        let p = dir.join(sub);
        if p.exists() {
            fs::remove_dir_all(&p)?;
        }
        fs::create_dir_all(&p)?;
    }
    let resolved = resolved_config(cfg, world);
    let config_text = resolved.to_canonical_string();
    let hash = checkpoint::config_hash(&config_text);
    fs::write(dir.join("config.ini"), &config_text)?;
    fs::write(dir.join("world.tsv"), export_dataset(&world.dataset))?;
    File::create(dir.join("logs").join("epochs.ndjson"))?;

    let n_epochs = stop_at.map_or(cfg.n_epochs, |s| s.min(cfg.n_epochs));
    let mut summary = RunSummary {
        schema: SUMMARY_SCHEMA.into(),
        condition: cfg.condition.clone(),
        method: cfg.method().into(),
        seed,
        config_hash: hash.clone(),
        mix: world.spec.mix,
        target_vv_rsa: cfg.target_vv_rsa,
        vv_rsa: world.vv_rsa,
        n_epochs: cfg.n_epochs,
        epochs_completed: 0,
        evals: Vec::new(),
        failure: None,
    };
    match epoch_loop(&resolved, world, seed, &dir, &hash, n_epochs, &mut summary) {
        Ok(()) => {
            write_reports(&dir, &summary)?;
            Ok(summary)
        }
        Err(e) => {
            summary.failure = Some(e.to_string());
            write_reports(&dir, &summary)?;
            Err(e)
        }
    }
}

fn is_eval_epoch(epoch: usize, every: usize, last: usize) -> bool {
    epoch % every == 0 || epoch == last
}

fn epoch_loop(
    cfg: &ExperimentConfig,
    world: &World,
    seed: u64,
    dir: &Path,
    hash: &str,
    n_epochs: usize,
    summary: &mut RunSummary,
) -> Result<()> {
    let log_path = dir.join("logs").join("epochs.ndjson");
    let (mut a, mut b) = init_agents(cfg, seed)?;
    save_checkpoint(dir, 0, &a, &b, hash)?;
    summary.evals.push(evaluate(cfg, world, &a, &b, 0, seed, BTreeMap::new())?);
    for epoch in 1..=n_epochs {
        let (na, nb, log) = run_epoch(
            (&a, &b),
            (&world.enc_a, &world.enc_b),
            &world.dataset.train,
            &cfg.rule,
            &cfg.game,
            &cfg.hyper,
            seed,
            epoch,
        )?;
        a = na;
        b = nb;
        let record = EpochRecord::from_log(&log);
        append_line(&log_path, &serde_json::to_string(&record)?)?;
        summary.epochs_completed = epoch;
        log::info!(
            "{}/{}/seed_{seed} epoch {epoch}: acceptance {:?}",
            cfg.condition,
            cfg.method(),
            record.acceptance()
        );
        if is_eval_epoch(epoch, cfg.eval_every, n_epochs) {
            save_checkpoint(dir, epoch, &a, &b, hash)?;
            summary.evals.push(evaluate(cfg, world, &a, &b, epoch, seed, record.acceptance())?);
        }
    }
    Ok(())
}

/// All seeds of one configuration, sequentially; the world is shared.
pub fn run_experiment(cfg: &ExperimentConfig, root: &Path, stop_at: Option<usize>) -> Result<Vec<RunSummary>> {
    cfg.validate()?;
    let world = World::build(cfg)?;
    cfg.seeds.iter().map(|&s| run_seed(cfg, &world, s, root, stop_at)).collect()
}

/// A finished (or partial) run directory reloaded from disk.
pub struct LoadedRun {
    pub dir: PathBuf,
    pub config: ExperimentConfig,
    pub world: World,
    pub summary: RunSummary,
}

impl LoadedRun {
    pub fn open(dir: &Path) -> Result<Self> {
        let config = ExperimentConfig::parse(&fs::read_to_string(dir.join("config.ini"))?)?;
        let dataset = import_dataset(&fs::read_to_string(dir.join("world.tsv"))?)?;
        let world = World::from_parts(dataset, config.encoder.clone())?;
        let summary: RunSummary = serde_json::from_str(&fs::read_to_string(dir.join("reports").join("summary.json"))?)?;
        Ok(Self { dir: dir.to_path_buf(), config, world, summary })
    }

    pub fn epoch_records(&self) -> Result<Vec<EpochRecord>> {
        let text = fs::read_to_string(self.dir.join("logs").join("epochs.ndjson"))?;
        text.lines().filter(|l| !l.trim().is_empty()).map(|l| Ok(serde_json::from_str(l)?)).collect()
    }

    pub fn checkpoint_epochs(&self) -> Result<Vec<usize>> {
        let mut out = Vec::new();
        for entry in fs::read_dir(self.dir.join("checkpoints"))? {
            let name = entry?.file_name();
            if let Some(k) = name.to_str().and_then(|n| n.strip_prefix("epoch_")).and_then(|k| k.parse().ok()) {
                out.push(k);
            }
        }
        out.sort_unstable();
        Ok(out)
    }

    /// Recompute the metric bundle from a saved checkpoint.
    pub fn evaluate_epoch(&self, epoch: usize) -> Result<EpochMetrics> {
        let (a, b) = load_checkpoint(&self.dir, epoch)?;
        let acceptance = if epoch == 0 {
            BTreeMap::new()
        } else {
            self.epoch_records()?
                .into_iter()
                .find(|r| r.epoch == epoch)
                .map(|r| r.acceptance())
                .ok_or_else(|| Error::Contract(format!("no epoch log for epoch {epoch}")))?
        };
        evaluate(&self.config, &self.world, &a, &b, epoch, self.summary.seed, acceptance)
    }

    /// Self-consistency over every saved checkpoint.
    pub fn diagnose(&self, dcfg: &DiagnosticConfig) -> Result<Vec<CurvePoint>> {
        let mut cps = Vec::new();
        for epoch in self.checkpoint_epochs()? {
            let (a, b) = load_checkpoint(&self.dir, epoch)?;
            cps.push((epoch, a, b));
        }
        consistency_curve(&cps, (&self.world.val_a, &self.world.val_b), dcfg, self.summary.seed)
    }
}
