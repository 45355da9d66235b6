//! Command-line front end for the captioning-game simulator.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use mhcg_core::agent::{log_density, AgentConfig, AgentParams, Modality, Pooling, TokenSequence};
use rand::Rng;
use mhcg_core::diagnostics::curve_to_csv;
use mhcg_core::game::run_chain_exactness_test;
use mhcg_core::rng;
use mhcg_core::runner::{self, compare, ExperimentConfig, LoadedRun, World};
use mhcg_core::synthworld::export_dataset;
use mhcg_core::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "mhcg", version, about = "Metropolis-Hastings captioning game on synthetic worlds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the dataset and frozen encoders, calibrating mix if requested.
    GenWorld {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every seed of a configuration (or one seed with --seed).
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long = "stop-at-epoch")]
        stop_at_epoch: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recompute the metric bundle from a saved checkpoint of a run directory.
    Eval {
        run_dir: PathBuf,
        /// Checkpoint epoch; defaults to the latest one.
        #[arg(long)]
        epoch: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Self-consistency curve over all checkpoints of a run directory.
    Diagnose {
        run_dir: PathBuf,
        /// Optional config whose [diagnostics] section overrides the run's.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Aggregate run summaries under one or more directories.
    Compare {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Persistent MH chain on the 9-state toy space against exact enumeration.
    ChainTest {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100_000)]
        steps: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Parse(_) => EXIT_CONFIG,
        _ => EXIT_RUNTIME,
    }
}

fn read_config(path: &Path) -> Result<ExperimentConfig, Error> {
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    ExperimentConfig::parse(&text)
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), Error> {
    match out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            fs::write(p, text)?;
        }
        None => print!("{text}"),
    }
    Ok(())
}

/// Parse `argv` (program name first) and execute. Returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("mhcg: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(cmd: Command) -> Result<(), Error> {
    match cmd {
        Command::GenWorld { config, out } => {
            let cfg = read_config(&config)?;
            cfg.validate()?;
            let world = World::build(&cfg)?;
            let dir = out.or(cfg.output_dir.clone()).unwrap_or_else(|| PathBuf::from("."));
            fs::create_dir_all(&dir)?;
            fs::write(dir.join("world.tsv"), export_dataset(&world.dataset))?;
            let mut resolved = cfg.clone();
            resolved.encoder = world.spec.clone();
            resolved.target_vv_rsa = None;
            fs::write(dir.join("config.ini"), resolved.to_canonical_string())?;
            println!(
                "world: {} train, {} val, mix {:.4}, vision-vision RSA {:.4} -> {}",
                world.dataset.train.len(),
                world.dataset.val.len(),
                world.spec.mix,
                world.vv_rsa,
                dir.display()
            );
            Ok(())
        }
        Command::Run { config, seed, stop_at_epoch, out } => {
            let mut cfg = read_config(&config)?;
            if let Some(s) = seed {
                cfg.seeds = vec![s];
            }
            cfg.validate()?;
            let root = out.or(cfg.output_dir.clone()).unwrap_or_else(|| PathBuf::from("runs"));
            let world = World::build(&cfg)?;
            for &s in &cfg.seeds {
                let summary = runner::run_seed(&cfg, &world, s, &root, stop_at_epoch)?;
                let dir = runner::run_dir(&root, &cfg, s);
                match summary.final_eval() {
                    Some(m) => println!(
                        "{} seed {s}: {} epochs, tt-RSA {:.3}, cross dR2 {:.3}, cross i2t {:.3} -> {}",
                        cfg.method(),
                        summary.epochs_completed,
                        m.tt_rsa,
                        m.cross_delta_r2(),
                        m.cross_i2t(),
                        dir.display()
                    ),
                    None => println!("{} seed {s}: no evaluations -> {}", cfg.method(), dir.display()),
                }
            }
            Ok(())
        }
        Command::Eval { run_dir, epoch, out } => {
            let run = LoadedRun::open(&run_dir)?;
            let epoch = match epoch {
                Some(e) => e,
                None => *run
                    .checkpoint_epochs()?
                    .last()
                    .ok_or_else(|| Error::Contract(format!("no checkpoints under {}", run_dir.display())))?,
            };
            let m = run.evaluate_epoch(epoch)?;
            emit(out.as_deref(), &(serde_json::to_string_pretty(&m)? + "\n"))
        }
        Command::Diagnose { run_dir, config, seed, out } => {
            let run = LoadedRun::open(&run_dir)?;
            let dcfg = match config {
                Some(p) => read_config(&p)?.diagnostics.unwrap_or_default(),
                None => run.config.diagnostics.clone().unwrap_or_default(),
            };
            let points = match seed {
                Some(s) => {
                    let mut cps = Vec::new();
                    for e in run.checkpoint_epochs()? {
                        let (a, b) = runner::experiment::load_checkpoint(&run.dir, e)?;
                        cps.push((e, a, b));
                    }
                    mhcg_core::diagnostics::consistency_curve(&cps, (&run.world.val_a, &run.world.val_b), &dcfg, s)?
                }
                None => run.diagnose(&dcfg)?,
            };
            emit(out.as_deref(), &curve_to_csv(&points))
        }
        Command::Compare { dirs, out } => {
            let roots: Vec<&Path> = dirs.iter().map(|d| d.as_path()).collect();
            let summaries = compare::collect_summaries(&roots)?;
            if summaries.is_empty() {
                return Err(Error::Contract("no completed run summaries found".into()));
            }
            let table = compare::compare(&summaries);
            if let Some(dir) = out {
                table.write(&dir)?;
            }
            print!("{}", table.to_text());
            Ok(())
        }
        Command::ChainTest { seed, steps, out } => {
            let report = chain_test(seed, steps)?;
            emit(out.as_deref(), &report)
        }
    }
}

fn all_sequences(vocab: u32, len: usize) -> Vec<TokenSequence> {
    let mut out = vec![Vec::new()];
    for _ in 0..len {
        out = out.into_iter().flat_map(|p: Vec<u32>| (0..vocab).map(move |t| [p.clone(), vec![t]].concat())).collect();
    }
    out.into_iter().map(TokenSequence).collect()
}

/// Random toy agent with |V| = 3, L = 2: the chain targets the listener
/// posterior over all nine captions with the decoder as prior and proposal.
fn chain_test(seed: u64, steps: usize) -> Result<String, Error> {
    let cfg = AgentConfig { vocab: 3, seq_len: 2, d_text: 3, d_shared: 2, d_hidden: 4, feat_dim: 4, pooling: Pooling::Mean, eps_scale: 1e-3 };
    let mut r = rng::stream(seed, &[0]);
    let agent = AgentParams::init(&cfg, &mut r)?;
    let feat: Vec<f64> = (0..cfg.feat_dim).map(|_| r.random_range(-1.0..1.0)).collect();
    let h = agent.density_params(Modality::Vision, &agent.vis_project(&feat)?).loc;
    let seqs = all_sequences(3, 2);
    let dens: Vec<_> = seqs.iter().map(|s| agent.density_params(Modality::Text, &agent.text_encode(s))).collect();
    let prior: Vec<f64> = seqs.iter().map(|s| agent.decoder_log_prob(&feat, s).map(f64::exp)).collect::<Result<_, _>>()?;
    let start = std::time::Instant::now();
    let freq = run_chain_exactness_test(&dens, &h, &prior, &prior, steps, seed)?;
    let secs = start.elapsed().as_secs_f64();
    let w: Vec<f64> = dens.iter().zip(&prior).map(|(d, p)| log_density(d, &h).exp() * p).collect();
    let z: f64 = w.iter().sum();
    let tv: f64 = 0.5 * freq.iter().zip(&w).map(|(f, x)| (f - x / z).abs()).sum::<f64>();
    let mut s = String::from("state\tcaption\ttarget\tempirical\n");
    for (i, seq) in seqs.iter().enumerate() {
        s.push_str(&format!("{i}\t{seq}\t{:.6}\t{:.6}\n", w[i] / z, freq[i]));
    }
    s.push_str(&format!("# steps {steps} seed {seed} tv {tv:.6} seconds {secs:.3}\n"));
    Ok(s)
}
