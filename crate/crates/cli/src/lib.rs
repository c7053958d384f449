//! Command-line front end: loads an experiment config, runs figure targets and writes
//! CSVs, plot scripts and a run manifest.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use qzeeman::experiment::ExperimentConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub mod tasks;

use tasks::Artifact;

#[derive(Debug, Parser)]
#[command(name = "qzeeman", version, about = "Quadratic Zeeman pulse simulations")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Experiment config (JSON)
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Output directory; overrides `output_dir` in the config
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// RNG seed; overrides every seed in the config
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Config override, `dotted.key=value` (repeatable)
    #[arg(long = "override", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,

    /// Worker threads (default: all cores)
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Coil current trace
    Circuit,
    /// Larmor frequencies and cumulative phases
    Phases,
    /// Probe amplitude versus pulse length
    AlphaVsTau,
    /// Quadratic phase versus pulse length for each voltage
    PhaseScaling,
    /// Thermal-ensemble dephasing table
    Dephasing,
    /// Synthetic FID and its fit
    Fid,
    /// Every target above
    All,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Circuit => "circuit",
            Command::Phases => "phases",
            Command::AlphaVsTau => "alpha-vs-tau",
            Command::PhaseScaling => "phase-scaling",
            Command::Dephasing => "dephasing",
            Command::Fid => "fid",
            Command::All => "all",
        }
    }

    fn targets(self) -> Vec<Command> {
        match self {
            Command::All => vec![
                Command::Circuit,
                Command::Phases,
                Command::AlphaVsTau,
                Command::PhaseScaling,
                Command::Fid,
                Command::Dephasing,
            ],
            c => vec![c],
        }
    }
}

/// Options shared by every subcommand.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub config: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub overrides: Vec<String>,
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub target: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_sha256: String,
    pub seed: u64,
    pub subcommand: String,
    pub started: String,
    pub finished: String,
    pub files: Vec<String>,
    pub failures: Vec<Failure>,
    pub versions: serde_json::Value,
    pub overrides: Vec<String>,
    /// The effective config after overrides; rerunning it reproduces the outputs.
    pub config: ExperimentConfig,
}

pub const MANIFEST_NAME: &str = "manifest.json";

/// Parse, apply overrides and the seed flag, and validate.
pub fn load_config(opts: &RunOptions) -> Result<ExperimentConfig> {
    let path = opts.config.as_ref().context("no config given (use --config PATH)")?;
    let text = fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
    let mut cfg = ExperimentConfig::from_json_str(&text, &opts.overrides)
        .map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
    if let Some(seed) = opts.seed {
        cfg.seed = seed;
        cfg.montecarlo.seed = None;
    }
    cfg.validate().with_context(|| format!("{}: invalid after --seed", path.display()))?;
    Ok(cfg)
}

/// SHA-256 of the canonical JSON form of `cfg`.
pub fn config_hash(cfg: &ExperimentConfig) -> Result<String> {
    let canonical = serde_json::to_vec(cfg)?;
    Ok(Sha256::digest(&canonical).iter().map(|b| format!("{b:02x}")).collect())
}

fn run_target(cmd: Command, cfg: &ExperimentConfig) -> Result<Vec<Artifact>> {
    match cmd {
        Command::Circuit => tasks::circuit(cfg),
        Command::Phases => tasks::phases(cfg),
        Command::AlphaVsTau => tasks::alpha_vs_tau(cfg),
        Command::PhaseScaling => tasks::phase_scaling_task(cfg),
        Command::Dephasing => tasks::dephasing(cfg),
        Command::Fid => tasks::fid(cfg),
        Command::All => unreachable!("expanded by Command::targets"),
    }
}

fn write_artifact(dir: &Path, a: &Artifact) -> Result<()> {
    fs::write(dir.join(&a.name), &a.bytes).with_context(|| format!("writing {}", a.name))
}

/// Run one subcommand end to end. The config is validated before anything is
/// written; the manifest is written last.
pub fn run_subcommand(cmd: Command, opts: &RunOptions) -> Result<Manifest> {
    let cfg = load_config(opts)?;
    let out = opts.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.output_dir));
    let started = chrono::Utc::now().to_rfc3339();

    let pool = match opts.threads {
        Some(0) => anyhow::bail!("--threads must be at least 1"),
        Some(n) => rayon::ThreadPoolBuilder::new().num_threads(n).build()?,
        None => rayon::ThreadPoolBuilder::new().build()?,
    };

    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let mut files = Vec::new();
    let mut failures = Vec::new();
    for target in cmd.targets() {
        match pool.install(|| run_target(target, &cfg)) {
            Ok(artifacts) => {
                for a in &artifacts {
                    write_artifact(&out, a)?;
                    files.push(a.name.clone());
                }
            }
            Err(e) => failures.push(Failure { target: target.name().to_string(), error: format!("{e:#}") }),
        }
    }

    let manifest = Manifest {
        config_sha256: config_hash(&cfg)?,
        seed: cfg.seed,
        subcommand: cmd.name().to_string(),
        started,
        finished: chrono::Utc::now().to_rfc3339(),
        files,
        failures,
        versions: serde_json::json!({
            "qzeeman": env!("CARGO_PKG_VERSION"),
            "schema": qzeeman::experiment::SCHEMA_VERSION,
        }),
        overrides: opts.overrides.clone(),
        config: cfg,
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(out.join(MANIFEST_NAME), text).context("writing manifest")?;
    Ok(manifest)
}

/// Process entry point; returns the exit status.
pub fn main_with(cli: Cli) -> i32 {
    let opts = RunOptions {
        config: cli.config,
        out: cli.out,
        seed: cli.seed,
        overrides: cli.overrides,
        threads: cli.threads,
    };
    match run_subcommand(cli.command, &opts) {
        Ok(m) if m.failures.is_empty() => 0,
        Ok(m) => {
            for f in &m.failures {
                eprintln!("error: {}: {}", f.target, f.error);
            }
            1
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            2
        }
    }
}
