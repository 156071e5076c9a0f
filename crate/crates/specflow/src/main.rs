use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;
use specflow::config::RunConfig;
use specflow::exec::PoolExecutor;
use specflow::formats;
use specflow::pipeline::{self, PipelineError};
use specflow_core::fingerprint::morgan_fingerprint;
use specflow_core::mces::{mces_with, McesOptions, DEFAULT_NODE_BUDGET};
use specflow_core::molgraph::{parse_smiles, write_canonical, MolecularGraph};

/// Formula-constrained molecular graph generation from mass spectra.
#[derive(Parser, Debug)]
#[command(name = "specflow", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
struct Common {
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set lr=0.0005`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Sampler steps.
    #[arg(long, global = true)]
    steps: Option<usize>,
    /// Samples per spectrum.
    #[arg(long, global = true)]
    samples: Option<usize>,
    /// Comma-separated top-k cutoffs to report in `evaluate`.
    #[arg(long, global = true)]
    k: Option<String>,
    /// Condition on fingerprints computed from the reference structures.
    #[arg(long, global = true)]
    gold_fingerprints: bool,
    #[arg(long, global = true)]
    freeze_encoder: bool,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train the graph denoiser on a SMILES corpus conditioned on its fingerprints.
    PretrainDecoder(Common),
    /// Train the spectrum encoder against paired structures.
    PretrainEncoder(Common),
    /// Train encoder and denoiser jointly on paired spectra.
    Finetune(Common),
    /// Generate candidate structures.
    Sample(Common),
    /// Score candidate files against the reference structures.
    Evaluate(Common),
    /// Fingerprint SMILES arguments, or the corpus named by the `corpus` key.
    Fingerprint {
        smiles: Vec<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Edge-based distance between two structures.
    Mces {
        first: String,
        second: String,
        #[command(flatten)]
        common: Common,
    },
    /// Canonical SMILES for each argument.
    Canon {
        #[arg(required = true)]
        smiles: Vec<String>,
        #[command(flatten)]
        common: Common,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::PretrainDecoder(c)
            | Command::PretrainEncoder(c)
            | Command::Finetune(c)
            | Command::Sample(c)
            | Command::Evaluate(c) => c,
            Command::Fingerprint { common, .. } | Command::Mces { common, .. } | Command::Canon { common, .. } => common,
        }
    }
}

fn build_config(c: &Common) -> Result<RunConfig, PipelineError> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::new(),
    };
    for o in &c.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| PipelineError::Usage(format!("--set expects KEY=VALUE, got `{o}`")))?;
        cfg.set(k.trim(), v.trim());
    }
    if let Some(s) = c.seed {
        cfg.set("seed", s);
    }
    if let Some(s) = c.steps {
        cfg.set("steps", s);
    }
    if let Some(s) = c.samples {
        cfg.set("samples", s);
    }
    if let Some(k) = &c.k {
        cfg.set("k", k);
    }
    if c.gold_fingerprints {
        cfg.set("gold_fingerprints", true);
    }
    if c.freeze_encoder {
        cfg.set("freeze_encoder", true);
    }
    Ok(cfg)
}

fn executor(c: &Common) -> Result<PoolExecutor, PipelineError> {
    let threads = c
        .threads
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    PoolExecutor::new(threads).map_err(|e| PipelineError::Usage(format!("thread pool: {e}")))
}

fn smiles_arg(s: &str) -> Result<MolecularGraph, PipelineError> {
    parse_smiles(s).map_err(|e| PipelineError::Data(format!("`{s}`: {e}")))
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let common = cli.command.common();
    let cfg = build_config(common)?;
    match &cli.command {
        Command::PretrainDecoder(c) => {
            let r = pipeline::cmd_pretrain_decoder(&cfg, &executor(c)?)?;
            println!("trained {} epochs, final loss {:.6}", r.epoch_loss.len(), r.epoch_loss.last().unwrap_or(&f64::NAN));
        }
        Command::PretrainEncoder(_) => {
            let r = pipeline::cmd_pretrain_encoder(&cfg)?;
            println!("trained {} epochs, final loss {:.6}", r.epoch_loss.len(), r.epoch_loss.last().unwrap_or(&f64::NAN));
        }
        Command::Finetune(c) => {
            let r = pipeline::cmd_finetune(&cfg, &executor(c)?)?;
            println!("trained {} epochs, final loss {:.6}", r.epoch_loss.len(), r.epoch_loss.last().unwrap_or(&f64::NAN));
        }
        Command::Sample(c) => {
            let exec = executor(c)?;
            info!("{} worker threads", exec.threads());
            let n = pipeline::cmd_sample(&cfg, &exec)?;
            println!("wrote {n} candidates");
        }
        Command::Evaluate(c) => {
            let e = pipeline::cmd_evaluate(&cfg, &executor(c)?)?;
            print!("{}", e.table);
        }
        Command::Fingerprint { smiles, .. } => {
            if smiles.is_empty() {
                print!("{}", pipeline::cmd_fingerprint(&cfg)?);
            } else {
                let radius = cfg.parse_or("fp_radius", specflow_core::fingerprint::DEFAULT_RADIUS)?;
                let bits = cfg.parse_or("fp_bits", specflow_core::fingerprint::DEFAULT_BITS)?;
                let fps = smiles
                    .iter()
                    .map(|s| Ok((s.clone(), morgan_fingerprint(&smiles_arg(s)?, radius, bits))))
                    .collect::<Result<Vec<_>, PipelineError>>()?;
                print!("{}", formats::write_fingerprint_dump(&fps));
            }
        }
        Command::Mces { first, second, .. } => {
            let opts = McesOptions {
                node_budget: cfg.parse_or("mces_budget", DEFAULT_NODE_BUDGET)?,
                threshold: cfg.get("mces_threshold").map(|_| cfg.parse_required("mces_threshold")).transpose()?,
            };
            let r = mces_with(&smiles_arg(first)?, &smiles_arg(second)?, &opts)?;
            if r.lower_bound {
                println!("{} (lower bound)", r.distance);
            } else {
                println!("{}", r.distance);
            }
        }
        Command::Canon { smiles, .. } => {
            for s in smiles {
                println!("{}", write_canonical(&smiles_arg(s)?));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("FLOWMS_LOG", "info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
