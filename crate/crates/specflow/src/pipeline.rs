//! End-to-end commands driven by a [`RunConfig`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::{info, warn};
use specflow_core::denoiser::{self, DenoiserConfig, DenoiserError, DenoiserParams, DenoiserTrainConfig, TrainReport};
use specflow_core::eval::{evaluate_dataset, filter_candidates, rank_by_frequency, EvalItem, EvalReport};
use specflow_core::finetune::{finetune, FinetuneConfig, FinetuneError, FinetuneItem};
use specflow_core::fingerprint::{morgan_fingerprint, Fingerprint, DEFAULT_BITS, DEFAULT_RADIUS};
use specflow_core::flow::{sample_molecule, ConditioningVector, InitialDistribution, SampleError};
use specflow_core::mces::{McesError, McesOptions, DEFAULT_NODE_BUDGET};
use specflow_core::molgraph::{formula_of, is_same_molecule, parse_smiles, Element, MolecularGraph};
use specflow_core::params::{Executor, OptimConfig};
use specflow_core::rng::trajectory_seed;
use specflow_core::spectrum::{train_encoder, EncoderConfig, EncoderParams, EncoderTrainConfig, Spectrum, SpectrumError};

use crate::checkpoint::{self, CheckpointError};
use crate::config::{ConfigError, RunConfig};
use crate::formats::{self, CandidateLine, FormatError, PairingEntry};
use crate::mgf::{self, MgfError};
use crate::report;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("{file}: {source}")]
    Mgf {
        file: String,
        #[source]
        source: MgfError,
    },
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("{0}")]
    Data(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl PipelineError {
    /// 1 usage or config, 2 data, 3 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) | PipelineError::Usage(_) => 1,
            PipelineError::Numerical(_) => 3,
            PipelineError::Checkpoint(CheckpointError::Denoiser(DenoiserError::NonFiniteGradient)) => 3,
            _ => 2,
        }
    }
}

impl From<DenoiserError> for PipelineError {
    fn from(e: DenoiserError) -> Self {
        match e {
            DenoiserError::NonFiniteGradient => PipelineError::Numerical(e.to_string()),
            DenoiserError::InvalidConfig(_) => PipelineError::Usage(e.to_string()),
            _ => PipelineError::Data(e.to_string()),
        }
    }
}

impl From<SpectrumError> for PipelineError {
    fn from(e: SpectrumError) -> Self {
        match e {
            SpectrumError::NonFiniteGradient => PipelineError::Numerical(e.to_string()),
            SpectrumError::Domain { .. } => PipelineError::Usage(e.to_string()),
            _ => PipelineError::Data(e.to_string()),
        }
    }
}

impl From<FinetuneError> for PipelineError {
    fn from(e: FinetuneError) -> Self {
        match e {
            FinetuneError::Denoiser(d) => d.into(),
            FinetuneError::Encoder(s) => s.into(),
            FinetuneError::ConditionWidth { .. } => PipelineError::Data(e.to_string()),
        }
    }
}

impl From<McesError> for PipelineError {
    fn from(e: McesError) -> Self {
        PipelineError::Data(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, PipelineError>;

fn optim(cfg: &RunConfig) -> Result<OptimConfig> {
    let d = OptimConfig::default();
    let o = OptimConfig {
        lr: cfg.parse_or("lr", d.lr)?,
        min_lr: cfg.parse_or("min_lr", d.min_lr)?,
        weight_decay: cfg.parse_or("weight_decay", d.weight_decay)?,
        beta1: cfg.parse_or("beta1", d.beta1)?,
        beta2: cfg.parse_or("beta2", d.beta2)?,
        eps: cfg.parse_or("eps", d.eps)?,
        clip_norm: cfg.parse_or("clip_norm", d.clip_norm)?,
    };
    if !(o.lr > 0.0 && o.min_lr >= 0.0 && o.clip_norm > 0.0 && o.eps > 0.0) {
        return Err(PipelineError::Usage("lr, eps and clip_norm must be positive".into()));
    }
    Ok(o)
}

fn positive(cfg: &RunConfig, key: &str, default: usize) -> Result<usize> {
    let v = cfg.parse_or(key, default)?;
    if v == 0 {
        return Err(PipelineError::Usage(format!("`{key}` must be positive")));
    }
    Ok(v)
}

fn fingerprint_settings(cfg: &RunConfig) -> Result<(usize, usize)> {
    Ok((cfg.parse_or("fp_radius", DEFAULT_RADIUS)?, positive(cfg, "fp_bits", DEFAULT_BITS)?))
}

/// Architecture from `layers`, `heads`, `node_dim`, `edge_dim`, `cond_hidden`, `time_dim`.
pub fn denoiser_config(cfg: &RunConfig, cond_dim: usize) -> Result<DenoiserConfig> {
    let d = DenoiserConfig::default();
    Ok(DenoiserConfig {
        layers: cfg.parse_or("layers", d.layers)?,
        heads: positive(cfg, "heads", d.heads)?,
        node_dim: positive(cfg, "node_dim", d.node_dim)?,
        edge_dim: positive(cfg, "edge_dim", d.edge_dim)?,
        cond_hidden: positive(cfg, "cond_hidden", d.cond_hidden)?,
        time_dim: positive(cfg, "time_dim", d.time_dim)?,
        cond_dim,
    })
}

fn history_path(cfg: &RunConfig, out: &Path) -> PathBuf {
    cfg.get("history")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(format!("{}.loss.csv", out.display())))
}

/// `epoch,loss` with exact float formatting.
pub fn history_csv(report: &TrainReport) -> String {
    let mut out = String::from("epoch,loss\n");
    for (k, l) in report.epoch_loss.iter().enumerate() {
        writeln!(out, "{},{l}", k + 1).expect("string write");
    }
    out
}

fn read_mgf(path: &Path) -> Result<Vec<Spectrum>> {
    let text = formats::read_text(path)?;
    mgf::parse_mgf(&text).map_err(|source| PipelineError::Mgf {
        file: path.display().to_string(),
        source,
    })
}

fn read_pairing(path: &Path) -> Result<Vec<PairingEntry>> {
    Ok(formats::parse_pairing(&formats::read_text(path)?, &path.display().to_string())?)
}

fn fingerprint_vector(g: &MolecularGraph, radius: usize, bits: usize) -> ConditioningVector {
    ConditioningVector(morgan_fingerprint(g, radius, bits).to_f64())
}

/// Spectra for every pairing entry, or an error naming the missing ids.
fn match_spectra<'a>(pairs: &'a [PairingEntry], spectra: &'a [Spectrum]) -> Result<Vec<(&'a PairingEntry, &'a Spectrum)>> {
    let by_id: BTreeMap<&str, &Spectrum> = spectra.iter().map(|s| (s.id.as_str(), s)).collect();
    let missing: Vec<&str> = pairs
        .iter()
        .map(|p| p.id.as_str())
        .filter(|id| !by_id.contains_key(id))
        .collect();
    if !missing.is_empty() {
        return Err(PipelineError::Data(format!(
            "{} of {} pairing ids have no spectrum: {}",
            missing.len(),
            pairs.len(),
            missing.join(", ")
        )));
    }
    let paired: BTreeSet<&str> = pairs.iter().map(|p| p.id.as_str()).collect();
    let unused = spectra.iter().filter(|s| !paired.contains(s.id.as_str())).count();
    if unused > 0 {
        warn!("{unused} of {} spectra have no pairing entry and are ignored", spectra.len());
    }
    Ok(pairs.iter().map(|p| (p, by_id[p.id.as_str()])).collect())
}

pub fn cmd_pretrain_decoder<E: Executor + ?Sized>(cfg: &RunConfig, exec: &E) -> Result<TrainReport> {
    let corpus_path = cfg.input_path("corpus")?;
    let out = cfg.output_path("out")?;
    let seed: u64 = cfg.parse_required("seed")?;
    let (radius, bits) = fingerprint_settings(cfg)?;
    let corpus = formats::parse_corpus(&formats::read_text(&corpus_path)?, &corpus_path.display().to_string())?;
    info!("{} molecules from {}", corpus.len(), corpus_path.display());
    let data: Vec<(MolecularGraph, ConditioningVector)> = corpus
        .iter()
        .map(|e| (e.graph.clone(), fingerprint_vector(&e.graph, radius, bits)))
        .collect();
    let mut params = DenoiserParams::init(denoiser_config(cfg, bits)?, seed)?;
    let tc = DenoiserTrainConfig {
        epochs: positive(cfg, "epochs", 200)?,
        batch_size: positive(cfg, "batch_size", 8)?,
        noise_draws: positive(cfg, "noise_draws", 1)?,
        optim: optim(cfg)?,
        seed,
    };
    let report = denoiser::train(&mut params, &data, &tc, exec)?;
    checkpoint::save_denoiser(&params, &out)?;
    formats::write_text(&history_path(cfg, &out), &history_csv(&report))?;
    info!(
        "epoch loss {:.4} -> {:.4}; checkpoint {}",
        report.epoch_loss[0],
        report.epoch_loss[report.epoch_loss.len() - 1],
        out.display()
    );
    Ok(report)
}

pub fn encoder_config(cfg: &RunConfig, out: usize) -> Result<EncoderConfig> {
    let d = EncoderConfig::default();
    let c = EncoderConfig {
        bin_width: cfg.parse_or("bin_width", d.bin_width)?,
        mz_max: cfg.parse_or("mz_max", d.mz_max)?,
        hidden1: positive(cfg, "hidden1", d.hidden1)?,
        hidden2: positive(cfg, "hidden2", d.hidden2)?,
        out,
    };
    c.validate()?;
    Ok(c)
}

pub fn cmd_pretrain_encoder(cfg: &RunConfig) -> Result<TrainReport> {
    let spectra = read_mgf(&cfg.input_path("mgf")?)?;
    let pairs = read_pairing(&cfg.input_path("pairing")?)?;
    let out = cfg.output_path("out")?;
    let seed: u64 = cfg.parse_required("seed")?;
    let (radius, bits) = fingerprint_settings(cfg)?;
    let corpus: Vec<(Spectrum, Fingerprint)> = match_spectra(&pairs, &spectra)?
        .into_iter()
        .map(|(p, s)| (s.clone(), morgan_fingerprint(&p.graph, radius, bits)))
        .collect();
    let mut params = EncoderParams::init(encoder_config(cfg, bits)?, seed)?;
    let tc = EncoderTrainConfig {
        epochs: positive(cfg, "epochs", 100)?,
        batch_size: positive(cfg, "batch_size", 16)?,
        optim: optim(cfg)?,
        seed,
    };
    let report = train_encoder(&mut params, &corpus, &tc)?;
    checkpoint::save_encoder(&params, &out)?;
    formats::write_text(&history_path(cfg, &out), &history_csv(&report))?;
    Ok(report)
}

pub fn cmd_finetune<E: Executor + ?Sized>(cfg: &RunConfig, exec: &E) -> Result<TrainReport> {
    let mut dec = checkpoint::load_denoiser(&cfg.input_path("decoder")?)?;
    let mut enc = checkpoint::load_encoder(&cfg.input_path("encoder")?)?;
    let spectra = read_mgf(&cfg.input_path("mgf")?)?;
    let pairs = read_pairing(&cfg.input_path("pairing")?)?;
    let out_dec = cfg.output_path("out_decoder")?;
    let out_enc = cfg.output_path("out_encoder")?;
    let seed: u64 = cfg.parse_required("seed")?;
    let corpus = match_spectra(&pairs, &spectra)?
        .into_iter()
        .map(|(p, s)| {
            Ok(FinetuneItem {
                input: enc.bin(s)?,
                target: p.graph.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let fc = FinetuneConfig {
        epochs: positive(cfg, "epochs", 50)?,
        batch_size: positive(cfg, "batch_size", 8)?,
        optim: optim(cfg)?,
        seed,
        freeze_encoder: cfg.flag("freeze_encoder")?,
    };
    let report = finetune(&mut dec, &mut enc, &corpus, &fc, exec)?;
    checkpoint::save_denoiser(&dec, &out_dec)?;
    checkpoint::save_encoder(&enc, &out_enc)?;
    formats::write_text(&history_path(cfg, &out_dec), &history_csv(&report))?;
    Ok(report)
}

/// One generation request.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub id: String,
    pub atoms: Vec<Element>,
    pub condition: ConditioningVector,
}

/// Generate `samples` candidates per record. Trajectory `j` of record `r`
/// uses its own seed, so the result does not depend on the executor.
pub fn sample_records<E: Executor + ?Sized>(
    model: &DenoiserParams,
    records: &[SampleRecord],
    samples: usize,
    steps: usize,
    seed: u64,
    exec: &E,
) -> Result<Vec<CandidateLine>> {
    let p0 = InitialDistribution::uniform();
    let jobs: Vec<(usize, usize)> = (0..records.len())
        .flat_map(|r| (0..samples).map(move |j| (r, j)))
        .collect();
    let results = exec.map(&jobs, &|&(r, j)| {
        let rec = &records[r];
        let s = trajectory_seed(seed, r as u64, j as u64);
        sample_molecule(model, &rec.atoms, &rec.condition, steps, &p0, s).map(|g| formats::candidate_line(&rec.id, j, &g))
    });
    results
        .into_iter()
        .map(|r| {
            r.map_err(|e| match e {
                SampleError::Flow(f) => PipelineError::Numerical(f.to_string()),
                SampleError::Predictor(d) => d.into(),
            })
        })
        .collect()
}

pub fn cmd_sample<E: Executor + ?Sized>(cfg: &RunConfig, exec: &E) -> Result<usize> {
    let model = checkpoint::load_denoiser(&cfg.input_path("decoder")?)?;
    let out = cfg.output_path("out")?;
    let seed: u64 = cfg.parse_required("seed")?;
    let samples = positive(cfg, "samples", 100)?;
    let steps = positive(cfg, "steps", 100)?;
    let (radius, bits) = fingerprint_settings(cfg)?;
    let records: Vec<SampleRecord> = if cfg.flag("gold_fingerprints")? {
        if cfg.contains("pairing") {
            read_pairing(&cfg.input_path("pairing")?)?
                .into_iter()
                .map(|p| SampleRecord {
                    atoms: p.formula.atoms(),
                    condition: fingerprint_vector(&p.graph, radius, bits),
                    id: p.id,
                })
                .collect()
        } else {
            let path = cfg.input_path("corpus")?;
            formats::parse_corpus(&formats::read_text(&path)?, &path.display().to_string())?
                .into_iter()
                .map(|e| SampleRecord {
                    atoms: formula_of(&e.graph).atoms(),
                    condition: fingerprint_vector(&e.graph, radius, bits),
                    id: e.id,
                })
                .collect()
        }
    } else {
        let enc = checkpoint::load_encoder(&cfg.input_path("encoder")?)?;
        let spectra = read_mgf(&cfg.input_path("mgf")?)?;
        let pairs = read_pairing(&cfg.input_path("pairing")?)?;
        match_spectra(&pairs, &spectra)?
            .into_iter()
            .map(|(p, s)| {
                Ok(SampleRecord {
                    id: p.id.clone(),
                    atoms: p.formula.atoms(),
                    condition: enc.encode(&enc.bin(s)?)?,
                })
            })
            .collect::<Result<Vec<_>>>()?
    };
    info!("sampling {samples} x {} records with {steps} steps", records.len());
    let lines = sample_records(&model, &records, samples, steps, seed, exec)?;
    formats::write_text(&out, &formats::write_candidates(&lines))?;
    Ok(lines.len())
}

/// Group candidate lines under the truth ids; any id on one side only is an error.
pub fn eval_items(truth: &[PairingEntry], candidates: &[CandidateLine]) -> Result<Vec<EvalItem>> {
    let mut grouped: BTreeMap<&str, Vec<&CandidateLine>> = BTreeMap::new();
    for c in candidates {
        grouped.entry(c.id.as_str()).or_default().push(c);
    }
    let truth_ids: BTreeSet<&str> = truth.iter().map(|t| t.id.as_str()).collect();
    let unknown: Vec<&str> = grouped.keys().copied().filter(|id| !truth_ids.contains(id)).collect();
    let absent: Vec<&str> = truth_ids.iter().copied().filter(|id| !grouped.contains_key(id)).collect();
    if !unknown.is_empty() || !absent.is_empty() {
        return Err(PipelineError::Data(format!(
            "id mismatch: {} candidate ids without truth [{}], {} truth ids without candidates [{}]",
            unknown.len(),
            unknown.join(", "),
            absent.len(),
            absent.join(", ")
        )));
    }
    truth
        .iter()
        .map(|t| {
            let mut lines = grouped[t.id.as_str()].clone();
            lines.sort_by_key(|c| c.trajectory);
            let samples = lines
                .iter()
                .map(|c| {
                    parse_smiles(&c.smiles).map_err(|e| {
                        PipelineError::Data(format!("candidate `{}` for {}: {e}", c.smiles, c.id))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(EvalItem {
                id: t.id.clone(),
                truth: t.graph.clone(),
                samples,
            })
        })
        .collect()
}

/// Top-k accuracy in percent for each cutoff.
pub fn topk_accuracy(items: &[EvalItem], ks: &[usize]) -> Vec<(usize, f64)> {
    let ranks: Vec<Option<usize>> = items
        .iter()
        .map(|it| {
            let (kept, _) = filter_candidates(&it.samples);
            rank_by_frequency(&kept)
                .entries
                .iter()
                .position(|e| is_same_molecule(&e.graph, &it.truth))
        })
        .collect();
    ks.iter()
        .map(|&k| {
            let hits = ranks.iter().filter(|r| matches!(r, Some(p) if *p < k)).count();
            let pct = if items.is_empty() { 0.0 } else { 100.0 * hits as f64 / items.len() as f64 };
            (k, pct)
        })
        .collect()
}

pub struct Evaluation {
    pub report: EvalReport,
    pub table: String,
}

pub fn cmd_evaluate<E: Executor + ?Sized>(cfg: &RunConfig, exec: &E) -> Result<Evaluation> {
    let cand_path = cfg.input_path("candidates")?;
    let candidates = formats::parse_candidates(&formats::read_text(&cand_path)?, &cand_path.display().to_string())?;
    let truth = read_pairing(&cfg.input_path("pairing")?)?;
    let items = eval_items(&truth, &candidates)?;
    let opts = McesOptions {
        node_budget: cfg.parse_or("mces_budget", DEFAULT_NODE_BUDGET)?,
        threshold: cfg.get("mces_threshold").map(|_| cfg.parse_required("mces_threshold")).transpose()?,
    };
    let report = evaluate_dataset(&items, &opts, exec)?;
    if let Some(out) = cfg.get("out") {
        formats::write_text(Path::new(out), &report::to_json(&report))?;
    }
    let ks: Vec<usize> = match cfg.get("k") {
        None => vec![1, 10],
        Some(v) => v
            .split(',')
            .map(|x| x.trim().parse::<usize>().ok().filter(|&k| k > 0))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| ConfigError::BadValue {
                key: "k".into(),
                value: v.to_string(),
            })?,
    };
    let mut table = report::summary_table(&report);
    if ks != [1, 10] {
        for (k, acc) in topk_accuracy(&items, &ks) {
            writeln!(table, "top-{k} accuracy: {acc:.2}%").expect("string write");
        }
    }
    Ok(Evaluation { report, table })
}

pub fn cmd_fingerprint(cfg: &RunConfig) -> Result<String> {
    let path = cfg.input_path("corpus")?;
    let (radius, bits) = fingerprint_settings(cfg)?;
    let corpus = formats::parse_corpus(&formats::read_text(&path)?, &path.display().to_string())?;
    let fps: Vec<(String, Fingerprint)> = corpus
        .into_iter()
        .map(|e| (e.id, morgan_fingerprint(&e.graph, radius, bits)))
        .collect();
    let text = formats::write_fingerprint_dump(&fps);
    if let Some(out) = cfg.get("out") {
        formats::write_text(Path::new(out), &text)?;
    }
    Ok(text)
}
