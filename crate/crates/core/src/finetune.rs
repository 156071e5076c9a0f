//! Joint training of the spectrum encoder and the denoiser.
//!
//! The encoder's sigmoid output is the denoiser's conditioning vector, so the
//! edge loss back-propagates into both parameter sets.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tape;
use crate::denoiser::{BatchItem, DenoiserError, DenoiserParams, TrainReport};
use crate::flow::{sample_noisy, ConditioningVector, InitialDistribution, NoisyGraphState};
use crate::molgraph::MolecularGraph;
use crate::params::{clip_global_norm, cosine_lr, AdamW, Executor, OptimConfig, ParamSet};
use crate::rng::{mix, shuffle};
use crate::spectrum::{BinnedSpectrum, EncoderParams, SpectrumError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FinetuneError {
    #[error(transparent)]
    Denoiser(#[from] DenoiserError),
    #[error(transparent)]
    Encoder(#[from] SpectrumError),
    #[error("encoder emits {encoder} values but the denoiser expects {denoiser}")]
    ConditionWidth { encoder: usize, denoiser: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneItem {
    pub input: BinnedSpectrum,
    pub target: MolecularGraph,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optim: OptimConfig,
    pub seed: u64,
    pub freeze_encoder: bool,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            epochs: 50,
            batch_size: 8,
            optim: OptimConfig::default(),
            seed: 0,
            freeze_encoder: false,
        }
    }
}

/// Edge loss and gradients for one corrupted example.
///
/// `noisy` carries the corrupted graph and time; its condition is ignored in
/// favor of the encoder output. The encoder gradient is `None` when frozen.
pub fn joint_gradient(
    dec: &DenoiserParams,
    enc: &EncoderParams,
    input: &BinnedSpectrum,
    noisy: &BatchItem,
    freeze_encoder: bool,
) -> Result<(f64, ParamSet, Option<ParamSet>), FinetuneError> {
    check_widths(dec, enc)?;
    let dim = enc.config().input_dim();
    if input.bins.len() != dim {
        return Err(SpectrumError::ShapeMismatch {
            what: "binned spectrum",
            expected: dim,
            got: input.bins.len(),
        }
        .into());
    }
    let mut tape = Tape::new();
    let dvars = dec.params().bind(&mut tape, true);
    let evars = enc.params().bind(&mut tape, !freeze_encoder);
    let x = tape.constant(1, dim, input.bins.clone());
    let z = enc.logits(&mut tape, &evars, x);
    let cond = tape.sigmoid(z);
    let loss = dec.tape_loss(&mut tape, &dvars, noisy, cond)?;
    let grads = tape.backward(loss);
    let mut dg = dec.params().zeros_like();
    dec.params().accumulate(&grads, &dvars, &mut dg);
    let eg = (!freeze_encoder).then(|| {
        let mut eg = enc.params().zeros_like();
        enc.params().accumulate(&grads, &evars, &mut eg);
        eg
    });
    Ok((tape.value(loss)[0], dg, eg))
}

fn check_widths(dec: &DenoiserParams, enc: &EncoderParams) -> Result<(), FinetuneError> {
    if enc.config().out != dec.config().cond_dim {
        return Err(FinetuneError::ConditionWidth {
            encoder: enc.config().out,
            denoiser: dec.config().cond_dim,
        });
    }
    Ok(())
}

pub fn finetune<E: Executor + ?Sized>(
    dec: &mut DenoiserParams,
    enc: &mut EncoderParams,
    corpus: &[FinetuneItem],
    cfg: &FinetuneConfig,
    exec: &E,
) -> Result<TrainReport, FinetuneError> {
    if corpus.is_empty() {
        return Err(DenoiserError::EmptyCorpus.into());
    }
    if cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(DenoiserError::InvalidConfig("epochs and batch_size must be positive").into());
    }
    check_widths(dec, enc)?;
    let p0 = InitialDistribution::uniform();
    let total = corpus.len().div_ceil(cfg.batch_size) * cfg.epochs;
    let mut dopt = AdamW::new(dec.params(), cfg.optim.clone());
    let mut eopt = AdamW::new(enc.params(), cfg.optim.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut epoch_loss = Vec::with_capacity(cfg.epochs);
    let mut step = 0;
    for _ in 0..cfg.epochs {
        shuffle(&mut order, &mut rng);
        let mut sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<(usize, BatchItem)> = chunk
                .iter()
                .map(|&i| {
                    let g = &corpus[i].target;
                    let t: f64 = rng.random();
                    let graph = sample_noisy(g, t, &p0, mix(cfg.seed, rng.random())).expect("t in [0, 1)");
                    let state = NoisyGraphState {
                        graph,
                        condition: ConditioningVector(Vec::new()),
                        t,
                    };
                    (i, BatchItem { state, target: g.clone() })
                })
                .collect();
            let (d, e): (&DenoiserParams, &EncoderParams) = (dec, enc);
            let parts = exec.map(&batch, &|(i, item)| joint_gradient(d, e, &corpus[*i].input, item, cfg.freeze_encoder));
            let mut dg = dec.params().zeros_like();
            let mut eg = enc.params().zeros_like();
            let mut loss = 0.0;
            for part in parts {
                let (l, g, ge) = part?;
                loss += l;
                dg.add_assign(&g);
                if let Some(ge) = ge {
                    eg.add_assign(&ge);
                }
            }
            let scale = 1.0 / batch.len() as f64;
            dg.scale(scale);
            eg.scale(scale);
            if !loss.is_finite() || !dg.all_finite() || !eg.all_finite() {
                return Err(DenoiserError::NonFiniteGradient.into());
            }
            sum += loss;
            let lr = cosine_lr(&cfg.optim, step, total);
            clip_global_norm(&mut dg, cfg.optim.clip_norm);
            dopt.step(dec.params_mut(), &dg, lr);
            if !cfg.freeze_encoder {
                clip_global_norm(&mut eg, cfg.optim.clip_norm);
                eopt.step(enc.params_mut(), &eg, lr);
            }
            step += 1;
        }
        epoch_loss.push(sum / corpus.len() as f64);
    }
    Ok(TrainReport { epoch_loss })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::DenoiserConfig;
    use crate::molgraph::parse_smiles;
    use crate::params::Sequential;
    use crate::spectrum::{EncoderConfig, Spectrum};
    use alloc::vec;

    fn models() -> (DenoiserParams, EncoderParams) {
        let dcfg = DenoiserConfig {
            layers: 1,
            heads: 2,
            node_dim: 8,
            edge_dim: 8,
            cond_hidden: 8,
            time_dim: 4,
            cond_dim: 12,
        };
        let ecfg = EncoderConfig {
            bin_width: 10.0,
            mz_max: 100.0,
            hidden1: 8,
            hidden2: 8,
            out: 12,
        };
        (DenoiserParams::init(dcfg, 1).unwrap(), EncoderParams::init(ecfg, 2).unwrap())
    }

    fn corpus(enc: &EncoderParams) -> Vec<FinetuneItem> {
        ["CCO", "CC=O", "C#N"]
            .iter()
            .enumerate()
            .map(|(k, s)| FinetuneItem {
                input: enc.bin(&Spectrum::new("x", 100.0, vec![(10.0 + 20.0 * k as f64, 1.0)]).unwrap()).unwrap(),
                target: parse_smiles(s).unwrap(),
            })
            .collect()
    }

    #[test]
    fn frozen_encoder_is_untouched() {
        let (mut dec, mut enc) = models();
        let before = enc.clone();
        let dec_before = dec.clone();
        let data = corpus(&enc);
        let cfg = FinetuneConfig { epochs: 3, batch_size: 2, freeze_encoder: true, ..FinetuneConfig::default() };
        finetune(&mut dec, &mut enc, &data, &cfg, &Sequential).unwrap();
        assert_eq!(enc, before);
        assert_ne!(dec, dec_before);
    }

    #[test]
    fn unfrozen_updates_both_and_learns() {
        let (mut dec, mut enc) = models();
        let before = enc.clone();
        let data = corpus(&enc);
        let cfg = FinetuneConfig {
            epochs: 40,
            batch_size: 3,
            optim: OptimConfig { lr: 3e-3, ..OptimConfig::default() },
            ..FinetuneConfig::default()
        };
        let r = finetune(&mut dec, &mut enc, &data, &cfg, &Sequential).unwrap();
        assert_ne!(enc, before);
        let head: f64 = r.epoch_loss[..5].iter().sum();
        let tail: f64 = r.epoch_loss[35..].iter().sum();
        assert!(tail < head, "{:?}", r.epoch_loss);
    }

    #[test]
    fn width_mismatch() {
        let (mut dec, _) = models();
        let mut enc = EncoderParams::init(EncoderConfig { out: 5, ..*models().1.config() }, 0).unwrap();
        let data = corpus(&enc);
        assert!(matches!(
            finetune(&mut dec, &mut enc, &data, &FinetuneConfig::default(), &Sequential),
            Err(FinetuneError::ConditionWidth { encoder: 5, denoiser: 12 })
        ));
    }
}
