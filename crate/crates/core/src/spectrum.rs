//! Spectra, binning, and a feed-forward spectrum-to-fingerprint encoder.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::denoiser::TrainReport;
use crate::fingerprint::Fingerprint;
use crate::flow::ConditioningVector;
use crate::params::{clip_global_norm, cosine_lr, AdamW, Init, OptimConfig, ParamSet};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SpectrumError {
    #[error("spectrum `{0}` has no peaks")]
    NoPeaks(String),
    #[error("invalid peak ({mz}, {intensity}) in spectrum `{id}`")]
    BadPeak { id: String, mz: f64, intensity: f64 },
    #[error("{what} must be positive, got {value}")]
    Domain { what: &'static str, value: f64 },
    #[error("shape mismatch in {what}: expected {expected}, got {got}")]
    ShapeMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("gradient contains NaN or infinity")]
    NonFiniteGradient,
    #[error("parameter `{0}` missing or misshapen")]
    BadParameter(String),
}

/// Peak list sorted by m/z.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub id: String,
    pub precursor_mz: f64,
    peaks: Vec<(f64, f64)>,
}

impl Spectrum {
    /// Sorts peaks by m/z (stable, so equal m/z keep their input order).
    pub fn new(id: impl Into<String>, precursor_mz: f64, mut peaks: Vec<(f64, f64)>) -> Result<Self, SpectrumError> {
        let id = id.into();
        if peaks.is_empty() {
            return Err(SpectrumError::NoPeaks(id));
        }
        if let Some(&(mz, intensity)) = peaks
            .iter()
            .find(|(mz, i)| !(mz.is_finite() && *mz > 0.0 && i.is_finite() && *i >= 0.0))
        {
            return Err(SpectrumError::BadPeak { id, mz, intensity });
        }
        if !(precursor_mz.is_finite() && precursor_mz > 0.0) {
            return Err(SpectrumError::Domain {
                what: "precursor m/z",
                value: precursor_mz,
            });
        }
        peaks.sort_by(|a, b| a.0.total_cmp(&b.0));
        Ok(Spectrum { id, precursor_mz, peaks })
    }

    pub fn peaks(&self) -> &[(f64, f64)] {
        &self.peaks
    }
}

/// Max-normalized intensity histogram.
#[derive(Debug, Clone, PartialEq)]
pub struct BinnedSpectrum {
    pub bins: Vec<f64>,
    /// Peaks at or above the m/z ceiling.
    pub dropped: usize,
}

pub fn bin_spectrum(s: &Spectrum, bin_width: f64, mz_max: f64) -> Result<BinnedSpectrum, SpectrumError> {
    if !(bin_width > 0.0) {
        return Err(SpectrumError::Domain { what: "bin width", value: bin_width });
    }
    if !(mz_max > 0.0) {
        return Err(SpectrumError::Domain { what: "m/z ceiling", value: mz_max });
    }
    let mut bins = vec![0.0; libm::ceil(mz_max / bin_width) as usize];
    let mut dropped = 0;
    for &(mz, intensity) in &s.peaks {
        let idx = libm::floor(mz / bin_width) as usize;
        if mz >= mz_max || idx >= bins.len() {
            dropped += 1;
            continue;
        }
        bins[idx] += intensity;
    }
    let max = bins.iter().copied().fold(0.0, f64::max);
    if max > 0.0 {
        bins.iter_mut().for_each(|b| *b /= max);
    }
    Ok(BinnedSpectrum { bins, dropped })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncoderConfig {
    pub bin_width: f64,
    pub mz_max: f64,
    pub hidden1: usize,
    pub hidden2: usize,
    pub out: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            bin_width: 1.0,
            mz_max: 1000.0,
            hidden1: 1024,
            hidden2: 1024,
            out: 2048,
        }
    }
}

impl EncoderConfig {
    pub fn input_dim(&self) -> usize {
        libm::ceil(self.mz_max / self.bin_width) as usize
    }

    pub fn validate(&self) -> Result<(), SpectrumError> {
        for (what, v) in [("bin width", self.bin_width), ("m/z ceiling", self.mz_max)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(SpectrumError::Domain { what, value: v });
            }
        }
        for (what, v) in [("hidden1", self.hidden1), ("hidden2", self.hidden2), ("out", self.out)] {
            if v == 0 {
                return Err(SpectrumError::Domain { what, value: 0.0 });
            }
        }
        Ok(())
    }

    fn specs(&self) -> Vec<(String, usize, usize, Init)> {
        let dims = [self.input_dim(), self.hidden1, self.hidden2, self.out];
        let mut specs = Vec::new();
        for l in 0..3 {
            specs.push((format!("enc.w{l}"), dims[l], dims[l + 1], Init::FanIn));
            specs.push((format!("enc.b{l}"), 1, dims[l + 1], Init::Zeros));
        }
        specs
    }
}

/// Three-layer perceptron from bins to fingerprint logits.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    config: EncoderConfig,
    params: ParamSet,
}

impl EncoderParams {
    pub fn init(config: EncoderConfig, seed: u64) -> Result<Self, SpectrumError> {
        config.validate()?;
        let params = ParamSet::initialize(&config.specs(), seed);
        Ok(EncoderParams { config, params })
    }

    pub fn from_parts(config: EncoderConfig, params: ParamSet) -> Result<Self, SpectrumError> {
        config.validate()?;
        let specs = config.specs();
        if specs.len() != params.len() {
            return Err(SpectrumError::ShapeMismatch {
                what: "parameter count",
                expected: specs.len(),
                got: params.len(),
            });
        }
        for ((name, r, c, _), (got, t)) in specs.iter().zip(params.iter()) {
            if name != got || t.rows != *r || t.cols != *c || t.data.len() != r * c {
                return Err(SpectrumError::BadParameter(name.clone()));
            }
        }
        if !params.all_finite() {
            return Err(SpectrumError::BadParameter("non-finite value".into()));
        }
        Ok(EncoderParams { config, params })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn bin(&self, s: &Spectrum) -> Result<BinnedSpectrum, SpectrumError> {
        bin_spectrum(s, self.config.bin_width, self.config.mz_max)
    }

    fn check_input(&self, len: usize) -> Result<(), SpectrumError> {
        let expected = self.config.input_dim();
        if len != expected {
            return Err(SpectrumError::ShapeMismatch {
                what: "binned spectrum",
                expected,
                got: len,
            });
        }
        Ok(())
    }

    /// Logits for a `rows x input_dim` node on `tape`.
    pub fn logits(&self, tape: &mut Tape<'_>, vars: &[Var], input: Var) -> Var {
        let mut z = input;
        for l in 0..3 {
            z = tape.matmul(z, vars[2 * l]);
            z = tape.add_row(z, vars[2 * l + 1]);
            if l < 2 {
                z = tape.relu(z);
            }
        }
        z
    }

    /// Predicted bit probabilities.
    pub fn encode(&self, b: &BinnedSpectrum) -> Result<ConditioningVector, SpectrumError> {
        self.check_input(b.bins.len())?;
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape, false);
        let x = tape.constant(1, b.bins.len(), b.bins.clone());
        let z = self.logits(&mut tape, &vars, x);
        let p = tape.sigmoid(z);
        Ok(ConditioningVector(tape.value(p).to_vec()))
    }

    /// Mean per-bit cross-entropy and its gradient over a batch.
    pub fn batch_gradient(&self, batch: &[(&BinnedSpectrum, &Fingerprint)]) -> Result<(f64, ParamSet), SpectrumError> {
        if batch.is_empty() {
            return Err(SpectrumError::EmptyCorpus);
        }
        let dim = self.config.input_dim();
        let mut x = Vec::with_capacity(batch.len() * dim);
        let mut y = Vec::with_capacity(batch.len() * self.config.out);
        for (b, fp) in batch {
            self.check_input(b.bins.len())?;
            if fp.len() != self.config.out {
                return Err(SpectrumError::ShapeMismatch {
                    what: "fingerprint",
                    expected: self.config.out,
                    got: fp.len(),
                });
            }
            x.extend_from_slice(&b.bins);
            y.extend(fp.to_f64());
        }
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape, true);
        let xv = tape.constant(batch.len(), dim, x);
        let z = self.logits(&mut tape, &vars, xv);
        let loss = tape.bce_with_logits(z, y);
        let mut grads = tape.backward(loss);
        let out = self.params.take_gradients(&mut grads, &vars);
        let l = tape.value(loss)[0];
        if !l.is_finite() || !out.all_finite() {
            return Err(SpectrumError::NonFiniteGradient);
        }
        Ok((l, out))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optim: OptimConfig,
    pub seed: u64,
}

impl Default for EncoderTrainConfig {
    fn default() -> Self {
        EncoderTrainConfig {
            epochs: 100,
            batch_size: 16,
            optim: OptimConfig::default(),
            seed: 0,
        }
    }
}

pub fn train_encoder(
    params: &mut EncoderParams,
    corpus: &[(Spectrum, Fingerprint)],
    cfg: &EncoderTrainConfig,
) -> Result<TrainReport, SpectrumError> {
    if corpus.is_empty() {
        return Err(SpectrumError::EmptyCorpus);
    }
    if cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(SpectrumError::Domain { what: "epochs and batch size", value: 0.0 });
    }
    let binned = corpus
        .iter()
        .map(|(s, fp)| params.bin(s).map(|b| (b, fp)))
        .collect::<Result<Vec<_>, _>>()?;
    let steps_per_epoch = corpus.len().div_ceil(cfg.batch_size);
    let total = steps_per_epoch * cfg.epochs;
    let mut opt = AdamW::new(&params.params, cfg.optim.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut epoch_loss = Vec::with_capacity(cfg.epochs);
    let mut step = 0;
    for _ in 0..cfg.epochs {
        crate::rng::shuffle(&mut order, &mut rng);
        let mut sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<_> = chunk.iter().map(|&i| (&binned[i].0, binned[i].1)).collect();
            let (loss, mut grads) = params.batch_gradient(&batch)?;
            sum += loss * batch.len() as f64;
            clip_global_norm(&mut grads, cfg.optim.clip_norm);
            opt.step(&mut params.params, &grads, cosine_lr(&cfg.optim, step, total));
            step += 1;
        }
        epoch_loss.push(sum / corpus.len() as f64);
    }
    Ok(TrainReport { epoch_loss })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> EncoderConfig {
        EncoderConfig {
            bin_width: 10.0,
            mz_max: 100.0,
            hidden1: 8,
            hidden2: 8,
            out: 16,
        }
    }

    fn spec(peaks: Vec<(f64, f64)>) -> Spectrum {
        Spectrum::new("s", 200.0, peaks).unwrap()
    }

    #[test]
    fn binning_examples() {
        let b = bin_spectrum(&spec(vec![(100.0, 1.0)]), 1.0, 1000.0).unwrap();
        assert_eq!(b.bins.len(), 1000);
        assert_eq!(b.bins[100], 1.0);
        assert_eq!(b.bins.iter().filter(|&&x| x != 0.0).count(), 1);

        let b = bin_spectrum(&spec(vec![(50.2, 1.0), (50.7, 3.0), (70.0, 2.0)]), 1.0, 1000.0).unwrap();
        assert_eq!(b.bins[50], 1.0);
        assert_eq!(b.bins[70], 0.5);

        let b = bin_spectrum(&spec(vec![(10.0, 1.0), (1000.0, 5.0), (1500.0, 1.0)]), 1.0, 1000.0).unwrap();
        assert_eq!(b.dropped, 2);
        assert_eq!(b.bins[10], 1.0);

        assert!(matches!(
            bin_spectrum(&spec(vec![(1.0, 1.0)]), 0.0, 1000.0),
            Err(SpectrumError::Domain { .. })
        ));
    }

    #[test]
    fn zero_intensity_stays_zero() {
        let b = bin_spectrum(&spec(vec![(5.0, 0.0)]), 1.0, 10.0).unwrap();
        assert!(b.bins.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn spectrum_validation() {
        assert!(matches!(Spectrum::new("x", 1.0, vec![]), Err(SpectrumError::NoPeaks(_))));
        assert!(Spectrum::new("x", 1.0, vec![(-1.0, 1.0)]).is_err());
        let s = Spectrum::new("x", 1.0, vec![(3.0, 1.0), (1.0, 2.0)]).unwrap();
        assert_eq!(s.peaks(), &[(1.0, 2.0), (3.0, 1.0)]);
    }

    #[test]
    fn encode_range_and_shape() {
        let p = EncoderParams::init(tiny(), 1).unwrap();
        let b = p.bin(&spec(vec![(12.0, 1.0), (55.0, 0.3)])).unwrap();
        let y = p.encode(&b).unwrap();
        assert_eq!(y.len(), 16);
        assert!(y.values().iter().all(|&v| v > 0.0 && v < 1.0));
        assert_eq!(y, p.encode(&b).unwrap());
        let wrong = BinnedSpectrum { bins: vec![0.0; 3], dropped: 0 };
        assert!(matches!(p.encode(&wrong), Err(SpectrumError::ShapeMismatch { .. })));
    }
}
