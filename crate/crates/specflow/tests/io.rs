use proptest::prelude::*;
use specflow::checkpoint::{
    denoiser_from_bytes, denoiser_to_bytes, encoder_from_bytes, encoder_to_bytes, load_denoiser, save_denoiser, CheckpointError,
    VERSION,
};
use specflow::mgf::{parse_mgf, serialize_mgf};
use specflow_core::denoiser::{DenoiserConfig, DenoiserError, DenoiserParams};
use specflow_core::flow::{ConditioningVector, NoisyGraphState};
use specflow_core::molgraph::parse_smiles;
use specflow_core::spectrum::{EncoderConfig, EncoderParams, Spectrum};

fn config(cond_dim: usize) -> DenoiserConfig {
    DenoiserConfig {
        layers: 2,
        heads: 2,
        node_dim: 8,
        edge_dim: 8,
        cond_hidden: 8,
        time_dim: 4,
        cond_dim,
    }
}

fn encoder() -> EncoderParams {
    let cfg = EncoderConfig {
        bin_width: 0.5,
        mz_max: 30.0,
        hidden1: 8,
        hidden2: 6,
        out: 16,
    };
    EncoderParams::init(cfg, 3).unwrap()
}

#[test]
fn denoiser_round_trip_is_bit_exact() {
    let p = DenoiserParams::init(config(16), 7).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.flwm");
    save_denoiser(&p, &path).unwrap();
    let q = load_denoiser(&path).unwrap();
    assert_eq!(q.config(), p.config());
    for ((na, a), (nb, b)) in p.params().iter().zip(q.params().iter()) {
        assert_eq!(na, nb);
        let bits = |t: &specflow_core::params::Tensor| t.data.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(a), bits(b), "{na}");
    }
    assert_eq!(denoiser_to_bytes(&q), denoiser_to_bytes(&p));
}

#[test]
fn encoder_round_trip_is_bit_exact() {
    let e = encoder();
    let bytes = encoder_to_bytes(&e);
    let back = encoder_from_bytes(&bytes).unwrap();
    assert_eq!(back.config(), e.config());
    assert_eq!(encoder_to_bytes(&back), bytes);
}

#[test]
fn corrupted_header_is_bad_magic() {
    let mut bytes = denoiser_to_bytes(&DenoiserParams::init(config(16), 1).unwrap());
    bytes[0] = b'X';
    assert!(matches!(denoiser_from_bytes(&bytes), Err(CheckpointError::BadMagic { .. })));
    let enc = encoder_to_bytes(&encoder());
    assert!(matches!(denoiser_from_bytes(&enc), Err(CheckpointError::BadMagic { .. })));
}

#[test]
fn other_version_is_rejected() {
    let mut bytes = denoiser_to_bytes(&DenoiserParams::init(config(16), 1).unwrap());
    bytes[4..8].copy_from_slice(&(VERSION + 1).to_le_bytes());
    assert!(matches!(
        denoiser_from_bytes(&bytes),
        Err(CheckpointError::VersionMismatch { found, expected }) if found == VERSION + 1 && expected == VERSION
    ));
}

#[test]
fn every_truncation_is_detected() {
    let bytes = denoiser_to_bytes(&DenoiserParams::init(config(4), 1).unwrap());
    for cut in (0..bytes.len()).step_by(97).chain([bytes.len() - 1]) {
        let r = denoiser_from_bytes(&bytes[..cut]);
        assert!(matches!(r, Err(CheckpointError::TruncatedFile { .. })), "cut {cut}: {r:?}");
    }
}

#[test]
fn trailing_bytes_are_malformed() {
    let mut bytes = denoiser_to_bytes(&DenoiserParams::init(config(4), 1).unwrap());
    bytes.push(0);
    assert!(matches!(denoiser_from_bytes(&bytes), Err(CheckpointError::Malformed(_))));
}

#[test]
fn condition_width_from_checkpoint_is_enforced() {
    let p = denoiser_from_bytes(&denoiser_to_bytes(&DenoiserParams::init(config(16), 1).unwrap())).unwrap();
    let state = NoisyGraphState {
        graph: parse_smiles("CCO").unwrap(),
        condition: ConditioningVector(vec![0.0; 32]),
        t: 0.5,
    };
    assert!(matches!(p.forward(&state), Err(DenoiserError::ShapeMismatch { .. })));
}

fn spectrum_strategy() -> impl Strategy<Value = Spectrum> {
    (
        "[A-Za-z0-9_.:-]{1,12}",
        1.0f64..2000.0,
        prop::collection::vec((0.0f64..2000.0, 0.0f64..1e6), 1..40),
    )
        .prop_map(|(id, pmz, peaks)| Spectrum::new(id, pmz, peaks).unwrap())
}

proptest! {
    #[test]
    fn mgf_round_trips(spectra in prop::collection::vec(spectrum_strategy(), 1..6)) {
        let text = serialize_mgf(&spectra);
        prop_assert_eq!(parse_mgf(&text).unwrap(), spectra);
    }
}
