mod common;

use common::{perturbed, random_graph, rng, small_config};
use rand::Rng;
use specflow_core::denoiser::{edge_loss, BatchItem, DenoiserParams};
use specflow_core::fingerprint::{default_fingerprint, morgan_fingerprint, Fingerprint};
use specflow_core::flow::{sample_noisy, BondDistribution, ConditioningVector, EdgeGrid, InitialDistribution, NoisyGraphState};
use specflow_core::molgraph::parse_smiles;
use specflow_core::params::ParamSet;
use specflow_core::spectrum::{BinnedSpectrum, EncoderConfig, EncoderParams, Spectrum};

/// Central-difference steps. The larger one can straddle a ReLU kink, the
/// smaller one loses tiny components to roundoff; a wrong gradient fails both.
const STEPS: [f64; 2] = [1e-4, 1e-5];
const TOL: f64 = 1e-4;

fn relative(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-5)
}

/// Largest relative error of `analytic` against central differences of `loss`
/// over every scalar of every tensor, taking the better of the two steps.
fn worst_relative_error(params: &mut ParamSet, analytic: &ParamSet, loss: &dyn Fn(&ParamSet) -> f64) -> (f64, String) {
    let mut worst = (0.0, String::new());
    for ti in 0..params.len() {
        for k in 0..params.get(ti).data.len() {
            let orig = params.get(ti).data[k];
            let a = analytic.get(ti).data[k];
            let mut best = (f64::INFINITY, 0.0);
            for h in STEPS {
                params.tensors_mut()[ti].data[k] = orig + h;
                let up = loss(params);
                params.tensors_mut()[ti].data[k] = orig - h;
                let down = loss(params);
                params.tensors_mut()[ti].data[k] = orig;
                let fd = (up - down) / (2.0 * h);
                let rel = relative(a, fd);
                if rel < best.0 {
                    best = (rel, fd);
                }
                if rel < TOL {
                    break;
                }
            }
            if best.0 > worst.0 {
                worst = (best.0, format!("{}[{k}]: analytic {a:e}, numeric {:e}", params.names()[ti], best.1));
            }
        }
    }
    worst
}

fn denoiser_item(seed: u64, cond_dim: usize) -> BatchItem {
    let mut r = rng(seed);
    let target = parse_smiles("CC(=O)Nc1ccccc1").unwrap();
    let condition = ConditioningVector((0..cond_dim).map(|_| r.random_range(0..2) as f64).collect());
    let graph = sample_noisy(&target, 0.4, &InitialDistribution::uniform(), seed).unwrap();
    BatchItem {
        state: NoisyGraphState { graph, condition, t: 0.4 },
        target,
    }
}

#[test]
fn denoiser_gradient_matches_finite_differences() {
    let model = perturbed(small_config(32), 11);
    let item = denoiser_item(3, 32);
    let (_, analytic) = model.item_gradient(&item).unwrap();
    let cfg = *model.config();
    let mut params = model.params().clone();
    let loss = |p: &ParamSet| {
        let m = DenoiserParams::from_parts(cfg, p.clone()).unwrap();
        edge_loss(&m.forward(&item.state).unwrap(), &item.target).unwrap()
    };
    let (worst, at) = worst_relative_error(&mut params, &analytic, &loss);
    assert!(worst < TOL, "worst relative error {worst:e} at {at}");
}

fn encoder_case() -> (EncoderParams, BinnedSpectrum, Fingerprint) {
    let cfg = EncoderConfig {
        bin_width: 1.0,
        mz_max: 40.0,
        hidden1: 16,
        hidden2: 16,
        out: 32,
    };
    let enc = EncoderParams::init(cfg, 5).unwrap();
    let s = Spectrum::new("s", 100.0, vec![(3.5, 10.0), (12.2, 50.0), (27.9, 100.0), (31.0, 5.0)]).unwrap();
    let binned = enc.bin(&s).unwrap();
    let target = morgan_fingerprint(&parse_smiles("CCO").unwrap(), 2, 32);
    (enc, binned, target)
}

#[test]
fn encoder_gradient_matches_finite_differences() {
    let (enc, binned, target) = encoder_case();
    let (_, analytic) = enc.batch_gradient(&[(&binned, &target)]).unwrap();
    let cfg = *enc.config();
    let mut params = enc.params().clone();
    let loss = |p: &ParamSet| {
        let e = EncoderParams::from_parts(cfg, p.clone()).unwrap();
        e.batch_gradient(&[(&binned, &target)]).unwrap().0
    };
    let (worst, at) = worst_relative_error(&mut params, &analytic, &loss);
    assert!(worst < TOL, "worst relative error {worst:e} at {at}");
}

#[test]
fn encoder_loss_matches_scalar_cross_entropy() {
    let (enc, binned, target) = encoder_case();
    let probs = enc.encode(&binned).unwrap();
    let mut expected = 0.0;
    for (k, p) in probs.values().iter().enumerate() {
        let y = if target.get(k) { 1.0 } else { 0.0 };
        expected -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
    }
    expected /= probs.len() as f64;
    let (loss, _) = enc.batch_gradient(&[(&binned, &target)]).unwrap();
    assert!((loss - expected).abs() < 1e-10, "{loss} vs {expected}");
}

#[test]
fn edge_loss_matches_scalar_sum() {
    let mut r = rng(9);
    for trial in 0..20 {
        let n = 2 + trial % 7;
        let target = random_graph(&mut r, n, 0.4);
        let mut cells = vec![BondDistribution::uniform(); n * n];
        for i in 0..n {
            for j in i + 1..n {
                let mut raw = [0.0; 5];
                raw.iter_mut().for_each(|x| *x = r.random::<f64>() + 1e-3);
                let s: f64 = raw.iter().sum();
                raw.iter_mut().for_each(|x| *x /= s);
                let d = BondDistribution::new(raw).unwrap();
                cells[i * n + j] = d;
                cells[j * n + i] = d;
            }
        }
        let grid = EdgeGrid::new(n, cells).unwrap();
        let mut expected = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                expected -= grid.get(i, j).get(target.bond(i, j)).ln();
            }
        }
        let got = edge_loss(&grid, &target).unwrap();
        assert!((got - expected).abs() < 1e-10, "{got} vs {expected}");
    }
}

#[test]
fn zero_head_blocks_upstream_gradient() {
    let model = DenoiserParams::init(small_config(32), 2).unwrap();
    let item = denoiser_item(4, 32);
    let (_, g) = model.item_gradient(&item).unwrap();
    for (name, t) in g.iter() {
        let reachable = name.starts_with("head.w2") || name.starts_with("head.b2");
        if !reachable {
            assert!(t.data.iter().all(|&x| x == 0.0), "{name} has a nonzero gradient");
        }
    }
    assert!(g.iter().any(|(_, t)| t.data.iter().any(|&x| x != 0.0)));
}

#[test]
fn gradient_of_fingerprint_conditioned_item_is_finite() {
    let model = perturbed(small_config(2048), 1);
    let target = parse_smiles("c1ccncc1").unwrap();
    let state = NoisyGraphState {
        graph: target.clone(),
        condition: ConditioningVector(default_fingerprint(&target).to_f64()),
        t: 0.9,
    };
    let (loss, g) = model.item_gradient(&BatchItem { state, target }).unwrap();
    assert!(loss.is_finite() && g.all_finite());
}
